use darkrf_harness::config::Settings;
use darkrf_harness::data::{generate, qkv_table, GenConfig};
use darkrf_harness::experiments::budget::{self, BudgetConfig};
use darkrf_harness::experiments::stability::{self, StabilityConfig};
use darkrf_harness::experiments::timing::{self, TimingConfig};
use darkrf_harness::experiments::tools::{grad_check_run, whiten_run, GradCheckConfig, WhitenConfig};
use darkrf_harness::experiments::toy::{self, ToyConfig};
use darkrf_harness::experiments::variance::{self, VarianceConfig};
use darkrf_harness::{with_threads, HarnessError, List, Table};

/// Deterministic CSV text of `run(cfg)` on a pool of `threads` workers.
fn csv_at<C: Settings + Sync>(cfg: &C, threads: usize, run: fn(&C) -> Result<Table, HarnessError>) -> String {
    let t = with_threads(Some(threads), || run(cfg)).unwrap().unwrap();
    t.deterministic_part().to_csv(C::COMMAND, &cfg.echo()).unwrap()
}

fn check<C: Settings + Sync>(cfg: C, run: fn(&C) -> Result<Table, HarnessError>) {
    let a = csv_at(&cfg, 1, run);
    assert_eq!(a, csv_at(&cfg, 4, run), "{}", C::COMMAND);
    assert_eq!(a, csv_at(&cfg, 3, run), "{}", C::COMMAND);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    check(GenConfig { l: 16, ..GenConfig::default() }, |c| Ok(qkv_table(&generate(c)?)));
    check(
        VarianceConfig {
            ms: List(vec![2, 8]),
            trials: 60,
            pairs: 4,
            ..VarianceConfig::default()
        },
        variance::run,
    );
    check(
        BudgetConfig {
            ms: List(vec![8, 32]),
            reps: 3,
            train_steps: 10,
            ..BudgetConfig::default()
        },
        budget::run,
    );
    check(
        TimingConfig {
            ls: List(vec![32, 64]),
            reps: 2,
            warmup: 0,
            d: 4,
            ..TimingConfig::default()
        },
        timing::run,
    );
    check(
        ToyConfig {
            replicates: 3,
            steps: 30,
            eval_batches: 3,
            ..ToyConfig::default()
        },
        toy::run,
    );
    check(
        StabilityConfig {
            replicates: 2,
            steps: 60,
            lr_count: 3,
            eval_batches: 2,
            ..StabilityConfig::default()
        },
        stability::run,
    );
    check(GradCheckConfig::default(), grad_check_run);
    check(WhitenConfig { n: 500, ..WhitenConfig::default() }, whiten_run);
}

#[test]
fn timing_marks_runtime_columns() {
    let cfg = TimingConfig {
        ls: List(vec![16, 32]),
        reps: 1,
        warmup: 0,
        d: 2,
        ..TimingConfig::default()
    };
    let text = timing::run(&cfg).unwrap().to_csv(TimingConfig::COMMAND, &cfg.echo()).unwrap();
    assert!(text.contains("# nondeterministic columns: runtime_ns slope\n"));
    let back = Table::from_csv(&text).unwrap();
    assert_eq!(back.deterministic_part().columns, vec!["kind", "method", "l", "m", "d", "reps"]);
}

#[test]
fn cli_output_is_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}.csv"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_darkrf"))
            .args(["toy-train", "--replicates", "3", "--steps", "25", "--eval-batches", "2", "--threads", threads])
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("1"), run("4"));
}
