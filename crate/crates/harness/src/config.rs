//! `key=value` settings shared by the config file, the CLI flags and the
//! `#` header echoed into every CSV.

use std::fmt;
use std::str::FromStr;

use crate::HarnessError;

/// Value type usable as a setting.
pub trait Setting: Sized + Clone {
    /// Separator when used inside a [`List`].
    const LIST_SEPARATOR: char = ',';
    fn parse_setting(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_setting {
    ($($t:ty),*) => {$(
        impl Setting for $t {
            fn parse_setting(s: &str) -> Result<Self, String> {
                s.trim().parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_setting!(u64, usize, bool, String);

impl Setting for f64 {
    fn parse_setting(s: &str) -> Result<Self, String> {
        s.trim().parse().map_err(|e| format!("{e}"))
    }
    fn render(&self) -> String {
        fmt_f64(*self)
    }
}

/// Shortest string that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Separated list setting.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: Setting> Setting for List<T> {
    fn parse_setting(s: &str) -> Result<Self, String> {
        s.split(T::LIST_SEPARATOR)
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(T::parse_setting)
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
    fn render(&self) -> String {
        let sep = T::LIST_SEPARATOR.to_string();
        self.0.iter().map(T::render).collect::<Vec<_>>().join(&sep)
    }
}

impl<T: Setting> FromStr for List<T> {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::parse_setting(s)
    }
}

impl<T> std::ops::Deref for List<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T: Setting> fmt::Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// A subcommand's resolved configuration.
pub trait Settings: Default {
    const COMMAND: &'static str;
    fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError>;
    fn echo(&self) -> Vec<(&'static str, String)>;

    fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<(), HarnessError> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }
}

pub(crate) fn parse_field<T: Setting>(key: &str, value: &str) -> Result<T, HarnessError> {
    T::parse_setting(value).map_err(|e| HarnessError::BadConfig(format!("{key}={value}: {e}")))
}

/// Reads `key=value` lines from a config file or from the `#` header of a
/// CSV this tool wrote. Lines without `=` are ignored, as are keys listed
/// in `skip`.
pub fn parse_kv(text: &str, skip: &[&str]) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim();
            let line = line.strip_prefix('#').map_or(line, str::trim);
            let (k, v) = line.split_once('=')?;
            let k = k.trim();
            let ident = !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            (ident && !skip.contains(&k)).then(|| (k.to_string(), v.trim().to_string()))
        })
        .collect()
}

/// Declares a settings struct, its clap flags (all optional, overriding the
/// config file) and the `key=value` plumbing.
#[macro_export]
macro_rules! settings {
    (
        $(#[$meta:meta])*
        $name:ident, $args:ident, $cmd:literal {
            $( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr ),* $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for $name {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl $crate::config::Settings for $name {
            const COMMAND: &'static str = $cmd;

            fn set(&mut self, key: &str, value: &str) -> Result<(), $crate::HarnessError> {
                match key {
                    $( stringify!($field) => self.$field = $crate::config::parse_field(key, value)?, )*
                    _ => return Err($crate::HarnessError::BadConfig(format!("unknown key {key:?} for {}", $cmd))),
                }
                Ok(())
            }

            fn echo(&self) -> Vec<(&'static str, String)> {
                vec![ $( (stringify!($field), $crate::config::Setting::render(&self.$field)), )* ]
            }
        }

        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct $args {
            $(
                $(#[doc = $doc])*
                #[arg(long, value_parser = |s: &str| <$ty as $crate::config::Setting>::parse_setting(s))]
                pub $field: Option<$ty>,
            )*
        }

        impl $args {
            /// Overrides `cfg` with every flag given on the command line.
            pub fn apply(&self, cfg: &mut $name) {
                $( if let Some(v) = &self.$field { cfg.$field = v.clone(); } )*
            }
        }
    };
}
