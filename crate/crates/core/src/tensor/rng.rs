//! Deterministic, splittable Gaussian sampling.
//!
//! A [`SeededRng`] is a plain `(seed, stream)` value. Draws come from a
//! ChaCha8 keystream keyed by the seed on the given stream; per-trial streams
//! are derived with [`SeededRng::split`]. Normal variates use the Box–Muller
//! transform evaluated with `libm` so the sequence is identical on every
//! platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::scalar::Scalar;

use super::DenseMatrix;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeededRng {
    pub seed: u64,
    pub stream: u64,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Child stream for sub-task `index` (trial, grid cell, step...).
    pub fn split(self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix64(self.stream ^ mix64(index.wrapping_add(0xD1B5_4A32_D192_ED03))),
        }
    }

    /// Child stream keyed by a label, e.g. `"data"` vs `"features"`.
    pub fn split_named(self, label: &str) -> Self {
        // FNV-1a keeps labels stable across releases
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in label.bytes() {
            h = (h ^ b as u64).wrapping_mul(0x0100_0000_01B3);
        }
        self.split(h)
    }

    pub fn normals(self) -> NormalStream {
        NormalStream::new(self)
    }
}

/// Stateful draw sequence for one `(seed, stream)`.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    fn new(src: SeededRng) -> Self {
        let mut key = [0u8; 32];
        let mut s = src.seed;
        for chunk in key.chunks_exact_mut(8) {
            s = mix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(src.stream);
        Self { rng, spare: None }
    }

    /// Uniform on `(0, 1]` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; both outputs of a pair are used.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    /// `chi(k)` variate as the norm of `k` standard normals.
    pub fn chi(&mut self, k: usize) -> f64 {
        libm::sqrt((0..k).map(|_| self.normal().powi(2)).sum::<f64>())
    }

    pub fn fill_normal<T: Scalar>(&mut self, out: &mut [T]) {
        for x in out {
            *x = T::of(self.normal());
        }
    }
}

/// `n×d` matrix of iid `N(0,1)`, filled row-major from the stream.
pub fn gaussian_sample<T: Scalar>(rng: SeededRng, n: usize, d: usize) -> DenseMatrix<T> {
    let mut m = DenseMatrix::zeros(n, d);
    rng.normals().fill_normal(m.as_mut_slice());
    m
}

/// `n×d` rows `ω = Mᵀu` with `u ~ N(0, I_r)`, i.e. iid `N(0, MᵀM)`.
///
/// The `u` draws are exactly those of `gaussian_sample(rng, n, r)`, so
/// `M = I` reproduces [`gaussian_sample`] bit for bit.
pub fn gaussian_sample_cov<T: Scalar>(
    rng: SeededRng,
    n: usize,
    factor: &DenseMatrix<T>,
) -> DenseMatrix<T> {
    let u = gaussian_sample(rng, n, factor.rows());
    u.matmul(factor)
}
