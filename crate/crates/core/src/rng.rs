//! Seed derivation and the deterministic sampling streams.
//!
//! Every random stream in a run is derived from one 64-bit master seed:
//! `split(master, stream_id)` feeds `master ^ rotl(stream_id · φ64, 17)`
//! through the SplitMix64 finalizer, and the result seeds a ChaCha8
//! generator. Gaussians come from Box–Muller on that uniform stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output permutation.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of `master`.
pub fn split(master: u64, stream: u64) -> u64 {
    mix64(master ^ stream.wrapping_mul(GOLDEN).rotate_left(17))
}

/// Well-known stream ids used by the trainer and datasets.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const TRAIN_DATA: u64 = 2;
    pub const HELDOUT_DATA: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const LABELED: u64 = 5;
    pub const DOMAIN_B: u64 = 6;
    /// Per-step streams are `STEP_BASE + step`.
    pub const STEP_BASE: u64 = 1 << 32;
}

/// Deterministic sampler over a single derived stream.
#[derive(Clone, Debug)]
pub struct Stream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    pub fn derived(master: u64, stream: u64) -> Self {
        Self::new(split(master, stream))
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.gen()
    }

    /// Standard normal via Box–Muller; the second variate of each pair is
    /// cached for the next call.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_tensor(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| self.normal())
    }

    /// Rows of exact one-hot vectors over `k` categories, drawn uniformly.
    pub fn one_hot_tensor(&mut self, rows: usize, k: usize) -> Tensor {
        let mut t = Tensor::zeros(rows, k);
        for r in 0..rows {
            let c = self.below(k);
            t.set(r, c, 1.0);
        }
        t
    }

    /// Gamma(1) variates normalized: a symmetric Dirichlet(1) draw.
    pub fn dirichlet_ones(&mut self, k: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..k).map(|_| -(1.0 - self.uniform()).ln()).collect();
        let s: f64 = v.iter().sum();
        for x in &mut v {
            *x /= s;
        }
        v
    }

    /// `n` indices drawn uniformly with replacement from `[0, len)`.
    pub fn indices(&mut self, n: usize, len: usize) -> Vec<usize> {
        (0..n).map(|_| self.below(len)).collect()
    }

    /// A uniform permutation of `0..n` (Fisher–Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            p.swap(i, self.below(i + 1));
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_distinct() {
        assert_eq!(split(7, 3), split(7, 3));
        assert_ne!(split(7, 3), split(7, 4));
        assert_ne!(split(7, 3), split(8, 3));
    }

    #[test]
    fn box_muller_moments() {
        let mut s = Stream::new(42);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn dirichlet_on_simplex() {
        let mut s = Stream::new(1);
        let v = s.dirichlet_ones(5);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|&x| x >= 0.0));
    }
}
