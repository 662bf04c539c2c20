//! Seedable, splittable random streams.
//!
//! Every stream is a ChaCha8 keystream keyed from a 64-bit seed, so a given
//! seed yields the same values on every platform. Child streams get their seed
//! from a SplitMix64 finalizer over `(parent seed, stream id)`, which keeps
//! them deterministic and distinct without advancing the parent.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::tensor::Tensor2;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream; does not consume from `self`.
    pub fn child(&self, stream: u64) -> Rng {
        Rng::new(splitmix64(splitmix64(self.seed) ^ splitmix64(stream.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Tensor2 {
        let data = (0..rows * cols).map(|_| self.normal()).collect();
        Tensor2::from_vec(rows, cols, data).expect("length matches")
    }
}

/// Standard deviation for [`sample_gaussian`].
#[derive(Clone, Copy, Debug)]
pub enum Sigma<'a> {
    Scalar(f64),
    PerEntry(&'a Tensor2),
}

/// `mu + sigma * eps` with `eps` i.i.d. standard normal.
///
/// `sigma == 0` is accepted and returns `mu` unchanged (no draws consumed);
/// negative or non-finite spreads are rejected.
pub fn sample_gaussian(mu: &Tensor2, sigma: Sigma<'_>, rng: &mut Rng) -> Result<Tensor2> {
    match sigma {
        Sigma::Scalar(s) => {
            check_sigma(s)?;
            if s == 0.0 {
                return Ok(mu.clone());
            }
            let mut out = mu.clone();
            for o in out.data_mut() {
                *o += s * rng.normal();
            }
            Ok(out)
        }
        Sigma::PerEntry(s) => {
            mu.same_shape("sample_gaussian", s)?;
            for &v in s.data() {
                check_sigma(v)?;
            }
            let mut out = mu.clone();
            for (o, &sd) in out.data_mut().iter_mut().zip(s.data()) {
                *o += sd * rng.normal();
            }
            Ok(out)
        }
    }
}

fn check_sigma(s: f64) -> Result<()> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::Parameter(format!("standard deviation must be >= 0, got {s}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn children_are_distinct_and_stable() {
        let root = Rng::new(3);
        let mut c1 = root.child(1);
        let mut c2 = root.child(2);
        let mut c1b = Rng::new(3).child(1);
        let x = c1.next_u64();
        assert_eq!(x, c1b.next_u64());
        assert_ne!(x, c2.next_u64());
        assert_ne!(root.child(1).child(2).seed(), root.child(2).seed());
    }

    #[test]
    fn zero_sigma_returns_mean() {
        let mu = Tensor2::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
        let out = sample_gaussian(&mu, Sigma::Scalar(0.0), &mut Rng::new(1)).unwrap();
        assert_eq!(out, mu);
    }

    #[test]
    fn negative_sigma_rejected() {
        let mu = Tensor2::zeros(1, 1);
        let err = sample_gaussian(&mu, Sigma::Scalar(-0.1), &mut Rng::new(1));
        assert!(matches!(err, Err(Error::Parameter(_))));
        let bad = Tensor2::filled(1, 1, f64::NAN);
        assert!(sample_gaussian(&mu, Sigma::PerEntry(&bad), &mut Rng::new(1)).is_err());
    }

    #[test]
    fn sample_std_matches_sigma_hp() {
        let mu = Tensor2::zeros(1000, 1000);
        let out = sample_gaussian(&mu, Sigma::Scalar(0.12), &mut Rng::new(11)).unwrap();
        let n = out.len() as f64;
        let mean = out.sum() / n;
        let var = out.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        assert!((0.1188..=0.1212).contains(&sd), "sd = {sd}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let mu = Tensor2::filled(4, 3, 0.5);
        let a = sample_gaussian(&mu, Sigma::Scalar(1.0), &mut Rng::new(9)).unwrap();
        let b = sample_gaussian(&mu, Sigma::Scalar(1.0), &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}
