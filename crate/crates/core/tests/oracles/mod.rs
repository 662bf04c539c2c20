//! Brute-force reference computations for the test suites. Nothing here calls
//! into the library's arithmetic; inputs and outputs are plain vectors.

#![allow(dead_code)]

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// `(anchor, positive, negative)` with `anchor < positive`, by literal triple loop.
pub fn offline_triplets(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let n = labels.len();
    let mut out = Vec::new();
    for a in 0..n {
        for p in 0..n {
            for k in 0..n {
                if a < p && labels[a] == labels[p] && labels[k] != labels[a] {
                    out.push((a, p, k));
                }
            }
        }
    }
    out
}

fn sqd(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// Mean hinge over every valid triplet.
pub fn offline_obtl(emb: &[Vec<f64>], labels: &[usize], alpha: f64) -> f64 {
    let t = offline_triplets(labels);
    if t.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for &(a, p, k) in &t {
        let v = sqd(&emb[a], &emb[p]) - sqd(&emb[a], &emb[k]) + alpha;
        if v > 0.0 {
            total += v;
        }
    }
    total / t.len() as f64
}

/// Monte-Carlo `E_q[log q(z) − log p(z)]`, averaged over rows, for diagonal
/// `q = N(μ, e^{logvar})` and `p = N(0, I)`.
pub fn mc_kl(mu: &[Vec<f64>], logvar: &[Vec<f64>], n_draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for (m, lv) in mu.iter().zip(logvar) {
        let mut row = 0.0;
        for _ in 0..n_draws {
            let mut lq = 0.0;
            let mut lp = 0.0;
            for j in 0..m.len() {
                let sd = (lv[j] / 2.0).exp();
                let e: f64 = rng.sample(StandardNormal);
                let z = m[j] + sd * e;
                lq += -0.5 * e * e - sd.ln();
                lp += -0.5 * z * z;
            }
            row += lq - lp;
        }
        acc += row / n_draws as f64;
    }
    acc / mu.len() as f64
}

/// Sample variance of the per-draw KL integrand for one row.
pub fn mc_kl_variance(mu: &[f64], logvar: &[f64], n_draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..n_draws)
        .map(|_| {
            let mut d = 0.0;
            for j in 0..mu.len() {
                let sd = (logvar[j] / 2.0).exp();
                let e: f64 = rng.sample(StandardNormal);
                let z = mu[j] + sd * e;
                d += -0.5 * e * e - sd.ln() + 0.5 * z * z;
            }
            d
        })
        .collect();
    let m = vals.iter().sum::<f64>() / n_draws as f64;
    vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n_draws - 1) as f64
}

/// Plain scan; returns the class and every class tied at the minimum.
pub fn exhaustive_classify(a_hat: &[f64], attributes: &[Vec<f64>], candidates: &[usize]) -> (usize, Vec<usize>) {
    let mut dists: Vec<(usize, f64)> = candidates.iter().map(|&c| (c, sqd(a_hat, &attributes[c]))).collect();
    dists.sort_by_key(|d| d.0);
    let best = dists.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    let ties: Vec<usize> = dists.iter().filter(|d| d.1 == best).map(|d| d.0).collect();
    (ties[0], ties)
}

/// Class means by direct tally, keyed by class.
pub fn class_means(emb: &[Vec<f64>], labels: &[usize]) -> Vec<(usize, Vec<f64>)> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let rows: Vec<&Vec<f64>> = emb.iter().zip(labels).filter(|(_, &l)| l == c).map(|(e, _)| e).collect();
            let mut m = vec![0.0; emb[0].len()];
            for r in &rows {
                for j in 0..m.len() {
                    m[j] += r[j];
                }
            }
            for v in &mut m {
                *v /= rows.len() as f64;
            }
            (c, m)
        })
        .collect()
}

/// `iters` applications of `c ← c − γ(c − m)` to a single coordinate.
pub fn center_fixed_point(c0: f64, m: f64, gamma: f64, iters: usize) -> f64 {
    let mut c = c0;
    for _ in 0..iters {
        c -= gamma * (c - m);
    }
    c
}

/// Unweighted mean of per-class hit rates, in percent.
pub fn tally_accuracy(pred: &[usize], labels: &[usize], classes: &[usize]) -> f64 {
    let mut rates = Vec::new();
    for &c in classes {
        let mut n = 0;
        let mut hit = 0;
        for i in 0..labels.len() {
            if labels[i] == c {
                n += 1;
                if pred[i] == c {
                    hit += 1;
                }
            }
        }
        if n > 0 {
            rates.push(100.0 * hit as f64 / n as f64);
        }
    }
    rates.iter().sum::<f64>() / rates.len() as f64
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let o = x[i];
            x[i] = o + eps;
            let up = f(&x);
            x[i] = o - eps;
            let down = f(&x);
            x[i] = o;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..rows).map(|_| (0..cols).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

pub fn uniform_below(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random_range(0..n)).collect()
}

/// One oracle comparison.
#[derive(Clone, Debug)]
pub struct OracleReport {
    pub name: String,
    pub digest: String,
    pub reference: f64,
    pub candidate: f64,
    pub tolerance: f64,
    pub relative: bool,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(name: &str, digest: impl Into<String>, reference: f64, candidate: f64, tolerance: f64, relative: bool) -> Self {
        let diff = (reference - candidate).abs();
        let scale = if relative { reference.abs().max(1.0) } else { 1.0 };
        OracleReport {
            name: name.to_owned(),
            digest: digest.into(),
            reference,
            candidate,
            tolerance,
            relative,
            pass: diff <= tolerance * scale,
        }
    }

    /// Appends the row to `oracle_report.csv` in the test artifact directory.
    pub fn record(&self) -> &Self {
        let path = report_path();
        let fresh = !path.exists();
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(&path) {
            if fresh {
                let _ = writeln!(f, "name,digest,reference,candidate,tolerance,relative,pass");
            }
            let _ = writeln!(
                f,
                "{},{},{},{},{},{},{}",
                self.name, self.digest, self.reference, self.candidate, self.tolerance, self.relative, self.pass
            );
        }
        self
    }

    pub fn assert(&self) {
        assert!(
            self.pass,
            "{} [{}]: reference {} vs candidate {} (tol {}{})",
            self.name,
            self.digest,
            self.reference,
            self.candidate,
            self.tolerance,
            if self.relative { ", relative" } else { "" }
        );
    }
}

pub fn report_path() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("oracle_report.csv")
}
