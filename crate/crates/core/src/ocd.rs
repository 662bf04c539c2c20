//! Over-complete distribution (OCD) sampling.
//!
//! Class distributions are approximated by decoding `z ~ N(μ_HP, σ_HP²)` with
//! each class's attributes, re-encoded to latent means, paired with a shuffled
//! partner row, and re-sampled around the midpoint with the wider `σ'_HP`. The
//! conditioning attributes of every row never change.

use serde::{Deserialize, Serialize};

use crate::config::Hyperparams;
use crate::error::{Error, Result};
use crate::models::Networks;
use crate::numgrad::{sample_gaussian, Rng, Sigma, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcdParams {
    pub mu_hp: f64,
    pub sigma_hp: f64,
    pub sigma_prime_hp: f64,
    pub samples_per_class: usize,
    pub forbid_fixed_points: bool,
    /// Rows are shuffled in consecutive blocks of this size.
    pub shuffle_block: usize,
}

impl OcdParams {
    pub fn new(
        mu_hp: f64,
        sigma_hp: f64,
        sigma_prime_hp: f64,
        samples_per_class: usize,
        forbid_fixed_points: bool,
        shuffle_block: usize,
    ) -> Result<Self> {
        if !mu_hp.is_finite() {
            return Err(Error::Parameter("mu_hp must be finite".into()));
        }
        if !(sigma_hp >= 0.0) || !sigma_prime_hp.is_finite() || !(sigma_prime_hp > sigma_hp) {
            return Err(Error::Parameter(format!(
                "need 0 <= sigma_hp < sigma_prime_hp, got {sigma_hp} and {sigma_prime_hp}"
            )));
        }
        if samples_per_class == 0 {
            return Err(Error::Parameter("samples_per_class must be >= 1".into()));
        }
        if shuffle_block < 2 {
            return Err(Error::Parameter("shuffle_block must be >= 2".into()));
        }
        Ok(OcdParams {
            mu_hp,
            sigma_hp,
            sigma_prime_hp,
            samples_per_class,
            forbid_fixed_points,
            shuffle_block,
        })
    }

    pub fn from_hyper(h: &Hyperparams) -> Result<Self> {
        OcdParams::new(
            h.mu_hp,
            h.sigma_hp,
            h.sigma_prime_hp,
            h.ocd_samples_per_class,
            h.forbid_fixed_points,
            h.batch_size,
        )
    }
}

impl Default for OcdParams {
    fn default() -> Self {
        OcdParams::from_hyper(&Hyperparams::default()).expect("default hyperparameters are valid")
    }
}

fn check_classes(class_attrs: &Tensor2, class_ids: &[usize]) -> Result<()> {
    if class_attrs.rows() != class_ids.len() {
        return Err(Error::dim("ocd class attributes", class_ids.len(), class_attrs.rows()));
    }
    if class_ids.is_empty() {
        return Err(Error::Parameter("no classes to synthesize".into()));
    }
    Ok(())
}

/// Decodes `n_per_class` latent draws for every class row. Rows come in class
/// blocks following `class_ids`; returns `(x̂, conditioning attributes, labels)`.
pub fn approximate_distribution(
    nets: &Networks,
    class_attrs: &Tensor2,
    class_ids: &[usize],
    n_per_class: usize,
    mu_hp: f64,
    sigma_hp: f64,
    rng: &mut Rng,
) -> Result<(Tensor2, Tensor2, Vec<usize>)> {
    let (z, attrs, labels) = latent_draws(nets, class_attrs, class_ids, n_per_class, mu_hp, sigma_hp, rng)?;
    Ok((nets.decode(&z, &attrs)?, attrs, labels))
}

/// The `z`, attribute and label matrices behind [`approximate_distribution`].
pub fn latent_draws(
    nets: &Networks,
    class_attrs: &Tensor2,
    class_ids: &[usize],
    n_per_class: usize,
    mu_hp: f64,
    sigma_hp: f64,
    rng: &mut Rng,
) -> Result<(Tensor2, Tensor2, Vec<usize>)> {
    check_classes(class_attrs, class_ids)?;
    let rows: Vec<usize> = (0..class_ids.len()).flat_map(|c| std::iter::repeat_n(c, n_per_class)).collect();
    let labels = rows.iter().map(|&r| class_ids[r]).collect();
    let attrs = class_attrs.select_rows(&rows);
    let mu = Tensor2::filled(rows.len(), nets.arch.latent_dim, mu_hp);
    let z = sample_gaussian(&mu, Sigma::Scalar(sigma_hp), rng)?;
    Ok((z, attrs, labels))
}

/// Uniform permutation of `0..n` without fixed points, by rejection.
pub fn derangement(n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Parameter(format!("no derangement of {n} element(s)")));
    }
    loop {
        let p = rng.permutation(n);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return Ok(p);
        }
    }
}

fn block_permutation(n: usize, rng: &mut Rng, forbid_fixed_points: bool) -> Result<Vec<usize>> {
    if forbid_fixed_points {
        derangement(n, rng)
    } else {
        Ok(rng.permutation(n))
    }
}

/// Row `i` of the result is row `perm[i]` of `mu` for a uniform random
/// permutation (a derangement when `forbid_fixed_points`).
pub fn shuffle_means(mu: &Tensor2, rng: &mut Rng, forbid_fixed_points: bool) -> Result<Tensor2> {
    let perm = block_permutation(mu.rows(), rng, forbid_fixed_points)?;
    Ok(mu.select_rows(&perm))
}

/// Partner index for every row: rows are shuffled globally, cut into blocks
/// of `block` rows and permuted within each block. A trailing block of one row
/// is merged into its predecessor.
pub fn partner_indices(n: usize, block: usize, forbid_fixed_points: bool, rng: &mut Rng) -> Result<Vec<usize>> {
    if block < 2 {
        return Err(Error::Parameter("shuffle block must be >= 2".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let order = rng.permutation(n);
    let mut bounds: Vec<(usize, usize)> = (0..n).step_by(block).map(|s| (s, (s + block).min(n))).collect();
    if bounds.len() > 1 && bounds[bounds.len() - 1].1 - bounds[bounds.len() - 1].0 == 1 {
        let last = bounds.pop().expect("len > 1");
        bounds.last_mut().expect("len > 0").1 = last.1;
    }
    let mut partner = vec![0; n];
    for (s, e) in bounds {
        let chunk = &order[s..e];
        let perm = block_permutation(chunk.len(), rng, forbid_fixed_points)?;
        for (k, &p) in perm.iter().enumerate() {
            partner[chunk[k]] = chunk[p];
        }
    }
    Ok(partner)
}

/// Synthesized hard samples and the intermediate quantities behind them.
#[derive(Clone, Debug, PartialEq)]
pub struct OcdBatch {
    /// Decoded approximation `X̂` of the class distributions.
    pub x_hat: Tensor2,
    pub x_oc: Tensor2,
    pub z_oc: Tensor2,
    pub attrs: Tensor2,
    pub labels: Vec<usize>,
    pub mu: Tensor2,
    /// Encoder standard deviation of `X̂`; diagnostic only.
    pub sigma: Tensor2,
    pub partner: Vec<usize>,
    pub mu_oc: Tensor2,
}

impl OcdBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Full OCD pipeline over the given classes.
pub fn generate_ocd(
    nets: &Networks,
    class_attrs: &Tensor2,
    class_ids: &[usize],
    params: &OcdParams,
    rng: &mut Rng,
) -> Result<OcdBatch> {
    let (x_hat, attrs, labels) = approximate_distribution(
        nets,
        class_attrs,
        class_ids,
        params.samples_per_class,
        params.mu_hp,
        params.sigma_hp,
        &mut rng.child(0),
    )?;
    let (mu, logvar) = nets.encode(&x_hat)?;
    let partner = partner_indices(mu.rows(), params.shuffle_block, params.forbid_fixed_points, &mut rng.child(1))?;
    let mu_partner = mu.select_rows(&partner);
    let mu_oc = mu.zip_map(&mu_partner, |a, b| 0.5 * (a + b))?;
    let z_oc = sample_gaussian(&mu_oc, Sigma::Scalar(params.sigma_prime_hp), &mut rng.child(2))?;
    let x_oc = nets.decode(&z_oc, &attrs)?;
    x_oc.ensure_finite("OCD samples")?;
    Ok(OcdBatch {
        x_hat,
        x_oc,
        z_oc,
        attrs,
        labels,
        sigma: logvar.map(|lv| (0.5 * lv).exp()),
        mu,
        partner,
        mu_oc,
    })
}
