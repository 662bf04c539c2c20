//! Objective terms: CVAE reconstruction + KL, triplet and online batch
//! triplet losses, center loss, attribute regression, and the generator
//! losses `L_c` / `L_Reg` of joint fine-tuning.
//!
//! Graph-building functions return a 1×1 [`Var`]. Every loss is a batch mean,
//! so the λ weights do not depend on batch size. "Squared error" here means
//! the per-row squared Euclidean norm averaged over rows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use crate::config::Hyperparams;
use crate::error::{Error, Result};
use crate::models::{class_means, Centers, Decoder, Regressor};
use crate::numgrad::{Graph, ParamStore, Rng, Tensor2, Var};

/// `mean_i ‖pred_i − target_i‖²`.
pub fn squared_error(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let rows = g.value(pred).rows().max(1);
    let d = g.sub(pred, target)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / rows as f64))
}

/// KL(N(μ, σ²) ‖ N(0, I)) per row, averaged over the batch:
/// `½ Σ_j (μ² + σ² − 1 − log σ²)`.
pub fn kl_divergence(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    let (rows, cols) = g.value(mu).shape();
    if g.value(logvar).shape() != (rows, cols) {
        return Err(Error::dim("kl_divergence", format!("{rows}x{cols}"), format!("{:?}", g.value(logvar).shape())));
    }
    let mu2 = g.square(mu);
    let var = g.exp(logvar);
    let t = g.add(mu2, var)?;
    let t = g.sub(t, logvar)?;
    let s = g.sum(t);
    let n = rows.max(1) as f64;
    let half = g.scale(s, 0.5 / n);
    Ok(g.add_scalar(half, -0.5 * cols as f64))
}

/// Closed-form KL value for plain matrices.
pub fn kl_divergence_value(mu: &Tensor2, logvar: &Tensor2) -> Result<f64> {
    let mut g = Graph::new();
    let (m, l) = (g.constant(mu.clone()), g.constant(logvar.clone()));
    let kl = kl_divergence(&mut g, m, l)?;
    Ok(g.scalar(kl))
}

#[derive(Clone, Copy, Debug)]
pub struct CvaeTerms {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

/// Unit-variance Gaussian reconstruction term (squared error) plus KL.
pub fn cvae_loss(g: &mut Graph, x: Var, x_hat: Var, mu: Var, logvar: Var) -> Result<CvaeTerms> {
    let recon = squared_error(g, x_hat, x)?;
    let kl = kl_divergence(g, mu, logvar)?;
    let total = g.add(recon, kl)?;
    Ok(CvaeTerms { total, recon, kl })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `max(0, ‖fa − fp‖² − ‖fa − fn‖² + alpha)`.
pub fn triplet_loss(fa: &[f64], fp: &[f64], fneg: &[f64], alpha: f64) -> f64 {
    (sq_dist(fa, fp) - sq_dist(fa, fneg) + alpha).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningMode {
    /// Every same-class pair `a < p` with every other-class negative.
    AllValid,
    /// Every same-class pair `a < p` with the negative closest to the anchor.
    HardestNegative,
}

impl fmt::Display for MiningMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MiningMode::AllValid => "all_valid",
            MiningMode::HardestNegative => "hardest_negative",
        })
    }
}

impl FromStr for MiningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_valid" => Ok(MiningMode::AllValid),
            "hardest_negative" => Ok(MiningMode::HardestNegative),
            _ => Err(Error::Parameter(format!("unknown mining mode `{s}`"))),
        }
    }
}

/// Mines triplets inside one batch of embeddings.
///
/// Pairs are enumerated with `anchor < positive`, in index order. In
/// hardest-negative mode the negative only depends on the anchor (the
/// other-class row at minimal squared distance, lowest index on ties), so
/// each class contributes `C(n_c, 2)` triplets. A batch without a valid
/// triplet yields an empty list.
pub fn mine_batch_triplets(emb: &Tensor2, labels: &[usize], mode: MiningMode) -> Result<Vec<TripletIndex>> {
    let n = emb.rows();
    if labels.len() != n {
        return Err(Error::dim("mine_batch_triplets", n, labels.len()));
    }
    let hardest: Vec<Option<usize>> = match mode {
        MiningMode::AllValid => Vec::new(),
        MiningMode::HardestNegative => (0..n)
            .map(|a| {
                let mut best: Option<(f64, usize)> = None;
                for k in 0..n {
                    if labels[k] == labels[a] {
                        continue;
                    }
                    let d = sq_dist(emb.row(a), emb.row(k));
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, k));
                    }
                }
                best.map(|(_, k)| k)
            })
            .collect(),
    };

    let mut out = Vec::new();
    for a in 0..n {
        for p in a + 1..n {
            if labels[p] != labels[a] {
                continue;
            }
            match mode {
                MiningMode::HardestNegative => {
                    if let Some(negative) = hardest[a] {
                        out.push(TripletIndex { anchor: a, positive: p, negative });
                    }
                }
                MiningMode::AllValid => {
                    out.extend(
                        (0..n)
                            .filter(|&k| labels[k] != labels[a])
                            .map(|negative| TripletIndex { anchor: a, positive: p, negative }),
                    );
                }
            }
        }
    }
    Ok(out)
}

/// Mean triplet hinge over the triplets mined from the current embedding
/// values; 0 (with no gradient) when nothing can be mined.
pub fn obtl_loss(g: &mut Graph, emb: Var, labels: &[usize], alpha: f64, mode: MiningMode) -> Result<Var> {
    let triplets = mine_batch_triplets(g.value(emb), labels, mode)?;
    if triplets.is_empty() {
        return Ok(g.constant(Tensor2::scalar(0.0)));
    }
    let a = g.gather_rows(emb, triplets.iter().map(|t| t.anchor).collect())?;
    let p = g.gather_rows(emb, triplets.iter().map(|t| t.positive).collect())?;
    let n = g.gather_rows(emb, triplets.iter().map(|t| t.negative).collect())?;
    let dap = g.sub(a, p)?;
    let dap = g.square(dap);
    let dap = g.row_sum(dap);
    let dan = g.sub(a, n)?;
    let dan = g.square(dan);
    let dan = g.row_sum(dan);
    let margin = g.sub(dap, dan)?;
    let margin = g.add_scalar(margin, alpha);
    let h = g.hinge(margin);
    Ok(g.mean(h))
}

/// `½ · mean_i ‖emb_i − center_{label_i}‖²`.
pub fn center_loss(g: &mut Graph, emb: Var, labels: &[usize], centers: &Centers) -> Result<Var> {
    let ev = g.value(emb);
    if ev.rows() != labels.len() {
        return Err(Error::dim("center_loss", ev.rows(), labels.len()));
    }
    if ev.cols() != centers.values().cols() {
        return Err(Error::dim("center_loss", centers.values().cols(), ev.cols()));
    }
    let mut targets = Tensor2::zeros(labels.len(), ev.cols());
    for (i, &l) in labels.iter().enumerate() {
        let c = centers
            .get(l)
            .ok_or_else(|| Error::State(format!("no center for class {l}")))?;
        targets.row_mut(i).copy_from_slice(c);
    }
    let t = g.constant(targets);
    let d = g.sub(emb, t)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 0.5 / labels.len().max(1) as f64))
}

/// `center ← center − γ·(center − batch class mean)` for every class in the
/// batch. A class without a center yet starts at its batch mean.
pub fn update_centers(centers: &mut Centers, emb: &Tensor2, labels: &[usize], gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!("center rate must lie in (0, 1], got {gamma}")));
    }
    for (class, mean) in class_means(emb, labels, centers.num_classes())? {
        let next: Vec<f64> = match centers.get(class) {
            Some(c) => c.iter().zip(&mean).map(|(c, m)| c - gamma * (c - m)).collect(),
            None => mean,
        };
        centers.set(class, &next);
    }
    Ok(())
}

/// Squared error between predicted and true attributes.
pub fn attr_regression_loss(g: &mut Graph, a_hat: Var, a_true: Var) -> Result<Var> {
    squared_error(g, a_hat, a_true)
}

/// Regressor consistency of generated samples: `mean ‖p_R(x̂) − a‖²`.
pub fn lc_loss(g: &mut Graph, store: &ParamStore, regressor: &Regressor, x_hat: Var, a_cond: Var) -> Result<Var> {
    let a_hat = regressor.forward(g, store, x_hat)?;
    squared_error(g, a_hat, a_cond)
}

/// Decodes `z ~ N(0, I)` with the attributes of real samples and measures the
/// squared error to those samples.
pub fn lreg_loss(
    g: &mut Graph,
    store: &ParamStore,
    decoder: &Decoder,
    x_real: Var,
    a_of_x: Var,
    rng: &mut Rng,
) -> Result<Var> {
    let rows = g.value(x_real).rows();
    let z = g.constant(rng.normal_matrix(rows, decoder.latent_dim));
    let x_hat = decoder.forward(g, store, z, a_of_x)?;
    squared_error(g, x_hat, x_real)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Phase3Parts {
    pub lc: f64,
    pub lreg: f64,
    pub obtl: f64,
    pub cl: f64,
}

/// `λ_c·L_c + λ_reg·L_Reg + L_OBTL + L_CL`.
pub fn phase3_objective(h: &Hyperparams, parts: &Phase3Parts) -> f64 {
    h.lambda_c * parts.lc + h.lambda_reg * parts.lreg + parts.obtl + parts.cl
}

/// Graph form of [`phase3_objective`].
pub fn phase3_objective_var(g: &mut Graph, h: &Hyperparams, lc: Var, lreg: Var, obtl: Var, cl: Var) -> Result<Var> {
    g.weighted_sum(&[(lc, h.lambda_c), (lreg, h.lambda_reg), (obtl, 1.0), (cl, 1.0)])
}
