//! Encoder `p_E(z|x)`, attribute-conditioned decoder `p_G(x̂|z,a)`, regressor
//! `p_R(â|x̂)`, learned class centers and the nearest-attribute classifier.
//!
//! All three networks are one-hidden-layer MLPs with leaky-ReLU hidden units
//! and linear outputs. Their parameters live together in one [`ParamStore`],
//! namespaced by `encoder.`, `decoder.` and `regressor.`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{dense_forward, Activation, Graph, ParamStore, Rng, Tensor2, Var};

pub const ENCODER: &str = "encoder.";
pub const DECODER: &str = "decoder.";
pub const REGRESSOR: &str = "regressor.";

/// Floor on the reparameterization standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub d_x: usize,
    pub attr_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 || self.attr_dim == 0 || self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::Parameter(format!("all network widths must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

fn init_layer(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) {
    let std = (gain / fan_in as f64).sqrt();
    store.insert(format!("{name}.w"), rng.normal_matrix(fan_in, fan_out).scale(std));
    store.insert(format!("{name}.b"), Tensor2::zeros(1, fan_out));
}

fn check_cols(op: &'static str, x: &Tensor2, cols: usize) -> Result<()> {
    if x.cols() != cols {
        return Err(Error::dim(op, format!("{cols} columns"), x.cols()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Encoder {
    pub d_x: usize,
    pub hidden: usize,
    pub latent_dim: usize,
}

impl Encoder {
    fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        init_layer(store, "encoder.hidden", self.d_x, self.hidden, 2.0, rng);
        init_layer(store, "encoder.mu", self.hidden, self.latent_dim, 1.0, rng);
        init_layer(store, "encoder.logvar", self.hidden, self.latent_dim, 0.1, rng);
    }

    /// Returns `(μ, log σ²)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<(Var, Var)> {
        check_cols("encode", g.value(x), self.d_x)?;
        let h = dense_forward(g, store, "encoder.hidden", x, Activation::LeakyRelu)?;
        let mu = dense_forward(g, store, "encoder.mu", h, Activation::Linear)?;
        let logvar = dense_forward(g, store, "encoder.logvar", h, Activation::Linear)?;
        Ok((mu, logvar))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decoder {
    pub latent_dim: usize,
    pub attr_dim: usize,
    pub hidden: usize,
    pub d_x: usize,
}

impl Decoder {
    fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        init_layer(store, "decoder.hidden", self.latent_dim + self.attr_dim, self.hidden, 2.0, rng);
        init_layer(store, "decoder.out", self.hidden, self.d_x, 1.0, rng);
    }

    /// Decodes each row `[z_i, a_i]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, z: Var, a: Var) -> Result<Var> {
        check_cols("decode (z)", g.value(z), self.latent_dim)?;
        check_cols("decode (a)", g.value(a), self.attr_dim)?;
        if g.value(z).rows() != g.value(a).rows() {
            return Err(Error::dim("decode", g.value(z).rows(), g.value(a).rows()));
        }
        let za = g.concat_cols(z, a)?;
        let h = dense_forward(g, store, "decoder.hidden", za, Activation::LeakyRelu)?;
        dense_forward(g, store, "decoder.out", h, Activation::Linear)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Regressor {
    pub d_x: usize,
    pub hidden: usize,
    pub attr_dim: usize,
}

impl Regressor {
    fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        init_layer(store, "regressor.hidden", self.d_x, self.hidden, 2.0, rng);
        init_layer(store, "regressor.out", self.hidden, self.attr_dim, 1.0, rng);
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        check_cols("regress", g.value(x), self.d_x)?;
        let h = dense_forward(g, store, "regressor.hidden", x, Activation::LeakyRelu)?;
        dense_forward(g, store, "regressor.out", h, Activation::Linear)
    }
}

/// The three networks and their shared parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub arch: Architecture,
    pub params: ParamStore,
}

impl Networks {
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let n = Networks { arch, params: ParamStore::new() };
        n.encoder().init(&mut params, &mut rng.child(0));
        n.decoder().init(&mut params, &mut rng.child(1));
        n.regressor().init(&mut params, &mut rng.child(2));
        Ok(Networks { arch, params })
    }

    /// Reassembles networks from stored parameters, checking every shape.
    pub fn from_params(arch: Architecture, params: ParamStore) -> Result<Self> {
        arch.validate()?;
        let reference = Networks::init(arch, &mut Rng::new(0))?;
        for (name, p) in reference.params.iter() {
            let got = params
                .value(name)
                .map_err(|_| Error::Data(format!("missing parameter `{name}`")))?;
            if got.shape() != p.value.shape() {
                return Err(Error::dim("Networks::from_params", format!("{name} {:?}", p.value.shape()), format!("{:?}", got.shape())));
            }
        }
        if params.len() != reference.params.len() {
            return Err(Error::Data("unexpected extra parameters".into()));
        }
        Ok(Networks { arch, params })
    }

    pub fn encoder(&self) -> Encoder {
        Encoder {
            d_x: self.arch.d_x,
            hidden: self.arch.hidden,
            latent_dim: self.arch.latent_dim,
        }
    }

    pub fn decoder(&self) -> Decoder {
        Decoder {
            latent_dim: self.arch.latent_dim,
            attr_dim: self.arch.attr_dim,
            hidden: self.arch.hidden,
            d_x: self.arch.d_x,
        }
    }

    pub fn regressor(&self) -> Regressor {
        Regressor {
            d_x: self.arch.d_x,
            hidden: self.arch.hidden,
            attr_dim: self.arch.attr_dim,
        }
    }

    /// Row-wise `(μ_{z|x}, log σ²_{z|x})`.
    pub fn encode(&self, x: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (mu, lv) = self.encoder().forward(&mut g, &self.params, xv)?;
        Ok((g.value(mu).clone(), g.value(lv).clone()))
    }

    pub fn decode(&self, z: &Tensor2, a: &Tensor2) -> Result<Tensor2> {
        let mut g = Graph::new();
        let (zv, av) = (g.constant(z.clone()), g.constant(a.clone()));
        let out = self.decoder().forward(&mut g, &self.params, zv, av)?;
        Ok(g.value(out).clone())
    }

    pub fn regress(&self, x: &Tensor2) -> Result<Tensor2> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.regressor().forward(&mut g, &self.params, xv)?;
        Ok(g.value(out).clone())
    }
}

/// `z = μ + max(exp(logvar/2), SIGMA_FLOOR) ⊙ ε`, `ε ~ N(0, I)`.
pub fn reparameterize(mu: &Tensor2, logvar: &Tensor2, rng: &mut Rng) -> Result<Tensor2> {
    mu.same_shape("reparameterize", logvar)?;
    let mut z = mu.clone();
    for (zi, &lv) in z.data_mut().iter_mut().zip(logvar.data()) {
        let sd = (0.5 * lv).exp().max(SIGMA_FLOOR);
        *zi += sd * rng.normal();
    }
    Ok(z)
}

/// Differentiable reparameterization; the noise enters as a constant.
pub fn reparameterize_var(g: &mut Graph, mu: Var, logvar: Var, rng: &mut Rng) -> Result<Var> {
    let (r, c) = g.value(mu).shape();
    let eps = g.constant(rng.normal_matrix(r, c));
    let half = g.scale(logvar, 0.5);
    let sd = g.exp(half);
    let noise = g.mul(sd, eps)?;
    g.add(mu, noise)
}

/// Nearest class attribute vector (Euclidean) among `candidates`; ties go to
/// the smallest class id regardless of candidate order.
pub fn classify(a_hat: &[f64], attributes: &Tensor2, candidates: &[usize]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::Parameter("empty candidate class set".into()));
    }
    if a_hat.len() != attributes.cols() {
        return Err(Error::dim("classify", attributes.cols(), a_hat.len()));
    }
    let mut best: Option<(f64, usize)> = None;
    for &c in candidates {
        if c >= attributes.rows() {
            return Err(Error::Parameter(format!("candidate class {c} out of range")));
        }
        let d: f64 = attributes
            .row(c)
            .iter()
            .zip(a_hat)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        best = match best {
            Some((bd, bc)) if bd < d || (bd == d && bc < c) => Some((bd, bc)),
            _ => Some((d, c)),
        };
    }
    Ok(best.expect("non-empty").1)
}

/// Learned per-class centers in regressor-output space.
#[derive(Clone, Debug, PartialEq)]
pub struct Centers {
    values: Tensor2,
    present: Vec<bool>,
    /// Step size of [`crate::losses::update_centers`].
    pub gamma: f64,
}

impl Centers {
    pub fn new(num_classes: usize, dim: usize, gamma: f64) -> Self {
        Centers {
            values: Tensor2::zeros(num_classes, dim),
            present: vec![false; num_classes],
            gamma,
        }
    }

    pub fn from_parts(values: Tensor2, present: Vec<bool>, gamma: f64) -> Result<Self> {
        if present.len() != values.rows() {
            return Err(Error::dim("Centers::from_parts", values.rows(), present.len()));
        }
        Ok(Centers { values, present, gamma })
    }

    pub fn values(&self) -> &Tensor2 {
        &self.values
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn num_classes(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        (self.present.get(class) == Some(&true)).then(|| self.values.row(class))
    }

    pub fn set(&mut self, class: usize, center: &[f64]) {
        self.values.row_mut(class).copy_from_slice(center);
        self.present[class] = true;
    }

    /// Initializes absent classes at the mean of their rows in `emb`.
    pub fn init_missing(&mut self, emb: &Tensor2, labels: &[usize]) -> Result<()> {
        for (class, mean) in class_means(emb, labels, self.num_classes())? {
            if !self.present[class] {
                self.set(class, &mean);
            }
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        self.values = self.values.round_to_f32();
    }
}

/// Mean embedding of every class that occurs in `labels`, in class order.
pub(crate) fn class_means(emb: &Tensor2, labels: &[usize], num_classes: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    if emb.rows() != labels.len() {
        return Err(Error::dim("class_means", emb.rows(), labels.len()));
    }
    let mut sums = vec![vec![0.0; emb.cols()]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (row, &l) in emb.iter_rows().zip(labels) {
        if l >= num_classes {
            return Err(Error::State(format!("class {l} has no center slot")));
        }
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(row) {
            *s += v;
        }
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(c, (s, n))| (c, s.into_iter().map(|v| v / n as f64).collect()))
        .collect())
}
