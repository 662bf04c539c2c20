use super::Dataset;
use crate::error::{Error, Result};
use crate::numgrad::{Rng, Tensor2};

/// Parameters of the synthetic class-cluster generator.
///
/// Classes `0..num_seen` are seen, the next `num_unseen` are unseen.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub num_seen: usize,
    pub num_unseen: usize,
    pub samples_per_class: usize,
    pub d_x: usize,
    pub attr_dim: usize,
    /// Per-coordinate std of samples around their class feature center.
    pub class_spread: f64,
    /// Expected Euclidean distance between two attribute prototypes.
    pub class_separation: f64,
    /// Std of the class-specific offset added to the linear image of `a_c`.
    pub attribute_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_seen: 8,
            num_unseen: 4,
            samples_per_class: 100,
            d_x: 16,
            attr_dim: 8,
            class_spread: 0.3,
            class_separation: 3.0,
            attribute_noise: 0.1,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_seen == 0 || self.samples_per_class == 0 || self.d_x == 0 || self.attr_dim == 0 {
            return Err(Error::Parameter(
                "num_seen, samples_per_class, d_x and attr_dim must be >= 1".into(),
            ));
        }
        if !(self.class_separation > 0.0) || !self.class_separation.is_finite() {
            return Err(Error::Parameter("class_separation must be > 0".into()));
        }
        for (name, v) in [("class_spread", self.class_spread), ("attribute_noise", self.attribute_noise)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Draws a dataset where features are a fixed linear image of the class
/// attributes plus noise, so attributes predict features.
///
/// * `a_c ~ N(0, s²·I_L)` with `s = separation / √(2L)`, giving
///   `E‖a_i − a_j‖² = separation²`.
/// * `center_c = M·a_c + noise`, `M` a `d_x × L` Gaussian map scaled by `1/√L`.
/// * `x = center_c + spread·ε`.
///
/// All values are rounded to `f32` so the dataset survives a save/load cycle
/// unchanged.
pub fn make_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let classes = cfg.num_seen + cfg.num_unseen;
    let root = Rng::new(cfg.seed);
    let (attributes, centers) = prototypes(cfg, &root)?;

    let mut rng = root.child(2);
    let n = classes * cfg.samples_per_class;
    let mut features = Tensor2::zeros(n, cfg.d_x);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        for k in 0..cfg.samples_per_class {
            let row = features.row_mut(c * cfg.samples_per_class + k);
            for (j, v) in row.iter_mut().enumerate() {
                let noise = rng.normal();
                *v = (centers.get(c, j) + cfg.class_spread * noise) as f32 as f64;
            }
            labels.push(c);
        }
    }

    Dataset::new(
        features,
        labels,
        attributes,
        (0..cfg.num_seen).collect(),
        (cfg.num_seen..classes).collect(),
    )
}

fn prototypes(cfg: &SynthConfig, root: &Rng) -> Result<(Tensor2, Tensor2)> {
    let classes = cfg.num_seen + cfg.num_unseen;
    let mut rng = root.child(0);
    let s = cfg.class_separation / (2.0 * cfg.attr_dim as f64).sqrt();
    let attributes = rng.normal_matrix(classes, cfg.attr_dim).scale(s).round_to_f32();

    let mut rng = root.child(1);
    let projection = rng
        .normal_matrix(cfg.attr_dim, cfg.d_x)
        .scale(1.0 / (cfg.attr_dim as f64).sqrt());
    let offsets = rng.normal_matrix(classes, cfg.d_x).scale(cfg.attribute_noise);
    let mut centers = attributes.matmul(&projection)?;
    centers.add_assign(&offsets)?;
    Ok((attributes, centers))
}

/// Per-class feature centers the generator draws samples around.
pub fn class_centers(cfg: &SynthConfig) -> Result<Tensor2> {
    cfg.validate()?;
    Ok(prototypes(cfg, &Rng::new(cfg.seed))?.1)
}
