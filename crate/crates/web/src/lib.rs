//! wasm-bindgen surface for the static demo page in `www/`.
//!
//! The page trains a tiny CVAE on a 2-D synthetic dataset once, then lets the
//! user resample the approximated class distribution and its over-complete
//! counterpart for any `(σ_HP, σ'_HP)` pair.

use ocd_cvae::config::TrainConfig;
use ocd_cvae::dataset::{make_synthetic, Dataset, SynthConfig};
use ocd_cvae::eval::harmonic_mean as hm;
use ocd_cvae::losses::{mine_batch_triplets, MiningMode};
use ocd_cvae::numgrad::{Rng, Tensor2};
use ocd_cvae::ocd::{generate_ocd, OcdParams};
use ocd_cvae::train::{train_phase1, training_indices, TrainedModel};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: ocd_cvae::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct Points {
    /// Flattened `(x, y)` pairs.
    real: Vec<f64>,
    real_labels: Vec<usize>,
    plain: Vec<f64>,
    ocd: Vec<f64>,
    labels: Vec<usize>,
}

fn flat(t: &Tensor2) -> Vec<f64> {
    t.iter_rows().flat_map(|r| [r[0], r[1]]).collect()
}

/// A trained 2-D CVAE and its dataset.
#[wasm_bindgen]
pub struct OcdExplorer {
    ds: Dataset,
    model: TrainedModel,
}

#[wasm_bindgen]
impl OcdExplorer {
    /// Generates `classes` clusters in the plane and runs CVAE pretraining.
    #[wasm_bindgen(constructor)]
    pub fn new(classes: usize, epochs: usize, seed: u64) -> Result<OcdExplorer, JsValue> {
        let ds = make_synthetic(&SynthConfig {
            num_seen: classes.max(2),
            num_unseen: 1,
            samples_per_class: 60,
            d_x: 2,
            attr_dim: 4,
            class_spread: 0.15,
            class_separation: 3.0,
            attribute_noise: 0.05,
            seed,
        })
        .map_err(js_err)?;
        let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
        cfg.hyper.latent_dim = 2;
        cfg.hyper.hidden = 32;
        cfg.hyper.batch_size = 64;
        cfg.hyper.lr = 5e-3;
        cfg.hyper.epochs_phase1 = epochs;
        let root = Rng::new(seed);
        let mut model = TrainedModel::init(&ds, &cfg, &mut root.child(0)).map_err(js_err)?;
        let idx = training_indices(&ds, &cfg).map_err(js_err)?;
        train_phase1(&ds, &idx, &mut model, &root.child(1)).map_err(js_err)?;
        Ok(OcdExplorer { ds, model })
    }

    /// Final-epoch reconstruction and KL terms.
    pub fn final_loss(&self) -> Vec<f64> {
        self.model.history.last().map_or(vec![], |r| vec![r.recon, r.kl])
    }

    /// Real points, the approximated distribution `X̂` and the OCD samples of
    /// the seen classes, as a JS object of flat coordinate arrays.
    pub fn sample(&self, sigma_hp: f64, sigma_prime_hp: f64, per_class: usize, seed: u64) -> Result<JsValue, JsValue> {
        let params = OcdParams::new(0.0, sigma_hp, sigma_prime_hp, per_class.max(1), true, 256).map_err(js_err)?;
        let classes = self.ds.seen().to_vec();
        let attrs = self.ds.attributes().select_rows(&classes);
        let b = generate_ocd(&self.model.nets, &attrs, &classes, &params, &mut Rng::new(seed)).map_err(js_err)?;
        let seen = self.ds.seen_indices();
        let pts = Points {
            real: flat(&self.ds.features().select_rows(&seen)),
            real_labels: self.ds.labels_at(&seen),
            plain: flat(&b.x_hat),
            ocd: flat(&b.x_oc),
            labels: b.labels,
        };
        serde_wasm_bindgen::to_value(&pts).map_err(|e| JsValue::from_str(&e.to_string()))
    }
}

/// `[hardest-negative count, all-valid count]` for a batch of `classes`
/// classes with `per_class` samples each.
#[wasm_bindgen]
pub fn triplet_counts(classes: usize, per_class: usize) -> Result<Vec<u32>, JsValue> {
    let n = classes * per_class;
    if n > 400 {
        return Err(JsValue::from_str("at most 400 samples"));
    }
    let labels: Vec<usize> = (0..n).map(|i| i / per_class.max(1)).collect();
    let emb = Tensor2::from_vec(n, 1, (0..n).map(|i| i as f64).collect()).map_err(js_err)?;
    let hard = mine_batch_triplets(&emb, &labels, MiningMode::HardestNegative).map_err(js_err)?;
    let all = mine_batch_triplets(&emb, &labels, MiningMode::AllValid).map_err(js_err)?;
    Ok(vec![hard.len() as u32, all.len() as u32])
}

/// `2AB / (A + B)`.
#[wasm_bindgen]
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64, JsValue> {
    hm(a, b).map_err(js_err)
}
