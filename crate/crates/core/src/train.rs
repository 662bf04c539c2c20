//! Three-phase schedule: CVAE pretraining, regressor metric training, and
//! joint decoder/regressor fine-tuning on real plus synthesized samples.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::{Protocol, TrainConfig};
use crate::dataset::{split_gzsl, Dataset};
use crate::error::{Error, Result};
use crate::losses::{attr_regression_loss, center_loss, cvae_loss, lc_loss, lreg_loss, obtl_loss, update_centers};
use crate::models::{reparameterize_var, Architecture, Centers, Networks, DECODER, ENCODER, REGRESSOR};
use crate::numgrad::{optimizer_step, Graph, Rng, Tensor2, Var};
use crate::ocd::{generate_ocd, latent_draws, OcdParams};

pub const HISTORY_HEADER: &str = "phase,epoch,loss_total,recon,kl,obtl,center,attr,lc,lreg";

/// Per-epoch means of the objective and its parts; unused parts stay 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub obtl: f64,
    pub center: f64,
    pub attr: f64,
    pub lc: f64,
    pub lreg: f64,
}

impl EpochRecord {
    fn add(&mut self, o: &EpochRecord) {
        self.total += o.total;
        self.recon += o.recon;
        self.kl += o.kl;
        self.obtl += o.obtl;
        self.center += o.center;
        self.attr += o.attr;
        self.lc += o.lc;
        self.lreg += o.lreg;
    }

    fn averaged(mut self, steps: usize) -> Self {
        let s = 1.0 / steps.max(1) as f64;
        for v in [
            &mut self.total,
            &mut self.recon,
            &mut self.kl,
            &mut self.obtl,
            &mut self.center,
            &mut self.attr,
            &mut self.lc,
            &mut self.lreg,
        ] {
            *v *= s;
        }
        self
    }
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.phase, r.epoch, r.total, r.recon, r.kl, r.obtl, r.center, r.attr, r.lc, r.lreg
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub nets: Networks,
    pub centers: Centers,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    /// Set once the CVAE has been trained (or restored from a checkpoint).
    pub cvae_ready: bool,
}

impl TrainedModel {
    /// Fresh networks and empty centers for `ds`.
    pub fn init(ds: &Dataset, config: &TrainConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let arch = Architecture {
            d_x: ds.feature_dim(),
            attr_dim: ds.attr_dim(),
            latent_dim: config.hyper.latent_dim,
            hidden: config.hyper.hidden,
        };
        Ok(TrainedModel {
            nets: Networks::init(arch, rng)?,
            centers: Centers::new(ds.num_classes(), ds.attr_dim(), config.hyper.center_lr),
            config: config.clone(),
            history: Vec::new(),
            cvae_ready: false,
        })
    }
}

/// Sample indices the networks are trained on under the configured protocol.
pub fn training_indices(ds: &Dataset, config: &TrainConfig) -> Result<Vec<usize>> {
    let idx = match config.protocol {
        Protocol::Zsl => ds.seen_indices(),
        Protocol::Gzsl => split_gzsl(ds, config.split_ratio, config.seed)?.train_seen_idx,
    };
    if idx.is_empty() {
        return Err(Error::Data("no seen-class training samples".into()));
    }
    Ok(idx)
}

fn batches(idx: &[usize], batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order = idx.to_vec();
    rng.shuffle(&mut order);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("non-finite {what} loss")))
    }
}

/// CVAE on `(x, a_label)` pairs. Touches only encoder and decoder parameters.
pub fn train_phase1(ds: &Dataset, idx: &[usize], model: &mut TrainedModel, rng: &Rng) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::Data("phase 1 needs training samples".into()));
    }
    let h = model.config.hyper.clone();
    let adam = h.adam();
    let (enc, dec) = (model.nets.encoder(), model.nets.decoder());
    for epoch in 0..h.epochs_phase1 {
        let mut erng = rng.child(epoch as u64);
        let mut acc = EpochRecord::default();
        let bs = batches(idx, h.batch_size, &mut erng);
        for b in &bs {
            let labels = ds.labels_at(b);
            let store = &mut model.nets.params;
            let mut g = Graph::with_frozen(&[REGRESSOR]);
            let x = g.constant(ds.features().select_rows(b));
            let a = g.constant(ds.attrs_for(&labels));
            let (mu, lv) = enc.forward(&mut g, store, x)?;
            let z = reparameterize_var(&mut g, mu, lv, &mut erng)?;
            let x_hat = dec.forward(&mut g, store, z, a)?;
            let t = cvae_loss(&mut g, x, x_hat, mu, lv)?;
            let rec = EpochRecord {
                total: check_finite("cvae", g.scalar(t.total))?,
                recon: g.scalar(t.recon),
                kl: g.scalar(t.kl),
                ..Default::default()
            };
            acc.add(&rec);
            g.backward(t.total, store)?;
            optimizer_step(store, &adam)?;
        }
        model.history.push(EpochRecord { phase: 1, epoch, ..acc.averaged(bs.len()) });
    }
    model.cvae_ready = true;
    Ok(())
}

struct MetricParts {
    obtl: Var,
    cl: Var,
}

/// OBTL and center loss on `emb`, honoring the ablation flags. Centers of
/// classes seen for the first time start at their batch mean.
fn metric_terms(g: &mut Graph, emb: Var, labels: &[usize], model: &mut TrainedModel) -> Result<MetricParts> {
    let h = &model.config.hyper;
    let obtl = if model.config.use_obtl {
        obtl_loss(g, emb, labels, h.alpha, h.mining)?
    } else {
        g.constant(Tensor2::scalar(0.0))
    };
    let cl = if model.config.use_cl {
        model.centers.init_missing(g.value(emb), labels)?;
        center_loss(g, emb, labels, &model.centers)?
    } else {
        g.constant(Tensor2::scalar(0.0))
    };
    Ok(MetricParts { obtl, cl })
}

/// Regressor with OBTL + center loss + λ_R·attribute regression on real
/// samples. Touches only regressor parameters and the centers.
pub fn train_phase2(ds: &Dataset, idx: &[usize], model: &mut TrainedModel, rng: &Rng) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::Data("phase 2 needs training samples".into()));
    }
    let h = model.config.hyper.clone();
    let adam = h.adam();
    let reg = model.nets.regressor();
    for epoch in 0..h.epochs_phase2 {
        let mut erng = rng.child(epoch as u64);
        let mut acc = EpochRecord::default();
        let bs = batches(idx, h.batch_size, &mut erng);
        for b in &bs {
            let labels = ds.labels_at(b);
            let mut g = Graph::with_frozen(&[ENCODER, DECODER]);
            let x = g.constant(ds.features().select_rows(b));
            let a = g.constant(ds.attrs_for(&labels));
            let emb = reg.forward(&mut g, &model.nets.params, x)?;
            let m = metric_terms(&mut g, emb, &labels, model)?;
            let attr = attr_regression_loss(&mut g, emb, a)?;
            let total = g.weighted_sum(&[(m.obtl, 1.0), (m.cl, 1.0), (attr, h.lambda_r)])?;
            acc.add(&EpochRecord {
                total: check_finite("phase-2", g.scalar(total))?,
                obtl: g.scalar(m.obtl),
                center: g.scalar(m.cl),
                attr: g.scalar(attr),
                ..Default::default()
            });
            let emb_value = g.value(emb).clone();
            g.backward(total, &mut model.nets.params)?;
            optimizer_step(&mut model.nets.params, &adam)?;
            if model.config.use_cl {
                update_centers(&mut model.centers, &emb_value, &labels, h.center_lr)?;
            }
        }
        model.history.push(EpochRecord { phase: 2, epoch, ..acc.averaged(bs.len()) });
    }
    Ok(())
}

/// Generated rows of one phase-3 epoch. Each row is decoded inside the graph
/// from its stored latent code, so the generator receives gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedPool {
    pub z: Tensor2,
    pub attrs: Tensor2,
    pub labels: Vec<usize>,
    /// Whether the row also enters the metric losses.
    pub metric: Vec<bool>,
}

impl GeneratedPool {
    fn append(&mut self, z: Tensor2, attrs: Tensor2, labels: Vec<usize>, metric: bool) -> Result<()> {
        self.metric.extend(std::iter::repeat_n(metric, labels.len()));
        self.labels.extend(labels);
        self.z = if self.z.rows() == 0 { z } else { self.z.vstack(&z)? };
        self.attrs = if self.attrs.rows() == 0 { attrs } else { self.attrs.vstack(&attrs)? };
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Classes OCD is generated for: unseen classes under ZSL, the training
/// (seen) classes under GZSL.
pub fn ocd_classes(ds: &Dataset, protocol: Protocol) -> Vec<usize> {
    match protocol {
        Protocol::Zsl => ds.unseen().to_vec(),
        Protocol::Gzsl => ds.seen().to_vec(),
    }
}

/// One epoch's generated rows.
///
/// With OCD enabled the pool holds OCD samples of [`ocd_classes`], which feed
/// every phase-3 term. Without OCD, plain `z ~ N(0, I)` samples of the same
/// classes feed only the generator losses. Under GZSL, plain samples of the
/// unseen classes are added and enter the metric losses as well, so the
/// regressor is trained on seen plus synthetic unseen classes.
pub fn generated_pool(ds: &Dataset, model: &TrainedModel, rng: &Rng) -> Result<GeneratedPool> {
    let cfg = &model.config;
    let h = &cfg.hyper;
    let classes = ocd_classes(ds, cfg.protocol);
    let attrs = ds.attributes().select_rows(&classes);
    let latent = model.nets.arch.latent_dim;
    let mut pool = GeneratedPool {
        z: Tensor2::zeros(0, latent),
        attrs: Tensor2::zeros(0, ds.attr_dim()),
        labels: Vec::new(),
        metric: Vec::new(),
    };
    if !classes.is_empty() {
        if cfg.use_ocd {
            if !model.cvae_ready {
                return Err(Error::State("OCD generation needs a trained CVAE (phase 1)".into()));
            }
            let b = generate_ocd(&model.nets, &attrs, &classes, &OcdParams::from_hyper(h)?, &mut rng.child(0))?;
            pool.append(b.z_oc, b.attrs, b.labels, true)?;
        } else {
            let (z, a, l) = latent_draws(&model.nets, &attrs, &classes, h.ocd_samples_per_class, 0.0, 1.0, &mut rng.child(1))?;
            pool.append(z, a, l, false)?;
        }
    }
    if cfg.protocol == Protocol::Gzsl && !ds.unseen().is_empty() {
        let un = ds.unseen();
        let ua = ds.attributes().select_rows(un);
        let (z, a, l) = latent_draws(&model.nets, &ua, un, h.ocd_samples_per_class, 0.0, 1.0, &mut rng.child(2))?;
        pool.append(z, a, l, true)?;
    }
    Ok(pool)
}

/// Joint fine-tuning of decoder and regressor; the encoder stays frozen.
///
/// Each step pairs half a batch of real samples with half a batch of pool
/// rows: `λ_c·L_c + λ_reg·L_Reg` on the generated and real halves,
/// `L_OBTL + L_CL` on real rows together with metric-eligible generated rows
/// (detached from the generator), and `λ_R` times the attribute regression of
/// the real rows.
pub fn train_phase3(ds: &Dataset, idx: &[usize], model: &mut TrainedModel, rng: &Rng) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::Data("phase 3 needs training samples".into()));
    }
    if model.config.use_ocd && !model.cvae_ready {
        return Err(Error::State("OCD generation needs a trained CVAE (phase 1)".into()));
    }
    let h = model.config.hyper.clone();
    let adam = h.adam();
    let (dec, reg) = (model.nets.decoder(), model.nets.regressor());
    let half = (h.batch_size / 2).max(1);
    for epoch in 0..h.epochs_phase3 {
        let erng = rng.child(epoch as u64);
        let pool = generated_pool(ds, model, &erng.child(0))?;
        let mut srng = erng.child(1);
        let mut real = idx.to_vec();
        srng.shuffle(&mut real);
        let gen = srng.permutation(pool.len());
        let steps = real.len().max(pool.len()).div_ceil(half);
        let mut noise = erng.child(2);
        let mut acc = EpochRecord::default();
        for s in 0..steps {
            let rb: Vec<usize> = (0..half).map(|k| real[(s * half + k) % real.len()]).collect();
            let gb: Vec<usize> = if pool.is_empty() {
                Vec::new()
            } else {
                (0..half).map(|k| gen[(s * half + k) % gen.len()]).collect()
            };
            let labels_r = ds.labels_at(&rb);
            let store = &model.nets.params;
            let mut g = Graph::with_frozen(&[ENCODER]);
            let xr = g.constant(ds.features().select_rows(&rb));
            let ar = g.constant(ds.attrs_for(&labels_r));

            let zero = g.constant(Tensor2::scalar(0.0));
            let (lc, x_gen) = if gb.is_empty() {
                (zero, None)
            } else {
                let z = g.constant(pool.z.select_rows(&gb));
                let a = g.constant(pool.attrs.select_rows(&gb));
                let xg = dec.forward(&mut g, store, z, a)?;
                (lc_loss(&mut g, store, &reg, xg, a)?, Some(xg))
            };
            let lreg = lreg_loss(&mut g, store, &dec, xr, ar, &mut noise)?;

            let keep: Vec<usize> = (0..gb.len()).filter(|&k| pool.metric[gb[k]]).collect();
            let mut labels = labels_r.clone();
            let metric_x = match x_gen {
                Some(xg) if !keep.is_empty() => {
                    let det = g.detach(xg);
                    let sel = g.gather_rows(det, keep.clone())?;
                    labels.extend(keep.iter().map(|&k| pool.labels[gb[k]]));
                    g.vstack(xr, sel)?
                }
                _ => xr,
            };
            let emb = reg.forward(&mut g, store, metric_x)?;
            let emb_r = g.gather_rows(emb, (0..rb.len()).collect())?;
            let attr = attr_regression_loss(&mut g, emb_r, ar)?;
            let m = metric_terms(&mut g, emb, &labels, model)?;
            let total = g.weighted_sum(&[
                (lc, h.lambda_c),
                (lreg, h.lambda_reg),
                (m.obtl, 1.0),
                (m.cl, 1.0),
                (attr, h.lambda_r),
            ])?;
            acc.add(&EpochRecord {
                total: check_finite("phase-3", g.scalar(total))?,
                obtl: g.scalar(m.obtl),
                center: g.scalar(m.cl),
                attr: g.scalar(attr),
                lc: g.scalar(lc),
                lreg: g.scalar(lreg),
                ..Default::default()
            });
            let emb_value = g.value(emb).clone();
            g.backward(total, &mut model.nets.params)?;
            optimizer_step(&mut model.nets.params, &adam)?;
            if model.config.use_cl {
                update_centers(&mut model.centers, &emb_value, &labels, h.center_lr)?;
            }
        }
        model.history.push(EpochRecord { phase: 3, epoch, ..acc.averaged(steps) });
    }
    Ok(())
}

/// Phases 1 → 2 → 3 on independent child streams of `config.seed`. Trained
/// values are rounded to `f32` and optimizer state is dropped, so a saved
/// checkpoint reloads to an equal model.
pub fn run_pipeline(ds: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let root = Rng::new(config.seed);
    let mut model = TrainedModel::init(ds, config, &mut root.child(0))?;
    let idx = training_indices(ds, config)?;
    train_phase1(ds, &idx, &mut model, &root.child(1))?;
    train_phase2(ds, &idx, &mut model, &root.child(2))?;
    train_phase3(ds, &idx, &mut model, &root.child(3))?;
    model.nets.params.round_to_f32();
    model.nets.params.reset_optimizer();
    model.centers.round_to_f32();
    Ok(model)
}

/// Plain decoder samples `z ~ N(0, I)` for the given classes.
pub fn sample_plain(nets: &Networks, ds: &Dataset, classes: &[usize], n_per_class: usize, rng: &mut Rng) -> Result<(Tensor2, Vec<usize>)> {
    let attrs = ds.attributes().select_rows(classes);
    let (z, a, l) = latent_draws(nets, &attrs, classes, n_per_class, 0.0, 1.0, rng)?;
    Ok((nets.decode(&z, &a)?, l))
}

