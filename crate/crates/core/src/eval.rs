//! Per-class accuracy under the ZSL and GZSL protocols, the harmonic mean,
//! the ablation grid, hyperparameter sweeps and their CSV / JSON / SVG output.
//!
//! Accuracies are percentages in `[0, 100]`, averaged unweighted over the
//! classes that have at least one test sample.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{Protocol, TrainConfig};
use crate::dataset::{split_gzsl, Dataset, GzslSplit};
use crate::error::{Error, Result};
use crate::models::{classify, Networks};
use crate::train::{run_pipeline, TrainedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: BTreeMap<usize, f64>,
    pub mean: f64,
    /// Classes of the requested set without any test sample.
    pub excluded: Vec<usize>,
}

/// Unweighted mean over classes of the per-class hit rate. Samples whose
/// label is outside `class_set` are ignored.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], class_set: &[usize]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("per_class_accuracy", labels.len(), predictions.len()));
    }
    if class_set.is_empty() {
        return Err(Error::Parameter("empty class set".into()));
    }
    let mut tally: BTreeMap<usize, (usize, usize)> = class_set.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &l) in predictions.iter().zip(labels) {
        if let Some((hit, n)) = tally.get_mut(&l) {
            *n += 1;
            *hit += usize::from(p == l);
        }
    }
    let mut per_class = BTreeMap::new();
    let mut excluded = Vec::new();
    for (c, (hit, n)) in tally {
        if n == 0 {
            excluded.push(c);
        } else {
            per_class.insert(c, 100.0 * hit as f64 / n as f64);
        }
    }
    if per_class.is_empty() {
        return Err(Error::Data("no test samples for any class in the set".into()));
    }
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(Metrics { per_class, mean, excluded })
}

/// `2AB / (A + B)`, and 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0) {
        return Err(Error::Parameter(format!("accuracies must be >= 0, got {a} and {b}")));
    }
    if a + b == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a * b / (a + b))
}

/// Nearest-attribute prediction for the listed samples.
pub fn predict(nets: &Networks, ds: &Dataset, idx: &[usize], candidates: &[usize]) -> Result<Vec<usize>> {
    const CHUNK: usize = 512;
    let run = |chunk: &[usize]| -> Result<Vec<usize>> {
        let a_hat = nets.regress(&ds.features().select_rows(chunk))?;
        a_hat.iter_rows().map(|r| classify(r, ds.attributes(), candidates)).collect()
    };
    let chunks: Vec<&[usize]> = idx.chunks(CHUNK).collect();
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<Vec<usize>>> = {
        use rayon::prelude::*;
        chunks.par_iter().map(|c| run(c)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<Vec<usize>>> = chunks.iter().map(|c| run(c)).collect();
    let mut out = Vec::with_capacity(idx.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Unseen test samples classified among unseen classes only.
pub fn eval_zsl(nets: &Networks, ds: &Dataset) -> Result<Metrics> {
    let idx = ds.unseen_indices();
    if idx.is_empty() {
        return Err(Error::Data("ZSL evaluation needs unseen-class samples".into()));
    }
    let pred = predict(nets, ds, &idx, ds.unseen())?;
    per_class_accuracy(&pred, &ds.labels_at(&idx), ds.unseen())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GzslMetrics {
    /// Unseen test samples against seen ∪ unseen candidates.
    pub a: f64,
    /// Seen test samples against seen ∪ unseen candidates.
    pub b: f64,
    pub h: f64,
    pub unseen: Metrics,
    pub seen: Metrics,
}

pub fn eval_gzsl(nets: &Networks, ds: &Dataset, split: &GzslSplit) -> Result<GzslMetrics> {
    if split.test_unseen_idx.is_empty() || split.test_seen_idx.is_empty() {
        return Err(Error::Data("GZSL evaluation needs seen and unseen test samples".into()));
    }
    let all = ds.all_classes();
    let pu = predict(nets, ds, &split.test_unseen_idx, &all)?;
    let ps = predict(nets, ds, &split.test_seen_idx, &all)?;
    let unseen = per_class_accuracy(&pu, &ds.labels_at(&split.test_unseen_idx), ds.unseen())?;
    let seen = per_class_accuracy(&ps, &ds.labels_at(&split.test_seen_idx), ds.seen())?;
    let (a, b) = (unseen.mean, seen.mean);
    Ok(GzslMetrics { a, b, h: harmonic_mean(a, b)?, unseen, seen })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum EvalReport {
    Zsl(Metrics),
    Gzsl(GzslMetrics),
}

impl EvalReport {
    /// Mean per-class accuracy under ZSL, `H` under GZSL.
    pub fn score(&self) -> f64 {
        match self {
            EvalReport::Zsl(m) => m.mean,
            EvalReport::Gzsl(g) => g.h,
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            EvalReport::Zsl(_) => Protocol::Zsl,
            EvalReport::Gzsl(_) => Protocol::Gzsl,
        }
    }
}

/// Evaluates under `protocol`; GZSL reuses the split the model was trained on.
pub fn evaluate(model: &TrainedModel, ds: &Dataset, protocol: Protocol) -> Result<EvalReport> {
    if ds.feature_dim() != model.nets.arch.d_x || ds.attr_dim() != model.nets.arch.attr_dim {
        return Err(Error::Data(format!(
            "model expects d_x = {} and L = {}, dataset has {} and {}",
            model.nets.arch.d_x,
            model.nets.arch.attr_dim,
            ds.feature_dim(),
            ds.attr_dim()
        )));
    }
    match protocol {
        Protocol::Zsl => Ok(EvalReport::Zsl(eval_zsl(&model.nets, ds)?)),
        Protocol::Gzsl => {
            let split = split_gzsl(ds, model.config.split_ratio, model.config.seed)?;
            Ok(EvalReport::Gzsl(eval_gzsl(&model.nets, ds, &split)?))
        }
    }
}

/// Header of [`report_csv`].
pub const METRICS_HEADER: &str = "protocol,seed,name,value";

/// Summary rows (`mean`, or `A`, `B`, `H`) followed by per-class rows named
/// `class_<id>` (prefixed `seen_`/`unseen_` under GZSL).
pub fn report_csv(report: &EvalReport, seed: u64) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    let p = report.protocol();
    let mut row = |name: &str, v: f64| {
        let _ = writeln!(s, "{p},{seed},{name},{v}");
    };
    match report {
        EvalReport::Zsl(m) => {
            row("mean", m.mean);
            for (c, v) in &m.per_class {
                row(&format!("class_{c}"), *v);
            }
        }
        EvalReport::Gzsl(g) => {
            row("A", g.a);
            row("B", g.b);
            row("H", g.h);
            for (c, v) in &g.unseen.per_class {
                row(&format!("unseen_class_{c}"), *v);
            }
            for (c, v) in &g.seen.per_class {
                row(&format!("seen_class_{c}"), *v);
            }
        }
    }
    s
}

/// One JSON object per line describing a protocol run.
pub fn report_json(report: &EvalReport, seed: u64) -> String {
    let v = match report {
        EvalReport::Zsl(m) => serde_json::json!({
            "protocol": "zsl",
            "seed": seed,
            "mean_per_class_acc": m.mean,
            "per_class": m.per_class,
            "excluded": m.excluded,
        }),
        EvalReport::Gzsl(g) => serde_json::json!({
            "protocol": "gzsl",
            "seed": seed,
            "A": g.a,
            "B": g.b,
            "H": g.h,
            "per_class": { "unseen": g.unseen.per_class, "seen": g.seen.per_class },
            "excluded": { "unseen": g.unseen.excluded, "seen": g.seen.excluded },
        }),
    };
    format!("{v}\n")
}

/// Setting name and `(use_ocd, use_obtl, use_cl)` for each ablation row.
pub const ABLATION_SETTINGS: [(&str, bool, bool, bool); 5] = [
    ("OBTL", false, true, false),
    ("CL", false, false, true),
    ("OCD+OBTL", true, true, false),
    ("OCD+CL", true, false, true),
    ("OCD+OBTL+CL", true, true, true),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub use_ocd: bool,
    pub use_obtl: bool,
    pub use_cl: bool,
    /// Mean per-class accuracy (ZSL) or `H` (GZSL).
    pub accuracy: f64,
}

fn map_ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Trains and scores the five flag combinations of [`ABLATION_SETTINGS`]
/// with the seed and hyperparameters of `base`.
pub fn run_ablation(ds: &Dataset, base: &TrainConfig) -> Result<Vec<AblationRow>> {
    map_ordered(&ABLATION_SETTINGS, |&(name, ocd, obtl, cl)| {
        let mut cfg = base.clone();
        (cfg.use_ocd, cfg.use_obtl, cfg.use_cl) = (ocd, obtl, cl);
        let model = run_pipeline(ds, &cfg)?;
        Ok(AblationRow {
            setting: name.to_owned(),
            use_ocd: ocd,
            use_obtl: obtl,
            use_cl: cl,
            accuracy: evaluate(&model, ds, cfg.protocol)?.score(),
        })
    })
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("setting,use_ocd,use_obtl,use_cl,accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.setting, r.use_ocd, r.use_obtl, r.use_cl, r.accuracy);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    SigmaPrimeHp,
    OcdSamplesPerClass,
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::SigmaPrimeHp => "sigma_prime_hp",
            SweepParam::OcdSamplesPerClass => "ocd_samples_per_class",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma_prime_hp" => Ok(SweepParam::SigmaPrimeHp),
            "ocd_samples_per_class" => Ok(SweepParam::OcdSamplesPerClass),
            _ => Err(Error::Parameter(format!("unknown sweep parameter `{s}`"))),
        }
    }
}

impl SweepParam {
    /// `σ'` from 0.05 to 0.95 in steps of 0.1, or 100 to 900 samples per class.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParam::SigmaPrimeHp => (0..10).map(|k| f64::from(2 * k + 1) / 20.0).collect(),
            SweepParam::OcdSamplesPerClass => vec![100.0, 300.0, 500.0, 700.0, 900.0],
        }
    }

    /// Applies `value`. A `σ'` at or below `σ_HP` lowers `σ_HP` to `σ'/2` so
    /// the sampler ordering holds; the value actually used is returned.
    pub fn apply(self, cfg: &mut TrainConfig, value: f64) -> Result<f64> {
        match self {
            SweepParam::SigmaPrimeHp => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::Parameter(format!("sigma_prime_hp must be > 0, got {value}")));
                }
                cfg.hyper.sigma_prime_hp = value;
                if cfg.hyper.sigma_hp >= value {
                    cfg.hyper.sigma_hp = value / 2.0;
                }
            }
            SweepParam::OcdSamplesPerClass => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(Error::Parameter(format!("ocd_samples_per_class must be a positive integer, got {value}")));
                }
                cfg.hyper.ocd_samples_per_class = value as usize;
            }
        }
        Ok(cfg.hyper.sigma_hp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub sigma_hp: f64,
    pub accuracy: f64,
}

/// One full pipeline and evaluation per value, at the seed of `base`.
pub fn run_sweep(ds: &Dataset, base: &TrainConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Parameter("empty sweep".into()));
    }
    let configs: Vec<(f64, f64, TrainConfig)> = values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            let s = param.apply(&mut cfg, v)?;
            cfg.validate()?;
            Ok((v, s, cfg))
        })
        .collect::<Result<_>>()?;
    map_ordered(&configs, |(value, sigma_hp, cfg)| {
        let model = run_pipeline(ds, cfg)?;
        Ok(SweepRow {
            value: *value,
            sigma_hp: *sigma_hp,
            accuracy: evaluate(&model, ds, cfg.protocol)?.score(),
        })
    })
}

pub fn sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut s = String::from("param,value,sigma_hp,accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{param},{},{},{}", r.value, r.sigma_hp, r.accuracy);
    }
    s
}

/// Accuracy-versus-value line chart as a standalone SVG document.
pub fn sweep_svg(param: SweepParam, rows: &[SweepRow]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 48.0;
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.value), hi.max(r.value)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |v: f64| M + (v - lo) / span * (W - 2.0 * M);
    let y = |acc: f64| H - M - acc / 100.0 * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{M} {M} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = H - M,
        r = W - M
    );
    for t in [0.0, 50.0, 100.0] {
        let _ = writeln!(
            s,
            r#"<text x="{tx}" y="{ty:.1}" font-size="10" text-anchor="end">{t}</text>"#,
            tx = M - 4.0,
            ty = y(t) + 3.0
        );
    }
    let points: Vec<String> = rows.iter().map(|r| format!("{:.1},{:.1}", x(r.value), y(r.accuracy))).collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    );
    for r in rows {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#,
            x(r.value),
            y(r.accuracy)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-size="10" text-anchor="middle">{}</text>"#,
            x(r.value),
            H - M + 14.0,
            r.value
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{param}</text>"#,
        W / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">accuracy (%)</text>"#,
        H / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}
