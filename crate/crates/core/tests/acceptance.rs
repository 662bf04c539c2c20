//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod oracles;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use ocd_cvae::checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint};
use ocd_cvae::cli;
use ocd_cvae::config::{Hyperparams, Protocol, TrainConfig};
use ocd_cvae::dataset::{load_dataset, make_synthetic, save_dataset, split_gzsl, Dataset, SynthConfig};
use ocd_cvae::eval::{eval_gzsl, evaluate, harmonic_mean};
use ocd_cvae::losses::{
    attr_regression_loss, center_loss, cvae_loss, kl_divergence, kl_divergence_value, lc_loss, lreg_loss,
    mine_batch_triplets, obtl_loss, phase3_objective_var, MiningMode,
};
use ocd_cvae::models::{reparameterize_var, Architecture, Centers, Networks};
use ocd_cvae::numgrad::{Graph, ParamStore, Rng, Tensor2, Var};
use ocd_cvae::ocd::{derangement, generate_ocd, partner_indices, shuffle_means, OcdParams};
use ocd_cvae::train::run_pipeline;
use oracles::*;

type Outcome = Result<String, String>;
type LossFn<'a> = Box<dyn Fn(&mut Graph, &ParamStore) -> ocd_cvae::Result<Var> + 'a>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lib<T>(r: ocd_cvae::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn tensor(rows: &[Vec<f64>]) -> Tensor2 {
    Tensor2::from_rows(rows).unwrap()
}

fn criterion1() -> Outcome {
    let t0 = Instant::now();
    let labels: Vec<usize> = (0..200).map(|i| i / 20).collect();
    let emb = tensor(&random_matrix(200, 8, 11));
    let hardest = lib(mine_batch_triplets(&emb, &labels, MiningMode::HardestNegative))?;
    ensure(hardest.len() == 1900, format!("hardest_negative gave {}", hardest.len()))?;
    let all = lib(mine_batch_triplets(&emb, &labels, MiningMode::AllValid))?;
    ensure(all.len() == 342_000, format!("all_valid gave {}", all.len()))?;
    let mined: BTreeSet<_> = all.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
    let offline: BTreeSet<_> = offline_triplets(&labels).into_iter().collect();
    ensure(mined.len() == all.len(), "duplicate triplets")?;
    ensure(mined == offline, "all_valid set differs from offline enumeration")?;
    let dt = t0.elapsed();
    ensure(dt < Duration::from_secs(10), format!("took {dt:?}"))?;
    Ok(format!("1900 / 342000 triplets, set equal to offline, {dt:.2?}"))
}

fn criterion2() -> Outcome {
    let rows = [("AWA2", 59.5, 73.4, 65.7), ("CUB", 44.8, 59.9, 51.3), ("SUN", 44.8, 42.9, 43.8)];
    let mut parts = Vec::new();
    for (name, a, b, h) in rows {
        let got = lib(harmonic_mean(a, b))?;
        let reference = 2.0 * a * b / (a + b);
        ensure((got - reference).abs() < 1e-12, format!("{name}: {got} vs direct {reference}"))?;
        ensure((got - h).abs() <= 0.05, format!("{name}: H({a}, {b}) = {got:.4}, table {h}"))?;
        parts.push(format!("{name} {got:.3}"));
    }
    Ok(parts.join(", "))
}

/// Max `|analytic − numeric| / max(1, |numeric|)`, numeric gradients from the
/// oracle's central differences over a flattened copy of the parameters.
fn grad_error(store: &ParamStore, f: &dyn Fn(&mut Graph, &ParamStore) -> ocd_cvae::Result<Var>) -> Result<f64, String> {
    let mut analytic = store.clone();
    analytic.zero_grads();
    let mut g = Graph::new();
    let loss = lib(f(&mut g, &analytic))?;
    lib(g.backward(loss, &mut analytic))?;
    let names: Vec<String> = store.names().map(str::to_owned).collect();
    let mut flat = Vec::new();
    let mut exact = Vec::new();
    for n in &names {
        flat.extend_from_slice(lib(store.value(n))?.data());
        exact.extend_from_slice(lib(analytic.grad(n))?.data());
    }
    let value = |x: &[f64]| {
        let mut s = store.clone();
        let mut k = 0;
        for n in &names {
            let d = s.value_mut(n).unwrap().data_mut();
            d.copy_from_slice(&x[k..k + d.len()]);
            k += d.len();
        }
        let mut g = Graph::new();
        let v = f(&mut g, &s).unwrap();
        g.scalar(v)
    };
    let numeric = central_differences(value, &flat, 1e-5);
    Ok(exact
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max))
}

fn criterion3() -> Outcome {
    let t0 = Instant::now();
    let arch = Architecture { d_x: 3, attr_dim: 2, latent_dim: 2, hidden: 4 };
    let input = |r: usize, c: usize, s: u64| tensor(&random_matrix(r, c, s));
    let labels: Vec<usize> = (0..6).map(|i| i / 2).collect();
    let h = Hyperparams::default();
    let mut worst = 0.0f64;
    let mut instances = 0;
    for seed in 0..20u64 {
        let nets = lib(Networks::init(arch, &mut Rng::new(seed)))?;
        let (enc, dec, reg) = (nets.encoder(), nets.decoder(), nets.regressor());
        let x = input(6, 3, 1000 + seed);
        let a = input(6, 2, 2000 + seed);
        let z = input(6, 2, 3000 + seed);
        let mut centers = Centers::new(3, 2, 0.5);
        let c = input(3, 2, 4000 + seed);
        for k in 0..3 {
            centers.set(k, c.row(k));
        }
        let losses: Vec<(&str, LossFn)> = vec![
            ("cvae", Box::new(|g, s| {
                let (xv, av) = (g.constant(x.clone()), g.constant(a.clone()));
                let (mu, lv) = enc.forward(g, s, xv)?;
                let zz = reparameterize_var(g, mu, lv, &mut Rng::new(seed))?;
                let xh = dec.forward(g, s, zz, av)?;
                Ok(cvae_loss(g, xv, xh, mu, lv)?.total)
            })),
            ("kl", Box::new(|g, s| {
                let xv = g.constant(x.clone());
                let (mu, lv) = enc.forward(g, s, xv)?;
                kl_divergence(g, mu, lv)
            })),
            ("obtl", Box::new(|g, s| {
                let xv = g.constant(x.clone());
                let e = reg.forward(g, s, xv)?;
                obtl_loss(g, e, &labels, 5.0, MiningMode::HardestNegative)
            })),
            ("obtl_all", Box::new(|g, s| {
                let xv = g.constant(x.clone());
                let e = reg.forward(g, s, xv)?;
                obtl_loss(g, e, &labels, 5.0, MiningMode::AllValid)
            })),
            ("center", Box::new(|g, s| {
                let xv = g.constant(x.clone());
                let e = reg.forward(g, s, xv)?;
                center_loss(g, e, &labels, &centers)
            })),
            ("attr", Box::new(|g, s| {
                let (xv, av) = (g.constant(x.clone()), g.constant(a.clone()));
                let e = reg.forward(g, s, xv)?;
                attr_regression_loss(g, e, av)
            })),
            ("lc", Box::new(|g, s| {
                let (zv, av) = (g.constant(z.clone()), g.constant(a.clone()));
                let xh = dec.forward(g, s, zv, av)?;
                lc_loss(g, s, &reg, xh, av)
            })),
            ("lreg", Box::new(|g, s| {
                let (xv, av) = (g.constant(x.clone()), g.constant(a.clone()));
                lreg_loss(g, s, &dec, xv, av, &mut Rng::new(seed))
            })),
            ("phase3", Box::new(|g, s| {
                let (zv, av, xv) = (g.constant(z.clone()), g.constant(a.clone()), g.constant(x.clone()));
                let xh = dec.forward(g, s, zv, av)?;
                let lc = lc_loss(g, s, &reg, xh, av)?;
                let lr = lreg_loss(g, s, &dec, xv, av, &mut Rng::new(seed))?;
                let e = reg.forward(g, s, xv)?;
                let ob = obtl_loss(g, e, &labels, 5.0, MiningMode::HardestNegative)?;
                let cl = center_loss(g, e, &labels, &centers)?;
                phase3_objective_var(g, &h, lc, lr, ob, cl)
            })),
        ];
        for (name, f) in &losses {
            let err = grad_error(&nets.params, f.as_ref())?;
            ensure(err <= 1e-4, format!("{name} seed {seed}: relative error {err:e}"))?;
            worst = worst.max(err);
            instances += 1;
        }
    }
    let dt = t0.elapsed();
    ensure(dt < Duration::from_secs(60), format!("took {dt:?}"))?;
    Ok(format!("{instances} checks (9 losses x 20 networks), worst relative error {worst:.2e}, {dt:.2?}"))
}

fn criterion4() -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..50u64 {
        let dim = 1 + (k as usize % 3);
        let mu: Vec<Vec<f64>> = random_matrix(1, dim, 5000 + k).into_iter().map(|r| r.iter().map(|v| 0.5 * v).collect()).collect();
        let lv: Vec<Vec<f64>> = random_matrix(1, dim, 6000 + k).into_iter().map(|r| r.iter().map(|v| 0.5 * v).collect()).collect();
        let closed = lib(kl_divergence_value(&tensor(&mu), &tensor(&lv)))?;
        let mc = mc_kl(&mu, &lv, 100_000, 7000 + k);
        let d = (closed - mc).abs();
        ensure(d <= 0.01, format!("gaussian {k}: closed {closed} vs monte carlo {mc}"))?;
        worst = worst.max(d);
    }
    Ok(format!("50 gaussians, worst |closed - MC| = {worst:.4}"))
}

fn criterion5() -> Outcome {
    let arch = Architecture { d_x: 4, attr_dim: 3, latent_dim: 2, hidden: 8 };
    let nets = lib(Networks::init(arch, &mut Rng::new(1)))?;
    let attrs = tensor(&random_matrix(3, 3, 2));
    let classes = [5usize, 0, 2];

    let p = lib(OcdParams::new(0.0, 0.12, 0.5, 120, true, 256))?;
    let b = lib(generate_ocd(&nets, &attrs, &classes, &p, &mut Rng::new(3)))?;
    for i in 0..b.len() {
        for j in 0..arch.latent_dim {
            let mid = (b.mu.get(i, j) + b.mu.get(b.partner[i], j)) / 2.0;
            ensure(b.mu_oc.get(i, j).to_bits() == mid.to_bits(), format!("row {i}: midpoint mismatch"))?;
        }
        let k = classes.iter().position(|&c| c == b.labels[i]).ok_or("unknown label")?;
        let same = b.attrs.row(i).iter().zip(attrs.row(k)).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, format!("row {i}: attributes altered"))?;
    }

    for seed in 0..1000u64 {
        let mut rng = Rng::new(seed);
        let n = 2 + rng.below(600);
        let perms = [
            lib(derangement(n, &mut Rng::new(seed)))?,
            lib(partner_indices(n, 256, true, &mut Rng::new(seed)))?,
        ];
        for perm in &perms {
            let mut hit = vec![false; n];
            for (i, &j) in perm.iter().enumerate() {
                ensure(i != j, format!("seed {seed}: fixed point {i}"))?;
                ensure(!hit[j], format!("seed {seed}: not a permutation"))?;
                hit[j] = true;
            }
        }
        if seed < 100 {
            let mu = Rng::new(seed + 1).normal_matrix(n.min(50), 3);
            let s = lib(shuffle_means(&mu, &mut Rng::new(seed), true))?;
            for i in 0..mu.rows() {
                ensure(s.row(i) != mu.row(i), format!("seed {seed}: shuffled row {i} kept in place"))?;
            }
        }
    }

    let p = lib(OcdParams::new(0.0, 0.12, 0.5, 50_000, true, 256))?;
    let b = lib(generate_ocd(&nets, &attrs.select_rows(&[0]), &[0], &p, &mut Rng::new(4)))?;
    let dev: Vec<f64> = (0..b.len())
        .flat_map(|i| (0..arch.latent_dim).map(move |j| (i, j)))
        .map(|(i, j)| b.z_oc.get(i, j) - b.mu_oc.get(i, j))
        .collect();
    let n = dev.len() as f64;
    let m = dev.iter().sum::<f64>() / n;
    let std = (dev.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n - 1.0)).sqrt();
    ensure(dev.len() >= 100_000, "too few draws")?;
    ensure((std - 0.5).abs() <= 0.5 * 0.02, format!("z_OC std {std}"))?;
    Ok(format!("midpoints exact, 1000 seeds fixed-point free, attributes pass through, z_OC std {std:.4} over {} draws", dev.len()))
}

fn desk_dataset() -> ocd_cvae::Result<Dataset> {
    make_synthetic(&SynthConfig {
        num_seen: 8,
        num_unseen: 4,
        samples_per_class: 100,
        d_x: 16,
        attr_dim: 8,
        ..Default::default()
    })
}

fn zsl_accuracy(ds: &Dataset, seed: u64, ocd: bool, obtl: bool, cl: bool) -> Result<f64, String> {
    let cfg = TrainConfig { seed, use_ocd: ocd, use_obtl: obtl, use_cl: cl, ..TrainConfig::default() };
    let model = lib(run_pipeline(ds, &cfg))?;
    Ok(lib(evaluate(&model, ds, Protocol::Zsl))?.score())
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn criterion6(accs: &[f64], dt: Duration) -> Outcome {
    let med = median(accs);
    let detail = format!("median {med:.2}% over seeds {accs:.2?}, {dt:.1?}");
    ensure(med >= 70.0, format!("{detail}: below 70%"))?;
    ensure(dt < Duration::from_secs(300), format!("{detail}: over 5 min"))?;
    Ok(detail)
}

fn criterion7(ds: &Dataset, full: &[f64]) -> Outcome {
    let cl = SEEDS.iter().map(|&s| zsl_accuracy(ds, s, false, false, true)).collect::<Result<Vec<_>, _>>()?;
    let ocd_cl = SEEDS.iter().map(|&s| zsl_accuracy(ds, s, true, false, true)).collect::<Result<Vec<_>, _>>()?;
    let (f, c, oc) = (median(full), median(&cl), median(&ocd_cl));
    let detail = format!("median OCD+OBTL+CL {f:.2}, OCD+CL {oc:.2} {ocd_cl:.2?}, CL {c:.2} {cl:.2?}");
    ensure(f >= oc && f >= c, detail.clone())?;
    Ok(detail)
}

fn criterion8(ds: &Dataset) -> Outcome {
    let cfg = TrainConfig { protocol: Protocol::Gzsl, ..TrainConfig::default() };
    let model = lib(run_pipeline(ds, &cfg))?;
    let split = lib(split_gzsl(ds, 0.8, cfg.seed))?;
    let g = lib(eval_gzsl(&model.nets, ds, &split))?;
    let h = lib(harmonic_mean(g.a, g.b))?;
    ensure(g.h.to_bits() == h.to_bits(), format!("H {} vs harmonic_mean {}", g.h, h))?;
    for &c in ds.seen() {
        let n_c = ds.labels().iter().filter(|&&l| l == c).count();
        let n_train = split.train_seen_idx.iter().filter(|&&i| ds.labels()[i] == c).count();
        let want = (0.8 * n_c as f64).floor() as usize;
        ensure(n_train == want, format!("class {c}: {n_train} train samples, want {want}"))?;
    }
    Ok(format!("A {:.2} B {:.2} H {:.2}, split counts floor(0.8 n_c) for {} seen classes", g.a, g.b, g.h, ds.seen().len()))
}

fn cli_ok(args: &[&str]) -> Result<(), String> {
    let mut v = vec!["ocd-cvae"];
    v.extend_from_slice(args);
    let code = cli::run(v);
    ensure(code == 0, format!("`{}` exited {code}", args.join(" ")))
}

fn criterion9(ds: &Dataset, dir: &Path) -> Outcome {
    let data = dir.join("desk");
    lib(save_dataset(ds, &data))?;
    let d = data.to_str().unwrap();
    let mut runs = Vec::new();
    for name in ["run_a", "run_b"] {
        let out = dir.join(name);
        let o = out.to_str().unwrap();
        cli_ok(&["train", "--data", d, "--out", o, "--seed", "3"])?;
        cli_ok(&["eval", "--data", d, "--checkpoint", out.join(cli::CHECKPOINT_FILE).to_str().unwrap(), "--out", o])?;
        runs.push(out);
    }
    let files = [cli::CHECKPOINT_FILE, cli::METRICS_CSV, cli::METRICS_JSON, cli::HISTORY_FILE, cli::CONFIG_ECHO];
    for f in files {
        let a = fs::read(runs[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(runs[1].join(f)).map_err(|e| e.to_string())?;
        ensure(!a.is_empty() && a == b, format!("{f} differs between runs"))?;
    }
    Ok(format!("{} identical across two train+eval runs", files.join(", ")))
}

fn criterion10(ds: &Dataset, dir: &Path) -> Outcome {
    let (a, b) = (dir.join("ds_a"), dir.join("ds_b"));
    lib(save_dataset(ds, &a))?;
    let back = lib(load_dataset(&a))?;
    ensure(&back == ds, "loaded dataset differs")?;
    lib(save_dataset(&back, &b))?;
    let mut files = 0;
    for entry in fs::read_dir(&a).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let x = fs::read(a.join(&name)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join(&name)).map_err(|e| e.to_string())?;
        ensure(x == y, format!("dataset file {name:?} differs after round-trip"))?;
        files += 1;
    }

    let mut cfg = TrainConfig::default();
    (cfg.hyper.epochs_phase1, cfg.hyper.epochs_phase2, cfg.hyper.epochs_phase3) = (2, 2, 1);
    cfg.hyper.ocd_samples_per_class = 50;
    let model = lib(run_pipeline(ds, &cfg))?;
    let path = dir.join("m.ocdm");
    lib(save_checkpoint(&model, &path))?;
    let loaded = lib(load_checkpoint(&path))?;
    let bytes = fs::read(&path).map_err(|e| e.to_string())?;
    ensure(checkpoint_bytes(&loaded) == bytes, "checkpoint bytes differ after reload")?;
    ensure(loaded.nets == model.nets && loaded.centers == model.centers && loaded.config == model.config, "checkpoint payload differs")?;
    Ok(format!("{files} dataset files and a {}-byte checkpoint byte-identical after reload", bytes.len()))
}

fn report(n: u32, outcome: &Outcome) -> bool {
    match outcome {
        Ok(msg) => {
            println!("PASS criterion {n}: {msg}");
            true
        }
        Err(msg) => {
            println!("FAIL criterion {n}: {msg}");
            false
        }
    }
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut ok = true;
    ok &= report(1, &criterion1());
    ok &= report(2, &criterion2());
    ok &= report(3, &criterion3());
    ok &= report(4, &criterion4());
    ok &= report(5, &criterion5());
    match desk_dataset() {
        Ok(ds) => {
            let t0 = Instant::now();
            let full = SEEDS.iter().map(|&s| zsl_accuracy(&ds, s, true, true, true)).collect::<Result<Vec<_>, _>>();
            let dt = t0.elapsed();
            ok &= report(6, &full.as_ref().map_err(Clone::clone).and_then(|f| criterion6(f, dt)));
            let c7 = full.and_then(|f| criterion7(&ds, &f));
            ok &= report(7, &c7);
            ok &= report(8, &criterion8(&ds));
            ok &= report(9, &criterion9(&ds, dir.path()));
            ok &= report(10, &criterion10(&ds, dir.path()));
        }
        Err(e) => {
            for n in 6..=10 {
                ok &= report(n, &Err(format!("desk dataset: {e}")));
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
