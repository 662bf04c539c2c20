//! Command-line front end.
//!
//! Exit codes: 0 ok, 2 usage or invalid parameter, 3 I/O or file format,
//! 4 training failure, 5 protocol or data mismatch. Every command writes a
//! `config.txt` echo of its resolved settings into its output directory.
//! Settings resolve as flag > `--config` file > default.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{Protocol, TrainConfig};
use crate::dataset::{load_dataset, make_synthetic, save_dataset, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::{ablation_csv, evaluate, report_csv, report_json, run_ablation, run_sweep, sweep_csv, sweep_svg, SweepParam};
use crate::numgrad::Rng;
use crate::ocd::{generate_ocd, OcdParams};
use crate::train::{history_csv, run_pipeline};

pub const CONFIG_ECHO: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ocdm";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.jsonl";

#[derive(Debug, Parser)]
#[command(name = "ocd-cvae", version, about = "Zero-shot learning with over-complete distribution sampling")]
pub struct Cli {
    /// Seed for data generation, splitting and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Run the three training phases and save a checkpoint.
    Train(TrainArgs),
    /// Dump OCD samples of a checkpoint in the dataset format.
    GenerateOcd(GenerateArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Train and score the five ablation settings.
    Ablate(TrainArgs),
    /// Train and score one model per parameter value.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub seen: usize,
    #[arg(long, default_value_t = 4)]
    pub unseen: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub dx: usize,
    #[arg(long, default_value_t = 8)]
    pub attr: usize,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// `zsl` or `gzsl`.
    #[arg(long)]
    pub protocol: Option<Protocol>,
    /// Plain decoder samples instead of OCD samples in phase 3.
    #[arg(long)]
    pub no_ocd: bool,
    /// Drop the online batch triplet loss.
    #[arg(long)]
    pub no_obtl: bool,
    /// Drop the center loss.
    #[arg(long)]
    pub no_cl: bool,
    /// Overrides any configuration key, e.g. `--set sigma_prime_hp=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Class ids to synthesize; defaults to the classes used in training.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to the protocol the checkpoint was trained for.
    #[arg(long)]
    pub protocol: Option<Protocol>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value = "sigma_prime_hp")]
    pub param: SweepParam,
    /// Comma-separated values; defaults to the parameter's standard grid.
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Numeric(_) | Error::State(_) => 4,
        Error::Data(_) | Error::Dimension { .. } => 5,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Messages go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            print!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .ok_or_else(|| Error::Parameter("--out is required".into()))?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn resolve_config(cli: &Cli, args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text)?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("`--set {kv}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(p) = args.protocol {
        cfg.protocol = p;
    }
    cfg.use_ocd &= !args.no_ocd;
    cfg.use_obtl &= !args.no_obtl;
    cfg.use_cl &= !args.no_cl;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::GenerateOcd(a) => generate(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Ablate(a) => ablate(cli, a),
        Command::Sweep(a) => sweep(cli, a),
    }
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<String> {
    if cli.config.is_some() {
        return Err(Error::Parameter("synth takes flags only, not --config".into()));
    }
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        num_seen: a.seen,
        num_unseen: a.unseen,
        samples_per_class: a.per_class,
        d_x: a.dx,
        attr_dim: a.attr,
        class_spread: a.spread.unwrap_or(d.class_spread),
        class_separation: a.separation.unwrap_or(d.class_separation),
        attribute_noise: a.noise.unwrap_or(d.attribute_noise),
        seed: cli.seed.unwrap_or(d.seed),
    };
    let ds = make_synthetic(&cfg)?;
    let dir = out_dir(cli)?;
    save_dataset(&ds, &dir)?;
    write(&dir.join(CONFIG_ECHO), synth_echo(&cfg))?;
    Ok(format!(
        "N = {}, C = {}, S/U = {}/{}, d_x = {}, L = {}\n",
        ds.num_samples(),
        ds.num_classes(),
        ds.seen().len(),
        ds.unseen().len(),
        ds.feature_dim(),
        ds.attr_dim()
    ))
}

fn synth_echo(c: &SynthConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "num_seen = {}", c.num_seen);
    let _ = writeln!(s, "num_unseen = {}", c.num_unseen);
    let _ = writeln!(s, "samples_per_class = {}", c.samples_per_class);
    let _ = writeln!(s, "d_x = {}", c.d_x);
    let _ = writeln!(s, "attr_dim = {}", c.attr_dim);
    let _ = writeln!(s, "class_spread = {}", c.class_spread);
    let _ = writeln!(s, "class_separation = {}", c.class_separation);
    let _ = writeln!(s, "attribute_noise = {}", c.attribute_noise);
    let _ = writeln!(s, "seed = {}", c.seed);
    s
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<String> {
    let cfg = resolve_config(cli, a)?;
    let ds = load_dataset(&a.data)?;
    let dir = out_dir(cli)?;
    write(&dir.join(CONFIG_ECHO), cfg.to_text())?;
    let model = run_pipeline(&ds, &cfg)?;
    save_checkpoint(&model, dir.join(CHECKPOINT_FILE))?;
    write(&dir.join(HISTORY_FILE), history_csv(&model.history))?;
    let last = model.history.last().map_or(0.0, |r| r.total);
    Ok(format!(
        "trained {} epochs, final loss {last:.6}, checkpoint {}\n",
        model.history.len(),
        dir.join(CHECKPOINT_FILE).display()
    ))
}

fn generate(cli: &Cli, a: &GenerateArgs) -> Result<String> {
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let classes = if a.classes.is_empty() {
        crate::train::ocd_classes(&ds, model.config.protocol)
    } else {
        a.classes.clone()
    };
    if let Some(&bad) = classes.iter().find(|&&c| c >= ds.num_classes()) {
        return Err(Error::Data(format!("class {bad} not in dataset")));
    }
    let mut hyper = model.config.hyper.clone();
    if let Some(n) = a.per_class {
        hyper.ocd_samples_per_class = n;
    }
    let seed = cli.seed.unwrap_or(model.config.seed);
    let params = OcdParams::from_hyper(&hyper)?;
    let attrs = ds.attributes().select_rows(&classes);
    let batch = generate_ocd(&model.nets, &attrs, &classes, &params, &mut Rng::new(seed))?;
    let out = Dataset::new(
        batch.x_oc,
        batch.labels,
        ds.attributes().clone(),
        ds.seen().to_vec(),
        ds.unseen().to_vec(),
    )?;
    let dir = out_dir(cli)?;
    save_dataset(&out, &dir)?;
    let mut echo = model.config.to_text();
    let _ = writeln!(echo, "# generate-ocd seed = {seed}, samples_per_class = {}", hyper.ocd_samples_per_class);
    write(&dir.join(CONFIG_ECHO), echo)?;
    Ok(format!("{} OCD samples over {} classes\n", out.num_samples(), classes.len()))
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<String> {
    let model = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    let protocol = a.protocol.unwrap_or(model.config.protocol);
    if protocol != model.config.protocol {
        return Err(Error::Data(format!(
            "checkpoint was trained for {}, not {protocol}",
            model.config.protocol
        )));
    }
    let report = evaluate(&model, &ds, protocol)?;
    let dir = out_dir(cli)?;
    write(&dir.join(CONFIG_ECHO), model.config.to_text())?;
    write(&dir.join(METRICS_CSV), report_csv(&report, model.config.seed))?;
    write(&dir.join(METRICS_JSON), report_json(&report, model.config.seed))?;
    Ok(match &report {
        crate::eval::EvalReport::Zsl(m) => format!("zsl mean per-class accuracy {:.1}\n", m.mean),
        crate::eval::EvalReport::Gzsl(g) => format!("gzsl A {:.1} B {:.1} H {:.1}\n", g.a, g.b, g.h),
    })
}

fn ablate(cli: &Cli, a: &TrainArgs) -> Result<String> {
    let cfg = resolve_config(cli, a)?;
    let ds = load_dataset(&a.data)?;
    let dir = out_dir(cli)?;
    write(&dir.join(CONFIG_ECHO), cfg.to_text())?;
    let rows = run_ablation(&ds, &cfg)?;
    let csv = ablation_csv(&rows);
    write(&dir.join("ablation.csv"), &csv)?;
    Ok(csv)
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<String> {
    let cfg = resolve_config(cli, &a.train)?;
    let ds = load_dataset(&a.train.data)?;
    let values = if a.values.is_empty() { a.param.default_grid() } else { a.values.clone() };
    let dir = out_dir(cli)?;
    let mut echo = cfg.to_text();
    let _ = writeln!(echo, "# sweep {} over {values:?}", a.param);
    write(&dir.join(CONFIG_ECHO), echo)?;
    let rows = run_sweep(&ds, &cfg, a.param, &values)?;
    let csv = sweep_csv(a.param, &rows);
    write(&dir.join("sweep.csv"), &csv)?;
    write(&dir.join("sweep.svg"), sweep_svg(a.param, &rows))?;
    Ok(csv)
}
