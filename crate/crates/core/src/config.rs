//! Hyperparameters, training configuration and their `key = value` text form.
//!
//! The text form is what every run echoes into its output directory and what
//! `--config` files contain: one `key = value` per line, `#` starts a comment,
//! unknown keys are rejected.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::MiningMode;
use crate::numgrad::AdamConfig;

/// Scalar knobs of the objective, the OCD sampler and the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda_c: f64,
    pub lambda_r: f64,
    pub lambda_reg: f64,
    pub batch_size: usize,
    pub mu_hp: f64,
    pub sigma_hp: f64,
    pub sigma_prime_hp: f64,
    /// Triplet margin.
    pub alpha: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub ocd_samples_per_class: usize,
    pub forbid_fixed_points: bool,
    pub mining: MiningMode,
    /// Center update rate γ_ct.
    pub center_lr: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub epochs_phase3: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Hyperparams {
            lambda_c: 0.1,
            lambda_r: 0.1,
            lambda_reg: 0.1,
            batch_size: 256,
            mu_hp: 0.0,
            sigma_hp: 0.12,
            sigma_prime_hp: 0.5,
            alpha: 0.4,
            latent_dim: 100,
            hidden: 128,
            ocd_samples_per_class: 500,
            forbid_fixed_points: true,
            mining: MiningMode::HardestNegative,
            center_lr: 0.5,
            epochs_phase1: 200,
            epochs_phase2: 200,
            epochs_phase3: 50,
            lr: 3e-3,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
        }
    }
}

impl Hyperparams {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_owned()));
        if [self.lambda_c, self.lambda_r, self.lambda_reg].iter().any(|l| !(*l >= 0.0)) {
            return bad("lambda weights must be >= 0");
        }
        if !(self.sigma_hp >= 0.0) || !(self.sigma_prime_hp > self.sigma_hp) {
            return bad("need 0 <= sigma_hp < sigma_prime_hp");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be > 0");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if self.latent_dim == 0 || self.hidden == 0 || self.ocd_samples_per_class == 0 {
            return bad("latent_dim, hidden and ocd_samples_per_class must be >= 1");
        }
        if !(self.center_lr > 0.0 && self.center_lr <= 1.0) {
            return bad("center_lr must lie in (0, 1]");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if !self.mu_hp.is_finite() {
            return bad("mu_hp must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Conventional zero-shot: unseen-only candidates.
    Zsl,
    /// Generalized: seen ∪ unseen candidates, 80/20 seen split.
    Gzsl,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Zsl => "zsl",
            Protocol::Gzsl => "gzsl",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsl" => Ok(Protocol::Zsl),
            "gzsl" => Ok(Protocol::Gzsl),
            _ => Err(Error::Parameter(format!("unknown protocol `{s}` (zsl|gzsl)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hyper: Hyperparams,
    pub use_ocd: bool,
    pub use_obtl: bool,
    pub use_cl: bool,
    pub protocol: Protocol,
    pub split_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hyper: Hyperparams::default(),
            use_ocd: true,
            use_obtl: true,
            use_cl: true,
            protocol: Protocol::Zsl,
            split_ratio: 0.8,
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Parameter("split_ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let h = &mut self.hyper;
        match key {
            "lambda_c" => h.lambda_c = parse(key, value)?,
            "lambda_r" => h.lambda_r = parse(key, value)?,
            "lambda_reg" => h.lambda_reg = parse(key, value)?,
            "batch_size" => h.batch_size = parse(key, value)?,
            "mu_hp" => h.mu_hp = parse(key, value)?,
            "sigma_hp" => h.sigma_hp = parse(key, value)?,
            "sigma_prime_hp" => h.sigma_prime_hp = parse(key, value)?,
            "alpha" => h.alpha = parse(key, value)?,
            "latent_dim" => h.latent_dim = parse(key, value)?,
            "hidden" => h.hidden = parse(key, value)?,
            "ocd_samples_per_class" => h.ocd_samples_per_class = parse(key, value)?,
            "forbid_fixed_points" => h.forbid_fixed_points = parse(key, value)?,
            "mining" => h.mining = parse(key, value)?,
            "center_lr" => h.center_lr = parse(key, value)?,
            "epochs_phase1" => h.epochs_phase1 = parse(key, value)?,
            "epochs_phase2" => h.epochs_phase2 = parse(key, value)?,
            "epochs_phase3" => h.epochs_phase3 = parse(key, value)?,
            "lr" => h.lr = parse(key, value)?,
            "beta1" => h.beta1 = parse(key, value)?,
            "beta2" => h.beta2 = parse(key, value)?,
            "adam_eps" => h.adam_eps = parse(key, value)?,
            "use_ocd" => self.use_ocd = parse(key, value)?,
            "use_obtl" => self.use_obtl = parse(key, value)?,
            "use_cl" => self.use_cl = parse(key, value)?,
            "protocol" => self.protocol = value.parse()?,
            "split_ratio" => self.split_ratio = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Parameter(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Parameter(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Canonical text form; `from_text(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let h = &self.hyper;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("protocol", &self.protocol);
        kv("seed", &self.seed);
        kv("split_ratio", &self.split_ratio);
        kv("use_ocd", &self.use_ocd);
        kv("use_obtl", &self.use_obtl);
        kv("use_cl", &self.use_cl);
        kv("lambda_c", &h.lambda_c);
        kv("lambda_r", &h.lambda_r);
        kv("lambda_reg", &h.lambda_reg);
        kv("batch_size", &h.batch_size);
        kv("mu_hp", &h.mu_hp);
        kv("sigma_hp", &h.sigma_hp);
        kv("sigma_prime_hp", &h.sigma_prime_hp);
        kv("alpha", &h.alpha);
        kv("latent_dim", &h.latent_dim);
        kv("hidden", &h.hidden);
        kv("ocd_samples_per_class", &h.ocd_samples_per_class);
        kv("forbid_fixed_points", &h.forbid_fixed_points);
        kv("mining", &h.mining);
        kv("center_lr", &h.center_lr);
        kv("epochs_phase1", &h.epochs_phase1);
        kv("epochs_phase2", &h.epochs_phase2);
        kv("epochs_phase3", &h.epochs_phase3);
        kv("lr", &h.lr);
        kv("beta1", &h.beta1);
        kv("beta2", &h.beta2);
        kv("adam_eps", &h.adam_eps);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_values() {
        let h = Hyperparams::default();
        assert_eq!((h.lambda_c, h.lambda_r, h.lambda_reg), (0.1, 0.1, 0.1));
        assert_eq!(h.batch_size, 256);
        assert_eq!((h.mu_hp, h.sigma_hp, h.sigma_prime_hp), (0.0, 0.12, 0.5));
        assert_eq!(h.alpha, 0.4);
        assert_eq!(h.latent_dim, 100);
        assert_eq!(h.ocd_samples_per_class, 500);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::default();
        c.set("sigma_prime_hp", "0.35").unwrap();
        c.set("use_ocd", "false").unwrap();
        c.set("protocol", "gzsl").unwrap();
        c.set("mining", "all_valid").unwrap();
        assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_key_and_comments() {
        assert!(TrainConfig::from_text("bogus = 1\n").is_err());
        assert!(TrainConfig::from_text("alpha 0.3\n").is_err());
        let c = TrainConfig::from_text("# comment\nalpha = 0.3 # margin\n\n").unwrap();
        assert_eq!(c.hyper.alpha, 0.3);
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        c.hyper.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.hyper.sigma_prime_hp = 0.0;
        assert!(c.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
