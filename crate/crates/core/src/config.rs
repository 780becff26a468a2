//! Training and experiment configuration with a flat `key = value` text
//! format. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::OptimizerKind;
use crate::sampler::Strategy;
use crate::synthetic::SyntheticConfig;

/// What the aggregation consumes as the K-hot gate during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KHotMode {
    /// The summed soft draws; gradients reach the sampler.
    Soft,
    /// Hard 0/1 forward, soft gradient backward.
    StraightThrough,
}

/// Normalization of the attention coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Denominator over every neighbor, numerator gated by the K-hot value.
    Full,
    /// Both numerator and denominator gated.
    Selected,
}

/// Which score the pairwise loss compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BprInput {
    /// `ê_uᵀ ê_i`
    Raw,
    /// `σ(ê_uᵀ ê_i)`
    Sigmoid,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(KHotMode, "khot mode", { "soft" => KHotMode::Soft, "straight_through" => KHotMode::StraightThrough });
keyword_enum!(AttentionMode, "attention mode", { "full" => AttentionMode::Full, "selected" => AttentionMode::Selected });
keyword_enum!(BprInput, "bpr input", { "raw" => BprInput::Raw, "sigmoid" => BprInput::Sigmoid });
keyword_enum!(OptimizerKind, "optimizer", { "sgd" => OptimizerKind::Sgd, "adam" => OptimizerKind::Adam });

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    /// Neighbor sample size.
    pub k: usize,
    pub tau0: f64,
    pub tau_min: f64,
    pub lr: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub strategy: Strategy,
    pub optimizer: OptimizerKind,
    pub khot: KHotMode,
    pub attention: AttentionMode,
    pub bpr_input: BprInput,
    /// Aggregation depth; only 1 is supported.
    pub depth: usize,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            k: 8,
            tau0: 1.0,
            tau_min: 0.1,
            lr: 0.01,
            lambda: 1e-4,
            epochs: 30,
            batch_size: 256,
            seed: 0,
            strategy: Strategy::Gs,
            optimizer: OptimizerKind::Sgd,
            khot: KHotMode::Soft,
            attention: AttentionMode::Full,
            bpr_input: BprInput::Raw,
            depth: 1,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.tau0 > 0.0 && self.tau_min > 0.0 && self.tau_min <= self.tau0) {
            return bad(format!(
                "temperatures must satisfy 0 < tau_min <= tau0 (got {}, {})",
                self.tau_min, self.tau0
            ));
        }
        if !(self.lambda >= 0.0) || !(self.lr >= 0.0) {
            return bad("lr and lambda must be non-negative".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.depth != 1 {
            return bad(format!("depth {} unsupported; only 1 aggregation layer", self.depth));
        }
        if !(self.init_scale > 0.0) {
            return bad("init_scale must be > 0".into());
        }
        Ok(())
    }

    /// Exponential decay from `tau0` at epoch 0 to `tau_min` at the last
    /// epoch.
    pub fn tau_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.tau0;
        }
        let frac = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        (self.tau0 * (self.tau_min / self.tau0).powf(frac)).max(self.tau_min)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "dim" => self.dim = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "tau0" => self.tau0 = parse(key, value)?,
            "tau_min" => self.tau_min = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "strategy" => self.strategy = value.parse()?,
            "optimizer" => self.optimizer = value.parse()?,
            "khot" => self.khot = value.parse()?,
            "attention" => self.attention = value.parse()?,
            "bpr_input" => self.bpr_input = value.parse()?,
            "depth" => self.depth = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    fn write_kv(&self, out: &mut String) {
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(out, "{k} = {v}").expect("write to String");
        };
        kv("dim", &self.dim);
        kv("k", &self.k);
        kv("tau0", &self.tau0);
        kv("tau_min", &self.tau_min);
        kv("lr", &self.lr);
        kv("lambda", &self.lambda);
        kv("epochs", &self.epochs);
        kv("batch_size", &self.batch_size);
        kv("seed", &self.seed);
        kv("strategy", &self.strategy);
        kv("optimizer", &self.optimizer);
        kv("khot", &self.khot);
        kv("attention", &self.attention);
        kv("bpr_input", &self.bpr_input);
        kv("depth", &self.depth);
        kv("init_scale", &self.init_scale);
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        self.write_kv(&mut s);
        s
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_lines(text)? {
            if !cfg.set(&key, &value)? {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", idx + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

/// Everything a CLI command needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub triples: Option<PathBuf>,
    pub interactions: Option<PathBuf>,
    pub workdir: PathBuf,
    pub run_id: String,
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub eval_ns: Vec<usize>,
    /// Evaluate at most this many test users (0 = all).
    pub eval_users: usize,
    pub degree_cap: Option<usize>,
    pub ablate_strategies: Vec<Strategy>,
    pub ablate_ks: Vec<usize>,
    /// Number of training seeds per ablation cell, starting at `seed`.
    pub ablate_seeds: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            triples: None,
            interactions: None,
            workdir: PathBuf::from("runs"),
            run_id: "default".into(),
            train: TrainConfig::default(),
            test_fraction: 0.2,
            eval_ns: vec![5, 10, 20],
            eval_users: 0,
            degree_cap: None,
            ablate_strategies: Strategy::ALL.to_vec(),
            ablate_ks: vec![2, 4, 8, 16, 32],
            ablate_seeds: 3,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.train.set(key, value)? || self.synthetic.set(key, value)? {
            return Ok(());
        }
        let opt_path = |v: &str| (!v.is_empty() && v != "none").then(|| PathBuf::from(v));
        match key {
            "triples" => self.triples = opt_path(value),
            "interactions" => self.interactions = opt_path(value),
            "workdir" => self.workdir = PathBuf::from(value),
            "run_id" => {
                if value.is_empty() || value.contains(['/', '\\']) {
                    return Err(Error::Config(format!("invalid run_id `{value}`")));
                }
                self.run_id = value.to_owned()
            }
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "eval_ns" => self.eval_ns = parse_list(key, value)?,
            "eval_users" => self.eval_users = parse(key, value)?,
            "degree_cap" => {
                self.degree_cap = match value {
                    "none" | "0" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "ablate_strategies" => self.ablate_strategies = parse_list(key, value)?,
            "ablate_ks" => self.ablate_ks = parse_list(key, value)?,
            "ablate_seeds" => self.ablate_seeds = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn set_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_lines(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synthetic.validate()?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.eval_ns.is_empty() || self.eval_ns.contains(&0) {
            return Err(Error::Config("eval_ns must be non-empty positive integers".into()));
        }
        if self.ablate_ks.contains(&0) || self.ablate_seeds == 0 {
            return Err(Error::Config("ablate_ks must be positive and ablate_seeds ≥ 1".into()));
        }
        Ok(())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.workdir.join(&self.run_id)
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_owned(), |p| p.display().to_string());
        writeln!(s, "triples = {}", path(&self.triples)).unwrap();
        writeln!(s, "interactions = {}", path(&self.interactions)).unwrap();
        writeln!(s, "workdir = {}", self.workdir.display()).unwrap();
        writeln!(s, "run_id = {}", self.run_id).unwrap();
        self.train.write_kv(&mut s);
        writeln!(s, "test_fraction = {}", self.test_fraction).unwrap();
        writeln!(s, "eval_ns = {}", join(&self.eval_ns)).unwrap();
        writeln!(s, "eval_users = {}", self.eval_users).unwrap();
        writeln!(s, "degree_cap = {}", self.degree_cap.map_or("none".into(), |c| c.to_string())).unwrap();
        writeln!(s, "ablate_strategies = {}", join(&self.ablate_strategies)).unwrap();
        writeln!(s, "ablate_ks = {}", join(&self.ablate_ks)).unwrap();
        writeln!(s, "ablate_seeds = {}", self.ablate_seeds).unwrap();
        self.synthetic.write_kv(&mut s);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set_override("strategy=uniform").unwrap();
        cfg.set_override("eval_ns = 1,3").unwrap();
        cfg.set_override("degree_cap=12").unwrap();
        cfg.set_override("triples=data/kg.tsv").unwrap();
        cfg.set_override("lr=0.125").unwrap();
        cfg.set_override("attention=selected").unwrap();
        let text = cfg.to_kv_text();
        let back = ExperimentConfig::from_kv_text(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_kv_text(), text);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("k", "x").is_err());
        assert!(cfg.set("strategy", "random").is_err());
        assert!(cfg.set_override("k").is_err());
        cfg.set("tau0", "0").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.set("depth", "2").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn comments_and_blanks() {
        let cfg = ExperimentConfig::from_kv_text("# c\n\n k = 3 \n").unwrap();
        assert_eq!(cfg.train.k, 3);
    }

    #[test]
    fn tau_schedule_endpoints() {
        let cfg = TrainConfig {
            epochs: 11,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.tau_at(0), 1.0);
        assert!((cfg.tau_at(10) - 0.1).abs() < 1e-12);
        assert!((cfg.tau_at(5) - 0.1f64.sqrt()).abs() < 1e-12);
        assert!((cfg.tau_at(50) - 0.1).abs() < 1e-12);
    }
}
