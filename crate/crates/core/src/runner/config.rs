//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored, keys are unique, and unknown
//! keys are rejected. [`RunConfig::to_config_string`] writes every key, so a
//! serialized config parses back to the same value.

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::datagen::{AppendixBConfig, DatasetKind, DEFAULT_TAU};
use crate::egm::{LatentPartition, ModelConfig, TreatmentKind};
use crate::error::{Error, Result};
use crate::estimators::{FactualMode, DEFAULT_GRID_POINTS, DEFAULT_GRID_QUANTILES};
use crate::metrics::MTEF_STEP;

/// Where continuous-treatment curves are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpec {
    /// Every observed treatment value, sorted. Costs one pass over the data
    /// per sample, so it is only practical for small `n`.
    Observed,
    /// `grid_points` evenly spaced points between two quantiles of the
    /// observed treatment.
    Quantile,
    /// `count` evenly spaced points from `lo` to `hi`, written `lo:hi:count`.
    Uniform { lo: f64, hi: f64, count: usize },
}

impl GridSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "observed" => return Ok(GridSpec::Observed),
            "quantile" => return Ok(GridSpec::Quantile),
            _ => {}
        }
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::config(format!(
                "grid must be observed, quantile or lo:hi:count, got {s:?}"
            )));
        }
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad grid bound {t:?}")))
        };
        let count = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::config(format!("bad grid count {:?}", parts[2])))?;
        let (lo, hi) = (num(parts[0])?, num(parts[1])?);
        crate::estimators::uniform_grid(lo, hi, count)?;
        Ok(GridSpec::Uniform { lo, hi, count })
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridSpec::Observed => f.write_str("observed"),
            GridSpec::Quantile => f.write_str("quantile"),
            GridSpec::Uniform { lo, hi, count } => write!(f, "{lo}:{hi}:{count}"),
        }
    }
}

/// Methods a benchmark can run. The `causalegm_no_*` variants switch off
/// the roundtrip module or one of its two extra loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    CausalEgm,
    NoRoundtrip,
    NoVGan,
    NoZRec,
    NoVGanNoZRec,
    Ols,
    Reg,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::CausalEgm,
        Method::NoRoundtrip,
        Method::NoVGan,
        Method::NoZRec,
        Method::NoVGanNoZRec,
        Method::Ols,
        Method::Reg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CausalEgm => "causalegm",
            Method::NoRoundtrip => "causalegm_no_rt",
            Method::NoVGan => "causalegm_no_vgan",
            Method::NoZRec => "causalegm_no_zrec",
            Method::NoVGanNoZRec => "causalegm_no_vgan_no_zrec",
            Method::Ols => "ols",
            Method::Reg => "reg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }

    /// Row label: the `(V-GAN, Z-Rec)` indicator pair for the loss
    /// ablations, a plain name otherwise.
    pub fn label(self) -> &'static str {
        match self {
            Method::CausalEgm => "CausalEGM (1,1)",
            Method::NoRoundtrip => "CausalEGM w/o RT",
            Method::NoVGan => "CausalEGM (0,1)",
            Method::NoZRec => "CausalEGM (1,0)",
            Method::NoVGanNoZRec => "CausalEGM (0,0)",
            Method::Ols => "OLS",
            Method::Reg => "REG",
        }
    }

    /// Parse a comma-separated list. `table4` expands to the four
    /// `(V-GAN, Z-Rec)` combinations.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for item in s.split(',').map(str::trim) {
            if item == "table4" {
                out.extend([
                    Method::CausalEgm,
                    Method::NoVGan,
                    Method::NoZRec,
                    Method::NoVGanNoZRec,
                ]);
            } else {
                out.push(Self::parse(item)?);
            }
        }
        Ok(out)
    }

    pub fn is_neural(self) -> bool {
        !matches!(self, Method::Ols | Method::Reg)
    }

    /// Apply this variant's switches to a model configuration.
    pub fn adjust(self, mut c: ModelConfig) -> ModelConfig {
        match self {
            Method::NoRoundtrip => c.use_roundtrip = false,
            Method::NoVGan => c.use_v_gan = false,
            Method::NoZRec => c.use_z_rec = false,
            Method::NoVGanNoZRec => {
                c.use_v_gan = false;
                c.use_z_rec = false;
            }
            _ => {}
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetKind,
    pub n: usize,
    pub p: usize,
    /// Effect size of the constant-effect generator.
    pub tau: f64,
    /// Read data from this CSV instead of simulating.
    pub data_path: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,

    /// `None` picks binary exactly when every treatment value is 0 or 1.
    pub treatment: Option<TreatmentKind>,
    /// `None` uses the treatment kind's default partition.
    pub latent_dims: Option<LatentPartition>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub outcome_hidden: Vec<usize>,
    pub treatment_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub critic_batch_norm: bool,
    pub leaky_slope: f64,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub critic_steps: usize,
    pub use_roundtrip: bool,
    pub use_v_gan: bool,
    pub use_z_rec: bool,

    pub grid: GridSpec,
    pub grid_points: usize,
    pub grid_lo_quantile: f64,
    pub grid_hi_quantile: f64,
    pub factual: FactualMode,
    pub pehe_rooted: bool,
    pub mtef_step: f64,
    pub methods: Vec<Method>,

    pub appendix_b: AppendixBConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::new(50, TreatmentKind::Continuous);
        Self {
            dataset: DatasetKind::Hirano,
            n: 10_000,
            p: 50,
            tau: DEFAULT_TAU,
            data_path: None,
            seeds: vec![0],
            out_dir: PathBuf::from("out"),
            treatment: None,
            latent_dims: None,
            encoder_hidden: model.encoder_hidden,
            decoder_hidden: model.decoder_hidden,
            outcome_hidden: model.outcome_hidden,
            treatment_hidden: model.treatment_hidden,
            critic_hidden: model.critic_hidden,
            critic_batch_norm: model.critic_batch_norm,
            leaky_slope: model.leaky_slope,
            lambda: model.lambda,
            lr: model.lr,
            batch_size: model.batch_size,
            iterations: model.iterations,
            critic_steps: model.critic_steps,
            use_roundtrip: model.use_roundtrip,
            use_v_gan: model.use_v_gan,
            use_z_rec: model.use_z_rec,
            grid: GridSpec::Quantile,
            grid_points: DEFAULT_GRID_POINTS,
            grid_lo_quantile: DEFAULT_GRID_QUANTILES.0,
            grid_hi_quantile: DEFAULT_GRID_QUANTILES.1,
            factual: FactualMode::default(),
            pehe_rooted: false,
            mtef_step: MTEF_STEP,
            methods: vec![Method::CausalEgm, Method::Ols, Method::Reg],
            appendix_b: AppendixBConfig::default(),
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::config(format!("{key}: cannot parse list item {t:?}")))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {}: expected key = value, got {raw:?}",
                    idx + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!(
                    "line {}: duplicate key {key}",
                    idx + 1
                )));
            }
            config
                .set(key, value)
                .map_err(|e| Error::config(format!("line {}: {}", idx + 1, strip(&e))))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let flag = |v: &str| -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::config(format!(
                    "{key}: expected true or false, got {v:?}"
                ))),
            }
        };
        let ab = &mut self.appendix_b;
        match key {
            "dataset" => self.dataset = DatasetKind::parse(value)?,
            "n" => self.n = parse_scalar(key, value)?,
            "p" => self.p = parse_scalar(key, value)?,
            "tau" => self.tau = parse_scalar(key, value)?,
            "data_path" => {
                self.data_path = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "seeds" => self.seeds = parse_list(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "treatment" => {
                self.treatment = match value {
                    "auto" => None,
                    other => Some(TreatmentKind::parse(other)?),
                }
            }
            "latent_dims" => {
                self.latent_dims = match value {
                    "auto" => None,
                    other => {
                        let q: Vec<usize> = parse_list(key, other)?;
                        if q.len() != 4 {
                            return Err(Error::config("latent_dims needs four sizes q0,q1,q2,q3"));
                        }
                        Some(LatentPartition::new(q[0], q[1], q[2], q[3])?)
                    }
                }
            }
            "encoder_hidden" => self.encoder_hidden = parse_list(key, value)?,
            "decoder_hidden" => self.decoder_hidden = parse_list(key, value)?,
            "outcome_hidden" => self.outcome_hidden = parse_list(key, value)?,
            "treatment_hidden" => self.treatment_hidden = parse_list(key, value)?,
            "critic_hidden" => self.critic_hidden = parse_list(key, value)?,
            "critic_batch_norm" => self.critic_batch_norm = flag(value)?,
            "leaky_slope" => self.leaky_slope = parse_scalar(key, value)?,
            "lambda" => self.lambda = parse_scalar(key, value)?,
            "lr" => self.lr = parse_scalar(key, value)?,
            "batch_size" => self.batch_size = parse_scalar(key, value)?,
            "iterations" => self.iterations = parse_scalar(key, value)?,
            "critic_steps" => self.critic_steps = parse_scalar(key, value)?,
            "use_roundtrip" => self.use_roundtrip = flag(value)?,
            "use_v_gan" => self.use_v_gan = flag(value)?,
            "use_z_rec" => self.use_z_rec = flag(value)?,
            "grid" => self.grid = GridSpec::parse(value)?,
            "grid_points" => self.grid_points = parse_scalar(key, value)?,
            "grid_lo_quantile" => self.grid_lo_quantile = parse_scalar(key, value)?,
            "grid_hi_quantile" => self.grid_hi_quantile = parse_scalar(key, value)?,
            "factual" => self.factual = FactualMode::parse(value)?,
            "pehe_rooted" => self.pehe_rooted = flag(value)?,
            "mtef_step" => self.mtef_step = parse_scalar(key, value)?,
            "methods" => self.methods = Method::parse_list(value)?,
            "appendix_b_n_train" => ab.n_train = parse_scalar(key, value)?,
            "appendix_b_n_holdout" => ab.n_holdout = parse_scalar(key, value)?,
            "appendix_b_iterations" => ab.iterations = parse_scalar(key, value)?,
            "appendix_b_batch_size" => ab.batch_size = parse_scalar(key, value)?,
            "appendix_b_lr" => ab.lr = parse_scalar(key, value)?,
            "appendix_b_hidden" => ab.hidden = parse_list(key, value)?,
            "appendix_b_eval_every" => ab.eval_every = parse_scalar(key, value)?,
            other => return Err(Error::config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must list at least one seed"));
        }
        if self.data_path.is_none() && self.p < self.dataset.min_p() {
            return Err(Error::config(format!(
                "{} data needs p >= {}, got {}",
                self.dataset.as_str(),
                self.dataset.min_p(),
                self.p
            )));
        }
        if self.n == 0 {
            return Err(Error::config("n must be >= 1"));
        }
        if self.grid_points == 0 {
            return Err(Error::config("grid_points must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.grid_lo_quantile)
            || !(0.0..=1.0).contains(&self.grid_hi_quantile)
            || self.grid_lo_quantile > self.grid_hi_quantile
        {
            return Err(Error::config(
                "grid quantiles must satisfy 0 <= lo <= hi <= 1",
            ));
        }
        if !(self.mtef_step > 0.0) {
            return Err(Error::config("mtef_step must be > 0"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods must name at least one method"));
        }
        self.model_config(self.p, TreatmentKind::Continuous, 0)
            .validate()?;
        self.appendix_b.validate()?;
        Ok(())
    }

    /// Model configuration for `p` covariates and the given treatment kind.
    pub fn model_config(&self, p: usize, kind: TreatmentKind, seed: u64) -> ModelConfig {
        let mut c = ModelConfig::new(p, kind);
        c.partition = self.latent_dims.unwrap_or_else(|| kind.default_partition());
        c.encoder_hidden = self.encoder_hidden.clone();
        c.decoder_hidden = self.decoder_hidden.clone();
        c.outcome_hidden = self.outcome_hidden.clone();
        c.treatment_hidden = self.treatment_hidden.clone();
        c.critic_hidden = self.critic_hidden.clone();
        c.critic_batch_norm = self.critic_batch_norm;
        c.leaky_slope = self.leaky_slope;
        c.lambda = self.lambda;
        c.lr = self.lr;
        c.batch_size = self.batch_size;
        c.iterations = self.iterations;
        c.critic_steps = self.critic_steps;
        c.use_roundtrip = self.use_roundtrip;
        c.use_v_gan = self.use_v_gan;
        c.use_z_rec = self.use_z_rec;
        c.seed = seed;
        c
    }

    /// Every key with its current value, one per line, in a fixed order.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let ab = &self.appendix_b;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("dataset", self.dataset.as_str().into());
        kv("n", self.n.to_string());
        kv("p", self.p.to_string());
        kv("tau", self.tau.to_string());
        kv(
            "data_path",
            self.data_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("seeds", join(&self.seeds));
        kv("out_dir", self.out_dir.display().to_string());
        kv(
            "treatment",
            self.treatment.map_or("auto", TreatmentKind::as_str).into(),
        );
        kv(
            "latent_dims",
            self.latent_dims
                .map(|q| join(&[q.q0, q.q1, q.q2, q.q3]))
                .unwrap_or_else(|| "auto".into()),
        );
        kv("encoder_hidden", join(&self.encoder_hidden));
        kv("decoder_hidden", join(&self.decoder_hidden));
        kv("outcome_hidden", join(&self.outcome_hidden));
        kv("treatment_hidden", join(&self.treatment_hidden));
        kv("critic_hidden", join(&self.critic_hidden));
        kv("critic_batch_norm", self.critic_batch_norm.to_string());
        kv("leaky_slope", self.leaky_slope.to_string());
        kv("lambda", self.lambda.to_string());
        kv("lr", self.lr.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("iterations", self.iterations.to_string());
        kv("critic_steps", self.critic_steps.to_string());
        kv("use_roundtrip", self.use_roundtrip.to_string());
        kv("use_v_gan", self.use_v_gan.to_string());
        kv("use_z_rec", self.use_z_rec.to_string());
        kv("grid", self.grid.to_string());
        kv("grid_points", self.grid_points.to_string());
        kv("grid_lo_quantile", self.grid_lo_quantile.to_string());
        kv("grid_hi_quantile", self.grid_hi_quantile.to_string());
        kv("factual", self.factual.as_str().into());
        kv("pehe_rooted", self.pehe_rooted.to_string());
        kv("mtef_step", self.mtef_step.to_string());
        kv(
            "methods",
            self.methods
                .iter()
                .map(|m| m.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("appendix_b_n_train", ab.n_train.to_string());
        kv("appendix_b_n_holdout", ab.n_holdout.to_string());
        kv("appendix_b_iterations", ab.iterations.to_string());
        kv("appendix_b_batch_size", ab.batch_size.to_string());
        kv("appendix_b_lr", ab.lr.to_string());
        kv("appendix_b_hidden", join(&ab.hidden));
        kv("appendix_b_eval_every", ab.eval_every.to_string());
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical serialization,
    /// leaving out `out_dir` so that moving outputs keeps the hash.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_config_string()
            .lines()
            .filter(|l| !l.starts_with("out_dir "))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
