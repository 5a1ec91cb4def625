//! Experiment configuration: a flat key-value text format with dotted
//! section prefixes (`model.`, `data.`, `loss.`, `augment.`, `run.`).
//! Unknown keys are hard errors so typos cannot silently skew sweeps.

use crate::CliError;
use moda_core::augment::{AugmentKind, AugmentSpec};
use moda_core::data::{DomainShift, ShiftSpec};
use moda_core::divergence::ProbeConfig;
use moda_core::moda::ModelArch;
use moda_core::nn::OptimizerKind;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    ModaFm,
    Moda,
    Fm,
    UniformAlphaAdversarial,
    SourceOnly,
    FullySupervisedOracle,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "moda_fm" => Ok(Mode::ModaFm),
            "moda" => Ok(Mode::Moda),
            "fm" => Ok(Mode::Fm),
            "uniform_alpha_adversarial" => Ok(Mode::UniformAlphaAdversarial),
            "source_only" => Ok(Mode::SourceOnly),
            "fully_supervised_oracle" => Ok(Mode::FullySupervisedOracle),
            other => Err(CliError::Config(format!("unknown mode {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::ModaFm => "moda_fm",
            Mode::Moda => "moda",
            Mode::Fm => "fm",
            Mode::UniformAlphaAdversarial => "uniform_alpha_adversarial",
            Mode::SourceOnly => "source_only",
            Mode::FullySupervisedOracle => "fully_supervised_oracle",
        }
    }

    /// Structural switches per mode: whether alpha is trained, and whether
    /// the discriminator / consistency terms carry weight.
    pub fn flags(&self) -> ModeFlags {
        match self {
            Mode::ModaFm => ModeFlags { learn_alpha: true, use_disc: true, use_cons: true },
            Mode::Moda => ModeFlags { learn_alpha: true, use_disc: true, use_cons: false },
            Mode::Fm => ModeFlags { learn_alpha: false, use_disc: false, use_cons: true },
            Mode::UniformAlphaAdversarial => {
                ModeFlags { learn_alpha: false, use_disc: true, use_cons: false }
            }
            Mode::SourceOnly | Mode::FullySupervisedOracle => {
                ModeFlags { learn_alpha: false, use_disc: false, use_cons: false }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModeFlags {
    pub learn_alpha: bool,
    pub use_disc: bool,
    pub use_cons: bool,
}

/// Where training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataConfig {
    Synthetic(ShiftSpec),
    Csv {
        source_paths: Vec<PathBuf>,
        source_test_paths: Vec<PathBuf>,
        target_path: PathBuf,
        target_test_path: Option<PathBuf>,
    },
}

/// Named synthetic presets exposed through `data.preset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    ZeroShift,
    CovariateDefault,
    LabelShiftDefault,
    Collapse,
    Custom,
    Csv,
}

impl Preset {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "zero_shift" => Ok(Preset::ZeroShift),
            "covariate_default" => Ok(Preset::CovariateDefault),
            "label_shift_default" => Ok(Preset::LabelShiftDefault),
            "collapse" => Ok(Preset::Collapse),
            "custom" => Ok(Preset::Custom),
            "csv" => Ok(Preset::Csv),
            other => Err(CliError::Config(format!("unknown data.preset {other:?}"))),
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Preset::ZeroShift => "zero_shift",
            Preset::CovariateDefault => "covariate_default",
            Preset::LabelShiftDefault => "label_shift_default",
            Preset::Collapse => "collapse",
            Preset::Custom => "custom",
            Preset::Csv => "csv",
        }
    }
}

/// All hyperparameters of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub mu_d: f64,
    pub mu_s: f64,
    pub mu_c: f64,
    pub tau: f64,
    pub grl_lambda: f64,
    pub arch: ModelArch,
    pub augment: AugmentSpec,
    pub preset: Preset,
    pub data: DataConfig,
    pub transductive: bool,
    pub vc_dim: usize,
    pub delta: f64,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::ModaFm,
            seed: 17,
            epochs: 100,
            batch_size: 8,
            optimizer: OptimizerKind::AdaDelta,
            learning_rate: 1.0,
            mu_d: 0.2,
            mu_s: 0.1,
            mu_c: 0.5,
            tau: 0.9,
            grl_lambda: 1.0,
            arch: ModelArch::default(),
            augment: AugmentSpec::default(),
            preset: Preset::CovariateDefault,
            data: DataConfig::Synthetic(ShiftSpec::covariate_default(2000)),
            transductive: false,
            vc_dim: 5,
            delta: 0.05,
            probe: ProbeConfig::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| CliError::Config(format!("invalid value {v:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!("invalid boolean {v:?} for {key}"))),
    }
}

fn fmt_list<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| CliError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "line {}: expected key = value, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("duplicate key {key}")));
            }
        }
        Self::from_map(map)
    }

    fn from_map(mut map: BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut take = |key: &str| map.remove(key);

        if let Some(v) = take("run.mode") {
            cfg.mode = Mode::parse(&v)?;
        }
        if let Some(v) = take("run.seed") {
            cfg.seed = parse_num("run.seed", &v)?;
        }
        if let Some(v) = take("run.epochs") {
            cfg.epochs = parse_num("run.epochs", &v)?;
        }
        if let Some(v) = take("run.batch_size") {
            cfg.batch_size = parse_num("run.batch_size", &v)?;
        }
        if let Some(v) = take("run.optimizer") {
            cfg.optimizer = match v.as_str() {
                "adadelta" => OptimizerKind::AdaDelta,
                "sgd" => OptimizerKind::Sgd,
                other => return Err(CliError::Config(format!("unknown optimizer {other:?}"))),
            };
        }
        if let Some(v) = take("run.learning_rate") {
            cfg.learning_rate = parse_num("run.learning_rate", &v)?;
        }
        if let Some(v) = take("run.vc_dim") {
            cfg.vc_dim = parse_num("run.vc_dim", &v)?;
        }
        if let Some(v) = take("run.delta") {
            cfg.delta = parse_num("run.delta", &v)?;
        }
        if let Some(v) = take("run.probe_hidden") {
            cfg.probe.hidden = parse_list("run.probe_hidden", &v)?;
        }
        if let Some(v) = take("run.probe_epochs") {
            cfg.probe.epochs = parse_num("run.probe_epochs", &v)?;
        }

        if let Some(v) = take("model.extractor_hidden") {
            cfg.arch.extractor_hidden = parse_list("model.extractor_hidden", &v)?;
        }
        if let Some(v) = take("model.classifier_hidden") {
            cfg.arch.classifier_hidden = parse_list("model.classifier_hidden", &v)?;
        }
        if let Some(v) = take("model.discriminator_hidden") {
            cfg.arch.discriminator_hidden = parse_list("model.discriminator_hidden", &v)?;
        }

        if let Some(v) = take("loss.mu_d") {
            cfg.mu_d = parse_num("loss.mu_d", &v)?;
        }
        if let Some(v) = take("loss.mu_s") {
            cfg.mu_s = parse_num("loss.mu_s", &v)?;
        }
        if let Some(v) = take("loss.mu_c") {
            cfg.mu_c = parse_num("loss.mu_c", &v)?;
        }
        if let Some(v) = take("loss.tau") {
            cfg.tau = parse_num("loss.tau", &v)?;
        }
        if let Some(v) = take("loss.grl_lambda") {
            cfg.grl_lambda = parse_num("loss.grl_lambda", &v)?;
        }

        if let Some(v) = take("augment.kind") {
            cfg.augment.kind = match v.as_str() {
                "gaussian_noise" => AugmentKind::GaussianNoise,
                "dropout_rate" => AugmentKind::DropoutRate,
                "none" => AugmentKind::None,
                other => return Err(CliError::Config(format!("unknown augment.kind {other:?}"))),
            };
        }
        if let Some(v) = take("augment.sigma_min") {
            cfg.augment.sigma_min = parse_num("augment.sigma_min", &v)?;
        }
        if let Some(v) = take("augment.sigma_max") {
            cfg.augment.sigma_max = parse_num("augment.sigma_max", &v)?;
        }
        if let Some(v) = take("augment.rate_min") {
            cfg.augment.rate_min = parse_num("augment.rate_min", &v)?;
        }
        if let Some(v) = take("augment.rate_max") {
            cfg.augment.rate_max = parse_num("augment.rate_max", &v)?;
        }

        cfg.preset = match take("data.preset") {
            Some(v) => Preset::parse(&v)?,
            None => Preset::CovariateDefault,
        };
        let samples = match take("data.samples_per_domain") {
            Some(v) => Some(parse_num::<usize>("data.samples_per_domain", &v)?),
            None => None,
        };
        if let Some(v) = take("data.transductive") {
            cfg.transductive = parse_bool("data.transductive", &v)?;
        }

        match cfg.preset {
            Preset::Csv => {
                let source_paths: Vec<PathBuf> = take("data.source_paths")
                    .ok_or_else(|| {
                        CliError::Config("data.source_paths required for csv preset".into())
                    })?
                    .split(',')
                    .map(|p| PathBuf::from(p.trim()))
                    .collect();
                let source_test_paths: Vec<PathBuf> = take("data.source_test_paths")
                    .map(|v| v.split(',').map(|p| PathBuf::from(p.trim())).collect())
                    .unwrap_or_default();
                let target_path = PathBuf::from(take("data.target_path").ok_or_else(|| {
                    CliError::Config("data.target_path required for csv preset".into())
                })?);
                let target_test_path = take("data.target_test_path").map(PathBuf::from);
                cfg.data =
                    DataConfig::Csv { source_paths, source_test_paths, target_path, target_test_path };
            }
            preset => {
                let n = samples.unwrap_or(2000);
                let mut spec = match preset {
                    Preset::ZeroShift => {
                        let m = match take("data.num_sources") {
                            Some(v) => parse_num("data.num_sources", &v)?,
                            None => 3,
                        };
                        ShiftSpec::zero_shift(m, n)
                    }
                    Preset::CovariateDefault => ShiftSpec::covariate_default(n),
                    Preset::LabelShiftDefault => ShiftSpec::label_shift_default(n),
                    Preset::Collapse => ShiftSpec::collapse_task(n),
                    Preset::Custom => {
                        let classes = match take("data.classes") {
                            Some(v) => parse_num("data.classes", &v)?,
                            None => 3,
                        };
                        let dim = match take("data.dim") {
                            Some(v) => parse_num("data.dim", &v)?,
                            None => 2,
                        };
                        let radius = match take("data.radius") {
                            Some(v) => parse_num("data.radius", &v)?,
                            None => 2.0,
                        };
                        let noise_sigma = match take("data.noise_sigma") {
                            Some(v) => parse_num("data.noise_sigma", &v)?,
                            None => 0.5,
                        };
                        let angles: Vec<f64> = match take("data.source_angles") {
                            Some(v) => parse_list("data.source_angles", &v)?,
                            None => vec![0.0, 15.0, 30.0],
                        };
                        let target_angle = match take("data.target_angle") {
                            Some(v) => parse_num("data.target_angle", &v)?,
                            None => 60.0,
                        };
                        let uniform = vec![1.0 / classes as f64; classes];
                        ShiftSpec {
                            classes,
                            dim,
                            radius,
                            noise_sigma,
                            sources: angles
                                .into_iter()
                                .map(|a| DomainShift::new(a, uniform.clone()))
                                .collect(),
                            target: DomainShift::new(target_angle, uniform),
                            samples_per_domain: n,
                            test_fraction: 0.25,
                        }
                    }
                    Preset::Csv => unreachable!(),
                };
                spec.samples_per_domain = n;
                if let Some(v) = take("data.test_fraction") {
                    spec.test_fraction = parse_num("data.test_fraction", &v)?;
                }
                // per-domain label priors: data.source_prior_<j> and data.target_prior
                for j in 0..spec.sources.len() {
                    if let Some(v) = take(&format!("data.source_prior_{j}")) {
                        spec.sources[j].prior = parse_list("data.source_prior", &v)?;
                    }
                }
                if let Some(v) = take("data.target_prior") {
                    spec.target.prior = parse_list("data.target_prior", &v)?;
                }
                cfg.data = DataConfig::Synthetic(spec);
            }
        }

        if !map.is_empty() {
            let unknown: Vec<String> = map.into_keys().collect();
            return Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(CliError::Config(msg));
        if self.epochs == 0 {
            return err("run.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("run.batch_size must be at least 1".into());
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return err("run.learning_rate must be positive".into());
        }
        for (name, v) in
            [("loss.mu_d", self.mu_d), ("loss.mu_s", self.mu_s), ("loss.mu_c", self.mu_c)]
        {
            if v.is_nan() || v < 0.0 {
                return err(format!("{name} must be non-negative, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return err(format!("loss.tau must lie in [0,1], got {}", self.tau));
        }
        if !(0.0 < self.delta && self.delta < 1.0) {
            return err(format!("run.delta must lie in (0,1), got {}", self.delta));
        }
        if self.vc_dim == 0 {
            return err("run.vc_dim must be at least 1".into());
        }
        if self.arch.extractor_hidden.is_empty() {
            return err("model.extractor_hidden must name at least one layer".into());
        }
        self.augment.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if let DataConfig::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if spec.samples_per_domain < self.batch_size {
                return err(format!(
                    "batch size {} exceeds samples_per_domain {}",
                    self.batch_size, spec.samples_per_domain
                ));
            }
        }
        Ok(())
    }

    /// Serialize in canonical key order. `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run.mode = {}", self.mode.as_str());
        let _ = writeln!(s, "run.seed = {}", self.seed);
        let _ = writeln!(s, "run.epochs = {}", self.epochs);
        let _ = writeln!(s, "run.batch_size = {}", self.batch_size);
        let _ = writeln!(
            s,
            "run.optimizer = {}",
            match self.optimizer {
                OptimizerKind::AdaDelta => "adadelta",
                OptimizerKind::Sgd => "sgd",
            }
        );
        let _ = writeln!(s, "run.learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "run.vc_dim = {}", self.vc_dim);
        let _ = writeln!(s, "run.delta = {}", self.delta);
        let _ = writeln!(s, "run.probe_hidden = {}", fmt_list(&self.probe.hidden));
        let _ = writeln!(s, "run.probe_epochs = {}", self.probe.epochs);
        let _ = writeln!(s, "model.extractor_hidden = {}", fmt_list(&self.arch.extractor_hidden));
        let _ = writeln!(s, "model.classifier_hidden = {}", fmt_list(&self.arch.classifier_hidden));
        let _ = writeln!(
            s,
            "model.discriminator_hidden = {}",
            fmt_list(&self.arch.discriminator_hidden)
        );
        let _ = writeln!(s, "loss.mu_d = {}", self.mu_d);
        let _ = writeln!(s, "loss.mu_s = {}", self.mu_s);
        let _ = writeln!(s, "loss.mu_c = {}", self.mu_c);
        let _ = writeln!(s, "loss.tau = {}", self.tau);
        let _ = writeln!(s, "loss.grl_lambda = {}", self.grl_lambda);
        let _ = writeln!(
            s,
            "augment.kind = {}",
            match self.augment.kind {
                AugmentKind::GaussianNoise => "gaussian_noise",
                AugmentKind::DropoutRate => "dropout_rate",
                AugmentKind::None => "none",
            }
        );
        let _ = writeln!(s, "augment.sigma_min = {}", self.augment.sigma_min);
        let _ = writeln!(s, "augment.sigma_max = {}", self.augment.sigma_max);
        let _ = writeln!(s, "augment.rate_min = {}", self.augment.rate_min);
        let _ = writeln!(s, "augment.rate_max = {}", self.augment.rate_max);
        let _ = writeln!(s, "data.preset = {}", self.preset.as_str());
        let _ = writeln!(s, "data.transductive = {}", self.transductive);
        match &self.data {
            DataConfig::Synthetic(spec) => {
                let _ = writeln!(s, "data.samples_per_domain = {}", spec.samples_per_domain);
                let _ = writeln!(s, "data.test_fraction = {}", spec.test_fraction);
                if self.preset == Preset::ZeroShift {
                    let _ = writeln!(s, "data.num_sources = {}", spec.sources.len());
                }
                if self.preset == Preset::Custom {
                    let _ = writeln!(s, "data.classes = {}", spec.classes);
                    let _ = writeln!(s, "data.dim = {}", spec.dim);
                    let _ = writeln!(s, "data.radius = {}", spec.radius);
                    let _ = writeln!(s, "data.noise_sigma = {}", spec.noise_sigma);
                    let _ = writeln!(
                        s,
                        "data.source_angles = {}",
                        fmt_list(&spec.sources.iter().map(|d| d.angle_deg).collect::<Vec<_>>())
                    );
                    let _ = writeln!(s, "data.target_angle = {}", spec.target.angle_deg);
                }
                for (j, shift) in spec.sources.iter().enumerate() {
                    let uniform = vec![1.0 / spec.classes as f64; spec.classes];
                    if shift.prior != uniform {
                        let _ = writeln!(s, "data.source_prior_{j} = {}", fmt_list(&shift.prior));
                    }
                }
                let uniform = vec![1.0 / spec.classes as f64; spec.classes];
                if spec.target.prior != uniform {
                    let _ = writeln!(s, "data.target_prior = {}", fmt_list(&spec.target.prior));
                }
            }
            DataConfig::Csv { source_paths, source_test_paths, target_path, target_test_path } => {
                let join = |ps: &[PathBuf]| {
                    ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
                };
                let _ = writeln!(s, "data.source_paths = {}", join(source_paths));
                if !source_test_paths.is_empty() {
                    let _ = writeln!(s, "data.source_test_paths = {}", join(source_test_paths));
                }
                let _ = writeln!(s, "data.target_path = {}", target_path.display());
                if let Some(p) = target_test_path {
                    let _ = writeln!(s, "data.target_test_path = {}", p.display());
                }
            }
        }
        s
    }
}
