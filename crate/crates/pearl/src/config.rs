//! Pipeline configuration, read from TOML or JSON.

use std::path::{Path, PathBuf};

use pearl_core::reward_model::NetConfig;
use pearl_core::synthetic_tasks::TaskSpec;
use pearl_core::{GwConfig, Metric, RrlConfig};
use serde::{Deserialize, Serialize};

use crate::error::{PearlError, Result};

/// File locations. Anything left unset resolves inside the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Scripted target labels, used for accuracy and few-shot substitution.
    pub target_labels: Option<PathBuf>,
    pub transferred: Option<PathBuf>,
    pub holdout: Option<PathBuf>,
    pub holdout_returns: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sampling {
    /// Segments drawn per side and step; even.
    pub group_size: usize,
    pub num_steps: usize,
    pub kmeans_k: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    /// Use the whole source set every step instead of a balanced draw.
    pub use_all_source: bool,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            group_size: 4,
            num_steps: 50,
            kmeans_k: 2,
            kmeans_iters: 100,
            seed: 0,
            use_all_source: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mode {
    #[default]
    ZeroShot,
    /// Replace `f_oracle` transferred labels with scripted ones.
    FewShot { f_oracle: usize },
}

/// Synthetic task generation for `gen-tasks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub spec: TaskSpec,
    pub source_segments: usize,
    pub target_segments: usize,
    pub holdout_segments: usize,
    /// Base seed of the held-out target sample. Defaults to the target seed
    /// plus [`HOLDOUT_SEED_OFFSET`].
    pub holdout_seed: Option<u64>,
}

pub const HOLDOUT_SEED_OFFSET: u64 = 1000;

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            spec: TaskSpec::default(),
            source_segments: 30,
            target_segments: 30,
            holdout_segments: 20,
            holdout_seed: None,
        }
    }
}

impl TaskConfig {
    pub fn resolved_holdout_seed(&self) -> u64 {
        self.holdout_seed.unwrap_or_else(|| {
            self.spec
                .target_seed
                .unwrap_or(self.spec.seed)
                .wrapping_add(HOLDOUT_SEED_OFFSET)
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Labels written by `transfer`.
    #[default]
    Transferred,
    /// Scripted target labels, for supervised baselines.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub label_source: LabelSource,
    /// Fraction of binary training labels to flip before training.
    pub noise_fraction: f64,
    pub noise_seed: u64,
    /// Seed of the few-shot oracle pair selection.
    pub oracle_seed: u64,
}

impl Default for Training {
    fn default() -> Self {
        Training {
            label_source: LabelSource::Transferred,
            noise_fraction: 0.0,
            noise_seed: 0,
            oracle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Metric,
    Noise,
    Lambda,
    Alpha,
    Eta,
    GroupSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Text(String),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(x) => write!(f, "{x}"),
            SweepValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<SweepValue>,
    /// Also train a reward model per row.
    pub train: bool,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            parameter: SweepParameter::Metric,
            values: Vec::new(),
            train: true,
        }
    }
}

impl Sweep {
    /// Writes one grid value into a copy of `base`.
    pub fn apply(&self, base: &PipelineConfig, value: &SweepValue) -> Result<PipelineConfig> {
        let mut cfg = base.clone();
        let bad = || PearlError::Config(format!("{value} is not a valid {:?} value", self.parameter));
        let number = || match value {
            SweepValue::Number(x) => Ok(*x),
            SweepValue::Text(_) => Err(bad()),
        };
        match self.parameter {
            SweepParameter::Metric => {
                let SweepValue::Text(s) = value else { return Err(bad()) };
                cfg.metric = s.parse().map_err(|_| bad())?;
            }
            SweepParameter::Noise => cfg.training.noise_fraction = number()?,
            SweepParameter::Lambda => cfg.rrl.lambda = number()?,
            SweepParameter::Alpha => cfg.rrl.alpha = number()?,
            SweepParameter::Eta => cfg.rrl.eta = number()?,
            SweepParameter::GroupSize => {
                let x = number()?;
                if !(x >= 0.0 && x.fract() == 0.0) {
                    return Err(bad());
                }
                cfg.sampling.group_size = x as usize;
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub metric: Metric,
    pub gw: GwConfig,
    pub rrl: RrlConfig,
    pub net: NetConfig,
    pub sampling: Sampling,
    pub mode: Mode,
    pub task: TaskConfig,
    pub training: Training,
    pub sweep: Sweep,
    /// Exclude scripted ties from CPA accuracy.
    pub exclude_ties: bool,
    /// Add wall-clock seconds to reports. Off by default so reports stay
    /// byte-identical across runs.
    pub report_timing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            metric: Metric::Euclidean,
            gw: GwConfig::default(),
            rrl: RrlConfig::default(),
            net: NetConfig::default(),
            sampling: Sampling::default(),
            mode: Mode::ZeroShot,
            task: TaskConfig::default(),
            training: Training::default(),
            sweep: Sweep::default(),
            exclude_ties: true,
            report_timing: false,
        }
    }
}

impl PipelineConfig {
    /// JSON for `.json` files, TOML otherwise.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PearlError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: PipelineConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| PearlError::format(path, e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| PearlError::format(path, e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// One seed for everything random: task generation, sampling, training
    /// and label noise.
    pub fn set_seed(&mut self, seed: u64) {
        self.task.spec.seed = seed;
        self.sampling.seed = seed;
        self.rrl.seed = seed;
        self.training.noise_seed = seed;
        self.training.oracle_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(PearlError::Config(msg));
        let s = &self.sampling;
        if s.group_size < 2 || s.group_size % 2 != 0 {
            return fail(format!("sampling.group_size must be even and at least 2, got {}", s.group_size));
        }
        if s.kmeans_k != 2 {
            return fail(format!("sampling.kmeans_k must be 2, got {}", s.kmeans_k));
        }
        if s.num_steps == 0 || s.kmeans_iters == 0 {
            return fail("sampling.num_steps and sampling.kmeans_iters must be positive".into());
        }
        let f = self.training.noise_fraction;
        if !(0.0..=1.0).contains(&f) {
            return fail(format!("training.noise_fraction must lie in [0, 1], got {f}"));
        }
        let t = &self.task;
        if t.source_segments < 2 || t.target_segments < 2 || t.holdout_segments < 2 {
            return fail("task segment counts must be at least 2".into());
        }
        self.gw.validate().map_err(|e| PearlError::Config(format!("gw: {e}")))?;
        self.rrl.validate().map_err(|e| PearlError::Config(format!("rrl: {e}")))?;
        t.spec.validate().map_err(|e| PearlError::Config(format!("task.spec: {e}")))?;
        if self.net.embed_dim < 2 || self.net.embed_dim % 2 != 0 {
            return fail(format!("net.embed_dim must be even and at least 2, got {}", self.net.embed_dim));
        }
        Ok(())
    }
}

/// Concrete file locations for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPaths {
    pub out: PathBuf,
    pub source: PathBuf,
    pub target: PathBuf,
    pub target_labels: PathBuf,
    pub transferred: PathBuf,
    pub holdout: PathBuf,
    pub holdout_returns: PathBuf,
    /// Whether each optional input was named explicitly.
    pub explicit_target_labels: bool,
    pub explicit_holdout: bool,
}

impl Paths {
    pub fn resolve(&self, out: &Path) -> ResolvedPaths {
        let pick = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| out.join(name));
        ResolvedPaths {
            out: out.to_path_buf(),
            source: pick(&self.source, "source.json"),
            target: pick(&self.target, "target.json"),
            target_labels: pick(&self.target_labels, "target_labels.json"),
            transferred: pick(&self.transferred, "transferred.json"),
            holdout: pick(&self.holdout, "holdout.json"),
            holdout_returns: pick(&self.holdout_returns, "holdout_returns.json"),
            explicit_target_labels: self.target_labels.is_some(),
            explicit_holdout: self.holdout.is_some() || self.holdout_returns.is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_nested_sections() {
        let text = r#"
            metric = "cosine"
            [sampling]
            group_size = 6
            [mode]
            kind = "few_shot"
            f_oracle = 10
            [task.spec]
            noise_scale = 0.05
            [task.spec.transform]
            kind = "rotation"
            angle = 0.5
            [sweep]
            parameter = "eta"
            values = [50, 100, 200]
        "#;
        let cfg: PipelineConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.metric, Metric::Cosine);
        assert_eq!(cfg.sampling.group_size, 6);
        assert_eq!(cfg.mode, Mode::FewShot { f_oracle: 10 });
        assert_eq!(cfg.sweep.values.len(), 3);
        assert_eq!(cfg.rrl, RrlConfig::default());
    }

    #[test]
    fn json_echo_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.mode = Mode::FewShot { f_oracle: 3 };
        cfg.sweep.values = vec![SweepValue::Text("cosine".into()), SweepValue::Number(0.5)];
        let echo = serde_json::to_value(&cfg).unwrap();
        assert_eq!(serde_json::from_value::<PipelineConfig>(echo).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(toml::from_str::<PipelineConfig>("unknown = 1").is_err());
        let mut cfg = PipelineConfig::default();
        cfg.sampling.group_size = 5;
        assert!(matches!(cfg.validate(), Err(PearlError::Config(_))));
        let mut cfg = PipelineConfig::default();
        cfg.training.noise_fraction = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sweep_values_apply() {
        let base = PipelineConfig::default();
        let sweep = Sweep {
            parameter: SweepParameter::GroupSize,
            values: vec![],
            train: false,
        };
        assert_eq!(sweep.apply(&base, &SweepValue::Number(8.0)).unwrap().sampling.group_size, 8);
        assert!(sweep.apply(&base, &SweepValue::Number(2.5)).is_err());
        let sweep = Sweep {
            parameter: SweepParameter::Metric,
            ..sweep
        };
        assert_eq!(sweep.apply(&base, &SweepValue::Text("cosine".into())).unwrap().metric, Metric::Cosine);
        assert!(sweep.apply(&base, &SweepValue::Number(1.0)).is_err());
    }
}
