use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{MatchPenalties, PenaltySpec, RelativePenalties, DEFAULT_CHUNK_LEN};
use crate::dynamics::PredictorConfig;
use crate::embed::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{DEFAULT_QUERIES, DEFAULT_TAUS};
use crate::synthdata::GeneratorConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    /// Values are multiples of each instance's mean data cost.
    #[default]
    Relative,
    /// Values are used as given.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    pub mode: PenaltyMode,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub outlier_cost: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        let r = RelativePenalties::default();
        Self {
            mode: PenaltyMode::Relative,
            lambda1: r.lambda1,
            lambda2: r.lambda2,
            lambda3: r.lambda3,
            outlier_cost: r.outlier_cost,
        }
    }
}

impl PenaltyConfig {
    pub fn spec(&self) -> Result<PenaltySpec> {
        let fixed = MatchPenalties::new(self.lambda1, self.lambda2, self.lambda3, self.outlier_cost)?;
        Ok(match self.mode {
            PenaltyMode::Fixed => PenaltySpec::Fixed(fixed),
            PenaltyMode::Relative => PenaltySpec::Relative(RelativePenalties {
                lambda1: fixed.lambda1,
                lambda2: fixed.lambda2,
                lambda3: fixed.lambda3,
                outlier_cost: fixed.outlier_cost,
            }),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub queries: usize,
    pub pose_epsilon: Option<f64>,
    pub taus: Vec<f64>,
    pub k_max: usize,
    pub exclusion_window: usize,
    /// Number of resampled pairs for alignment accuracy.
    pub pairs: usize,
    /// Sequences (by dataset position) held out for zero-shot transfer.
    pub held_out: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            queries: DEFAULT_QUERIES,
            pose_epsilon: None,
            taus: DEFAULT_TAUS.to_vec(),
            k_max: 10,
            exclusion_window: 2,
            pairs: 20,
            held_out: vec![0, 1],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 || self.k_max == 0 || self.pairs == 0 {
            return Err(Error::config("eval queries, k_max and pairs must be positive"));
        }
        if let Some(e) = self.pose_epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::config("pose_epsilon must be finite and > 0"));
            }
        }
        if self.taus.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::config("taus must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Every tunable of a run, with module defaults for anything omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds generation, training and evaluation; the generator's own seed
    /// is replaced by this one.
    pub seed: u64,
    pub chunk_len: usize,
    pub penalties: PenaltyConfig,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub predictor: PredictorConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        Self {
            seed: generator.seed,
            chunk_len: DEFAULT_CHUNK_LEN,
            penalties: PenaltyConfig::default(),
            generator,
            train: TrainConfig::default(),
            predictor: PredictorConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {}", e.message())))?;
        cfg.generator.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.generator.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        crate::align::chunk_target(2, self.chunk_len)?;
        self.penalties.spec()?;
        self.generator.validate()?;
        self.train.validate()?;
        self.predictor.validate()?;
        self.eval.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.chunk_len, 40);
        assert_eq!(c.penalties.spec().unwrap(), PenaltySpec::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3").is_err());
        assert!(RunConfig::from_toml("[train]\nmargn = 0.1").is_err());
    }

    #[test]
    fn values_validated_at_load() {
        assert!(RunConfig::from_toml("chunk_len = 1").is_err());
        assert!(RunConfig::from_toml("[penalties]\nlambda1 = -1.0").is_err());
        assert!(RunConfig::from_toml("[generator]\nspeed_jitter = 1.5").is_err());
    }

    #[test]
    fn round_trip_and_seed() {
        let c = RunConfig::from_toml("seed = 11\n[train]\nmax_epochs = 3\n[penalties]\nmode = \"fixed\"").unwrap();
        assert_eq!(c.generator.seed, 11);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(matches!(c.penalties.spec().unwrap(), PenaltySpec::Fixed(_)));
        assert_eq!(c.with_seed(4).generator.seed, 4);
    }
}
