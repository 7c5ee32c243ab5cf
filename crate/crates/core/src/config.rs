//! Run configuration: a TOML file whose sections mirror the modules. Every
//! key has a default, so an empty file runs the reference settings. Unknown
//! keys are rejected with their dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::downstream::EvalConfig;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::model::ModelConfig;
use crate::trainer::PretrainConfig;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub target_rate: u32,
    /// Clip length in seconds after cropping or padding.
    pub duration: f64,
    /// Mel cache location; `DECAR_CACHE_DIR` overrides it.
    pub cache_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            target_rate: 16_000,
            duration: 10.0,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run_name: String,
    /// Global seed; component seeds left unset are derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub frontend: FrontendConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_name: "run".into(),
            seed: 0,
            data: DataConfig::default(),
            frontend: FrontendConfig::default(),
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            field: e.path().to_string(),
            msg: e.into_inner().message().to_string(),
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Config {
            field: e.path().to_string(),
            msg: e.into_inner().to_string(),
        })
    }

    /// Reads TOML, or JSON when the file ends in `.json` (as
    /// `config.resolved.json` does). The result is resolved and validated.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        let cfg = cfg.resolved();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fills every unset component seed from the global seed.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.pretrain.seeds = self.pretrain.seeds.resolve(self.seed);
        out.eval.seed = Some(self.eval.seed.unwrap_or_else(|| derive_seed(self.seed, "eval")));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.target_rate == 0 {
            return Err(Error::config("data.target_rate", "must be positive"));
        }
        if !(self.data.duration > 0.0) {
            return Err(Error::config("data.duration", "must be positive"));
        }
        self.frontend.validate(self.data.target_rate)?;
        if self
            .frontend
            .frame_count((self.data.duration * f64::from(self.data.target_rate)).round() as usize, self.data.target_rate)
            .is_none()
        {
            return Err(Error::config("data.duration", "shorter than one analysis window"));
        }
        self.model.validate()?;
        self.pretrain.validate()?;
        self.eval.validate()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Everything that shapes the log-mel features, used to key the cache.
    pub fn feature_fingerprint(&self) -> impl Serialize + '_ {
        (&self.frontend, self.data.target_rate, self.data.duration)
    }
}
