use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::calibrate::CalibrationSettings;
use crate::lm::{DecodingParams, HttpConfig};

/// How many in-context examples a condition uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ShotsRepr", into = "ShotsRepr")]
pub enum Shots {
    Zero,
    Few(usize),
    /// As many examples as fit in the token budget.
    Max(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShotsRepr {
    Name(String),
    Few { few: usize },
    Max { max: usize },
}

impl TryFrom<ShotsRepr> for Shots {
    type Error = String;

    fn try_from(r: ShotsRepr) -> Result<Self, String> {
        match r {
            ShotsRepr::Name(n) if n == "zero" => Ok(Shots::Zero),
            ShotsRepr::Name(n) if n == "few" => Ok(Shots::Few(5)),
            ShotsRepr::Name(n) => Err(format!("unknown shots setting `{n}` (expected zero, few, {{few: k}} or {{max: budget}})")),
            ShotsRepr::Few { few } => Ok(Shots::Few(few)),
            ShotsRepr::Max { max: 0 } => Err("max budget must be positive".into()),
            ShotsRepr::Max { max } => Ok(Shots::Max(max)),
        }
    }
}

impl From<Shots> for ShotsRepr {
    fn from(s: Shots) -> Self {
        match s {
            Shots::Zero => ShotsRepr::Name("zero".into()),
            Shots::Few(k) => ShotsRepr::Few { few: k },
            Shots::Max(b) => ShotsRepr::Max { max: b },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingSelection {
    Fixed(u8),
    SelectBestOnDev,
}

impl Default for EncodingSelection {
    fn default() -> Self {
        EncodingSelection::Fixed(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub name: String,
    pub shots: Shots,
    #[serde(default)]
    pub encoding: EncodingSelection,
    /// Use the task's entry in the reframe config.
    #[serde(default)]
    pub reframed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<CalibrationSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<PathBuf>,
        #[serde(default)]
        strict: bool,
    },
    Http(HttpConfig),
}

impl BackendConfig {
    /// Model id the backend reports; replay keys depend on it.
    pub fn model_id(&self) -> String {
        match self {
            BackendConfig::Mock { .. } => "mock".into(),
            BackendConfig::Http(h) => h.model.clone(),
        }
    }
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Glob patterns for task files.
    pub tasks: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reframe_config: Option<PathBuf>,
    pub conditions: Vec<Condition>,
    /// Condition the others are compared against.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub decoding: DecodingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_store: Option<PathBuf>,
    #[serde(default)]
    pub replay_only: bool,
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Loads a config; relative paths inside it are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        for pattern in &mut config.tasks {
            *pattern = dir.join(&*pattern).to_string_lossy().into_owned();
        }
        for p in [&mut config.reframe_config, &mut config.replay_store].into_iter().flatten() {
            *p = dir.join(&*p);
        }
        if let BackendConfig::Mock { script: Some(s), .. } = &mut config.backend {
            *s = dir.join(&*s);
        }
        config.output_dir = dir.join(&config.output_dir);
        Ok(config)
    }

    pub fn check(&self) -> Result<(), HarnessError> {
        if self.tasks.is_empty() {
            return Err(HarnessError::Config("no task patterns".into()));
        }
        if self.conditions.is_empty() {
            return Err(HarnessError::Config("no conditions".into()));
        }
        let mut names = HashSet::new();
        for c in &self.conditions {
            if !names.insert(c.name.as_str()) {
                return Err(HarnessError::Config(format!("duplicate condition name `{}`", c.name)));
            }
            if let EncodingSelection::Fixed(id) = c.encoding {
                if !(1..=crate::schema::ENCODING_COUNT).contains(&id) {
                    return Err(HarnessError::Config(format!("condition `{}`: encoding {id} is not in 1..=12", c.name)));
                }
            }
            if let Some(cal) = &c.calibration {
                if cal.enabled && (cal.k < 2 || cal.content_free_tokens.is_empty()) {
                    return Err(HarnessError::Config(format!(
                        "condition `{}`: calibration needs k >= 2 and a content-free token",
                        c.name
                    )));
                }
            }
        }
        if let Some(b) = &self.baseline {
            if !names.contains(b.as_str()) {
                return Err(HarnessError::Config(format!("baseline `{b}` is not a condition")));
            }
        }
        if self.conditions.iter().any(|c| c.reframed) && self.reframe_config.is_none() {
            return Err(HarnessError::Config("a reframed condition needs `reframe_config`".into()));
        }
        if self.parallelism == 0 {
            return Err(HarnessError::Config("parallelism must be at least 1".into()));
        }
        if self.replay_only && self.replay_store.is_none() {
            return Err(HarnessError::Config("replay-only mode needs a replay store".into()));
        }
        Ok(())
    }
}
