//! Run configuration: a single TOML file describes the whole pipeline.
//! The canonical serialization of the parsed config is hashed, and that
//! hash is embedded in every artifact a run produces.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shillsim_core::baseline::{BaselineAttack, Direction};
use shillsim_core::data::FileFormat;
use shillsim_core::victim::{ModelConfig, ModelFamily};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub victim: VictimConfig,
    pub attack: AttackConfig,
    pub targets: TargetConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub interactions: PathBuf,
    #[serde(default)]
    pub items: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: FileFormat,
    #[serde(default)]
    pub min_interactions: usize,
}

fn default_format() -> FileFormat {
    FileFormat::Csv
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [u32; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratios: [8, 1, 1] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VictimConfig {
    pub family: ModelFamily,
    pub latent_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub mlp_hidden: Vec<usize>,
}

impl Default for VictimConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        VictimConfig {
            family: m.family,
            latent_dim: m.latent_dim,
            epochs: m.epochs,
            learning_rate: m.learning_rate,
            l2_reg: m.l2_reg,
            mlp_hidden: m.mlp_hidden,
        }
    }
}

impl VictimConfig {
    pub fn model_config(&self, seed: u64) -> ModelConfig {
        ModelConfig {
            family: self.family,
            latent_dim: self.latent_dim,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            l2_reg: self.l2_reg,
            seed,
            mlp_hidden: self.mlp_hidden.clone(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.family {
            ModelFamily::Nmf => "nmf",
            ModelFamily::NeuNmf => "neu_nmf",
            ModelFamily::DualtowerEarly => "dualtower_early",
            ModelFamily::DualtowerLate => "dualtower_late",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackName {
    Random,
    Average,
    Bandwagon,
    Segmented,
    Aop,
    Mixed,
    Agent,
}

impl AttackName {
    pub fn label(&self) -> &'static str {
        match self {
            AttackName::Agent => "agent",
            AttackName::Random => "random",
            AttackName::Average => "average",
            AttackName::Bandwagon => "bandwagon",
            AttackName::Segmented => "segmented",
            AttackName::Aop => "aop",
            AttackName::Mixed => "mixed",
        }
    }

    pub fn baseline(&self) -> Option<BaselineAttack> {
        match self {
            AttackName::Random => Some(BaselineAttack::Random),
            AttackName::Average => Some(BaselineAttack::Average),
            AttackName::Bandwagon => Some(BaselineAttack::Bandwagon),
            AttackName::Segmented => Some(BaselineAttack::Segmented),
            AttackName::Aop => Some(BaselineAttack::Aop),
            AttackName::Mixed => Some(BaselineAttack::Mixed),
            AttackName::Agent => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub name: AttackName,
    #[serde(default = "default_direction")]
    pub direction: Direction,
    #[serde(default = "default_rate")]
    pub injection_rate: f64,
    /// Agent attack only.
    #[serde(default = "default_rounds")]
    pub exposure_rounds: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Baseline attacks: fixed filler count; absent means match the
    /// genuine mean profile length.
    #[serde(default)]
    pub filler_size: Option<usize>,
    #[serde(default = "default_selected")]
    pub selected_size: usize,
    #[serde(default = "default_aop")]
    pub aop_percent: f64,
}

fn default_direction() -> Direction {
    Direction::Push
}
fn default_rate() -> f64 {
    0.05
}
fn default_rounds() -> u32 {
    10
}
fn default_batch() -> usize {
    20
}
fn default_selected() -> usize {
    10
}
fn default_aop() -> f64 {
    10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Explicit,
    Random,
    LongTail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub mode: TargetMode,
    #[serde(default)]
    pub items: Vec<String>,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Popularity fraction defining the long-tail pool.
    #[serde(default = "default_fraction")]
    pub fraction: f64,
}

fn default_count() -> usize {
    1
}
fn default_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Stub,
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_key_env() -> String {
    "LLM_API_KEY".to_string()
}
fn default_timeout() -> u64 {
    30
}
fn default_retries() -> u32 {
    2
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Stub,
            base_url: String::new(),
            model: String::new(),
            api_key_env: default_key_env(),
            temperature: 0.0,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub segment_fraction: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { k: 10, segment_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub enabled: bool,
    /// 0 means "flag as many users as were injected".
    pub flag_fraction: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig { enabled: true, flag_fraction: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl RunConfig {
    pub fn from_path(path: &std::path::Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(0.0 < self.attack.injection_rate && self.attack.injection_rate <= 1.0) {
            return Err(CliError::Config(format!(
                "attack.injection_rate {} outside (0,1]",
                self.attack.injection_rate
            )));
        }
        if self.split.ratios.iter().sum::<u32>() != 10 {
            return Err(CliError::Config(format!(
                "split.ratios {:?} must sum to 10",
                self.split.ratios
            )));
        }
        if self.targets.mode == TargetMode::Explicit && self.targets.items.is_empty() {
            return Err(CliError::Config(
                "targets.mode = explicit requires a non-empty targets.items list".into(),
            ));
        }
        if self.targets.mode != TargetMode::Explicit && self.targets.count == 0 {
            return Err(CliError::Config("targets.count must be >= 1".into()));
        }
        if !(0.0 < self.targets.fraction && self.targets.fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "targets.fraction {} outside (0,1]",
                self.targets.fraction
            )));
        }
        if self.eval.k == 0 {
            return Err(CliError::Config("eval.k must be >= 1".into()));
        }
        if !(0.0 < self.eval.segment_fraction && self.eval.segment_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "eval.segment_fraction {} outside (0,1]",
                self.eval.segment_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.detection.flag_fraction) {
            return Err(CliError::Config(format!(
                "detection.flag_fraction {} outside [0,1]",
                self.detection.flag_fraction
            )));
        }
        if self.provider.kind == ProviderKind::Live && self.provider.base_url.is_empty() {
            return Err(CliError::Config(
                "provider.kind = live requires provider.base_url".into(),
            ));
        }
        Ok(())
    }

    /// Truncated SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn snapshot_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
