use std::path::Path;

use serde::{Deserialize, Serialize};
use trajopt_core::handmodel::HandModel;
use trajopt_core::io::content_hash;
use trajopt_core::metrics::SuccessCriteria;
use trajopt_core::policy::PolicyConfig;
use trajopt_core::retarget::{RetargetWeights, SolverConfig};
use trajopt_core::synth::{AugmentConfig, PerturbConfig, ScriptSampler};
use trajopt_piom::{PiomConfig, TrainConfig};

use crate::CliError;

/// Size and timing of a synthesized dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub count: usize,
    pub approach_frames: usize,
    pub close_frames: usize,
    pub lift_frames: usize,
    /// Apply one random augmentation to every synthesized clip.
    pub augment: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let s = ScriptSampler::default();
        Self { count: 200, approach_frames: s.approach_frames, close_frames: s.close_frames, lift_frames: s.lift_frames, augment: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Object surface samples used by ADD-S.
    pub object_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { object_points: 512 }
    }
}

/// Every setting of a pipeline run. File locations are command flags, so the
/// hash of this config identifies the computation, not where it ran.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dt: f64,
    /// `human20`, `robot12` or a path to a hand-model TOML file.
    pub human_model: String,
    pub robot_model: String,
    pub dataset: DatasetConfig,
    /// Perturbation profile of pretraining inputs.
    pub perturb: PerturbConfig,
    /// Harsher profile of fine-tuning inputs.
    pub perturb_finetune: PerturbConfig,
    pub augment: AugmentConfig,
    pub piom: PiomConfig,
    pub train: TrainConfig,
    pub retarget: RetargetWeights,
    pub solver: SolverConfig,
    pub policy: PolicyConfig,
    pub success: SuccessCriteria,
    pub eval: EvalConfig,
}

/// Training settings sized for a single-CPU run of a few hundred short clips:
/// a larger step and smaller batch than the full-scale defaults, and no
/// smoothness term, whose raw per-triple sum otherwise swamps reconstruction.
pub fn desk_training() -> TrainConfig {
    let mut t = TrainConfig { lr: 3e-3, batch_size: 8, ..Default::default() };
    t.loss.weights.smooth = 0.0;
    t
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dt: 1.0 / 30.0,
            human_model: "human20".into(),
            robot_model: "robot12".into(),
            dataset: DatasetConfig::default(),
            perturb: PerturbConfig::default(),
            perturb_finetune: PerturbConfig::parsing_surrogate(),
            augment: AugmentConfig::default(),
            piom: PiomConfig::default(),
            train: desk_training(),
            retarget: RetargetWeights::default(),
            solver: SolverConfig::default(),
            policy: PolicyConfig::default(),
            success: SuccessCriteria::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    // bare words that are not TOML literals are taken as strings
    toml::from_str::<toml::Table>(&format!("v = {raw}")).ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `a.b.c = value` inside `table`, creating intermediate tables.
fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key '{key}'")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("'{p}' in '{key}' is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// Reads `path` (if any), applies `key=value` overrides, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        // start from the full default echo so partially given sections keep
        // this config's defaults rather than their own type's
        let mut table: toml::Table = toml::from_str(&Self::default().to_toml()).expect("default config round-trips");
        if let Some(p) = path {
            if !p.exists() {
                return Err(CliError::MissingFile { path: p.display().to_string() });
            }
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            merge(&mut table, toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(e.to_string()))?);
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::Usage(format!("override '{o}' is not key=value")))?;
            set_path(&mut table, k.trim(), parse_value(v.trim()))?;
        }
        let cfg: PipelineConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive".into());
        }
        if self.seed > i64::MAX as u64 {
            return bad("seed must fit in a signed 64-bit integer".into());
        }
        if self.dataset.approach_frames == 0 || self.dataset.lift_frames > 0 && self.dataset.close_frames == 0 {
            return bad("dataset needs approach frames, and close frames before a lift".into());
        }
        if self.eval.object_points == 0 {
            return bad("eval.object_points must be ≥ 1".into());
        }
        self.perturb.validate().map_err(|e| CliError::Config(format!("perturb: {e}")))?;
        self.perturb_finetune.validate().map_err(|e| CliError::Config(format!("perturb_finetune: {e}")))?;
        self.augment.validate().map_err(|e| CliError::Config(format!("augment: {e}")))?;
        self.piom.validate().map_err(|e| CliError::Config(format!("piom: {e}")))?;
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        self.retarget.validate().map_err(|e| CliError::Config(format!("retarget: {e}")))?;
        self.policy.validate().map_err(|e| CliError::Config(format!("policy: {e}")))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML echo.
    pub fn hash(&self) -> String {
        content_hash(self.to_toml().as_bytes())
    }

    pub fn sampler(&self) -> ScriptSampler {
        ScriptSampler {
            approach_frames: self.dataset.approach_frames,
            close_frames: self.dataset.close_frames,
            lift_frames: self.dataset.lift_frames,
            ..Default::default()
        }
    }

    pub fn human(&self) -> Result<HandModel, CliError> {
        resolve_model(&self.human_model)
    }

    pub fn robot(&self) -> Result<HandModel, CliError> {
        resolve_model(&self.robot_model)
    }
}

pub fn resolve_model(spec: &str) -> Result<HandModel, CliError> {
    match spec {
        "human20" => Ok(HandModel::human20()),
        "robot12" => Ok(HandModel::robot12()),
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(CliError::MissingFile { path: path.to_string() });
            }
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{path}: {e}")))?;
            HandModel::from_toml_str(&text).map_err(|e| CliError::Config(format!("{path}: {e}")))
        }
    }
}
