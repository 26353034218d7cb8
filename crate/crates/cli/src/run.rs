//! Resolved command plans and the `run.json` record written by every run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use shadeforge::complexity::ComplexityConfig;
use shadeforge::model::{ModelConfig, Variant};
use shadeforge::synth::GenConfig;
use shadeforge::training::TrainConfig;

use crate::corpus::CorpusSel;

pub const RUN_FILE: &str = "run.json";

/// Raised for bad arguments or invalid inputs; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratePlan {
    pub n: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub gen_config: GenConfig,
    /// Re-render an existing manifest instead of sampling new scenes.
    pub from_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzePlan {
    pub corpus: CorpusSel,
    pub report: PathBuf,
    pub config: ComplexityConfig,
    pub heatmap: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub corpus: CorpusSel,
    pub ckpt: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub resume: Option<PathBuf>,
    pub max_steps: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub validate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictions {
    Checkpoint(PathBuf),
    Directory(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub corpus: CorpusSel,
    pub predictions: Predictions,
    pub report: PathBuf,
    pub mae_lab: bool,
    pub method: String,
    pub save_predictions: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovePlan {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub ckpt: PathBuf,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblatePlan {
    pub corpus: CorpusSel,
    pub variants: Vec<Variant>,
    pub steps: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub report: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "plan", rename_all = "snake_case")]
pub enum Plan {
    Generate(GeneratePlan),
    Analyze(AnalyzePlan),
    Train(TrainPlan),
    Eval(EvalPlan),
    Remove(RemovePlan),
    Ablate(AblatePlan),
}

impl Plan {
    /// Where this run's `run.json` goes.
    pub fn record_dir(&self) -> PathBuf {
        match self {
            Plan::Generate(p) => p.out.clone(),
            Plan::Analyze(p) => p.report.clone(),
            Plan::Train(p) => p.ckpt.clone(),
            Plan::Eval(p) => p.report.clone(),
            Plan::Remove(p) => p
                .out
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
            Plan::Ablate(p) => p.report.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub argv: Vec<String>,
    pub threads: usize,
    #[serde(flatten)]
    pub plan: Plan,
}

impl RunRecord {
    pub fn new(plan: Plan) -> Self {
        RunRecord {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            argv: std::env::args().collect(),
            threads: rayon::current_num_threads(),
            plan,
        }
    }

    pub fn write(&self) -> Result<PathBuf> {
        let dir = self.plan.record_dir();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RUN_FILE);
        fs::write(&path, serde_json::to_vec_pretty(self)?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| usage(format!("{} is not a run record: {e}", path.display())))
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// `defaults` with the JSON `overlay` merged on top, key by key.
pub fn overlay<T: Serialize + DeserializeOwned>(defaults: &T, overlay: Option<&Value>) -> Result<T> {
    let Some(o) = overlay else {
        return Ok(serde_json::from_value(serde_json::to_value(defaults)?)?);
    };
    let mut v = serde_json::to_value(defaults)?;
    merge(&mut v, o);
    serde_json::from_value(v).map_err(|e| usage(format!("invalid configuration: {e}")))
}

pub fn read_config_file(path: Option<&Path>) -> Result<Option<Value>> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !v.is_object() {
        return Err(usage(format!("config {} must be a JSON object", path.display())));
    }
    Ok(Some(v))
}

/// The `key` section of a config file, if any.
pub fn section<'a>(config: Option<&'a Value>, key: &str) -> Option<&'a Value> {
    config.and_then(|c| c.get(key))
}
