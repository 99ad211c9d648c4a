//! Versioned JSON checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::trainer::{StageProgress, TrainConfig, Trainer};
use super::adam::AdamState;
use crate::error::{DncError, Result};
use crate::model::{DncModel, ModelConfig, ModelParams, ParamSet};

pub const CHECKPOINT_FORMAT: &str = "dnc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub master_seed: u64,
    pub global_step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumState {
    pub stage: usize,
    pub epoch: usize,
    pub finished: bool,
    pub best_dev_loss: Option<f64>,
    pub best_dev_ser: Option<f64>,
    pub bad_evaluations: usize,
    pub best_params: Option<Vec<NamedTensor>>,
}

/// Everything needed to resume training or to decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: Vec<NamedTensor>,
    pub optimizer: OptimizerState,
    pub rng: RngState,
    pub curriculum: CurriculumState,
}

pub fn to_named<P: ParamSet>(p: &P) -> Vec<NamedTensor> {
    p.tensors()
        .into_iter()
        .map(|(name, t)| NamedTensor { name, shape: [t.nrows(), t.ncols()], data: t.iter().copied().collect() })
        .collect()
}

/// Rebuilds parameters for `cfg` from named tensors; every expected name
/// must be present exactly once with the expected shape.
pub fn from_named(cfg: &ModelConfig, named: &[NamedTensor]) -> Result<ModelParams> {
    let mut by_name: BTreeMap<&str, &NamedTensor> = BTreeMap::new();
    for t in named {
        if by_name.insert(&t.name, t).is_some() {
            return Err(DncError::Validation(format!("tensor `{}` appears twice", t.name)));
        }
    }
    let mut params = ModelParams::init(cfg, &mut crate::rng::stream(0, &[]));
    let mut used = 0;
    for (name, slot) in params.tensors_mut() {
        let t = by_name.get(name.as_str()).ok_or_else(|| DncError::Validation(format!("tensor `{name}` is missing")))?;
        if t.shape != [slot.nrows(), slot.ncols()] {
            return Err(DncError::Validation(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape,
                slot.dim()
            )));
        }
        *slot = Array2::from_shape_vec(slot.raw_dim(), t.data.clone())
            .map_err(|_| DncError::Validation(format!("tensor `{name}` has {} values", t.data.len())))?;
        used += 1;
    }
    if used != by_name.len() {
        let expected: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        let extra = by_name.keys().find(|k| !expected.iter().any(|e| e == *k)).copied().unwrap_or("?");
        return Err(DncError::Validation(format!("unexpected tensor `{extra}`")));
    }
    Ok(params)
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        let p = &t.progress;
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            model: t.model.config.clone(),
            train: t.config.clone(),
            params: to_named(&t.model.params),
            optimizer: OptimizerState {
                step: t.optimizer.step,
                m: to_named(&t.optimizer.m),
                v: to_named(&t.optimizer.v),
            },
            rng: RngState { master_seed: t.seed, global_step: t.global_step },
            curriculum: CurriculumState {
                stage: p.stage,
                epoch: p.epoch,
                finished: p.finished,
                best_dev_loss: p.best_dev_loss,
                best_dev_ser: p.best_dev_ser,
                bad_evaluations: p.bad_evaluations,
                best_params: p.best_params.as_ref().map(to_named),
            },
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        self.check_header()?;
        self.model.validate()?;
        self.train.validate()?;
        let params = from_named(&self.model, &self.params)?;
        let optimizer = AdamState {
            step: self.optimizer.step,
            m: from_named(&self.model, &self.optimizer.m)?,
            v: from_named(&self.model, &self.optimizer.v)?,
        };
        let c = self.curriculum;
        let best_params = c.best_params.as_deref().map(|b| from_named(&self.model, b)).transpose()?;
        Ok(Trainer {
            model: DncModel::new(self.model, params)?,
            optimizer,
            config: self.train,
            seed: self.rng.master_seed,
            global_step: self.rng.global_step,
            progress: StageProgress {
                stage: c.stage,
                epoch: c.epoch,
                finished: c.finished,
                best_dev_loss: c.best_dev_loss,
                best_dev_ser: c.best_dev_ser,
                bad_evaluations: c.bad_evaluations,
                best_params,
            },
        })
    }

    /// The model alone.
    pub fn into_model(self) -> Result<DncModel> {
        self.check_header()?;
        self.model.validate()?;
        let params = from_named(&self.model, &self.params)?;
        DncModel::new(self.model, params)
    }

    fn check_header(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(DncError::Validation(format!(
                "unsupported checkpoint {} v{}, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}",
                self.format, self.version
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and fully validates a checkpoint document.
    pub fn parse(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        cp.clone().into_trainer()?;
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
