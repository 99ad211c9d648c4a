use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use super::plan::{CurriculumPlan, StageConfig};
use super::schedule::LrSchedule;
use crate::augment::{build_training_set, TrainingExample};
use crate::error::{DncError, Result};
use crate::eval::{corpus_loss, decode_corpus, split_for_eval};
use crate::model::{Decoding, DncModel, ModelConfig, ModelParams, ParamSet};
use crate::rng::{self, tag};
use crate::score::batch_score;
use crate::types::MeetingRecord;

fn default_clip() -> Option<f64> {
    Some(5.0)
}

fn default_collar() -> f64 {
    crate::score::DEFAULT_COLLAR_S
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Sub-meetings per optimiser update.
    pub batch_size: usize,
    /// Scales the learning-rate schedule, see [`LrSchedule`].
    pub peak_factor: f64,
    pub warmup_steps: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Global gradient-norm limit.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_collar")]
    pub collar_s: f64,
    /// Also decode the dev set after every epoch to report its SER.
    #[serde(default = "default_true")]
    pub dev_ser: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(DncError::InvalidArgument("batch_size must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(DncError::InvalidArgument("clip_norm must be positive".into()));
        }
        if !(self.collar_s >= 0.0) {
            return Err(DncError::InvalidArgument("collar must be non-negative".into()));
        }
        LrSchedule::new(self.peak_factor, self.warmup_steps, 1).map(|_| ())
    }
}

/// Where the curriculum stands, including the early-stopping state of the
/// current stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StageProgress {
    pub stage: usize,
    /// Completed epochs of `stage`.
    pub epoch: usize,
    pub finished: bool,
    pub best_dev_loss: Option<f64>,
    pub best_dev_ser: Option<f64>,
    pub bad_evaluations: usize,
    pub best_params: Option<ModelParams>,
}

impl StageProgress {
    fn start(stage: usize) -> Self {
        Self { stage, ..Self::default() }
    }
}

/// One line of the training log, written after every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub stage: String,
    pub stage_index: usize,
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_ser: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: String,
    pub epochs: usize,
    pub best_dev_loss: f64,
    pub best_dev_ser: Option<f64>,
}

/// Model, optimiser and curriculum state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: DncModel,
    pub optimizer: AdamState<ModelParams>,
    pub config: TrainConfig,
    pub seed: u64,
    /// Optimiser updates taken so far.
    pub global_step: u64,
    pub progress: StageProgress,
}

impl Trainer {
    pub fn new(model_config: ModelConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        let model = DncModel::init(model_config, &mut rng::stream(seed, &[tag::INIT]))?;
        Self::from_model(model, config, seed)
    }

    pub fn from_model(model: DncModel, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            optimizer: AdamState::new(&model.params),
            model,
            config,
            seed,
            global_step: 0,
            progress: StageProgress::default(),
        })
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            peak_factor: self.config.peak_factor,
            warmup_steps: self.config.warmup_steps,
            dim_model: self.model.config.dim_model,
        }
    }

    /// One update on `batch`. The loss is the mean per-label NLL over all
    /// labels of the batch.
    pub fn train_step(&mut self, batch: &[TrainingExample]) -> Result<StepRecord> {
        if batch.is_empty() {
            return Err(DncError::InvalidArgument("empty batch".into()));
        }
        let tokens: usize = batch.iter().map(|e| e.labels.len()).sum();
        let weight = 1.0 / tokens as f64;
        let lr = self.schedule().lr(self.global_step + 1);
        let mut grads = self.model.params.zeros_like();
        let mut nll = 0.0;
        for (j, ex) in batch.iter().enumerate() {
            let drop_rng = (self.model.config.dropout > 0.0)
                .then(|| rng::stream(self.seed, &[tag::DROPOUT, self.global_step, j as u64]));
            nll += self.model.accumulate_gradients(ex.inputs.view(), ex.labels.as_slice(), weight, drop_rng, &mut grads)?;
        }
        let loss = nll * weight;
        if !loss.is_finite() {
            return Err(DncError::Diverged(format!("loss {loss} at step {} (lr {lr:.3e})", self.global_step + 1)));
        }
        let grad_norm = match self.config.clip_norm {
            Some(c) => clip_grad_norm(&mut grads, c),
            None => clip_grad_norm(&mut grads, f64::INFINITY),
        };
        adam_step(&mut self.model.params, &grads, &mut self.optimizer, lr, &self.config.adam).map_err(|e| match e {
            DncError::NonFiniteGradient(p) => {
                DncError::Diverged(format!("non-finite gradient in `{p}` at step {}", self.global_step + 1))
            }
            other => other,
        })?;
        self.global_step += 1;
        Ok(StepRecord { loss, lr, grad_norm })
    }

    /// Trains one stage with early stopping on the dev loss and leaves the
    /// best dev-loss parameters in the model. Resumes mid-stage when the
    /// progress state points at this stage.
    pub fn run_stage(
        &mut self,
        stage_index: usize,
        stage: &StageConfig,
        train: &[MeetingRecord],
        dev: &[MeetingRecord],
        log: &mut dyn FnMut(&Trainer, &ProgressRecord) -> Result<()>,
    ) -> Result<StageSummary> {
        stage.validate()?;
        if dev.is_empty() {
            return Err(DncError::InvalidArgument("empty dev corpus".into()));
        }
        if self.progress.stage != stage_index || self.progress.finished {
            self.progress = StageProgress::start(stage_index);
        }
        let dev_chunks = split_for_eval(dev, stage.augment.max_len)?;

        while !self.stage_done(stage) {
            let epoch = self.progress.epoch;
            let mut augment = stage.augment.clone();
            augment.seed = rng::derive_seed(self.seed, &[tag::AUGMENT, stage_index as u64, epoch as u64]);
            let set = build_training_set(train, &augment)?;
            let mut order: Vec<usize> = (0..set.len()).collect();
            order.shuffle(&mut rng::stream(self.seed, &[tag::SHUFFLE, stage_index as u64, epoch as u64]));

            let bs = self.config.batch_size;
            let (mut nll, mut tokens, mut lr) = (0.0, 0usize, 0.0);
            for step in 0..stage.steps_per_epoch {
                let batch = (0..bs)
                    .map(|j| set.example(order[(step * bs + j) % order.len()]))
                    .collect::<Result<Vec<_>>>()?;
                let n: usize = batch.iter().map(|e| e.labels.len()).sum();
                let rec = self.train_step(&batch)?;
                nll += rec.loss * n as f64;
                tokens += n;
                lr = rec.lr;
            }

            let dev_loss = corpus_loss(&self.model, &dev_chunks)?;
            if !dev_loss.is_finite() {
                return Err(DncError::Diverged(format!("dev loss {dev_loss} after step {}", self.global_step)));
            }
            let dev_ser = if self.config.dev_ser {
                let hyps = decode_corpus(&self.model, &dev_chunks, Decoding::Greedy)?;
                Some(batch_score(&dev_chunks, &hyps, self.config.collar_s)?.total.ser_percent)
            } else {
                None
            };
            let p = &mut self.progress;
            let improved = p.best_dev_loss.is_none_or(|b| dev_loss < b);
            if improved {
                p.best_dev_loss = Some(dev_loss);
                p.best_dev_ser = dev_ser;
                p.best_params = Some(self.model.params.clone());
                p.bad_evaluations = 0;
            } else {
                p.bad_evaluations += 1;
            }
            p.epoch += 1;
            let record = ProgressRecord {
                stage: stage.name.clone(),
                stage_index,
                epoch: p.epoch,
                step: self.global_step,
                lr,
                train_loss: nll / tokens as f64,
                dev_loss,
                dev_ser,
                improved,
            };
            log(self, &record)?;
        }

        let p = &mut self.progress;
        if let Some(best) = p.best_params.take() {
            self.model.params = best;
        }
        p.finished = true;
        Ok(StageSummary {
            stage: stage.name.clone(),
            epochs: p.epoch,
            best_dev_loss: p.best_dev_loss.unwrap_or(f64::NAN),
            best_dev_ser: p.best_dev_ser,
        })
    }

    fn stage_done(&self, stage: &StageConfig) -> bool {
        let p = &self.progress;
        p.epoch >= stage.max_epochs || (p.epoch > 0 && p.bad_evaluations >= stage.patience)
    }

    /// Runs every stage of `plan` that is not finished yet. `log` sees the
    /// trainer after every epoch, so it can also write checkpoints.
    pub fn run_curriculum(
        &mut self,
        plan: &CurriculumPlan,
        train: &[MeetingRecord],
        dev: &[MeetingRecord],
        log: &mut dyn FnMut(&Trainer, &ProgressRecord) -> Result<()>,
    ) -> Result<Vec<StageSummary>> {
        plan.validate()?;
        let mut out = Vec::new();
        for (i, stage) in plan.all_stages().into_iter().enumerate() {
            if i < self.progress.stage || (i == self.progress.stage && self.progress.finished) {
                continue;
            }
            out.push(self.run_stage(i, stage, train, dev, log)?);
        }
        Ok(out)
    }
}
