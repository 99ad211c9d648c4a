use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, Randomisation};
use crate::error::{DncError, Result};

fn default_patience() -> usize {
    5
}

/// One training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    /// Augmentation of the training stream; its `seed` is replaced by one
    /// derived from the run seed, stage and epoch.
    pub augment: AugmentConfig,
    /// Optimiser updates between two dev evaluations.
    pub steps_per_epoch: usize,
    pub max_epochs: usize,
    /// Stop after this many consecutive evaluations without a lower dev loss.
    #[serde(default = "default_patience")]
    pub patience: usize,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        if self.steps_per_epoch == 0 || self.max_epochs == 0 {
            return Err(DncError::InvalidArgument(format!(
                "stage `{}` needs positive steps_per_epoch and max_epochs",
                self.name
            )));
        }
        Ok(())
    }

    fn is_sub_sequence_only(&self) -> bool {
        self.augment.randomisation == Randomisation::None && !self.augment.diaconis
    }
}

/// Stages of increasing sub-meeting length, optionally followed by a
/// fine-tuning stage that uses sub-sequence randomisation alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumPlan {
    pub stages: Vec<StageConfig>,
    #[serde(default)]
    pub fine_tune: Option<StageConfig>,
}

impl CurriculumPlan {
    pub fn single(stage: StageConfig) -> Self {
        Self { stages: vec![stage], fine_tune: None }
    }

    /// Stages of length 50, 200, 500 and full. The first uses fixed-length
    /// sub-meetings, later ones lengths between half and all of the maximum.
    /// The fine-tune stage repeats the last stage without input-vector
    /// randomisation or rotations.
    pub fn standard(template: &StageConfig, fine_tune: bool) -> Self {
        let stage = |name: &str, max_len: Option<usize>, min_len_fraction: f64| StageConfig {
            name: name.to_string(),
            augment: AugmentConfig { max_len, min_len_fraction, ..template.augment.clone() },
            ..template.clone()
        };
        let stages = vec![
            stage("len50", Some(50), 1.0),
            stage("len200", Some(200), 0.5),
            stage("len500", Some(500), 0.5),
            stage("full", None, 0.5),
        ];
        let fine_tune = fine_tune.then(|| {
            let mut ft = stage("fine-tune", None, 0.5);
            ft.augment.randomisation = Randomisation::None;
            ft.augment.diaconis = false;
            ft
        });
        Self { stages, fine_tune }
    }

    /// Stages in execution order, fine-tuning last.
    pub fn all_stages(&self) -> Vec<&StageConfig> {
        self.stages.iter().chain(self.fine_tune.as_ref()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(DncError::InvalidArgument("curriculum has no stages".into()));
        }
        for s in self.all_stages() {
            s.validate()?;
        }
        let key = |s: &StageConfig| s.augment.max_len.unwrap_or(usize::MAX);
        if self.stages.windows(2).any(|w| key(&w[1]) < key(&w[0])) {
            return Err(DncError::InvalidArgument("stage max_len must not decrease".into()));
        }
        if let Some(ft) = &self.fine_tune {
            if !ft.is_sub_sequence_only() {
                return Err(DncError::InvalidArgument(
                    "the fine-tune stage must use sub-sequence randomisation only".into(),
                ));
            }
        }
        Ok(())
    }
}
