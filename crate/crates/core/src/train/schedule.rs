use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    /// Cosine decay evaluated once per physical pass.
    SerratedCosine,
    /// `base_lr · gamma^k` after the k-th milestone; milestones are logical
    /// epochs.
    StepMilestones { milestones: Vec<usize>, gamma: f64 },
}

/// Learning-rate schedule over `passes` physical passes of
/// `crops_per_image` logical epochs each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub base_lr: f64,
    pub passes: usize,
    pub crops_per_image: usize,
    pub kind: ScheduleKind,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!("base lr {} must be finite and non-negative", self.base_lr)));
        }
        if self.passes == 0 || self.crops_per_image == 0 {
            return Err(Error::invalid("schedule needs at least one pass and one crop per image"));
        }
        if let ScheduleKind::StepMilestones { milestones, gamma } = &self.kind {
            if !(*gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::invalid(format!("step gamma {gamma} must be positive")));
            }
            if milestones.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid("milestones must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn logical_epochs(&self) -> usize {
        self.passes * self.crops_per_image
    }

    /// Rate used throughout physical pass `pass` under the cosine schedule,
    /// or at its first logical epoch under milestones.
    pub fn lr_at_pass(&self, pass: usize) -> Result<f64> {
        if pass >= self.passes {
            return Err(Error::OutOfBounds(format!("pass {pass} of {}", self.passes)));
        }
        self.lr_at_logical_epoch(pass * self.crops_per_image)
    }

    /// Rate at logical epoch `epoch`. The cosine schedule only sees the
    /// physical pass `epoch / m`, so it is constant across each pass.
    pub fn lr_at_logical_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.logical_epochs() {
            return Err(Error::OutOfBounds(format!(
                "logical epoch {epoch} of {}",
                self.logical_epochs()
            )));
        }
        Ok(match &self.kind {
            ScheduleKind::SerratedCosine => {
                let e = (epoch / self.crops_per_image) as f64;
                self.base_lr * 0.5 * (1.0 + (PI * e / self.passes as f64).cos())
            }
            ScheduleKind::StepMilestones { milestones, gamma } => {
                let k = milestones.iter().filter(|&&m| m <= epoch).count();
                self.base_lr * gamma.powi(k as i32)
            }
        })
    }

    /// Rate at every logical epoch of the run.
    pub fn sequence(&self) -> Result<Vec<f64>> {
        (0..self.logical_epochs()).map(|t| self.lr_at_logical_epoch(t)).collect()
    }
}

/// Number of maximal runs of equal consecutive values.
pub fn plateaus(seq: &[f64]) -> usize {
    if seq.is_empty() {
        return 0;
    }
    1 + seq.windows(2).filter(|w| w[0].to_bits() != w[1].to_bits()).count()
}
