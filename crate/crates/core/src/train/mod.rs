//! Student training on replayed region labels.
//!
//! One physical pass visits every image once and draws `m` crops from each,
//! so it is worth `m` logical epochs. The same loop drives both label
//! sources: stored label files ([`train_student`]) and a teacher queried on
//! every region as it is materialized ([`vanilla_kd_reference`]). With
//! single-precision teacher outputs and `Full` storage the two produce the
//! same parameters bit for bit.

mod loss;
mod schedule;
mod sgd;
mod student;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use loss::{soft_ce_loss, LossOutput};
pub use schedule::{plateaus, Schedule, ScheduleKind};
pub use sgd::{sgd_step, SgdConfig};
pub use student::{Forward, Student};

use crate::error::{Error, Result};
use crate::numeric::{argmax, Temperature};
use crate::pipeline::{assemble_batch, pass_plans, prefetch, Batch, CropSamplerConfig, ImageSource, LabelRepository, Supervision};
use crate::teacher::Teacher;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub crops_per_image: usize,
    /// Physical passes `E`.
    pub passes: usize,
    pub base_lr: f64,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub sgd: SgdConfig,
    pub hidden: usize,
    /// Side of the regions fed to the student.
    pub resolution: usize,
    pub init_seed: u64,
    /// Seeds the per-pass image order and the in-batch shuffle.
    pub order_seed: u64,
    /// Softening temperature for logit targets.
    #[serde(default = "default_tau")]
    pub tau: Temperature,
}

fn default_schedule() -> ScheduleKind {
    ScheduleKind::SerratedCosine
}

fn default_tau() -> Temperature {
    Temperature::new(0.2).expect("positive")
}

impl TrainConfig {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.base_lr,
            passes: self.passes,
            crops_per_image: self.crops_per_image,
            kind: self.schedule.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule().validate()?;
        self.sgd.validate()?;
        if self.batch_size == 0 || self.batch_size % self.crops_per_image != 0 {
            return Err(Error::invalid(format!(
                "crops per image ({}) must divide the batch size ({})",
                self.crops_per_image, self.batch_size
            )));
        }
        if self.hidden == 0 || self.resolution == 0 {
            return Err(Error::invalid("hidden width and resolution must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Logical epoch.
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean training loss.
    pub loss: f64,
    /// Fraction of samples whose student argmax equals the target argmax.
    pub accuracy: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub student: Student,
    pub momentum: Vec<f64>,
    /// First physical pass not yet run.
    pub next_pass: usize,
    /// Loss of every optimizer step so far.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochMetrics>,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, channels: usize, classes: usize) -> Result<Self> {
        let inputs = cfg.resolution * cfg.resolution * channels;
        let student = Student::new(inputs, cfg.hidden, classes, cfg.init_seed)?;
        Ok(TrainState {
            momentum: vec![0.0; student.params().len()],
            student,
            next_pass: 0,
            step_losses: Vec::new(),
            epochs: Vec::new(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.student.validate()?;
        if self.momentum.len() != self.student.params().len() {
            return Err(Error::LengthMismatch {
                expected: self.student.params().len(),
                got: self.momentum.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Continue from this state instead of a fresh student.
    pub resume: Option<TrainState>,
    /// Stop once this many passes are complete.
    pub stop_after: Option<usize>,
    /// Batch-preparation threads; results do not depend on it.
    pub workers: usize,
}

/// Loss and correct predictions of one optimizer step.
fn train_step(state: &mut TrainState, batch: &Batch, lr: f64, cfg: &TrainConfig) -> Result<(f64, usize)> {
    let student = &state.student;
    let forwards = batch
        .regions
        .iter()
        .map(|r| student.forward(r.pixels()))
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<Vec<f64>> = forwards.iter().map(|f| f.logits.clone()).collect();
    let out = soft_ce_loss(&logits, &batch.targets, cfg.tau)?;
    let mut correct = 0;
    for (z, t) in logits.iter().zip(&batch.targets) {
        if argmax(z) == argmax(&t.distribution(cfg.tau)) {
            correct += 1;
        }
    }
    let mut grad = vec![0.0; student.params().len()];
    for ((region, fwd), dz) in batch.regions.iter().zip(&forwards).zip(&out.grad) {
        student.backward(region.pixels(), fwd, dz, &mut grad);
    }
    sgd_step(state.student.params_mut(), &mut state.momentum, &grad, lr, &cfg.sgd)?;
    Ok((out.loss, correct))
}

fn initial_state<S: ImageSource + ?Sized>(images: &S, supervision: Supervision<'_>, cfg: &TrainConfig) -> Result<TrainState> {
    if images.is_empty() {
        return Err(Error::invalid("no images to train on"));
    }
    let channels = images.load_image(0)?.channels();
    let classes = match supervision {
        Supervision::Stored(repo) => repo.load_labels(0)?.classes as usize,
        Supervision::Online { teacher, .. } => teacher.classes(),
    };
    TrainState::new(cfg, channels, classes)
}

/// Runs passes `state.next_pass ..` of the schedule with targets from
/// `supervision`.
pub fn train<S: ImageSource + ?Sized>(
    images: &S,
    supervision: Supervision<'_>,
    cfg: &TrainConfig,
    opts: RunOptions,
) -> Result<TrainState> {
    cfg.validate()?;
    let schedule = cfg.schedule();
    let mut state = match opts.resume {
        Some(s) => {
            s.validate()?;
            s
        }
        None => initial_state(images, supervision, cfg)?,
    };
    let end = opts.stop_after.unwrap_or(cfg.passes).min(cfg.passes);
    let m = cfg.crops_per_image;
    let workers = opts.workers.max(1);
    while state.next_pass < end {
        let pass = state.next_pass;
        let plans = pass_plans(images.len(), cfg.batch_size, m, pass, cfg.order_seed)?;
        let steps = plans.len();
        // per logical epoch of this pass: (loss · n, correct, n)
        let mut acc = vec![(0.0, 0usize, 0usize); m];
        prefetch(
            steps,
            workers,
            2 * workers,
            |i| assemble_batch(images, supervision, &plans[i], cfg.resolution, cfg.order_seed),
            |i, batch| {
                let local = i * m / steps;
                let lr = schedule.lr_at_logical_epoch(pass * m + local)?;
                let (loss, correct) = train_step(&mut state, &batch, lr, cfg)?;
                state.step_losses.push(loss);
                let a = &mut acc[local];
                a.0 += loss * batch.len() as f64;
                a.1 += correct;
                a.2 += batch.len();
                Ok(())
            },
        )?;
        for (local, (loss, correct, n)) in acc.into_iter().enumerate() {
            let epoch = pass * m + local;
            if n == 0 {
                log::warn!("logical epoch {epoch} received no steps ({steps} steps per pass, m={m})");
                continue;
            }
            state.epochs.push(EpochMetrics {
                epoch,
                lr: schedule.lr_at_logical_epoch(epoch)?,
                loss: loss / n as f64,
                accuracy: correct as f64 / n as f64,
                samples: n,
            });
        }
        log::info!(
            "pass {}/{} done, last loss {:.6}",
            pass + 1,
            cfg.passes,
            state.step_losses.last().copied().unwrap_or(f64::NAN)
        );
        state.next_pass += 1;
    }
    Ok(state)
}

/// Trains on stored label files.
pub fn train_student<S: ImageSource + ?Sized>(images: &S, labels: &dyn LabelRepository, cfg: &TrainConfig) -> Result<TrainState> {
    train(images, Supervision::Stored(labels), cfg, RunOptions::default())
}

/// The same loop with the teacher evaluated on every region at training
/// time. `sampler`, `stored_crops` and `label_seed` must be the values the
/// label store was generated with.
pub fn vanilla_kd_reference<S: ImageSource + ?Sized>(
    images: &S,
    teacher: &Teacher,
    sampler: &CropSamplerConfig,
    stored_crops: usize,
    label_seed: u64,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    let supervision = Supervision::Online {
        teacher,
        sampler,
        crops_per_image: stored_crops,
        seed: label_seed,
    };
    train(images, supervision, cfg, RunOptions::default())
}

pub const CHECKPOINT_HEADER: &str = "FKDCKPT 1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = serde_json::to_string(self).map_err(|e| Error::invalid(format!("checkpoint: {e}")))?;
        Ok(format!("{CHECKPOINT_HEADER}{body}\n").into_bytes())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|_| Error::invalid("checkpoint is not UTF-8"))?;
        let body = text
            .strip_prefix(CHECKPOINT_HEADER)
            .ok_or_else(|| Error::invalid("not a version 1 checkpoint"))?;
        let ckpt: Checkpoint = serde_json::from_str(body).map_err(|e| Error::invalid(format!("checkpoint: {e}")))?;
        ckpt.config.validate()?;
        ckpt.state.validate()?;
        Ok(ckpt)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// `epoch,lr,loss,accuracy` rows.
pub fn metrics_csv(epochs: &[EpochMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Error::invalid(format!("metrics csv: {e}"));
    w.write_record(["epoch", "lr", "loss", "accuracy"]).map_err(fail)?;
    for e in epochs {
        w.write_record([e.epoch.to_string(), e.lr.to_string(), e.loss.to_string(), e.accuracy.to_string()])
            .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("metrics csv: {e}")))?;
    String::from_utf8(bytes).map_err(|_| Error::invalid("metrics csv is not UTF-8"))
}
