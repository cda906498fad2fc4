//! Teachers map a crop-resized region to class logits.
//!
//! Two deterministic teachers stand in for a pretrained network:
//!
//! * `SyntheticMlp`: a two-layer tanh perceptron with weights drawn from the
//!   seed.
//! * `Tabular`: a linear template matcher. Each class owns a field over a
//!   coarse `cells × cells` grid of the region (one weight per channel); the
//!   logit is the gain times the mean over pixels of `field · pixel`. Seeded
//!   fields follow the class colour palette with a seeded spatial jitter, so
//!   synthetic images drawn with the same palette have predictable labels.
//!
//! Outputs are emitted in single precision (rounded to the nearest `f32`),
//! like a real network's, which is what lets stored labels replay bit-exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Region;
use crate::numeric::{softmax, Logits, SoftLabel, Temperature};
use crate::rng::{Stream, Uniform01};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    SyntheticMlp,
    Tabular,
}

/// What the teacher's labels are stored as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Post-softmax probabilities.
    #[default]
    Supervised,
    /// Raw logits; the temperature is applied at training time.
    Ssl,
}

fn default_hidden() -> usize {
    64
}
fn default_cells() -> usize {
    4
}
fn default_gain() -> f64 {
    8.0
}
fn default_jitter() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    pub kind: TeacherKind,
    pub seed: u64,
    pub classes: usize,
    #[serde(default)]
    pub mode: LabelMode,
    /// Side of the square input region.
    pub resolution: usize,
    pub channels: usize,
    /// Hidden width of the synthetic MLP.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Side of the tabular field grid.
    #[serde(default = "default_cells")]
    pub cells: usize,
    /// Logit scale of the tabular teacher.
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// Relative spatial jitter of seeded tabular fields.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

impl TeacherSpec {
    pub fn tabular(seed: u64, classes: usize, resolution: usize, channels: usize) -> Self {
        TeacherSpec {
            kind: TeacherKind::Tabular,
            seed,
            classes,
            mode: LabelMode::Supervised,
            resolution,
            channels,
            hidden: default_hidden(),
            cells: default_cells(),
            gain: default_gain(),
            jitter: default_jitter(),
        }
    }

    pub fn mlp(seed: u64, classes: usize, resolution: usize, channels: usize) -> Self {
        TeacherSpec {
            kind: TeacherKind::SyntheticMlp,
            ..TeacherSpec::tabular(seed, classes, resolution, channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("teacher needs at least 2 classes"));
        }
        if self.resolution == 0 || self.channels == 0 {
            return Err(Error::invalid("teacher input shape must be positive"));
        }
        match self.kind {
            TeacherKind::SyntheticMlp if self.hidden == 0 => {
                Err(Error::invalid("MLP teacher needs a hidden layer"))
            }
            TeacherKind::Tabular if self.cells == 0 || self.cells > self.resolution => Err(
                Error::invalid("tabular cells must be in 1..=resolution"),
            ),
            _ if !self.gain.is_finite() || !self.jitter.is_finite() => {
                Err(Error::NonFinite("teacher spec"))
            }
            _ => Ok(()),
        }
    }

    pub fn input_len(&self) -> usize {
        self.resolution * self.resolution * self.channels
    }
}

/// Colour signature of every class: `0.5 + 0.5·cos(2π(c/C − k/ch))` for
/// channel `k`, a hue wheel when `ch = 3`.
pub fn class_palette(classes: usize, channels: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            (0..channels)
                .map(|k| {
                    let phase = c as f64 / classes as f64 - k as f64 / channels as f64;
                    0.5 + 0.5 * (std::f64::consts::TAU * phase).cos()
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub hidden: usize,
    /// `hidden × input`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `classes × hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Net {
    Mlp(MlpWeights),
    /// `classes × cells × cells × channels`.
    Tabular { fields: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    spec: TeacherSpec,
    net: Net,
}

impl Teacher {
    pub fn from_spec(spec: &TeacherSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = Stream::new(spec.seed, &[0x7eac_4e72]);
        let net = match spec.kind {
            TeacherKind::SyntheticMlp => {
                let input = spec.input_len();
                let a1 = (3.0 / input as f64).sqrt();
                let a2 = (3.0 / spec.hidden as f64).sqrt() * 2.0;
                let mut draw = |n: usize, a: f64| -> Vec<f64> {
                    (0..n).map(|_| a * (2.0 * rng.uniform01() - 1.0)).collect()
                };
                let w1 = draw(spec.hidden * input, a1);
                let b1 = draw(spec.hidden, 0.1);
                let w2 = draw(spec.classes * spec.hidden, a2);
                let b2 = draw(spec.classes, 0.1);
                Net::Mlp(MlpWeights {
                    hidden: spec.hidden,
                    w1,
                    b1,
                    w2,
                    b2,
                })
            }
            TeacherKind::Tabular => {
                let palette = class_palette(spec.classes, spec.channels);
                let cells = spec.cells;
                let mut fields = Vec::with_capacity(spec.classes * cells * cells * spec.channels);
                for signature in &palette {
                    let norm = signature.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    for _ in 0..cells * cells {
                        let scale = 1.0 + spec.jitter * (rng.uniform01() - 0.5);
                        fields.extend(signature.iter().map(|v| scale * v / norm));
                    }
                }
                Net::Tabular { fields }
            }
        };
        Ok(Teacher {
            spec: spec.clone(),
            net,
        })
    }

    /// A tabular teacher with explicit fields laid out as
    /// `classes × cells × cells × channels`.
    pub fn tabular_from_fields(spec: &TeacherSpec, fields: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if spec.kind != TeacherKind::Tabular {
            return Err(Error::invalid("explicit fields need a tabular spec"));
        }
        let expected = spec.classes * spec.cells * spec.cells * spec.channels;
        if fields.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: fields.len(),
            });
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tabular fields"));
        }
        Ok(Teacher {
            spec: spec.clone(),
            net: Net::Tabular { fields },
        })
    }

    pub fn spec(&self) -> &TeacherSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn mlp_weights(&self) -> Option<&MlpWeights> {
        match &self.net {
            Net::Mlp(w) => Some(w),
            Net::Tabular { .. } => None,
        }
    }

    pub fn tabular_fields(&self) -> Option<&[f64]> {
        match &self.net {
            Net::Tabular { fields } => Some(fields),
            Net::Mlp(_) => None,
        }
    }

    pub fn logits(&self, region: &Region) -> Result<Logits> {
        teacher_logits(self, region)
    }

    pub fn soft_label(&self, region: &Region, tau: Temperature) -> Result<TeacherOutput> {
        teacher_soft_label(self, region, tau)
    }
}

/// The label a teacher emits for storage.
#[derive(Debug, Clone, PartialEq)]
pub enum TeacherOutput {
    Probs(SoftLabel),
    Logits(Logits),
}

fn raw_logits(t: &Teacher, region: &Region) -> Vec<f64> {
    let spec = &t.spec;
    let x = region.pixels();
    match &t.net {
        Net::Mlp(w) => {
            let input = x.len();
            let hidden: Vec<f64> = (0..w.hidden)
                .map(|j| {
                    let row = &w.w1[j * input..(j + 1) * input];
                    let pre = row.iter().zip(x).fold(w.b1[j], |acc, (a, b)| acc + a * b);
                    pre.tanh()
                })
                .collect();
            (0..spec.classes)
                .map(|c| {
                    let row = &w.w2[c * w.hidden..(c + 1) * w.hidden];
                    row.iter().zip(&hidden).fold(w.b2[c], |acc, (a, b)| acc + a * b)
                })
                .collect()
        }
        Net::Tabular { fields } => {
            let (r, ch, cells) = (spec.resolution, spec.channels, spec.cells);
            let per_class = cells * cells * ch;
            let norm = spec.gain / (r * r) as f64;
            (0..spec.classes)
                .map(|c| {
                    let field = &fields[c * per_class..(c + 1) * per_class];
                    let mut acc = 0.0;
                    for row in 0..r {
                        let cy = row * cells / r;
                        for col in 0..r {
                            let cx = col * cells / r;
                            let f = &field[(cy * cells + cx) * ch..(cy * cells + cx + 1) * ch];
                            let p = &x[(row * r + col) * ch..(row * r + col + 1) * ch];
                            for k in 0..ch {
                                acc += f[k] * p[k];
                            }
                        }
                    }
                    acc * norm
                })
                .collect()
        }
    }
}

/// Logits of `region`, rounded to single precision.
pub fn teacher_logits(t: &Teacher, region: &Region) -> Result<Logits> {
    let spec = &t.spec;
    if region.resolution() != spec.resolution || region.channels() != spec.channels {
        return Err(Error::invalid(format!(
            "region is {r}x{r}x{c}, teacher expects {er}x{er}x{ec}",
            r = region.resolution(),
            c = region.channels(),
            er = spec.resolution,
            ec = spec.channels
        )));
    }
    let z = raw_logits(t, region);
    Logits::new(z.into_iter().map(|v| v as f32 as f64).collect())
}

/// Supervised teachers emit `softmax(logits, τ)` rounded to single
/// precision; SSL teachers pass the logits through untouched.
pub fn teacher_soft_label(t: &Teacher, region: &Region, tau: Temperature) -> Result<TeacherOutput> {
    let z = teacher_logits(t, region)?;
    Ok(match t.spec.mode {
        LabelMode::Ssl => TeacherOutput::Logits(z),
        LabelMode::Supervised => TeacherOutput::Probs(supervised_label(&z, tau)?),
    })
}

/// Single-precision softmax used for stored supervised labels.
pub fn supervised_label(z: &Logits, tau: Temperature) -> Result<SoftLabel> {
    let p = softmax(z, tau);
    SoftLabel::new(p.into_vec().into_iter().map(|v| v as f32 as f64).collect())
}
