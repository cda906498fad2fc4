//! Soft-label compression and recovery.
//!
//! A teacher distribution over `C` classes is reduced to one of:
//!
//! * `Full`: all `C` probabilities,
//! * `Hard`: the argmax class,
//! * `Smooth`: the argmax class and its probability; recovery spreads the
//!   remaining mass uniformly over the other `C − 1` classes,
//! * `MarginalSmooth(K)`: the top-K `(index, prob)` pairs; recovery spreads the
//!   remaining mass uniformly over the other `C − K` classes,
//! * `MarginalRenorm(K)`: the top-K pairs; recovery renormalizes them to sum
//!   to one and leaves every other class at exactly zero.
//!
//! Self-supervised teachers store raw logits (`SslLogits`), which are turned
//! into a distribution only at training time once the temperature is known.
//!
//! Ties are broken towards the lowest class index, both for the argmax and for
//! top-K selection, and marginal payloads are kept sorted by
//! `(prob desc, index asc)` so encoded files are byte-reproducible.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{argmax, softmax_raw, Logits, SoftLabel, Temperature, DISTRIBUTION_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum QuantizationMode {
    Full,
    Hard,
    Smooth,
    MarginalSmooth { k: u16 },
    MarginalRenorm { k: u16 },
    SslLogits,
}

impl QuantizationMode {
    /// On-disk mode code.
    pub fn code(self) -> u8 {
        match self {
            QuantizationMode::Full => 0,
            QuantizationMode::Hard => 1,
            QuantizationMode::Smooth => 2,
            QuantizationMode::MarginalSmooth { .. } => 3,
            QuantizationMode::MarginalRenorm { .. } => 4,
            QuantizationMode::SslLogits => 5,
        }
    }

    /// Top-K count, 0 for the non-marginal modes.
    pub fn k(self) -> u16 {
        match self {
            QuantizationMode::MarginalSmooth { k } | QuantizationMode::MarginalRenorm { k } => k,
            _ => 0,
        }
    }

    pub fn from_code(code: u8, k: u16) -> Option<Self> {
        Some(match code {
            0 => QuantizationMode::Full,
            1 => QuantizationMode::Hard,
            2 => QuantizationMode::Smooth,
            3 => QuantizationMode::MarginalSmooth { k },
            4 => QuantizationMode::MarginalRenorm { k },
            5 => QuantizationMode::SslLogits,
            _ => return None,
        })
    }

    /// Checks `1 ≤ K < C` for the marginal modes and `C ≥ 2` everywhere.
    pub fn validate(self, classes: usize) -> Result<()> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        let k = self.k() as usize;
        match self {
            QuantizationMode::MarginalSmooth { .. } | QuantizationMode::MarginalRenorm { .. }
                if k == 0 || k >= classes =>
            {
                Err(Error::invalid(format!(
                    "top-K must satisfy 1 <= K < C, got K={k}, C={classes}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Number of stored payload values per crop, as counted by the storage
    /// estimator (an index counts as one value).
    pub fn payload_values(self, classes: usize) -> usize {
        match self {
            QuantizationMode::Full | QuantizationMode::SslLogits => classes,
            QuantizationMode::Hard => 1,
            QuantizationMode::Smooth => 2,
            QuantizationMode::MarginalSmooth { k } | QuantizationMode::MarginalRenorm { k } => {
                2 * k as usize
            }
        }
    }

    pub fn is_ssl(self) -> bool {
        matches!(self, QuantizationMode::SslLogits)
    }
}

impl fmt::Display for QuantizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuantizationMode::Full => f.write_str("full"),
            QuantizationMode::Hard => f.write_str("hard"),
            QuantizationMode::Smooth => f.write_str("smooth"),
            QuantizationMode::MarginalSmooth { k } => write!(f, "marginal_smooth:{k}"),
            QuantizationMode::MarginalRenorm { k } => write!(f, "marginal_renorm:{k}"),
            QuantizationMode::SslLogits => f.write_str("ssl_logits"),
        }
    }
}

impl FromStr for QuantizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = match s.split_once(':') {
            Some((name, k)) => {
                let k = k
                    .trim()
                    .parse::<u16>()
                    .map_err(|_| Error::invalid(format!("bad top-K in mode {s:?}")))?;
                (name.trim(), Some(k))
            }
            None => (s.trim(), None),
        };
        let mode = match (name, k) {
            ("full", None) => QuantizationMode::Full,
            ("hard", None) => QuantizationMode::Hard,
            ("smooth", None) => QuantizationMode::Smooth,
            ("ssl_logits" | "ssl", None) => QuantizationMode::SslLogits,
            ("marginal_smooth" | "ms", Some(k)) => QuantizationMode::MarginalSmooth { k },
            ("marginal_renorm" | "mr", Some(k)) => QuantizationMode::MarginalRenorm { k },
            _ => {
                return Err(Error::invalid(format!(
                    "unknown quantization mode {s:?} (expected full, hard, smooth, \
                     marginal_smooth:K, marginal_renorm:K or ssl_logits)"
                )))
            }
        };
        Ok(mode)
    }
}

impl TryFrom<String> for QuantizationMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<QuantizationMode> for String {
    fn from(m: QuantizationMode) -> Self {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopEntry {
    pub index: u32,
    pub prob: f64,
}

/// The stored form of one crop's label.
#[derive(Debug, Clone, PartialEq)]
pub enum CompressedLabel {
    Full(Vec<f64>),
    Hard(u32),
    Smooth { index: u32, prob: f64 },
    MarginalSmooth(Vec<TopEntry>),
    MarginalRenorm(Vec<TopEntry>),
    SslLogits(Vec<f64>),
}

/// Training-time target for one crop.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Probs(SoftLabel),
    /// Teacher logits; softmax with the training temperature is applied by the loss.
    Logits(Logits),
}

impl Target {
    /// The distribution this target stands for at temperature `tau`.
    pub fn distribution(&self, tau: Temperature) -> Vec<f64> {
        match self {
            Target::Probs(p) => p.probs().to_vec(),
            Target::Logits(z) => softmax_raw(z.values(), tau.get()),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Target::Probs(p) => p.len(),
            Target::Logits(z) => z.len(),
        }
    }
}

impl CompressedLabel {
    pub fn mode(&self) -> QuantizationMode {
        match self {
            CompressedLabel::Full(_) => QuantizationMode::Full,
            CompressedLabel::Hard(_) => QuantizationMode::Hard,
            CompressedLabel::Smooth { .. } => QuantizationMode::Smooth,
            CompressedLabel::MarginalSmooth(e) => QuantizationMode::MarginalSmooth {
                k: e.len() as u16,
            },
            CompressedLabel::MarginalRenorm(e) => QuantizationMode::MarginalRenorm {
                k: e.len() as u16,
            },
            CompressedLabel::SslLogits(_) => QuantizationMode::SslLogits,
        }
    }

    /// Checks the payload against `classes`: lengths, index range and
    /// uniqueness, probability range and marginal ordering.
    pub fn validate(&self, classes: usize) -> Result<()> {
        self.mode().validate(classes)?;
        let check_index = |index: u32| -> Result<()> {
            if index as usize >= classes {
                Err(Error::OutOfBounds(format!(
                    "class index {index} for {classes} classes"
                )))
            } else {
                Ok(())
            }
        };
        let check_prob = |p: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&p) {
                Err(Error::InvalidDistribution(format!(
                    "stored probability {p} outside [0, 1]"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            CompressedLabel::Full(probs) => {
                if probs.len() != classes {
                    return Err(Error::LengthMismatch {
                        expected: classes,
                        got: probs.len(),
                    });
                }
                SoftLabel::new(probs.clone()).map(|_| ())
            }
            CompressedLabel::SslLogits(z) => {
                if z.len() != classes {
                    return Err(Error::LengthMismatch {
                        expected: classes,
                        got: z.len(),
                    });
                }
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("stored logits"));
                }
                Ok(())
            }
            CompressedLabel::Hard(index) => check_index(*index),
            CompressedLabel::Smooth { index, prob } => {
                check_index(*index)?;
                check_prob(*prob)
            }
            CompressedLabel::MarginalSmooth(entries) | CompressedLabel::MarginalRenorm(entries) => {
                let mut seen = vec![false; classes];
                let mut mass = 0.0;
                for (n, e) in entries.iter().enumerate() {
                    check_index(e.index)?;
                    check_prob(e.prob)?;
                    if std::mem::replace(&mut seen[e.index as usize], true) {
                        return Err(Error::invalid(format!("duplicate class index {}", e.index)));
                    }
                    if n > 0 {
                        let prev = entries[n - 1];
                        if prev.prob < e.prob || (prev.prob == e.prob && prev.index > e.index) {
                            return Err(Error::invalid(
                                "top-K entries not sorted by (prob desc, index asc)",
                            ));
                        }
                    }
                    mass += e.prob;
                }
                if mass > 1.0 + DISTRIBUTION_TOLERANCE {
                    return Err(Error::InvalidDistribution(format!(
                        "top-K mass {mass} exceeds 1"
                    )));
                }
                if matches!(self, CompressedLabel::MarginalRenorm(_)) && mass <= 0.0 {
                    return Err(Error::InvalidDistribution("top-K mass is zero".into()));
                }
                Ok(())
            }
        }
    }

    /// Rounds every stored real to the nearest 32-bit float, the precision
    /// of the on-disk format.
    pub fn to_storage_precision(&self) -> CompressedLabel {
        let r = |v: f64| v as f32 as f64;
        let round_entries =
            |e: &[TopEntry]| e.iter().map(|e| TopEntry { index: e.index, prob: r(e.prob) }).collect();
        match self {
            CompressedLabel::Full(p) => CompressedLabel::Full(p.iter().map(|v| r(*v)).collect()),
            CompressedLabel::SslLogits(z) => {
                CompressedLabel::SslLogits(z.iter().map(|v| r(*v)).collect())
            }
            CompressedLabel::Hard(i) => CompressedLabel::Hard(*i),
            CompressedLabel::Smooth { index, prob } => CompressedLabel::Smooth {
                index: *index,
                prob: r(*prob),
            },
            CompressedLabel::MarginalSmooth(e) => CompressedLabel::MarginalSmooth(round_entries(e)),
            CompressedLabel::MarginalRenorm(e) => CompressedLabel::MarginalRenorm(round_entries(e)),
        }
    }

    /// Recovers the full `classes`-way distribution. SSL logits have no
    /// distribution until a temperature is chosen; use [`Self::to_target`].
    pub fn recover(&self, classes: usize) -> Result<SoftLabel> {
        recover(self, classes)
    }

    pub fn to_target(&self, classes: usize) -> Result<Target> {
        match self {
            CompressedLabel::SslLogits(z) => {
                if z.len() != classes {
                    return Err(Error::LengthMismatch {
                        expected: classes,
                        got: z.len(),
                    });
                }
                Ok(Target::Logits(Logits::new(z.clone())?))
            }
            other => Ok(Target::Probs(recover(other, classes)?)),
        }
    }
}

/// Argmax of the logits.
pub fn harden(z: &Logits) -> CompressedLabel {
    CompressedLabel::Hard(argmax(z.values()) as u32)
}

pub fn smooth(p: &SoftLabel) -> Result<CompressedLabel> {
    if p.len() < 2 {
        return Err(Error::invalid("smoothing needs at least 2 classes"));
    }
    let index = p.argmax();
    Ok(CompressedLabel::Smooth {
        index: index as u32,
        prob: p.probs()[index],
    })
}

/// Top-K `(index, prob)` pairs ordered by `(prob desc, index asc)`.
pub fn top_k(probs: &[f64], k: usize) -> Vec<TopEntry> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k)
        .map(|i| TopEntry {
            index: i as u32,
            prob: probs[i],
        })
        .collect()
}

fn check_k(p: &SoftLabel, k: usize) -> Result<()> {
    if k == 0 || k >= p.len() {
        return Err(Error::invalid(format!(
            "top-K must satisfy 1 <= K < C, got K={k}, C={}",
            p.len()
        )));
    }
    Ok(())
}

pub fn marginal_smooth(p: &SoftLabel, k: usize) -> Result<CompressedLabel> {
    check_k(p, k)?;
    Ok(CompressedLabel::MarginalSmooth(top_k(p.probs(), k)))
}

pub fn marginal_renorm(p: &SoftLabel, k: usize) -> Result<CompressedLabel> {
    check_k(p, k)?;
    let entries = top_k(p.probs(), k);
    if entries.iter().map(|e| e.prob).sum::<f64>() <= 0.0 {
        return Err(Error::InvalidDistribution("top-K mass is zero".into()));
    }
    Ok(CompressedLabel::MarginalRenorm(entries))
}

/// Compresses a supervised distribution. `Hard` uses the argmax of the
/// probabilities; prefer [`harden`] when the logits are at hand.
pub fn compress(mode: QuantizationMode, p: &SoftLabel) -> Result<CompressedLabel> {
    mode.validate(p.len())?;
    match mode {
        QuantizationMode::Full => Ok(CompressedLabel::Full(p.probs().to_vec())),
        QuantizationMode::Hard => Ok(CompressedLabel::Hard(p.argmax() as u32)),
        QuantizationMode::Smooth => smooth(p),
        QuantizationMode::MarginalSmooth { k } => marginal_smooth(p, k as usize),
        QuantizationMode::MarginalRenorm { k } => marginal_renorm(p, k as usize),
        QuantizationMode::SslLogits => Err(Error::invalid(
            "SSL labels store raw logits and cannot be compressed from probabilities",
        )),
    }
}

/// Spreads `1 − mass` evenly over `others` classes. Excess mass within the
/// distribution tolerance is treated as rounding and yields zero.
fn residual(mass: f64, others: usize) -> Result<f64> {
    let r = (1.0 - mass) / others as f64;
    if r >= 0.0 {
        Ok(r)
    } else if mass <= 1.0 + DISTRIBUTION_TOLERANCE {
        Ok(0.0)
    } else {
        Err(Error::InvalidDistribution(format!(
            "stored mass {mass} exceeds 1"
        )))
    }
}

pub fn recover(c: &CompressedLabel, classes: usize) -> Result<SoftLabel> {
    c.validate(classes)?;
    let probs = match c {
        CompressedLabel::Full(p) => p.clone(),
        CompressedLabel::Hard(index) => {
            let mut v = vec![0.0; classes];
            v[*index as usize] = 1.0;
            v
        }
        CompressedLabel::Smooth { index, prob } => {
            let rest = residual(*prob, classes - 1)?;
            let mut v = vec![rest; classes];
            v[*index as usize] = *prob;
            v
        }
        CompressedLabel::MarginalSmooth(entries) => {
            let mass = entries.iter().fold(0.0, |acc, e| acc + e.prob);
            let rest = residual(mass, classes - entries.len())?;
            let mut v = vec![rest; classes];
            for e in entries {
                v[e.index as usize] = e.prob;
            }
            v
        }
        CompressedLabel::MarginalRenorm(entries) => {
            let mass = entries.iter().fold(0.0, |acc, e| acc + e.prob);
            let mut v = vec![0.0; classes];
            for e in entries {
                v[e.index as usize] = e.prob / mass;
            }
            v
        }
        CompressedLabel::SslLogits(_) => {
            return Err(Error::invalid(
                "SSL logits need a training temperature; use to_target()",
            ))
        }
    };
    SoftLabel::new(probs)
}
