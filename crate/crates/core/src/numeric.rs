//! Numeric kernels shared by the whole pipeline: temperature softmax,
//! cross-entropy between label distributions and bilinear sampling.
//!
//! Interpolation uses the half-pixel-center convention everywhere: on a grid
//! of `width × height` cells, cell `(i, j)` has its center at continuous
//! coordinate `(j + 0.5, i + 0.5)` and the grid covers `[0, width] × [0, height]`.
//! Queries between the outermost centers and the grid edge clamp to the edge
//! cell, as RoI-align implementations do.
//!
//! All reductions accumulate in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking their log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Tolerance on `Σ p = 1` for a [`SoftLabel`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Unnormalized class scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "logits need at least 2 classes, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits"));
        }
        Ok(Logits(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Logits {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Logits::new(v)
    }
}

impl From<Logits> for Vec<f64> {
    fn from(l: Logits) -> Self {
        l.0
    }
}

/// A probability distribution over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    /// Validates non-negativity and `|Σ p − 1| ≤ 1e-6`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("soft label"));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| **p < 0.0 || **p > 1.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} = {p} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(SoftLabel(probs))
    }

    pub fn one_hot(index: usize, classes: usize) -> Result<Self> {
        if index >= classes {
            return Err(Error::OutOfBounds(format!(
                "class {index} for {classes} classes"
            )));
        }
        let mut v = vec![0.0; classes];
        v[index] = 1.0;
        Ok(SoftLabel(v))
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidDistribution("empty".into()));
        }
        Ok(SoftLabel(vec![1.0 / classes as f64; classes]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for SoftLabel {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        SoftLabel::new(v)
    }
}

impl From<SoftLabel> for Vec<f64> {
    fn from(l: SoftLabel) -> Self {
        l.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::invalid(format!("temperature must be > 0, got {tau}")));
        }
        Ok(Temperature(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::ONE
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Temperature::new(v)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> Self {
        t.0
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax of `values / tau` written into a fresh vector.
pub(crate) fn softmax_raw(values: &[f64], tau: f64) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| ((v - max) / tau).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

pub fn softmax(z: &Logits, tau: Temperature) -> SoftLabel {
    SoftLabel(softmax_raw(&z.0, tau.0))
}

/// `−Σ p_c log max(q_c, ε)`.
pub fn cross_entropy(p: &SoftLabel, q: &SoftLabel) -> Result<f64> {
    cross_entropy_raw(&p.0, &q.0)
}

pub(crate) fn cross_entropy_raw(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut acc = 0.0;
    for (pc, qc) in p.iter().zip(q) {
        if *pc != 0.0 {
            acc -= pc * qc.max(LOG_CLAMP).ln();
        }
    }
    // -0.0 for exact one-hot self-entropy
    Ok(acc + 0.0)
}

/// `KL(p ‖ q) = Σ p_c (log p_c − log q_c)`, with the same clamp as
/// [`cross_entropy`].
pub fn kl_divergence(p: &SoftLabel, q: &SoftLabel) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut acc = 0.0;
    for (pc, qc) in p.0.iter().zip(&q.0) {
        if *pc > 0.0 {
            acc += pc * (pc.ln() - qc.max(LOG_CLAMP).ln());
        }
    }
    Ok(acc)
}

/// A single-channel grid of reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("grid must be non-empty"));
        }
        if values.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                got: values.len(),
            });
        }
        Ok(Grid {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// One of the four weighted cell reads making up a bilinear sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

/// Cell indices and weights of the bilinear blend at `(x, y)`.
///
/// Shared by every multi-channel sampler so they all agree on the convention.
pub fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> Result<[Tap; 4]> {
    if !(x.is_finite() && y.is_finite()) {
        return Err(Error::NonFinite("sample coordinate"));
    }
    if x < 0.0 || y < 0.0 || x > width as f64 || y > height as f64 {
        return Err(Error::OutOfBounds(format!(
            "({x}, {y}) outside {width}x{height} grid"
        )));
    }
    let (c0, c1, fx) = axis(x, width);
    let (r0, r1, fy) = axis(y, height);
    Ok([
        Tap {
            row: r0,
            col: c0,
            weight: (1.0 - fy) * (1.0 - fx),
        },
        Tap {
            row: r0,
            col: c1,
            weight: (1.0 - fy) * fx,
        },
        Tap {
            row: r1,
            col: c0,
            weight: fy * (1.0 - fx),
        },
        Tap {
            row: r1,
            col: c1,
            weight: fy * fx,
        },
    ])
}

fn axis(coord: f64, len: usize) -> (usize, usize, f64) {
    let u = (coord - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = (u.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, u - i0 as f64)
}

pub fn bilinear_sample(grid: &Grid, x: f64, y: f64) -> Result<f64> {
    let taps = bilinear_taps(grid.width, grid.height, x, y)?;
    Ok(taps
        .iter()
        .map(|t| t.weight * grid.get(t.row, t.col))
        .sum())
}
