use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

const INIT_STREAM: u64 = 0x57d7;

/// Two-layer perceptron `inputs → hidden (ReLU) → classes`.
///
/// Parameters live in one flat vector laid out as `w1 [hidden × inputs]`,
/// `b1 [hidden]`, `w2 [classes × hidden]`, `b2 [classes]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Student {
    inputs: usize,
    hidden: usize,
    classes: usize,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Student {
    pub fn param_count(inputs: usize, hidden: usize, classes: usize) -> usize {
        hidden * inputs + hidden + classes * hidden + classes
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new(inputs: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        if inputs == 0 || hidden == 0 || classes < 2 {
            return Err(Error::invalid(format!(
                "student shape {inputs} -> {hidden} -> {classes} is degenerate"
            )));
        }
        let mut rng = Stream::new(seed, &[INIT_STREAM]);
        let mut params = Vec::with_capacity(Self::param_count(inputs, hidden, classes));
        let a1 = 1.0 / (inputs as f64).sqrt();
        params.extend((0..hidden * inputs).map(|_| rng.uniform(-a1, a1)));
        params.extend(std::iter::repeat(0.0).take(hidden));
        let a2 = 1.0 / (hidden as f64).sqrt();
        params.extend((0..classes * hidden).map(|_| rng.uniform(-a2, a2)));
        params.extend(std::iter::repeat(0.0).take(classes));
        Ok(Student {
            inputs,
            hidden,
            classes,
            params,
        })
    }

    pub fn from_params(inputs: usize, hidden: usize, classes: usize, params: Vec<f64>) -> Result<Self> {
        let s = Student {
            inputs,
            hidden,
            classes,
            params,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::param_count(self.inputs, self.hidden, self.classes);
        if self.params.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: self.params.len(),
            });
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("student parameters"));
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.classes * self.hidden;
        (b1, w2, b2)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.inputs {
            return Err(Error::LengthMismatch {
                expected: self.inputs,
                got: x.len(),
            });
        }
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &p[j * self.inputs..(j + 1) * self.inputs];
                let a = row.iter().zip(x).fold(p[b1 + j], |acc, (w, v)| acc + w * v);
                a.max(0.0)
            })
            .collect();
        let logits = (0..self.classes)
            .map(|c| {
                let row = &p[w2 + c * self.hidden..w2 + (c + 1) * self.hidden];
                row.iter().zip(&hidden).fold(p[b2 + c], |acc, (w, h)| acc + w * h)
            })
            .collect();
        Ok(Forward { hidden, logits })
    }

    /// Adds the parameter gradient of one sample, given `∂L/∂logits`, into `grad`.
    pub fn backward(&self, x: &[f64], fwd: &Forward, dlogits: &[f64], grad: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut dh = vec![0.0; self.hidden];
        for (c, &d) in dlogits.iter().enumerate() {
            grad[b2 + c] += d;
            let base = w2 + c * self.hidden;
            for j in 0..self.hidden {
                grad[base + j] += d * fwd.hidden[j];
                dh[j] += d * p[base + j];
            }
        }
        for (j, d) in dh.iter().enumerate() {
            // ReLU passes gradient only where the unit was active
            if fwd.hidden[j] <= 0.0 {
                continue;
            }
            grad[b1 + j] += d;
            let row = &mut grad[j * self.inputs..(j + 1) * self.inputs];
            for (g, v) in row.iter_mut().zip(x) {
                *g += d * v;
            }
        }
    }
}
