use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1) and weight decay non-negative, got {} and {}",
                self.momentum, self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One momentum-SGD update in place:
/// `g ← g + λθ`, `v ← μv + g`, `θ ← θ − lr·v`.
pub fn sgd_step(params: &mut [f64], momentum: &mut [f64], grads: &[f64], lr: f64, cfg: &SgdConfig) -> Result<()> {
    if params.len() != grads.len() || momentum.len() != grads.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite gradient {} at parameter {i}",
            grads[i]
        )));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate {lr} is not a finite non-negative number")));
    }
    for ((p, v), g) in params.iter_mut().zip(momentum.iter_mut()).zip(grads) {
        let d = g + cfg.weight_decay * *p;
        *v = cfg.momentum * *v + d;
        *p -= lr * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let cfg = SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut p = vec![0.5, -1.25, 3.0];
        let mut v = vec![0.0; 3];
        sgd_step(&mut p, &mut v, &[0.0; 3], 0.1, &cfg).unwrap();
        assert_eq!(p, vec![0.5, -1.25, 3.0]);
    }

    #[test]
    fn plain_step_is_theta_minus_lr_g() {
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut p = vec![0.5, -1.25];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &mut v, &[0.2, -0.4], 0.3, &cfg).unwrap();
        assert_eq!(p, vec![0.5 - 0.3 * 0.2, -1.25 - 0.3 * -0.4]);
    }

    #[test]
    fn five_steps_match_a_scalar_reference() {
        let cfg = SgdConfig::default();
        let mut s = Stream::new(11, &[]);
        let mut p: Vec<f64> = (0..8).map(|_| s.uniform(-1.0, 1.0)).collect();
        let mut v = vec![0.0; 8];
        let mut ref_p = p.clone();
        let mut ref_v = vec![0.0; 8];
        for step in 0..5 {
            let g: Vec<f64> = (0..8).map(|_| s.uniform(-1.0, 1.0)).collect();
            let lr = 0.1 / (step + 1) as f64;
            sgd_step(&mut p, &mut v, &g, lr, &cfg).unwrap();
            for i in 0..8 {
                let d = g[i] + 1e-4 * ref_p[i];
                ref_v[i] = if step == 0 { d } else { 0.9 * ref_v[i] + d };
                ref_p[i] = ref_p[i] - lr * ref_v[i];
            }
        }
        for i in 0..8 {
            assert!((p[i] - ref_p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_gradients_abort() {
        let mut p = vec![1.0; 2];
        let mut v = vec![0.0; 2];
        let err = sgd_step(&mut p, &mut v, &[0.0, f64::INFINITY], 0.1, &SgdConfig::default()).unwrap_err();
        assert!(err.to_string().contains("parameter 1"));
        assert_eq!(p, vec![1.0; 2]);
    }
}
