use crate::error::{Error, Result};
use crate::numeric::{softmax_raw, Temperature};
use crate::quantize::Target;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Batch mean of `−Σ_c P(c) log softmax(z)(c)`.
    pub loss: f64,
    /// `∂loss/∂z` per sample.
    pub grad: Vec<Vec<f64>>,
}

/// Soft-target cross-entropy of a batch of student logits.
///
/// Probability targets are used as stored with the student at `τ = 1`.
/// Logit targets (SSL) are softened with `tau`, and so is the student, which
/// puts an extra `1/τ` into the gradient. A batch may not mix the two.
pub fn soft_ce_loss(pred: &[Vec<f64>], targets: &[Target], tau: Temperature) -> Result<LossOutput> {
    if pred.is_empty() || pred.len() != targets.len() {
        return Err(Error::LengthMismatch {
            expected: targets.len(),
            got: pred.len(),
        });
    }
    let ssl = matches!(targets[0], Target::Logits(_));
    if targets.iter().any(|t| matches!(t, Target::Logits(_)) != ssl) {
        return Err(Error::invalid("a batch mixes probability and logit targets"));
    }
    let t = if ssl { tau.get() } else { 1.0 };
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (z, target) in pred.iter().zip(targets) {
        if z.len() != target.classes() {
            return Err(Error::LengthMismatch {
                expected: target.classes(),
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("student logits"));
        }
        let p = target.distribution(Temperature::new(t)?);
        let q = softmax_raw(z, t);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
        let lse = max + z.iter().map(|v| (v / t - max).exp()).sum::<f64>().ln();
        total += p
            .iter()
            .zip(z)
            .filter(|(pc, _)| **pc > 0.0)
            .fold(0.0, |acc, (pc, zc)| acc - pc * (zc / t - lse));
        grad.push(q.iter().zip(&p).map(|(qc, pc)| (qc - pc) / (n * t)).collect());
    }
    Ok(LossOutput { loss: total / n + 0.0, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{softmax, Logits, SoftLabel};
    use crate::rng::Stream;

    #[test]
    fn matching_target_is_a_stationary_point() {
        let z = vec![0.3, -1.2, 2.0, 0.0];
        let p = softmax(&Logits::new(z.clone()).unwrap(), Temperature::ONE);
        let out = soft_ce_loss(&[z.clone()], &[Target::Probs(p)], Temperature::ONE).unwrap();
        assert!(out.grad[0].iter().all(|&g| g == 0.0));

        let tau = Temperature::new(0.2).unwrap();
        let out = soft_ce_loss(&[z.clone()], &[Target::Logits(Logits::new(z).unwrap())], tau).unwrap();
        assert!(out.grad[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn one_hot_target_reduces_to_hard_cross_entropy() {
        let z = vec![1.0, 2.0, 0.5];
        let out = soft_ce_loss(&[z.clone()], &[Target::Probs(SoftLabel::one_hot(1, 3).unwrap())], Temperature::ONE)
            .unwrap();
        let q = softmax(&Logits::new(z).unwrap(), Temperature::ONE);
        assert!((out.loss + q.probs()[1].ln()).abs() < 1e-15);
    }

    #[test]
    fn loss_is_the_batch_mean() {
        let mut s = Stream::new(1, &[]);
        let pred: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| s.uniform(-2.0, 2.0)).collect()).collect();
        let targets: Vec<Target> = (0..4)
            .map(|i| Target::Probs(SoftLabel::one_hot(i % 3, 3).unwrap()))
            .collect();
        let all = soft_ce_loss(&pred, &targets, Temperature::ONE).unwrap();
        let singles: f64 = (0..4)
            .map(|i| soft_ce_loss(&pred[i..=i], &targets[i..=i], Temperature::ONE).unwrap().loss)
            .sum();
        assert!((all.loss - singles / 4.0).abs() < 1e-15);
    }

    #[test]
    fn malformed_batches_are_rejected() {
        let p = Target::Probs(SoftLabel::uniform(3).unwrap());
        let z = Target::Logits(Logits::new(vec![0.0, 1.0, 2.0]).unwrap());
        assert!(soft_ce_loss(&[], &[], Temperature::ONE).is_err());
        assert!(soft_ce_loss(&[vec![0.0; 3]], &[p.clone(), p.clone()], Temperature::ONE).is_err());
        assert!(soft_ce_loss(&[vec![0.0; 2]], &[p.clone()], Temperature::ONE).is_err());
        assert!(soft_ce_loss(&[vec![0.0; 3], vec![0.0; 3]], &[p.clone(), z], Temperature::ONE).is_err());
        assert!(soft_ce_loss(&[vec![f64::NAN, 0.0, 0.0]], &[p], Temperature::ONE).is_err());
    }
}
