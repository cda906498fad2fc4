//! Temperature softmax, cross-entropy and KL on a small logit vector.

use fkd::numeric::{cross_entropy, kl_divergence, softmax, Logits, SoftLabel, Temperature};

fn main() -> fkd::Result<()> {
    let z = Logits::new(vec![2.0, 1.0, 0.5, -1.0])?;
    for tau in [0.5, 1.0, 4.0] {
        let p = softmax(&z, Temperature::new(tau)?);
        println!("tau={tau:<4} p={:.4?}", p.probs());
    }
    let p = softmax(&z, Temperature::ONE);
    let u = SoftLabel::uniform(4)?;
    println!("CE(p, uniform) = {:.4}", cross_entropy(&p, &u)?);
    println!("CE(one_hot, uniform) = {:.4} (ln 4 = {:.4})", cross_entropy(&SoftLabel::one_hot(0, 4)?, &u)?, 4f64.ln());
    println!("KL(p || uniform) = {:.4}", kl_divergence(&p, &u)?);
    Ok(())
}
