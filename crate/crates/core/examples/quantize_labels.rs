//! Compresses one teacher distribution with every label mode and shows
//! what the student gets back.

use fkd::numeric::{cross_entropy, softmax, Logits, Temperature};
use fkd::quantize::{compress, QuantizationMode};

fn main() -> fkd::Result<()> {
    let z = Logits::new(vec![3.1, 2.4, 0.3, -0.2, 1.7, -1.5, 0.0, 0.9, -0.8, 0.4])?;
    let p = softmax(&z, Temperature::ONE);
    let c = p.len();
    let modes = [
        QuantizationMode::Full,
        QuantizationMode::Hard,
        QuantizationMode::Smooth,
        QuantizationMode::MarginalSmooth { k: 3 },
        QuantizationMode::MarginalRenorm { k: 3 },
    ];
    println!("teacher   {:.3?}", p.probs());
    for mode in modes {
        let stored = compress(mode, &p)?.to_storage_precision();
        let q = stored.recover(c)?;
        println!(
            "{:<9} {:.3?} values={} CE={:.4}",
            mode.to_string(),
            q.probs(),
            mode.payload_values(c),
            cross_entropy(&p, &q)?
        );
    }
    Ok(())
}
