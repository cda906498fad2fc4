//! Pairwise cross-entropy between three label sources, per class, as CSV.

use std::collections::BTreeMap;

use fkd::analysis::{ce_matrix, report_csv, LabelSource};
use fkd::numeric::{softmax, Logits, SoftLabel, Temperature};
use fkd::pipeline::CropKey;

fn main() -> fkd::Result<()> {
    let keys: Vec<CropKey> = (0..6).map(|i| CropKey { image: i, crop: 0 }).collect();
    let source = |name: &str, sharp: f64| -> fkd::Result<LabelSource> {
        let mut labels = BTreeMap::new();
        for k in &keys {
            let z: Vec<f64> = (0..3).map(|c| if c == k.image % 3 { sharp } else { 0.0 }).collect();
            labels.insert(*k, softmax(&Logits::new(z)?, Temperature::ONE));
        }
        LabelSource::new(name, labels)
    };
    let one_hot = {
        let labels: BTreeMap<CropKey, SoftLabel> = keys
            .iter()
            .map(|k| Ok((*k, SoftLabel::one_hot(k.image % 3, 3)?)))
            .collect::<fkd::Result<_>>()?;
        LabelSource::new("one_hot", labels)?
    };
    let sources = vec![source("soft", 1.0)?, source("sharp", 4.0)?, one_hot];
    let report = ce_matrix(&sources, &keys, 2)?;
    print!("{}", report_csv(&report)?);
    Ok(())
}
