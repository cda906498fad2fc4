//! Final loss and agreement for several crops-per-image settings at a fixed
//! budget of logical epochs.

use fkd::numeric::Temperature;
use fkd::pipeline::{generate_label_store, CropSamplerConfig, MemoryStore, WorldSpec};
use fkd::quantize::QuantizationMode;
use fkd::teacher::{Teacher, TeacherSpec};
use fkd::train::{train_student, ScheduleKind, SgdConfig, TrainConfig};

fn main() -> fkd::Result<()> {
    let images = WorldSpec::new(1, 256, 16, 3, 10).generate();
    let teacher = Teacher::from_spec(&TeacherSpec::tabular(2, 10, 8, 3))?;
    let sampler = CropSamplerConfig {
        resolution: 8,
        ..Default::default()
    };
    let files = generate_label_store(&images[..], &teacher, 16, &sampler, QuantizationMode::MarginalSmooth { k: 3 }, 3)?;
    let store = MemoryStore::from_files(&files)?;
    let logical = 16;
    for m in [1, 2, 4, 8] {
        let cfg = TrainConfig {
            batch_size: 32,
            crops_per_image: m,
            passes: logical / m,
            base_lr: 0.1,
            schedule: ScheduleKind::SerratedCosine,
            sgd: SgdConfig::default(),
            hidden: 32,
            resolution: 8,
            init_seed: 4,
            order_seed: 5,
            tau: Temperature::ONE,
        };
        let state = train_student(&images[..], &store, &cfg)?;
        let last = state.epochs.last().expect("at least one epoch");
        println!("m={m} passes={:>2} loss {:.4} agreement {:.3}", cfg.passes, last.loss, last.accuracy);
    }
    Ok(())
}
