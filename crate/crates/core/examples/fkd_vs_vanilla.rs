//! Trains once from stored full-precision labels and once with the teacher
//! in the loop, then compares the two students parameter by parameter.

use fkd::numeric::Temperature;
use fkd::pipeline::{generate_label_store, CropSamplerConfig, MemoryStore, WorldSpec};
use fkd::quantize::QuantizationMode;
use fkd::teacher::{Teacher, TeacherSpec};
use fkd::train::{train_student, vanilla_kd_reference, ScheduleKind, SgdConfig, TrainConfig};

fn main() -> fkd::Result<()> {
    let images = WorldSpec::new(1, 200, 16, 3, 10).generate();
    let teacher = Teacher::from_spec(&TeacherSpec::tabular(2, 10, 8, 3))?;
    let sampler = CropSamplerConfig {
        resolution: 8,
        ..Default::default()
    };
    let files = generate_label_store(&images[..], &teacher, 16, &sampler, QuantizationMode::Full, 3)?;
    let store = MemoryStore::from_files(&files)?;
    let cfg = TrainConfig {
        batch_size: 40,
        crops_per_image: 4,
        passes: 3,
        base_lr: 0.1,
        schedule: ScheduleKind::SerratedCosine,
        sgd: SgdConfig::default(),
        hidden: 32,
        resolution: 8,
        init_seed: 4,
        order_seed: 5,
        tau: Temperature::ONE,
    };
    let stored = train_student(&images[..], &store, &cfg)?;
    let online = vanilla_kd_reference(&images[..], &teacher, &sampler, 16, 3, &cfg)?;
    let max_diff = stored
        .student
        .params()
        .iter()
        .zip(online.student.params())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    for (a, b) in stored.epochs.iter().zip(&online.epochs) {
        println!("epoch {:>2} stored {:.6} online {:.6}", a.epoch, a.loss, b.loss);
    }
    println!("largest parameter difference: {max_diff:e}");
    Ok(())
}
