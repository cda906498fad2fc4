//! Generates a small label store, writes it to disk and reads one file back.

use fkd::label_store::{describe, read_label_file};
use fkd::pipeline::{generate_label_store, write_dataset, CropSamplerConfig, WorldSpec};
use fkd::quantize::QuantizationMode;
use fkd::teacher::{Teacher, TeacherSpec};

fn main() -> fkd::Result<()> {
    let images = WorldSpec::new(1, 8, 32, 3, 10).generate();
    let teacher = Teacher::from_spec(&TeacherSpec::tabular(2, 10, 16, 3))?;
    let sampler = CropSamplerConfig {
        resolution: 16,
        ..Default::default()
    };
    let mode = QuantizationMode::MarginalSmooth { k: 5 };
    let files = generate_label_store(&images[..], &teacher, 20, &sampler, mode, 3)?;
    let dir = std::env::temp_dir().join(format!("fkd-label-store-{}", std::process::id()));
    let written = write_dataset(&dir, &images, &files)?;
    println!("wrote {} label bytes, {} image bytes under {}", written.labels, written.images, dir.display());
    let back = read_label_file(&dir.join("labels/img_000000.fkdl"))?;
    assert_eq!(back, files[0]);
    print!("{}", describe(&back));
    if let Err(e) = std::fs::remove_dir_all(&dir) {
        eprintln!("could not remove {}: {e}", dir.display());
    }
    Ok(())
}
