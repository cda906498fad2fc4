//! Counts image and label-file loads per batch as crops per image grows.

use fkd::pipeline::{
    assemble_batch, generate_label_store, pass_plans, Counting, CropSamplerConfig, ImageSource, LoadStrategy,
    LoaderCost, MemoryStore, Supervision, WorldSpec,
};
use fkd::quantize::QuantizationMode;
use fkd::teacher::{Teacher, TeacherSpec};

fn main() -> fkd::Result<()> {
    let batch = 64;
    let images = Counting::new(WorldSpec::new(1, 256, 16, 3, 10).generate());
    let teacher = Teacher::from_spec(&TeacherSpec::tabular(2, 10, 8, 3))?;
    let sampler = CropSamplerConfig {
        resolution: 8,
        ..Default::default()
    };
    let files = generate_label_store(&images, &teacher, 8, &sampler, QuantizationMode::Hard, 3)?;
    let store = Counting::new(MemoryStore::from_files(&files)?);
    println!("{:>3} {:>8} {:>8} {:>8}", "m", "images", "labels", "model");
    for m in [1, 2, 4, 8] {
        images.reset();
        store.reset();
        let plan = pass_plans(images.len(), batch, m, 0, 9)?.remove(0);
        let b = assemble_batch(&images, Supervision::Stored(&store), &plan, 8, 9)?;
        let model = LoaderCost::model(LoadStrategy::MultiCrop { crops_per_image: m }, batch)?;
        let (i, _) = images.counts();
        let (_, l) = store.counts();
        println!("{m:>3} {i:>8} {l:>8} {:>8}   ({} samples)", model.images_loaded, b.len());
    }
    Ok(())
}
