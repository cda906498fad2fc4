//! Crop sampling, region materialization, label-store generation and
//! multi-crop batch assembly.

mod batch;
mod crop;
mod generate;
mod sampler;
mod store;
pub mod world;

pub use batch::{
    assemble_batch, cursor_window, cursor_wraps, pass_plans, prefetch, Batch, BatchPlan, CropKey, LoadStrategy,
    LoaderCost, Supervision,
};
pub use crop::apply_crop;
pub use generate::{generate_label_store, generate_labels_for_image, label_for_region};
pub use sampler::{crops_for_image, sample_crop_params, CropSamplerConfig};
pub use store::{image_name, write_dataset, Counting, DiskDataset, ImageSource, LabelRepository, MemoryStore, WrittenBytes, MANIFEST};
pub use world::WorldSpec;
