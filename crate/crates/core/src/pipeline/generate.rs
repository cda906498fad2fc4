use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, Region};
use crate::label_store::{CropRecord, LabelFile};
use crate::numeric::Temperature;
use crate::pipeline::crop::apply_crop;
use crate::pipeline::sampler::{crops_for_image, CropSamplerConfig};
use crate::pipeline::store::ImageSource;
use crate::quantize::{compress, harden, CompressedLabel, QuantizationMode};
use crate::teacher::{supervised_label, teacher_logits, LabelMode, Teacher};

fn check_mode(teacher: &Teacher, mode: QuantizationMode) -> Result<()> {
    mode.validate(teacher.classes())?;
    match (teacher.spec().mode, mode.is_ssl()) {
        (LabelMode::Ssl, false) => Err(Error::invalid(
            "SSL teachers store full logits; compression modes are supervised-only",
        )),
        (LabelMode::Supervised, true) => Err(Error::invalid(
            "ssl_logits mode needs a teacher in SSL mode",
        )),
        _ => Ok(()),
    }
}

/// The stored label of one region: teacher logits for SSL, otherwise the
/// compressed single-precision softmax (hardening reads the logits directly).
pub fn label_for_region(teacher: &Teacher, region: &Region, mode: QuantizationMode) -> Result<CompressedLabel> {
    let z = teacher_logits(teacher, region)?;
    match mode {
        QuantizationMode::SslLogits => Ok(CompressedLabel::SslLogits(z.into_vec())),
        QuantizationMode::Hard => Ok(harden(&z)),
        other => compress(other, &supervised_label(&z, Temperature::ONE)?),
    }
}

/// Samples `crops` augmentations for image `image_id`, runs the teacher on
/// each transformed region and stores the compressed labels next to the
/// augmentation parameters.
pub fn generate_labels_for_image(
    image: &Image,
    image_id: usize,
    teacher: &Teacher,
    crops: usize,
    cfg: &CropSamplerConfig,
    mode: QuantizationMode,
    seed: u64,
) -> Result<LabelFile> {
    if crops == 0 {
        return Err(Error::invalid("need at least one crop per image"));
    }
    cfg.validate()?;
    check_mode(teacher, mode)?;
    let records = crops_for_image(cfg, image.width(), image.height(), crops, seed, image_id)
        .into_iter()
        .map(|aug| {
            let region = apply_crop(image, &aug, cfg.resolution)?;
            Ok(CropRecord {
                aug,
                label: label_for_region(teacher, &region, mode)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabelFile::new(mode, teacher.classes() as u32, records)
}

/// Label files for every image of `images`, in image order. Images are
/// processed in parallel on the current rayon pool; the result does not
/// depend on the worker count.
pub fn generate_label_store<S: ImageSource + ?Sized>(
    images: &S,
    teacher: &Teacher,
    crops: usize,
    cfg: &CropSamplerConfig,
    mode: QuantizationMode,
    seed: u64,
) -> Result<Vec<LabelFile>> {
    (0..images.len())
        .into_par_iter()
        .map(|id| {
            let image = images.load_image(id)?;
            generate_labels_for_image(&image, id, teacher, crops, cfg, mode, seed)
        })
        .collect()
}
