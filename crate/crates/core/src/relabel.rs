//! Global label-map baseline.
//!
//! The teacher is evaluated once per image on an `S × S` grid of windows to
//! produce a map of logits; the label of a crop is then read back with RoI
//! align (one output bin, 2×2 bilinear samples) followed by a softmax. This
//! is the mechanism the region-level labels are compared against.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::label_store::{decode_label_map, encode_label_map, AugRecord, CropBox};
use crate::numeric::{bilinear_taps, softmax, Logits, SoftLabel, Temperature};
use crate::pipeline::apply_crop;
use crate::teacher::{teacher_logits, Teacher};

/// `S × S` cells of `C` logits each, row-major with classes innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    size: usize,
    classes: usize,
    logits: Vec<f64>,
}

impl LabelMap {
    pub fn new(size: usize, classes: usize, logits: Vec<f64>) -> Result<Self> {
        if size == 0 || classes < 2 {
            return Err(Error::invalid("label map needs S >= 1 and C >= 2"));
        }
        if logits.len() != size * size * classes {
            return Err(Error::LengthMismatch {
                expected: size * size * classes,
                got: logits.len(),
            });
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("label map"));
        }
        Ok(LabelMap { size, classes, logits })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let at = (row * self.size + col) * self.classes;
        &self.logits[at..at + self.classes]
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Serialized with mode code 6 of the label container.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_label_map(self.classes as u32, self.size as u32, &self.logits)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (classes, size, logits) = decode_label_map(bytes)?;
        LabelMap::new(size as usize, classes as usize, logits)
    }
}

/// Window of cell `(row, col)` on an `S × S` grid, normalized.
pub fn cell_window(row: usize, col: usize, size: usize) -> CropBox {
    let s = size as f64;
    CropBox {
        x: (col as f64 / s) as f32,
        y: (row as f64 / s) as f32,
        w: (1.0 / s) as f32,
        h: (1.0 / s) as f32,
    }
}

/// Runs the teacher on every cell window (resized to the teacher's input
/// resolution, no flip).
pub fn build_label_map(teacher: &Teacher, image: &Image, size: usize) -> Result<LabelMap> {
    if size == 0 {
        return Err(Error::invalid("label map size must be positive"));
    }
    let resolution = teacher.spec().resolution;
    let mut logits = Vec::with_capacity(size * size * teacher.classes());
    for row in 0..size {
        for col in 0..size {
            let aug = AugRecord {
                crop: cell_window(row, col, size),
                flip: false,
            };
            let region = apply_crop(image, &aug, resolution)?;
            logits.extend_from_slice(teacher_logits(teacher, &region)?.values());
        }
    }
    LabelMap::new(size, teacher.classes(), logits)
}

/// RoI align with a single output bin: the mean of four bilinear samples at
/// the centers of the box's 2×2 sub-bins, per class.
pub fn roi_align(map: &LabelMap, query: &CropBox) -> Result<Logits> {
    if !(query.w > 0.0 && query.h > 0.0) {
        return Err(Error::invalid(format!(
            "degenerate RoI {}x{}",
            query.w, query.h
        )));
    }
    query.validate()?;
    let s = map.size as f64;
    let (x0, y0) = (query.x as f64 * s, query.y as f64 * s);
    let (bw, bh) = (query.w as f64 * s, query.h as f64 * s);
    let mut out = vec![0.0; map.classes];
    for fy in [0.25, 0.75] {
        for fx in [0.25, 0.75] {
            let px = (x0 + fx * bw).min(s);
            let py = (y0 + fy * bh).min(s);
            for t in bilinear_taps(map.size, map.size, px, py)? {
                for (o, v) in out.iter_mut().zip(map.cell(t.row, t.col)) {
                    *o += t.weight * v;
                }
            }
        }
    }
    for o in &mut out {
        *o *= 0.25;
    }
    Logits::new(out)
}

/// `softmax(roi_align(map, query))`.
pub fn relabel_soft_label(map: &LabelMap, query: &CropBox) -> Result<SoftLabel> {
    Ok(softmax(&roi_align(map, query)?, Temperature::ONE))
}
