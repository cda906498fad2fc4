//! Random-resized-crop parameter sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_store::{AugRecord, CropBox};
use crate::rng::{Stream, Uniform01};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropSamplerConfig {
    /// Crop area as a fraction of the image area.
    pub scale: [f64; 2],
    /// Crop aspect ratio `w / h`, sampled log-uniformly.
    pub ratio: [f64; 2],
    pub flip_prob: f64,
    /// Rejection-sampling attempts before falling back to a center crop.
    pub attempts: u32,
    /// Side of the crop-resized output.
    pub resolution: usize,
}

impl Default for CropSamplerConfig {
    fn default() -> Self {
        CropSamplerConfig {
            scale: [0.08, 1.0],
            ratio: [3.0 / 4.0, 4.0 / 3.0],
            flip_prob: 0.5,
            attempts: 10,
            resolution: 16,
        }
    }
}

impl CropSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let [s0, s1] = self.scale;
        let [r0, r1] = self.ratio;
        if !(s0 > 0.0 && s0 <= s1 && s1 <= 1.0) {
            return Err(Error::invalid(format!("bad scale range {:?}", self.scale)));
        }
        if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
            return Err(Error::invalid(format!("bad ratio range {:?}", self.ratio)));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid("flip probability must be in [0, 1]"));
        }
        if self.resolution == 0 {
            return Err(Error::invalid("output resolution must be positive"));
        }
        Ok(())
    }
}

/// Draws one crop for a `width × height` image.
///
/// Each attempt consumes two draws (area, log-aspect); an accepted attempt
/// consumes two more (top, left). The flip consumes one final draw. A failed
/// search falls back to the largest center crop within the ratio range,
/// consuming no extra draws.
pub fn sample_crop_params(
    cfg: &CropSamplerConfig,
    width: usize,
    height: usize,
    rng: &mut Stream,
) -> AugRecord {
    let (wf, hf) = (width as f64, height as f64);
    let area = wf * hf;
    let (lr0, lr1) = (cfg.ratio[0].ln(), cfg.ratio[1].ln());
    let mut chosen = None;
    for _ in 0..cfg.attempts {
        let target = area * rng.uniform(cfg.scale[0], cfg.scale[1]);
        let aspect = rng.uniform(lr0, lr1).exp();
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= width && h <= height {
            let top = rng.int_inclusive(height - h);
            let left = rng.int_inclusive(width - w);
            chosen = Some((left, top, w, h));
            break;
        }
    }
    let (left, top, w, h) = chosen.unwrap_or_else(|| {
        let in_ratio = wf / hf;
        let (w, h) = if in_ratio < cfg.ratio[0] {
            (width, ((wf / cfg.ratio[0]).round() as usize).clamp(1, height))
        } else if in_ratio > cfg.ratio[1] {
            (((hf * cfg.ratio[1]).round() as usize).clamp(1, width), height)
        } else {
            (width, height)
        };
        ((width - w) / 2, (height - h) / 2, w, h)
    });
    let flip = rng.uniform01() < cfg.flip_prob;
    AugRecord {
        crop: CropBox {
            x: (left as f64 / wf) as f32,
            y: (top as f64 / hf) as f32,
            w: (w as f64 / wf) as f32,
            h: (h as f64 / hf) as f32,
        },
        flip,
    }
}

/// Stream label for crop sampling.
pub(crate) const CROP_STREAM: u64 = 0xc209;

/// The `count` crops of image `image_id`, drawn from its own stream so every
/// image's crops are independent of generation order.
pub fn crops_for_image(
    cfg: &CropSamplerConfig,
    width: usize,
    height: usize,
    count: usize,
    seed: u64,
    image_id: usize,
) -> Vec<AugRecord> {
    let mut rng = Stream::new(seed, &[CROP_STREAM, image_id as u64]);
    (0..count)
        .map(|_| sample_crop_params(cfg, width, height, &mut rng))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_parameters_give_the_full_image() {
        let cfg = CropSamplerConfig {
            scale: [1.0, 1.0],
            ratio: [1.0, 1.0],
            flip_prob: 0.0,
            ..Default::default()
        };
        let mut rng = Stream::new(1, &[]);
        for _ in 0..10 {
            let a = sample_crop_params(&cfg, 32, 32, &mut rng);
            assert_eq!(a.crop, CropBox::FULL);
            assert!(!a.flip);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = CropSamplerConfig::default();
        let a = crops_for_image(&cfg, 40, 30, 50, 7, 3);
        let b = crops_for_image(&cfg, 40, 30, 50, 7, 3);
        assert_eq!(a, b);
        assert_ne!(a, crops_for_image(&cfg, 40, 30, 50, 7, 4));
    }

    #[test]
    fn boxes_stay_inside_and_respect_ranges() {
        let cfg = CropSamplerConfig::default();
        for a in crops_for_image(&cfg, 64, 48, 500, 1, 0) {
            a.crop.validate().unwrap();
        }
    }

    #[test]
    fn impossible_constraints_fall_back_to_center_crop() {
        let cfg = CropSamplerConfig {
            scale: [1.0, 1.0],
            ratio: [2.0, 2.0],
            flip_prob: 0.0,
            ..Default::default()
        };
        let mut rng = Stream::new(2, &[]);
        let a = sample_crop_params(&cfg, 32, 32, &mut rng);
        // 32x16 center crop
        assert_eq!(a.crop, CropBox::new(0.0, 0.25, 1.0, 0.5).unwrap());
    }

    #[test]
    fn flip_rate_is_one_half() {
        // 3 sigma of a Bernoulli(0.5) mean over 1e5 draws is ~0.0047
        let cfg = CropSamplerConfig::default();
        let mut rng = Stream::new(99, &[]);
        let n = 100_000;
        let flips = (0..n)
            .filter(|_| sample_crop_params(&cfg, 32, 32, &mut rng).flip)
            .count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.01, "flip rate {rate}");
    }
}
