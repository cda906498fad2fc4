//! Synthetic image world: each image shows one dominant coloured object of
//! its class on a noisy background, plus a few smaller distractor objects of
//! other classes. Colours come from [`class_palette`], the same signatures
//! the tabular teacher matches against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Stream;
use crate::teacher::class_palette;

fn default_background() -> f64 {
    0.3
}
fn default_object() -> [f64; 2] {
    [0.4, 0.7]
}
fn default_distractors() -> usize {
    2
}
fn default_distractor_size() -> [f64; 2] {
    [0.15, 0.3]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub images: usize,
    /// Side of the square images.
    pub size: usize,
    pub channels: usize,
    pub classes: usize,
    /// Amplitude of the uniform background noise.
    #[serde(default = "default_background")]
    pub background: f64,
    /// Side of the main object as a fraction of the image side.
    #[serde(default = "default_object")]
    pub object: [f64; 2],
    #[serde(default = "default_distractors")]
    pub distractors: usize,
    #[serde(default = "default_distractor_size")]
    pub distractor_size: [f64; 2],
}

impl WorldSpec {
    pub fn new(seed: u64, images: usize, size: usize, channels: usize, classes: usize) -> Self {
        WorldSpec {
            seed,
            images,
            size,
            channels,
            classes,
            background: default_background(),
            object: default_object(),
            distractors: default_distractors(),
            distractor_size: default_distractor_size(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.channels == 0 || self.classes < 2 {
            return Err(Error::invalid("world needs size > 0, channels > 0, classes >= 2"));
        }
        for [lo, hi] in [self.object, self.distractor_size] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return Err(Error::invalid(format!("bad object size range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Image `id` and the class of its main object.
    pub fn image(&self, id: usize) -> (Image, usize) {
        let mut rng = Stream::new(self.seed, &[0x3011d, id as u64]);
        let (n, ch) = (self.size, self.channels);
        let palette = class_palette(self.classes, ch);
        let mut px: Vec<f64> = (0..n * n * ch)
            .map(|_| self.background * rng.uniform(0.0, 1.0))
            .collect();
        let class = rng.int_inclusive(self.classes - 1);

        let mut paint = |rng: &mut Stream, class: usize, range: [f64; 2]| {
            let side = ((n as f64 * rng.uniform(range[0], range[1])).round() as usize).clamp(1, n);
            let top = rng.int_inclusive(n - side);
            let left = rng.int_inclusive(n - side);
            let intensity = rng.uniform(0.7, 1.0);
            for row in top..top + side {
                for col in left..left + side {
                    for k in 0..ch {
                        px[(row * n + col) * ch + k] =
                            intensity * palette[class][k] + 0.05 * rng.uniform(0.0, 1.0);
                    }
                }
            }
        };
        paint(&mut rng, class, self.object);
        for _ in 0..self.distractors {
            let other = (class + 1 + rng.int_inclusive(self.classes - 2)) % self.classes;
            paint(&mut rng, other, self.distractor_size);
        }
        let data = px.into_iter().map(|v| v as f32).collect();
        (Image::new(n, n, ch, data).expect("world image shape"), class)
    }

    pub fn generate(&self) -> Vec<Image> {
        (0..self.images).map(|id| self.image(id).0).collect()
    }
}
