use crate::error::{Error, Result};
use crate::image::{Image, Region};
use crate::label_store::AugRecord;
use crate::numeric::bilinear_taps;

/// Extracts the crop, bilinearly resizes it to `resolution × resolution` and
/// mirrors it when `aug.flip` is set.
///
/// Output pixel `(i, j)` samples the source at
/// `(x0 + (j + 0.5)·w / r, y0 + (i + 0.5)·h / r)` in pixel units, i.e. at the
/// center of the matching output cell.
pub fn apply_crop(image: &Image, aug: &AugRecord, resolution: usize) -> Result<Region> {
    aug.crop
        .validate()
        .map_err(|e| Error::OutOfBounds(format!("crop outside image: {e}")))?;
    if resolution == 0 {
        return Err(Error::invalid("output resolution must be positive"));
    }
    let (w_img, h_img, ch) = (image.width(), image.height(), image.channels());
    let (wf, hf) = (w_img as f64, h_img as f64);
    let b = aug.crop;
    let (x0, y0) = (b.x as f64 * wf, b.y as f64 * hf);
    let (bw, bh) = (b.w as f64 * wf, b.h as f64 * hf);
    let r = resolution as f64;
    let data = image.data();
    let mut pixels = vec![0.0; resolution * resolution * ch];
    for i in 0..resolution {
        let sy = (y0 + (i as f64 + 0.5) * bh / r).min(hf);
        for j in 0..resolution {
            let sx = (x0 + (j as f64 + 0.5) * bw / r).min(wf);
            let taps = bilinear_taps(w_img, h_img, sx, sy)?;
            let col = if aug.flip { resolution - 1 - j } else { j };
            let out = &mut pixels[(i * resolution + col) * ch..(i * resolution + col + 1) * ch];
            for t in &taps {
                let src = &data[(t.row * w_img + t.col) * ch..(t.row * w_img + t.col + 1) * ch];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += t.weight * *s as f64;
                }
            }
        }
    }
    Region::new(resolution, ch, pixels)
}
