//! Model-space conversion: pixels to `[0, 1]`, coordinates to `[-1, 1]`.

use super::{Sample, IMAGE_SIDE, NUM_COORDS, NUM_PIXELS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const HALF: f64 = IMAGE_SIDE as f64 / 2.0;

pub fn normalize_pixel(p: u8) -> f32 {
    f32::from(p) / 255.0
}

pub fn normalize_coord(v: f64) -> f64 {
    (v - HALF) / HALF
}

pub fn denormalize_coord(v: f64) -> f64 {
    v * HALF + HALF
}

/// Model inputs plus regression targets for a group of samples.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 1, 96, 96]`
    pub images: Tensor<f32>,
    /// `[B, 30]`, normalized; zero where the label is missing.
    pub targets: Tensor<f32>,
    /// `[B, 30]`, 1 where the label is present.
    pub mask: Tensor<f32>,
}

pub fn to_batch<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Batch> {
    let mut images = Vec::new();
    let mut targets = Vec::new();
    let mut mask = Vec::new();
    let mut n = 0;
    for s in samples {
        images.extend(s.image.pixels().iter().map(|&p| normalize_pixel(p)));
        for c in &s.coords {
            match c {
                Some(v) => {
                    targets.push(normalize_coord(*v) as f32);
                    mask.push(1.0);
                }
                None => {
                    targets.push(0.0);
                    mask.push(0.0);
                }
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset("cannot build a batch from zero samples"));
    }
    debug_assert_eq!(images.len(), n * NUM_PIXELS);
    Ok(Batch {
        images: Tensor::new(vec![n, 1, IMAGE_SIDE, IMAGE_SIDE], images)?,
        targets: Tensor::new(vec![n, NUM_COORDS], targets)?,
        mask: Tensor::new(vec![n, NUM_COORDS], mask)?,
    })
}

/// Converts `[B, 30]` normalized predictions back to pixel coordinates.
pub fn denormalize_prediction(pred: &Tensor<f32>) -> Result<Vec<[f64; NUM_COORDS]>> {
    let (_, cols) = pred.dims2("denormalize_prediction")?;
    if cols != NUM_COORDS {
        return Err(Error::ShapeMismatch {
            op: "denormalize_prediction",
            axis: "coordinates",
            expected: NUM_COORDS,
            actual: cols,
        });
    }
    Ok(pred
        .data()
        .chunks(NUM_COORDS)
        .map(|row| {
            let mut out = [0.0; NUM_COORDS];
            for (o, &v) in out.iter_mut().zip(row) {
                *o = denormalize_coord(f64::from(v));
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GrayImage;

    #[test]
    fn endpoints() {
        assert_eq!(normalize_pixel(255), 1.0);
        assert_eq!(normalize_pixel(0), 0.0);
        assert_eq!(normalize_coord(48.0), 0.0);
        assert_eq!(normalize_coord(0.0), -1.0);
        assert_eq!(normalize_coord(96.0), 1.0);
    }

    #[test]
    fn inverse() {
        for i in 0..960 {
            let v = i as f64 * 0.1;
            assert!((denormalize_coord(normalize_coord(v)) - v).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_masks_missing() {
        let mut coords = [Some(48.0); NUM_COORDS];
        coords[3] = None;
        let s = Sample::new(GrayImage::filled(255), coords);
        let b = to_batch([&s, &s]).unwrap();
        assert_eq!(b.images.shape(), &[2, 1, 96, 96]);
        assert_eq!(b.mask.data()[3], 0.0);
        assert_eq!(b.mask.data()[4], 1.0);
        assert_eq!(b.targets.data()[0], 0.0);
        assert!(b.images.data().iter().all(|&v| v == 1.0));
        assert!(to_batch(std::iter::empty()).is_err());
    }
}
