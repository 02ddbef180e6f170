//! Offline augmentation that keeps images and keypoints consistent.
//!
//! Geometric transforms resample the image bilinearly through the inverse
//! map and move keypoints through the forward map, so a feature's pixels and
//! its label stay together. A variant is dropped when any keypoint would
//! leave the frame.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, GrayImage, Sample, IMAGE_SIDE, NUM_KEYPOINTS};
use crate::error::{Error, Result};

/// Rotation center: the middle of the 96-pixel grid, pixel centers at integers.
pub const CENTER: f64 = (IMAGE_SIDE as f64 - 1.0) / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    /// `[-r, r]`
    pub fn symmetric(r: f64) -> Self {
        Range {
            lo: -r.abs(),
            hi: r.abs(),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub rotation_degrees: Range,
    pub shift_x: Range,
    pub shift_y: Range,
    pub brightness_factor: Range,
    pub noise_sigma: Range,
    pub per_sample_variants: usize,
    pub seed: u64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            rotation_degrees: Range::symmetric(15.0),
            shift_x: Range::symmetric(8.0),
            shift_y: Range::symmetric(8.0),
            brightness_factor: Range::new(0.7, 1.3),
            noise_sigma: Range::new(0.0, 12.0),
            per_sample_variants: 4,
            seed: 0,
        }
    }
}

impl AugmentationSpec {
    /// Builds the spec from the CLI's half-width style parameters.
    pub fn from_magnitudes(rot: f64, shift: f64, bright: f64, noise: f64, variants: usize, seed: u64) -> Self {
        AugmentationSpec {
            rotation_degrees: Range::symmetric(rot),
            shift_x: Range::symmetric(shift),
            shift_y: Range::symmetric(shift),
            brightness_factor: Range::new(1.0 - bright.abs(), 1.0 + bright.abs()),
            noise_sigma: Range::new(0.0, noise.abs()),
            per_sample_variants: variants,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("rotation", self.rotation_degrees),
            ("shift_x", self.shift_x),
            ("shift_y", self.shift_y),
            ("brightness", self.brightness_factor),
            ("noise", self.noise_sigma),
        ] {
            if !r.is_valid() {
                return Err(Error::invalid(format!("{name} range must be finite with lo <= hi")));
            }
        }
        if self.noise_sigma.lo < 0.0 || self.brightness_factor.lo < 0.0 {
            return Err(Error::invalid("noise sigma and brightness factor must be non-negative"));
        }
        Ok(())
    }
}

/// Rotation by `theta` (counter-clockwise as displayed) about [`CENTER`],
/// followed by a translation.
#[derive(Clone, Copy, Debug)]
struct Rigid {
    cos: f64,
    sin: f64,
    dx: f64,
    dy: f64,
}

impl Rigid {
    fn new(theta_degrees: f64, dx: f64, dy: f64) -> Self {
        let (sin, cos) = theta_degrees.to_radians().sin_cos();
        Rigid { cos, sin, dx, dy }
    }

    // y grows downward, so a visually counter-clockwise turn is
    // x' = x cos + y sin, y' = -x sin + y cos about the center
    fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let (px, py) = (x - CENTER, y - CENTER);
        (
            CENTER + px * self.cos + py * self.sin + self.dx,
            CENTER - px * self.sin + py * self.cos + self.dy,
        )
    }

    fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let (px, py) = (x - CENTER - self.dx, y - CENTER - self.dy);
        (
            CENTER + px * self.cos - py * self.sin,
            CENTER + px * self.sin + py * self.cos,
        )
    }
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let tap = |xi: f64, yi: f64| -> f64 {
        if xi < 0.0 || yi < 0.0 || xi >= IMAGE_SIDE as f64 || yi >= IMAGE_SIDE as f64 {
            0.0
        } else {
            f64::from(img.get(xi as usize, yi as usize))
        }
    };
    let mut v = 0.0;
    for (wx, xi) in [(1.0 - fx, x0), (fx, x0 + 1.0)] {
        for (wy, yi) in [(1.0 - fy, y0), (fy, y0 + 1.0)] {
            let w = wx * wy;
            if w > 0.0 {
                v += w * tap(xi, yi);
            }
        }
    }
    v
}

fn warp(sample: &Sample, t: Rigid) -> Option<Sample> {
    let mut coords = sample.coords;
    for k in 0..NUM_KEYPOINTS {
        if let Some((x, y)) = sample.keypoint(k) {
            let (nx, ny) = t.forward(x, y);
            coords[2 * k] = Some(nx);
            coords[2 * k + 1] = Some(ny);
        }
    }
    let out = Sample {
        image: sample.image.clone(),
        coords,
        image_id: sample.image_id,
    };
    if !out.keypoints_in_frame() {
        return None;
    }
    let mut pixels = vec![0u8; IMAGE_SIDE * IMAGE_SIDE];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let (sx, sy) = t.inverse(x as f64, y as f64);
            pixels[y * IMAGE_SIDE + x] = bilinear(&sample.image, sx, sy).round().clamp(0.0, 255.0) as u8;
        }
    }
    Some(Sample {
        image: GrayImage::new(pixels).expect("warp output has the full pixel count"),
        ..out
    })
}

/// Rotates image and keypoints together; `None` if a keypoint leaves the frame.
pub fn rotate_sample(sample: &Sample, theta_degrees: f64) -> Option<Sample> {
    if theta_degrees % 360.0 == 0.0 {
        return Some(sample.clone());
    }
    warp(sample, Rigid::new(theta_degrees, 0.0, 0.0))
}

/// Translates image and keypoints by `(dx, dy)`; vacated pixels become 0.
pub fn shift_sample(sample: &Sample, dx: f64, dy: f64) -> Option<Sample> {
    if dx == 0.0 && dy == 0.0 {
        return Some(sample.clone());
    }
    warp(sample, Rigid::new(0.0, dx, dy))
}

/// Rotation then translation in a single resampling pass.
pub fn rotate_and_shift(sample: &Sample, theta_degrees: f64, dx: f64, dy: f64) -> Option<Sample> {
    if theta_degrees % 360.0 == 0.0 && dx == 0.0 && dy == 0.0 {
        return Some(sample.clone());
    }
    warp(sample, Rigid::new(theta_degrees, dx, dy))
}

pub fn adjust_brightness(sample: &Sample, factor: f64) -> Sample {
    let mut out = sample.clone();
    for p in out.image.pixels_mut() {
        *p = (f64::from(*p) * factor).round().clamp(0.0, 255.0) as u8;
    }
    out
}

pub fn add_gaussian_noise(sample: &Sample, sigma: f64, seed: u64) -> Result<Sample> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let mut out = sample.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in out.image.pixels_mut() {
        *p = (f64::from(*p) + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

fn variants_of(sample: &Sample, index: usize, spec: &AugmentationSpec) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let mut out = Vec::with_capacity(spec.per_sample_variants);
    for _ in 0..spec.per_sample_variants {
        // draw every parameter up front so rejections don't shift the stream
        let theta = spec.rotation_degrees.sample(&mut rng);
        let dx = spec.shift_x.sample(&mut rng);
        let dy = spec.shift_y.sample(&mut rng);
        let factor = spec.brightness_factor.sample(&mut rng);
        let sigma = spec.noise_sigma.sample(&mut rng);
        let noise_seed = rng.next_u64();
        if let Some(moved) = rotate_and_shift(sample, theta, dx, dy) {
            let lit = adjust_brightness(&moved, factor);
            out.push(add_gaussian_noise(&lit, sigma, noise_seed)?);
        }
    }
    Ok(out)
}

/// Originals followed by every accepted variant (sample-major order).
/// The input must be complete-case.
pub fn augment_offline(ds: &Dataset, spec: &AugmentationSpec) -> Result<Dataset> {
    spec.validate()?;
    if let Some(index) = ds.samples.iter().position(|s| !s.is_complete()) {
        return Err(Error::IncompleteSample { index });
    }
    let variants: Vec<Vec<Sample>> = ds
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| variants_of(s, i, spec))
        .collect::<Result<_>>()?;
    let mut samples = ds.samples.clone();
    samples.extend(variants.into_iter().flatten());
    Ok(ds.with_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_dataset, NUM_COORDS};

    fn with_keypoint(x: f64, y: f64) -> Sample {
        let mut coords = [Some(48.0); NUM_COORDS];
        coords[0] = Some(x);
        coords[1] = Some(y);
        Sample::new(GrayImage::filled(0), coords)
    }

    #[test]
    fn zero_transforms_are_identity() {
        let s = synthesize_dataset(1, 4).samples.remove(0);
        assert_eq!(rotate_sample(&s, 0.0).unwrap(), s);
        assert_eq!(shift_sample(&s, 0.0, 0.0).unwrap(), s);
        assert_eq!(adjust_brightness(&s, 1.0), s);
        assert_eq!(add_gaussian_noise(&s, 0.0, 9).unwrap(), s);
    }

    #[test]
    fn quarter_turn_moves_marker_with_keypoint() {
        let mut s = with_keypoint(57.5, 47.5);
        // marker covering the four pixels around (57.5, 47.5)
        for (x, y) in [(57, 47), (58, 47), (57, 48), (58, 48)] {
            s.image.set(x, y, 200);
        }
        let r = rotate_sample(&s, 90.0).unwrap();
        let (x, y) = r.keypoint(0).unwrap();
        assert!((x - 47.5).abs() < 1e-9 && (y - 37.5).abs() < 1e-9);
        // brightest pixels now straddle (47.5, 37.5)
        for (px, py) in [(47, 37), (48, 37), (47, 38), (48, 38)] {
            assert_eq!(r.image.get(px, py), 200);
        }
    }

    #[test]
    fn half_turn_twice_returns() {
        let s = synthesize_dataset(1, 8).samples.remove(0);
        let twice = rotate_sample(&rotate_sample(&s, 180.0).unwrap(), 180.0).unwrap();
        for (a, b) in s.coords.iter().zip(&twice.coords) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-3);
        }
    }

    #[test]
    fn shift_arithmetic_and_rejection() {
        let s = with_keypoint(10.0, 10.0);
        let t = shift_sample(&s, 5.0, 3.0).unwrap();
        assert_eq!(t.keypoint(0), Some((15.0, 13.0)));
        let edge = with_keypoint(94.0, 50.0);
        assert!(shift_sample(&edge, 5.0, 0.0).is_none());
    }

    #[test]
    fn integer_shift_moves_pixels_exactly() {
        let mut s = with_keypoint(20.0, 30.0);
        s.image.set(20, 30, 255);
        let t = shift_sample(&s, -4.0, 7.0).unwrap();
        assert_eq!(t.image.get(16, 37), 255);
        assert_eq!(t.image.pixels().iter().map(|&p| p as u32).sum::<u32>(), 255);
    }

    #[test]
    fn brightness_clamps() {
        let mut s = with_keypoint(10.0, 10.0);
        s.image.set(0, 0, 200);
        let b = adjust_brightness(&s, 1.5);
        assert_eq!(b.image.get(0, 0), 255);
        assert_eq!(b.coords, s.coords);
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let s = Sample::new(GrayImage::filled(128), [Some(40.0); NUM_COORDS]);
        let n = add_gaussian_noise(&s, 10.0, 3).unwrap();
        let mean = n.image.pixels().iter().map(|&p| p as f64).sum::<f64>() / 9216.0;
        assert!((mean - 128.0).abs() < 1.0, "{mean}");
        assert_eq!(add_gaussian_noise(&s, 10.0, 3).unwrap(), n);
        assert_eq!(n.coords, s.coords);
        assert!(add_gaussian_noise(&s, -1.0, 3).is_err());
    }

    #[test]
    fn offline_counts() {
        let ds = synthesize_dataset(10, 1);
        let zero = AugmentationSpec {
            per_sample_variants: 0,
            ..AugmentationSpec::default()
        };
        assert_eq!(augment_offline(&ds, &zero).unwrap(), ds);

        // small magnitudes: nothing gets pushed out of frame
        let gentle = AugmentationSpec {
            rotation_degrees: Range::symmetric(2.0),
            shift_x: Range::symmetric(1.0),
            shift_y: Range::symmetric(1.0),
            per_sample_variants: 4,
            ..AugmentationSpec::default()
        };
        let out = augment_offline(&ds, &gentle).unwrap();
        assert_eq!(out.len(), 50);
        assert_eq!(out.samples[..10], ds.samples[..]);
        assert!(out.samples.iter().all(Sample::keypoints_in_frame));
        assert_eq!(augment_offline(&ds, &gentle).unwrap(), out);
    }

    #[test]
    fn offline_rejects_incomplete() {
        let mut ds = synthesize_dataset(3, 1);
        ds.samples[2].coords[5] = None;
        assert!(matches!(
            augment_offline(&ds, &AugmentationSpec::default()),
            Err(Error::IncompleteSample { index: 2 })
        ));
    }
}
