//! Synthetic faces with exact ground truth.
//!
//! Each image is a dim face ellipse with one bright axis-aligned Gaussian
//! blob per landmark, peaked at the landmark's coordinate. Pixel `(col, row)`
//! samples the continuous image at `(x, y) = (col, row)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Dataset, GrayImage, Sample, IMAGE_SIDE, NUM_COORDS, NUM_KEYPOINTS};

/// Landmark offsets from the face center at unit scale, pixels.
const TEMPLATE: [(f64, f64); NUM_KEYPOINTS] = [
    (18.0, -10.0),
    (-18.0, -10.0),
    (9.0, -10.0),
    (27.0, -10.0),
    (-9.0, -10.0),
    (-27.0, -10.0),
    (8.0, -21.0),
    (29.0, -21.0),
    (-8.0, -21.0),
    (-29.0, -21.0),
    (0.0, 5.0),
    (14.0, 19.0),
    (-14.0, 19.0),
    (0.0, 15.0),
    (0.0, 25.0),
];

/// Blob standard deviations `(sx, sy)` per landmark.
const BLOB_SIGMA: [(f64, f64); NUM_KEYPOINTS] = [
    (1.2, 0.9),
    (1.2, 0.9),
    (0.9, 0.9),
    (0.9, 0.9),
    (0.9, 0.9),
    (0.9, 0.9),
    (1.2, 0.8),
    (1.2, 0.8),
    (1.2, 0.8),
    (1.2, 0.8),
    (1.0, 1.2),
    (0.9, 0.9),
    (0.9, 0.9),
    (1.2, 0.8),
    (1.2, 0.8),
];

/// Landmarks kept on rows selected for missingness (eye centers, nose tip,
/// bottom lip), mirroring the sparse rows of the public data.
const SPARSE_KEEP: [usize; 4] = [0, 1, 10, 14];

const MIN_SEPARATION: f64 = 4.5;
const KEYPOINT_LO: f64 = 8.0;
const KEYPOINT_HI: f64 = 88.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    /// Fraction of rows that keep only 4 of the 15 landmarks.
    pub missing_fraction: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { missing_fraction: 0.0 }
    }
}

pub fn synthesize_dataset(n: usize, seed: u64) -> Dataset {
    synthesize_dataset_with(n, seed, &SynthOptions::default())
}

pub fn synthesize_dataset_with(n: usize, seed: u64, opts: &SynthOptions) -> Dataset {
    let p_missing = opts.missing_fraction.clamp(0.0, 1.0);
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut s = render_face(&mut rng);
            if p_missing > 0.0 && rng.random_bool(p_missing) {
                for k in 0..NUM_KEYPOINTS {
                    if !SPARSE_KEEP.contains(&k) {
                        s.coords[2 * k] = None;
                        s.coords[2 * k + 1] = None;
                    }
                }
            }
            s
        })
        .collect();
    Dataset::new(samples)
}

fn sample_layout(rng: &mut ChaCha8Rng) -> [(f64, f64); NUM_KEYPOINTS] {
    loop {
        let cx = rng.random_range(38.0..58.0);
        let cy = rng.random_range(36.0..56.0);
        let scale = rng.random_range(0.8..1.1);
        let angle: f64 = rng.random_range(-10.0f64..10.0).to_radians();
        let (sin, cos) = angle.sin_cos();
        let mut pts = [(0.0, 0.0); NUM_KEYPOINTS];
        for (p, &(dx, dy)) in pts.iter_mut().zip(&TEMPLATE) {
            let jx = rng.random_range(-1.2..1.2);
            let jy = rng.random_range(-1.2..1.2);
            let (ox, oy) = (dx * scale, dy * scale);
            *p = (cx + ox * cos - oy * sin + jx, cy + ox * sin + oy * cos + jy);
        }
        let inside = pts
            .iter()
            .all(|&(x, y)| (KEYPOINT_LO..KEYPOINT_HI).contains(&x) && (KEYPOINT_LO..KEYPOINT_HI).contains(&y));
        let separated = (0..NUM_KEYPOINTS).all(|a| {
            (a + 1..NUM_KEYPOINTS).all(|b| {
                let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
                dx.hypot(dy) >= MIN_SEPARATION
            })
        });
        if inside && separated {
            return pts;
        }
    }
}

fn render_face(rng: &mut ChaCha8Rng) -> Sample {
    let pts = sample_layout(rng);
    let side = IMAGE_SIDE;
    let mut canvas = vec![0.0f64; side * side];

    // face ellipse around the landmark centroid
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), &(x, y)| {
        (a + x / NUM_KEYPOINTS as f64, b + y / NUM_KEYPOINTS as f64)
    });
    let rx = rng.random_range(34.0..40.0);
    let ry = rng.random_range(40.0..46.0);
    let face_level = rng.random_range(35.0..55.0);
    for y in 0..side {
        for x in 0..side {
            let d = ((x as f64 - mx) / rx).powi(2) + ((y as f64 - my) / ry).powi(2);
            // soft edge over the outer 10% of the radius
            let w = ((1.0 - d.sqrt()) / 0.1).clamp(0.0, 1.0);
            canvas[y * side + x] = face_level * w;
        }
    }

    for (&(kx, ky), &(sx, sy)) in pts.iter().zip(&BLOB_SIGMA) {
        let amp = rng.random_range(150.0..190.0);
        let x0 = (kx - 5.0).floor().max(0.0) as usize;
        let x1 = ((kx + 5.0).ceil() as usize).min(side - 1);
        let y0 = (ky - 5.0).floor().max(0.0) as usize;
        let y1 = ((ky + 5.0).ceil() as usize).min(side - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = (x as f64 - kx) / sx;
                let dy = (y as f64 - ky) / sy;
                canvas[y * side + x] += amp * (-0.5 * (dx * dx + dy * dy)).exp();
            }
        }
    }

    let pixels = canvas
        .iter()
        .map(|&v| (v + f64::from(rng.random_range(-3i32..=3))).round().clamp(0.0, 255.0) as u8)
        .collect();
    let mut coords = [None; NUM_COORDS];
    for (k, &(x, y)) in pts.iter().enumerate() {
        coords[2 * k] = Some(x);
        coords[2 * k + 1] = Some(y);
    }
    Sample::new(GrayImage { pixels }, coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::null_profile;

    #[test]
    fn deterministic_per_seed() {
        let a = synthesize_dataset(12, 7);
        let b = synthesize_dataset(12, 7);
        assert_eq!(a, b);
        let c = synthesize_dataset(12, 8);
        assert_ne!(a, c);
        assert!(synthesize_dataset(0, 1).is_empty());
    }

    #[test]
    fn prefix_stable_in_n() {
        let a = synthesize_dataset(5, 3);
        let b = synthesize_dataset(9, 3);
        assert_eq!(a.samples[..], b.samples[..5]);
    }

    #[test]
    fn keypoints_in_generator_band() {
        for s in &synthesize_dataset(200, 11).samples {
            for v in s.coords.iter().flatten() {
                assert!((8.0..88.0).contains(v), "{v}");
            }
        }
    }

    #[test]
    fn blob_peak_near_keypoint() {
        for s in &synthesize_dataset(100, 5).samples {
            for k in 0..NUM_KEYPOINTS {
                let (x, y) = s.keypoint(k).unwrap();
                let (cx, cy) = (x.round() as i64, y.round() as i64);
                let mut best = (0u8, 0i64, 0i64);
                for py in cy - 3..=cy + 3 {
                    for px in cx - 3..=cx + 3 {
                        let v = s.image.get(px as usize, py as usize);
                        if v > best.0 {
                            best = (v, px, py);
                        }
                    }
                }
                assert!(
                    (best.1 as f64 - x).abs() <= 1.0 && (best.2 as f64 - y).abs() <= 1.0,
                    "landmark {k} at ({x:.2},{y:.2}) brightest at ({}, {})",
                    best.1,
                    best.2
                );
            }
        }
    }

    #[test]
    fn missing_fraction_drops_to_sparse_rows() {
        let ds = synthesize_dataset_with(400, 2, &SynthOptions { missing_fraction: 0.7 });
        let p = null_profile(&ds);
        let frac = p.missing_fraction();
        assert!((0.6..0.8).contains(&frac), "{frac}");
        for s in ds.samples.iter().filter(|s| !s.is_complete()) {
            assert_eq!(s.coords.iter().flatten().count(), 8);
            assert!(s.keypoint(0).is_some() && s.keypoint(14).is_some());
        }
    }
}
