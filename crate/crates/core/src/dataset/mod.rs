//! Keypoint datasets: 96x96 grayscale faces with 15 optionally-missing
//! landmarks, stored as 30 coordinate columns in the public CSV layout.

mod csv_io;
mod normalize;
mod synth;

use std::path::PathBuf;

use crate::error::{Error, Result};

pub use csv_io::{parse_test_csv, parse_training_csv, write_test_csv, write_training_csv};
pub use normalize::{denormalize_coord, denormalize_prediction, normalize_coord, normalize_pixel, to_batch, Batch};
pub use synth::{synthesize_dataset, synthesize_dataset_with, SynthOptions};

pub const IMAGE_SIDE: usize = 96;
pub const NUM_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_KEYPOINTS: usize = 15;
pub const NUM_COORDS: usize = 2 * NUM_KEYPOINTS;

/// Landmark names in column order.
pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "left_eye_center",
    "right_eye_center",
    "left_eye_inner_corner",
    "left_eye_outer_corner",
    "right_eye_inner_corner",
    "right_eye_outer_corner",
    "left_eyebrow_inner_end",
    "left_eyebrow_outer_end",
    "right_eyebrow_inner_end",
    "right_eyebrow_outer_end",
    "nose_tip",
    "mouth_left_corner",
    "mouth_right_corner",
    "mouth_center_top_lip",
    "mouth_center_bottom_lip",
];

/// Env var pointing at a directory holding `training.csv` / `test.csv`.
pub const DATA_DIR_ENV: &str = "KPBENCH_DATA_DIR";

/// The 30 coordinate column names, `<landmark>_x` then `<landmark>_y`.
pub fn coordinate_columns() -> Vec<String> {
    KEYPOINT_NAMES
        .iter()
        .flat_map(|n| [format!("{n}_x"), format!("{n}_y")])
        .collect()
}

/// Looks for `file_name` under `$KPBENCH_DATA_DIR`.
pub fn locate_real_data(file_name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(DATA_DIR_ENV)?;
    let path = PathBuf::from(dir).join(file_name);
    path.is_file().then_some(path)
}

/// A 96x96 grid of 8-bit intensities, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != NUM_PIXELS {
            return Err(Error::invalid(format!(
                "image must hold {NUM_PIXELS} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(GrayImage { pixels })
    }

    pub fn filled(value: u8) -> Self {
        GrayImage {
            pixels: vec![value; NUM_PIXELS],
        }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * IMAGE_SIDE + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * IMAGE_SIDE + x] = v;
    }
}

/// Whether a coordinate lies inside the frame, `[0, 96)`.
pub fn in_frame(v: f64) -> bool {
    (0.0..IMAGE_SIDE as f64).contains(&v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: GrayImage,
    /// Pixel-unit coordinates, origin top-left, laid out like
    /// [`coordinate_columns`].
    pub coords: [Option<f64>; NUM_COORDS],
    /// Preserved from test files.
    pub image_id: Option<u32>,
}

impl Sample {
    pub fn new(image: GrayImage, coords: [Option<f64>; NUM_COORDS]) -> Self {
        Sample {
            image,
            coords,
            image_id: None,
        }
    }

    pub fn keypoint(&self, i: usize) -> Option<(f64, f64)> {
        Some((self.coords[2 * i]?, self.coords[2 * i + 1]?))
    }

    pub fn is_complete(&self) -> bool {
        self.coords.iter().all(Option::is_some)
    }

    pub fn keypoints_in_frame(&self) -> bool {
        self.coords.iter().flatten().all(|&v| in_frame(v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub keypoint_names: Vec<String>,
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset::new(Vec::new())
    }
}

impl Dataset {
    /// Dataset with the standard column names.
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset {
            samples,
            keypoint_names: coordinate_columns(),
        }
    }

    pub fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Dataset {
            samples,
            keypoint_names: self.keypoint_names.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NullProfile {
    pub total: usize,
    pub complete: usize,
    pub with_missing: usize,
    pub per_column_missing: Vec<usize>,
}

impl NullProfile {
    pub fn complete_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.complete as f64 / self.total as f64
        }
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.with_missing as f64 / self.total as f64
        }
    }
}

pub fn null_profile(ds: &Dataset) -> NullProfile {
    let mut per_column_missing = vec![0; NUM_COORDS];
    let mut complete = 0;
    for s in &ds.samples {
        let mut all = true;
        for (col, v) in s.coords.iter().enumerate() {
            if v.is_none() {
                per_column_missing[col] += 1;
                all = false;
            }
        }
        complete += usize::from(all);
    }
    NullProfile {
        total: ds.len(),
        complete,
        with_missing: ds.len() - complete,
        per_column_missing,
    }
}

/// Samples with all 30 coordinates present, in original order.
pub fn complete_subset(ds: &Dataset) -> Dataset {
    ds.with_samples(ds.samples.iter().filter(|s| s.is_complete()).cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(missing: &[usize]) -> Sample {
        let mut coords = [Some(40.0); NUM_COORDS];
        for &m in missing {
            coords[m] = None;
        }
        Sample::new(GrayImage::filled(0), coords)
    }

    #[test]
    fn column_names() {
        let cols = coordinate_columns();
        assert_eq!(cols.len(), 30);
        assert_eq!(cols[0], "left_eye_center_x");
        assert_eq!(cols[1], "left_eye_center_y");
        assert_eq!(cols[29], "mouth_center_bottom_lip_y");
    }

    #[test]
    fn profile_counts() {
        let ds = Dataset::new(vec![sample(&[]), sample(&[3]), sample(&[]), sample(&[3, 7])]);
        let p = null_profile(&ds);
        assert_eq!((p.total, p.complete, p.with_missing), (4, 2, 2));
        assert_eq!(p.complete_fraction(), 0.5);
        assert_eq!(p.per_column_missing[3], 2);
        assert_eq!(p.per_column_missing[7], 1);
        assert_eq!(p.complete + p.with_missing, p.total);
    }

    #[test]
    fn all_complete_profile() {
        let ds = Dataset::new(vec![sample(&[]); 3]);
        assert_eq!(null_profile(&ds).with_missing, 0);
        assert_eq!(complete_subset(&ds), ds);
    }

    #[test]
    fn complete_subset_filters_in_order() {
        let mut a = sample(&[]);
        a.coords[0] = Some(1.0);
        let mut b = sample(&[]);
        b.coords[0] = Some(2.0);
        let ds = Dataset::new(vec![a, sample(&[5]), b]);
        let c = complete_subset(&ds);
        assert_eq!(c.len(), 2);
        assert_eq!(c.samples[0].coords[0], Some(1.0));
        assert_eq!(c.samples[1].coords[0], Some(2.0));
        assert_eq!(null_profile(&c).with_missing, 0);

        let none = Dataset::new(vec![sample(&[1]), sample(&[2])]);
        assert!(complete_subset(&none).is_empty());
    }
}
