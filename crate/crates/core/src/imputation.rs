//! Missing-label imputation: forward fill and k-nearest-neighbour.
//!
//! Both imputers work on a row-major matrix of optional values so they can
//! be exercised on small synthetic tables as well as on the 30 keypoint
//! columns of a [`Dataset`].

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, NUM_COORDS};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;

pub type Row = Vec<Option<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImputeMethod {
    None,
    ForwardFill,
    Knn,
}

impl ImputeMethod {
    pub fn label(self) -> &'static str {
        match self {
            ImputeMethod::None => "none",
            ImputeMethod::ForwardFill => "forward-fill",
            ImputeMethod::Knn => "knn",
        }
    }
}

impl std::str::FromStr for ImputeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ImputeMethod::None),
            "forward-fill" | "ffill" => Ok(ImputeMethod::ForwardFill),
            "knn" => Ok(ImputeMethod::Knn),
            other => Err(Error::invalid(format!("unknown imputation method {other:?}"))),
        }
    }
}

/// Applies `method` (`k` only matters for KNN).
pub fn impute(ds: &Dataset, method: ImputeMethod, k: usize) -> Result<Dataset> {
    match method {
        ImputeMethod::None => Ok(ds.clone()),
        ImputeMethod::ForwardFill => forward_fill(ds),
        ImputeMethod::Knn => knn_impute(ds, k),
    }
}

fn to_rows(ds: &Dataset) -> Vec<Row> {
    ds.samples.iter().map(|s| s.coords.to_vec()).collect()
}

fn from_rows(ds: &Dataset, rows: Vec<Row>) -> Dataset {
    let samples = ds
        .samples
        .iter()
        .zip(rows)
        .map(|(s, row)| {
            let mut out = s.clone();
            let mut coords = [None; NUM_COORDS];
            coords.copy_from_slice(&row);
            out.coords = coords;
            out
        })
        .collect();
    ds.with_samples(samples)
}

fn column_name(names: &[String], col: usize) -> String {
    names.get(col).cloned().unwrap_or_else(|| format!("column {col}"))
}

fn width(rows: &[Row]) -> Result<usize> {
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::invalid("rows have differing widths"));
    }
    Ok(w)
}

/// Per column, in row order: each gap takes the most recent earlier present
/// value; gaps before the first observation take the column mean.
pub fn forward_fill_matrix(rows: &[Row], names: &[String]) -> Result<Vec<Row>> {
    let w = width(rows)?;
    let mut out = rows.to_vec();
    for col in 0..w {
        let present: Vec<f64> = rows.iter().filter_map(|r| r[col]).collect();
        if present.is_empty() {
            return Err(Error::EmptyColumn {
                column: column_name(names, col),
            });
        }
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        let mut last = None;
        for row in out.iter_mut() {
            match row[col] {
                Some(v) => last = Some(v),
                None => row[col] = Some(last.unwrap_or(mean)),
            }
        }
    }
    Ok(out)
}

pub fn forward_fill(ds: &Dataset) -> Result<Dataset> {
    let rows = forward_fill_matrix(&to_rows(ds), &ds.keypoint_names)?;
    Ok(from_rows(ds, rows))
}

/// Missing-aware Euclidean distance over coordinates present in both rows,
/// scaled by `sqrt(width / shared)`. `None` when nothing is shared.
pub fn masked_distance(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let mut shared = 0usize;
    let mut sq = 0.0;
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            shared += 1;
            sq += (x - y) * (x - y);
        }
    }
    (shared > 0).then(|| (sq * a.len() as f64 / shared as f64).sqrt())
}

/// Fills each gap with the unweighted mean of the column over the `k`
/// nearest rows that have it present. Distances and donor values come
/// from the original table only. Ties go to the earlier row.
pub fn knn_impute_matrix(rows: &[Row], k: usize, names: &[String]) -> Result<Vec<Row>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let w = width(rows)?;
    for col in 0..w {
        let present = rows.iter().filter(|r| r[col].is_some()).count();
        if present < rows.len() && present < k {
            return Err(Error::InsufficientDonors {
                column: column_name(names, col),
                k,
                available: present,
            });
        }
    }

    rows.par_iter()
        .enumerate()
        .map(|(r, row)| {
            if row.iter().all(Option::is_some) {
                return Ok(row.clone());
            }
            let dists: Vec<Option<f64>> = rows
                .iter()
                .enumerate()
                .map(|(d, other)| if d == r { None } else { masked_distance(row, other) })
                .collect();
            let mut filled = row.clone();
            for col in (0..w).filter(|&c| row[c].is_none()) {
                let mut donors: Vec<(f64, usize)> = dists
                    .iter()
                    .enumerate()
                    .filter_map(|(d, dist)| Some((dist.as_ref().copied()?, d)))
                    .filter(|&(_, d)| rows[d][col].is_some())
                    .collect();
                if donors.is_empty() {
                    return Err(Error::NoSharedCoordinates {
                        row: r,
                        column: column_name(names, col),
                    });
                }
                if donors.len() < k {
                    return Err(Error::InsufficientDonors {
                        column: column_name(names, col),
                        k,
                        available: donors.len(),
                    });
                }
                donors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
                let sum: f64 = donors[..k].iter().map(|&(_, d)| rows[d][col].unwrap_or(0.0)).sum();
                filled[col] = Some(sum / k as f64);
            }
            Ok(filled)
        })
        .collect()
}

pub fn knn_impute(ds: &Dataset, k: usize) -> Result<Dataset> {
    let rows = knn_impute_matrix(&to_rows(ds), k, &ds.keypoint_names)?;
    Ok(from_rows(ds, rows))
}
