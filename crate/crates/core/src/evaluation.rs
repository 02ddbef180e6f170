//! Pixel RMSE, batched prediction, inference timing and benchmark reports.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{denormalize_prediction, to_batch, Dataset, Sample, IMAGE_SIDE, NUM_COORDS};
use crate::error::{Error, Result};
use crate::models::Model;

/// Batch size for validation and prediction passes.
pub const EVAL_BATCH: usize = 64;
/// Batch size of the timed inference passes.
pub const BENCH_BATCH: usize = 32;

/// Normalized coordinate error to pixels.
pub fn normalized_to_px(v: f64) -> f64 {
    v * IMAGE_SIDE as f64 / 2.0
}

/// `sqrt(sum mask * (pred - target)^2 / sum mask)` over pixel-space values.
pub fn rmse(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "rmse",
            axis: "length",
            expected: pred.len(),
            actual: if pred.len() != target.len() {
                target.len()
            } else {
                mask.len()
            },
        });
    }
    let m: f64 = mask.iter().sum();
    if m <= 0.0 {
        return Err(Error::EmptyMask);
    }
    let sq: f64 = pred
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((p, y), k)| k * (p - y) * (p - y))
        .sum();
    Ok((sq / m).sqrt())
}

fn predict_normalized(model: &Model, samples: &[Sample], batch_size: usize) -> Result<Vec<f32>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut out = Vec::with_capacity(samples.len() * NUM_COORDS);
    for chunk in samples.chunks(batch_size) {
        let batch = to_batch(chunk)?;
        out.extend_from_slice(model.forward(&batch.images)?.data());
    }
    Ok(out)
}

/// Pixel-space predictions in dataset order.
pub fn predict_batch(model: &Model, ds: &Dataset, batch_size: usize) -> Result<Vec<[f64; NUM_COORDS]>> {
    if ds.is_empty() {
        return Ok(Vec::new());
    }
    let flat = predict_normalized(model, &ds.samples, batch_size)?;
    let t = crate::Tensor::new(vec![ds.len(), NUM_COORDS], flat)?;
    denormalize_prediction(&t)
}

/// Masked MSE in normalized coordinates over every present label of `ds`.
pub fn normalized_mse(model: &Model, ds: &Dataset, batch_size: usize) -> Result<f64> {
    let pred = predict_normalized(model, &ds.samples, batch_size)?;
    let (mut sq, mut m) = (0.0f64, 0.0f64);
    for (s, row) in ds.samples.iter().zip(pred.chunks(NUM_COORDS)) {
        for (c, &p) in s.coords.iter().zip(row) {
            if let Some(v) = c {
                let d = f64::from(p) - crate::dataset::normalize_coord(*v) as f32 as f64;
                sq += d * d;
                m += 1.0;
            }
        }
    }
    if m == 0.0 {
        return Err(Error::EmptyMask);
    }
    Ok(sq / m)
}

/// Pixel RMSE of `model` on the present labels of `ds`.
pub fn dataset_rmse_px(model: &Model, ds: &Dataset) -> Result<f64> {
    let preds = predict_batch(model, ds, EVAL_BATCH)?;
    let (mut p, mut y, mut k) = (Vec::new(), Vec::new(), Vec::new());
    for (s, row) in ds.samples.iter().zip(&preds) {
        for (c, &v) in s.coords.iter().zip(row) {
            p.push(v);
            y.push(c.unwrap_or(0.0));
            k.push(if c.is_some() { 1.0 } else { 0.0 });
        }
    }
    rmse(&p, &y, &k)
}

/// Monotonic time source for the timing harness.
pub trait Clock {
    fn now(&mut self) -> Duration;
}

/// Wall clock measured from construction.
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        SystemClock(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&mut self) -> Duration {
        self.0.elapsed()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Timing {
    /// Median over repetitions of `seconds / images * 100`.
    pub sec_per_100: f64,
    /// Per-repetition values of the same quantity.
    pub runs: Vec<f64>,
    pub warmup: usize,
    pub reps: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs `pass` `warmup` times untimed, then `reps` timed times.
pub fn time_passes<C: Clock>(
    images: usize,
    warmup: usize,
    reps: usize,
    clock: &mut C,
    mut pass: impl FnMut() -> Result<()>,
) -> Result<Timing> {
    if images == 0 {
        return Err(Error::EmptyDataset("cannot time inference on zero images"));
    }
    if reps < 3 {
        return Err(Error::invalid(format!("need at least 3 timed repetitions, got {reps}")));
    }
    for _ in 0..warmup {
        pass()?;
    }
    let mut runs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = clock.now();
        pass()?;
        let dt = clock.now().saturating_sub(t0).as_secs_f64();
        runs.push(dt / images as f64 * 100.0);
    }
    Ok(Timing {
        sec_per_100: median(&runs),
        runs,
        warmup,
        reps,
    })
}

/// Seconds per 100 images on a single worker thread, batches of
/// [`BENCH_BATCH`].
pub fn measure_inference_time(model: &Model, ds: &Dataset, warmup: usize, reps: usize) -> Result<Timing> {
    measure_inference_time_with(model, ds, warmup, reps, BENCH_BATCH, &mut SystemClock::new())
}

pub fn measure_inference_time_with<C: Clock + Send>(
    model: &Model,
    ds: &Dataset,
    warmup: usize,
    reps: usize,
    batch_size: usize,
    clock: &mut C,
) -> Result<Timing> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot time inference on zero images"));
    }
    // pre-build inputs so only the forward pass is timed
    let batches = ds
        .samples
        .chunks(batch_size.max(1))
        .map(|c| to_batch(c).map(|b| b.images))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        time_passes(ds.len(), warmup, reps, clock, || {
            for b in &batches {
                std::hint::black_box(model.forward(b)?);
            }
            Ok(())
        })
    })
}

/// Best-effort description of the machine running the benchmark.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|text| {
            text.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {threads} hw threads; {}-{}; timed on 1 thread",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

/// One benchmark row, keyed by (model, impute, augment).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub impute: String,
    pub augment: String,
    pub params_trainable: u64,
    pub params_total: u64,
    pub size_bytes: u64,
    pub rmse_px: f64,
    pub sec_per_100: f64,
    pub hardware: String,
    pub warmup: u64,
    pub reps: u64,
    pub seed: u64,
}

pub const REPORT_COLUMNS: [&str; 12] = [
    "model",
    "impute",
    "augment",
    "params_trainable",
    "params_total",
    "size_bytes",
    "rmse_px",
    "sec_per_100",
    "hardware",
    "warmup",
    "reps",
    "seed",
];

impl BenchRow {
    pub fn size_mb(&self) -> f64 {
        self.size_bytes as f64 / 1e6
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rmse_px", self.rmse_px), ("sec_per_100", self.sec_per_100)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn write_report_csv<W: Write>(rows: &[BenchRow], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        r.validate()?;
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_report_csv<R: Read>(source: R) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(source);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != REPORT_COLUMNS {
        return Err(Error::Parse {
            row: 0,
            message: format!("unexpected report header {header:?}"),
        });
    }
    let rows = r.deserialize().collect::<std::result::Result<Vec<BenchRow>, _>>()?;
    Ok(rows)
}

/// Aligned text table with sizes in decimal megabytes.
pub fn render_report_table(rows: &[BenchRow]) -> String {
    let header = [
        "model",
        "impute",
        "augment",
        "trainable",
        "total",
        "size_mb",
        "rmse_px",
        "sec/100",
    ];
    let cells: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                r.impute.clone(),
                r.augment.clone(),
                r.params_trainable.to_string(),
                r.params_total.to_string(),
                format!("{:.2}", r.size_mb()),
                format!("{:.3}", r.rmse_px),
                format!("{:.4}", r.sec_per_100),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, items: &[&str]| {
        let mut parts = Vec::new();
        for (i, (item, w)) in items.iter().zip(widths).enumerate() {
            parts.push(if i < 3 {
                format!("{item:<w$}")
            } else {
                format!("{item:>w$}")
            });
        }
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        line(&mut out, &refs);
    }
    if let Some(hw) = rows.first().map(|r| &r.hardware) {
        let _ = writeln!(out, "hardware: {hw}");
    }
    out
}

/// RMSE with and without augmentation for one (model, impute) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationEffect {
    pub model: String,
    pub impute: String,
    pub rmse_on: f64,
    pub rmse_off: f64,
}

impl AugmentationEffect {
    pub fn augmented_wins(&self) -> bool {
        self.rmse_on <= self.rmse_off
    }
}

/// Pairs rows that differ only in their augment label ("on" vs "off"), in
/// order of first appearance.
pub fn augmentation_effects(rows: &[BenchRow]) -> Vec<AugmentationEffect> {
    let mut out: Vec<AugmentationEffect> = Vec::new();
    for on in rows.iter().filter(|r| r.augment == "on") {
        let off = rows
            .iter()
            .find(|r| r.augment == "off" && r.model == on.model && r.impute == on.impute);
        let seen = out.iter().any(|e| e.model == on.model && e.impute == on.impute);
        if let (Some(off), false) = (off, seen) {
            out.push(AugmentationEffect {
                model: on.model.clone(),
                impute: on.impute.clone(),
                rmse_on: on.rmse_px,
                rmse_off: off.rmse_px,
            });
        }
    }
    out
}

/// One line per paired cell plus a tally; empty when nothing pairs up.
pub fn render_augmentation_trend(rows: &[BenchRow]) -> String {
    let effects = augmentation_effects(rows);
    if effects.is_empty() {
        return String::new();
    }
    let mut out = String::from("augmentation trend (rmse_px on vs off):\n");
    for e in &effects {
        let _ = writeln!(
            out,
            "  {} / {}: {:.3} vs {:.3} {}",
            e.model,
            e.impute,
            e.rmse_on,
            e.rmse_off,
            if e.augmented_wins() {
                "augmented <= plain"
            } else {
                "augmented > plain"
            }
        );
    }
    let wins = effects.iter().filter(|e| e.augmented_wins()).count();
    let _ = writeln!(out, "  augmented no worse in {wins} of {} pairs", effects.len());
    out
}
