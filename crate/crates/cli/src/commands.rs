use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use kpbench_core::augmentation::{augment_offline, AugmentationSpec};
use kpbench_core::dataset::{
    complete_subset, parse_training_csv, synthesize_dataset_with, write_training_csv, Dataset, SynthOptions,
};
use kpbench_core::evaluation::{
    dataset_rmse_px, hardware_descriptor, measure_inference_time, parse_report_csv, render_augmentation_trend,
    render_report_table, write_report_csv, BenchRow,
};
use kpbench_core::imputation::{impute, ImputeMethod};
use kpbench_core::models::{load_weights, mobilenetv2_spec, model_size_bytes, save_weights};
use kpbench_core::training::{
    prepare_split, random_search_tune, train_with_validation, OptimizerKind, SearchSpace, TrainOutcome,
};
use kpbench_core::{Architecture, Model, ModelSpec, TrainConfig};

use crate::args::*;
use crate::manifest::{digest_mismatches, read_manifest, Recorder};

pub fn run(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, argv),
        Command::Impute(a) => impute_cmd(a, argv),
        Command::Augment(a) => augment(a, argv),
        Command::Train(a) => train(a, argv),
        Command::Bench(a) => bench(a, argv),
        Command::Report(ReportCommand::Merge { inputs, out }) => report_merge(&inputs, &out, argv),
        Command::Report(ReportCommand::Show { input }) => {
            let rows = read_report(&input)?;
            print!("{}", render_report_table(&rows));
            print!("{}", render_augmentation_trend(&rows));
            Ok(())
        }
        Command::Model(ModelCommand::Describe { name, width }) => {
            print!("{}", arch_spec(name, width)?.describe()?);
            Ok(())
        }
        Command::Grid(a) => match a.manifest {
            Some(path) => replay(&path, Some("grid")),
            None => grid(a, argv),
        },
        Command::Tune(a) => tune(a, argv),
        Command::Replay { manifest } => replay(&manifest, None),
    }
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_training_csv(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_training_csv(ds, &mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn read_report(path: &Path) -> Result<Vec<BenchRow>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_report_csv(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

/// Writes `<out>` as CSV and the same rows as an aligned table beside it.
fn write_report(rows: &[BenchRow], out: &Path) -> Result<PathBuf> {
    let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(f);
    write_report_csv(rows, &mut w).with_context(|| format!("writing {}", out.display()))?;
    w.flush()?;
    let table = out.with_extension("txt");
    let text = format!("{}{}", render_report_table(rows), render_augmentation_trend(rows));
    fs::write(&table, text).with_context(|| format!("writing {}", table.display()))?;
    Ok(table)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_spec(path: &Path) -> Result<ModelSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec: ModelSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing model spec {}", path.display()))?;
    spec.infer_shapes()
        .with_context(|| format!("validating model spec {}", path.display()))?;
    Ok(spec)
}

/// `<weights>.spec.json`, written by `train` so `bench` can rebuild the model.
fn spec_sidecar(weights: &Path) -> PathBuf {
    let mut name = weights.as_os_str().to_owned();
    name.push(".spec.json");
    PathBuf::from(name)
}

fn arch_spec(arch: Architecture, width: f64) -> Result<ModelSpec> {
    Ok(match arch {
        Architecture::MobileNetV2 => mobilenetv2_spec(width)?,
        other => other.spec()?,
    })
}

fn train_config(h: &HyperArgs, seed: u64) -> Result<TrainConfig> {
    let optimizer = match h.optimizer {
        OptimizerArg::Adam => OptimizerKind::adam(h.lr),
        OptimizerArg::Sgd => OptimizerKind::sgd(h.lr, h.momentum),
    };
    let cfg = TrainConfig {
        epochs: h.epochs,
        batch_size: h.batch_size,
        optimizer,
        seed,
        validation_fraction: h.val_fraction,
        early_stop_patience: (h.patience > 0).then_some(h.patience),
        target_val_rmse_px: h.target_rmse,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn augmentation_spec(a: &AugmentOptions, seed: u64) -> Result<AugmentationSpec> {
    let spec = AugmentationSpec::from_magnitudes(a.rot, a.shift, a.bright, a.noise, a.variants, seed);
    spec.validate()?;
    Ok(spec)
}

fn synth(a: SynthArgs, argv: &[String]) -> Result<()> {
    let ds = synthesize_dataset_with(
        a.n,
        a.seed,
        &SynthOptions {
            missing_fraction: a.missing,
        },
    );
    write_dataset(&ds, &a.out)?;
    let mut rec = Recorder::new("synth", argv);
    rec.seed(a.seed);
    rec.output(&a.out)?;
    rec.finish(&a.out)?;
    eprintln!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

fn impute_cmd(a: ImputeArgs, argv: &[String]) -> Result<()> {
    let ds = read_dataset(&a.input)?;
    let filled = impute(&ds, a.method, a.k).with_context(|| format!("imputing {}", a.input.display()))?;
    write_dataset(&filled, &a.out)?;
    let mut rec = Recorder::new("impute", argv);
    rec.input(&a.input)?;
    rec.output(&a.out)?;
    rec.finish(&a.out)?;
    Ok(())
}

fn augment(a: AugmentArgs, argv: &[String]) -> Result<()> {
    let ds = read_dataset(&a.input)?;
    let spec = augmentation_spec(&a.aug, a.seed)?;
    let complete = complete_subset(&ds);
    let variants = augment_offline(&complete, &spec)?;
    let added = variants.len() - complete.len();
    let mut out = ds;
    out.samples.extend(variants.samples.into_iter().skip(complete.len()));
    write_dataset(&out, &a.out)?;
    let mut rec = Recorder::new("augment", argv);
    rec.seed(a.seed);
    rec.input(&a.input)?;
    rec.output(&a.out)?;
    rec.finish(&a.out)?;
    eprintln!("appended {added} variants of {} complete samples", complete.len());
    Ok(())
}

fn write_weights(model: &Model, path: &Path) -> Result<u64> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    let n = save_weights(model, &mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(n)
}

fn write_curve(outcome: &TrainOutcome, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    outcome
        .curve
        .write_csv(&mut w)
        .with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

/// Split, impute the training side, optionally augment, then train.
fn run_cell(
    ds: &Dataset,
    spec: ModelSpec,
    method: ImputeMethod,
    k: usize,
    augment: Option<&AugmentationSpec>,
    cfg: &TrainConfig,
) -> Result<(TrainOutcome, Dataset)> {
    let (train_set, val_set) = prepare_split(ds, method, k, augment, cfg.validation_fraction, cfg.seed)?;
    let model = Model::init(spec, cfg.seed)?;
    let outcome = train_with_validation(model, &train_set, &val_set, cfg)?;
    Ok((outcome, val_set))
}

fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let spec = match (&a.spec, a.model) {
        (Some(path), _) => read_spec(path)?,
        (None, Some(arch)) => arch_spec(arch, a.width)?,
        (None, None) => bail!("either --model or --spec is required"),
    };
    let ds = read_dataset(&a.data)?;
    let cfg = train_config(&a.hyper, a.seed)?;
    let aug = match a.augment {
        Toggle::On => Some(augmentation_spec(&a.aug, a.seed)?),
        Toggle::Off => None,
    };
    let (outcome, _) = run_cell(&ds, spec, a.impute, a.hyper.k, aug.as_ref(), &cfg)
        .with_context(|| format!("training on {}", a.data.display()))?;

    let bytes = write_weights(&outcome.model, &a.out)?;
    let sidecar = spec_sidecar(&a.out);
    write_json(outcome.model.spec(), &sidecar)?;
    let mut rec = Recorder::new("train", argv);
    rec.seed(a.seed);
    if let Some(p) = &a.spec {
        rec.input(p)?;
    }
    rec.input(&a.data)?;
    rec.output(&a.out)?;
    rec.output(&sidecar)?;
    if let Some(curve) = &a.curve {
        write_curve(&outcome, curve)?;
        rec.timed_output(curve);
    }
    rec.finish(&a.out)?;
    eprintln!(
        "{}: best epoch {} of {}, val rmse {:.3} px, {} bytes",
        outcome.model.name(),
        outcome.best_epoch,
        outcome.curve.len(),
        outcome.best_val_rmse_px(),
        bytes
    );
    Ok(())
}

fn bench_row(
    model: &Model,
    labels: (&str, &str),
    rmse_px: f64,
    warmup: usize,
    reps: usize,
    seed: u64,
    ds: &Dataset,
) -> Result<BenchRow> {
    let timing = measure_inference_time(model, ds, warmup, reps)?;
    let count = model.param_count();
    Ok(BenchRow {
        model: model.name().to_string(),
        impute: labels.0.to_string(),
        augment: labels.1.to_string(),
        params_trainable: count.trainable as u64,
        params_total: count.total as u64,
        size_bytes: model_size_bytes(model),
        rmse_px,
        sec_per_100: timing.sec_per_100,
        hardware: hardware_descriptor(),
        warmup: warmup as u64,
        reps: reps as u64,
        seed,
    })
}

fn bench(a: BenchArgs, argv: &[String]) -> Result<()> {
    let mut rec = Recorder::new("bench", argv);
    let spec = match (&a.spec, a.model) {
        (Some(path), _) => {
            rec.input(path)?;
            read_spec(path)?
        }
        (None, Some(arch)) => arch_spec(arch, a.width)?,
        (None, None) => {
            let sidecar = spec_sidecar(&a.weights);
            ensure!(
                sidecar.exists(),
                "no --model or --spec given and {} does not exist",
                sidecar.display()
            );
            rec.input(&sidecar)?;
            read_spec(&sidecar)?
        }
    };
    let f = File::open(&a.weights).with_context(|| format!("opening {}", a.weights.display()))?;
    let model = load_weights(&spec, BufReader::new(f)).with_context(|| format!("loading {}", a.weights.display()))?;
    let ds = read_dataset(&a.data)?;
    let rmse_px = dataset_rmse_px(&model, &ds).with_context(|| format!("scoring {}", a.data.display()))?;
    let row = bench_row(&model, (&a.impute, &a.augment), rmse_px, a.warmup, a.reps, a.seed, &ds)?;
    let table = write_report(std::slice::from_ref(&row), &a.out)?;

    rec.seed(a.seed);
    rec.input(&a.weights)?;
    rec.input(&a.data)?;
    rec.timed_output(&a.out);
    rec.timed_output(&table);
    rec.finish(&a.out)?;
    print!("{}", render_report_table(&[row]));
    Ok(())
}

fn report_merge(inputs: &[PathBuf], out: &Path, argv: &[String]) -> Result<()> {
    let mut rec = Recorder::new("report merge", argv);
    let mut rows = Vec::new();
    for p in inputs {
        rows.extend(read_report(p)?);
        rec.input(p)?;
    }
    let table = write_report(&rows, out)?;
    rec.output(out)?;
    rec.output(&table)?;
    rec.finish(out)?;
    Ok(())
}

fn grid(a: GridArgs, argv: &[String]) -> Result<()> {
    let (Some(data), Some(out)) = (a.data.as_deref(), a.out.as_deref()) else {
        bail!("grid needs --data and --out (or --manifest)");
    };
    ensure!(
        !a.models.is_empty() && !a.imputes.is_empty() && !a.augment.is_empty(),
        "every grid factor needs at least one level"
    );
    let ds = read_dataset(data)?;
    let cfg = train_config(&a.hyper, a.seed)?;
    let aug = augmentation_spec(&a.aug, a.seed)?;
    if let Some(dir) = &a.curves {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut rec = Recorder::new("grid", argv);
    rec.seed(a.seed);
    rec.input(data)?;

    // cells run one at a time so no training competes with a timed pass
    let mut rows = Vec::new();
    for &arch in &a.models {
        for &method in &a.imputes {
            for &toggle in &a.augment {
                let spec = arch_spec(arch, 1.0)?;
                let augment = (toggle == Toggle::On).then_some(&aug);
                let (outcome, val) = run_cell(&ds, spec, method, a.hyper.k, augment, &cfg)
                    .with_context(|| format!("grid cell {}/{}/{}", arch.label(), method.label(), toggle.label()))?;
                let rmse_px = dataset_rmse_px(&outcome.model, &val)?;
                let labels = (method.label(), toggle.label());
                rows.push(bench_row(
                    &outcome.model,
                    labels,
                    rmse_px,
                    a.warmup,
                    a.reps,
                    a.seed,
                    &val,
                )?);
                if let Some(dir) = &a.curves {
                    let path = dir.join(format!("{}_{}_{}.csv", arch.label(), method.label(), toggle.label()));
                    write_curve(&outcome, &path)?;
                    rec.timed_output(&path);
                }
                eprintln!(
                    "{} / {} / augment {}: val rmse {rmse_px:.3} px (best epoch {})",
                    arch.label(),
                    method.label(),
                    toggle.label(),
                    outcome.best_epoch
                );
            }
        }
    }
    let table = write_report(&rows, out)?;
    rec.timed_output(out);
    rec.timed_output(&table);
    rec.finish(out)?;
    print!("{}", fs::read_to_string(&table)?);
    Ok(())
}

fn tune(a: TuneArgs, argv: &[String]) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let cfg = train_config(&a.hyper, a.seed)?;
    let space = SearchSpace {
        conv_blocks: (a.min_blocks, a.max_blocks),
        base_filters: a.base_filters.clone(),
        dense_width: a.dense_widths.clone(),
        learning_rate: (a.lr_min, a.lr_max),
    };
    let outcome = random_search_tune(&space, a.budget, &ds, &cfg)?;
    write_json(&outcome.best_spec, &a.out)?;
    let mut rec = Recorder::new("tune", argv);
    rec.seed(a.seed);
    rec.input(&a.data)?;
    rec.output(&a.out)?;
    if let Some(log) = &a.log {
        let mut w = csv::Writer::from_path(log).with_context(|| format!("creating {}", log.display()))?;
        for t in &outcome.trials {
            w.serialize(t)?;
        }
        w.flush()?;
        rec.output(log)?;
    }
    rec.finish(&a.out)?;
    let best = &outcome.trials[outcome.best_trial];
    eprintln!(
        "best trial {}: {} blocks, base {} filters, dense {}, lr {:.2e}, val rmse {:.3} px",
        best.trial, best.conv_blocks, best.base_filters, best.dense_width, best.learning_rate, best.val_rmse_px
    );
    Ok(())
}

/// Re-runs a manifest's argv from the current directory and checks that
/// every non-timing output hashes to the recorded digest.
fn replay(path: &Path, only: Option<&str>) -> Result<()> {
    let expected = read_manifest(path)?;
    if let Some(sub) = only {
        ensure!(
            expected.subcommand == sub,
            "{} records a {:?} run, expected {sub:?}",
            path.display(),
            expected.subcommand
        );
    }
    let cli = crate::parse_args(&expected.argv)
        .with_context(|| format!("manifest {} holds an unparseable argv", path.display()))?;
    if matches!(cli.command, Command::Replay { .. }) || matches!(&cli.command, Command::Grid(g) if g.manifest.is_some())
    {
        bail!("{} would replay another manifest", path.display());
    }
    run(cli.command, &expected.argv)?;
    let primary = expected
        .outputs
        .first()
        .map(|o| PathBuf::from(&o.path))
        .context("manifest lists no outputs")?;
    let actual = read_manifest(&crate::manifest::manifest_path(&primary))?;
    let bad = digest_mismatches(&expected, &actual);
    ensure!(
        bad.is_empty(),
        "replay of {} changed outputs: {}",
        path.display(),
        bad.join(", ")
    );
    eprintln!("replayed {}: outputs match", path.display());
    Ok(())
}
