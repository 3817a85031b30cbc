use std::path::Path;
use std::time::Instant;

use geoflow_core::data_io::synth::gen_circles;
use geoflow_core::data_io::{export_grid, export_image, read_scalar, write_scalar, Manifest, Split};
use geoflow_core::epdiff::shoot_with;
use geoflow_core::field::warp;
use geoflow_core::metrics::{detjac_report, dice, hausdorff, warp_labels, DetJacReport};
use geoflow_core::{Error as CoreError, ScalarField};
use geoflow_gdn::checkpoint;
use geoflow_gdn::tracking::geodesic_tracking;
use geoflow_gdn::training::{train as fit, TrainOutput};
use geoflow_gdn::{Gdn, ModelConfig, Schedule, TrainConfig, TrainingPair};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{BenchArgs, EvalArgs, PredictArgs, ScheduleArg, TrainArgs};
use crate::error::{invalid, require_file, CliError, Result};
use crate::output::{prepare_dir, write_csv, write_trajectory};

fn load_manifest(path: &Path) -> Result<Manifest> {
    require_file("--data", path)?;
    Manifest::load(path).map_err(|e| CliError::from(e).for_flag("--data"))
}

fn load_checkpoint(path: &Path) -> Result<Gdn> {
    require_file("--checkpoint", path)?;
    checkpoint::load(path).map_err(|e| CliError::from(e).for_flag("--checkpoint"))
}

fn manifest_base(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn split_pairs(manifest: &Manifest, base: &Path, split: Split) -> Result<Vec<TrainingPair>> {
    manifest
        .split(split)
        .map(|e| {
            let p = manifest.load_entry(base, e).map_err(|e| CliError::from(e).for_flag("--data"))?;
            Ok(TrainingPair { source: p.source, target: p.target })
        })
        .collect()
}

fn model_config(args: &TrainArgs, dims: &[usize]) -> ModelConfig {
    let mut cfg = ModelConfig::new(dims);
    cfg.shooting = args.metric.shooting();
    cfg.seed = args.seed;
    if let Some(j) = args.layers {
        cfg.gno.layers = j;
    }
    if let Some(c) = args.latent_channels {
        cfg.regnet.latent_channels = c;
    }
    if let Some(c) = args.gno_channels {
        cfg.gno.hidden_channels = c;
    }
    if args.k_max.is_some() {
        cfg.gno.k_max = args.k_max;
    }
    if let Some(init) = args.gno_init {
        cfg.gno.init = init;
    }
    cfg
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    let mut cfg = TrainConfig { seed: args.seed, ..Default::default() };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = args.eta {
        cfg.eta = v;
    }
    if let Some(v) = args.lr {
        cfg.optimizer.lr = v;
    }
    if args.gno_lr.is_some() {
        cfg.gno_lr = args.gno_lr;
    }
    if let Some(v) = args.weight_decay {
        cfg.optimizer.weight_decay = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    cfg.schedule = match args.schedule {
        ScheduleArg::Joint => Schedule::Joint,
        ScheduleArg::Alternating => Schedule::Alternating { period: args.period },
    };
    cfg
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    data: &'a Path,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

pub fn train(args: &TrainArgs, threads: usize) -> Result<()> {
    let manifest = load_manifest(&args.data)?;
    let base = manifest_base(&args.data);
    let model_cfg = model_config(args, &manifest.dims);
    let train_cfg = train_config(args);
    model_cfg.validate()?;
    train_cfg.validate()?;
    let train_set = split_pairs(&manifest, base, Split::Train)?;
    if train_set.is_empty() {
        return Err(invalid("--data: manifest has no train entries"));
    }
    let validation = split_pairs(&manifest, base, Split::Val)?;
    prepare_dir(&args.out, "train", threads, &TrainEcho { data: &args.data, model: &model_cfg, train: &train_cfg })?;

    let mut model = Gdn::new(model_cfg)?;
    let output = TrainOutput { dir: Some(args.out.clone()) };
    let report = fit(&mut model, &train_set, &validation, &train_cfg, &output)?;
    log::info!(
        "trained {} epochs on {} pairs; best epoch {}",
        report.history.len(),
        train_set.len(),
        report.best_epoch
    );
    Ok(())
}

fn detjac_row(case: &str, r: &DetJacReport) -> String {
    format!("{case},{},{},{},{}", r.min, r.max, r.mean, r.neg_count)
}

const DETJAC_HEADER: &str = "case,min,max,mean,neg_count";

#[derive(Serialize)]
struct PredictEcho<'a> {
    checkpoint: &'a Path,
    source: &'a Path,
    target: &'a Path,
    model: &'a ModelConfig,
}

pub fn predict(args: &PredictArgs, threads: usize) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    require_file("--source", &args.source)?;
    require_file("--target", &args.target)?;
    let source = read_scalar(&args.source).map_err(|e| CliError::from(e).for_flag("--source"))?;
    let target = read_scalar(&args.target).map_err(|e| CliError::from(e).for_flag("--target"))?;
    for (flag, f) in [("--source", &source), ("--target", &target)] {
        model.grid().check_same(f.grid()).map_err(|e| CliError::from(e).for_flag(flag))?;
    }
    prepare_dir(
        &args.out_dir,
        "predict",
        threads,
        &PredictEcho { checkpoint: &args.checkpoint, source: &args.source, target: &args.target, model: model.config() },
    )?;

    let pred = model.predict(&source, &target)?;
    write_trajectory(&args.out_dir, &pred.trajectory)?;
    write_scalar(&args.out_dir.join("deformed.gfld"), &pred.deformed)?;
    export_image(&pred.deformed, &args.out_dir.join("deformed.pgm"))?;
    export_grid(pred.trajectory.final_transform(), 4, &args.out_dir.join("grid.pgm"))?;
    let report = detjac_report(pred.trajectory.final_transform());
    write_csv(&args.out_dir.join("detjac.csv"), DETJAC_HEADER, [detjac_row("0", &report)])?;
    log::info!("predicted {} steps; min DetJac {}", pred.trajectory.len(), report.min);
    Ok(())
}

struct CaseResult {
    case: String,
    overlap: Vec<(u32, f64, f64)>,
    detjac: DetJacReport,
}

fn evaluate_case(model: &Gdn, manifest: &Manifest, base: &Path, index: usize) -> Result<CaseResult> {
    let entry = &manifest.entries[index];
    let pair = manifest.load_entry(base, entry).map_err(|e| CliError::from(e).for_flag("--data"))?;
    let pred = model.predict(&pair.source, &pair.target)?;
    let phi = pred.trajectory.final_transform();
    let mut overlap = Vec::new();
    if let (Some(src), Some(tgt)) = (&pair.source_labels, &pair.target_labels) {
        let moved = warp_labels(src, phi)?;
        let mut structures = src.structures();
        structures.extend(tgt.structures());
        structures.sort_unstable();
        structures.dedup();
        for label in structures {
            let d = dice(&moved, tgt, label)?;
            let hd = match hausdorff(&moved, tgt, label) {
                Ok(h) => h,
                Err(CoreError::EmptyBoundary { .. }) => f64::NAN,
                Err(e) => return Err(e.into()),
            };
            overlap.push((label, d, hd));
        }
    }
    let case = entry.source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| index.to_string());
    Ok(CaseResult { case, overlap, detjac: detjac_report(phi) })
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    split: Split,
    model: &'a ModelConfig,
}

pub fn eval(args: &EvalArgs, threads: usize) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let manifest = load_manifest(&args.data)?;
    let base = manifest_base(&args.data);
    let split: Split = serde_json::from_value(serde_json::Value::String(args.split.to_ascii_lowercase()))
        .map_err(|_| invalid(format!("--split: expected train, val, test or ood, got `{}`", args.split)))?;
    if manifest.dims != model.config().dims {
        return Err(invalid(format!(
            "--data: grid {:?} does not match the checkpoint grid {:?}",
            manifest.dims,
            model.config().dims
        )));
    }
    let indices: Vec<usize> = (0..manifest.entries.len()).filter(|&i| manifest.entries[i].split == split).collect();
    if indices.is_empty() {
        return Err(invalid(format!("--split: manifest has no {} entries", args.split)));
    }
    prepare_dir(
        &args.out_dir,
        "eval",
        threads,
        &EvalEcho { checkpoint: &args.checkpoint, data: &args.data, split, model: model.config() },
    )?;

    let cases = indices
        .par_iter()
        .map(|&i| evaluate_case(&model, &manifest, base, i))
        .collect::<Result<Vec<_>>>()?;
    let metric_rows = cases
        .iter()
        .flat_map(|c| c.overlap.iter().map(move |(label, d, hd)| format!("{},{label},{d},{hd}", c.case)));
    write_csv(&args.out_dir.join("metrics.csv"), "case,structure,dice,hd", metric_rows)?;
    write_csv(&args.out_dir.join("detjac.csv"), DETJAC_HEADER, cases.iter().map(|c| detjac_row(&c.case, &c.detjac)))?;

    let pairs = split_pairs(&manifest, base, split)?;
    let (rows, used) = geodesic_tracking(&model, &pairs)?;
    write_csv(
        &args.out_dir.join("trajectory_mse.csv"),
        "t,image,transform,velocity,oracle_velocity_sq",
        rows.iter()
            .map(|r| format!("{},{},{},{},{}", r.t, r.image_mse, r.transform_mse, r.velocity_mse, r.oracle_mean_sq)),
    )?;
    let negatives: usize = cases.iter().map(|c| c.detjac.neg_count).sum();
    log::info!("evaluated {} cases ({used} tracked); {negatives} negative DetJac nodes", cases.len());
    Ok(())
}

/// Median wall times of one resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub dims: usize,
    pub t_predict: f64,
    pub t_shoot: f64,
}

impl BenchRow {
    pub fn ratio(&self) -> f64 {
        self.t_predict / self.t_shoot
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn seconds<T>(f: impl FnOnce() -> T) -> (f64, T) {
    let start = Instant::now();
    let out = f();
    (start.elapsed().as_secs_f64(), out)
}

/// Times `predict` against shooting the predicted initial velocity and
/// warping the source, both over the model's whole time interval.
pub fn time_pair(model: &Gdn, source: &ScalarField, target: &ScalarField, reps: usize) -> Result<BenchRow> {
    if reps == 0 {
        return Err(invalid("--reps must be >= 1"));
    }
    let v0 = model.predict(source, target)?.trajectory.velocities[0].clone();
    let shooting = model.config().shooting;
    let mut t_predict = Vec::with_capacity(reps);
    let mut t_shoot = Vec::with_capacity(reps);
    for _ in 0..reps {
        let (dt, pred) = seconds(|| model.predict(source, target));
        pred?;
        t_predict.push(dt);
        let (dt, warped) = seconds(|| -> Result<ScalarField> {
            let traj = shoot_with(&v0, &shooting, model.context().metric())?;
            Ok(warp(source, traj.final_transform())?)
        });
        warped?;
        t_shoot.push(dt);
    }
    Ok(BenchRow { dims: model.grid().dims()[0], t_predict: median(t_predict), t_shoot: median(t_shoot) })
}

#[derive(Serialize)]
struct BenchEcho<'a> {
    checkpoint: &'a Path,
    dims: &'a [usize],
    reps: usize,
    seed: u64,
}

/// The checkpoint's weights at its own resolution; elsewhere a freshly
/// initialized model with the same architecture.
fn model_at(trained: &Gdn, n: usize) -> Result<Gdn> {
    if trained.config().dims == [n, n] {
        return Ok(trained.clone());
    }
    let mut cfg = trained.config().clone();
    cfg.dims = vec![n, n];
    cfg.validate().map_err(|e| CliError::from(e).for_flag("--dims"))?;
    Ok(Gdn::new(cfg)?)
}

pub fn bench(args: &BenchArgs, threads: usize) -> Result<()> {
    let trained = load_checkpoint(&args.checkpoint)?;
    if args.reps == 0 {
        return Err(invalid("--reps must be >= 1"));
    }
    let models = args.dims.iter().map(|&n| model_at(&trained, n)).collect::<Result<Vec<_>>>()?;
    prepare_dir(
        &args.out_dir,
        "bench",
        threads,
        &BenchEcho { checkpoint: &args.checkpoint, dims: &args.dims, reps: args.reps, seed: args.seed },
    )?;

    let mut rows = Vec::with_capacity(models.len());
    for model in &models {
        let n = model.grid().dims()[0];
        let pair = gen_circles(1, n, args.seed)?.remove(0);
        let row = time_pair(model, &pair.source, &pair.target, args.reps)?;
        log::info!("{n}x{n}: predict {:.4}s, shoot {:.4}s", row.t_predict, row.t_shoot);
        rows.push(row);
    }
    write_csv(
        &args.out_dir.join("bench.csv"),
        "dims,t_predict,t_shoot,ratio",
        rows.iter().map(|r| format!("{},{},{},{}", r.dims, r.t_predict, r.t_shoot, r.ratio())),
    )?;
    Ok(())
}
