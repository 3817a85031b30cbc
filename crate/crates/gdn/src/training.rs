//! Joint training of the encoder/decoder and the geodesic operator.
//!
//! Per pair the loss is
//! `lambda * ||S o phi_tau - T||^2 + 1/2 (L v0, v0) + eta * geodesic_loss`,
//! where `phi_tau` is integrated from the decoded rollout and the geodesic
//! term compares every decoded step with an EPDiff shot from the decoded
//! `v0`. The shot is a constant for differentiation.

use std::path::{Path, PathBuf};

use geoflow_core::epdiff::{integrate_flow, integrate_flow_vjp, shoot_velocities, ShootingConfig};
use geoflow_core::field::{dual_pairing, warp, warp_vjp_displacement};
use geoflow_core::lddmm::ssd;
use geoflow_core::{FourierMultiplier, ScalarField, VectorField};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{GdnError, Result};
use crate::gno::{rollout_backward, rollout_cached};
use crate::model::{Gdn, GdnParams};
use crate::optim::{AdamW, AdamWConfig};
use crate::regnet::{decode_backward, decode_cached, encode_backward, encode_cached};
use crate::tensor::Parameters;

/// Which parameter groups an update touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Schedule {
    /// Both groups every step.
    #[default]
    Joint,
    /// Phases of `period` epochs that update only the encoder/decoder, then
    /// only the GNO, and so on.
    Alternating { period: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub eta: f64,
    pub optimizer: AdamWConfig,
    /// Step size of the GNO optimizer; `None` uses `optimizer.lr`.
    pub gno_lr: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: geoflow_core::lddmm::DEFAULT_LAMBDA,
            eta: 1.0,
            optimizer: AdamWConfig::default(),
            gno_lr: None,
            epochs: 50,
            batch_size: 4,
            seed: 0,
            schedule: Schedule::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(GdnError::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(GdnError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(GdnError::Config("batch_size must be >= 1".into()));
        }
        if let Schedule::Alternating { period: 0 } = self.schedule {
            return Err(GdnError::Config("alternating period must be >= 1".into()));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.weight_decay >= 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(GdnError::Config("invalid optimizer settings".into()));
        }
        if let Some(lr) = self.gno_lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(GdnError::Config(format!("gno_lr must be positive, got {lr}")));
            }
        }
        Ok(())
    }
}

/// An image pair to register.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub source: ScalarField,
    pub target: ScalarField,
}

/// Weighted loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    /// `lambda * ||S o phi_tau - T||^2`.
    pub matching: f64,
    /// `1/2 (L v0, v0)`.
    pub regularity: f64,
    /// `eta * geodesic_loss`.
    pub geodesic: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.matching + self.regularity + self.geodesic
    }

    pub fn is_finite(&self) -> bool {
        self.total().is_finite()
    }

    fn add(&mut self, o: &LossTerms) {
        self.matching += o.matching;
        self.regularity += o.regularity;
        self.geodesic += o.geodesic;
    }

    fn scaled(&self, a: f64) -> Self {
        Self { matching: a * self.matching, regularity: a * self.regularity, geodesic: a * self.geodesic }
    }
}

/// Mean over `t = 1..tau` of the cell-volume weighted squared distance
/// between predicted `v_t` and oracle `v_hat_t`. `predicted` holds
/// `v_0..v_tau`, `oracle` holds `v_hat_1..v_hat_tau`.
pub fn geodesic_loss(predicted: &[VectorField], oracle: &[VectorField]) -> Result<f64> {
    if oracle.is_empty() || predicted.len() != oracle.len() + 1 {
        return Err(GdnError::Shape(format!(
            "{} predicted velocities for {} oracle steps",
            predicted.len(),
            oracle.len()
        )));
    }
    let mut acc = 0.0;
    for (p, o) in predicted[1..].iter().zip(oracle) {
        p.grid().check_same(o.grid())?;
        let d: f64 = p.data().iter().zip(o.data()).map(|(a, b)| (a - b).powi(2)).sum();
        acc += d * p.grid().cell_volume();
    }
    Ok(acc / oracle.len() as f64)
}

/// EPDiff velocities `v_hat_1..v_hat_tau` shot from `v0`.
pub fn make_oracle(v0: &VectorField, shooting: &ShootingConfig, metric: &FourierMultiplier) -> Result<Vec<VectorField>> {
    let mut vs = shoot_velocities(v0, shooting, metric)?;
    vs.remove(0);
    Ok(vs)
}

/// Loss of one pair and, if requested, its parameter gradient. `Ok(None)`
/// means the oracle blew up and the pair is skipped.
pub fn sample_loss(
    model: &Gdn,
    pair: &TrainingPair,
    cfg: &TrainConfig,
    oracle: Option<&[VectorField]>,
    with_grad: bool,
) -> Result<Option<(LossTerms, Option<GdnParams>)>> {
    let ctx = model.context();
    let grid = *ctx.grid();
    let shooting = model.config().shooting;
    let p = &model.params;
    let vol = grid.cell_volume();
    let tau = shooting.steps;

    let (z0, enc_cache) = encode_cached(&pair.source, &pair.target, &p.regnet)?;
    let (zs, step_caches) = rollout_cached(&z0, &p.gno, ctx.gno(), tau)?;
    let mut vs = Vec::with_capacity(tau + 1);
    let mut dec_caches = Vec::with_capacity(tau + 1);
    for z in &zs {
        let (v, c) = decode_cached(z, &p.regnet, &grid)?;
        vs.push(v);
        dec_caches.push(c);
    }

    let internal;
    let oracle = match oracle {
        Some(o) => o,
        None => match make_oracle(&vs[0], &shooting, ctx.metric()) {
            Ok(o) => {
                internal = o;
                &internal
            }
            Err(GdnError::Core(geoflow_core::Error::BlowUp { step })) => {
                log::warn!("oracle diverged at step {step}; skipping pair");
                return Ok(None);
            }
            Err(e) => return Err(e),
        },
    };

    let transforms = integrate_flow(&vs, shooting.dt())?;
    let phi = transforms.last().expect("nonempty");
    let warped = warp(&pair.source, phi)?;
    let lv0 = ctx.metric().apply_l(&vs[0])?;
    let terms = LossTerms {
        matching: cfg.lambda * ssd(&warped, &pair.target)?,
        regularity: 0.5 * dual_pairing(&lv0, &vs[0])?,
        geodesic: cfg.eta * geodesic_loss(&vs, oracle)?,
    };
    if !with_grad {
        return Ok(Some((terms, None)));
    }

    let resid: Vec<f64> = warped
        .values()
        .iter()
        .zip(pair.target.values())
        .map(|(a, b)| 2.0 * cfg.lambda * vol * (a - b))
        .collect();
    let u_bar = warp_vjp_displacement(&pair.source, phi, &ScalarField::new(grid, resid)?)?;
    let mut v_bars = integrate_flow_vjp(&vs, &transforms, shooting.dt(), &u_bar)?;
    for (b, l) in v_bars[0].data_mut().iter_mut().zip(lv0.data()) {
        *b += vol * l;
    }
    let geo_scale = 2.0 * cfg.eta * vol / tau as f64;
    for t in 1..=tau {
        for ((b, v), o) in v_bars[t].data_mut().iter_mut().zip(vs[t].data()).zip(oracle[t - 1].data()) {
            *b += geo_scale * (v - o);
        }
    }

    let mut grads = p.zeros_like();
    let mut z_bars = Vec::with_capacity(tau + 1);
    for (c, vb) in dec_caches.iter().zip(&v_bars) {
        z_bars.push(decode_backward(c, &p.regnet, vb, &mut grads.regnet)?);
    }
    let z0_bar = rollout_backward(&step_caches, &p.gno, ctx.gno(), &z_bars, &mut grads.gno)?;
    let z0_bar = geoflow_core::ChannelField::new(*z0.grid(), z0.channels(), z0_bar)?;
    encode_backward(&enc_cache, &p.regnet, &z0_bar, &mut grads.regnet)?;
    Ok(Some((terms, Some(grads))))
}

/// Summed loss and gradient over `batch`. `oracles`, when given, replaces
/// the internally shot targets pair by pair.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub terms: LossTerms,
    pub grads: GdnParams,
    /// Pairs that contributed; skipped pairs had a diverging oracle.
    pub used: usize,
}

pub fn joint_loss(
    model: &Gdn,
    batch: &[TrainingPair],
    cfg: &TrainConfig,
    oracles: Option<&[Vec<VectorField>]>,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(GdnError::EmptyDataset("empty batch".into()));
    }
    if let Some(o) = oracles {
        if o.len() != batch.len() {
            return Err(GdnError::Shape(format!("{} oracles for {} pairs", o.len(), batch.len())));
        }
    }
    let per_sample: Vec<Result<Option<(LossTerms, Option<GdnParams>)>>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, pair)| sample_loss(model, pair, cfg, oracles.map(|o| o[i].as_slice()), true))
        .collect();
    let mut out = BatchLoss { terms: LossTerms::default(), grads: model.params.zeros_like(), used: 0 };
    for r in per_sample {
        if let Some((terms, grads)) = r? {
            out.terms.add(&terms);
            out.grads.add_scaled(1.0, &grads.expect("requested"));
            out.used += 1;
        }
    }
    Ok(out)
}

/// Mean loss over `pairs` without gradients.
pub fn evaluate(model: &Gdn, pairs: &[TrainingPair], cfg: &TrainConfig) -> Result<LossTerms> {
    let per_sample: Vec<_> = pairs.par_iter().map(|p| sample_loss(model, p, cfg, None, false)).collect();
    let mut acc = LossTerms::default();
    let mut used = 0;
    for r in per_sample {
        if let Some((t, _)) = r? {
            acc.add(&t);
            used += 1;
        }
    }
    Ok(if used > 0 { acc.scaled(1.0 / used as f64) } else { acc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's training pairs, evaluated before each update.
    pub train: LossTerms,
    pub validation: Option<LossTerms>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_params: GdnParams,
}

/// Optional artifacts written while training.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

fn update_flags(schedule: Schedule, epoch: usize) -> (bool, bool) {
    match schedule {
        Schedule::Joint => (true, true),
        Schedule::Alternating { period } => {
            let regnet_phase = ((epoch - 1) / period) % 2 == 0;
            (regnet_phase, !regnet_phase)
        }
    }
}

/// Trains `model` in place and returns the loss history together with the
/// weights of the epoch with the lowest validation loss (training loss when
/// there is no validation set).
pub fn train(
    model: &mut Gdn,
    train_set: &[TrainingPair],
    validation: &[TrainingPair],
    cfg: &TrainConfig,
    output: &TrainOutput,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(GdnError::EmptyDataset("no training pairs".into()));
    }
    if let Some(dir) = &output.dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut opt_regnet = AdamW::new(cfg.optimizer, model.params.regnet.count());
    let gno_cfg = AdamWConfig { lr: cfg.gno_lr.unwrap_or(cfg.optimizer.lr), ..cfg.optimizer };
    let mut opt_gno = AdamW::new(gno_cfg, model.params.gno.count());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, GdnParams)> = None;

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let (upd_regnet, upd_gno) = update_flags(cfg.schedule, epoch);
        let mut sum = LossTerms::default();
        let mut used = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TrainingPair> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let out = joint_loss(model, &batch, cfg, None).map_err(|e| match e {
                GdnError::Core(geoflow_core::Error::NonFinite(_)) | GdnError::RolloutDiverged { .. } => {
                    GdnError::NonFiniteLoss { epoch, sample: b * cfg.batch_size, detail: e.to_string() }
                }
                other => other,
            })?;
            if !out.terms.is_finite() || !out.grads.all_finite() {
                return Err(GdnError::NonFiniteLoss {
                    epoch,
                    sample: b * cfg.batch_size,
                    detail: format!("{:?}", out.terms),
                });
            }
            if out.used == 0 {
                continue;
            }
            sum.add(&out.terms);
            used += out.used;
            let mut g = out.grads;
            scale_grads(&mut g, 1.0 / out.used as f64);
            if upd_regnet {
                opt_regnet.step(&mut model.params.regnet, &g.regnet);
            }
            if upd_gno {
                opt_gno.step(&mut model.params.gno, &g.gno);
            }
        }
        if used == 0 {
            return Err(GdnError::EmptyDataset(format!("every pair was skipped in epoch {epoch}")));
        }
        let train_terms = sum.scaled(1.0 / used as f64);
        let val_terms = if validation.is_empty() { None } else { Some(evaluate(model, validation, cfg)?) };
        if let Some(v) = val_terms {
            if !v.is_finite() {
                return Err(GdnError::NonFiniteLoss { epoch, sample: 0, detail: format!("validation {v:?}") });
            }
        }
        let log = EpochLog { epoch, train: train_terms, validation: val_terms };
        log::info!(
            "epoch {epoch}: train {:.6e}{}",
            train_terms.total(),
            val_terms.map(|v| format!(", val {:.6e}", v.total())).unwrap_or_default()
        );
        history.push(log);
        let score = val_terms.unwrap_or(train_terms).total();
        if best.as_ref().map_or(true, |(s, _, _)| score < *s) {
            best = Some((score, epoch, model.params.clone()));
            if let Some(dir) = &output.dir {
                checkpoint::save(&dir.join("best.gckp"), model.config(), &model.params)?;
            }
        }
        if let Some(dir) = &output.dir {
            write_loss_csv(&dir.join("loss.csv"), &history)?;
        }
    }
    if let Some(dir) = &output.dir {
        checkpoint::save(&dir.join("last.gckp"), model.config(), &model.params)?;
    }
    let (_, best_epoch, best_params) = best.unwrap_or((f64::NAN, 0, model.params.clone()));
    Ok(TrainReport { history, best_epoch, best_params })
}

/// `epoch,match,reg,geodesic,total` rows of training losses.
pub fn write_loss_csv(path: &Path, history: &[EpochLog]) -> Result<()> {
    let mut s = String::from("epoch,match,reg,geodesic,total\n");
    for h in history {
        let t = &h.train;
        s.push_str(&format!(
            "{},{:.10e},{:.10e},{:.10e},{:.10e}\n",
            h.epoch,
            t.matching,
            t.regularity,
            t.geodesic,
            t.total()
        ));
    }
    geoflow_core::data_io::atomic_write(path, s.as_bytes())?;
    Ok(())
}

/// Scales every regnet and GNO gradient entry; used for batch means.
pub fn scale_grads(g: &mut GdnParams, a: f64) {
    g.visit_mut(&mut |_, t| t.scale(a));
}

/// Sensitivity the geodesic term would send back into `v0` through the
/// oracle if the oracle were differentiated. Training never adds it.
pub fn oracle_path_sensitivity(
    model: &Gdn,
    pair: &TrainingPair,
    cfg: &TrainConfig,
) -> Result<VectorField> {
    let ctx = model.context();
    let shooting = model.config().shooting;
    let (_, vs) = model.velocities(&pair.source, &pair.target)?;
    let shot = shoot_velocities(&vs[0], &shooting, ctx.metric())?;
    let tau = shooting.steps;
    let vol = ctx.grid().cell_volume();
    let scale = 2.0 * cfg.eta * vol / tau as f64;
    let mut bars = vec![VectorField::zeros(*ctx.grid()); tau + 1];
    for t in 1..=tau {
        for ((b, v), o) in bars[t].data_mut().iter_mut().zip(vs[t].data()).zip(shot[t].data()) {
            *b = -scale * (v - o);
        }
    }
    Ok(geoflow_core::epdiff::shoot_vjp(&shot, &bars, &shooting, ctx.metric())?)
}
