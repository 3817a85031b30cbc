//! Geodesic neural operator: a recurrent stack of spectral evolution layers
//! that advances latent velocity codes `z_t -> z_{t+1}`.
//!
//! One step lifts `z` pointwise to `C_h` channels, applies `J` layers
//! `u <- K_sigma(GeLU(W u + b + H * u))` and projects back to `C_z`
//! channels. All steps share one parameter set.

use geoflow_core::spectral::Operator;
use geoflow_core::{ChannelField, FourierMultiplier, Grid, SpectralKernel};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GdnError, Result};
use crate::nn;
use crate::regnet::LatentFeature;
use crate::tensor::{Parameters, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnoInit {
    /// Every step starts as the identity on the retained modes.
    #[default]
    Identity,
    /// Independent uniform fan-in weights.
    Random,
}

impl std::str::FromStr for GnoInit {
    type Err = GdnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Self::Identity),
            "random" => Ok(Self::Random),
            _ => Err(GdnError::Config(format!("unknown GNO init `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnoConfig {
    pub hidden_channels: usize,
    /// Evolution layers per step (`J`).
    pub layers: usize,
    /// Highest retained frequency per axis; `None` keeps every mode.
    pub k_max: Option<usize>,
    pub alpha_sigma: f64,
    pub exponent_sigma: u32,
    pub init: GnoInit,
    /// Amplitude of the uniform noise added to the identity initialization.
    pub init_noise: f64,
}

impl Default for GnoConfig {
    fn default() -> Self {
        Self {
            hidden_channels: 16,
            layers: 4,
            k_max: None,
            alpha_sigma: 3.0,
            exponent_sigma: 3,
            init: GnoInit::Identity,
            init_noise: 0.0,
        }
    }
}

impl GnoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_channels == 0 || self.layers == 0 {
            return Err(GdnError::Config("GNO needs at least one layer and one hidden channel".into()));
        }
        if !(self.alpha_sigma.is_finite() && self.alpha_sigma > 0.0) || self.exponent_sigma == 0 {
            return Err(GdnError::Config("smoothing parameters must be positive".into()));
        }
        if self.k_max == Some(0) {
            return Err(GdnError::Config("k_max must be >= 1".into()));
        }
        if !(self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return Err(GdnError::Config("init_noise must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Retained frequency bound on `latent`.
    pub fn resolved_k_max(&self, latent: &Grid) -> usize {
        let full = latent.dims().iter().map(|&n| n / 2).min().unwrap_or(1);
        self.k_max.unwrap_or(full)
    }
}

/// Per-grid state shared by every evaluation: the smoothing operator of the
/// activation on the latent grid.
#[derive(Debug, Clone)]
pub struct GnoContext {
    sigma: FourierMultiplier,
}

impl GnoContext {
    pub fn new(latent: Grid, cfg: &GnoConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { sigma: FourierMultiplier::new(latent, cfg.alpha_sigma, cfg.exponent_sigma)? })
    }

    pub fn grid(&self) -> &Grid {
        self.sigma.grid()
    }

    pub fn sigma(&self) -> &FourierMultiplier {
        &self.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionLayer {
    pub mix_w: Tensor,
    pub mix_b: Tensor,
    /// Complex `[mode][out][in]` spectral weights.
    pub spectral: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnoParams {
    pub k_max: usize,
    pub lift_w: Tensor,
    pub lift_b: Tensor,
    pub layers: Vec<EvolutionLayer>,
    pub project_w: Tensor,
    pub project_b: Tensor,
}

impl Parameters for GnoParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("gno.lift.weight", &self.lift_w);
        f("gno.lift.bias", &self.lift_b);
        for (j, l) in self.layers.iter().enumerate() {
            f(&format!("gno.layer{j}.mix.weight"), &l.mix_w);
            f(&format!("gno.layer{j}.mix.bias"), &l.mix_b);
            f(&format!("gno.layer{j}.spectral"), &l.spectral);
        }
        f("gno.project.weight", &self.project_w);
        f("gno.project.bias", &self.project_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("gno.lift.weight", &mut self.lift_w);
        f("gno.lift.bias", &mut self.lift_b);
        for (j, l) in self.layers.iter_mut().enumerate() {
            f(&format!("gno.layer{j}.mix.weight"), &mut l.mix_w);
            f(&format!("gno.layer{j}.mix.bias"), &mut l.mix_b);
            f(&format!("gno.layer{j}.spectral"), &mut l.spectral);
        }
        f("gno.project.weight", &mut self.project_w);
        f("gno.project.bias", &mut self.project_b);
    }
}

fn mode_count(k_max: usize) -> usize {
    (2 * k_max + 1).pow(2)
}

impl GnoParams {
    pub fn zeros(latent_channels: usize, hidden: usize, layers: usize, k_max: usize) -> Self {
        let modes = mode_count(k_max);
        Self {
            k_max,
            lift_w: Tensor::zeros(&[hidden, latent_channels]),
            lift_b: Tensor::zeros(&[hidden]),
            layers: (0..layers)
                .map(|_| EvolutionLayer {
                    mix_w: Tensor::zeros(&[hidden, hidden]),
                    mix_b: Tensor::zeros(&[hidden]),
                    spectral: Tensor::complex_zeros(&[modes, hidden, hidden]),
                })
                .collect(),
            project_w: Tensor::zeros(&[latent_channels, hidden]),
            project_b: Tensor::zeros(&[latent_channels]),
        }
    }

    pub fn init(cfg: &GnoConfig, latent_channels: usize, ctx: &GnoContext, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if latent_channels == 0 {
            return Err(GdnError::Config("latent_channels must be positive".into()));
        }
        let k_max = cfg.resolved_k_max(ctx.grid());
        let h = cfg.hidden_channels;
        let mut p = Self::zeros(latent_channels, h, cfg.layers, k_max);
        match cfg.init {
            GnoInit::Random => {
                let lift = 1.0 / (latent_channels as f64).sqrt();
                let hid = 1.0 / (h as f64).sqrt();
                p.lift_w = Tensor::uniform(&[h, latent_channels], lift, false, rng);
                p.lift_b = Tensor::uniform(&[h], lift, false, rng);
                for l in &mut p.layers {
                    l.mix_w = Tensor::uniform(&[h, h], hid, false, rng);
                    l.mix_b = Tensor::uniform(&[h], hid, false, rng);
                    l.spectral = Tensor::uniform(&[mode_count(k_max), h, h], 1.0 / h as f64, true, rng);
                }
                p.project_w = Tensor::uniform(&[latent_channels, h], hid, false, rng);
                p.project_b = Tensor::uniform(&[latent_channels], hid, false, rng);
            }
            GnoInit::Identity => {
                if h != 2 * latent_channels {
                    return Err(GdnError::Config(format!(
                        "identity init needs hidden_channels = 2 * latent_channels, got {h} and {latent_channels}"
                    )));
                }
                p.identity_fill(latent_channels, ctx)?;
                if cfg.init_noise > 0.0 {
                    let a = cfg.init_noise;
                    p.visit_mut(&mut |_, t| {
                        for x in t.data_mut() {
                            *x += rng.gen_range(-a..=a);
                        }
                    });
                }
            }
        }
        p.validate(latent_channels, ctx)?;
        Ok(p)
    }

    /// Exact identity on the difference representation `x = u+ - u-`:
    /// `GeLU(x) - GeLU(-x) = x`, and the spectral weights undo the
    /// activation smoothing on the retained modes.
    fn identity_fill(&mut self, cz: usize, ctx: &GnoContext) -> Result<()> {
        let h = 2 * cz;
        for c in 0..cz {
            self.lift_w.data_mut()[c * cz + c] = 1.0;
            self.lift_w.data_mut()[(cz + c) * cz + c] = -1.0;
            self.project_w.data_mut()[c * h + c] = 0.5;
            self.project_w.data_mut()[c * h + cz + c] = -0.5;
        }
        let mut mix = vec![0.0; h * h];
        for c in 0..cz {
            mix[c * h + c] = 1.0;
            mix[c * h + cz + c] = -1.0;
            mix[(cz + c) * h + c] = -1.0;
            mix[(cz + c) * h + cz + c] = 1.0;
        }
        let probe = SpectralKernel::zeros(2, self.k_max, h, h)?;
        let bins = probe.mode_bins(ctx.grid())?;
        let k_sym = ctx.sigma().k_symbol();
        for l in &mut self.layers {
            l.mix_w.data_mut().copy_from_slice(&mix);
            let w = l.spectral.data_mut();
            for &(m, bin) in &bins {
                let gain = 1.0 / k_sym[bin] - 1.0;
                for (e, &v) in mix.iter().enumerate() {
                    w[2 * (m * h * h + e)] = gain * v;
                }
            }
        }
        Ok(())
    }

    pub fn latent_channels(&self) -> usize {
        self.lift_w.shape()[1]
    }

    pub fn hidden_channels(&self) -> usize {
        self.lift_w.shape()[0]
    }

    pub fn validate(&self, latent_channels: usize, ctx: &GnoContext) -> Result<()> {
        let (cz, h) = (latent_channels, self.hidden_channels());
        let modes = mode_count(self.k_max);
        let bad = |what: &str| Err(GdnError::Shape(format!("GNO {what}")));
        if self.lift_w.shape() != [h, cz] || self.lift_b.shape() != [h] {
            return bad("lift shape");
        }
        if self.project_w.shape() != [cz, h] || self.project_b.shape() != [cz] {
            return bad("projection shape");
        }
        if self.layers.is_empty() {
            return bad("has no layers");
        }
        for l in &self.layers {
            if l.mix_w.shape() != [h, h] || l.mix_b.shape() != [h] || l.spectral.shape() != [modes, h, h] {
                return bad("layer shape");
            }
            if !l.spectral.is_complex() {
                return bad("spectral weights must be complex");
            }
        }
        if ctx.grid().dims().iter().any(|&n| self.k_max > n / 2) {
            return bad("k_max exceeds half the latent size");
        }
        if !self.all_finite() {
            return bad("parameters are not finite");
        }
        Ok(())
    }

    fn kernel(&self, j: usize) -> Result<SpectralKernel> {
        let h = self.hidden_channels();
        Ok(SpectralKernel::new(2, self.k_max, h, h, self.layers[j].spectral.as_complex())?)
    }
}

/// Intermediates of one [`evolution_step`].
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Vec<f64>,
    spectrum: Vec<Complex64>,
    pre: Vec<f64>,
}

/// Intermediates of one [`advance`].
#[derive(Debug, Clone)]
pub struct StepCache {
    input: Vec<f64>,
    layers: Vec<LayerCache>,
    last_hidden: Vec<f64>,
}

/// Pointwise lift to the hidden width.
pub fn lift(z: &LatentFeature, params: &GnoParams) -> Result<ChannelField> {
    check_latent(z, params)?;
    let area = z.grid().len();
    let h = params.hidden_channels();
    let u = nn::pointwise(z.data(), z.channels(), area, params.lift_w.data(), params.lift_b.data(), h);
    Ok(ChannelField::new(*z.grid(), h, u)?)
}

fn check_latent(z: &LatentFeature, params: &GnoParams) -> Result<()> {
    if z.channels() != params.latent_channels() {
        return Err(GdnError::Shape(format!(
            "latent has {} channels, GNO expects {}",
            z.channels(),
            params.latent_channels()
        )));
    }
    Ok(())
}

fn layer_forward(u: &[f64], params: &GnoParams, j: usize, ctx: &GnoContext) -> Result<(Vec<f64>, LayerCache)> {
    let h = params.hidden_channels();
    let area = ctx.grid().len();
    let l = &params.layers[j];
    let mut pre = nn::pointwise(u, h, area, l.mix_w.data(), l.mix_b.data(), h);
    let (spectrum, conv) = params.kernel(j)?.forward_planes(ctx.sigma().plan(), u)?;
    for (p, c) in pre.iter_mut().zip(&conv) {
        *p += c;
    }
    let mut out: Vec<f64> = pre.iter().map(|&x| nn::gelu(x)).collect();
    ctx.sigma().apply_planes(Operator::K, &mut out);
    Ok((out, LayerCache { input: u.to_vec(), spectrum, pre }))
}

fn layer_backward(
    cache: &LayerCache,
    params: &GnoParams,
    j: usize,
    ctx: &GnoContext,
    out_bar: &[f64],
    grads: &mut GnoParams,
) -> Result<Vec<f64>> {
    let h = params.hidden_channels();
    let area = ctx.grid().len();
    let mut act_bar = out_bar.to_vec();
    // K is self-adjoint
    ctx.sigma().apply_planes(Operator::K, &mut act_bar);
    let pre_bar: Vec<f64> = act_bar.iter().zip(&cache.pre).map(|(g, &x)| g * nn::gelu_grad(x)).collect();
    let l = &params.layers[j];
    let gl = &mut grads.layers[j];
    let mut u_bar = nn::pointwise_backward(
        &cache.input,
        h,
        area,
        l.mix_w.data(),
        h,
        &pre_bar,
        gl.mix_w.data_mut(),
        gl.mix_b.data_mut(),
    );
    let (conv_bar, w_bar) = params.kernel(j)?.backward_planes(ctx.sigma().plan(), &cache.spectrum, &pre_bar)?;
    gl.spectral.add_complex(&w_bar);
    for (a, b) in u_bar.iter_mut().zip(&conv_bar) {
        *a += b;
    }
    Ok(u_bar)
}

/// One layer `u -> K_sigma(GeLU(W u + b + H * u))`.
pub fn evolution_step(u: &ChannelField, params: &GnoParams, layer: usize, ctx: &GnoContext) -> Result<ChannelField> {
    ctx.grid().check_same(u.grid())?;
    if layer >= params.layers.len() || u.channels() != params.hidden_channels() {
        return Err(GdnError::Shape(format!("layer {layer} on a {}-channel field", u.channels())));
    }
    let (out, _) = layer_forward(u.data(), params, layer, ctx)?;
    Ok(ChannelField::new(*u.grid(), u.channels(), out)?)
}

/// `Q . (J evolution layers) . P` applied to `z`.
pub fn advance(z: &LatentFeature, params: &GnoParams, ctx: &GnoContext) -> Result<LatentFeature> {
    advance_cached(z, params, ctx).map(|(z, _)| z)
}

pub fn advance_cached(z: &LatentFeature, params: &GnoParams, ctx: &GnoContext) -> Result<(LatentFeature, StepCache)> {
    let (out, cache) = advance_raw(z, params, ctx)?;
    Ok((ChannelField::new(*z.grid(), params.latent_channels(), out)?, cache))
}

fn advance_raw(z: &LatentFeature, params: &GnoParams, ctx: &GnoContext) -> Result<(Vec<f64>, StepCache)> {
    ctx.grid().check_same(z.grid())?;
    let mut u = lift(z, params)?.into_data();
    let mut layers = Vec::with_capacity(params.layers.len());
    for j in 0..params.layers.len() {
        let (next, cache) = layer_forward(&u, params, j, ctx)?;
        layers.push(cache);
        u = next;
    }
    let area = ctx.grid().len();
    let cz = params.latent_channels();
    let out = nn::pointwise(
        &u,
        params.hidden_channels(),
        area,
        params.project_w.data(),
        params.project_b.data(),
        cz,
    );
    Ok((out, StepCache { input: z.data().to_vec(), layers, last_hidden: u }))
}

/// Accumulates parameter gradients of one step and returns the sensitivity
/// of its input latent.
pub fn advance_backward(
    cache: &StepCache,
    params: &GnoParams,
    ctx: &GnoContext,
    out_bar: &[f64],
    grads: &mut GnoParams,
) -> Result<Vec<f64>> {
    let area = ctx.grid().len();
    let (cz, h) = (params.latent_channels(), params.hidden_channels());
    if out_bar.len() != cz * area {
        return Err(GdnError::Shape("latent sensitivity size".into()));
    }
    let mut u_bar = nn::pointwise_backward(
        &cache.last_hidden,
        h,
        area,
        params.project_w.data(),
        cz,
        out_bar,
        grads.project_w.data_mut(),
        grads.project_b.data_mut(),
    );
    for j in (0..params.layers.len()).rev() {
        u_bar = layer_backward(&cache.layers[j], params, j, ctx, &u_bar, grads)?;
    }
    Ok(nn::pointwise_backward(
        &cache.input,
        cz,
        area,
        params.lift_w.data(),
        h,
        &u_bar,
        grads.lift_w.data_mut(),
        grads.lift_b.data_mut(),
    ))
}

/// `[z0, z1, ..., z_steps]` under the shared parameters.
pub fn rollout(z0: &LatentFeature, params: &GnoParams, ctx: &GnoContext, steps: usize) -> Result<Vec<LatentFeature>> {
    rollout_cached(z0, params, ctx, steps).map(|(zs, _)| zs)
}

pub fn rollout_cached(
    z0: &LatentFeature,
    params: &GnoParams,
    ctx: &GnoContext,
    steps: usize,
) -> Result<(Vec<LatentFeature>, Vec<StepCache>)> {
    let mut zs = Vec::with_capacity(steps + 1);
    let mut caches = Vec::with_capacity(steps);
    zs.push(z0.clone());
    for t in 0..steps {
        let (next, cache) = advance_raw(&zs[t], params, ctx)?;
        if !next.iter().all(|x| x.is_finite()) {
            return Err(GdnError::RolloutDiverged { step: t + 1 });
        }
        zs.push(ChannelField::new(*z0.grid(), z0.channels(), next)?);
        caches.push(cache);
    }
    Ok((zs, caches))
}

/// Pulls sensitivities on every rollout element back to `z0`, accumulating
/// parameter gradients over all steps.
pub fn rollout_backward(
    caches: &[StepCache],
    params: &GnoParams,
    ctx: &GnoContext,
    z_bars: &[Vec<f64>],
    grads: &mut GnoParams,
) -> Result<Vec<f64>> {
    if z_bars.len() != caches.len() + 1 {
        return Err(GdnError::Shape(format!("{} sensitivities for {} steps", z_bars.len(), caches.len())));
    }
    let mut acc = z_bars[caches.len()].clone();
    for t in (0..caches.len()).rev() {
        acc = advance_backward(&caches[t], params, ctx, &acc, grads)?;
        for (a, b) in acc.iter_mut().zip(&z_bars[t]) {
            *a += b;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn latent(ctx: &GnoContext, channels: usize, rng: &mut ChaCha8Rng) -> ChannelField {
        let n = ctx.grid().len() * channels;
        ChannelField::new(*ctx.grid(), channels, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_init_preserves_retained_modes() {
        let g = Grid::square(8).unwrap();
        let cfg = GnoConfig { init_noise: 0.0, ..GnoConfig::default() };
        let ctx = GnoContext::new(g, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = GnoParams::init(&cfg, 8, &ctx, &mut rng).unwrap();
        let z = latent(&ctx, 8, &mut rng);
        let zs = rollout(&z, &p, &ctx, 3).unwrap();
        assert_eq!(zs.len(), 4);
        for (a, b) in zs[3].data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_init_requires_doubled_width() {
        let g = Grid::square(8).unwrap();
        let cfg = GnoConfig { hidden_channels: 12, ..GnoConfig::default() };
        let ctx = GnoContext::new(g, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(matches!(GnoParams::init(&cfg, 8, &ctx, &mut rng), Err(GdnError::Config(_))));
    }

    #[test]
    fn zero_rollout_length_returns_input() {
        let g = Grid::square(8).unwrap();
        let cfg = GnoConfig { init: GnoInit::Random, ..GnoConfig::default() };
        let ctx = GnoContext::new(g, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = GnoParams::init(&cfg, 8, &ctx, &mut rng).unwrap();
        let z = latent(&ctx, 8, &mut rng);
        let zs = rollout(&z, &p, &ctx, 0).unwrap();
        assert_eq!(zs, vec![z]);
    }

    #[test]
    fn diverging_rollout_names_the_step() {
        let g = Grid::square(8).unwrap();
        let cfg = GnoConfig { init: GnoInit::Random, ..GnoConfig::default() };
        let ctx = GnoContext::new(g, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = GnoParams::init(&cfg, 8, &ctx, &mut rng).unwrap();
        p.project_w.scale(1e200);
        let z = latent(&ctx, 8, &mut rng);
        let r = rollout(&z, &p, &ctx, 3);
        assert!(matches!(r, Err(GdnError::RolloutDiverged { step: 2 })), "{r:?}");
    }
}
