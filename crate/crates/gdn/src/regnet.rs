//! Registration encoder/decoder: an image pair goes down two stride-2
//! convolutions to a latent code on a grid four times coarser; the decoder
//! brings a latent code back up to a full-resolution velocity field.

use geoflow_core::{ChannelField, Grid, ScalarField, VectorField};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GdnError, Result};
use crate::nn::{self, Planes};
use crate::tensor::{Parameters, Tensor};

/// Latent code `z`: `C_z` channels on the coarsened grid.
pub type LatentFeature = ChannelField;

/// Spatial reduction between the image grid and the latent grid.
pub const LATENT_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegNetConfig {
    pub latent_channels: usize,
    pub hidden_channels: usize,
    /// Scale applied to the initial weights of the last decoder layer.
    pub output_init_scale: f64,
}

impl Default for RegNetConfig {
    fn default() -> Self {
        Self { latent_channels: 8, hidden_channels: 16, output_init_scale: 1e-2 }
    }
}

impl RegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 || self.hidden_channels == 0 {
            return Err(GdnError::Config("regnet channel counts must be positive".into()));
        }
        if !(self.output_init_scale.is_finite() && self.output_init_scale >= 0.0) {
            return Err(GdnError::Config("output_init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegNetParams {
    pub enc1_w: Tensor,
    pub enc1_b: Tensor,
    pub enc2_w: Tensor,
    pub enc2_b: Tensor,
    pub dec1_w: Tensor,
    pub dec1_b: Tensor,
    pub dec2_w: Tensor,
    pub dec2_b: Tensor,
}

const IMAGE_CHANNELS: usize = 2;
const VELOCITY_CHANNELS: usize = 2;

fn conv_layer(c_out: usize, c_in: usize, scale: f64, rng: &mut impl Rng) -> (Tensor, Tensor) {
    let bound = scale / ((c_in * 9) as f64).sqrt();
    (Tensor::uniform(&[c_out, c_in, 3, 3], bound, false, rng), Tensor::uniform(&[c_out], bound, false, rng))
}

impl RegNetParams {
    pub fn init(cfg: &RegNetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (h, z) = (cfg.hidden_channels, cfg.latent_channels);
        let (enc1_w, enc1_b) = conv_layer(h, IMAGE_CHANNELS, 1.0, rng);
        let (enc2_w, enc2_b) = conv_layer(z, h, 1.0, rng);
        let (dec1_w, dec1_b) = conv_layer(h, z, 1.0, rng);
        let (dec2_w, dec2_b) = conv_layer(VELOCITY_CHANNELS, h, cfg.output_init_scale, rng);
        Ok(Self { enc1_w, enc1_b, enc2_w, enc2_b, dec1_w, dec1_b, dec2_w, dec2_b })
    }

    pub fn zeros(cfg: &RegNetConfig) -> Self {
        let (h, z) = (cfg.hidden_channels, cfg.latent_channels);
        Self {
            enc1_w: Tensor::zeros(&[h, IMAGE_CHANNELS, 3, 3]),
            enc1_b: Tensor::zeros(&[h]),
            enc2_w: Tensor::zeros(&[z, h, 3, 3]),
            enc2_b: Tensor::zeros(&[z]),
            dec1_w: Tensor::zeros(&[h, z, 3, 3]),
            dec1_b: Tensor::zeros(&[h]),
            dec2_w: Tensor::zeros(&[VELOCITY_CHANNELS, h, 3, 3]),
            dec2_b: Tensor::zeros(&[VELOCITY_CHANNELS]),
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.enc1_b.shape()[0]
    }

    pub fn latent_channels(&self) -> usize {
        self.enc2_b.shape()[0]
    }

    /// Checks that the layer shapes chain together.
    pub fn validate(&self) -> Result<()> {
        let (h, z) = (self.hidden_channels(), self.latent_channels());
        let expect: [(&Tensor, Vec<usize>); 8] = [
            (&self.enc1_w, vec![h, IMAGE_CHANNELS, 3, 3]),
            (&self.enc1_b, vec![h]),
            (&self.enc2_w, vec![z, h, 3, 3]),
            (&self.enc2_b, vec![z]),
            (&self.dec1_w, vec![h, z, 3, 3]),
            (&self.dec1_b, vec![h]),
            (&self.dec2_w, vec![VELOCITY_CHANNELS, h, 3, 3]),
            (&self.dec2_b, vec![VELOCITY_CHANNELS]),
        ];
        for (t, shape) in expect {
            if t.shape() != shape.as_slice() || t.is_complex() {
                return Err(GdnError::Shape(format!("regnet tensor {:?}, expected {shape:?}", t.shape())));
            }
        }
        if !self.all_finite() {
            return Err(GdnError::Shape("regnet parameters are not finite".into()));
        }
        Ok(())
    }

    /// Latent grid for images on `grid`.
    pub fn latent_grid(grid: &Grid) -> Result<Grid> {
        if grid.ndim() != 2 {
            return Err(geoflow_core::Error::UnsupportedDimension(grid.ndim()).into());
        }
        if grid.dims().iter().any(|&n| n % LATENT_FACTOR != 0 || n / LATENT_FACTOR < 4) {
            return Err(GdnError::Shape(format!(
                "image dims {:?} must be multiples of {LATENT_FACTOR} and at least {}",
                grid.dims(),
                4 * LATENT_FACTOR
            )));
        }
        Ok(grid.coarsen(LATENT_FACTOR)?)
    }
}

impl Parameters for RegNetParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("regnet.enc1.weight", &self.enc1_w);
        f("regnet.enc1.bias", &self.enc1_b);
        f("regnet.enc2.weight", &self.enc2_w);
        f("regnet.enc2.bias", &self.enc2_b);
        f("regnet.dec1.weight", &self.dec1_w);
        f("regnet.dec1.bias", &self.dec1_b);
        f("regnet.dec2.weight", &self.dec2_w);
        f("regnet.dec2.bias", &self.dec2_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("regnet.enc1.weight", &mut self.enc1_w);
        f("regnet.enc1.bias", &mut self.enc1_b);
        f("regnet.enc2.weight", &mut self.enc2_w);
        f("regnet.enc2.bias", &mut self.enc2_b);
        f("regnet.dec1.weight", &mut self.dec1_w);
        f("regnet.dec1.bias", &mut self.dec1_b);
        f("regnet.dec2.weight", &mut self.dec2_w);
        f("regnet.dec2.bias", &mut self.dec2_b);
    }
}

/// Intermediates of [`encode`] needed by [`encode_backward`].
#[derive(Debug, Clone)]
pub struct EncodeCache {
    input: Vec<f64>,
    input_planes: Planes,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    mid_planes: Planes,
    pre2: Vec<f64>,
}

/// Intermediates of [`decode`] needed by [`decode_backward`].
#[derive(Debug, Clone)]
pub struct DecodeCache {
    latent_planes: Planes,
    up1: Vec<f64>,
    up1_planes: Planes,
    pre1: Vec<f64>,
    act1_planes: Planes,
    up2: Vec<f64>,
    up2_planes: Planes,
}

fn planes_of(grid: &Grid, channels: usize) -> Planes {
    let [rows, cols, _] = grid.dims3();
    Planes { channels, rows, cols }
}

pub fn encode(source: &ScalarField, target: &ScalarField, params: &RegNetParams) -> Result<LatentFeature> {
    encode_cached(source, target, params).map(|(z, _)| z)
}

pub fn encode_cached(
    source: &ScalarField,
    target: &ScalarField,
    params: &RegNetParams,
) -> Result<(LatentFeature, EncodeCache)> {
    source.grid().check_same(target.grid())?;
    let latent = RegNetParams::latent_grid(source.grid())?;
    let mut input = source.values().to_vec();
    input.extend_from_slice(target.values());
    let input_planes = planes_of(source.grid(), IMAGE_CHANNELS);
    let h = params.hidden_channels();
    let (pre1, mid_planes) = nn::conv3x3(&input, input_planes, params.enc1_w.data(), params.enc1_b.data(), h, 2);
    let act1: Vec<f64> = pre1.iter().map(|&x| nn::gelu(x)).collect();
    let z = params.latent_channels();
    let (pre2, _) = nn::conv3x3(&act1, mid_planes, params.enc2_w.data(), params.enc2_b.data(), z, 2);
    let out: Vec<f64> = pre2.iter().map(|&x| nn::gelu(x)).collect();
    let cache = EncodeCache { input, input_planes, pre1, act1, mid_planes, pre2 };
    Ok((ChannelField::new(latent, z, out)?, cache))
}

/// Accumulates parameter gradients into `grads` and returns the
/// sensitivities of the source and target images.
pub fn encode_backward(
    cache: &EncodeCache,
    params: &RegNetParams,
    z_bar: &LatentFeature,
    grads: &mut RegNetParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if z_bar.data().len() != cache.pre2.len() {
        return Err(GdnError::Shape("latent sensitivity does not match the encoder output".into()));
    }
    let pre2_bar: Vec<f64> = z_bar.data().iter().zip(&cache.pre2).map(|(g, &x)| g * nn::gelu_grad(x)).collect();
    let act1_bar = nn::conv3x3_backward(
        &cache.act1,
        cache.mid_planes,
        params.enc2_w.data(),
        params.latent_channels(),
        2,
        &pre2_bar,
        grads.enc2_w.data_mut(),
        grads.enc2_b.data_mut(),
    );
    let pre1_bar: Vec<f64> = act1_bar.iter().zip(&cache.pre1).map(|(g, &x)| g * nn::gelu_grad(x)).collect();
    let mut input_bar = nn::conv3x3_backward(
        &cache.input,
        cache.input_planes,
        params.enc1_w.data(),
        params.hidden_channels(),
        2,
        &pre1_bar,
        grads.enc1_w.data_mut(),
        grads.enc1_b.data_mut(),
    );
    let target_bar = input_bar.split_off(cache.input_planes.area());
    Ok((input_bar, target_bar))
}

/// Velocity field on `grid` (the image grid) decoded from `z`.
pub fn decode(z: &LatentFeature, params: &RegNetParams, grid: &Grid) -> Result<VectorField> {
    decode_cached(z, params, grid).map(|(v, _)| v)
}

pub fn decode_cached(z: &LatentFeature, params: &RegNetParams, grid: &Grid) -> Result<(VectorField, DecodeCache)> {
    let latent = RegNetParams::latent_grid(grid)?;
    latent.check_same(z.grid())?;
    if z.channels() != params.latent_channels() {
        return Err(GdnError::Shape(format!(
            "latent has {} channels, decoder expects {}",
            z.channels(),
            params.latent_channels()
        )));
    }
    let latent_planes = planes_of(&latent, z.channels());
    let (up1, up1_planes) = nn::upsample2(z.data(), latent_planes);
    let h = params.hidden_channels();
    let (pre1, act1_planes) = nn::conv3x3(&up1, up1_planes, params.dec1_w.data(), params.dec1_b.data(), h, 1);
    let act1: Vec<f64> = pre1.iter().map(|&x| nn::gelu(x)).collect();
    let (up2, up2_planes) = nn::upsample2(&act1, act1_planes);
    let (v, _) = nn::conv3x3(&up2, up2_planes, params.dec2_w.data(), params.dec2_b.data(), VELOCITY_CHANNELS, 1);
    let cache = DecodeCache { latent_planes, up1, up1_planes, pre1, act1_planes, up2, up2_planes };
    Ok((VectorField::new(*grid, v)?, cache))
}

/// Accumulates parameter gradients into `grads` and returns the latent
/// sensitivity.
pub fn decode_backward(
    cache: &DecodeCache,
    params: &RegNetParams,
    v_bar: &VectorField,
    grads: &mut RegNetParams,
) -> Result<Vec<f64>> {
    if v_bar.data().len() != VELOCITY_CHANNELS * cache.up2_planes.area() {
        return Err(GdnError::Shape("velocity sensitivity does not match the decoder output".into()));
    }
    let up2_bar = nn::conv3x3_backward(
        &cache.up2,
        cache.up2_planes,
        params.dec2_w.data(),
        VELOCITY_CHANNELS,
        1,
        v_bar.data(),
        grads.dec2_w.data_mut(),
        grads.dec2_b.data_mut(),
    );
    let act1_bar = nn::upsample2_backward(&up2_bar, cache.act1_planes);
    let pre1_bar: Vec<f64> = act1_bar.iter().zip(&cache.pre1).map(|(g, &x)| g * nn::gelu_grad(x)).collect();
    let up1_bar = nn::conv3x3_backward(
        &cache.up1,
        cache.up1_planes,
        params.dec1_w.data(),
        params.hidden_channels(),
        1,
        &pre1_bar,
        grads.dec1_w.data_mut(),
        grads.dec1_b.data_mut(),
    );
    Ok(nn::upsample2_backward(&up1_bar, cache.latent_planes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (RegNetParams, Grid, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = RegNetConfig { output_init_scale: 1.0, ..RegNetConfig::default() };
        (RegNetParams::init(&cfg, &mut rng).unwrap(), Grid::square(16).unwrap(), rng)
    }

    #[test]
    fn shapes_and_zero_propagation() {
        let (p, g, _) = setup();
        let s = ScalarField::zeros(g);
        let z = encode(&s, &s, &p).unwrap();
        assert_eq!(z.grid().dims(), &[4, 4]);
        assert_eq!(z.channels(), 8);
        let v = decode(&z, &p, &g).unwrap();
        assert_eq!(v.grid(), &g);

        let cfg = RegNetConfig::default();
        let mut zero_bias = p.clone();
        zero_bias.enc1_b.fill(0.0);
        zero_bias.enc2_b.fill(0.0);
        zero_bias.dec1_b.fill(0.0);
        zero_bias.dec2_b.fill(0.0);
        assert!(encode(&s, &s, &zero_bias).unwrap().data().iter().all(|&x| x == 0.0));
        let zl = ChannelField::zeros(*z.grid(), cfg.latent_channels);
        assert!(decode(&zl, &zero_bias, &g).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn indivisible_grid_is_rejected() {
        let (p, _, _) = setup();
        let s = ScalarField::zeros(Grid::square(18).unwrap());
        assert!(matches!(encode(&s, &s, &p), Err(GdnError::Shape(_))));
    }

    #[test]
    fn validate_catches_inconsistent_shapes() {
        let (mut p, _, _) = setup();
        p.validate().unwrap();
        p.dec1_w = Tensor::zeros(&[16, 7, 3, 3]);
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (p, g, mut rng) = setup();
        let vals = (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = ScalarField::new(g, vals).unwrap();
        let (z, ec) = encode_cached(&s, &s, &p).unwrap();
        let (_, dc) = decode_cached(&z, &p, &g).unwrap();
        let mut grads = p.zeros_like();
        let zb = decode_backward(&dc, &p, &VectorField::zeros(g), &mut grads).unwrap();
        assert!(zb.iter().all(|&x| x == 0.0));
        encode_backward(&ec, &p, &ChannelField::zeros(*z.grid(), 8), &mut grads).unwrap();
        assert!(grads.flatten().iter().all(|&x| x == 0.0));
    }
}
