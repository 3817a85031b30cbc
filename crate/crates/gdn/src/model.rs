//! The assembled network: registration encoder/decoder plus latent geodesic
//! operator, and the inference path from an image pair to a deformation.

use geoflow_core::epdiff::{integrate_flow, ShootingConfig, Trajectory};
use geoflow_core::field::warp;
use geoflow_core::{FourierMultiplier, Grid, ScalarField, VectorField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GdnError, Result};
use crate::gno::{rollout, GnoConfig, GnoContext, GnoParams};
use crate::regnet::{decode, encode, LatentFeature, RegNetConfig, RegNetParams};
use crate::tensor::{Parameters, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Image dimensions the model is built for.
    pub dims: Vec<usize>,
    #[serde(default)]
    pub regnet: RegNetConfig,
    #[serde(default)]
    pub gno: GnoConfig,
    /// Step count, metric and integrator of the geodesic being learned.
    #[serde(default)]
    pub shooting: ShootingConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            regnet: RegNetConfig::default(),
            gno: GnoConfig::default(),
            shooting: ShootingConfig::default(),
            seed: 0,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(&self.dims)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.regnet.validate()?;
        self.gno.validate()?;
        self.shooting.validate()?;
        RegNetParams::latent_grid(&self.grid()?)?;
        Ok(())
    }
}

/// All trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GdnParams {
    pub regnet: RegNetParams,
    pub gno: GnoParams,
}

impl Parameters for GdnParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.regnet.visit(f);
        self.gno.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.regnet.visit_mut(f);
        self.gno.visit_mut(f);
    }
}

/// Grid-dependent operators shared by every evaluation of one model.
#[derive(Debug, Clone)]
pub struct GdnContext {
    grid: Grid,
    metric: FourierMultiplier,
    gno: GnoContext,
}

impl GdnContext {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let latent = RegNetParams::latent_grid(&grid)?;
        Ok(Self { grid, metric: cfg.shooting.multiplier(grid)?, gno: GnoContext::new(latent, &cfg.gno)? })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `L` and `K` of the geodesic metric on the image grid.
    pub fn metric(&self) -> &FourierMultiplier {
        &self.metric
    }

    pub fn gno(&self) -> &GnoContext {
        &self.gno
    }
}

#[derive(Debug, Clone)]
pub struct Gdn {
    config: ModelConfig,
    context: GdnContext,
    pub params: GdnParams,
}

/// Output of [`Gdn::predict`].
#[derive(Debug, Clone)]
pub struct Prediction {
    pub latents: Vec<LatentFeature>,
    pub trajectory: Trajectory,
    /// Source warped by the final transform.
    pub deformed: ScalarField,
}

impl Gdn {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let context = GdnContext::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let regnet = RegNetParams::init(&config.regnet, &mut rng)?;
        let gno = GnoParams::init(&config.gno, config.regnet.latent_channels, &context.gno, &mut rng)?;
        Ok(Self { config, context, params: GdnParams { regnet, gno } })
    }

    /// Wraps existing weights after checking them against `config`.
    pub fn from_params(config: ModelConfig, params: GdnParams) -> Result<Self> {
        let context = GdnContext::new(&config)?;
        params.regnet.validate()?;
        if params.regnet.latent_channels() != config.regnet.latent_channels
            || params.regnet.hidden_channels() != config.regnet.hidden_channels
        {
            return Err(GdnError::Shape("regnet weights do not match the configuration".into()));
        }
        if params.gno.hidden_channels() != config.gno.hidden_channels || params.gno.layers.len() != config.gno.layers {
            return Err(GdnError::Shape("GNO weights do not match the configuration".into()));
        }
        params.gno.validate(config.regnet.latent_channels, &context.gno)?;
        Ok(Self { config, context, params })
    }

    /// Zero weights with the shapes `config` implies.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        let context = GdnContext::new(&config)?;
        let k_max = config.gno.resolved_k_max(context.gno.grid());
        let gno = GnoParams::zeros(
            config.regnet.latent_channels,
            config.gno.hidden_channels,
            config.gno.layers,
            k_max,
        );
        let params = GdnParams { regnet: RegNetParams::zeros(&config.regnet), gno };
        Ok(Self { config, context, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn context(&self) -> &GdnContext {
        &self.context
    }

    pub fn grid(&self) -> &Grid {
        &self.context.grid
    }

    fn check_pair(&self, source: &ScalarField, target: &ScalarField) -> Result<()> {
        source.grid().check_same(target.grid())?;
        if source.grid() != self.grid() {
            return Err(GdnError::Shape(format!(
                "images on {:?}, model built for {:?}",
                source.grid().dims(),
                self.config.dims
            )));
        }
        Ok(())
    }

    /// Decoded velocities `v_0..v_tau` for a pair.
    pub fn velocities(&self, source: &ScalarField, target: &ScalarField) -> Result<(Vec<LatentFeature>, Vec<VectorField>)> {
        self.check_pair(source, target)?;
        let z0 = encode(source, target, &self.params.regnet)?;
        let zs = rollout(&z0, &self.params.gno, &self.context.gno, self.config.shooting.steps)?;
        let vs = zs
            .iter()
            .map(|z| decode(z, &self.params.regnet, &self.context.grid))
            .collect::<Result<Vec<_>>>()?;
        Ok((zs, vs))
    }

    /// Encode, roll out, decode every step, integrate the flow and warp.
    /// Never evaluates the EPDiff right-hand side.
    pub fn predict(&self, source: &ScalarField, target: &ScalarField) -> Result<Prediction> {
        let (latents, velocities) = self.velocities(source, target)?;
        let transforms = integrate_flow(&velocities, self.config.shooting.dt())?;
        let deformed = warp(source, transforms.last().expect("nonempty"))?;
        Ok(Prediction { latents, trajectory: Trajectory { velocities, transforms }, deformed })
    }
}
