//! Geodesic shooting: EPDiff velocity evolution and the flow of
//! diffeomorphisms it generates, with reverse-mode sensitivities of both.
//!
//! The right-hand side is evaluated in the flux form
//! `-K[(Dv)^T m + div(m ⊗ v)]` with `m = Lv`. It is the exact transpose of the
//! discrete Lie bracket, so kinetic energy is conserved by the semi-discrete
//! system and only the time integrator drifts.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{
    central_difference_into, dual_pairing, warp, Grid, ScalarField, Transform, VectorField,
};
use crate::spectral::{FourierMultiplier, Operator};

thread_local! {
    static RHS_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`epdiff_rhs`] evaluations made on the current thread.
pub fn rhs_call_count() -> u64 {
    RHS_CALLS.with(|c| c.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

impl std::str::FromStr for Integrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Self::Euler),
            "rk4" => Ok(Self::Rk4),
            other => Err(Error::InvalidArgument(format!("unknown integrator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingConfig {
    pub steps: usize,
    pub alpha: f64,
    pub exponent: u32,
    pub integrator: Integrator,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self { steps: 10, alpha: 3.0, exponent: 3, integrator: Integrator::Euler }
    }
}

impl ShootingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.exponent == 0 {
            return Err(Error::InvalidArgument("operator exponent must be >= 1".into()));
        }
        Ok(())
    }

    /// Time step over the unit interval.
    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn multiplier(&self, grid: Grid) -> Result<FourierMultiplier> {
        self.validate()?;
        FourierMultiplier::new(grid, self.alpha, self.exponent)
    }
}

/// Velocities and transforms at `t = 0, dt, ..., 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub velocities: Vec<VectorField>,
    pub transforms: Vec<Transform>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn final_transform(&self) -> &Transform {
        self.transforms.last().expect("trajectory has at least one transform")
    }
}

/// `(Dv)^T m + div(m ⊗ v)`, before the sign and the `K` smoothing.
fn flux(v: &[f64], m: &[f64], grid: &Grid) -> Vec<f64> {
    let n = grid.len();
    let d = grid.ndim();
    let mut out = vec![0.0; d * n];
    let mut dv = vec![0.0; n];
    let mut prod = vec![0.0; n];
    let mut dprod = vec![0.0; n];
    for i in 0..d {
        let oi = &mut out[i * n..(i + 1) * n];
        for j in 0..d {
            let vj = &v[j * n..(j + 1) * n];
            let mj = &m[j * n..(j + 1) * n];
            central_difference_into(grid, vj, i, &mut dv);
            let mi = &m[i * n..(i + 1) * n];
            for x in 0..n {
                prod[x] = mi[x] * vj[x];
            }
            central_difference_into(grid, &prod, j, &mut dprod);
            for x in 0..n {
                oi[x] += dv[x] * mj[x] + dprod[x];
            }
        }
    }
    out
}

/// Time derivative of the velocity under EPDiff.
pub fn epdiff_rhs(v: &VectorField, mult: &FourierMultiplier) -> Result<VectorField> {
    mult.grid().check_same(v.grid())?;
    Ok(rhs_unchecked(v, mult))
}

fn rhs_unchecked(v: &VectorField, mult: &FourierMultiplier) -> VectorField {
    RHS_CALLS.with(|c| c.set(c.get() + 1));
    let grid = *v.grid();
    let mut m = v.data().to_vec();
    mult.apply_planes(Operator::L, &mut m);
    let mut f = flux(v.data(), &m, &grid);
    mult.apply_planes(Operator::K, &mut f);
    for x in f.iter_mut() {
        *x = -*x;
    }
    VectorField::from_raw(grid, f)
}

/// Reverse-mode sensitivity of [`epdiff_rhs`] at `v` for upstream `out_bar`.
pub fn epdiff_rhs_vjp(
    v: &VectorField,
    out_bar: &VectorField,
    mult: &FourierMultiplier,
) -> Result<VectorField> {
    mult.grid().check_same(v.grid())?;
    mult.grid().check_same(out_bar.grid())?;
    Ok(rhs_vjp_unchecked(v, out_bar, mult))
}

fn rhs_vjp_unchecked(v: &VectorField, out_bar: &VectorField, mult: &FourierMultiplier) -> VectorField {
    let grid = *v.grid();
    let n = grid.len();
    let d = grid.ndim();
    let vd = v.data();
    let mut m = vd.to_vec();
    mult.apply_planes(Operator::L, &mut m);
    let mut g = out_bar.data().to_vec();
    mult.apply_planes(Operator::K, &mut g);
    for x in g.iter_mut() {
        *x = -*x;
    }

    let mut m_bar = vec![0.0; d * n];
    let mut v_bar = vec![0.0; d * n];
    let mut tmp = vec![0.0; n];
    let mut prod = vec![0.0; n];
    for i in 0..d {
        for j in 0..d {
            let gi = &g[i * n..(i + 1) * n];
            let gj = &g[j * n..(j + 1) * n];
            let vi = &vd[i * n..(i + 1) * n];
            let vj = &vd[j * n..(j + 1) * n];
            let mi = &m[i * n..(i + 1) * n];
            let mj = &m[j * n..(j + 1) * n];

            // m_bar_i += g_j d_j v_i - v_j d_j g_i
            central_difference_into(&grid, vi, j, &mut tmp);
            let mb = &mut m_bar[i * n..(i + 1) * n];
            for x in 0..n {
                mb[x] += gj[x] * tmp[x];
            }
            central_difference_into(&grid, gi, j, &mut tmp);
            for x in 0..n {
                mb[x] -= vj[x] * tmp[x];
            }

            // v_bar_i -= d_j(g_j m_i) + (d_i g_j) m_j
            for x in 0..n {
                prod[x] = gj[x] * mi[x];
            }
            central_difference_into(&grid, &prod, j, &mut tmp);
            let vb = &mut v_bar[i * n..(i + 1) * n];
            for x in 0..n {
                vb[x] -= tmp[x];
            }
            central_difference_into(&grid, gj, i, &mut tmp);
            for x in 0..n {
                vb[x] -= tmp[x] * mj[x];
            }
        }
    }
    mult.apply_planes(Operator::L, &mut m_bar);
    for (a, b) in v_bar.iter_mut().zip(&m_bar) {
        *a += b;
    }
    VectorField::from_raw(grid, v_bar)
}

fn step(v: &VectorField, dt: f64, integrator: Integrator, mult: &FourierMultiplier) -> VectorField {
    match integrator {
        Integrator::Euler => {
            let mut next = v.clone();
            next.add_scaled_mut(dt, &rhs_unchecked(v, mult));
            next
        }
        Integrator::Rk4 => {
            let k1 = rhs_unchecked(v, mult);
            let mut w = v.clone();
            w.add_scaled_mut(0.5 * dt, &k1);
            let k2 = rhs_unchecked(&w, mult);
            let mut w = v.clone();
            w.add_scaled_mut(0.5 * dt, &k2);
            let k3 = rhs_unchecked(&w, mult);
            let mut w = v.clone();
            w.add_scaled_mut(dt, &k3);
            let k4 = rhs_unchecked(&w, mult);
            let mut next = v.clone();
            next.add_scaled_mut(dt / 6.0, &k1);
            next.add_scaled_mut(dt / 3.0, &k2);
            next.add_scaled_mut(dt / 3.0, &k3);
            next.add_scaled_mut(dt / 6.0, &k4);
            next
        }
    }
}

fn step_vjp(
    v: &VectorField,
    next_bar: &VectorField,
    dt: f64,
    integrator: Integrator,
    mult: &FourierMultiplier,
) -> VectorField {
    let mut v_bar = next_bar.clone();
    match integrator {
        Integrator::Euler => {
            v_bar.add_scaled_mut(dt, &rhs_vjp_unchecked(v, next_bar, mult));
        }
        Integrator::Rk4 => {
            let k1 = rhs_unchecked(v, mult);
            let mut w2 = v.clone();
            w2.add_scaled_mut(0.5 * dt, &k1);
            let k2 = rhs_unchecked(&w2, mult);
            let mut w3 = v.clone();
            w3.add_scaled_mut(0.5 * dt, &k2);
            let k3 = rhs_unchecked(&w3, mult);
            let mut w4 = v.clone();
            w4.add_scaled_mut(dt, &k3);

            let mut k1_bar = next_bar.scaled(dt / 6.0);
            let mut k2_bar = next_bar.scaled(dt / 3.0);
            let mut k3_bar = next_bar.scaled(dt / 3.0);
            let k4_bar = next_bar.scaled(dt / 6.0);

            let w4_bar = rhs_vjp_unchecked(&w4, &k4_bar, mult);
            v_bar.add_scaled_mut(1.0, &w4_bar);
            k3_bar.add_scaled_mut(dt, &w4_bar);
            let w3_bar = rhs_vjp_unchecked(&w3, &k3_bar, mult);
            v_bar.add_scaled_mut(1.0, &w3_bar);
            k2_bar.add_scaled_mut(0.5 * dt, &w3_bar);
            let w2_bar = rhs_vjp_unchecked(&w2, &k2_bar, mult);
            v_bar.add_scaled_mut(1.0, &w2_bar);
            k1_bar.add_scaled_mut(0.5 * dt, &w2_bar);
            v_bar.add_scaled_mut(1.0, &rhs_vjp_unchecked(v, &k1_bar, mult));
        }
    }
    v_bar
}

/// Velocities `v_0..v_steps` from `v0`. Fails on the first non-finite step.
pub fn shoot_velocities(
    v0: &VectorField,
    cfg: &ShootingConfig,
    mult: &FourierMultiplier,
) -> Result<Vec<VectorField>> {
    cfg.validate()?;
    mult.grid().check_same(v0.grid())?;
    let dt = cfg.dt();
    let mut vs = Vec::with_capacity(cfg.steps + 1);
    vs.push(v0.clone());
    for t in 0..cfg.steps {
        let next = step(&vs[t], dt, cfg.integrator, mult);
        if !next.is_finite() {
            return Err(Error::BlowUp { step: t + 1 });
        }
        vs.push(next);
    }
    Ok(vs)
}

/// Full geodesic from `v0`, building the metric operators for its grid.
pub fn shoot(v0: &VectorField, cfg: &ShootingConfig) -> Result<Trajectory> {
    let mult = cfg.multiplier(*v0.grid())?;
    shoot_with(v0, cfg, &mult)
}

pub fn shoot_with(
    v0: &VectorField,
    cfg: &ShootingConfig,
    mult: &FourierMultiplier,
) -> Result<Trajectory> {
    let velocities = shoot_velocities(v0, cfg, mult)?;
    let transforms = integrate_flow(&velocities, cfg.dt())?;
    Ok(Trajectory { velocities, transforms })
}

/// Pulls sensitivities on every `v_t` back to `v0` through the integrator.
/// `velocities` must come from [`shoot_velocities`] with the same settings.
pub fn shoot_vjp(
    velocities: &[VectorField],
    velocity_bars: &[VectorField],
    cfg: &ShootingConfig,
    mult: &FourierMultiplier,
) -> Result<VectorField> {
    if velocities.len() != cfg.steps + 1 || velocity_bars.len() != velocities.len() {
        return Err(Error::Shape(format!(
            "{} velocities and {} sensitivities for {} steps",
            velocities.len(),
            velocity_bars.len(),
            cfg.steps
        )));
    }
    let dt = cfg.dt();
    let mut acc = velocity_bars[cfg.steps].clone();
    for t in (0..cfg.steps).rev() {
        acc = step_vjp(&velocities[t], &acc, dt, cfg.integrator, mult);
        acc.add_scaled_mut(1.0, &velocity_bars[t]);
    }
    Ok(acc)
}

/// Forward-Euler flow: `u_{t+1}(x) = u_t(x) + dt * v_t(x + u_t(x))`. Returns
/// one transform per velocity, starting at the identity; the last velocity
/// is not used.
pub fn integrate_flow(velocities: &[VectorField], dt: f64) -> Result<Vec<Transform>> {
    let first = velocities
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty velocity list".into()))?;
    let grid = *first.grid();
    for v in velocities {
        grid.check_same(v.grid())?;
    }
    let n = grid.len();
    let d = grid.ndim();
    let mut out = Vec::with_capacity(velocities.len());
    out.push(Transform::identity(grid));
    for v in &velocities[..velocities.len() - 1] {
        let prev = out.last().expect("nonempty");
        let mut u = prev.displacement().data().to_vec();
        for i in 0..n {
            let w = v.sample(&prev.map_node(i));
            for a in 0..d {
                u[a * n + i] += dt * w[a];
            }
        }
        out.push(Transform::from_displacement(VectorField::from_raw(grid, u)));
    }
    Ok(out)
}

/// Reverse-mode sensitivities of [`integrate_flow`] with respect to every
/// velocity, given the sensitivity on the final displacement.
pub fn integrate_flow_vjp(
    velocities: &[VectorField],
    transforms: &[Transform],
    dt: f64,
    final_bar: &VectorField,
) -> Result<Vec<VectorField>> {
    if velocities.is_empty() || transforms.len() != velocities.len() {
        return Err(Error::Shape(format!(
            "{} velocities and {} transforms",
            velocities.len(),
            transforms.len()
        )));
    }
    let grid = *velocities[0].grid();
    grid.check_same(final_bar.grid())?;
    let n = grid.len();
    let d = grid.ndim();
    let mut bars: Vec<VectorField> = velocities.iter().map(|_| VectorField::zeros(grid)).collect();
    let mut u_bar = final_bar.data().to_vec();
    for t in (0..velocities.len() - 1).rev() {
        let v = &velocities[t];
        let phi = &transforms[t];
        let vb = bars[t].data_mut();
        let mut next_bar = u_bar.clone();
        for i in 0..n {
            let c = grid.corners(&phi.map_node(i));
            for a in 0..d {
                let ub = u_bar[a * n + i];
                if ub != 0.0 {
                    c.scatter(&mut vb[a * n..(a + 1) * n], dt * ub);
                }
            }
            for a in 0..d {
                let grad = c.gradient(v.component(a), d);
                let ub = u_bar[a * n + i];
                for b in 0..d {
                    next_bar[b * n + i] += dt * ub * grad[b];
                }
            }
        }
        u_bar = next_bar;
    }
    Ok(bars)
}

/// `S` warped by every transform of the trajectory.
pub fn deform_along(source: &ScalarField, traj: &Trajectory) -> Result<Vec<ScalarField>> {
    traj.transforms.iter().map(|phi| warp(source, phi)).collect()
}

/// Kinetic energy `(Lv, v)` with cell-volume weighting.
pub fn kinetic_energy(v: &VectorField, mult: &FourierMultiplier) -> Result<f64> {
    dual_pairing(&mult.apply_l(v)?, v)
}
