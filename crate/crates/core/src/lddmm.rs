//! Shooting-based LDDMM: the energy `(Lv0, v0) + lambda * SSD(S o phi_1, T)`,
//! its exact discrete gradient, and a descent loop over `v0`.

use serde::{Deserialize, Serialize};

use crate::epdiff::{integrate_flow, integrate_flow_vjp, shoot_velocities, shoot_vjp, ShootingConfig, Trajectory};
use crate::error::{Error, Result};
use crate::field::{dual_pairing, warp, warp_vjp_displacement, ScalarField, VectorField};
use crate::spectral::{FourierMultiplier, Operator};

/// Cell-volume weighted sum of squared differences.
pub fn ssd(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid().check_same(b.grid())?;
    let s: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok(s * a.grid().cell_volume())
}

#[derive(Debug, Clone)]
pub struct RegistrationProblem {
    pub source: ScalarField,
    pub target: ScalarField,
    pub lambda: f64,
    pub shooting: ShootingConfig,
}

pub const DEFAULT_LAMBDA: f64 = 0.03;

impl RegistrationProblem {
    pub fn new(source: ScalarField, target: ScalarField, lambda: f64, shooting: ShootingConfig) -> Result<Self> {
        source.grid().check_same(target.grid())?;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        shooting.validate()?;
        Ok(Self { source, target, lambda, shooting })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTerms {
    pub regularity: f64,
    pub matching: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.regularity + self.matching
    }
}

/// A problem bound to its precomputed metric operators.
#[derive(Debug, Clone)]
pub struct Lddmm {
    problem: RegistrationProblem,
    mult: FourierMultiplier,
}

impl Lddmm {
    pub fn new(problem: RegistrationProblem) -> Result<Self> {
        let mult = problem.shooting.multiplier(*problem.source.grid())?;
        Ok(Self { problem, mult })
    }

    pub fn problem(&self) -> &RegistrationProblem {
        &self.problem
    }

    pub fn multiplier(&self) -> &FourierMultiplier {
        &self.mult
    }

    pub fn terms(&self, v0: &VectorField) -> Result<EnergyTerms> {
        let p = &self.problem;
        let vs = shoot_velocities(v0, &p.shooting, &self.mult)?;
        let phis = integrate_flow(&vs, p.shooting.dt())?;
        let warped = warp(&p.source, phis.last().expect("nonempty"))?;
        Ok(EnergyTerms {
            regularity: dual_pairing(&self.mult.apply_l(v0)?, v0)?,
            matching: p.lambda * ssd(&warped, &p.target)?,
        })
    }

    pub fn energy(&self, v0: &VectorField) -> Result<f64> {
        Ok(self.terms(v0)?.total())
    }

    /// Energy and its gradient with respect to every component of `v0`.
    pub fn energy_and_gradient(&self, v0: &VectorField) -> Result<(EnergyTerms, VectorField)> {
        let p = &self.problem;
        let grid = *p.source.grid();
        let vol = grid.cell_volume();
        let vs = shoot_velocities(v0, &p.shooting, &self.mult)?;
        let phis = integrate_flow(&vs, p.shooting.dt())?;
        let phi_end = phis.last().expect("nonempty");
        let warped = warp(&p.source, phi_end)?;
        let lv0 = self.mult.apply_l(v0)?;
        let terms = EnergyTerms {
            regularity: dual_pairing(&lv0, v0)?,
            matching: p.lambda * ssd(&warped, &p.target)?,
        };

        let resid: Vec<f64> = warped
            .values()
            .iter()
            .zip(p.target.values())
            .map(|(a, b)| 2.0 * p.lambda * vol * (a - b))
            .collect();
        let resid = ScalarField::new(grid, resid)?;
        let u_bar = warp_vjp_displacement(&p.source, phi_end, &resid)?;
        let v_bars = integrate_flow_vjp(&vs, &phis, p.shooting.dt(), &u_bar)?;
        let mut grad = shoot_vjp(&vs, &v_bars, &p.shooting, &self.mult)?;
        grad.add_scaled_mut(2.0 * vol, &lv0);
        Ok((terms, grad))
    }

    pub fn trajectory(&self, v0: &VectorField) -> Result<Trajectory> {
        crate::epdiff::shoot_with(v0, &self.problem.shooting, &self.mult)
    }

    /// Sobolev gradient: `K` applied to the L2 gradient density.
    fn precondition(&self, grad: &VectorField) -> VectorField {
        let vol = self.problem.source.grid().cell_volume();
        let mut g = grad.scaled(1.0 / vol);
        self.mult.apply_planes(Operator::K, g.data_mut());
        g
    }
}

pub fn energy(v0: &VectorField, prob: &RegistrationProblem) -> Result<f64> {
    Lddmm::new(prob.clone())?.energy(v0)
}

pub fn grad_energy(v0: &VectorField, prob: &RegistrationProblem) -> Result<VectorField> {
    Ok(Lddmm::new(prob.clone())?.energy_and_gradient(v0)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Adam,
    Gd,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "gd" => Ok(Self::Gd),
            other => Err(Error::InvalidArgument(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub iters: usize,
    /// Adam step size, or initial step for gradient descent.
    pub lr: f64,
    pub method: Method,
    pub max_backtracks: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { iters: 300, lr: 2e-3, method: Method::Adam, max_backtracks: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    MaxIterations,
    Converged,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub v0: VectorField,
    pub trajectory: Trajectory,
    /// Energy of the accepted iterate, starting with `v0 = 0`.
    pub history: Vec<EnergyTerms>,
    pub status: Status,
}

struct AdamState {
    m: Vec<f64>,
    s: Vec<f64>,
    t: i32,
}

impl AdamState {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-12;

    fn direction(&mut self, g: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut d = vec![0.0; g.len()];
        for i in 0..g.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.s[i] = Self::B2 * self.s[i] + (1.0 - Self::B2) * g[i] * g[i];
            d[i] = (self.m[i] / c1) / ((self.s[i] / c2).sqrt() + Self::EPS);
        }
        d
    }
}

/// Descends from `v0 = 0`. Each accepted step lowers the energy; when no
/// trial step along the Adam or preconditioned-gradient direction does, the
/// loop stops with [`Status::Converged`].
pub fn register_optimize(prob: &RegistrationProblem, opts: &OptimizeOptions) -> Result<RegistrationResult> {
    if opts.iters == 0 {
        return Err(Error::InvalidArgument("iters must be >= 1".into()));
    }
    if !(opts.lr.is_finite() && opts.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("lr must be positive, got {}", opts.lr)));
    }
    let solver = Lddmm::new(prob.clone())?;
    let grid = *prob.source.grid();
    let len = grid.len() * grid.ndim();
    let mut v0 = VectorField::zeros(grid);
    let (mut terms, mut grad) = solver.energy_and_gradient(&v0)?;
    let mut history = vec![terms];
    let mut adam = AdamState { m: vec![0.0; len], s: vec![0.0; len], t: 0 };
    let mut gd_step = opts.lr;
    let mut status = Status::MaxIterations;

    for _ in 0..opts.iters {
        let pre = solver.precondition(&grad);
        let gmax = pre.max_abs();
        if gmax == 0.0 {
            status = Status::Converged;
            break;
        }
        let mut accepted = None;
        if opts.method == Method::Adam {
            let dir = VectorField::new(grid, adam.direction(pre.data()))?;
            accepted = line_search(&solver, &v0, &dir, opts.lr, terms.total(), opts.max_backtracks)
                .map(|(cand, _)| cand);
        }
        if accepted.is_none() {
            // fallback and plain mode: step sized so the largest update is gd_step
            match line_search(&solver, &v0, &pre, gd_step / gmax, terms.total(), opts.max_backtracks) {
                Some((cand, used)) => {
                    gd_step = 1.5 * used * gmax;
                    accepted = Some(cand);
                }
                None => gd_step *= 0.5f64.powi(opts.max_backtracks as i32 + 1),
            }
        }
        match accepted {
            Some(cand) => {
                v0 = cand;
                let (t, g) = solver.energy_and_gradient(&v0)?;
                terms = t;
                grad = g;
                history.push(terms);
            }
            None => {
                status = Status::Converged;
                break;
            }
        }
    }
    let trajectory = solver.trajectory(&v0)?;
    Ok(RegistrationResult { v0, trajectory, history, status })
}

/// Tries `v0 - step * dir` with halving steps; returns the first candidate
/// whose energy is below `current`, with the step that produced it.
fn line_search(
    solver: &Lddmm,
    v0: &VectorField,
    dir: &VectorField,
    step: f64,
    current: f64,
    max_backtracks: usize,
) -> Option<(VectorField, f64)> {
    let mut step = step;
    for _ in 0..=max_backtracks {
        let cand = v0.axpy(-step, dir).ok()?;
        if let Ok(e) = solver.energy(&cand) {
            if e.is_finite() && e < current {
                return Some((cand, step));
            }
        }
        step *= 0.5;
    }
    None
}
