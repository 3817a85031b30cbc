use std::f64::consts::PI;

use geoflow_core::data_io::synth::render_disk;
use geoflow_core::epdiff::{integrate_flow, kinetic_energy, shoot_with, Integrator, ShootingConfig};
use geoflow_core::field::{det_jacobian, warp};
use geoflow_core::lddmm::{register_optimize, ssd, OptimizeOptions, RegistrationProblem};
use geoflow_core::{Grid, VectorField};

fn wave_field(grid: Grid, amp: f64) -> VectorField {
    let v = VectorField::from_fn(grid, |p| {
        let (x, y) = (2.0 * PI * p[0], 2.0 * PI * p[1]);
        [x.sin() * y.cos() + 0.4 * (2.0 * y + 0.3).sin(), 0.7 * (x + y).cos() - 0.2 * (2.0 * x).sin(), 0.0]
    });
    let m = v.max_abs();
    v.scaled(amp / m)
}

fn drift(v0: &VectorField, steps: usize, integrator: Integrator) -> f64 {
    let cfg = ShootingConfig { steps, integrator, ..ShootingConfig::default() };
    let mult = cfg.multiplier(*v0.grid()).unwrap();
    let traj = shoot_with(v0, &cfg, &mult).unwrap();
    let e0 = kinetic_energy(&traj.velocities[0], &mult).unwrap();
    let e1 = kinetic_energy(traj.velocities.last().unwrap(), &mult).unwrap();
    (e1 - e0).abs() / e0
}

#[test]
fn energy_drift_falls_at_the_integrator_order() {
    let v0 = wave_field(Grid::square(32).unwrap(), 0.05);
    for (integrator, order) in [(Integrator::Euler, 1.0), (Integrator::Rk4, 4.0)] {
        let rates: Vec<f64> = [10, 20, 40]
            .windows(2)
            .map(|w| (drift(&v0, w[0], integrator) / drift(&v0, w[1], integrator)).log2())
            .collect();
        for r in rates {
            assert!((r - order).abs() < 0.5, "{integrator:?}: observed order {r}");
        }
    }
}

#[test]
fn flowing_back_along_reversed_velocities_returns_home() {
    let grid = Grid::square(32).unwrap();
    let cfg = ShootingConfig::default();
    let mult = cfg.multiplier(grid).unwrap();
    for amp in [0.02, 0.01] {
        let traj = shoot_with(&wave_field(grid, amp), &cfg, &mult).unwrap();
        let mut there_and_back = traj.velocities[..cfg.steps].to_vec();
        there_and_back.extend(traj.velocities[1..].iter().rev().map(|v| v.scaled(-1.0)));
        there_and_back.push(VectorField::zeros(grid));
        let phis = integrate_flow(&there_and_back, cfg.dt()).unwrap();
        let residual = phis.last().unwrap().displacement().max_abs();
        assert!(residual < 0.5 * amp * cfg.dt(), "amp {amp}: residual {residual}");
    }
}

#[test]
fn circle_registration_shrinks_mismatch_without_folding() {
    let grid = Grid::square(64).unwrap();
    let source = render_disk(grid, [32.0, 32.0], 8.0);
    let target = render_disk(grid, [32.0, 32.0], 12.0);
    let prob = RegistrationProblem::new(source.clone(), target.clone(), 0.03, ShootingConfig::default()).unwrap();
    let res = register_optimize(&prob, &OptimizeOptions::default()).unwrap();
    let phi = res.trajectory.final_transform();
    let before = ssd(&source, &target).unwrap();
    let after = ssd(&warp(&source, phi).unwrap(), &target).unwrap();
    assert!(after <= 0.2 * before, "{after} vs {before}");
    assert!(det_jacobian(phi).values().iter().all(|&d| d > 0.0));
}
