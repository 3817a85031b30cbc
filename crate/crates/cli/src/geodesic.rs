use geoflow_core::data_io::{read_scalar, read_vector, write_scalar, write_vector};
use geoflow_core::epdiff::{kinetic_energy, shoot_with};
use geoflow_core::field::warp;
use geoflow_core::lddmm::{register_optimize, OptimizeOptions, RegistrationProblem};
use serde::Serialize;

use crate::args::{RegisterArgs, ShootArgs};
use crate::error::{require_file, CliError, Result};
use crate::output::{prepare_dir, write_csv, write_trajectory};

#[derive(Serialize)]
struct ShootEcho<'a> {
    v0: &'a std::path::Path,
    shooting: geoflow_core::epdiff::ShootingConfig,
}

pub fn shoot(args: &ShootArgs, threads: usize) -> Result<()> {
    require_file("--v0", &args.v0)?;
    let shooting = args.metric.shooting();
    shooting.validate()?;
    let v0 = read_vector(&args.v0).map_err(|e| CliError::from(e).for_flag("--v0"))?;
    let metric = shooting.multiplier(*v0.grid())?;
    prepare_dir(&args.out_dir, "shoot", threads, &ShootEcho { v0: &args.v0, shooting })?;

    let traj = shoot_with(&v0, &shooting, &metric)?;
    write_trajectory(&args.out_dir, &traj)?;
    let dt = shooting.dt();
    let rows = traj
        .velocities
        .iter()
        .enumerate()
        .map(|(t, v)| Ok(format!("{t},{},{}", t as f64 * dt, kinetic_energy(v, &metric)?)))
        .collect::<Result<Vec<_>>>()?;
    write_csv(&args.out_dir.join("energy.csv"), "step,t,energy", rows)?;
    log::info!("wrote {} steps to {}", traj.len(), args.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct RegisterEcho<'a> {
    source: &'a std::path::Path,
    target: &'a std::path::Path,
    lambda: f64,
    shooting: geoflow_core::epdiff::ShootingConfig,
    optimizer: OptimizeOptions,
}

pub fn register(args: &RegisterArgs, threads: usize) -> Result<()> {
    require_file("--source", &args.source)?;
    require_file("--target", &args.target)?;
    let shooting = args.metric.shooting();
    shooting.validate()?;
    let source = read_scalar(&args.source).map_err(|e| CliError::from(e).for_flag("--source"))?;
    let target = read_scalar(&args.target).map_err(|e| CliError::from(e).for_flag("--target"))?;
    let mut opts = OptimizeOptions { iters: args.iters, method: args.optimizer, ..Default::default() };
    if let Some(lr) = args.lr {
        opts.lr = lr;
    }
    if opts.iters == 0 {
        return Err(CliError::Invalid("--iters must be >= 1".into()));
    }
    if !(opts.lr.is_finite() && opts.lr > 0.0) {
        return Err(CliError::Invalid(format!("--lr must be positive, got {}", opts.lr)));
    }
    let problem = RegistrationProblem::new(source, target, args.lambda, shooting)?;
    prepare_dir(
        &args.out_dir,
        "register",
        threads,
        &RegisterEcho { source: &args.source, target: &args.target, lambda: args.lambda, shooting, optimizer: opts },
    )?;

    let res = register_optimize(&problem, &opts)?;
    write_vector(&args.out_dir.join("v0.gfld"), &res.v0)?;
    write_trajectory(&args.out_dir, &res.trajectory)?;
    write_scalar(&args.out_dir.join("deformed.gfld"), &warp(&problem.source, res.trajectory.final_transform())?)?;
    let rows = res
        .history
        .iter()
        .enumerate()
        .map(|(i, e)| format!("{i},{},{},{}", e.regularity, e.matching, e.total()));
    write_csv(&args.out_dir.join("energy.csv"), "iter,regularity,matching,energy", rows)?;
    log::info!(
        "energy {} -> {} after {} accepted steps ({:?})",
        res.history[0].total(),
        res.history.last().expect("nonempty").total(),
        res.history.len() - 1,
        res.status
    );
    Ok(())
}
