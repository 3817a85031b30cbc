use std::fs;
use std::path::Path;

use geoflow_core::data_io::{atomic_write, write_scalar, write_vector};
use geoflow_core::epdiff::Trajectory;
use geoflow_core::field::det_jacobian;
use serde::Serialize;

use crate::error::Result;

/// Writes a header line and one line per row, atomically.
pub fn write_csv<I>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    atomic_write(path, s.as_bytes())?;
    Ok(())
}

#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    version: &'a str,
    subcommand: &'a str,
    threads: usize,
    config: &'a T,
}

/// Creates `dir` and writes the resolved settings of a run to `config.json`.
pub fn prepare_dir<T: Serialize>(dir: &Path, subcommand: &str, threads: usize, config: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    let echo = Echo { version: env!("CARGO_PKG_VERSION"), subcommand, threads, config };
    atomic_write(&dir.join("config.json"), serde_json::to_string_pretty(&echo)?.as_bytes())?;
    Ok(())
}

/// `v_TTT.gfld`, `phi_TTT.gfld` (displacement) and `detjac_TTT.gfld` for every step.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    for (t, (v, phi)) in traj.velocities.iter().zip(&traj.transforms).enumerate() {
        write_vector(&dir.join(format!("v_{t:03}.gfld")), v)?;
        write_vector(&dir.join(format!("phi_{t:03}.gfld")), phi.displacement())?;
        write_scalar(&dir.join(format!("detjac_{t:03}.gfld")), &det_jacobian(phi))?;
    }
    Ok(())
}
