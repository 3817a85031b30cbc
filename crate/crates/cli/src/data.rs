use geoflow_core::data_io::manifest::write_dataset;
use geoflow_core::data_io::Family;
use serde::Serialize;

use crate::args::MakeDataArgs;
use crate::error::{invalid, CliError, Result};
use crate::output::prepare_dir;

#[derive(Serialize)]
struct MakeDataEcho<'a> {
    families: &'a [Family],
    n: usize,
    dims: usize,
    seed: u64,
}

pub fn make_data(args: &MakeDataArgs, threads: usize) -> Result<()> {
    let families = Family::parse_list(&args.family).map_err(|e| CliError::from(e).for_flag("--family"))?;
    if args.n == 0 {
        return Err(invalid("--n must be >= 1"));
    }
    if args.dims < 16 {
        return Err(invalid(format!("--dims must be at least 16, got {}", args.dims)));
    }
    prepare_dir(&args.out, "make-data", threads, &MakeDataEcho { families: &families, n: args.n, dims: args.dims, seed: args.seed })?;
    let manifest = write_dataset(&args.out, &families, args.n, args.dims, args.seed)?;
    log::info!("wrote {} pairs to {}", manifest.entries.len(), args.out.display());
    Ok(())
}
