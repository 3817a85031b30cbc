//! Field files, synthetic shape datasets, manifests and image export.

pub mod export;
pub mod gfld;
pub mod manifest;
pub mod synth;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

pub use export::{export_grid, export_image};
pub use gfld::{read_field, read_scalar, read_vector, write_field, write_scalar, write_vector};
pub use manifest::{Entry, Manifest, Split};
pub use synth::{gen_circles, gen_shapes, Family, Sample};

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.{}.tmp", std::process::id()))
}
