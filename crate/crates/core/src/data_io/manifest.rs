//! Versioned JSON dataset manifests. Entry paths are relative to the
//! manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::metrics::LabelMask;

use super::atomic_write;
use super::gfld::{read_scalar, write_scalar};
use super::synth::{gen_mixture, Family, Sample};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub source: PathBuf,
    pub target: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_labels: Option<PathBuf>,
    pub family: Family,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub entries: Vec<Entry>,
}

/// Loaded images and masks of one entry.
#[derive(Debug, Clone)]
pub struct LoadedPair {
    pub source: ScalarField,
    pub target: ScalarField,
    pub source_labels: Option<LabelMask>,
    pub target_labels: Option<LabelMask>,
    pub family: Family,
}

impl Manifest {
    /// Checks version and split semantics: OOD entries hold only held-out
    /// families and every other split only training families.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion { found: self.version, expected: MANIFEST_VERSION });
        }
        for (i, e) in self.entries.iter().enumerate() {
            let ood = e.split == Split::Ood;
            if ood != e.family.is_ood() {
                return Err(Error::Manifest(format!(
                    "entry {i}: family `{}` cannot be in split {:?}",
                    e.family, e.split
                )));
            }
        }
        Ok(())
    }

    /// Parses, validates, and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &m.entries {
            let files = [Some(&e.source), Some(&e.target), e.source_labels.as_ref(), e.target_labels.as_ref()];
            for f in files.into_iter().flatten() {
                if !base.join(f).is_file() {
                    return Err(Error::Manifest(format!("missing file {}", base.join(f).display())));
                }
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load_entry(&self, base: &Path, e: &Entry) -> Result<LoadedPair> {
        let labels = |p: &Option<PathBuf>| -> Result<Option<LabelMask>> {
            p.as_ref().map(|p| LabelMask::from_field(&read_scalar(&base.join(p))?)).transpose()
        };
        Ok(LoadedPair {
            source: read_scalar(&base.join(&e.source))?,
            target: read_scalar(&base.join(&e.target))?,
            source_labels: labels(&e.source_labels)?,
            target_labels: labels(&e.target_labels)?,
            family: e.family,
        })
    }
}

/// Split assignment for position `i` of `n` training-family samples.
fn id_split(i: usize, n: usize) -> Split {
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = (0.15 * n as f64).round() as usize;
    if i < n_train {
        Split::Train
    } else if i < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Generates `n` pairs cycling through `families`, writes them under `dir`
/// together with `manifest.json`, and returns the manifest.
pub fn write_dataset(dir: &Path, families: &[Family], n: usize, dims: usize, seed: u64) -> Result<Manifest> {
    let samples = gen_mixture(families, n, dims, seed)?;
    fs::create_dir_all(dir)?;
    let n_id = samples.iter().filter(|s| !s.family.is_ood()).count();
    let mut id_seen = 0;
    let mut entries = Vec::with_capacity(n);
    for (i, s) in samples.iter().enumerate() {
        let split = if s.family.is_ood() {
            Split::Ood
        } else {
            id_seen += 1;
            id_split(id_seen - 1, n_id)
        };
        entries.push(write_sample(dir, i, s, split)?);
    }
    let m = Manifest { version: MANIFEST_VERSION, dims: vec![dims, dims], seed, entries };
    m.save(&dir.join("manifest.json"))?;
    Ok(m)
}

fn write_sample(dir: &Path, i: usize, s: &Sample, split: Split) -> Result<Entry> {
    let name = |kind: &str| PathBuf::from(format!("{:05}_{}_{kind}.gfld", i, s.family));
    let e = Entry {
        source: name("source"),
        target: name("target"),
        source_labels: Some(name("source_labels")),
        target_labels: Some(name("target_labels")),
        family: s.family,
        split,
    };
    write_scalar(&dir.join(&e.source), &s.source)?;
    write_scalar(&dir.join(&e.target), &s.target)?;
    write_scalar(&dir.join(e.source_labels.as_ref().expect("set")), &s.source_labels.to_field())?;
    write_scalar(&dir.join(e.target_labels.as_ref().expect("set")), &s.target_labels.to_field())?;
    Ok(e)
}
