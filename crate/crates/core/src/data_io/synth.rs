//! Seeded generators for antialiased shape images and their label masks.
//!
//! Shapes are rendered from a signed distance in cells through a 2-cell
//! smoothstep edge, so intensities lie in `[0, 1]` and the 0.5 level set is
//! the shape outline.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField};
use crate::metrics::LabelMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Circle,
    Blob,
    Triangle,
    Envelope,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Circle, Family::Blob, Family::Triangle, Family::Envelope];

    /// Families held out of training.
    pub fn is_ood(self) -> bool {
        matches!(self, Family::Triangle | Family::Envelope)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Circle => "circle",
            Family::Blob => "blob",
            Family::Triangle => "triangle",
            Family::Envelope => "envelope",
        }
    }

    fn tag(self) -> u64 {
        self as u64 + 1
    }

    /// Parses a comma-separated list; `id` and `ood` expand to their groups.
    pub fn parse_list(s: &str) -> Result<Vec<Family>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "id" => out.extend([Family::Circle, Family::Blob]),
                "ood" => out.extend([Family::Triangle, Family::Envelope]),
                _ => out.push(part.parse()?),
            }
        }
        if out.is_empty() {
            return Err(Error::UnknownFamily(s.to_string()));
        }
        Ok(out)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_end_matches('s') {
            "circle" => Ok(Family::Circle),
            "blob" => Ok(Family::Blob),
            "triangle" => Ok(Family::Triangle),
            "envelope" => Ok(Family::Envelope),
            _ => Err(Error::UnknownFamily(s.to_string())),
        }
    }
}

/// One registration pair with its label masks.
#[derive(Debug, Clone)]
pub struct Sample {
    pub family: Family,
    pub source: ScalarField,
    pub target: ScalarField,
    pub source_labels: LabelMask,
    pub target_labels: LabelMask,
}

/// Seed of sample `index` of `family` in a dataset seeded with `seed`.
pub fn sample_seed(seed: u64, family: Family, index: usize) -> u64 {
    let mut z = seed ^ family.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_dims(dims: usize) -> Result<Grid> {
    if dims < 16 {
        return Err(Error::InvalidArgument(format!("dims {dims} < 16")));
    }
    Grid::square(dims)
}

/// Renders `1 - smoothstep(-1, 1, sd)` from a signed distance in cells
/// (negative inside), sampled at node coordinates `(row, col)`.
pub fn render(grid: Grid, sd: impl Fn(f64, f64) -> f64) -> ScalarField {
    let [n0, n1, _] = grid.dims3();
    let mut values = Vec::with_capacity(n0 * n1);
    for i in 0..n0 {
        for j in 0..n1 {
            let t = ((sd(i as f64, j as f64) + 1.0) / 2.0).clamp(0.0, 1.0);
            values.push(1.0 - t * t * (3.0 - 2.0 * t));
        }
    }
    ScalarField::new(grid, values).expect("finite intensities")
}

pub fn render_disk(grid: Grid, center: [f64; 2], radius: f64) -> ScalarField {
    render(grid, |i, j| ((i - center[0]).powi(2) + (j - center[1]).powi(2)).sqrt() - radius)
}

fn circle(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let n = grid.dims()[0] as f64;
    let r = rng.gen_range(0.15..=0.35) * n;
    let c = [n / 2.0 + rng.gen_range(-0.1..=0.1) * n, n / 2.0 + rng.gen_range(-0.1..=0.1) * n];
    render_disk(grid, c, r)
}

fn blob(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let n = grid.dims()[0] as f64;
    let r0 = rng.gen_range(0.12..=0.22) * n;
    let c = [n / 2.0 + rng.gen_range(-0.1..=0.1) * n, n / 2.0 + rng.gen_range(-0.1..=0.1) * n];
    let harmonics: Vec<(f64, f64, f64)> = (2..=4)
        .map(|k| (k as f64, rng.gen_range(-0.25..=0.25), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    render(grid, |i, j| {
        let (di, dj) = (i - c[0], j - c[1]);
        let theta = dj.atan2(di);
        let r = r0 * (1.0 + harmonics.iter().map(|&(k, a, ph)| a * (k * theta + ph).cos()).sum::<f64>());
        (di * di + dj * dj).sqrt() - r
    })
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Minimum distance between the frame border and any triangle vertex.
pub const TRIANGLE_MARGIN: f64 = 2.0;

/// Random triangle vertices in cells, at least [`TRIANGLE_MARGIN`] away
/// from every border and with a non-degenerate area.
pub fn triangle_vertices(n: usize, rng: &mut ChaCha8Rng) -> [[f64; 2]; 3] {
    let lo = TRIANGLE_MARGIN.max(0.1 * n as f64);
    let hi = n as f64 - 1.0 - lo;
    loop {
        let v = [0, 1, 2].map(|_| [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)]);
        let area = 0.5 * cross(v[0], v[1], v[2]).abs();
        if area > 0.08 * (n * n) as f64 {
            return v;
        }
    }
}

fn triangle(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let v = triangle_vertices(grid.dims()[0], rng);
    let orient = cross(v[0], v[1], v[2]).signum();
    render(grid, |i, j| {
        let p = [i, j];
        let d = (0..3).map(|k| segment_distance(p, v[k], v[(k + 1) % 3])).fold(f64::INFINITY, f64::min);
        let inside = (0..3).all(|k| cross(v[k], v[(k + 1) % 3], p) * orient >= 0.0);
        if inside { -d } else { d }
    })
}

fn envelope(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    let n = grid.dims()[0] as f64;
    let h = rng.gen_range(0.35..=0.55) * n;
    let w = rng.gen_range(0.5..=0.75) * n;
    let c = [n / 2.0 + rng.gen_range(-0.08..=0.08) * n, n / 2.0 + rng.gen_range(-0.08..=0.08) * n];
    let half_stroke = rng.gen_range(0.9..=1.4);
    let (t, b, l, r) = (c[0] - h / 2.0, c[0] + h / 2.0, c[1] - w / 2.0, c[1] + w / 2.0);
    let corners = [[t, l], [t, r], [b, r], [b, l]];
    render(grid, |i, j| {
        let p = [i, j];
        let mut d = (0..4)
            .map(|k| segment_distance(p, corners[k], corners[(k + 1) % 4]))
            .fold(f64::INFINITY, f64::min);
        d = d.min(segment_distance(p, corners[0], corners[2]));
        d = d.min(segment_distance(p, corners[1], corners[3]));
        d - half_stroke
    })
}

fn draw(family: Family, grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    match family {
        Family::Circle => circle(grid, rng),
        Family::Blob => blob(grid, rng),
        Family::Triangle => triangle(grid, rng),
        Family::Envelope => envelope(grid, rng),
    }
}

/// The pair at position `index` of a dataset; source and target are drawn
/// independently.
pub fn generate_pair(family: Family, dims: usize, seed: u64, index: usize) -> Result<Sample> {
    let grid = check_dims(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, family, index));
    let source = draw(family, grid, &mut rng);
    let target = draw(family, grid, &mut rng);
    Ok(Sample {
        family,
        source_labels: LabelMask::threshold(&source, 0.5),
        target_labels: LabelMask::threshold(&target, 0.5),
        source,
        target,
    })
}

pub fn gen_circles(n: usize, dims: usize, seed: u64) -> Result<Vec<Sample>> {
    gen_shapes(Family::Circle, n, dims, seed)
}

pub fn gen_shapes(family: Family, n: usize, dims: usize, seed: u64) -> Result<Vec<Sample>> {
    (0..n).map(|i| generate_pair(family, dims, seed, i)).collect()
}

/// Round-robin mixture over `families`.
pub fn gen_mixture(families: &[Family], n: usize, dims: usize, seed: u64) -> Result<Vec<Sample>> {
    if families.is_empty() {
        return Err(Error::InvalidArgument("no families given".into()));
    }
    (0..n).map(|i| generate_pair(families[i % families.len()], dims, seed, i)).collect()
}
