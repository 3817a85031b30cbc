//! Segmentation overlap, boundary distance, Jacobian-determinant statistics
//! and error curves along a trajectory.

use serde::{Deserialize, Serialize};

use crate::epdiff::Trajectory;
use crate::error::{Error, Result};
use crate::field::{det_jacobian, Grid, ScalarField, Transform};

/// Integer label per node, 0 being background.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    grid: Grid,
    labels: Vec<u32>,
}

impl LabelMask {
    pub fn new(grid: Grid, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::Shape(format!(
                "{} labels for a grid of {} nodes",
                labels.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, labels })
    }

    /// Label 1 where `f > threshold`.
    pub fn threshold(f: &ScalarField, threshold: f64) -> Self {
        let labels = f.values().iter().map(|&v| u32::from(v > threshold)).collect();
        Self { grid: *f.grid(), labels }
    }

    /// Labels rounded from a scalar field (as stored on disk).
    pub fn from_field(f: &ScalarField) -> Result<Self> {
        let labels = f
            .values()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v <= u32::MAX as f64 {
                    Ok(v.round() as u32)
                } else {
                    Err(Error::InvalidArgument(format!("label value {v} is not a non-negative integer")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { grid: *f.grid(), labels })
    }

    pub fn to_field(&self) -> ScalarField {
        ScalarField::new(self.grid, self.labels.iter().map(|&l| l as f64).collect())
            .expect("labels are finite")
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Distinct nonzero labels in increasing order.
    pub fn structures(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Nodes carrying `label` with at least one face neighbour that differs;
    /// neighbours outside the grid count as different.
    pub fn boundary(&self, label: u32) -> Vec<[usize; 3]> {
        let dims = self.grid.dims3();
        let ndim = self.grid.ndim();
        let mut out = Vec::new();
        for idx in 0..self.grid.len() {
            if self.labels[idx] != label {
                continue;
            }
            let c = self.grid.coords(idx);
            let on_edge = (0..ndim).any(|a| {
                if c[a] == 0 || c[a] + 1 == dims[a] {
                    return true;
                }
                let mut lo = c;
                lo[a] -= 1;
                let mut hi = c;
                hi[a] += 1;
                self.labels[self.grid.index(lo)] != label || self.labels[self.grid.index(hi)] != label
            });
            if on_edge {
                out.push(c);
            }
        }
        out
    }
}

/// `2 |A ∩ B| / (|A| + |B|)` for one label; 1 when both sets are empty.
pub fn dice(a: &LabelMask, b: &LabelMask, label: u32) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        let (ia, ib) = (x == label, y == label);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

fn directed(from: &[[usize; 3]], to: &[[usize; 3]]) -> f64 {
    let mut worst = 0.0f64;
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let d2: f64 = (0..3).map(|a| (p[a] as f64 - q[a] as f64).powi(2)).sum();
            if d2 < best {
                best = d2;
                if best == 0.0 {
                    break;
                }
            }
        }
        worst = worst.max(best);
    }
    worst.sqrt()
}

/// Symmetric Hausdorff distance between the label boundaries, in grid cells,
/// without periodic wrap.
pub fn hausdorff(a: &LabelMask, b: &LabelMask, label: u32) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    let x = a.boundary(label);
    let y = b.boundary(label);
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyBoundary { label });
    }
    Ok(directed(&x, &y).max(directed(&y, &x)))
}

/// Nearest-node label lookup at `x + u(x)`; exact half-cell ties go to the
/// lower index.
pub fn warp_labels(m: &LabelMask, phi: &Transform) -> Result<LabelMask> {
    m.grid.check_same(phi.grid())?;
    let grid = m.grid;
    let dims = grid.dims3();
    let h = grid.spacing3();
    let labels = (0..grid.len())
        .map(|i| {
            let p = phi.map_node(i);
            let mut c = [0usize; 3];
            for a in 0..grid.ndim() {
                let q = (p[a] / h[a] - 0.5).ceil() as i64;
                c[a] = q.rem_euclid(dims[a] as i64) as usize;
            }
            m.labels[grid.index(c)]
        })
        .collect();
    Ok(LabelMask { grid, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetJacReport {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub neg_count: usize,
}

pub fn detjac_report(phi: &Transform) -> DetJacReport {
    let det = det_jacobian(phi);
    let v = det.values();
    DetJacReport {
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        neg_count: v.iter().filter(|&&x| x < 0.0).count(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub t: usize,
    pub image: f64,
    pub transform: f64,
    pub velocity: f64,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Per-step mean squared errors of images, displacements and velocities.
pub fn trajectory_mse(
    pred: &Trajectory,
    pred_images: &[ScalarField],
    reference: &Trajectory,
    ref_images: &[ScalarField],
) -> Result<Vec<MseRow>> {
    let len = pred.velocities.len();
    let lens = [
        pred.transforms.len(),
        pred_images.len(),
        reference.velocities.len(),
        reference.transforms.len(),
        ref_images.len(),
    ];
    if lens.iter().any(|&l| l != len) {
        return Err(Error::Shape(format!("trajectory lengths differ: {len} vs {lens:?}")));
    }
    (0..len)
        .map(|t| {
            pred.velocities[t].grid().check_same(reference.velocities[t].grid())?;
            pred_images[t].grid().check_same(ref_images[t].grid())?;
            Ok(MseRow {
                t,
                image: mse(pred_images[t].values(), ref_images[t].values()),
                transform: mse(
                    pred.transforms[t].displacement().data(),
                    reference.transforms[t].displacement().data(),
                ),
                velocity: mse(pred.velocities[t].data(), reference.velocities[t].data()),
            })
        })
        .collect()
}
