//! How closely a model's decoded rollout follows the EPDiff geodesic shot
//! from its own initial velocity.

use geoflow_core::epdiff::{deform_along, shoot_with, Trajectory};
use geoflow_core::metrics::trajectory_mse;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GdnError, Result};
use crate::model::Gdn;
use crate::training::TrainingPair;

/// Per-step errors averaged over pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub t: usize,
    /// Mean squared difference of predicted and shot velocities, per entry.
    pub velocity_mse: f64,
    /// Mean squared shot velocity, per entry.
    pub oracle_mean_sq: f64,
    /// Mean squared difference of the source deformed along both paths.
    pub image_mse: f64,
    pub transform_mse: f64,
}

impl TrackingRow {
    pub fn relative_velocity_error(&self) -> f64 {
        self.velocity_mse / self.oracle_mean_sq
    }
}

/// Rows for `t = 0..tau`. Pairs whose shot diverges are left out; the
/// count of pairs used is returned alongside.
pub fn geodesic_tracking(model: &Gdn, pairs: &[TrainingPair]) -> Result<(Vec<TrackingRow>, usize)> {
    let shooting = model.config().shooting;
    let per_pair: Vec<Result<Option<Vec<TrackingRow>>>> = pairs
        .par_iter()
        .map(|p| {
            let pred = model.predict(&p.source, &p.target)?;
            let reference: Trajectory = match shoot_with(&pred.trajectory.velocities[0], &shooting, model.context().metric()) {
                Ok(t) => t,
                Err(geoflow_core::Error::BlowUp { .. }) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let pred_images = deform_along(&p.source, &pred.trajectory)?;
            let ref_images = deform_along(&p.source, &reference)?;
            let rows = trajectory_mse(&pred.trajectory, &pred_images, &reference, &ref_images)?;
            Ok(Some(
                rows.iter()
                    .zip(&reference.velocities)
                    .map(|(r, v)| TrackingRow {
                        t: r.t,
                        velocity_mse: r.velocity,
                        oracle_mean_sq: v.norm_sq() / v.data().len() as f64,
                        image_mse: r.image,
                        transform_mse: r.transform,
                    })
                    .collect(),
            ))
        })
        .collect();
    let mut acc: Vec<TrackingRow> = (0..=shooting.steps)
        .map(|t| TrackingRow { t, velocity_mse: 0.0, oracle_mean_sq: 0.0, image_mse: 0.0, transform_mse: 0.0 })
        .collect();
    let mut used = 0;
    for r in per_pair {
        if let Some(rows) = r? {
            for (a, b) in acc.iter_mut().zip(&rows) {
                a.velocity_mse += b.velocity_mse;
                a.oracle_mean_sq += b.oracle_mean_sq;
                a.image_mse += b.image_mse;
                a.transform_mse += b.transform_mse;
            }
            used += 1;
        }
    }
    if used == 0 {
        return Err(GdnError::EmptyDataset("no pair produced a finite reference geodesic".into()));
    }
    let inv = 1.0 / used as f64;
    for a in &mut acc {
        a.velocity_mse *= inv;
        a.oracle_mean_sq *= inv;
        a.image_mse *= inv;
        a.transform_mse *= inv;
    }
    Ok((acc, used))
}
