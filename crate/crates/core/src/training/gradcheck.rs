use nalgebra::DMatrix;

use super::{bind_episode, episode_loss_frozen, frozen_projections, loss_and_gradients, ModelState, PreparedEpisode};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transition::{cell_name, N_CELLS};

/// Magnitude under which both gradients count as zero when forming the relative error.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Deliberate corruption of the analytic gradient, for exercising the checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Multiply the `lambda` gradient by this factor.
    ScaleLambda(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub tol: f64,
}

impl GradcheckReport {
    pub fn flagged(&self) -> Vec<&GradcheckEntry> {
        self.entries.iter().filter(|e| !(e.rel_error <= self.tol)).collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares analytic gradients with central differences for every bound pool row,
/// transition cell and `lambda`, with the projections frozen at the nominal parameters.
pub fn gradcheck<T: Scalar>(
    model: &ModelState<T>,
    episode: &PreparedEpisode<T>,
    assignment: &[usize],
    eps: f64,
    tol: f64,
) -> Result<GradcheckReport> {
    gradcheck_with(model, episode, assignment, eps, tol, None)
}

pub fn gradcheck_with<T: Scalar>(
    model: &ModelState<T>,
    episode: &PreparedEpisode<T>,
    assignment: &[usize],
    eps: f64,
    tol: f64,
    fault: Option<Fault>,
) -> Result<GradcheckReport> {
    if !(eps > 0.0) {
        return Err(Error::NonPositiveStep);
    }
    let frozen: Vec<Option<DMatrix<T>>> = frozen_projections(&bind_episode(model, episode, assignment)?);
    let (_, mut grads) = loss_and_gradients(model, episode, assignment)?;
    if let Some(Fault::ScaleLambda(f)) = fault {
        grads.lambda *= T::of(f);
    }
    let analytic = grads.flatten();
    let dim = model.dim();
    let pool_len = model.pool.len() * dim;

    let mut coords: Vec<(usize, String)> = Vec::new();
    for (j, &row) in assignment.iter().enumerate() {
        let label = episode.label_set.label(j).unwrap_or("?");
        for d in 0..dim {
            coords.push((row * dim + d, format!("pool[{row}][{d}] ({label})")));
        }
    }
    for c in 0..N_CELLS {
        coords.push((pool_len + c, format!("transition {}", cell_name(c))));
    }
    coords.push((pool_len + N_CELLS, "lambda".to_string()));

    let base = model.parameters();
    let mut probe = model.clone();
    let mut entries = Vec::with_capacity(coords.len());
    for (idx, name) in coords {
        let mut at = |delta: f64| -> Result<f64> {
            let mut p = base.clone();
            p[idx] += T::of(delta);
            probe.set_parameters(&p)?;
            Ok(episode_loss_frozen(&probe, episode, assignment, &frozen)?.as_f64())
        };
        let numeric = (at(eps)? - at(-eps)?) / (2.0 * eps);
        let a = analytic[idx].as_f64();
        entries.push(GradcheckEntry {
            name,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        });
    }
    Ok(GradcheckReport { entries, tol })
}
