//! Coordinate-ascent variational inference for the varying-effects VAR model.

mod elbo;
mod problem;
mod schedule;
mod state;
mod updates;

pub use elbo::{compute_elbo, elbo_breakdown, ElboBreakdown};
pub use problem::{GroupLayout, Problem, SubjectStats};
pub use schedule::{cold_start_order, order_by_importance, prioritized_schedule, UpdateSchedule};
pub use state::{
    init_state, CovariateFactor, EdgeFactor, GroupFactor, InvGamma, SubjectFactor, VariationalState,
};
pub use updates::{
    cavi_sweep, single, update_betas, update_block, update_edges, update_sigma0, update_sigma1,
    update_xi, Block,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_sweeps: usize,
    /// Relative ELBO change below which a sweep counts as converged.
    pub tol: f64,
    /// Consecutive converged sweeps required to stop.
    pub patience: usize,
    /// Largest tolerated relative ELBO decrease per sweep.
    pub monotone_tol: f64,
    pub cold_start_sweeps: usize,
    /// Leading sweeps with every `q(delta)` held at its prior value.
    pub delta_warmup_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 5000,
            tol: 1e-8,
            patience: 3,
            monotone_tol: 1e-6,
            cold_start_sweeps: 25,
            delta_warmup_sweeps: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboTrace {
    /// Bound after each sweep.
    pub values: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

impl ElboTrace {
    /// Largest relative decrease between consecutive sweeps (0 if none).
    pub fn worst_decrease(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs())
            .fold(0.0, f64::max)
    }
}

/// Runs CAVI from the standard initialization until the relative change of
/// the bound stays below `tol` for `patience` sweeps, or `max_sweeps`.
///
/// The first `delta_warmup_sweeps` sweeps leave the edge inclusion
/// probabilities at their prior value so that the slab variance is learned
/// before any edge is switched off; they count towards `max_sweeps` but not
/// towards convergence.
///
/// A sweep that lowers the bound by more than `monotone_tol` (relative)
/// aborts the fit.
pub fn fit(
    problem: &Problem,
    schedule: &UpdateSchedule,
    options: &FitOptions,
) -> Result<(VariationalState, ElboTrace)> {
    if !schedule.is_valid(problem.config.p) || schedule.covariate_order.len() != problem.config.g {
        return Err(Error::InvalidInput("update schedule does not match the model".into()));
    }
    let mut state = init_state(problem)?;
    let frozen = UpdateSchedule {
        freeze_delta: true,
        ..schedule.clone()
    };
    let mut values = Vec::new();
    let mut prev = compute_elbo(problem, &state)?;
    let mut quiet = 0;
    let mut converged = false;
    for sweep in 0..options.max_sweeps {
        let warm = sweep < options.delta_warmup_sweeps;
        cavi_sweep(problem, &mut state, if warm { &frozen } else { schedule }, None)?;
        let now = compute_elbo(problem, &state)?;
        values.push(now);
        if now < prev - options.monotone_tol * prev.abs() {
            return Err(Error::ElboDecrease {
                block: format!("sweep {}", sweep + 1),
                before: prev,
                after: now,
            });
        }
        if !warm && ((now - prev) / prev.abs()).abs() < options.tol {
            quiet += 1;
            if quiet >= options.patience {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
        prev = now;
    }
    if !converged {
        log::warn!("no convergence after {} sweeps", values.len());
    }
    let sweeps = values.len();
    Ok((
        state,
        ElboTrace {
            values,
            converged,
            sweeps,
        },
    ))
}

/// Prioritized schedule from cold starts, then the main fit.
pub fn fit_prioritized(
    problem: &Problem,
    options: &FitOptions,
) -> Result<(VariationalState, ElboTrace, UpdateSchedule)> {
    let schedule = prioritized_schedule(problem, options.cold_start_sweeps, options.delta_warmup_sweeps)?;
    let (state, trace) = fit(problem, &schedule, options)?;
    Ok((state, trace, schedule))
}
