use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec;
use crate::vi::problem::Problem;
use crate::vi::state::init_state;
use crate::vi::updates::cavi_sweep;

/// Order in which each edge's covariate blocks are visited within a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateSchedule {
    /// `[g][j]` is a permutation of `0..P`.
    pub covariate_order: Vec<Vec<Vec<usize>>>,
    pub n_cold_starts: usize,
    pub cold_start_sweeps: usize,
    /// Holds every `q(delta)` at its current value.
    #[serde(default)]
    pub freeze_delta: bool,
}

impl UpdateSchedule {
    /// Covariates in index order for every edge; no cold starts.
    pub fn ascending(problem: &Problem) -> Self {
        Self::uniform(problem, (0..problem.config.p).collect())
    }

    fn uniform(problem: &Problem, order: Vec<usize>) -> Self {
        let jn = problem.n_coefficients();
        Self {
            covariate_order: vec![vec![order; jn]; problem.config.g],
            n_cold_starts: 0,
            cold_start_sweeps: 0,
            freeze_delta: false,
        }
    }

    pub fn is_valid(&self, p: usize) -> bool {
        self.covariate_order.iter().flatten().all(|order| {
            let mut seen = vec![false; p];
            order.len() == p
                && order.iter().all(|&q| q < p && !std::mem::replace(&mut seen[q], true))
        })
    }
}

/// Order used by cold start `run` of `2P`: covariate `run` first for
/// `run < P`, covariate `run - P` last otherwise; the rest ascending.
pub fn cold_start_order(p: usize, run: usize) -> Vec<usize> {
    let pinned = run % p;
    let rest = (0..p).filter(|&q| q != pinned);
    if run < p {
        std::iter::once(pinned).chain(rest).collect()
    } else {
        rest.chain(std::iter::once(pinned)).collect()
    }
}

/// Sorts covariates by descending importance, ties by ascending index.
pub fn order_by_importance(importance: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importance.len()).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    order
}

/// Runs `2P` short fits from a cold start, each giving one covariate the
/// first and then the last position, and orders each edge's covariates by
/// their mean inclusion probability across the runs. The first
/// `delta_warmup` sweeps of each run hold `q(delta)` fixed, as in the main fit.
pub fn prioritized_schedule(
    problem: &Problem,
    cold_start_sweeps: usize,
    delta_warmup: usize,
) -> Result<UpdateSchedule> {
    let cfg = &problem.config;
    let p = cfg.p;
    if !problem.uses_covariates() {
        return Ok(UpdateSchedule::ascending(problem));
    }
    let runs = 2 * p;
    let outcomes = exec::map(problem.exec, runs, |run| -> Result<Vec<Vec<Vec<f64>>>> {
        let schedule = UpdateSchedule::uniform(problem, cold_start_order(p, run));
        let mut state = init_state(problem)?;
        let frozen = UpdateSchedule {
            freeze_delta: true,
            ..schedule.clone()
        };
        for sweep in 0..cold_start_sweeps {
            cavi_sweep(problem, &mut state, if sweep < delta_warmup { &frozen } else { &schedule }, None)?;
        }
        Ok(state
            .groups
            .iter()
            .map(|g| {
                g.edges
                    .iter()
                    .map(|e| e.covariates.iter().map(|c| c.gamma_phi).collect())
                    .collect()
            })
            .collect())
    });

    let jn = problem.n_coefficients();
    let mut importance = vec![vec![vec![0.0; p]; jn]; cfg.g];
    for outcome in outcomes {
        let outcome = outcome?;
        for (g, edges) in outcome.into_iter().enumerate() {
            for (j, gammas) in edges.into_iter().enumerate() {
                for (q, v) in gammas.into_iter().enumerate() {
                    importance[g][j][q] += v / runs as f64;
                }
            }
        }
    }
    Ok(UpdateSchedule {
        covariate_order: importance
            .iter()
            .map(|edges| edges.iter().map(|imp| order_by_importance(imp)).collect())
            .collect(),
        n_cold_starts: runs,
        cold_start_sweeps,
        freeze_delta: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cold_start_orders() {
        assert_eq!(cold_start_order(1, 0), vec![0]);
        assert_eq!(cold_start_order(1, 1), vec![0]);
        assert_eq!(cold_start_order(4, 2), vec![2, 0, 1, 3]);
        assert_eq!(cold_start_order(4, 5), vec![0, 2, 3, 1]);
    }

    #[test]
    fn importance_ties_break_by_index() {
        assert_eq!(order_by_importance(&[0.2, 0.9, 0.2, 0.5]), vec![1, 3, 0, 2]);
        assert_eq!(order_by_importance(&[0.1, 0.1, 0.1]), vec![0, 1, 2]);
    }
}
