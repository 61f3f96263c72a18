//! Edge and covariate selection from a fitted variational state, and the
//! point estimates reported alongside them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{se_kernel, stable_inverse_solve, KernelParams};
use crate::model::ModelConfig;
use crate::vi::{ElboTrace, Problem, VariationalState};

/// Inclusion-probability cutoffs; selection requires strictly exceeding them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub edge: f64,
    pub covariate: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            edge: 0.5,
            covariate: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("edge", self.edge), ("covariate", self.covariate)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::OutOfRange(format!("{name} threshold must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// `[g][j]`: `gamma_delta > threshold`.
pub fn select_edges(state: &VariationalState, threshold: f64) -> Vec<Vec<bool>> {
    state
        .groups
        .iter()
        .map(|g| g.edges.iter().map(|e| e.gamma_delta > threshold).collect())
        .collect()
}

/// `[g][j][p]`: `gamma_phi > threshold`, regardless of the edge's own
/// selection.
pub fn select_covariates(state: &VariationalState, threshold: f64) -> Vec<Vec<Vec<bool>>> {
    state
        .groups
        .iter()
        .map(|g| {
            g.edges
                .iter()
                .map(|e| e.covariates.iter().map(|c| c.gamma_phi > threshold).collect())
                .collect()
        })
        .collect()
}

/// Estimated group function at each member of the group, in member order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFunctionEstimate {
    pub values: Vec<f64>,
    /// Set when the edge is not selected; `values` are then all zero.
    pub unselected: bool,
}

/// `u_mu + sum_p gamma_phi omega phi_mean` over the `n` members of group `g`.
pub fn estimate_group_function(
    state: &VariationalState,
    g: usize,
    j: usize,
    n: usize,
    edge_threshold: f64,
) -> GroupFunctionEstimate {
    let edge = &state.groups[g].edges[j];
    if edge.gamma_delta <= edge_threshold {
        return GroupFunctionEstimate {
            values: vec![0.0; n],
            unselected: true,
        };
    }
    let mut values = vec![edge.u_mu; n];
    for c in &edge.covariates {
        let w = c.gamma_phi * c.omega;
        for (v, m) in values.iter_mut().zip(c.phi_mean.iter()) {
            *v += w * m;
        }
    }
    GroupFunctionEstimate {
        values,
        unselected: false,
    }
}

/// `[s][j]`: posterior mean subject-level coefficients.
pub fn estimate_subject_strengths(state: &VariationalState) -> Vec<Vec<f64>> {
    state.subjects.iter().map(|s| s.beta_mean.iter().copied().collect()).collect()
}

/// Covariate `p`'s contribution `gamma_phi omega phi(m)` to edge `(g, j)` at
/// arbitrary points, through the GP interpolant `k(m, grid) K^{-1} phi_mean`.
pub fn interpolate_covariate_effect(
    problem: &Problem,
    state: &VariationalState,
    g: usize,
    j: usize,
    p: usize,
    points: &[f64],
) -> Result<Vec<f64>> {
    let cfg = &problem.config;
    let layout = problem
        .groups
        .get(g)
        .ok_or_else(|| Error::OutOfRange(format!("group {} does not exist", g + 1)))?;
    let cov = state
        .groups
        .get(g)
        .and_then(|gf| gf.edges.get(j))
        .and_then(|e| e.covariates.get(p))
        .ok_or_else(|| Error::OutOfRange(format!("no covariate block ({}, {}, {})", g + 1, j + 1, p + 1)))?;
    let kernel = KernelParams::new(cfg.kernel_lengthscale, cfg.kernel_variance, 0.0)?;
    let alpha = stable_inverse_solve(&layout.grams[p], &DMatrix::from_column_slice(cov.phi_mean.len(), 1, cov.phi_mean.as_slice()))?;
    let grid = &layout.grids[p];
    let scale = cov.gamma_phi * cov.omega;
    Ok(points
        .iter()
        .map(|&x| {
            let k = DVector::from_iterator(grid.len(), grid.iter().map(|&y| se_kernel(x, y, &kernel)));
            scale * k.dot(&alpha.column(0))
        })
        .collect())
}

/// Selections and estimates of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub thresholds: Thresholds,
    /// `[g][j]`.
    pub gamma_delta: Vec<Vec<f64>>,
    /// `[g][j][p]`, raw.
    pub gamma_phi: Vec<Vec<Vec<f64>>>,
    /// `[g][j][p]`, raw.
    pub omega: Vec<Vec<Vec<f64>>>,
    pub edges: Vec<Vec<bool>>,
    /// `[g][j][p]`, only ever true on selected edges.
    pub covariate_effects: Vec<Vec<Vec<bool>>>,
    /// `[g][j]`, over the group's members; zero on unselected edges.
    pub group_functions: Vec<Vec<Vec<f64>>>,
    /// `[s][j]`, in `subject_ids` order.
    pub subject_strengths: Vec<Vec<f64>>,
    pub subject_ids: Vec<usize>,
    /// Subject ids per group, the order of `group_functions`.
    pub members: Vec<Vec<usize>>,
    pub elbo: ElboTrace,
    pub config: ModelConfig,
}

impl FitResult {
    pub fn new(problem: &Problem, state: &VariationalState, elbo: ElboTrace, thresholds: Thresholds) -> Result<Self> {
        thresholds.validate()?;
        let edges = select_edges(state, thresholds.edge);
        let mut covariate_effects = select_covariates(state, thresholds.covariate);
        for (sel_g, cov_g) in edges.iter().zip(covariate_effects.iter_mut()) {
            for (&sel, cov) in sel_g.iter().zip(cov_g.iter_mut()) {
                if !sel {
                    cov.iter_mut().for_each(|c| *c = false);
                }
            }
        }
        let group_functions = (0..state.groups.len())
            .map(|g| {
                let n = problem.groups[g].size();
                (0..problem.n_coefficients())
                    .map(|j| estimate_group_function(state, g, j, n, thresholds.edge).values)
                    .collect()
            })
            .collect();
        let per_cov = |f: &dyn Fn(&crate::vi::CovariateFactor) -> f64| -> Vec<Vec<Vec<f64>>> {
            state
                .groups
                .iter()
                .map(|g| g.edges.iter().map(|e| e.covariates.iter().map(f).collect()).collect())
                .collect()
        };
        Ok(Self {
            thresholds,
            gamma_delta: state.groups.iter().map(|g| g.edges.iter().map(|e| e.gamma_delta).collect()).collect(),
            gamma_phi: per_cov(&|c| c.gamma_phi),
            omega: per_cov(&|c| c.omega),
            edges,
            covariate_effects,
            group_functions,
            subject_strengths: estimate_subject_strengths(state),
            subject_ids: problem.subjects.iter().map(|s| s.subject_id).collect(),
            members: problem
                .groups
                .iter()
                .map(|l| l.members.iter().map(|&s| problem.subjects[s].subject_id).collect())
                .collect(),
            elbo,
            config: problem.config.clone(),
        })
    }
}
