//! Closed-form CAVI block updates.
//!
//! Every block is conditionally conjugate: Gaussian for `q(beta)`, `q(mu)`,
//! `q(phi)` and `q(w~ | s = 1)`, Bernoulli-logit for `q(s)` and `q(delta)`,
//! inverse-gamma for the variances. Each update sets its block to the exact
//! maximizer of the bound with everything else held fixed.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::exec;
use crate::kernel::SpectralGram;
use crate::model::ModelConfig;
use crate::vi::elbo::{self, group_moments, regime_loglik, slab_kl, slab_moments, GroupMoments};
use crate::vi::problem::Problem;
use crate::vi::schedule::UpdateSchedule;
use crate::vi::state::{EdgeFactor, InvGamma, SubjectFactor, VariationalState};

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Block families in sweep order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Beta,
    Edges,
    Sigma0,
    Sigma1,
    Xi,
}

impl Block {
    pub const SWEEP: [Block; 5] = [Block::Beta, Block::Edges, Block::Sigma0, Block::Sigma1, Block::Xi];

    pub fn name(self) -> &'static str {
        match self {
            Block::Beta => "q(beta)",
            Block::Edges => "q(phi), q(w,s), q(mu), q(delta)",
            Block::Sigma0 => "q(sigma0)",
            Block::Sigma1 => "q(sigma1)",
            Block::Xi => "q(xi)",
        }
    }
}

/// Read-only inputs for updating one edge's factors.
pub(crate) struct EdgeContext<'a> {
    pub cfg: &'a ModelConfig,
    pub spectra: &'a [SpectralGram],
    pub bmean: DVectorView<'a, f64>,
    pub bvar: DVectorView<'a, f64>,
    pub sigma0: InvGamma,
    pub sigma1: InvGamma,
    pub with_covariates: bool,
}

impl EdgeContext<'_> {
    fn n(&self) -> usize {
        self.bmean.len()
    }

    /// `E[f]` at each subject excluding covariate `p`'s term.
    fn residual_excluding(&self, edge: &EdgeFactor, fmean: &DVector<f64>, p: usize) -> DVector<f64> {
        let c = &edge.covariates[p];
        let e1 = c.w_mean();
        DVector::from_fn(self.n(), |s, _| self.bmean[s] - (fmean[s] - e1 * c.phi_mean[s]))
    }

    fn slab_mean(&self, edge: &EdgeFactor) -> DVector<f64> {
        let mut m = DVector::from_element(self.n(), edge.u_mu);
        if self.with_covariates {
            for c in &edge.covariates {
                let e1 = c.w_mean();
                if e1 != 0.0 {
                    m.axpy(e1, &c.phi_mean, 1.0);
                }
            }
        }
        m
    }

    /// `q(phi_p | s = 1)`: precision `K^{-1} + c1 E[w~^2] I`, mean
    /// `C c1 E[w~] r`.
    pub fn update_phi(&self, edge: &mut EdgeFactor, p: usize) {
        let fmean = self.slab_mean(edge);
        let resid = self.residual_excluding(edge, &fmean, p);
        let c1 = self.sigma1.mean_inv();
        let spec = &self.spectra[p];
        let cov = &mut edge.covariates[p];
        let tau = c1 * (cov.omega * cov.omega + cov.sigma_tilde);
        let d = spec.eigvals.map(|lam| lam / (1.0 + tau * lam));
        let z = spec.to_basis(&(resid * (c1 * cov.omega)));
        cov.phi_mean = spec.from_basis(&z.component_mul(&d));
        cov.phi_var = spec.diag_of(&d);
        cov.phi_spectrum = d;
    }

    /// `q(w~ | s = 1)`, followed by `q(s)`.
    pub fn update_w(&self, edge: &mut EdgeFactor, p: usize) {
        let fmean = self.slab_mean(edge);
        let resid = self.residual_excluding(edge, &fmean, p);
        let c1 = self.sigma1.mean_inv();
        let cov = &mut edge.covariates[p];
        let second = cov.phi_mean.norm_squared() + cov.phi_var.sum();
        cov.sigma_tilde = 1.0 / (1.0 / self.cfg.sigma2_w + c1 * second);
        cov.omega = cov.sigma_tilde * c1 * cov.phi_mean.dot(&resid);
        self.update_s(edge, p);
    }

    /// `q(s_p)`: log-odds of the expected fit under `s = 1` against `s = 0`,
    /// net of the KL cost of `q(w~ | s = 1)` and `q(phi | s = 1)`.
    pub fn update_s(&self, edge: &mut EdgeFactor, p: usize) {
        let fmean = self.slab_mean(edge);
        let resid = self.residual_excluding(edge, &fmean, p);
        let c1 = self.sigma1.mean_inv();
        let cfg = self.cfg;
        let cov = &mut edge.covariates[p];
        let second = cov.phi_mean.norm_squared() + cov.phi_var.sum();
        let fit = c1 * cov.omega * cov.phi_mean.dot(&resid)
            - 0.5 * c1 * (cov.omega * cov.omega + cov.sigma_tilde) * second;
        let kl = elbo::kl_normal(cov.omega, cov.sigma_tilde, cfg.sigma2_w) + elbo::kl_phi(&self.spectra[p], cov);
        cov.gamma_phi = sigmoid(logit(cfg.pi_phi) + fit - kl);
    }

    pub fn update_mu(&self, edge: &mut EdgeFactor) {
        let c1 = self.sigma1.mean_inv();
        let mut sum = 0.0;
        for s in 0..self.n() {
            let mut m = self.bmean[s];
            if self.with_covariates {
                for c in &edge.covariates {
                    m -= c.w_mean() * c.phi_mean[s];
                }
            }
            sum += m;
        }
        edge.v_mu = 1.0 / (1.0 / self.cfg.sigma2_mu + self.n() as f64 * c1);
        edge.u_mu = edge.v_mu * c1 * sum;
    }

    pub fn update_delta(&self, edge: &mut EdgeFactor) {
        let slab = slab_moments(edge, self.n(), self.with_covariates);
        let (ll1, ll0) = regime_loglik(self.bmean, self.bvar, &slab, &self.sigma0, &self.sigma1);
        let kl = slab_kl(self.cfg, self.spectra, edge, self.with_covariates);
        edge.gamma_delta = sigmoid(logit(self.cfg.pi_delta) + ll1 - kl - ll0);
    }

    /// All factors of the edge: for each covariate in `order`, `q(w~, s)`,
    /// `q(phi)` and `q(s)` again; then `q(mu)`, then `q(delta)`.
    pub fn update_edge(&self, edge: &mut EdgeFactor, order: &[usize], freeze_delta: bool) {
        if self.with_covariates {
            for &p in order {
                self.update_w(edge, p);
                self.update_phi(edge, p);
                self.update_s(edge, p);
            }
        }
        self.update_mu(edge);
        if !freeze_delta {
            self.update_delta(edge);
        }
    }
}

pub(crate) fn edge_context<'a>(
    problem: &'a Problem,
    state: &VariationalState,
    moments: &'a GroupMoments,
    g: usize,
    j: usize,
) -> EdgeContext<'a> {
    let group = &state.groups[g];
    EdgeContext {
        cfg: &problem.config,
        spectra: &problem.groups[g].spectra,
        bmean: moments.mean.column(j),
        bvar: moments.var.column(j),
        sigma0: group.sigma0,
        sigma1: group.sigma1,
        with_covariates: problem.uses_covariates(),
    }
}

/// `q(beta)` for every subject, target block by target block.
pub fn update_betas(problem: &Problem, state: &mut VariationalState) -> Result<()> {
    let rl = problem.block_len();
    let r = problem.config.r;
    let with_cov = problem.uses_covariates();

    // Per group: prior precision and prior-mean weight per coefficient, and
    // the slab mean at every member.
    let priors: Vec<(Vec<f64>, Vec<f64>, DMatrix<f64>)> = state
        .groups
        .iter()
        .enumerate()
        .map(|(g, group)| {
            let n = problem.groups[g].size();
            let (c1, c0) = (group.sigma1.mean_inv(), group.sigma0.mean_inv());
            let prec = group.edges.iter().map(|e| e.gamma_delta * c1 + (1.0 - e.gamma_delta) * c0).collect();
            let weight = group.edges.iter().map(|e| e.gamma_delta * c1).collect();
            let mut fmean = DMatrix::zeros(n, group.edges.len());
            for (j, e) in group.edges.iter().enumerate() {
                fmean.set_column(j, &slab_moments(e, n, with_cov).mean);
            }
            (prec, weight, fmean)
        })
        .collect();

    let groups = &state.groups;
    let updated: Vec<Result<SubjectFactor>> = exec::map(problem.exec, problem.subjects.len(), |s| {
        let st = &problem.subjects[s];
        let group = &groups[st.group];
        let (prec, weight, fmean) = &priors[st.group];
        let mut beta_mean = DVector::zeros(rl * r);
        let mut beta_cov = Vec::with_capacity(r);
        for t in 0..r {
            let cx = group.xi[t].mean_inv();
            let mut a = &st.utu * cx;
            let mut rhs = st.utx.column(t) * cx;
            for k in 0..rl {
                let j = t * rl + k;
                a[(k, k)] += prec[j];
                rhs[k] += weight[j] * fmean[(st.slot, j)];
            }
            let chol = a.cholesky().ok_or_else(|| Error::NumericalBreakdown {
                block: format!("q(beta) subject {} target {}", st.subject_id, t + 1),
                detail: "precision is not positive definite".into(),
            })?;
            let cov = chol.inverse();
            beta_mean.rows_mut(t * rl, rl).copy_from(&(&cov * rhs));
            beta_cov.push(cov);
        }
        Ok(SubjectFactor { beta_mean, beta_cov })
    });
    for (slot, u) in state.subjects.iter_mut().zip(updated) {
        *slot = u?;
    }
    Ok(())
}

/// All edge-level factors of every group, edges in flat-index order.
pub fn update_edges(problem: &Problem, state: &mut VariationalState, schedule: &UpdateSchedule) {
    for g in 0..state.groups.len() {
        let moments = group_moments(problem, state, g);
        let new_edges: Vec<EdgeFactor> = {
            let st = &*state;
            exec::map(problem.exec, st.groups[g].edges.len(), |j| {
                let ctx = edge_context(problem, st, &moments, g, j);
                let mut edge = st.groups[g].edges[j].clone();
                ctx.update_edge(&mut edge, &schedule.covariate_order[g][j], schedule.freeze_delta);
                edge
            })
        };
        state.groups[g].edges = new_edges;
    }
}

pub fn update_sigma0(problem: &Problem, state: &mut VariationalState) {
    let cfg = &problem.config;
    for g in 0..state.groups.len() {
        let moments = group_moments(problem, state, g);
        let n = problem.groups[g].size() as f64;
        let group = &mut state.groups[g];
        let mut shape = cfg.a0;
        let mut rate = cfg.b0;
        for (j, e) in group.edges.iter().enumerate() {
            let w = 1.0 - e.gamma_delta;
            let sq: f64 = moments.mean.column(j).iter().zip(moments.var.column(j).iter()).map(|(m, v)| m * m + v).sum();
            shape += 0.5 * n * w;
            rate += 0.5 * w * sq;
        }
        group.sigma0 = InvGamma::new(shape, rate);
    }
}

pub fn update_sigma1(problem: &Problem, state: &mut VariationalState) {
    let cfg = &problem.config;
    let with_cov = problem.uses_covariates();
    for g in 0..state.groups.len() {
        let moments = group_moments(problem, state, g);
        let n = problem.groups[g].size();
        let group = &state.groups[g];
        let per_edge = exec::map(problem.exec, group.edges.len(), |j| {
            let e = &group.edges[j];
            let slab = slab_moments(e, n, with_cov);
            let sq: f64 = (0..n)
                .map(|s| {
                    let d = moments.mean[(s, j)] - slab.mean[s];
                    d * d + moments.var[(s, j)] + slab.var[s]
                })
                .sum();
            (e.gamma_delta, sq)
        });
        let mut shape = cfg.a1;
        let mut rate = cfg.b1;
        for (w, sq) in per_edge {
            shape += 0.5 * n as f64 * w;
            rate += 0.5 * w * sq;
        }
        state.groups[g].sigma1 = InvGamma::new(shape, rate);
    }
}

pub fn update_xi(problem: &Problem, state: &mut VariationalState) {
    let cfg = &problem.config;
    let r = cfg.r;
    let rss = exec::map(problem.exec, problem.subjects.len(), |s| {
        (0..r)
            .map(|t| elbo::expected_rss(problem, s, &state.subjects[s], t))
            .collect::<Vec<_>>()
    });
    for (g, layout) in problem.groups.iter().enumerate() {
        let xi = (0..r)
            .map(|t| {
                let mut shape = cfg.a_xi;
                let mut rate = cfg.b_xi;
                for &s in &layout.members {
                    shape += 0.5 * problem.subjects[s].n_obs as f64;
                    rate += 0.5 * rss[s][t];
                }
                InvGamma::new(shape, rate)
            })
            .collect();
        state.groups[g].xi = xi;
    }
}

pub fn update_block(
    problem: &Problem,
    state: &mut VariationalState,
    schedule: &UpdateSchedule,
    block: Block,
) -> Result<()> {
    match block {
        Block::Beta => update_betas(problem, state)?,
        Block::Edges => update_edges(problem, state, schedule),
        Block::Sigma0 => update_sigma0(problem, state),
        Block::Sigma1 => update_sigma1(problem, state),
        Block::Xi => update_xi(problem, state),
    }
    Ok(())
}

/// One full CAVI pass in the fixed block order.
///
/// With `check_blocks`, the bound is re-evaluated after every block family
/// and a decrease beyond `tol` (relative) is reported as an error naming the
/// block.
pub fn cavi_sweep(
    problem: &Problem,
    state: &mut VariationalState,
    schedule: &UpdateSchedule,
    check_blocks: Option<f64>,
) -> Result<()> {
    let mut before = match check_blocks {
        Some(_) => Some(elbo::compute_elbo(problem, state)?),
        None => None,
    };
    for block in Block::SWEEP {
        update_block(problem, state, schedule, block)?;
        if let (Some(tol), Some(prev)) = (check_blocks, before) {
            let now = elbo::compute_elbo(problem, state)?;
            if now < prev - tol * prev.abs() {
                return Err(Error::ElboDecrease {
                    block: block.name().into(),
                    before: prev,
                    after: now,
                });
            }
            before = Some(now);
        }
    }
    Ok(())
}

/// Single-factor updates on one edge, for diagnostics and tests.
pub mod single {
    use super::*;

    fn with_context<F>(problem: &Problem, state: &mut VariationalState, g: usize, j: usize, f: F)
    where
        F: FnOnce(&EdgeContext<'_>, &mut EdgeFactor),
    {
        let moments = group_moments(problem, state, g);
        let mut edge = state.groups[g].edges[j].clone();
        {
            let ctx = edge_context(problem, state, &moments, g, j);
            f(&ctx, &mut edge);
        }
        state.groups[g].edges[j] = edge;
    }

    pub fn mu(problem: &Problem, state: &mut VariationalState, g: usize, j: usize) {
        with_context(problem, state, g, j, |ctx, e| ctx.update_mu(e));
    }

    pub fn delta(problem: &Problem, state: &mut VariationalState, g: usize, j: usize) {
        with_context(problem, state, g, j, |ctx, e| ctx.update_delta(e));
    }

    pub fn phi(problem: &Problem, state: &mut VariationalState, g: usize, j: usize, p: usize) {
        with_context(problem, state, g, j, |ctx, e| ctx.update_phi(e, p));
    }

    pub fn w(problem: &Problem, state: &mut VariationalState, g: usize, j: usize, p: usize) {
        with_context(problem, state, g, j, |ctx, e| ctx.update_w(e, p));
    }

    pub fn s(problem: &Problem, state: &mut VariationalState, g: usize, j: usize, p: usize) {
        with_context(problem, state, g, j, |ctx, e| ctx.update_s(e, p));
    }
}
