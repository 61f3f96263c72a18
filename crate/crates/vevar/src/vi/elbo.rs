//! Evidence lower bound under the mean-field family.
//!
//! The slab factors of an edge (`q(mu)`, `q(w~, s)`, `q(phi)`) describe the
//! edge conditional on `delta = 1` and coincide with the prior when
//! `delta = 0`, so every edge contributes
//!
//! ```text
//! gamma * (E_1[ln p(beta | f, sigma1)] - KL(slab || prior))
//!   + (1 - gamma) * E[ln p(beta | 0, sigma0)] - KL(Bern(gamma) || Bern(pi_delta))
//! ```

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::exec;
use crate::kernel::SpectralGram;
use crate::model::{ModelConfig, LN_TWO_PI};
use crate::vi::problem::Problem;
use crate::vi::state::{CovariateFactor, EdgeFactor, GroupFactor, InvGamma, SubjectFactor, VariationalState};

/// `q(beta)` means and marginal variances for one group, `n_g x J`.
#[derive(Debug, Clone)]
pub(crate) struct GroupMoments {
    pub mean: DMatrix<f64>,
    pub var: DMatrix<f64>,
}

pub(crate) fn group_moments(problem: &Problem, state: &VariationalState, g: usize) -> GroupMoments {
    let members = &problem.groups[g].members;
    let jn = problem.n_coefficients();
    let mean = DMatrix::from_fn(members.len(), jn, |k, j| state.subjects[members[k]].beta_mean[j]);
    let var = DMatrix::from_fn(members.len(), jn, |k, j| state.subjects[members[k]].beta_var(j));
    GroupMoments { mean, var }
}

/// Mean and variance of the group function at each subject of the group,
/// under the `delta = 1` slab factors.
#[derive(Debug, Clone)]
pub(crate) struct SlabMoments {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

pub(crate) fn slab_moments(edge: &EdgeFactor, n: usize, with_covariates: bool) -> SlabMoments {
    let mut mean = DVector::from_element(n, edge.u_mu);
    let mut var = DVector::from_element(n, edge.v_mu);
    if with_covariates {
        for c in &edge.covariates {
            let (e1, e2) = (c.w_mean(), c.w_second_moment());
            if e2 == 0.0 {
                continue;
            }
            for s in 0..n {
                let m = c.phi_mean[s];
                mean[s] += e1 * m;
                var[s] += e2 * (m * m + c.phi_var[s]) - e1 * e1 * m * m;
            }
        }
    }
    SlabMoments { mean, var }
}

pub(crate) fn kl_normal(mean: f64, var: f64, prior_var: f64) -> f64 {
    0.5 * ((var + mean * mean) / prior_var - 1.0 - (var / prior_var).ln())
}

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

pub(crate) fn kl_bernoulli(gamma: f64, prior: f64) -> f64 {
    xlogy_ratio(gamma, prior) + xlogy_ratio(1.0 - gamma, 1.0 - prior)
}

/// `KL(N(m, Q diag(d) Q^T) || N(0, Q diag(lambda) Q^T))`.
pub(crate) fn kl_phi(spectral: &SpectralGram, c: &CovariateFactor) -> f64 {
    let z = spectral.to_basis(&c.phi_mean);
    let mut acc = -(spectral.dim() as f64);
    for i in 0..spectral.dim() {
        let (lam, d) = (spectral.eigvals[i], c.phi_spectrum[i]);
        acc += d / lam + z[i] * z[i] / lam + lam.ln() - d.ln();
    }
    0.5 * acc
}

/// Per-edge pieces of the bound. `ll1`/`ll0` are the expected subject
/// log-densities under the edge-on and edge-off regimes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EdgeTerms {
    pub ll1: f64,
    pub ll0: f64,
    pub kl_slab: f64,
}

impl EdgeTerms {
    pub fn contribution(&self, gamma: f64, pi_delta: f64) -> f64 {
        let on = if gamma > 0.0 { gamma * (self.ll1 - self.kl_slab) } else { 0.0 };
        on + (1.0 - gamma) * self.ll0 - kl_bernoulli(gamma, pi_delta)
    }
}

pub(crate) fn slab_kl(cfg: &ModelConfig, spectra: &[SpectralGram], edge: &EdgeFactor, with_covariates: bool) -> f64 {
    let mut kl = kl_normal(edge.u_mu, edge.v_mu, cfg.sigma2_mu);
    if with_covariates {
        for (c, spec) in edge.covariates.iter().zip(spectra) {
            if c.gamma_phi > 0.0 {
                kl += c.gamma_phi * (kl_normal(c.omega, c.sigma_tilde, cfg.sigma2_w) + kl_phi(spec, c));
            }
            kl += kl_bernoulli(c.gamma_phi, cfg.pi_phi);
        }
    }
    kl
}

/// Expected log-densities of the subject coefficients under both regimes.
pub(crate) fn regime_loglik(
    bmean: DVectorView<f64>,
    bvar: DVectorView<f64>,
    slab: &SlabMoments,
    sigma0: &InvGamma,
    sigma1: &InvGamma,
) -> (f64, f64) {
    let n = bmean.len() as f64;
    let (c1, c0) = (sigma1.mean_inv(), sigma0.mean_inv());
    let mut sq1 = 0.0;
    let mut sq0 = 0.0;
    for s in 0..bmean.len() {
        let d = bmean[s] - slab.mean[s];
        sq1 += d * d + bvar[s] + slab.var[s];
        sq0 += bmean[s] * bmean[s] + bvar[s];
    }
    let ll1 = -0.5 * n * (LN_TWO_PI + sigma1.mean_ln()) - 0.5 * c1 * sq1;
    let ll0 = -0.5 * n * (LN_TWO_PI + sigma0.mean_ln()) - 0.5 * c0 * sq0;
    (ll1, ll0)
}

pub(crate) fn edge_terms(
    problem: &Problem,
    g: usize,
    j: usize,
    edge: &EdgeFactor,
    group: &GroupFactor,
    moments: &GroupMoments,
) -> EdgeTerms {
    let layout = &problem.groups[g];
    let with_cov = problem.uses_covariates();
    let slab = slab_moments(edge, layout.size(), with_cov);
    let (ll1, ll0) = regime_loglik(
        moments.mean.column(j),
        moments.var.column(j),
        &slab,
        &group.sigma0,
        &group.sigma1,
    );
    EdgeTerms {
        ll1,
        ll0,
        kl_slab: slab_kl(&problem.config, &layout.spectra, edge, with_cov),
    }
}

/// `E ||x_r - U beta_r||^2` for one subject and target.
pub(crate) fn expected_rss(problem: &Problem, s: usize, sf: &SubjectFactor, target: usize) -> f64 {
    let st = &problem.subjects[s];
    let rl = problem.block_len();
    let b = sf.beta_mean.rows(target * rl, rl);
    let utu_b = &st.utu * b;
    st.xtx[target] - 2.0 * b.dot(&st.utx.column(target)) + b.dot(&utu_b)
        + st.utu.component_mul(&sf.beta_cov[target]).sum()
}

/// Expected data log-likelihood plus the entropy of `q(beta)` for a subject.
pub(crate) fn subject_terms(problem: &Problem, state: &VariationalState, s: usize) -> Result<f64> {
    let st = &problem.subjects[s];
    let sf = &state.subjects[s];
    let group = &state.groups[st.group];
    let rl = problem.block_len();
    let n = st.n_obs as f64;
    let mut total = 0.0;
    for t in 0..problem.config.r {
        let xi = &group.xi[t];
        total += -0.5 * n * (LN_TWO_PI + xi.mean_ln()) - 0.5 * xi.mean_inv() * expected_rss(problem, s, sf, t);
        let chol = sf.beta_cov[t].clone().cholesky().ok_or_else(|| Error::NumericalBreakdown {
            block: format!("q(beta) subject {} target {}", st.subject_id, t + 1),
            detail: "covariance is not positive definite".into(),
        })?;
        let ln_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        total += 0.5 * (rl as f64 * (1.0 + LN_TWO_PI) + ln_det);
    }
    Ok(total)
}

fn variance_terms(cfg: &ModelConfig, group: &GroupFactor) -> f64 {
    let xi_prior = InvGamma::new(cfg.a_xi, cfg.b_xi);
    -group.sigma0.kl(&InvGamma::new(cfg.a0, cfg.b0))
        - group.sigma1.kl(&InvGamma::new(cfg.a1, cfg.b1))
        - group.xi.iter().map(|x| x.kl(&xi_prior)).sum::<f64>()
}

/// The bound split by block family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboBreakdown {
    /// Expected data log-likelihood plus `q(beta)` entropy.
    pub subjects: f64,
    /// Edge-level terms: subject coefficient priors and slab/indicator KLs.
    pub edges: f64,
    /// Negative KLs of the inverse-gamma variance factors.
    pub variances: f64,
}

impl ElboBreakdown {
    pub fn total(&self) -> f64 {
        self.subjects + self.edges + self.variances
    }
}

pub fn elbo_breakdown(problem: &Problem, state: &VariationalState) -> Result<ElboBreakdown> {
    let cfg = &problem.config;
    let subj = exec::map(problem.exec, state.subjects.len(), |s| subject_terms(problem, state, s));
    let mut subjects = 0.0;
    for (s, v) in subj.into_iter().enumerate() {
        let v = v?;
        if !v.is_finite() {
            return Err(Error::NumericalBreakdown {
                block: format!("likelihood subject {}", problem.subjects[s].subject_id),
                detail: format!("value {v}"),
            });
        }
        subjects += v;
    }

    let mut edges = 0.0;
    let mut variances = 0.0;
    for (g, group) in state.groups.iter().enumerate() {
        let moments = group_moments(problem, state, g);
        let per_edge = exec::map(problem.exec, group.edges.len(), |j| {
            edge_terms(problem, g, j, &group.edges[j], group, &moments)
                .contribution(group.edges[j].gamma_delta, cfg.pi_delta)
        });
        for (j, v) in per_edge.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NumericalBreakdown {
                    block: format!("edge group {} j {}", g + 1, j + 1),
                    detail: format!("value {v}"),
                });
            }
            edges += v;
        }
        let v = variance_terms(cfg, group);
        if !v.is_finite() {
            return Err(Error::NumericalBreakdown {
                block: format!("variance factors group {}", g + 1),
                detail: format!("value {v}"),
            });
        }
        variances += v;
    }
    Ok(ElboBreakdown {
        subjects,
        edges,
        variances,
    })
}

pub fn compute_elbo(problem: &Problem, state: &VariationalState) -> Result<f64> {
    Ok(elbo_breakdown(problem, state)?.total())
}
