use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::kernel::SpectralGram;
use crate::vi::problem::Problem;
use crate::vi::updates::{update_sigma0, update_sigma1, update_xi};

const RIDGE_PENALTY: f64 = 1e-3;

/// Inverse-Gamma distribution in shape/rate form, density ∝ x^{-a-1} e^{-b/x}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InvGamma {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate }
    }

    /// `E[1/x]`.
    pub fn mean_inv(&self) -> f64 {
        self.shape / self.rate
    }

    /// `E[ln x]`.
    pub fn mean_ln(&self) -> f64 {
        self.rate.ln() - digamma(self.shape)
    }

    pub fn kl(&self, prior: &InvGamma) -> f64 {
        let (a, b, a0, b0) = (self.shape, self.rate, prior.shape, prior.rate);
        (a - a0) * digamma(a) - ln_gamma(a) + ln_gamma(a0) + a0 * (b.ln() - b0.ln())
            + a * (b0 - b) / b
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln()
            - self.rate / x
    }
}

/// `q(s)`, `q(w~ | s = 1)` and `q(phi | s = 1)` for one covariate of one
/// edge. Under `s = 0` both `w~` and `phi` follow their priors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateFactor {
    pub omega: f64,
    pub sigma_tilde: f64,
    pub gamma_phi: f64,
    /// Mean of `q(phi | s = 1)` over the group's covariate grid.
    pub phi_mean: DVector<f64>,
    /// Covariance of `q(phi)` as eigenvalues in the Gram eigenbasis.
    pub phi_spectrum: DVector<f64>,
    /// Diagonal of the `q(phi)` covariance (derived from `phi_spectrum`).
    pub phi_var: DVector<f64>,
}

impl CovariateFactor {
    /// `E[w]` with `w = w~ s`.
    pub fn w_mean(&self) -> f64 {
        self.gamma_phi * self.omega
    }

    /// `E[w^2]`.
    pub fn w_second_moment(&self) -> f64 {
        self.gamma_phi * (self.omega * self.omega + self.sigma_tilde)
    }
}

/// Factors attached to one group-level edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFactor {
    pub u_mu: f64,
    pub v_mu: f64,
    pub gamma_delta: f64,
    pub covariates: Vec<CovariateFactor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupFactor {
    pub sigma0: InvGamma,
    pub sigma1: InvGamma,
    /// One per target node.
    pub xi: Vec<InvGamma>,
    pub edges: Vec<EdgeFactor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectFactor {
    pub beta_mean: DVector<f64>,
    /// One `RL x RL` covariance block per target node.
    pub beta_cov: Vec<DMatrix<f64>>,
}

impl SubjectFactor {
    /// Marginal variance of flat coefficient `j`.
    pub fn beta_var(&self, j: usize) -> f64 {
        let rl = self.beta_cov[0].nrows();
        let k = j % rl;
        self.beta_cov[j / rl][(k, k)]
    }
}

/// All variational parameters of the mean-field family.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub groups: Vec<GroupFactor>,
    pub subjects: Vec<SubjectFactor>,
}

impl VariationalState {
    /// Checks positivity and range constraints.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::NumericalBreakdown { block: what, detail: "invalid variational parameter".into() });
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        for (g, gf) in self.groups.iter().enumerate() {
            for (name, ig) in [("sigma0", gf.sigma0), ("sigma1", gf.sigma1)]
                .into_iter()
                .chain(gf.xi.iter().map(|x| ("xi", *x)))
            {
                if !(ig.shape > 0.0 && ig.rate > 0.0) {
                    return bad(format!("q({name}) group {}", g + 1));
                }
            }
            for (j, e) in gf.edges.iter().enumerate() {
                if !(e.v_mu > 0.0) || !prob(e.gamma_delta) || !e.u_mu.is_finite() {
                    return bad(format!("edge group {} j {}", g + 1, j + 1));
                }
                for c in &e.covariates {
                    if !(c.sigma_tilde > 0.0)
                        || !prob(c.gamma_phi)
                        || c.phi_spectrum.iter().any(|&d| !(d > 0.0))
                        || c.phi_mean.iter().any(|v| !v.is_finite())
                    {
                        return bad(format!("covariate block group {} j {}", g + 1, j + 1));
                    }
                }
            }
        }
        for (s, sf) in self.subjects.iter().enumerate() {
            if sf.beta_mean.iter().any(|v| !v.is_finite())
                || sf.beta_cov.iter().any(|c| (0..c.nrows()).any(|k| !(c[(k, k)] > 0.0)))
            {
                return bad(format!("q(beta) subject {}", s + 1));
            }
        }
        Ok(())
    }
}

/// Starting point for CAVI.
///
/// `q(beta)` holds per-subject ridge estimates, `q(mu)` their group average,
/// `q(phi)` a GP smooth of each edge's centered estimates against each
/// covariate, and inclusion probabilities their prior values. Starting
/// `q(phi)` away from zero matters: with `E[w] = 0` and `E[phi] = 0` both
/// updates map zero to zero and covariate effects are never picked up.
pub fn init_state(problem: &Problem) -> Result<VariationalState> {
    let cfg = &problem.config;
    let r = cfg.r;
    let rl = problem.block_len();
    let j_total = problem.n_coefficients();

    let subjects = problem
        .subjects
        .iter()
        .map(|st| {
            let chol = (&st.utu + DMatrix::identity(rl, rl) * RIDGE_PENALTY)
                .cholesky()
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "subject {}: ridge system is not positive definite",
                        st.subject_id
                    ))
                })?;
            let inv = chol.inverse();
            let coef = chol.solve(&st.utx);
            let mut beta_mean = DVector::zeros(j_total);
            let mut beta_cov = Vec::with_capacity(r);
            for t in 0..r {
                let b = coef.column(t);
                beta_mean.rows_mut(t * rl, rl).copy_from(&b);
                let rss = st.xtx[t] - 2.0 * b.dot(&st.utx.column(t)) + (b.transpose() * &st.utu * b)[(0, 0)];
                let noise = (rss.max(0.0) / st.n_obs as f64).max(1e-8);
                beta_cov.push(&inv * noise);
            }
            Ok(SubjectFactor {
                beta_mean,
                beta_cov,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let gamma_phi = if problem.uses_covariates() { cfg.pi_phi } else { 0.0 };
    let prior_sigma1 = InvGamma::new(cfg.a1, cfg.b1);

    let groups = problem
        .groups
        .iter()
        .map(|layout| {
            let n = layout.size();
            let means: Vec<f64> = (0..j_total)
                .map(|j| layout.members.iter().map(|&s| subjects[s].beta_mean[j]).sum::<f64>() / n as f64)
                .collect();
            // pooled within-group dispersion of the ridge estimates
            let dispersion = (layout
                .members
                .iter()
                .map(|&s| {
                    (0..j_total)
                        .map(|j| (subjects[s].beta_mean[j] - means[j]).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / (n * j_total) as f64)
                .max(1e-8);
            let v_mu = 1.0 / (1.0 / cfg.sigma2_mu + n as f64 * prior_sigma1.mean_inv());
            let edges = (0..j_total)
                .map(|j| {
                    let centered = DVector::from_iterator(
                        n,
                        layout.members.iter().map(|&s| subjects[s].beta_mean[j] - means[j]),
                    );
                    let covariates = layout
                        .spectra
                        .iter()
                        .map(|spec| smoothed_start(spec, &centered, dispersion, cfg.sigma2_w, gamma_phi))
                        .collect();
                    EdgeFactor {
                        u_mu: means[j],
                        v_mu,
                        gamma_delta: cfg.pi_delta,
                        covariates,
                    }
                })
                .collect();
            GroupFactor {
                sigma0: InvGamma::new(cfg.a0, cfg.b0),
                sigma1: prior_sigma1,
                xi: vec![InvGamma::new(cfg.a_xi, cfg.b_xi); r],
                edges,
            }
        })
        .collect();

    let mut state = VariationalState { groups, subjects };
    // Variance factors start at their conditional optimum given the above,
    // and the baseline variances follow from q(sigma1).
    update_xi(problem, &mut state);
    update_sigma0(problem, &mut state);
    update_sigma1(problem, &mut state);
    for (g, group) in state.groups.iter_mut().enumerate() {
        let n = problem.groups[g].size() as f64;
        let v_mu = 1.0 / (1.0 / cfg.sigma2_mu + n * group.sigma1.mean_inv());
        for e in &mut group.edges {
            e.v_mu = v_mu;
        }
    }
    Ok(state)
}

/// `q(phi)` set to the GP posterior of the centered subject estimates with
/// noise variance `noise`; `q(w~, s)` at the prior.
fn smoothed_start(
    spec: &SpectralGram,
    centered: &DVector<f64>,
    noise: f64,
    sigma2_w: f64,
    gamma_phi: f64,
) -> CovariateFactor {
    let d = spec.eigvals.map(|lam| lam * noise / (lam + noise));
    let z = spec.to_basis(centered);
    let coef = DVector::from_fn(spec.dim(), |i, _| z[i] * spec.eigvals[i] / (spec.eigvals[i] + noise));
    CovariateFactor {
        omega: 0.0,
        sigma_tilde: sigma2_w,
        gamma_phi,
        phi_mean: spec.from_basis(&coef),
        phi_var: spec.diag_of(&d),
        phi_spectrum: d,
    }
}
