//! Likelihood pieces, coefficient indexing and configuration for the
//! multi-subject VAR model.
//!
//! Subject `s` observes an R-dimensional series `x_t`. With `u_t` the
//! concatenation `[x_{t-1}, ..., x_{t-L}]`, the model is `x_t = u_t B + e_t`
//! with `B` of shape `RL x R` and `e_t ~ N(0, diag(xi))`. The flattened
//! coefficient vector is the column-major vectorization of `B`, so the
//! coefficients feeding target `r` are contiguous.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One subject's observed series, covariates and group label.
///
/// Groups are zero-based internally; file formats use one-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDataset {
    pub subject_id: usize,
    /// `T x R`, rows are time points.
    pub series: DMatrix<f64>,
    pub covariates: Vec<f64>,
    pub group: usize,
}

impl SubjectDataset {
    pub fn new(
        subject_id: usize,
        series: DMatrix<f64>,
        covariates: Vec<f64>,
        group: usize,
    ) -> Result<Self> {
        let subject = Self {
            subject_id,
            series,
            covariates,
            group,
        };
        subject.check_finite()?;
        Ok(subject)
    }

    pub fn n_time(&self) -> usize {
        self.series.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.series.ncols()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.series.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("series of subject {}", self.subject_id),
            });
        }
        if self.covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("covariates of subject {}", self.subject_id),
            });
        }
        Ok(())
    }
}

/// Position of one VAR coefficient: `source` node at `lag` driving `target`.
///
/// All components are zero-based (`lag == 0` means a lag of one step).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CoefficientIndex {
    pub source: usize,
    pub lag: usize,
    pub target: usize,
}

impl CoefficientIndex {
    pub fn new(source: usize, lag: usize, target: usize) -> Self {
        Self {
            source,
            lag,
            target,
        }
    }

    /// Flat position in `vec(B)`: `target * R * L + lag * R + source`.
    pub fn flat(self, r: usize, l: usize) -> Result<usize> {
        if self.source >= r || self.target >= r || self.lag >= l {
            return Err(Error::OutOfRange(format!(
                "{self:?} with R = {r}, L = {l}"
            )));
        }
        Ok(self.target * r * l + self.lag * r + self.source)
    }

    pub fn unflatten(j: usize, r: usize, l: usize) -> Result<Self> {
        let rl = r * l;
        if j >= rl * r {
            return Err(Error::OutOfRange(format!(
                "flat index {j} with R = {r}, L = {l}"
            )));
        }
        Ok(Self {
            source: j % r,
            lag: (j % rl) / r,
            target: j / rl,
        })
    }

    /// Row of `B` this coefficient occupies.
    pub fn row(self, r: usize) -> usize {
        self.lag * r + self.source
    }
}

/// Reshapes a flat coefficient vector into the `RL x R` matrix `B`.
pub fn coefficients_to_matrix(beta: &[f64], r: usize, l: usize) -> Result<DMatrix<f64>> {
    if beta.len() != r * l * r {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vector of length {} for R = {r}, L = {l}",
            beta.len()
        )));
    }
    Ok(DMatrix::from_column_slice(r * l, r, beta))
}

/// Column-major vectorization of `B`.
pub fn matrix_to_coefficients(b: &DMatrix<f64>) -> Vec<f64> {
    b.as_slice().to_vec()
}

/// Fixed model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of nodes. Zero means "take it from the data".
    pub r: usize,
    pub lag: usize,
    /// Number of groups. Zero means "take it from the data".
    pub g: usize,
    /// Number of covariates. Zero means "take it from the data".
    pub p: usize,
    pub pi_delta: f64,
    pub pi_phi: f64,
    pub sigma2_w: f64,
    pub sigma2_mu: f64,
    pub a0: f64,
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
    pub a_xi: f64,
    pub b_xi: f64,
    pub kernel_lengthscale: f64,
    pub kernel_variance: f64,
    /// Diagonal jitter, relative to `kernel_variance`.
    pub kernel_jitter: f64,
    /// Drop the covariate functions and keep only the baseline per edge.
    pub intercept_only: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            r: 0,
            lag: 1,
            g: 0,
            p: 0,
            pi_delta: 0.1,
            pi_phi: 0.1,
            sigma2_w: 1.0,
            sigma2_mu: 1.0,
            a0: 2.0,
            b0: 1.0,
            a1: 2.0,
            b1: 1.0,
            a_xi: 2.0,
            b_xi: 1.0,
            kernel_lengthscale: 0.5,
            kernel_variance: 1.0,
            kernel_jitter: 1e-6,
            intercept_only: false,
        }
    }
}

impl ModelConfig {
    pub fn n_coefficients(&self) -> usize {
        self.r * self.lag * self.r
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.r == 0 || self.lag == 0 || self.g == 0 {
            return bad(format!(
                "r, lag and g must be positive (got r = {}, lag = {}, g = {})",
                self.r, self.lag, self.g
            ));
        }
        for (name, v) in [("pi_delta", self.pi_delta), ("pi_phi", self.pi_phi)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie strictly between 0 and 1, got {v}"));
            }
        }
        for (name, v) in [
            ("sigma2_w", self.sigma2_w),
            ("sigma2_mu", self.sigma2_mu),
            ("a0", self.a0),
            ("b0", self.b0),
            ("a1", self.a1),
            ("b1", self.b1),
            ("a_xi", self.a_xi),
            ("b_xi", self.b_xi),
            ("kernel_lengthscale", self.kernel_lengthscale),
            ("kernel_variance", self.kernel_variance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.kernel_jitter >= 0.0 && self.kernel_jitter.is_finite()) {
            return bad(format!(
                "kernel_jitter must be nonnegative, got {}",
                self.kernel_jitter
            ));
        }
        Ok(())
    }

    /// Fills zero dimensions from the data and checks the rest agree with it.
    pub fn resolve_dims(&mut self, data: &[SubjectDataset]) -> Result<()> {
        let first = data
            .first()
            .ok_or_else(|| Error::InvalidInput("no subjects".into()))?;
        let r = first.n_nodes();
        let p = first.covariates.len();
        let g = data.iter().map(|s| s.group + 1).max().unwrap_or(0);
        for (name, slot, found) in [("r", &mut self.r, r), ("p", &mut self.p, p), ("g", &mut self.g, g)] {
            if *slot == 0 {
                *slot = found;
            } else if *slot != found {
                return Err(Error::DimensionMismatch(format!(
                    "config {name} = {slot} but data implies {found}"
                )));
            }
        }
        for s in data {
            if s.n_nodes() != self.r || s.covariates.len() != self.p || s.group >= self.g {
                return Err(Error::DimensionMismatch(format!(
                    "subject {} has R = {}, P = {}, group = {}",
                    s.subject_id,
                    s.n_nodes(),
                    s.covariates.len(),
                    s.group + 1
                )));
            }
        }
        Ok(())
    }
}

/// Lagged regression design for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDesign {
    /// `(T - L) x RL`; row `t` is `[x_{t+L-1}, ..., x_t]`.
    pub u: DMatrix<f64>,
    /// `(T - L) x R`; row `t` is `x_{t+L}`.
    pub x: DMatrix<f64>,
}

impl LaggedDesign {
    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }
}

pub fn build_lagged_design(subject: &SubjectDataset, lag: usize) -> Result<LaggedDesign> {
    let t = subject.n_time();
    let r = subject.n_nodes();
    if lag == 0 {
        return Err(Error::InvalidConfig("lag must be at least 1".into()));
    }
    if t < lag + 2 {
        return Err(Error::SeriesTooShort {
            rows: t,
            needed: lag + 2,
            lag,
        });
    }
    subject.check_finite()?;
    let n = t - lag;
    let series = &subject.series;
    let u = DMatrix::from_fn(n, r * lag, |row, col| {
        let (k, node) = (col / r, col % r);
        series[(row + lag - 1 - k, node)]
    });
    let x = series.rows(lag, n).into_owned();
    Ok(LaggedDesign { u, x })
}

/// Gaussian log-likelihood of the design's responses given flat coefficients
/// and per-target noise variances.
pub fn subject_loglik(design: &LaggedDesign, beta: &[f64], xi: &[f64]) -> Result<f64> {
    let r = design.x.ncols();
    let rl = design.u.ncols();
    if beta.len() != rl * r || xi.len() != r || design.u.nrows() != design.x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{} / {}x{}, beta {}, xi {}",
            design.u.nrows(),
            rl,
            design.x.nrows(),
            r,
            beta.len(),
            xi.len()
        )));
    }
    if xi.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("noise variances must be positive".into()));
    }
    let n = design.n_obs() as f64;
    let b = coefficients_to_matrix(beta, r, rl / r)?;
    let resid = &design.x - &design.u * b;
    Ok((0..r)
        .map(|c| {
            let rss = resid.column(c).norm_squared();
            -0.5 * n * (LN_2PI + xi[c].ln()) - 0.5 * rss / xi[c]
        })
        .sum())
}

/// Group-level edge strength `mu + sum_p w_p * phi_p(m_p)`.
pub fn group_function_eval<F>(mu: f64, w: &[f64], phi: &[F], m: &[f64]) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if w.len() != phi.len() || w.len() != m.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights, {} functions, {} covariates",
            w.len(),
            phi.len(),
            m.len()
        )));
    }
    Ok(mu
        + w.iter()
            .zip(phi)
            .zip(m)
            .map(|((&wp, f), &mp)| wp * f(mp))
            .sum::<f64>())
}

pub(crate) const LN_TWO_PI: f64 = LN_2PI;
