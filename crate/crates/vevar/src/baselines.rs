//! Two-stage comparison pipeline: per-subject least-squares VAR fits with
//! group t-tests and Benjamini-Hochberg selection, then LASSO regression of
//! the subject estimates on the covariates.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{build_lagged_design, SubjectDataset};

const RIDGE_FALLBACK: f64 = 1e-6;
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: f64,
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided one-sample t-test of `mean = 0`.
pub fn one_sample_ttest(x: &[f64]) -> Result<TTest> {
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!("one-sample t-test needs at least 3 values, got {}", x.len())));
    }
    let (mean, var) = mean_var(x);
    let df = (x.len() - 1) as f64;
    let se = (var / x.len() as f64).sqrt();
    let t = if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    Ok(TTest { t, p: two_sided_p(t, df), df })
}

/// Welch's unequal-variance two-sample t-test.
pub fn group_diff_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "two-sample t-test needs at least 3 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    let diff = ma - mb;
    if se2 == 0.0 {
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        let df = (a.len() + b.len() - 2) as f64;
        return Ok(TTest { t, p: if diff == 0.0 { 1.0 } else { 0.0 }, df });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok(TTest { t, p: two_sided_p(t, df), df })
}

/// Benjamini-Hochberg step-up selection at level `q`.
pub fn fdr_select(pvalues: &[f64], q: f64) -> Result<Vec<bool>> {
    if let Some(bad) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::OutOfRange(format!("p-value {bad} outside [0, 1]")));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let cutoff = (0..m).rev().find(|&k| pvalues[order[k]] <= q * (k + 1) as f64 / m as f64);
    let mut selected = vec![false; m];
    if let Some(k) = cutoff {
        for &i in &order[..=k] {
            selected[i] = true;
        }
    }
    Ok(selected)
}

/// Least-squares coefficients of one subject, flat-indexed. Returns whether
/// the ridge fallback was needed.
pub fn ols_var(subject: &SubjectDataset, lag: usize) -> Result<(Vec<f64>, bool)> {
    let d = build_lagged_design(subject, lag)?;
    let mut utu = d.u.tr_mul(&d.u);
    let utx = d.u.tr_mul(&d.x);
    let eig = SymmetricEigen::new(utu.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let mut ridge = !(lo > RANK_TOL * hi.max(f64::MIN_POSITIVE));
    if ridge {
        utu += DMatrix::identity(utu.nrows(), utu.ncols()) * RIDGE_FALLBACK;
    }
    let coef = match utu.clone().cholesky() {
        Some(c) => c.solve(&utx),
        None => {
            ridge = true;
            (utu + DMatrix::identity(utx.nrows(), utx.nrows()) * RIDGE_FALLBACK)
                .cholesky()
                .ok_or_else(|| Error::Factorization(format!("subject {}: normal equations are singular", subject.subject_id)))?
                .solve(&utx)
        }
    };
    Ok((coef.as_slice().to_vec(), ridge))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcResult {
    /// `[s][j]`, dataset order.
    pub subject_coefs: Vec<Vec<f64>>,
    /// `[g][j]`.
    pub tstats: Vec<Vec<f64>>,
    /// `[g][j]`.
    pub pvalues: Vec<Vec<f64>>,
    /// `[g][j]`, BH within each group.
    pub selected: Vec<Vec<bool>>,
    /// Ids of subjects fitted with the ridge fallback.
    pub ridge_fallback: Vec<usize>,
}

pub fn n_groups(data: &[SubjectDataset]) -> usize {
    data.iter().map(|s| s.group + 1).max().unwrap_or(0)
}

/// Granger-causality stage: OLS per subject, one-sample t-test per group and
/// coefficient, BH at level `q` over each group's coefficients.
pub fn gc_fit(data: &[SubjectDataset], lag: usize, q: f64, exec: Execution) -> Result<GcResult> {
    if data.is_empty() {
        return Err(Error::InvalidInput("no subjects".into()));
    }
    let fits = exec::map(exec, data.len(), |s| ols_var(&data[s], lag));
    let mut subject_coefs = Vec::with_capacity(data.len());
    let mut ridge_fallback = Vec::new();
    for (s, f) in fits.into_iter().enumerate() {
        let (c, ridge) = f?;
        if ridge {
            log::warn!("subject {}: rank-deficient design, ridge fallback used", data[s].subject_id);
            ridge_fallback.push(data[s].subject_id);
        }
        subject_coefs.push(c);
    }
    let jn = subject_coefs[0].len();
    let g_total = n_groups(data);
    let mut tstats = Vec::with_capacity(g_total);
    let mut pvalues = Vec::with_capacity(g_total);
    let mut selected = Vec::with_capacity(g_total);
    for g in 0..g_total {
        let members: Vec<usize> = (0..data.len()).filter(|&s| data[s].group == g).collect();
        if members.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "group {} has {} subjects; the t-test needs at least 3",
                g + 1,
                members.len()
            )));
        }
        let tests = (0..jn)
            .map(|j| one_sample_ttest(&members.iter().map(|&s| subject_coefs[s][j]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let p: Vec<f64> = tests.iter().map(|t| t.p).collect();
        selected.push(fdr_select(&p, q)?);
        tstats.push(tests.iter().map(|t| t.t).collect());
        pvalues.push(p);
    }
    Ok(GcResult {
        subject_coefs,
        tstats,
        pvalues,
        selected,
        ridge_fallback,
    })
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Coordinate descent for `(1/2n) ||y - X b||^2 + lambda ||b||_1` with
/// centered `y` and centered columns of `X`; starts from `start`.
pub fn lasso_coordinate_descent(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, start: &DVector<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let norms: Vec<f64> = (0..p).map(|k| x.column(k).norm_squared() / n).collect();
    let mut b = start.clone();
    let mut resid = y - x * &b;
    for _ in 0..10_000 {
        let mut max_change: f64 = 0.0;
        for k in 0..p {
            if norms[k] == 0.0 {
                b[k] = 0.0;
                continue;
            }
            let col = x.column(k);
            let z = col.dot(&resid) / n + norms[k] * b[k];
            let new = soft_threshold(z, lambda) / norms[k];
            let change = new - b[k];
            if change != 0.0 {
                resid.axpy(-change, &col, 1.0);
                b[k] = new;
                max_change = max_change.max(change.abs() * norms[k].sqrt());
            }
        }
        if max_change < 1e-10 {
            break;
        }
    }
    b
}

struct Standardized {
    x: DMatrix<f64>,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
    y: DVector<f64>,
}

fn standardize(x: &DMatrix<f64>, y: &DVector<f64>) -> Standardized {
    let n = x.nrows() as f64;
    let mut xs = x.clone();
    let mut x_mean = Vec::with_capacity(x.ncols());
    let mut x_sd = Vec::with_capacity(x.ncols());
    for k in 0..x.ncols() {
        let mean = x.column(k).sum() / n;
        let sd = (x.column(k).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        for v in xs.column_mut(k).iter_mut() {
            *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
        }
        x_mean.push(mean);
        x_sd.push(sd);
    }
    let y_mean = y.sum() / n;
    Standardized {
        x: xs,
        x_mean,
        x_sd,
        y_mean,
        y: y.map(|v| v - y_mean),
    }
}

/// `n_lambda` values from `lambda_max` down to `1e-4 lambda_max`, log-spaced.
pub fn lambda_grid(lambda_max: f64, n_lambda: usize) -> Vec<f64> {
    if n_lambda == 1 {
        return vec![lambda_max];
    }
    (0..n_lambda)
        .map(|i| lambda_max * 10f64.powf(-4.0 * i as f64 / (n_lambda - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoCv {
    pub lambda: f64,
    /// On the standardized covariate scale.
    pub coefficients: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub cv_mse: Vec<f64>,
}

/// LASSO on standardized columns of `x`, penalty chosen by `folds`-fold
/// cross-validated MSE (row `i` in fold `i % folds`; ties go to the larger
/// penalty). Zero-variance columns get a zero coefficient.
pub fn lasso_cv(x: &DMatrix<f64>, y: &DVector<f64>, n_lambda: usize, folds: usize) -> Result<LassoCv> {
    let n = x.nrows();
    if n < folds.max(2) || y.len() != n {
        return Err(Error::InvalidInput(format!("LASSO with {n} rows and {folds} folds")));
    }
    let full = standardize(x, y);
    let lambda_max = (0..x.ncols())
        .map(|k| full.x.column(k).dot(&full.y).abs() / n as f64)
        .fold(0.0, f64::max);
    let lambdas = lambda_grid(lambda_max.max(1e-12), n_lambda);

    let mut sse = vec![0.0; lambdas.len()];
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
        let xt = x.select_rows(&train);
        let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
        let st = standardize(&xt, &yt);
        let mut b = DVector::zeros(x.ncols());
        for (l, &lambda) in lambdas.iter().enumerate() {
            b = lasso_coordinate_descent(&st.x, &st.y, lambda, &b);
            for &i in &test {
                let mut pred = st.y_mean;
                for k in 0..x.ncols() {
                    if st.x_sd[k] > 0.0 {
                        pred += b[k] * (x[(i, k)] - st.x_mean[k]) / st.x_sd[k];
                    }
                }
                sse[l] += (y[i] - pred).powi(2);
            }
        }
    }
    let cv_mse: Vec<f64> = sse.iter().map(|s| s / n as f64).collect();
    let best = (0..cv_mse.len()).fold(0, |best, l| if cv_mse[l] < cv_mse[best] { l } else { best });

    let mut b = DVector::zeros(x.ncols());
    for &lambda in &lambdas[..=best] {
        b = lasso_coordinate_descent(&full.x, &full.y, lambda, &b);
    }
    Ok(LassoCv {
        lambda: lambdas[best],
        coefficients: b.iter().copied().collect(),
        lambdas,
        cv_mse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoResult {
    /// `[g][j]`, standardized scale, length P.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    /// `[g][j][p]`: nonzero coefficient.
    pub selected: Vec<Vec<Vec<bool>>>,
    /// `[g][j]`.
    pub lambda: Vec<Vec<f64>>,
    /// Per group, covariates without variation in that group.
    pub dropped: Vec<Vec<usize>>,
}

/// Per group and coefficient, LASSO of the subject strengths on the
/// covariates (5-fold CV over 50 penalties).
pub fn lasso_covariates(
    strengths: &[Vec<f64>],
    covariates: &[Vec<f64>],
    groups: &[usize],
    exec: Execution,
) -> Result<LassoResult> {
    if strengths.len() != covariates.len() || strengths.len() != groups.len() || strengths.is_empty() {
        return Err(Error::DimensionMismatch("strengths, covariates and groups differ in length".into()));
    }
    let jn = strengths[0].len();
    let p = covariates[0].len();
    let g_total = groups.iter().max().map_or(0, |g| g + 1);
    let mut out = LassoResult {
        coefficients: Vec::new(),
        selected: Vec::new(),
        lambda: Vec::new(),
        dropped: Vec::new(),
    };
    for g in 0..g_total {
        let members: Vec<usize> = (0..groups.len()).filter(|&s| groups[s] == g).collect();
        if members.len() < 5 {
            return Err(Error::InvalidInput(format!(
                "group {} has {} subjects; LASSO cross-validation needs at least 5",
                g + 1,
                members.len()
            )));
        }
        let x = DMatrix::from_fn(members.len(), p, |i, k| covariates[members[i]][k]);
        let dropped: Vec<usize> = (0..p)
            .filter(|&k| x.column(k).iter().all(|&v| v == x[(0, k)]))
            .collect();
        for &k in &dropped {
            log::warn!("group {}: covariate {} is constant and is dropped", g + 1, k + 1);
        }
        let fits = exec::map(exec, jn, |j| {
            let y = DVector::from_iterator(members.len(), members.iter().map(|&s| strengths[s][j]));
            lasso_cv(&x, &y, 50, 5)
        });
        let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
        out.selected.push(fits.iter().map(|f| f.coefficients.iter().map(|&c| c != 0.0).collect()).collect());
        out.lambda.push(fits.iter().map(|f| f.lambda).collect());
        out.coefficients.push(fits.into_iter().map(|f| f.coefficients).collect());
        out.dropped.push(dropped);
    }
    Ok(out)
}
