//! Covariance kernels and Gram matrices for the GP priors on covariate
//! effect functions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// A stationary covariance function on scalar covariates.
pub trait Kernel: Send + Sync {
    fn eval(&self, x: f64, y: f64) -> f64;

    /// Value at zero distance.
    fn variance(&self) -> f64;
}

/// Squared-exponential kernel `variance * exp(-(x - y)^2 / (2 l^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub lengthscale: f64,
    pub variance: f64,
    /// Added to the Gram diagonal.
    pub jitter: f64,
}

impl KernelParams {
    pub fn new(lengthscale: f64, variance: f64, jitter: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && variance > 0.0 && jitter >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "kernel needs l > 0, variance > 0, jitter >= 0 (got {lengthscale}, {variance}, {jitter})"
            )));
        }
        Ok(Self {
            lengthscale,
            variance,
            jitter,
        })
    }
}

impl Kernel for KernelParams {
    fn eval(&self, x: f64, y: f64) -> f64 {
        se_kernel(x, y, self)
    }

    fn variance(&self) -> f64 {
        self.variance
    }
}

pub fn se_kernel(x: f64, y: f64, params: &KernelParams) -> f64 {
    let d = x - y;
    params.variance * (-d * d / (2.0 * params.lengthscale * params.lengthscale)).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub k: DMatrix<f64>,
    pub grid: Vec<f64>,
}

/// Gram matrix of `params` over `grid`, jitter on the diagonal.
pub fn gram(grid: &[f64], params: &KernelParams) -> GramMatrix {
    gram_with(grid, params, params.jitter)
}

pub fn gram_with<K: Kernel + ?Sized>(grid: &[f64], kernel: &K, jitter: f64) -> GramMatrix {
    let n = grid.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = kernel.eval(grid[i], grid[i]) + jitter;
        for j in 0..i {
            let v = kernel.eval(grid[i], grid[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    GramMatrix {
        k,
        grid: grid.to_vec(),
    }
}

/// Solves `K X = B` through a Cholesky factorization of `K`.
pub fn stable_inverse_solve(k: &GramMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k.k.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "Gram {}x{} against right-hand side with {} rows",
            k.k.nrows(),
            k.k.ncols(),
            b.nrows()
        )));
    }
    let chol = k.k.clone().cholesky().ok_or_else(|| {
        Error::Factorization(format!(
            "Gram matrix of size {} is not positive definite; increase the jitter",
            k.k.nrows()
        ))
    })?;
    Ok(chol.solve(b))
}

/// Eigendecomposition `K = Q diag(lambda) Q^T` of a Gram matrix.
///
/// Every variational covariance over a grid is kept in this basis: the
/// optimal `q(phi)` covariance is always `Q diag(d) Q^T` for some positive
/// `d`, which makes updates and KL terms O(n^2).
#[derive(Debug, Clone)]
pub struct SpectralGram {
    pub eigvecs: DMatrix<f64>,
    pub eigvals: DVector<f64>,
    /// Row-wise squares of `eigvecs`, for diagonal extraction.
    sq: DMatrix<f64>,
}

impl SpectralGram {
    pub fn new(k: &GramMatrix) -> Result<Self> {
        let eig = SymmetricEigen::new(k.k.clone());
        if let Some(min) = eig.eigenvalues.iter().copied().reduce(f64::min) {
            if !(min > 0.0) {
                return Err(Error::Factorization(format!(
                    "Gram matrix has eigenvalue {min}; increase the jitter"
                )));
            }
        }
        let sq = eig.eigenvectors.map(|v| v * v);
        Ok(Self {
            eigvecs: eig.eigenvectors,
            eigvals: eig.eigenvalues,
            sq,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigvals.len()
    }

    /// `Q^T v`.
    pub fn to_basis(&self, v: &DVector<f64>) -> DVector<f64> {
        self.eigvecs.tr_mul(v)
    }

    /// `Q c`.
    pub fn from_basis(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.eigvecs * c
    }

    /// Diagonal of `Q diag(d) Q^T`.
    pub fn diag_of(&self, d: &DVector<f64>) -> DVector<f64> {
        &self.sq * d
    }

    /// Dense `Q diag(d) Q^T`.
    pub fn dense(&self, d: &DVector<f64>) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, k| self.eigvecs[(i, k)] * d[k]);
        scaled * self.eigvecs.transpose()
    }

    pub fn ln_det(&self) -> f64 {
        self.eigvals.iter().map(|v| v.ln()).sum()
    }
}
