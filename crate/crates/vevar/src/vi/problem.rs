use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::kernel::{gram, GramMatrix, KernelParams, SpectralGram};
use crate::model::{build_lagged_design, ModelConfig, SubjectDataset};

/// Sufficient statistics of one subject's lagged regression.
#[derive(Debug, Clone)]
pub struct SubjectStats {
    pub subject_id: usize,
    pub group: usize,
    /// Position of the subject within its group's covariate grid.
    pub slot: usize,
    pub n_obs: usize,
    /// `U^T U`, `RL x RL`.
    pub utu: DMatrix<f64>,
    /// `U^T X`, `RL x R`.
    pub utx: DMatrix<f64>,
    /// Column sums of squares of `X`.
    pub xtx: DVector<f64>,
}

/// Subjects of one group, in dataset order, with the per-covariate kernels
/// over their covariate values.
#[derive(Debug, Clone)]
pub struct GroupLayout {
    pub members: Vec<usize>,
    pub grids: Vec<Vec<f64>>,
    pub grams: Vec<GramMatrix>,
    pub spectra: Vec<SpectralGram>,
}

impl GroupLayout {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// A dataset bound to a model configuration: designs, kernels and layout are
/// computed once and shared by every fit on it.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ModelConfig,
    pub subjects: Vec<SubjectStats>,
    pub groups: Vec<GroupLayout>,
    pub exec: Execution,
}

impl Problem {
    /// `config` dimensions left at zero are taken from the data. Covariates
    /// are used as given; rescale them beforehand.
    pub fn new(mut config: ModelConfig, data: &[SubjectDataset], exec: Execution) -> Result<Self> {
        config.resolve_dims(data)?;
        config.validate()?;
        let (r, l, g, p) = (config.r, config.lag, config.g, config.p);

        let mut members = vec![Vec::new(); g];
        for (i, s) in data.iter().enumerate() {
            members[s.group].push(i);
        }
        if let Some(empty) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::EmptyGroup(empty + 1));
        }
        let mut slots = vec![0; data.len()];
        for m in &members {
            for (k, &i) in m.iter().enumerate() {
                slots[i] = k;
            }
        }

        let subjects = data
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let d = build_lagged_design(s, l)?;
                let utu = d.u.tr_mul(&d.u);
                if let Some(k) = (0..r * l).find(|&k| !(utu[(k, k)] > 0.0)) {
                    return Err(Error::InvalidInput(format!(
                        "subject {}: degenerate design, lagged column {} is identically zero",
                        s.subject_id,
                        k + 1
                    )));
                }
                Ok(SubjectStats {
                    subject_id: s.subject_id,
                    group: s.group,
                    slot: slots[i],
                    n_obs: d.n_obs(),
                    utx: d.u.tr_mul(&d.x),
                    xtx: DVector::from_iterator(r, d.x.column_iter().map(|c| c.norm_squared())),
                    utu,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let kernel = KernelParams::new(
            config.kernel_lengthscale,
            config.kernel_variance,
            config.kernel_jitter * config.kernel_variance,
        )?;
        let groups = members
            .into_iter()
            .map(|members| {
                let grids: Vec<Vec<f64>> = (0..p)
                    .map(|q| members.iter().map(|&i| data[i].covariates[q]).collect())
                    .collect();
                let grams: Vec<GramMatrix> = grids.iter().map(|grid| gram(grid, &kernel)).collect();
                let spectra = grams
                    .iter()
                    .map(SpectralGram::new)
                    .collect::<Result<Vec<_>>>()?;
                Ok(GroupLayout {
                    members,
                    grids,
                    grams,
                    spectra,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            config,
            subjects,
            groups,
            exec,
        })
    }

    pub fn n_coefficients(&self) -> usize {
        self.config.n_coefficients()
    }

    /// Length of each target block of the coefficient vector (`RL`).
    pub fn block_len(&self) -> usize {
        self.config.r * self.config.lag
    }

    pub fn uses_covariates(&self) -> bool {
        !self.config.intercept_only && self.config.p > 0
    }
}
