//! Synthetic multi-group VAR studies with covariate-driven edge strengths.
//!
//! Coefficient `B[row, col]` with band `|row - col| <= 7` follows a function
//! of the subject covariates chosen by its band; entries outside the band are
//! zero. Function choices and signs are drawn once and shared by the groups,
//! and each group then drops each function independently.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::model::{CoefficientIndex, SubjectDataset};

/// Covariates the simulator draws: five uniform on (-1, 1) and one binary.
pub const SIM_COVARIATES: usize = 6;
pub const MAX_BAND: usize = 7;
const CONTINUOUS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub r: usize,
    pub lag: usize,
    pub t: usize,
    pub group_sizes: Vec<usize>,
    pub p: usize,
    pub noise_var: f64,
    pub init_var: f64,
    /// Variance of subject coefficients around the group function. The
    /// default 0.0064 reads the generating 0.08 as a standard deviation.
    pub subject_coef_var: f64,
    pub dropout_prob: f64,
    pub sign_flip_prob: f64,
    pub seed: u64,
    pub max_rejections: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            r: 10,
            lag: 1,
            t: 200,
            group_sizes: vec![30, 60],
            p: SIM_COVARIATES,
            noise_var: 0.5,
            init_var: 0.25,
            subject_coef_var: 0.0064,
            dropout_prob: 0.2,
            sign_flip_prob: 0.5,
            seed: 1,
            max_rejections: 1000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.r == 0 || self.lag == 0 || self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return bad("r, lag and every group size must be positive".into());
        }
        if self.t < self.lag + 2 {
            return bad(format!("t = {} is too short for lag {}", self.t, self.lag));
        }
        if self.p != SIM_COVARIATES {
            return bad(format!("the function bank uses exactly {SIM_COVARIATES} covariates, got p = {}", self.p));
        }
        for (name, v) in [("dropout_prob", self.dropout_prob), ("sign_flip_prob", self.sign_flip_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("noise_var", self.noise_var),
            ("init_var", self.init_var),
            ("subject_coef_var", self.subject_coef_var),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.max_rejections == 0 {
            return bad("max_rejections must be positive".into());
        }
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn n_coefficients(&self) -> usize {
        self.r * self.lag * self.r
    }
}

/// Generating function for one band, with the covariates it reads
/// (zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BankFunction {
    /// Band 0: 0.15.
    Constant,
    /// Band 1: 0.25 m.
    Linear { p: usize },
    /// Band 2: (1 + m)^0.4 rescaled to [-0.2, 0.2].
    Power040 { p: usize },
    /// Band 3: m^2 rescaled to [-0.2, 0.2].
    Square { p: usize },
    /// Band 4: 0.2 sin(pi m) rescaled to [-0.2, 0.2].
    Sine { p: usize },
    /// Band 5: 0.2 m_6.
    Binary,
    /// Band 6: 0.3 m_a - 0.3 m_b.
    Difference { p1: usize, p2: usize },
    /// Band 7: (1 + m)^0.7 rescaled to [-0.15, 0.35].
    Power070 { p: usize },
}

/// Affine map sending the raw range `[raw_lo, raw_hi]` onto `[lo, hi]`.
fn rescale(v: f64, raw_lo: f64, raw_hi: f64, lo: f64, hi: f64) -> f64 {
    lo + (v - raw_lo) / (raw_hi - raw_lo) * (hi - lo)
}

impl BankFunction {
    pub fn band(&self) -> usize {
        match self {
            BankFunction::Constant => 0,
            BankFunction::Linear { .. } => 1,
            BankFunction::Power040 { .. } => 2,
            BankFunction::Square { .. } => 3,
            BankFunction::Sine { .. } => 4,
            BankFunction::Binary => 5,
            BankFunction::Difference { .. } => 6,
            BankFunction::Power070 { .. } => 7,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BankFunction::Constant => "constant",
            BankFunction::Linear { .. } => "linear",
            BankFunction::Power040 { .. } => "power040",
            BankFunction::Square { .. } => "square",
            BankFunction::Sine { .. } => "sine",
            BankFunction::Binary => "binary",
            BankFunction::Difference { .. } => "difference",
            BankFunction::Power070 { .. } => "power070",
        }
    }

    /// Covariates the function depends on.
    pub fn covariates(&self) -> Vec<usize> {
        match *self {
            BankFunction::Constant => vec![],
            BankFunction::Binary => vec![CONTINUOUS],
            BankFunction::Difference { p1, p2 } => vec![p1, p2],
            BankFunction::Linear { p }
            | BankFunction::Power040 { p }
            | BankFunction::Square { p }
            | BankFunction::Sine { p }
            | BankFunction::Power070 { p } => vec![p],
        }
    }

    /// Value before any sign flip.
    pub fn eval(&self, m: &[f64]) -> f64 {
        match *self {
            BankFunction::Constant => 0.15,
            BankFunction::Linear { p } => 0.25 * m[p],
            BankFunction::Power040 { p } => {
                rescale((1.0 + m[p]).powf(0.4), 0.0, 2f64.powf(0.4), -0.2, 0.2)
            }
            BankFunction::Square { p } => rescale(m[p] * m[p], 0.0, 1.0, -0.2, 0.2),
            BankFunction::Sine { p } => rescale(0.2 * (PI * m[p]).sin(), -0.2, 0.2, -0.2, 0.2),
            BankFunction::Binary => 0.2 * m[CONTINUOUS],
            BankFunction::Difference { p1, p2 } => 0.3 * m[p1] - 0.3 * m[p2],
            BankFunction::Power070 { p } => {
                rescale((1.0 + m[p]).powf(0.7), 0.0, 2f64.powf(0.7), -0.15, 0.35)
            }
        }
    }

    fn draw(band: usize, rng: &mut impl Rng) -> Self {
        let mut pick = || rng.random_range(0..CONTINUOUS);
        match band {
            0 => BankFunction::Constant,
            1 => BankFunction::Linear { p: pick() },
            2 => BankFunction::Power040 { p: pick() },
            3 => BankFunction::Square { p: pick() },
            4 => BankFunction::Sine { p: pick() },
            5 => BankFunction::Binary,
            6 => {
                let p1 = pick();
                let mut p2 = pick();
                while p2 == p1 {
                    p2 = pick();
                }
                BankFunction::Difference { p1, p2 }
            }
            7 => BankFunction::Power070 { p: pick() },
            _ => unreachable!("band {band} has no function"),
        }
    }
}

/// The generating function of one coefficient in one group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupFunction {
    pub function: BankFunction,
    /// +1 or -1.
    pub sign: f64,
    pub dropped: bool,
}

impl GroupFunction {
    pub fn eval(&self, m: &[f64]) -> f64 {
        if self.dropped {
            0.0
        } else {
            self.sign * self.function.eval(m)
        }
    }
}

/// Ground truth of a simulated study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub r: usize,
    pub lag: usize,
    pub p: usize,
    /// `[g][j]`; `None` outside the band.
    pub functions: Vec<Vec<Option<GroupFunction>>>,
    /// `[s][j]`.
    pub subject_coefs: Vec<Vec<f64>>,
}

impl SimTruth {
    pub fn n_groups(&self) -> usize {
        self.functions.len()
    }

    pub fn n_coefficients(&self) -> usize {
        self.r * self.lag * self.r
    }

    pub fn band(&self, j: usize) -> usize {
        band_of(j, self.r, self.lag)
    }

    pub fn true_edge(&self, g: usize, j: usize) -> bool {
        matches!(self.functions[g][j], Some(f) if !f.dropped)
    }

    pub fn true_edges(&self) -> Vec<Vec<bool>> {
        (0..self.n_groups())
            .map(|g| (0..self.n_coefficients()).map(|j| self.true_edge(g, j)).collect())
            .collect()
    }

    /// `[g][j][p]`.
    pub fn true_covariate_effects(&self) -> Vec<Vec<Vec<bool>>> {
        (0..self.n_groups())
            .map(|g| {
                (0..self.n_coefficients())
                    .map(|j| {
                        let mut row = vec![false; self.p];
                        if let Some(f) = self.functions[g][j].filter(|f| !f.dropped) {
                            for q in f.function.covariates() {
                                row[q] = true;
                            }
                        }
                        row
                    })
                    .collect()
            })
            .collect()
    }

    /// True group-level edge strength for covariates `m`.
    pub fn group_value(&self, g: usize, j: usize, m: &[f64]) -> f64 {
        self.functions[g][j].map_or(0.0, |f| f.eval(m))
    }
}

/// `|row - target|` of a flat coefficient index.
pub fn band_of(j: usize, r: usize, lag: usize) -> usize {
    let idx = CoefficientIndex::unflatten(j, r, lag).expect("flat index in range");
    idx.row(r).abs_diff(idx.target)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_COVARIATES: u64 = 1;
const STREAM_FUNCTIONS: u64 = 2;
const STREAM_SUBJECTS: u64 = 1 << 20;

/// `n x 6` covariates: columns 1-5 uniform on (-1, 1), column 6 Bernoulli(0.5).
pub fn sample_covariates(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_for(seed, STREAM_COVARIATES);
    let unif = Uniform::new(-1.0, 1.0).expect("valid range");
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let mut m = DMatrix::zeros(n, SIM_COVARIATES);
    for i in 0..n {
        for c in 0..CONTINUOUS {
            m[(i, c)] = unif.sample(&mut rng);
        }
        m[(i, CONTINUOUS)] = if coin.sample(&mut rng) { 1.0 } else { 0.0 };
    }
    m
}

/// Draws the band functions, signs and per-group dropout. The returned truth
/// has no subject coefficients yet.
pub fn build_group_functions(sim: &SimConfig, seed: u64) -> Result<SimTruth> {
    sim.validate()?;
    let mut rng = rng_for(seed, STREAM_FUNCTIONS);
    let flip = Bernoulli::new(sim.sign_flip_prob).expect("validated");
    let drop = Bernoulli::new(sim.dropout_prob).expect("validated");
    let jn = sim.n_coefficients();
    let shared: Vec<Option<(BankFunction, f64)>> = (0..jn)
        .map(|j| {
            let band = band_of(j, sim.r, sim.lag);
            (band <= MAX_BAND).then(|| {
                let f = BankFunction::draw(band, &mut rng);
                let sign = if flip.sample(&mut rng) { -1.0 } else { 1.0 };
                (f, sign)
            })
        })
        .collect();
    let functions = (0..sim.group_sizes.len())
        .map(|_| {
            shared
                .iter()
                .map(|slot| {
                    slot.map(|(function, sign)| GroupFunction {
                        function,
                        sign,
                        dropped: drop.sample(&mut rng),
                    })
                })
                .collect()
        })
        .collect();
    Ok(SimTruth {
        r: sim.r,
        lag: sim.lag,
        p: sim.p,
        functions,
        subject_coefs: Vec::new(),
    })
}

/// One subject's coefficient vector: `N(f_g(m), subject_coef_var)` for every
/// in-band entry, exactly zero elsewhere.
pub fn sample_subject_coefs(
    truth: &SimTruth,
    group: usize,
    covariates: &[f64],
    sim: &SimConfig,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let sd = sim.subject_coef_var.sqrt();
    truth.functions[group]
        .iter()
        .map(|slot| match slot {
            Some(f) => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                f.eval(covariates) + sd * z
            }
            None => 0.0,
        })
        .collect()
}

/// VAR companion matrix for the row-vector form `x_t = [x_{t-1} .. x_{t-L}] B`.
pub fn companion(b: &DMatrix<f64>, lag: usize) -> DMatrix<f64> {
    let r = b.ncols();
    let n = r * lag;
    let mut c = DMatrix::zeros(n, n);
    c.view_mut((0, 0), (n, r)).copy_from(b);
    for k in 1..lag {
        for i in 0..r {
            c[((k - 1) * r + i, k * r + i)] = 1.0;
        }
    }
    c
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Whether the VAR with `RL x R` coefficients `b` is stationary.
pub fn is_stationary(b: &DMatrix<f64>, lag: usize) -> bool {
    spectral_radius(&companion(b, lag)) < 1.0
}

/// Runs the recursion from given initial rows and innovations.
pub fn propagate(b: &DMatrix<f64>, lag: usize, initial: &DMatrix<f64>, innovations: &DMatrix<f64>) -> DMatrix<f64> {
    let r = b.ncols();
    let t = initial.nrows() + innovations.nrows();
    let mut x = DMatrix::zeros(t, r);
    x.rows_mut(0, lag).copy_from(initial);
    for row in lag..t {
        let mut next = innovations.row(row - lag).into_owned();
        for k in 0..lag {
            next += x.row(row - 1 - k) * b.rows(k * r, r);
        }
        x.set_row(row, &next);
    }
    x
}

/// `T x R` series: the first `L` rows from `N(0, init_var I)`, then
/// `x_t = u_t B + e_t` with `e_t ~ N(0, noise_var I)`.
pub fn generate_series(b: &DMatrix<f64>, sim: &SimConfig, rng: &mut impl Rng) -> DMatrix<f64> {
    let r = b.ncols();
    let init = Normal::new(0.0, sim.init_var.sqrt()).expect("validated");
    let noise = Normal::new(0.0, sim.noise_var.sqrt()).expect("validated");
    let initial = DMatrix::from_fn(sim.lag, r, |_, _| init.sample(rng));
    let innovations = DMatrix::from_fn(sim.t - sim.lag, r, |_, _| noise.sample(rng));
    propagate(b, sim.lag, &initial, &innovations)
}

fn simulate_subject(
    s: usize,
    group: usize,
    covariates: Vec<f64>,
    truth: &SimTruth,
    sim: &SimConfig,
) -> Result<(SubjectDataset, Vec<f64>)> {
    let mut rng = rng_for(sim.seed, STREAM_SUBJECTS + s as u64);
    for _ in 0..sim.max_rejections {
        let coefs = sample_subject_coefs(truth, group, &covariates, sim, &mut rng);
        let b = DMatrix::from_column_slice(sim.r * sim.lag, sim.r, &coefs);
        if is_stationary(&b, sim.lag) {
            let series = generate_series(&b, sim, &mut rng);
            return Ok((SubjectDataset::new(s + 1, series, covariates, group)?, coefs));
        }
    }
    Err(Error::StationarityRejections {
        subject: s + 1,
        attempts: sim.max_rejections,
    })
}

/// The full simulation protocol. Subjects are numbered from 1 and ordered by
/// group.
pub fn simulate_study(sim: &SimConfig) -> Result<(Vec<SubjectDataset>, SimTruth)> {
    simulate_study_with(sim, Execution::Parallel)
}

pub fn simulate_study_with(sim: &SimConfig, exec: Execution) -> Result<(Vec<SubjectDataset>, SimTruth)> {
    sim.validate()?;
    let mut truth = build_group_functions(sim, sim.seed)?;
    let n = sim.n_subjects();
    let m = sample_covariates(n, sim.seed);
    let groups: Vec<usize> = sim
        .group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &size)| std::iter::repeat_n(g, size))
        .collect();
    let subjects = exec::map(exec, n, |s| {
        let cov: Vec<f64> = m.row(s).iter().copied().collect();
        simulate_subject(s, groups[s], cov, &truth, sim)
    });
    let mut data = Vec::with_capacity(n);
    let mut coefs = Vec::with_capacity(n);
    for item in subjects {
        let (d, c) = item?;
        data.push(d);
        coefs.push(c);
    }
    truth.subject_coefs = coefs;
    Ok((data, truth))
}

/// Subject coefficients as an `RL x R` matrix.
pub fn coefficient_matrix(coefs: &[f64], r: usize, lag: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(r * lag, r, coefs)
}

/// Dense evaluation grid on [-1, 1].
pub fn dense_grid(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| -1.0 + 2.0 * i as f64 / (n - 1).max(1) as f64)
}
