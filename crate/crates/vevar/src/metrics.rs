//! Selection scoring against a known truth and aggregation over replicates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{SimTruth, MAX_BAND};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// Elementwise confusion counts of `selected` against `truth`.
pub fn score(selected: &[bool], truth: &[bool]) -> Result<ConfusionCounts> {
    if selected.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} selections scored against {} truth labels",
            selected.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&s, &t) in selected.iter().zip(truth) {
        match (s, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Metrics whose denominator was zero; the value is then reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFlags {
    pub tpr: bool,
    pub fpr: bool,
    pub mcc: bool,
    pub f1: bool,
    pub acc: bool,
}

impl ScoreFlags {
    pub fn any(&self) -> bool {
        self.tpr || self.fpr || self.mcc || self.f1 || self.acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionScores {
    pub tpr: f64,
    pub fpr: f64,
    pub mcc: f64,
    pub f1: f64,
    pub acc: f64,
    pub flags: ScoreFlags,
}

fn ratio(num: f64, den: f64, flag: &mut bool) -> f64 {
    if den == 0.0 {
        *flag = true;
        0.0
    } else {
        num / den
    }
}

/// TPR, FPR, MCC (standard form, square root in the denominator), F1 and
/// accuracy.
pub fn compute_scores(c: &ConfusionCounts) -> SelectionScores {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let mut flags = ScoreFlags::default();
    let tpr = ratio(tp, tp + fn_, &mut flags.tpr);
    let fpr = ratio(fp, fp + tn, &mut flags.fpr);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn_, &mut flags.f1);
    let acc = ratio(tp + tn, tp + tn + fp + fn_, &mut flags.acc);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = ratio(tp * tn - fp * fn_, den, &mut flags.mcc);
    SelectionScores {
        tpr,
        fpr,
        mcc,
        f1,
        acc,
        flags,
    }
}

/// Per-metric means over replicates; flagged values are left out of their
/// metric's mean and `n_*` counts the values used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScores {
    pub tpr: f64,
    pub fpr: f64,
    pub mcc: f64,
    pub f1: f64,
    pub acc: f64,
    pub n_tpr: usize,
    pub n_fpr: usize,
    pub n_mcc: usize,
    pub n_f1: usize,
    pub n_acc: usize,
    pub replicates: usize,
}

pub fn aggregate_replicates(scores: &[SelectionScores]) -> Result<AggregateScores> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no replicates to aggregate".into()));
    }
    let mean = |get: &dyn Fn(&SelectionScores) -> (f64, bool)| {
        let used: Vec<f64> = scores.iter().map(get).filter(|(_, f)| !f).map(|(v, _)| v).collect();
        let m = if used.is_empty() { 0.0 } else { used.iter().sum::<f64>() / used.len() as f64 };
        (m, used.len())
    };
    let (tpr, n_tpr) = mean(&|s| (s.tpr, s.flags.tpr));
    let (fpr, n_fpr) = mean(&|s| (s.fpr, s.flags.fpr));
    let (mcc, n_mcc) = mean(&|s| (s.mcc, s.flags.mcc));
    let (f1, n_f1) = mean(&|s| (s.f1, s.flags.f1));
    let (acc, n_acc) = mean(&|s| (s.acc, s.flags.acc));
    Ok(AggregateScores {
        tpr,
        fpr,
        mcc,
        f1,
        acc,
        n_tpr,
        n_fpr,
        n_mcc,
        n_f1,
        n_acc,
        replicates: scores.len(),
    })
}

/// Recovery of the true edges generated by one band of the function bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandRecovery {
    pub band: usize,
    pub n_true: usize,
    pub n_found: usize,
}

impl BandRecovery {
    /// `None` when the band has no true edge.
    pub fn tpr(&self) -> Option<f64> {
        (self.n_true > 0).then(|| self.n_found as f64 / self.n_true as f64)
    }
}

/// Bands 1..=7 of group `g`; `selected` is indexed by flat coefficient.
pub fn function_bank_tpr(selected: &[bool], truth: &SimTruth, g: usize) -> Result<Vec<BandRecovery>> {
    if selected.len() != truth.n_coefficients() || g >= truth.n_groups() {
        return Err(Error::DimensionMismatch(format!(
            "{} edge selections for group {} against truth with {} coefficients and {} groups",
            selected.len(),
            g + 1,
            truth.n_coefficients(),
            truth.n_groups()
        )));
    }
    let mut out: Vec<BandRecovery> = (1..=MAX_BAND)
        .map(|band| BandRecovery {
            band,
            n_true: 0,
            n_found: 0,
        })
        .collect();
    for (j, &sel) in selected.iter().enumerate() {
        let band = truth.band(j);
        if band == 0 || band > MAX_BAND || !truth.true_edge(g, j) {
            continue;
        }
        let slot = &mut out[band - 1];
        slot.n_true += 1;
        slot.n_found += usize::from(sel);
    }
    Ok(out)
}

/// Mean squared error of estimated group functions over the chosen edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionMse {
    pub mse: f64,
    pub n_edges: usize,
    /// No edge qualified; `mse` is 0.
    pub empty: bool,
}

/// `estimated[j]` and `truth[j]` hold one edge's function at each subject of
/// the group. With `selected_only`, edges with `selected[j]` false are
/// skipped; `include` further restricts the edges (e.g. to one band).
pub fn group_function_mse(
    estimated: &[Vec<f64>],
    truth: &[Vec<f64>],
    selected: &[bool],
    selected_only: bool,
    include: impl Fn(usize) -> bool,
) -> Result<FunctionMse> {
    if estimated.len() != truth.len() || estimated.len() != selected.len() {
        return Err(Error::DimensionMismatch("group function tables are not aligned".into()));
    }
    let mut total = 0.0;
    let mut n_edges = 0;
    for j in 0..estimated.len() {
        if (selected_only && !selected[j]) || !include(j) {
            continue;
        }
        let (e, t) = (&estimated[j], &truth[j]);
        if e.len() != t.len() || e.is_empty() {
            return Err(Error::DimensionMismatch(format!("edge {}: grids differ in length", j + 1)));
        }
        total += e.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / e.len() as f64;
        n_edges += 1;
    }
    Ok(FunctionMse {
        mse: if n_edges > 0 { total / n_edges as f64 } else { 0.0 },
        n_edges,
        empty: n_edges == 0,
    })
}

/// True group functions `[j][member]` for group `g` at the given member
/// covariates.
pub fn true_group_functions(truth: &SimTruth, g: usize, member_covariates: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..truth.n_coefficients())
        .map(|j| member_covariates.iter().map(|m| truth.group_value(g, j, m)).collect())
        .collect()
}
