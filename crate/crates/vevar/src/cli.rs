//! Command-line surface: simulate, fit, baseline, score and sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baselines::{gc_fit, lasso_covariates};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::io::{self, ColumnScaling, CovariateKind, RunManifest, SubjectRow};
use crate::metrics::{
    aggregate_replicates, compute_scores, function_bank_tpr, group_function_mse, score, BandRecovery, FunctionMse,
    SelectionScores,
};
use crate::model::{ModelConfig, SubjectDataset};
use crate::selector::{interpolate_covariate_effect, FitResult, Thresholds};
use crate::sim::{dense_grid, simulate_study_with, SimConfig, SimTruth};
use crate::vi::{fit_prioritized, FitOptions, Problem, VariationalState};

pub const THREADS_ENV: &str = "VEVAR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "vevar", version, about = "Varying-effects VAR network estimation")]
pub struct Cli {
    /// Worker threads; VEVAR_THREADS takes precedence.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a study: series, subjects.csv, truth.
    Simulate(SimulateArgs),
    /// Fit the model to a dataset directory.
    Fit(FitArgs),
    /// Per-subject OLS with group t-tests, then LASSO on covariates.
    Baseline(BaselineArgs),
    /// Score a fit or baseline directory against a truth file.
    Score(ScoreArgs),
    /// Sensitivity table over one prior parameter.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// JSON simulation config; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON fit config; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub intercept_only: bool,
    /// Inclusion-probability cutoff for edges and covariate effects.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
    /// Recorded in the manifest; the fit itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage2 {
    Lasso,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "lasso")]
    pub stage2: Stage2,
    #[arg(long, default_value_t = 0.05)]
    pub fdr_q: f64,
    #[arg(long, default_value_t = 1)]
    pub lag: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Output directory of `fit` or `baseline`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Covariate table; defaults to subjects.csv beside the truth file.
    #[arg(long)]
    pub subjects: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// JSON sweep base config; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// One of pi_delta, pi_phi, kernel_variance.
    #[arg(long)]
    pub parameter: String,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
}

/// Contents of the `fit` config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub model: ModelConfig,
    pub options: FitOptions,
    pub thresholds: Thresholds,
    /// Per covariate column; empty means all `auto`.
    pub covariate_kinds: Vec<CovariateKind>,
    /// Dense-grid points for covariate curves; 0 writes none.
    pub curve_points: usize,
}

/// Contents of the `sweep` config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sim: SimConfig,
    pub fit: FitConfig,
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), io::read_json)
}

fn snapshot<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn cmd_simulate(args: &SimulateArgs, exec: Execution) -> Result<RunManifest> {
    let mut sim: SimConfig = load_or_default(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        sim.seed = seed;
    }
    sim.validate()?;
    let manifest = RunManifest::start("simulate", snapshot(&sim), Some(sim.seed));
    let (data, truth) = simulate_study_with(&sim, exec)?;
    let mut outputs = io::write_dataset(&args.out, &data)?;
    let groups: Vec<usize> = data.iter().map(|s| s.group).collect();
    let ids: Vec<usize> = data.iter().map(|s| s.subject_id).collect();
    outputs.extend(io::write_truth(&args.out, &truth, &groups, &ids)?);
    manifest.finish(&args.out, &outputs)
}

/// A fit with the covariate scaling that preceded it.
pub struct FitOutcome {
    pub problem: Problem,
    pub state: VariationalState,
    pub result: FitResult,
    pub scaling: Vec<ColumnScaling>,
}

/// Rescales covariates, then runs the prioritized fit and selection.
pub fn run_fit(mut data: Vec<SubjectDataset>, cfg: &FitConfig, exec: Execution) -> Result<FitOutcome> {
    cfg.thresholds.validate()?;
    let scaling = io::rescale_covariates(&mut data, &cfg.covariate_kinds)?;
    let problem = Problem::new(cfg.model.clone(), &data, exec)?;
    let (state, trace, _) = fit_prioritized(&problem, &cfg.options)?;
    let result = FitResult::new(&problem, &state, trace, cfg.thresholds)?;
    Ok(FitOutcome {
        problem,
        state,
        result,
        scaling,
    })
}

pub fn cmd_fit(args: &FitArgs, exec: Execution) -> Result<RunManifest> {
    let mut cfg: FitConfig = load_or_default(args.config.as_deref())?;
    if args.intercept_only {
        cfg.model.intercept_only = true;
    }
    if let Some(t) = args.threshold {
        cfg.thresholds = Thresholds {
            edge: t,
            covariate: t,
        };
    }
    if let Some(n) = args.max_sweeps {
        cfg.options.max_sweeps = n;
    }
    cfg.thresholds.validate()?;
    let data = io::read_dataset(&args.data)?;
    let mut manifest = RunManifest::start("fit", serde_json::Value::Null, args.seed);
    manifest.dataset_hashes = io::dataset_hashes(&args.data, &data)?;

    let fit = run_fit(data, &cfg, exec)?;
    let result = &fit.result;
    io::create_dir(&args.out)?;
    let mut outputs = io::write_fit_result(&args.out, result)?;
    if cfg.curve_points > 0 {
        let xs: Vec<f64> = dense_grid(cfg.curve_points).iter().copied().collect();
        let mut curves = Vec::new();
        for (g, edges) in result.covariate_effects.iter().enumerate() {
            for (j, covs) in edges.iter().enumerate() {
                for (p, _) in covs.iter().enumerate().filter(|(_, &sel)| sel) {
                    let values = interpolate_covariate_effect(&fit.problem, &fit.state, g, j, p, &xs)?;
                    curves.push((g, j, p, xs.clone(), values));
                }
            }
        }
        outputs.push(io::write_curves(&args.out, &curves, result.config.r, result.config.lag)?);
    }
    cfg.model = result.config.clone();
    manifest.config = serde_json::json!({ "fit": snapshot(&cfg), "covariate_scaling": snapshot(&fit.scaling) });
    manifest.converged = Some(result.elbo.converged);
    if !result.elbo.converged {
        manifest.notes.push(format!("not converged after {} sweeps", result.elbo.sweeps));
    }
    manifest.finish(&args.out, &outputs)
}

pub fn cmd_baseline(args: &BaselineArgs, exec: Execution) -> Result<RunManifest> {
    if !(args.fdr_q > 0.0 && args.fdr_q < 1.0) {
        return Err(Error::OutOfRange(format!("fdr-q must lie in (0, 1), got {}", args.fdr_q)));
    }
    let data = io::read_dataset(&args.data)?;
    let mut manifest = RunManifest::start(
        "baseline",
        serde_json::json!({ "stage2": args.stage2, "fdr_q": args.fdr_q, "lag": args.lag }),
        None,
    );
    manifest.dataset_hashes = io::dataset_hashes(&args.data, &data)?;
    let gc = gc_fit(&data, args.lag, args.fdr_q, exec)?;
    let r = data[0].n_nodes();
    io::create_dir(&args.out)?;
    let mut outputs = io::write_gc_result(&args.out, &gc, &data, r, args.lag)?;
    if !gc.ridge_fallback.is_empty() {
        manifest.notes.push(format!("ridge fallback for subjects {:?}", gc.ridge_fallback));
    }
    if args.stage2 == Stage2::Lasso {
        let covariates: Vec<Vec<f64>> = data.iter().map(|s| s.covariates.clone()).collect();
        let groups: Vec<usize> = data.iter().map(|s| s.group).collect();
        let lasso = lasso_covariates(&gc.subject_coefs, &covariates, &groups, exec)?;
        for (g, dropped) in lasso.dropped.iter().enumerate().filter(|(_, d)| !d.is_empty()) {
            let cols: Vec<usize> = dropped.iter().map(|k| k + 1).collect();
            manifest.notes.push(format!("group {}: constant covariates {cols:?} dropped", g + 1));
        }
        outputs.push(io::write_lasso_result(&args.out, &lasso, r, args.lag)?);
    }
    manifest.finish(&args.out, &outputs)
}

/// Scores of one fit against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// Per group.
    pub edges: Vec<SelectionScores>,
    pub edges_selected: Vec<usize>,
    pub covariates: Option<Vec<SelectionScores>>,
    pub bands: Vec<Vec<BandRecovery>>,
    /// Per group: all selected edges, then selected band-1 edges.
    pub mse: Option<Vec<[FunctionMse; 2]>>,
}

/// `[g][j]` edges, optional `[g][j][p]` covariate effects, and optional
/// group-function values keyed by `(g, j, subject_id)` for the subjects in
/// `subjects` (raw covariates).
pub fn score_report(
    truth: &SimTruth,
    edges: &[Vec<bool>],
    covariates: Option<&[Vec<Vec<bool>>]>,
    group_functions: Option<&BTreeMap<(usize, usize, usize), f64>>,
    subjects: &[SubjectRow],
) -> Result<ScoreReport> {
    let n_groups = truth.n_groups();
    let jn = truth.n_coefficients();
    if edges.len() != n_groups || edges.iter().any(|e| e.len() != jn) {
        return Err(Error::DimensionMismatch(format!(
            "selections do not match the truth's {n_groups} groups x {jn} coefficients"
        )));
    }
    let true_edges = truth.true_edges();
    let true_cov = truth.true_covariate_effects();
    let mut report = ScoreReport {
        edges: Vec::new(),
        edges_selected: Vec::new(),
        covariates: covariates.map(|_| Vec::new()),
        bands: Vec::new(),
        mse: group_functions.map(|_| Vec::new()),
    };
    for g in 0..n_groups {
        report.edges.push(compute_scores(&score(&edges[g], &true_edges[g])?));
        report.edges_selected.push(edges[g].iter().filter(|&&b| b).count());
        if let (Some(cov), Some(out)) = (covariates, report.covariates.as_mut()) {
            if cov[g].len() != jn || cov[g].iter().any(|c| c.len() != truth.p) {
                return Err(Error::DimensionMismatch("covariate selections do not match the truth".into()));
            }
            let sel: Vec<bool> = cov[g].iter().flatten().copied().collect();
            let tru: Vec<bool> = true_cov[g].iter().flatten().copied().collect();
            out.push(compute_scores(&score(&sel, &tru)?));
        }
        report.bands.push(function_bank_tpr(&edges[g], truth, g)?);
        if let (Some(gf), Some(out)) = (group_functions, report.mse.as_mut()) {
            let members: Vec<&SubjectRow> = subjects.iter().filter(|s| s.group == g).collect();
            let mut est = Vec::with_capacity(jn);
            let mut tru = Vec::with_capacity(jn);
            for j in 0..jn {
                let mut e = Vec::with_capacity(members.len());
                for m in &members {
                    e.push(*gf.get(&(g, j, m.subject_id)).ok_or_else(|| {
                        Error::DimensionMismatch(format!(
                            "no group function value for group {}, j {}, subject {}",
                            g + 1,
                            j + 1,
                            m.subject_id
                        ))
                    })?);
                }
                est.push(e);
                tru.push(members.iter().map(|m| truth.group_value(g, j, &m.covariates)).collect());
            }
            let all = group_function_mse(&est, &tru, &edges[g], true, |_| true)?;
            let band1 = group_function_mse(&est, &tru, &edges[g], true, |j| truth.band(j) == 1 && true_edges[g][j])?;
            out.push([all, band1]);
        }
    }
    Ok(report)
}

/// Group-function values of a fit keyed by `(g, j, subject_id)`.
pub fn group_function_map(fit: &FitResult) -> BTreeMap<(usize, usize, usize), f64> {
    let mut map = BTreeMap::new();
    for (g, rows) in fit.group_functions.iter().enumerate() {
        for (j, values) in rows.iter().enumerate() {
            for (k, &v) in values.iter().enumerate() {
                map.insert((g, j, fit.members[g][k]), v);
            }
        }
    }
    map
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn score_row(what: &str, g: usize, s: &SelectionScores) -> Vec<String> {
    let f = s.flags;
    let flagged: Vec<&str> = [("tpr", f.tpr), ("fpr", f.fpr), ("mcc", f.mcc), ("f1", f.f1), ("acc", f.acc)]
        .iter()
        .filter(|(_, b)| *b)
        .map(|(n, _)| *n)
        .collect();
    vec![
        what.to_string(),
        (g + 1).to_string(),
        s.tpr.to_string(),
        s.fpr.to_string(),
        s.mcc.to_string(),
        s.f1.to_string(),
        s.acc.to_string(),
        flagged.join(";"),
    ]
}

pub fn cmd_score(args: &ScoreArgs) -> Result<RunManifest> {
    let subjects_path = match &args.subjects {
        Some(p) => p.clone(),
        None => args
            .truth
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(io::SUBJECTS_FILE),
    };
    let subjects = io::read_subjects_table(&subjects_path)?;
    let p = subjects.first().map_or(0, |s| s.covariates.len());
    let truth = io::read_truth(&args.truth, p)?;
    let sel = io::read_selections(&args.fit, truth.n_groups(), truth.n_coefficients(), p)?;
    let report = score_report(
        &truth,
        &sel.edges,
        sel.covariates.as_deref(),
        sel.group_functions.as_ref(),
        &subjects,
    )?;

    let mut manifest = RunManifest::start(
        "score",
        serde_json::json!({ "fit": args.fit, "truth": args.truth, "subjects": subjects_path }),
        None,
    );
    for path in [&args.truth, &subjects_path] {
        let name = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        manifest.dataset_hashes.insert(name, io::sha256_file(path)?);
    }
    io::create_dir(&args.out)?;
    let mut rows = Vec::new();
    for (g, s) in report.edges.iter().enumerate() {
        rows.push(score_row("edges", g, s));
    }
    for (g, s) in report.covariates.iter().flatten().enumerate() {
        rows.push(score_row("covariates", g, s));
    }
    let header = ["target", "group", "tpr", "fpr", "mcc", "f1", "acc", "flagged"];
    let mut outputs = vec![io::write_table(&args.out.join("scores.csv"), &header, &rows)?];

    let rows: Vec<Vec<String>> = report
        .bands
        .iter()
        .enumerate()
        .flat_map(|(g, bands)| {
            bands.iter().map(move |b| {
                vec![
                    (g + 1).to_string(),
                    b.band.to_string(),
                    b.n_true.to_string(),
                    b.n_found.to_string(),
                    fmt_opt(b.tpr()),
                ]
            })
        })
        .collect();
    outputs.push(io::write_table(
        &args.out.join("band_tpr.csv"),
        &["group", "band", "n_true", "n_found", "tpr"],
        &rows,
    )?);

    match &report.mse {
        Some(mse) => {
            let mut rows = Vec::new();
            for (g, pair) in mse.iter().enumerate() {
                for (label, m) in ["all", "band1"].iter().zip(pair) {
                    rows.push(vec![
                        (g + 1).to_string(),
                        label.to_string(),
                        m.n_edges.to_string(),
                        m.mse.to_string(),
                        u8::from(m.empty).to_string(),
                    ]);
                }
            }
            outputs.push(io::write_table(
                &args.out.join("mse.csv"),
                &["group", "edges", "n_edges", "mse", "empty"],
                &rows,
            )?);
        }
        None => manifest.notes.push("no group functions; MSE table skipped".into()),
    }
    if report.covariates.is_none() {
        manifest.notes.push("no covariate table; covariate rows skipped".into());
    }
    manifest.finish(&args.out, &outputs)
}

pub const SWEEP_PARAMETERS: [&str; 3] = ["pi_delta", "pi_phi", "kernel_variance"];

fn check_parameter(name: &str) -> Result<()> {
    if SWEEP_PARAMETERS.contains(&name) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "unknown sweep parameter {name:?}; expected one of {}",
            SWEEP_PARAMETERS.join(", ")
        )))
    }
}

fn set_parameter(model: &mut ModelConfig, name: &str, value: f64) -> Result<()> {
    check_parameter(name)?;
    match name {
        "pi_delta" => model.pi_delta = value,
        "pi_phi" => model.pi_phi = value,
        _ => model.kernel_variance = value,
    }
    Ok(())
}

const SWEEP_HEADER: [&str; 12] = [
    "parameter",
    "value",
    "replicate",
    "group",
    "edges_selected",
    "edge_tpr",
    "edge_fpr",
    "edge_mcc",
    "covariate_tpr",
    "covariate_fpr",
    "covariate_mcc",
    "converged",
];

/// One table row per parameter value and group. With a single replicate the
/// rows are raw; otherwise they are replicate means (flagged metric values
/// left out) and the raw rows go to `sweep_raw.csv`.
pub fn cmd_sweep(args: &SweepArgs, exec: Execution) -> Result<RunManifest> {
    let mut cfg: SweepConfig = load_or_default(args.config.as_deref())?;
    check_parameter(&args.parameter)?;
    if args.values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    if args.replicates == 0 {
        return Err(Error::InvalidInput("replicates must be positive".into()));
    }
    if let Some(seed) = args.seed {
        cfg.sim.seed = seed;
    }
    if let Some(t) = args.threshold {
        cfg.fit.thresholds = Thresholds {
            edge: t,
            covariate: t,
        };
    }
    if let Some(n) = args.max_sweeps {
        cfg.fit.options.max_sweeps = n;
    }
    cfg.sim.validate()?;
    for &v in &args.values {
        let mut m = cfg.fit.model.clone();
        set_parameter(&mut m, &args.parameter, v)?;
        m.r = cfg.sim.r;
        m.g = cfg.sim.group_sizes.len();
        m.p = cfg.sim.p;
        m.validate()?;
    }
    let manifest = RunManifest::start(
        "sweep",
        serde_json::json!({
            "base": snapshot(&cfg),
            "parameter": args.parameter,
            "values": args.values,
            "replicates": args.replicates,
        }),
        Some(cfg.sim.seed),
    );

    let studies = (0..args.replicates)
        .map(|rep| {
            let sim = SimConfig {
                seed: cfg.sim.seed + rep as u64,
                ..cfg.sim.clone()
            };
            let (data, truth) = simulate_study_with(&sim, exec)?;
            let subjects: Vec<SubjectRow> = data
                .iter()
                .map(|s| SubjectRow {
                    subject_id: s.subject_id,
                    group: s.group,
                    covariates: s.covariates.clone(),
                })
                .collect();
            Ok((data, truth, subjects))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut raw = Vec::new();
    let mut table = Vec::new();
    for &value in &args.values {
        let mut fit_cfg = cfg.fit.clone();
        set_parameter(&mut fit_cfg.model, &args.parameter, value)?;
        let mut per_rep = Vec::new();
        for (rep, (data, truth, subjects)) in studies.iter().enumerate() {
            let fit = run_fit(data.clone(), &fit_cfg, exec)?;
            let r = &fit.result;
            let report = score_report(truth, &r.edges, Some(&r.covariate_effects), None, subjects)?;
            for g in 0..report.edges.len() {
                raw.push(sweep_row(
                    &args.parameter,
                    value,
                    &(rep + 1).to_string(),
                    g,
                    report.edges_selected[g] as f64,
                    &report.edges[g],
                    &report.covariates.as_ref().expect("covariates scored")[g],
                    if r.elbo.converged { "1" } else { "0" },
                ));
            }
            per_rep.push((report, r.elbo.converged));
        }
        if args.replicates > 1 {
            let n_groups = per_rep[0].0.edges.len();
            for g in 0..n_groups {
                let e: Vec<SelectionScores> = per_rep.iter().map(|(rep, _)| rep.edges[g]).collect();
                let c: Vec<SelectionScores> = per_rep
                    .iter()
                    .map(|(rep, _)| rep.covariates.as_ref().expect("covariates scored")[g])
                    .collect();
                let (e, c) = (aggregate_replicates(&e)?, aggregate_replicates(&c)?);
                let mean_sel = per_rep.iter().map(|(rep, _)| rep.edges_selected[g] as f64).sum::<f64>()
                    / per_rep.len() as f64;
                let converged = per_rep.iter().filter(|(_, c)| *c).count();
                table.push(vec![
                    args.parameter.clone(),
                    value.to_string(),
                    "mean".into(),
                    (g + 1).to_string(),
                    mean_sel.to_string(),
                    e.tpr.to_string(),
                    e.fpr.to_string(),
                    e.mcc.to_string(),
                    c.tpr.to_string(),
                    c.fpr.to_string(),
                    c.mcc.to_string(),
                    format!("{converged}/{}", per_rep.len()),
                ]);
            }
        }
    }
    io::create_dir(&args.out)?;
    let mut outputs = Vec::new();
    if args.replicates == 1 {
        outputs.push(io::write_table(&args.out.join("sweep.csv"), &SWEEP_HEADER, &raw)?);
    } else {
        outputs.push(io::write_table(&args.out.join("sweep.csv"), &SWEEP_HEADER, &table)?);
        outputs.push(io::write_table(&args.out.join("sweep_raw.csv"), &SWEEP_HEADER, &raw)?);
    }
    manifest.finish(&args.out, &outputs)
}

#[allow(clippy::too_many_arguments)]
fn sweep_row(
    parameter: &str,
    value: f64,
    replicate: &str,
    g: usize,
    selected: f64,
    e: &SelectionScores,
    c: &SelectionScores,
    converged: &str,
) -> Vec<String> {
    vec![
        parameter.to_string(),
        value.to_string(),
        replicate.to_string(),
        (g + 1).to_string(),
        selected.to_string(),
        e.tpr.to_string(),
        e.fpr.to_string(),
        e.mcc.to_string(),
        c.tpr.to_string(),
        c.fpr.to_string(),
        c.mcc.to_string(),
        converged.to_string(),
    ]
}

/// Thread count from `VEVAR_THREADS`, else the flag.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
            if n == 0 {
                return Err(Error::InvalidInput(format!("{THREADS_ENV} must be positive")));
            }
            Ok(Some(n))
        }
        Err(_) => match flag {
            Some(0) => Err(Error::InvalidInput("--threads must be positive".into())),
            other => Ok(other),
        },
    }
}

pub fn run(cli: &Cli) -> Result<RunManifest> {
    let threads = resolve_threads(cli.threads)?;
    if let Some(n) = threads {
        if let Err(e) = exec::set_threads(n) {
            log::warn!("thread pool already configured: {e}");
        }
    }
    let exec = if threads == Some(1) {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, exec),
        Command::Fit(a) => cmd_fit(a, exec),
        Command::Baseline(a) => cmd_baseline(a, exec),
        Command::Score(a) => cmd_score(a),
        Command::Sweep(a) => cmd_sweep(a, exec),
    }
}
