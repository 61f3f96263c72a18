//! File formats.
//!
//! A dataset directory holds `subjects.csv` (`subject_id, group, m1..mP`)
//! and one series file per subject, `subject_NNN.csv`, with a header
//! `x1..xR` and one row per time point. A simulated study adds `truth.csv`
//! and `subject_coefs.csv`. Result tables identify a coefficient by its flat
//! index `j` followed by `source, lag, target`; groups, subjects, nodes,
//! lags, covariates and `j` are all one-based in files. Every output
//! directory gets a `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{GcResult, LassoResult};
use crate::error::{Error, Result};
use crate::model::{CoefficientIndex, SubjectDataset};
use crate::selector::FitResult;
use crate::sim::{BankFunction, GroupFunction, SimTruth};

pub const SUBJECTS_FILE: &str = "subjects.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SUBJECT_COEFS_FILE: &str = "subject_coefs.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EDGES_FILE: &str = "edges.csv";
pub const COVARIATE_EFFECTS_FILE: &str = "covariate_effects.csv";
pub const GROUP_FUNCTIONS_FILE: &str = "group_functions.csv";
pub const SUBJECT_STRENGTHS_FILE: &str = "subject_strengths.csv";
pub const ELBO_FILE: &str = "elbo.csv";
pub const CURVES_FILE: &str = "curves.csv";

pub fn series_file_name(subject_id: usize) -> String {
    format!("subject_{subject_id:03}.csv")
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn record_error(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec
        .get(col)
        .ok_or_else(|| Error::parse(path, format!("line {line}: missing column {name}")))?;
    raw.parse()
        .map_err(|_| Error::parse(path, format!("line {line}: cannot parse {name} value {raw:?}")))
}

fn flag(v: bool) -> &'static str {
    if v {
        "1"
    } else {
        "0"
    }
}

fn parse_flag(path: &Path, rec: &csv::StringRecord, col: usize, name: &str) -> Result<bool> {
    let raw: String = field(path, rec, col, name)?;
    match raw.as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(Error::parse(path, format!("{name} must be 0 or 1, got {raw:?}"))),
    }
}

/// `j, source, lag, target`, one-based.
fn coef_cols(j: usize, r: usize, lag: usize) -> [String; 4] {
    let idx = CoefficientIndex::unflatten(j, r, lag).expect("flat index in range");
    [
        (j + 1).to_string(),
        (idx.source + 1).to_string(),
        (idx.lag + 1).to_string(),
        (idx.target + 1).to_string(),
    ]
}

fn column_map(path: &Path, headers: &csv::StringRecord, wanted: &[&str]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h == *w)
                .ok_or_else(|| Error::parse(path, format!("missing column {w:?}")))
        })
        .collect()
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Series and `subjects.csv`; returns the written paths.
pub fn write_dataset(dir: &Path, data: &[SubjectDataset]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::with_capacity(data.len() + 1);
    let p = data.first().map_or(0, |s| s.covariates.len());
    let path = dir.join(SUBJECTS_FILE);
    let mut w = writer(&path)?;
    let mut header = vec!["subject_id".to_string(), "group".to_string()];
    header.extend((1..=p).map(|k| format!("m{k}")));
    w.write_record(&header)?;
    for s in data {
        let mut row = vec![s.subject_id.to_string(), (s.group + 1).to_string()];
        row.extend(s.covariates.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    for s in data {
        let path = dir.join(series_file_name(s.subject_id));
        let mut w = writer(&path)?;
        w.write_record((1..=s.n_nodes()).map(|k| format!("x{k}")))?;
        for t in 0..s.n_time() {
            w.write_record(s.series.row(t).iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn read_series(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = reader(path)?;
    let r = rdr.headers().map_err(|e| record_error(path, e))?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| record_error(path, e))?;
        for c in 0..r {
            values.push(field::<f64>(path, &rec, c, &format!("x{}", c + 1))?);
        }
        rows += 1;
    }
    if r == 0 || rows == 0 {
        return Err(Error::parse(path, "empty series"));
    }
    Ok(DMatrix::from_row_slice(rows, r, &values))
}

/// One row of `subjects.csv`, group zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRow {
    pub subject_id: usize,
    pub group: usize,
    pub covariates: Vec<f64>,
}

pub fn read_subjects_table(path: &Path) -> Result<Vec<SubjectRow>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| record_error(path, e))?.clone();
    if headers.len() < 2 || &headers[0] != "subject_id" || &headers[1] != "group" {
        return Err(Error::parse(path, "header must start with subject_id,group"));
    }
    let p = headers.len() - 2;
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| record_error(path, e))?;
        let id: usize = field(path, &rec, 0, "subject_id")?;
        let group: usize = field(path, &rec, 1, "group")?;
        if group == 0 {
            return Err(Error::parse(path, format!("subject {id}: groups are numbered from 1")));
        }
        if !seen.insert(id) {
            return Err(Error::parse(path, format!("duplicate subject_id {id}")));
        }
        let covariates = (0..p)
            .map(|k| field(path, &rec, k + 2, &headers[k + 2]))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(SubjectRow {
            subject_id: id,
            group: group - 1,
            covariates,
        });
    }
    Ok(rows)
}

/// Reads a dataset directory, in `subjects.csv` order.
pub fn read_dataset(dir: &Path) -> Result<Vec<SubjectDataset>> {
    let path = dir.join(SUBJECTS_FILE);
    let mut data = Vec::new();
    for row in read_subjects_table(&path)? {
        let series = read_series(&dir.join(series_file_name(row.subject_id)))?;
        data.push(SubjectDataset::new(row.subject_id, series, row.covariates, row.group)?);
    }
    if data.is_empty() {
        return Err(Error::parse(&path, "no subjects"));
    }
    let g = data.iter().map(|s| s.group + 1).max().unwrap_or(0);
    for k in 0..g {
        if !data.iter().any(|s| s.group == k) {
            return Err(Error::EmptyGroup(k + 1));
        }
    }
    Ok(data)
}

/// Input files of a dataset directory with their SHA-256 digests.
pub fn dataset_hashes(dir: &Path, data: &[SubjectDataset]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut names = vec![SUBJECTS_FILE.to_string()];
    names.extend(data.iter().map(|s| series_file_name(s.subject_id)));
    for name in names {
        let hash = sha256_file(&dir.join(&name))?;
        out.insert(name, hash);
    }
    Ok(out)
}

/// `truth.csv` has one row per group and coefficient: the generating
/// function (`none` outside the band), its covariates `p1, p2` (blank when
/// unused), sign and dropout. `subject_coefs.csv` has the drawn subject
/// coefficients.
pub fn write_truth(dir: &Path, truth: &SimTruth, groups: &[usize], ids: &[usize]) -> Result<Vec<PathBuf>> {
    let (r, lag) = (truth.r, truth.lag);
    let path = dir.join(TRUTH_FILE);
    let mut w = writer(&path)?;
    w.write_record([
        "group", "j", "source", "lag", "target", "band", "edge", "function", "p1", "p2", "sign", "dropped",
    ])?;
    for g in 0..truth.n_groups() {
        for j in 0..truth.n_coefficients() {
            let mut row = vec![(g + 1).to_string()];
            row.extend(coef_cols(j, r, lag));
            row.push(truth.band(j).to_string());
            row.push(flag(truth.true_edge(g, j)).into());
            match truth.functions[g][j] {
                None => row.extend(["none", "", "", "0", "0"].map(String::from)),
                Some(f) => {
                    let cov = f.function.covariates();
                    let (p1, p2) = match f.function {
                        BankFunction::Constant | BankFunction::Binary => (String::new(), String::new()),
                        BankFunction::Difference { p1, p2 } => ((p1 + 1).to_string(), (p2 + 1).to_string()),
                        _ => ((cov[0] + 1).to_string(), String::new()),
                    };
                    row.extend([f.function.name().to_string(), p1, p2, f.sign.to_string(), flag(f.dropped).into()]);
                }
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let coef_path = dir.join(SUBJECT_COEFS_FILE);
    let mut w = writer(&coef_path)?;
    w.write_record(["subject_id", "group", "j", "source", "lag", "target", "value"])?;
    for (s, coefs) in truth.subject_coefs.iter().enumerate() {
        for (j, v) in coefs.iter().enumerate() {
            let mut row = vec![ids[s].to_string(), (groups[s] + 1).to_string()];
            row.extend(coef_cols(j, r, lag));
            row.push(v.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(&coef_path, e))?;
    Ok(vec![path, coef_path])
}

fn bank_function(path: &Path, name: &str, p1: Option<usize>, p2: Option<usize>) -> Result<BankFunction> {
    let need = |p: Option<usize>| p.ok_or_else(|| Error::parse(path, format!("function {name} needs p1")));
    Ok(match name {
        "constant" => BankFunction::Constant,
        "binary" => BankFunction::Binary,
        "linear" => BankFunction::Linear { p: need(p1)? },
        "power040" => BankFunction::Power040 { p: need(p1)? },
        "square" => BankFunction::Square { p: need(p1)? },
        "sine" => BankFunction::Sine { p: need(p1)? },
        "power070" => BankFunction::Power070 { p: need(p1)? },
        "difference" => BankFunction::Difference {
            p1: need(p1)?,
            p2: p2.ok_or_else(|| Error::parse(path, "function difference needs p2"))?,
        },
        other => return Err(Error::parse(path, format!("unknown function {other:?}"))),
    })
}

/// Reads `truth.csv`; the dimensions come from its largest indices.
/// Subject coefficients are left empty.
pub fn read_truth(path: &Path, p: usize) -> Result<SimTruth> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| record_error(path, e))?.clone();
    let cols = column_map(
        path,
        &headers,
        &["group", "j", "source", "lag", "target", "function", "p1", "p2", "sign", "dropped"],
    )?;
    let mut rows = Vec::new();
    let (mut r, mut lag, mut g_total) = (0, 0, 0);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| record_error(path, e))?;
        let g: usize = field(path, &rec, cols[0], "group")?;
        let j: usize = field(path, &rec, cols[1], "j")?;
        let source: usize = field(path, &rec, cols[2], "source")?;
        let l: usize = field(path, &rec, cols[3], "lag")?;
        let target: usize = field(path, &rec, cols[4], "target")?;
        if g == 0 || j == 0 || source == 0 || l == 0 || target == 0 {
            return Err(Error::parse(path, "indices are one-based"));
        }
        r = r.max(source).max(target);
        lag = lag.max(l);
        g_total = g_total.max(g);
        let name: String = field(path, &rec, cols[5], "function")?;
        let opt = |c: usize| -> Result<Option<usize>> {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() {
                Ok(None)
            } else {
                let v: usize = raw.parse().map_err(|_| Error::parse(path, format!("bad covariate index {raw:?}")))?;
                if v == 0 || v > p {
                    return Err(Error::parse(path, format!("covariate index {v} outside 1..={p}")));
                }
                Ok(Some(v - 1))
            }
        };
        let function = if name == "none" {
            None
        } else {
            Some(GroupFunction {
                function: bank_function(path, &name, opt(cols[6])?, opt(cols[7])?)?,
                sign: field(path, &rec, cols[8], "sign")?,
                dropped: parse_flag(path, &rec, cols[9], "dropped")?,
            })
        };
        rows.push((g - 1, j - 1, CoefficientIndex::new(source - 1, l - 1, target - 1), function));
    }
    let n = r * lag * r;
    let mut functions = vec![vec![None; n]; g_total];
    let mut filled = vec![vec![false; n]; g_total];
    for (g, j, idx, f) in rows {
        if idx.flat(r, lag)? != j {
            return Err(Error::parse(path, format!("j = {} does not match its source/lag/target", j + 1)));
        }
        functions[g][j] = f;
        filled[g][j] = true;
    }
    if filled.iter().flatten().any(|f| !f) {
        return Err(Error::parse(path, "truth table does not cover every group and coefficient"));
    }
    Ok(SimTruth {
        r,
        lag,
        p,
        functions,
        subject_coefs: Vec::new(),
    })
}

/// How a covariate column is treated before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    /// Binary when the column has exactly two distinct values.
    #[default]
    Auto,
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub kind: CovariateKind,
    pub min: f64,
    pub max: f64,
}

/// Min-max rescales continuous covariates to [-1, 1] over the full sample;
/// binary ones pass through. `kinds` may be empty (all `Auto`).
pub fn rescale_covariates(data: &mut [SubjectDataset], kinds: &[CovariateKind]) -> Result<Vec<ColumnScaling>> {
    let p = data.first().map_or(0, |s| s.covariates.len());
    if !kinds.is_empty() && kinds.len() != p {
        return Err(Error::DimensionMismatch(format!("{} covariate kinds for {p} covariates", kinds.len())));
    }
    let mut out = Vec::with_capacity(p);
    for k in 0..p {
        let col: Vec<f64> = data.iter().map(|s| s.covariates[k]).collect();
        let (min, max) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let distinct: BTreeSet<u64> = col.iter().map(|v| v.to_bits()).collect();
        let kind = match kinds.get(k).copied().unwrap_or_default() {
            CovariateKind::Auto if distinct.len() == 2 => CovariateKind::Binary,
            CovariateKind::Auto => CovariateKind::Continuous,
            other => other,
        };
        if kind == CovariateKind::Continuous {
            if max > min {
                for s in data.iter_mut() {
                    s.covariates[k] = 2.0 * (s.covariates[k] - min) / (max - min) - 1.0;
                }
            } else {
                log::warn!("covariate m{} is constant and is set to 0", k + 1);
                data.iter_mut().for_each(|s| s.covariates[k] = 0.0);
            }
        }
        out.push(ColumnScaling { kind, min, max });
    }
    Ok(out)
}

/// Record of one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input file name to SHA-256.
    pub dataset_hashes: BTreeMap<String, String>,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<String>,
    pub converged: Option<bool>,
    pub notes: Vec<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            dataset_hashes: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: String::new(),
            outputs: Vec::new(),
            converged: None,
            notes: Vec::new(),
        }
    }

    /// Stamps the end time and writes `manifest.json` into `dir`; `outputs`
    /// are recorded relative to `dir`.
    pub fn finish(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<Self> {
        self.finished = now();
        self.outputs = outputs
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect();
        write_json(&dir.join(MANIFEST_FILE), &self)?;
        Ok(self)
    }
}

/// Writes the fit tables; returns their paths.
pub fn write_fit_result(dir: &Path, fit: &FitResult) -> Result<Vec<PathBuf>> {
    let (r, lag) = (fit.config.r, fit.config.lag);
    let mut written = Vec::new();

    let path = dir.join(EDGES_FILE);
    let mut w = writer(&path)?;
    w.write_record(["group", "j", "source", "lag", "target", "inclusion_prob", "selected"])?;
    for (g, row) in fit.gamma_delta.iter().enumerate() {
        for (j, &gd) in row.iter().enumerate() {
            let mut rec = vec![(g + 1).to_string()];
            rec.extend(coef_cols(j, r, lag));
            rec.extend([gd.to_string(), flag(fit.edges[g][j]).into()]);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join(COVARIATE_EFFECTS_FILE);
    let mut w = writer(&path)?;
    w.write_record(["group", "j", "source", "lag", "target", "covariate", "inclusion_prob", "weight", "selected"])?;
    for (g, rows) in fit.gamma_phi.iter().enumerate() {
        for (j, covs) in rows.iter().enumerate() {
            for (p, &gp) in covs.iter().enumerate() {
                let mut rec = vec![(g + 1).to_string()];
                rec.extend(coef_cols(j, r, lag));
                rec.extend([
                    (p + 1).to_string(),
                    gp.to_string(),
                    fit.omega[g][j][p].to_string(),
                    flag(fit.covariate_effects[g][j][p]).into(),
                ]);
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join(GROUP_FUNCTIONS_FILE);
    let mut w = writer(&path)?;
    w.write_record(["group", "subject_id", "j", "source", "lag", "target", "value", "edge_selected"])?;
    for (g, rows) in fit.group_functions.iter().enumerate() {
        for (j, values) in rows.iter().enumerate() {
            for (k, v) in values.iter().enumerate() {
                let mut rec = vec![(g + 1).to_string(), fit.members[g][k].to_string()];
                rec.extend(coef_cols(j, r, lag));
                rec.extend([v.to_string(), flag(fit.edges[g][j]).into()]);
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let groups_of: BTreeMap<usize, usize> = fit
        .members
        .iter()
        .enumerate()
        .flat_map(|(g, m)| m.iter().map(move |&id| (id, g)))
        .collect();
    written.push(write_subject_strengths(dir, &fit.subject_strengths, &fit.subject_ids, &groups_of, r, lag)?);

    let path = dir.join(ELBO_FILE);
    let mut w = writer(&path)?;
    w.write_record(["sweep", "elbo"])?;
    for (i, v) in fit.elbo.values.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

fn write_subject_strengths(
    dir: &Path,
    strengths: &[Vec<f64>],
    ids: &[usize],
    groups_of: &BTreeMap<usize, usize>,
    r: usize,
    lag: usize,
) -> Result<PathBuf> {
    let path = dir.join(SUBJECT_STRENGTHS_FILE);
    let mut w = writer(&path)?;
    w.write_record(["subject_id", "group", "j", "source", "lag", "target", "value"])?;
    for (s, row) in strengths.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let mut rec = vec![ids[s].to_string(), (groups_of[&ids[s]] + 1).to_string()];
            rec.extend(coef_cols(j, r, lag));
            rec.push(v.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// One covariate curve: `(group, j, covariate)` zero-based, with the points
/// and values.
pub type Curve = (usize, usize, usize, Vec<f64>, Vec<f64>);

pub fn write_curves(dir: &Path, curves: &[Curve], r: usize, lag: usize) -> Result<PathBuf> {
    let path = dir.join(CURVES_FILE);
    let mut w = writer(&path)?;
    w.write_record(["group", "j", "source", "lag", "target", "covariate", "x", "value"])?;
    for (g, j, p, xs, vs) in curves {
        for (x, v) in xs.iter().zip(vs) {
            let mut rec = vec![(g + 1).to_string()];
            rec.extend(coef_cols(*j, r, lag));
            rec.extend([(p + 1).to_string(), x.to_string(), v.to_string()]);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Edge table and OLS subject coefficients of the first stage.
pub fn write_gc_result(dir: &Path, gc: &GcResult, data: &[SubjectDataset], r: usize, lag: usize) -> Result<Vec<PathBuf>> {
    let path = dir.join(EDGES_FILE);
    let mut w = writer(&path)?;
    w.write_record(["group", "j", "source", "lag", "target", "t_stat", "p_value", "selected"])?;
    for g in 0..gc.pvalues.len() {
        for j in 0..gc.pvalues[g].len() {
            let mut rec = vec![(g + 1).to_string()];
            rec.extend(coef_cols(j, r, lag));
            rec.extend([
                gc.tstats[g][j].to_string(),
                gc.pvalues[g][j].to_string(),
                flag(gc.selected[g][j]).into(),
            ]);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let ids: Vec<usize> = data.iter().map(|s| s.subject_id).collect();
    let groups_of: BTreeMap<usize, usize> = data.iter().map(|s| (s.subject_id, s.group)).collect();
    let strengths = write_subject_strengths(dir, &gc.subject_coefs, &ids, &groups_of, r, lag)?;
    Ok(vec![path, strengths])
}

pub fn write_lasso_result(dir: &Path, lasso: &LassoResult, r: usize, lag: usize) -> Result<PathBuf> {
    let path = dir.join(COVARIATE_EFFECTS_FILE);
    let mut w = writer(&path)?;
    w.write_record(["group", "j", "source", "lag", "target", "covariate", "coefficient", "lambda", "selected"])?;
    for (g, rows) in lasso.coefficients.iter().enumerate() {
        for (j, coefs) in rows.iter().enumerate() {
            for (p, c) in coefs.iter().enumerate() {
                let mut rec = vec![(g + 1).to_string()];
                rec.extend(coef_cols(j, r, lag));
                rec.extend([
                    (p + 1).to_string(),
                    c.to_string(),
                    lasso.lambda[g][j].to_string(),
                    flag(lasso.selected[g][j][p]).into(),
                ]);
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Selections read back from a fit or baseline directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Selections {
    /// `[g][j]`.
    pub edges: Vec<Vec<bool>>,
    /// `[g][j][p]`, when the directory has a covariate table.
    pub covariates: Option<Vec<Vec<Vec<bool>>>>,
    /// `(g, j, subject_id)` to value, when the directory has group functions.
    pub group_functions: Option<BTreeMap<(usize, usize, usize), f64>>,
}

/// Reads the `selected` column of a table keyed by group, `j` and the extra
/// columns; returns `(group, j, extra...)` zero-based keys.
fn read_keyed(path: &Path, extra: &[&str], value: &str) -> Result<Vec<(Vec<usize>, String)>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| record_error(path, e))?.clone();
    let mut names = vec!["group", "j"];
    names.extend_from_slice(extra);
    names.push(value);
    let cols = column_map(path, &headers, &names)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| record_error(path, e))?;
        let mut key = Vec::with_capacity(names.len() - 1);
        for (c, name) in cols.iter().zip(&names).take(names.len() - 1) {
            let v: usize = field(path, &rec, *c, name)?;
            if v == 0 && *name != "subject_id" {
                return Err(Error::parse(path, format!("{name} is one-based")));
            }
            key.push(if *name == "subject_id" { v } else { v - 1 });
        }
        out.push((key, field(path, &rec, cols[names.len() - 1], value)?));
    }
    Ok(out)
}

fn dense<T: Clone>(path: &Path, n_groups: usize, n: usize, fill: T, items: Vec<(usize, usize, T)>) -> Result<Vec<Vec<T>>> {
    let mut out = vec![vec![fill; n]; n_groups];
    let mut count = 0;
    for (g, j, v) in items {
        if g >= n_groups || j >= n {
            return Err(Error::DimensionMismatch(format!(
                "{}: entry (group {}, j {}) outside {n_groups} groups x {n} coefficients",
                path.display(),
                g + 1,
                j + 1
            )));
        }
        out[g][j] = v;
        count += 1;
    }
    if count != n_groups * n {
        return Err(Error::DimensionMismatch(format!(
            "{}: {count} entries, expected {n_groups} groups x {n} coefficients",
            path.display()
        )));
    }
    Ok(out)
}

/// Reads `edges.csv` and, when present, `covariate_effects.csv` and
/// `group_functions.csv` against the expected dimensions.
pub fn read_selections(dir: &Path, n_groups: usize, n_coefficients: usize, p: usize) -> Result<Selections> {
    let to_bool = |path: &Path, s: &str| match s {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(Error::parse(path, format!("selected must be 0 or 1, got {s:?}"))),
    };
    let path = dir.join(EDGES_FILE);
    let rows = read_keyed(&path, &[], "selected")?;
    let items = rows
        .into_iter()
        .map(|(k, v)| Ok((k[0], k[1], to_bool(&path, &v)?)))
        .collect::<Result<Vec<_>>>()?;
    let edges = dense(&path, n_groups, n_coefficients, false, items)?;

    let path = dir.join(COVARIATE_EFFECTS_FILE);
    let covariates = if path.exists() {
        let rows = read_keyed(&path, &["covariate"], "selected")?;
        let mut items = Vec::with_capacity(rows.len());
        for (k, v) in rows {
            if k[2] >= p {
                return Err(Error::DimensionMismatch(format!("covariate {} outside 1..={p}", k[2] + 1)));
            }
            items.push((k[0], k[1] * p + k[2], to_bool(&path, &v)?));
        }
        let flat = dense(&path, n_groups, n_coefficients * p, false, items)?;
        Some(flat.into_iter().map(|g| g.chunks(p.max(1)).map(|c| c.to_vec()).collect()).collect())
    } else {
        None
    };

    let path = dir.join(GROUP_FUNCTIONS_FILE);
    let group_functions = if path.exists() {
        let rows = read_keyed(&path, &["subject_id"], "value")?;
        let mut map = BTreeMap::new();
        for (k, v) in rows {
            let value: f64 = v.parse().map_err(|_| Error::parse(&path, format!("bad value {v:?}")))?;
            if k[0] >= n_groups || k[1] >= n_coefficients {
                return Err(Error::DimensionMismatch(format!("{}: entry outside the truth dimensions", path.display())));
            }
            map.insert((k[0], k[1], k[2]), value);
        }
        Some(map)
    } else {
        None
    };
    Ok(Selections {
        edges,
        covariates,
        group_functions,
    })
}

/// Writes rows under a header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}
