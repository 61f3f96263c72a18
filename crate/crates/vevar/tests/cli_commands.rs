//! Subcommands end to end, through both the library entry point and the
//! built binary.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::Parser;
use tempfile::TempDir;

use vevar::cli::{run, Cli};
use vevar::io::{self, read_dataset, write_dataset};
use vevar::Error;

const SMALL_SIM: &str = r#"{"r": 4, "t": 150, "group_sizes": [20, 20]}"#;

fn vevar(args: &[&str]) -> vevar::Result<vevar::io::RunManifest> {
    let mut argv = vec!["vevar"];
    argv.extend_from_slice(args);
    run(&Cli::try_parse_from(argv).expect("arguments parse"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_study(dir: &Path) -> PathBuf {
    let cfg = dir.join("sim.json");
    fs::write(&cfg, SMALL_SIM).unwrap();
    let data = dir.join("data");
    vevar(&["simulate", "--config", p(&cfg), "--out", p(&data)]).unwrap();
    data
}

fn binary() -> Process {
    let mut cmd = Process::new(env!("CARGO_BIN_EXE_vevar"));
    cmd.env_remove("VEVAR_THREADS");
    cmd
}

#[test]
fn default_simulation_writes_every_subject_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    vevar(&["simulate", "--out", p(&a), "--seed", "7"]).unwrap();
    vevar(&["simulate", "--out", p(&b), "--seed", "7"]).unwrap();
    for id in 1..=90 {
        assert!(a.join(io::series_file_name(id)).exists(), "subject {id}");
    }
    for file in [io::TRUTH_FILE, io::SUBJECTS_FILE, io::SUBJECT_COEFS_FILE, &io::series_file_name(45)] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join(io::MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn written_dataset_reads_back_bit_for_bit() {
    let tmp = TempDir::new().unwrap();
    let data = read_dataset(&small_study(tmp.path())).unwrap();
    let copy = tmp.path().join("copy");
    write_dataset(&copy, &data).unwrap();
    let again = read_dataset(&copy).unwrap();
    assert_eq!(data.len(), again.len());
    for (a, b) in data.iter().zip(&again) {
        assert_eq!(a.subject_id, b.subject_id);
        assert_eq!(a.group, b.group);
        assert_eq!(a.series, b.series);
        assert_eq!(a.covariates, b.covariates);
    }
}

fn selected_rows(path: &Path) -> usize {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "selected").unwrap();
    rdr.records().filter(|r| &r.as_ref().unwrap()[col] == "1").count()
}

#[test]
fn intercept_only_fit_selects_no_covariate() {
    let tmp = TempDir::new().unwrap();
    let data = small_study(tmp.path());
    let out = tmp.path().join("fit");
    vevar(&["fit", "--data", p(&data), "--out", p(&out), "--intercept-only", "--max-sweeps", "30"]).unwrap();
    assert_eq!(selected_rows(&out.join(io::COVARIATE_EFFECTS_FILE)), 0);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join(io::MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["config"]["fit"]["model"]["intercept_only"], true);
}

#[test]
fn baseline_without_second_stage_writes_no_covariate_table() {
    let tmp = TempDir::new().unwrap();
    let data = small_study(tmp.path());
    let out = tmp.path().join("gc");
    vevar(&["baseline", "--data", p(&data), "--out", p(&out), "--stage2", "none"]).unwrap();
    assert!(out.join(io::EDGES_FILE).exists());
    assert!(!out.join(io::COVARIATE_EFFECTS_FILE).exists());

    let full = tmp.path().join("gc_lasso");
    vevar(&["baseline", "--data", p(&data), "--out", p(&full)]).unwrap();
    assert!(full.join(io::COVARIATE_EFFECTS_FILE).exists());
    vevar(&["score", "--fit", p(&full), "--truth", p(&data.join(io::TRUTH_FILE)), "--out", p(&tmp.path().join("s"))])
        .unwrap();
}

/// An edge table that selects exactly the true edges.
fn perfect_fit(truth: &Path, out: &Path) {
    fs::create_dir_all(out).unwrap();
    let mut rdr = csv::Reader::from_path(truth).unwrap();
    let mut rows = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let key = (rec[0].parse::<usize>().unwrap(), rec[1].parse::<usize>().unwrap());
        rows.insert((key, rec[6].to_string()));
    }
    let mut w = csv::Writer::from_path(out.join(io::EDGES_FILE)).unwrap();
    w.write_record(["group", "j", "selected"]).unwrap();
    for ((g, j), edge) in rows {
        w.write_record([g.to_string(), j.to_string(), edge]).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn perfect_selection_scores_one_and_wrong_dimensions_fail() {
    let tmp = TempDir::new().unwrap();
    let data = small_study(tmp.path());
    let truth = data.join(io::TRUTH_FILE);
    let fit = tmp.path().join("perfect");
    perfect_fit(&truth, &fit);
    let out = tmp.path().join("score");
    vevar(&["score", "--fit", p(&fit), "--truth", p(&truth), "--out", p(&out)]).unwrap();
    let mut rdr = csv::Reader::from_path(out.join("scores.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!((&r[0], &r[2], &r[3], &r[4]), ("edges", "1", "0", "1"));
    }

    let other = tmp.path().join("other");
    fs::write(tmp.path().join("r5.json"), r#"{"r": 5, "t": 50, "group_sizes": [4, 4]}"#).unwrap();
    vevar(&["simulate", "--config", p(&tmp.path().join("r5.json")), "--out", p(&other)]).unwrap();
    let err = vevar(&[
        "score",
        "--fit",
        p(&fit),
        "--truth",
        p(&other.join(io::TRUTH_FILE)),
        "--out",
        p(&tmp.path().join("bad")),
    ])
    .unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch(_)), "{err}");
}

#[test]
fn sweep_validates_its_arguments() {
    let tmp = TempDir::new().unwrap();
    let out = p(tmp.path()).to_string();
    let err = vevar(&["sweep", "--out", &out, "--parameter", "pi_gamma", "--values", "0.5"]).unwrap_err();
    assert!(err.to_string().contains("pi_delta"), "{err}");
    assert!(vevar(&["sweep", "--out", &out, "--parameter", "pi_delta", "--values"]).is_err());
    assert!(vevar(&["sweep", "--out", &out, "--parameter", "pi_delta", "--values", "1.5"]).is_err());
}

#[test]
fn single_replicate_sweep_writes_raw_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("sweep.json");
    fs::write(&cfg, format!(r#"{{"sim": {SMALL_SIM}, "fit": {{"options": {{"max_sweeps": 20}}}}}}"#)).unwrap();
    let out = tmp.path().join("sweep");
    vevar(&["sweep", "--config", p(&cfg), "--out", p(&out), "--parameter", "pi_delta", "--values", "0.1,0.9"]).unwrap();
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| &r[0] == "pi_delta" && &r[2] == "1"));
    assert!(!out.join("sweep_raw.csv").exists());
}

#[test]
fn binary_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let status = binary().args(["simulate", "--bogus"]).output().unwrap().status;
    assert_eq!(status.code(), Some(1));
    assert_eq!(binary().arg("--help").output().unwrap().status.code(), Some(0));

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{\n  \"r\": 4,\n  \"colour\": 1\n}").unwrap();
    let out = binary()
        .args(["simulate", "--config", p(&cfg), "--out", p(&tmp.path().join("x"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let missing = binary()
        .args(["fit", "--data", p(&tmp.path().join("nowhere")), "--out", p(&tmp.path().join("y"))])
        .output()
        .unwrap()
        .status;
    assert_eq!(missing.code(), Some(1));

    let bad_env = binary()
        .env("VEVAR_THREADS", "zero")
        .args(["simulate", "--out", p(&tmp.path().join("z"))])
        .output()
        .unwrap()
        .status;
    assert_eq!(bad_env.code(), Some(1));
}

fn fit_with_binary(data: &Path, out: &Path, threads: &str) {
    let status = binary()
        .env("VEVAR_THREADS", threads)
        .args(["fit", "--data", p(data), "--out", p(out), "--max-sweeps", "40", "--threads", "1"])
        .output()
        .unwrap()
        .status;
    assert!(status.success());
}

#[test]
fn fit_outputs_are_byte_identical_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let data = small_study(tmp.path());
    let runs: Vec<PathBuf> = ["1", "1", "4", "4"]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let out = tmp.path().join(format!("fit{i}"));
            fit_with_binary(&data, &out, t);
            out
        })
        .collect();
    for file in [
        io::EDGES_FILE,
        io::COVARIATE_EFFECTS_FILE,
        io::GROUP_FUNCTIONS_FILE,
        io::SUBJECT_STRENGTHS_FILE,
        io::ELBO_FILE,
    ] {
        let first = fs::read(runs[0].join(file)).unwrap();
        for r in &runs[1..] {
            assert_eq!(first, fs::read(r.join(file)).unwrap(), "{file} differs in {}", r.display());
        }
    }
}
