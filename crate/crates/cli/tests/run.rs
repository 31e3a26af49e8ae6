use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use unipos_cli::commands::{run_command, Format, RunOptions, EXIT_IO, EXIT_LOAD, EXIT_OK};
use unipos_cli::report::{read_jsonl, ReportRecord, OUTCOME_CODES};

fn corpus(prefix: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.extension().is_some_and(|e| e == "toml")
                && p.file_name().unwrap().to_str().unwrap().starts_with(prefix)
        })
        .collect();
    v.sort();
    v
}

fn unipos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unipos"))
        .args(args)
        .output()
        .unwrap()
}

fn run(paths: &[PathBuf], opts: &RunOptions) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_command(paths, opts, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

fn records(jsonl: &str) -> Vec<ReportRecord> {
    read_jsonl(jsonl.as_bytes()).unwrap()
}

#[test]
fn honest_corpus_is_all_accepted() {
    let paths = corpus("honest-");
    assert_eq!(paths.len(), 10);
    let (code, out, err) = run(&paths, &RunOptions::default());
    assert_eq!(code, EXIT_OK, "{err}");
    let recs = records(&out);
    assert_eq!(recs.len(), 10);
    for r in &recs {
        assert_eq!(r.outcome, "Accepted", "{}", r.scenario);
        assert_eq!(r.physics_violations, 0);
    }
}

#[test]
fn replay_corpus_is_rejected_with_exit_zero() {
    let paths = corpus("stale-replay");
    let (code, out, _) = run(&paths, &RunOptions::default());
    assert_eq!(code, EXIT_OK);
    for r in records(&out) {
        assert!(
            r.outcome == "ErrorRangeExceeded" || r.outcome == "NotContained",
            "{}: {}",
            r.scenario,
            r.outcome
        );
    }
}

#[test]
fn corrupt_file_exits_two_without_a_record() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[meta\nthis is not toml").unwrap();
    let mut paths = corpus("honest-2d");
    paths.insert(2, bad);
    let (code, out, err) = run(&paths, &RunOptions::default());
    assert_eq!(code, EXIT_LOAD);
    assert!(err.contains("bad.toml"), "{err}");
    let recs = records(&out);
    assert_eq!(recs.len(), paths.len() - 1);
    let names: Vec<_> = recs.iter().map(|r| r.scenario.as_str()).collect();
    assert_eq!(
        names,
        [
            "honest-2d-01",
            "honest-2d-02",
            "honest-2d-03",
            "honest-2d-04",
            "honest-2d-05"
        ]
    );
}

#[test]
fn unwritable_output_exits_three() {
    let opts = RunOptions {
        out: Some(PathBuf::from("/nonexistent/dir/out.jsonl")),
        ..RunOptions::default()
    };
    let (code, _, err) = run(&corpus("honest-2d-01"), &opts);
    assert_eq!(code, EXIT_IO, "{err}");
}

#[test]
fn output_order_ignores_parallelism() {
    let paths = corpus("");
    let one = run(
        &paths,
        &RunOptions {
            jobs: Some(1),
            ..RunOptions::default()
        },
    );
    let many = run(
        &paths,
        &RunOptions {
            jobs: Some(8),
            ..RunOptions::default()
        },
    );
    assert_eq!(one.0, EXIT_OK, "{}", one.2);
    assert_eq!(one.1, many.1);
    let names: Vec<String> = records(&one.1).into_iter().map(|r| r.scenario).collect();
    let expected: Vec<String> = paths
        .iter()
        .map(|p| p.file_stem().unwrap().to_str().unwrap().to_string())
        .collect();
    assert_eq!(names, expected);
}

#[test]
fn seed_flag_overrides_file_seed() {
    let paths = corpus("honest-2d-01");
    let (_, out, _) = run(
        &paths,
        &RunOptions {
            seed: Some(5),
            ..RunOptions::default()
        },
    );
    assert_eq!(records(&out)[0].seed, 5);
    let (_, out, _) = run(&paths, &RunOptions::default());
    assert_eq!(records(&out)[0].seed, 101);
}

#[test]
fn every_outcome_code_is_known() {
    let (_, out, _) = run(&corpus(""), &RunOptions::default());
    for r in records(&out) {
        assert!(OUTCOME_CODES.contains(&r.outcome.as_str()), "{}", r.outcome);
        if let Some(b) = &r.bidir {
            assert!(OUTCOME_CODES.contains(&b.outcome.as_str()));
        }
        assert!(r.runtime_ms.is_none());
    }
}

#[test]
fn csv_has_one_row_per_record() {
    let paths = corpus("");
    let (code, out, _) = run(
        &paths,
        &RunOptions {
            format: Format::Csv,
            ..RunOptions::default()
        },
    );
    assert_eq!(code, EXIT_OK);
    let mut rdr = csv::Reader::from_reader(out.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "scenario");
    let rows: Vec<_> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), paths.len());
    let outcome = headers.iter().position(|h| h == "outcome").unwrap();
    assert!(rows.iter().any(|r| &r[outcome] == "Accepted"));
}

#[test]
fn binary_run_validate_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.jsonl");
    let paths = corpus("");
    let mut args = vec!["run", "--jobs", "3", "--out", out.to_str().unwrap()];
    let strs: Vec<&str> = paths.iter().map(|p| p.to_str().unwrap()).collect();
    args.extend(&strs);
    let o = unipos(&args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(o.stdout.is_empty());
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), paths.len());

    let o = unipos(&["report", out.to_str().unwrap(), "--summary"]);
    assert_eq!(o.status.code(), Some(0));
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(
        summary.contains(&format!("records: {}", paths.len())),
        "{summary}"
    );
    assert!(summary.contains("physics violations: 0"));

    let mut args = vec!["validate"];
    args.extend(&strs);
    let o = unipos(&args);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        String::from_utf8(o.stdout).unwrap().lines().count(),
        paths.len()
    );

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[meta]\nschema_version = 1\n").unwrap();
    let o = unipos(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.toml"));

    let o = unipos(&["run", "--timing", strs[0]]);
    let rec = ReportRecord::from_json_line(String::from_utf8(o.stdout).unwrap().trim()).unwrap();
    assert!(rec.runtime_ms.is_some());
}

#[test]
fn report_rejects_malformed_lines() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("r.jsonl");
    fs::write(&f, "{\"schema_version\": 1}\n").unwrap();
    let o = unipos(&["report", f.to_str().unwrap(), "--summary"]);
    assert_eq!(o.status.code(), Some(2));
}
