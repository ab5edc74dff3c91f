//! Drives the compiled binary end to end: the balancing subcommand against a
//! committed golden table, the full pipeline on a generated economy, the
//! evaluation grid, and the exit-code contract.

use std::path::Path;
use std::process::Command;

use iotab::table::{infer_table_dims, load_io_table, IOTable};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iotab"))
}

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/balance/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn load(path: &Path) -> IOTable {
    let dims = infer_table_dims(path).expect("dims");
    load_io_table(path, dims).expect("table")
}

/// The golden output was produced by the solver after it was validated
/// against the independent proportional-fitting and KKT oracles; this pins
/// the whole file round trip, flag parsing included.
#[test]
fn balance_reproduces_the_committed_golden_table() {
    let out = tempfile::tempdir().expect("tempdir");
    let status = bin()
        .args([
            "balance",
            "--table",
            &fixture("prior_table.csv"),
            "--gross-outputs",
            &fixture("gross_outputs.csv"),
            "--total",
            "2400000",
            "--phi",
            "1,1",
            "--out",
        ])
        .arg(out.path())
        .status()
        .expect("spawn");
    assert!(status.success(), "balance exited with {status}");

    let got = load(&out.path().join("balanced_table.csv"));
    let want = load(Path::new(&fixture("expected_balanced.csv")));
    let k = want.dims.industries;
    for i in 0..k + want.dims.gva_rows {
        for j in 0..k + want.dims.fd_cols {
            match (want.frame_cell(i, j), got.frame_cell(i, j)) {
                (None, None) => {}
                (Some(w), Some(g)) => assert!(
                    (w - g).abs() <= 1e-8 * w.abs().max(1.0),
                    "cell ({i},{j}): golden {w} vs fresh {g}"
                ),
                (w, g) => panic!("cell ({i},{j}): absence pattern changed, {w:?} vs {g:?}"),
            }
        }
    }
    let report = std::fs::read_to_string(out.path().join("balance_report.csv")).expect("report");
    assert!(report.contains("converged,true"), "report:\n{report}");
}

#[test]
fn pipeline_runs_a_generated_economy_end_to_end() {
    let dir = tempfile::tempdir().expect("tempdir");
    let status = bin()
        .args(["synth", "--seed", "5", "--regions", "8", "--industries", "3"])
        .args(["--gva-rows", "2", "--fd-cols", "2", "--samples", "200"])
        .args(["--width", "16", "--blocks", "1", "--epochs", "2", "--out"])
        .arg(dir.path())
        .status()
        .expect("spawn");
    assert!(status.success(), "synth exited with {status}");

    let output = bin()
        .args(["pipeline", "--config"])
        .arg(dir.path().join("run.cfg"))
        .output()
        .expect("spawn");
    assert!(
        output.status.success(),
        "pipeline exited with {}\nstderr:\n{}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );

    let out = dir.path().join("out");
    for file in
        ["predicted_table.csv", "balanced_table.csv", "evaluation/metrics.csv", "run_manifest.csv"]
    {
        assert!(out.join(file).exists(), "missing {file}");
    }
    let manifest = std::fs::read_to_string(out.join("run_manifest.csv")).expect("manifest");
    for stage in ["load", "augment", "fit-pipeline", "train", "predict", "balance", "evaluate"] {
        assert!(
            manifest.contains(&format!("run,stage,{stage},completed")),
            "stage {stage} missing from manifest:\n{manifest}"
        );
    }
}

#[test]
fn evaluating_a_table_against_itself_scores_zero() {
    let dir = tempfile::tempdir().expect("tempdir");
    let status = bin()
        .args(["synth", "--seed", "7", "--regions", "4", "--out"])
        .arg(dir.path())
        .status()
        .expect("spawn");
    assert!(status.success());

    let out = dir.path().join("eval");
    let actual = dir.path().join("actual_table.csv");
    let output = bin()
        .args(["evaluate", "--estimate"])
        .arg(&actual)
        .arg("--actual")
        .arg(&actual)
        .arg("--out")
        .arg(&out)
        .output()
        .expect("spawn");
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("0.000000"), "expected a zero metric grid, got:\n{stdout}");
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn usage_errors_exit_with_code_two() {
    let status = bin().arg("not-a-subcommand").status().expect("spawn");
    assert_eq!(status.code(), Some(2));
}

#[test]
fn a_missing_config_exits_with_code_three() {
    let status = bin()
        .args(["pipeline", "--config", "/definitely/not/here.cfg"])
        .status()
        .expect("spawn");
    assert_eq!(status.code(), Some(3));
}
