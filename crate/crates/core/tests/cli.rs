//! End-to-end tests of the binary: exit-code contract and JSON schema.

use std::process::{Command, Output};

fn polya(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polya"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn analyze_strictly_small_exits_zero() {
    let out = polya(&["analyze", "friedman"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("strictly small"));
}

#[test]
fn analyze_dominant_mismatch_exits_three() {
    let out = polya(&["analyze", "ebad"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unreachable"));
}

#[test]
fn analyze_multiple_dominant_exits_three() {
    let out = polya(&["analyze", "polya"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("not applicable"));
}

#[test]
fn analyze_missing_config_exits_two() {
    let out = polya(&["analyze", "/nonexistent/urn.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_invalid_config_exits_two() {
    let dir = std::env::temp_dir().join("polya-cli-test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.toml");
    std::fs::write(&path, "q = 2\nactivities = [1]\n").unwrap();
    let out = polya(&["analyze", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_incomplete_fragment_exits_two() {
    let out = polya(&["analyze", "five-type-fragment"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_passes_and_is_schema_stable() {
    let out = polya(&[
        "compare", "friedman", "--n", "300", "--reps", "800", "--seed", "11", "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    // Pinned schema: these keys are a compatibility contract.
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["urn"], "friedman");
    assert_eq!(v["classification"], "strictly small");
    assert_eq!(v["normalization"], "n");
    assert_eq!(v["pass"], true);
    let row = &v["rows"][0];
    for key in [
        "quantity",
        "oracle",
        "exact",
        "asymptotic",
        "simulated",
        "se",
        "residual",
        "tolerance",
        "pass",
    ] {
        assert!(!row[key].is_null(), "row missing `{key}`");
    }
}

#[test]
fn compare_large_urn_has_no_asymptotic_row() {
    let out = polya(&[
        "compare",
        "triangular-large",
        "--n",
        "300",
        "--reps",
        "800",
        "--seed",
        "11",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["classification"], "large");
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn corpus_list_shows_fragments() {
    let out = polya(&["corpus", "list", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let entries = v.as_array().unwrap();
    assert!(entries.len() >= 6);
    let incomplete = entries
        .iter()
        .filter(|e| e["incomplete"] == true)
        .count();
    assert_eq!(incomplete, 2);
}

#[test]
fn moments_json_reports_normalization() {
    let out = polya(&["moments", "e2", "--n", "50", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["covariance_normalization"], "n*log(n)");
    assert_eq!(v["covariance_limit"][0][0], 0.25);
}

#[test]
fn simulate_csv_probe_table() {
    let out = polya(&[
        "simulate", "friedman", "--n", "200", "--reps", "50", "--seed", "3", "--grid",
        "100,200", "--csv",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,mean_sq_drift,normalized_cov_trace,normalizer"
    );
    assert_eq!(lines.count(), 2);
}

#[test]
fn tolerance_flag_tightens_comparison() {
    // An absurdly tight mean tolerance must flip the comparison to failing.
    let out = polya(&[
        "compare", "friedman", "--n", "300", "--reps", "800", "--seed", "11",
        "--tol-mean-se", "1e-12",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
