use std::path::{Path, PathBuf};
use std::process::Command;

use tocp::compare::compare;
use tocp::record::ResultsRecord;

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name).to_string_lossy().into_owned()
}

fn tocp(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tocp")).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn only_record(dir: &Path) -> PathBuf {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".record.json"))
        .collect();
    assert_eq!(v.len(), 1, "{v:?}");
    v.pop().unwrap()
}

fn load(path: &Path) -> ResultsRecord {
    ResultsRecord::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn tsv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').map(String::from).collect())
        .collect()
}

#[test]
fn incompatible_solver_is_rejected_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for (f, s) in [("mpvc", "bnb"), ("minlp", "homotopy"), ("mpvc", "enumerate")] {
        let (code, _, err) = tocp(&["solve", "--scenario", "ugv", "--formulation", f, "--solver", s, "--out", out.to_str().unwrap()]);
        assert_eq!(code, 4, "{err}");
    }
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let base = ["solve", "--scenario", "ugv", "--formulation", "mpvc", "--solver", "homotopy", "--out", out];
    for extra in [
        vec!["--override", "nonsense"],
        vec!["--override", "no_such_key=3"],
        vec!["--override", "v_min=-1"],
        vec!["--regions", "/nonexistent/regions.json"],
    ] {
        let args: Vec<&str> = base.iter().copied().chain(extra.iter().copied()).collect();
        let (code, _, err) = tocp(&args);
        assert_eq!(code, 4, "{extra:?}: {err}");
    }
    let (code, _, err) = tocp(&["solve", "--scenario", "ugv", "--formulation", "minlp", "--solver", "enumerate", "--out", out]);
    assert_eq!(code, 4, "{err}");
}

#[test]
fn ugv_homotopy_run_is_reproducible_and_plottable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = [
        "solve",
        "--scenario",
        "ugv",
        "--formulation",
        "mpvc",
        "--solver",
        "homotopy",
        "--params",
        &data("ugv.toml"),
        "--regions",
        &data("ugv_regions.json"),
        "--out",
        out,
        "--trace",
    ];
    let (code, _, err) = tocp(&args);
    assert_eq!(code, 0, "{err}");
    let path = only_record(dir.path());
    let first = load(&path);
    let sd = first.sum_delta.unwrap();
    assert!((10.0..=16.0).contains(&sd.round()), "sum delta {sd}");
    assert!(first.sum_delta_per_region.as_ref().unwrap().iter().all(|c| *c >= 1.0 - 1e-5));
    let d = first.decomposition.unwrap();
    assert!((d.total() - first.objective.unwrap()).abs() <= 1e-6);
    assert!(first.max_violation.unwrap() <= 1e-6);
    let trace = path.to_string_lossy().replace(".record.json", ".trace.tsv");
    assert!(std::fs::read_to_string(trace).unwrap().starts_with("iteration\ttau"));

    let (code, _, _) = tocp(&args);
    assert_eq!(code, 0);
    let second = load(&path);
    assert_eq!(first.without_timing().to_json(), second.without_timing().to_json());
    let index = std::fs::read_to_string(dir.path().join("index.jsonl")).unwrap();
    assert_eq!(index.lines().count(), 2);

    let (code, _, err) = tocp(&["plot-data", "--input", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let base = path.to_string_lossy().replace(".record.json", "");
    let states = tsv_rows(Path::new(&format!("{base}.states.tsv")));
    let controls = tsv_rows(Path::new(&format!("{base}.controls.tsv")));
    assert_eq!(states.len(), 1 + 21);
    assert_eq!(controls.len(), 1 + 20);
    let first_delta = states[0].iter().position(|h| h.starts_with("delta_")).unwrap();
    for row in &states[1..] {
        for v in &row[first_delta..] {
            let v: f64 = v.parse().unwrap();
            assert!((-1e-9..=1.0 + 1e-9).contains(&v));
        }
    }

    let table = compare(&[first.clone(), second]).unwrap();
    for i in 0..table.rows.len() - 1 {
        assert!(table.deltas(i).iter().all(|d| d.map_or(true, |v| v == 0.0)));
    }
    assert!(compare(&[first]).is_err());
    let (code, _, _) = tocp(&["compare", "--inputs", path.to_str().unwrap()]);
    assert_eq!(code, 4);
}

#[test]
fn short_lander_branch_and_bound_lands_in_the_box() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = tocp(&[
        "solve",
        "--scenario",
        "pdg",
        "--formulation",
        "minlp",
        "--solver",
        "bnb",
        "--params",
        &data("pdg.toml"),
        "--regions",
        &data("pyramids.json"),
        "--override",
        "N=15",
        "--override",
        "solver.node_limit=20",
        "--out",
        out,
    ]);
    assert_eq!(code, 0, "{err}");
    let path = only_record(dir.path());
    let r = load(&path);
    assert!(r.final_mass.unwrap() >= 1505.0);
    let x = r.final_state.unwrap();
    assert!(x[0].abs() <= 5.0 + 1e-6 && x[1].abs() <= 5.0 + 1e-6 && (-1e-6..=5.0 + 1e-6).contains(&x[2]));
    assert!(r.nodes.unwrap() <= 20);

    let (code, _, err) = tocp(&["plot-data", "--input", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let controls = tsv_rows(Path::new(&path.to_string_lossy().replace(".record.json", ".controls.tsv")));
    assert_eq!(controls.len(), 1 + 15);
    let col = controls[0].iter().position(|h| h == "pointing_deg").unwrap();
    for row in &controls[1..] {
        assert!(row[col].parse::<f64>().unwrap() <= 40.0 + 1e-6);
    }
}

#[test]
fn records_from_two_formulations_compare() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (f, s) in [("mpvc", "homotopy"), ("minlp", "bnb")] {
        let (code, _, err) = tocp(&[
            "solve",
            "--scenario",
            "docking",
            "--formulation",
            f,
            "--solver",
            s,
            "--override",
            "n=10",
            "--override",
            "solver.node_limit=5",
            "--out",
            out,
        ]);
        assert!(code == 0 || code == 3, "{f}: {err}");
    }
    let (code, table, err) = tocp(&["compare", "--inputs", out]);
    assert_eq!(code, 0, "{err}");
    assert!(table.contains("mpvc/homotopy") && table.contains("minlp/bnb"));
}
