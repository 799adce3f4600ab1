use std::fs;
use std::path::Path;

use privgrid::harness::run::{feasibility, RunMode, RunOptions};
use privgrid::harness::{emit_traces, load_scenario, run_scenario, write_bundled, ScenarioError};

fn bundled(dir: &Path, slots: usize) -> std::path::PathBuf {
    write_bundled(dir, slots).unwrap()
}

#[test]
fn bundled_scenario_shape() {
    let dir = tempfile::tempdir().unwrap();
    let sc = load_scenario(&bundled(dir.path(), 96)).unwrap();
    assert_eq!(sc.topology.bus_count(), 12);
    assert_eq!(sc.pv.len(), 24);
    assert_eq!(sc.ess.len(), 24);
    assert_eq!(sc.slots(), 96);
    assert_eq!(sc.dt, 0.25);
    // one shared solar column
    assert!(sc.pv.windows(2).all(|w| w[0].cap == w[1].cap));
}

#[test]
fn missing_profile_and_slot_mismatch_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let toml = bundled(dir.path(), 96);
    fs::remove_file(dir.path().join("ieee13_solar.csv")).unwrap();
    match load_scenario(&toml).unwrap_err() {
        ScenarioError::Validation { field, constraint } => {
            assert_eq!(field, "profiles.solar");
            assert!(constraint.contains("ieee13_solar.csv"), "{constraint}");
        }
        other => panic!("{other}"),
    }

    let dir = tempfile::tempdir().unwrap();
    let toml = bundled(dir.path(), 96);
    let short = tempfile::tempdir().unwrap();
    bundled(short.path(), 48);
    fs::copy(
        short.path().join("ieee13_solar.csv"),
        dir.path().join("ieee13_solar.csv"),
    )
    .unwrap();
    assert!(
        matches!(load_scenario(&toml), Err(ScenarioError::Validation { field, .. }) if field == "profiles")
    );

    let text = fs::read_to_string(&toml)
        .unwrap()
        .replace("threshold = 4", "threshold = 5");
    fs::write(&toml, text).unwrap();
    assert!(load_scenario(&toml).is_err());
}

#[test]
fn trivial_scenario_has_zero_flows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("zero.csv"), "slot,value\n0,0\n1,0\n2,0\n").unwrap();
    fs::write(
        dir.path().join("s.toml"),
        r#"
name = "empty"
seed = 1
dt_hours = 1.0
[network]
preset = "ieee13"
[profiles]
load = "zero.csv"
solar = "zero.csv"
[devices]
houses_per_bus = 1
[devices.ess]
soc_init = 0.0
soc_max = 1.0
"#,
    )
    .unwrap();
    let sc = load_scenario(&dir.path().join("s.toml")).unwrap();
    let report = run_scenario(&sc, &RunOptions::new(RunMode::Plaintext, sc.solve)).unwrap();
    assert!(report.private.is_none(), "plaintext mode runs no protocol");
    let out = dir.path().join("out");
    emit_traces(&report, &out).unwrap();
    let flows = fs::read_to_string(out.join("flows.csv")).unwrap();
    let mut lines = flows.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 13);
    for row in lines {
        assert!(
            row.split(',')
                .skip(1)
                .all(|v| v.parse::<f64>().unwrap() == 0.0),
            "{row}"
        );
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert!(summary.get("private").is_none());
}

#[test]
fn both_mode_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = load_scenario(&bundled(dir.path(), 24)).unwrap();
    sc.solve.max_iter = 30;
    let mut opts = RunOptions::new(RunMode::Both, sc.solve);
    opts.solve.fixed_iterations = true;
    let report = run_scenario(&sc, &opts).unwrap();
    let dev = report.deviation.unwrap();
    assert!(dev.is_finite() && dev < 2.56);
    let out = dir.path().join("out");
    emit_traces(&report, &out).unwrap();
    let header = |name: &str| -> usize {
        fs::read_to_string(out.join(name))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .split(',')
            .count()
    };
    assert_eq!(header("flows.csv"), 1 + 12);
    assert_eq!(header("soc.csv"), 1 + 24);
    assert_eq!(header("injections.csv"), 1 + 48);
    assert_eq!(header("convergence.csv"), 7);
    let rows = fs::read_to_string(out.join("convergence.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 2 * 30);
    let f = feasibility(&report.problem, &report.primary().final_state, 1.0);
    assert!(f.max_rate_excess <= 1e-9 && f.min_soc_margin >= -1e-9 && f.max_pv_excess <= 1e-9);
    assert!(out.join("timing.json").exists());
}
