use std::fs;
use std::path::Path;

use foglb_core::harness::{run_grid, validate_config, ExperimentConfig};
use foglb_core::par::Execution;
use foglb_core::topology::generate_topology;
use foglb_core::Error;

fn config(dir: &Path, policies: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        betas: vec![100.0],
        policies: policies.iter().map(|p| p.to_string()).collect(),
        horizons: vec![2000.0],
        seeds: vec![1, 2],
        output_dir: dir.to_path_buf(),
        topology: foglb_core::harness::TopologyConfig {
            nodes: 10,
            clusters: 3,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn one_csv_per_cell_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_grid(&config(dir.path(), &["random", "rr"]), Execution::Parallel).unwrap();
    assert_eq!(report.run_files.len(), 4);
    assert!(report.failures.is_empty());
    let mut names: Vec<String> = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "random_b100_h2000_s1.csv",
            "random_b100_h2000_s2.csv",
            "rr_b100_h2000_s1.csv",
            "rr_b100_h2000_s2.csv"
        ]
    );
    assert!(dir.path().join("summary.csv").exists());
}

#[test]
fn rerun_gives_identical_summary() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = config(a.path(), &["random", "nearest", "ddql"]);
    ca.schedule.total_train_steps = Some(40);
    ca.schedule.prefill = Some(100);
    ca.schedule.hidden = Some(vec![8]);
    ca.schedule.episode_horizon = Some(1000.0);
    let mut cb = ca.clone();
    cb.output_dir = b.path().to_path_buf();
    run_grid(&ca, Execution::Parallel).unwrap();
    run_grid(&cb, Execution::Sequential).unwrap();
    for f in ["summary.csv", "summary_ci.csv", "runs/ddql_b100_h2000_s2.csv", "curves/ddql_b100.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert!(a.path().join("checkpoints/ddql_b100.ckpt").exists());
}

#[test]
fn failing_cells_are_recorded_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_grid(&config(dir.path(), &["electre", "rr"]), Execution::Parallel).unwrap();
    assert_eq!(report.cells_ok(), 2);
    assert_eq!(report.failures.len(), 2);
    assert!(report.failures.iter().all(|f| f.policy == "electre" && f.error.contains("not implemented")));
}

#[test]
fn validate_config_reads_files() {
    let dir = tempfile::tempdir().unwrap();
    let topo_path = dir.path().join("topo.toml");
    generate_topology(9, 2, 3).unwrap().save(&topo_path).unwrap();
    let mut c = config(dir.path(), &["rr"]);
    c.topology.file = Some(topo_path.clone());
    let cfg_path = dir.path().join("c.toml");
    fs::write(&cfg_path, c.to_toml()).unwrap();
    let loaded = validate_config(&cfg_path).unwrap();
    assert_eq!(loaded.topology.build().unwrap().len(), 9);

    fs::remove_file(&topo_path).unwrap();
    match validate_config(&cfg_path) {
        Err(Error::Config(v)) => assert!(v.iter().any(|m| m.contains(topo_path.to_str().unwrap()))),
        other => panic!("{other:?}"),
    }
}

#[test]
fn published_probabilities_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), &["rr"]);
    for app in &mut c.apps {
        app.p_cloud = 0.10;
        app.p_cloud_feedback = 0.50;
    }
    assert!(c.violations().is_empty(), "{:?}", c.violations());
    c.apps[0].fog_instr = c.apps[2].fog_instr;
    assert!(c.violations().iter().any(|m| m.contains("ordering")));
}
