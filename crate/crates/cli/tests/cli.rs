use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn foglb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foglb"))
        .args(args)
        .env_remove("FOGLB_SEEDS")
        .env_remove("FOGLB_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("grid.toml");
    fs::write(
        &path,
        format!(
            "output_dir = \"{}\"\n{body}\n[topology]\nnodes = 10\nclusters = 3\n",
            dir.join("out").display()
        ),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn topo_gen_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.toml");
    let o = foglb(&["topo", "gen", "--nodes", "12", "--clusters", "3", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let topo = foglb_core::topology::Topology::load(&out).unwrap();
    assert_eq!(topo.len(), 12);
    assert_eq!(topo.clusters().len(), 3);
}

#[test]
fn validate_reports_every_problem_with_config_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "betas = [-1.0]\npolicies = [\"rr\", \"nope\"]\nhorizons = [1000.0]\nseeds = [1]",
    );
    let o = foglb(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("beta must be positive"), "{err}");
    assert!(err.contains("unknown policy"), "{err}");
}

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "betas = [100.0]\npolicies = [\"rr\"]\nhorizons = [1000.0]\nseeds = [1]");
    let o = foglb(&["validate", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ok:"));
}

#[test]
fn missing_topology_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.toml");
    fs::write(
        &path,
        "betas = [100.0]\npolicies = [\"rr\"]\nhorizons = [1000.0]\nseeds = [1]\noutput_dir = \"x\"\n[topology]\nfile = \"/no/such/topo.toml\"\n",
    )
    .unwrap();
    let o = foglb(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/topo.toml"));
}

#[test]
fn bench_writes_one_csv_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "betas = [100.0]\npolicies = [\"random\", \"rr\"]\nhorizons = [2000.0]\nseeds = [1, 2]",
    );
    let o = foglb(&["bench", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let runs = fs::read_dir(dir.path().join("out/runs")).unwrap().count();
    assert_eq!(runs, 4);
    let summary = fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert!(summary.starts_with("policy,beta,horizon,seed"));
    assert!(dir.path().join("out/summary_ci.csv").exists());
}

#[test]
fn bench_fails_when_every_cell_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "betas = [100.0]\npolicies = [\"electre\"]\nhorizons = [2000.0]\nseeds = [1]");
    let o = foglb(&["bench", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("not implemented"), "{}", stderr(&o));
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "betas = [100.0]\npolicies = [\"ddql\"]\nhorizons = [2000.0]\nseeds = [1]\n\
         [schedule]\ntotal_train_steps = 50\nprefill = 200\nhidden = [16]\nepisode_horizon = 2000.0",
    );
    let ckpt = dir.path().join("a.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let o = foglb(&["train", "--config", &cfg, "--seed", "3", "--out", ckpt]);
    assert!(o.status.success(), "{}", stderr(&o));
    let eval = |seed: &str| {
        let o = foglb(&["eval", "--ckpt", ckpt, "--config", &cfg, "--horizon", "2000", "--seed", seed]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let first = eval("5");
    assert!(first.contains("policy ddql beta 100"), "{first}");
    assert_eq!(first, eval("5"));
}

#[test]
fn eval_baseline_and_usage_errors() {
    let o = foglb(&["eval", "--policy", "rr", "--horizon", "2000", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fog"));

    let o = foglb(&["eval", "--policy", "ddql", "--horizon", "2000"]);
    assert_eq!(o.status.code(), Some(2));
    let o = foglb(&["eval", "--horizon", "2000"]);
    assert_eq!(o.status.code(), Some(2));
    let o = foglb(&["eval", "--ckpt", "/no/such.ckpt"]);
    assert_eq!(o.status.code(), Some(3));
}
