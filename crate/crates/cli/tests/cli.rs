use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use flipst::config::RunConfig;
use flipst::eval::ModelSpec;
use flipst::grid::GridSpec;
use flipst::io::load_stack;

fn small_config(dir: &Path) -> PathBuf {
    let mut c = RunConfig::example_one();
    c.name = "small".into();
    c.simulation.grid = GridSpec::square(20).unwrap();
    c.simulation.steps = 10;
    c.comparison.train_steps = 6;
    c.comparison.eval_times = (3..10).collect();
    c.models = vec![ModelSpec::direct(20), ModelSpec::flipped(80)];
    let p = dir.join("small.toml");
    fs::write(&p, c.to_toml().unwrap()).unwrap();
    p
}

fn flipst(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_flipst")).args(args).output().unwrap()
}

fn only(dir: &Path, prefix: &str) -> PathBuf {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(hits.len(), 1, "{prefix}: {hits:?}");
    hits.pop().unwrap()
}

#[test]
fn simulate_writes_a_stack_and_a_run_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = flipst(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let hash = RunConfig::load(cfg.to_str().unwrap()).unwrap().hash();
    let stack = load_stack(&out.join(format!("simulate_{hash}"))).unwrap();
    assert_eq!(stack.frames.len(), 10);
    assert_eq!(stack.manifest.config_hash, hash);
    let log: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join(format!("run_log_simulate_{hash}.json"))).unwrap()).unwrap();
    assert_eq!(log["status"], "ok");
    assert_eq!(log["config_hash"], hash.as_str());
    assert!(log["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(log["version"].is_string());
}

#[test]
fn seed_override_changes_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    for seed in ["1", "2"] {
        let o = flipst(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert!(o.status.success());
    }
    let stacks = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("simulate_"))
        .count();
    assert_eq!(stacks, 2);
}

#[test]
fn filter_with_and_without_flip_gives_two_labelled_stacks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let c = cfg.to_str().unwrap();
    let o = out.to_str().unwrap();
    for (flip, k) in [("false", "20"), ("true", "80")] {
        let r = flipst(&["filter", "--config", c, "--out", o, "--flip", flip, "--k", k]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let nf = load_stack(&only(&out, "filter_NF20_")).unwrap();
    let f = load_stack(&only(&out, "filter_F80_")).unwrap();
    assert_eq!(nf.frames.len(), 6);
    assert_eq!(f.frames[0].grid(), GridSpec::square(20).unwrap());
    let r = flipst(&["predict", "--config", c, "--out", o, "--k", "20", "--horizon", "3"]);
    assert!(r.status.success());
    assert_eq!(load_stack(&only(&out, "predict_NF20_")).unwrap().frames.len(), 3);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "bogus = 3\n").unwrap();
    let o = dir.path().to_str().unwrap();
    assert_eq!(flipst(&["simulate", "--config", bad.to_str().unwrap(), "--out", o]).status.code(), Some(2));
    assert_eq!(flipst(&["simulate", "--config", "nope", "--out", o]).status.code(), Some(2));
    assert_eq!(flipst(&["evaluate", "--region", "0,1,2", "--out", o]).status.code(), Some(2));
    assert_eq!(flipst(&["render", "--out", o]).status.code(), Some(2));
}

#[test]
fn dbz_stacks_need_an_explicit_conversion() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let mut c = RunConfig::storm();
    c.storm.steps = 4;
    c.comparison.train_steps = 3;
    c.comparison.eval_times = vec![3];
    let cfg = dir.path().join("storm.toml");
    fs::write(&cfg, c.to_toml().unwrap()).unwrap();
    let cfg = cfg.to_str().unwrap();
    assert!(flipst(&["simulate", "--config", cfg, "--out", o]).status.success());
    let raw = only(&out, "simulate_");
    assert_eq!(load_stack(&raw).unwrap().manifest.units, "dBZ");
    let r = flipst(&["evaluate", "--config", cfg, "--input", raw.to_str().unwrap(), "--out", o]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("convert"));
    assert!(flipst(&["convert", "--config", cfg, "--input", raw.to_str().unwrap(), "--out", o]).status.success());
    let rain = load_stack(&only(&out, "rain_")).unwrap();
    assert_eq!(rain.manifest.units, "mm/hr");
    assert!(rain.frames.iter().all(|f| f.values().iter().all(|&x| x > 0.0)));
    let r = flipst(&["render", "--input", only(&out, "rain_").to_str().unwrap(), "--out", o]);
    assert!(r.status.success());
    let pics = only(&out, "render_");
    assert!(pics.join("frame_0003.pgm").exists() && pics.join("frame_0003.pgm.scale").exists());
}
