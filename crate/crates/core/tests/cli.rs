use std::path::Path;
use std::process::{Command, Output};

fn cav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cav-detect")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    let o = cav(&["frobnicate"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&cav(&["gen", "--bogus"])), 2);
    assert_eq!(code(&cav(&[])), 2);
    assert_eq!(code(&cav(&["run", "--scenario", "nope", "--input", "x.csv"])), 2);
    assert_eq!(code(&cav(&["--help"])), 0);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"anomaly": {"alpha": 0.01, "bogus": 1}}"#).unwrap();
    assert_eq!(code(&cav(&["--config", s(&cfg), "--out", s(dir.path()), "gen"])), 2);
    std::fs::write(&cfg, r#"{"anomaly": {"alpha": 3.0}}"#).unwrap();
    assert_eq!(code(&cav(&["--config", s(&cfg), "--out", s(dir.path()), "gen"])), 2);
    assert_eq!(code(&cav(&["--config", "/nonexistent.json", "gen"])), 2);
    assert_eq!(code(&cav(&["--out", s(dir.path()), "inject", "--input", "/nonexistent.csv"])), 2);
}

#[test]
fn runtime_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,x_lead\n0,1\n").unwrap();
    assert_eq!(code(&cav(&["--out", s(dir.path()), "run", "--input", s(&bad), "--scenario", "chi2_idm"])), 1);
}

#[test]
fn gen_on_the_training_trace_gives_4000_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let o = cav(&["--out", s(dir.path()), "gen", "--train"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&dir.path().join("dataset.csv")), 4001);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert!(meta["details"]["generation"]["initial_gap"].as_f64().unwrap() > 0.0);
    assert_eq!(meta["config"]["generation"]["noise_var"].as_f64(), Some(0.02));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"tau": 0.5, "generation": {"eps_range": 0.05}}"#).unwrap();
    let a = dir.path().join("a");
    assert_eq!(code(&cav(&["--config", s(&cfg), "--seed", "9", "--out", s(&a), "gen"])), 0);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("metadata.json")).unwrap()).unwrap();
    let echoed = dir.path().join("echo.json");
    std::fs::write(&echoed, serde_json::to_string(&meta["config"]).unwrap()).unwrap();
    let b = dir.path().join("b");
    assert_eq!(code(&cav(&["--config", s(&echoed), "--out", s(&b), "gen"])), 0);
    assert_eq!(std::fs::read(a.join("dataset.csv")).unwrap(), std::fs::read(b.join("dataset.csv")).unwrap());
}

#[test]
fn gen_inject_train_run_roc_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&cav(&["--out", s(d), "--seed", "2", "gen"])), 0);
    let inj = d.join("inj");
    assert_eq!(code(&cav(&["--out", s(&inj), "--seed", "2", "inject", "--input", s(&d.join("dataset.csv")), "--c", "1"])), 0);
    let labels = std::fs::read_to_string(inj.join("labels.csv")).unwrap();
    assert!(labels.starts_with("sensor,type,onset,duration\n"));
    let bank = d.join("bank");
    assert_eq!(code(&cav(&["--out", s(&bank), "--seed", "2", "train"])), 0);
    let run = d.join("run");
    let o = cav(&["--out", s(&run), "--seed", "2", "run", "--input", s(&inj.join("corrupted.csv")), "--bank", s(&bank.join("bank.json"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    assert!(trace.starts_with("k,t,x_prior,v_prior,x_post,v_post,nu_x,nu_v,S11,S12,S22,verdict\n"));
    assert_eq!(trace.lines().count(), 2000);
    assert!(std::fs::read_to_string(run.join("innovations.svg")).unwrap().contains("class=\"gate\""));
    let roc = d.join("roc");
    assert_eq!(code(&cav(&["--out", s(&roc), "roc", "--scenario", "chi2_idm", "--c", "0.1"])), 0);
    assert!(std::fs::read_to_string(roc.join("roc.csv")).unwrap().starts_with("threshold,fpr,tpr\n"));
    assert!(std::fs::read_to_string(roc.join("roc.svg")).unwrap().contains("<polyline"));
}

#[test]
fn null_run_at_the_999_gate_is_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"anomaly": {"alpha": 0.0}, "pipeline": {"chi2": {"threshold": 13.815510557964274}}}"#).unwrap();
    let mut quiet = 0;
    for seed in 0..5 {
        let out = dir.path().join(seed.to_string());
        let seed = seed.to_string();
        assert_eq!(code(&cav(&["--config", s(&cfg), "--seed", &seed, "--out", s(&out), "gen"])), 0);
        let o = cav(&["--config", s(&cfg), "--seed", &seed, "--out", s(&out), "run", "--input", s(&out.join("dataset.csv")), "--scenario", "chi2_idm"]);
        assert_eq!(code(&o), 0);
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("N/A"), "{stdout}");
        if stdout.contains(" 0 flagged") {
            quiet += 1;
        }
    }
    assert!(quiet >= 4, "{quiet}/5");
}

#[test]
fn eval_defaults_write_27_cells_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = cav(&["--out", s(out), "eval"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(lines(&a.join("summary.csv")), 28);
    assert_eq!(lines(&a.join("results.csv")), 271);
    assert_eq!(std::fs::read(a.join("results.csv")).unwrap(), std::fs::read(b.join("results.csv")).unwrap());
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["details"]["banks"].as_array().unwrap().len(), 30);
    assert!(meta["config"]["bank"]["rates"].is_array());
}
