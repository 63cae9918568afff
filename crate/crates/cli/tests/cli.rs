use std::path::PathBuf;
use std::process::{Command, Output};

fn eivsos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eivsos")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("eivsos-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn simulate(dir: &PathBuf, plant: &str, t: &str, eps: &str, seed: &str) -> String {
    let p = dir.join(format!("{plant}-{t}-{eps}-{seed}.json"));
    let o = eivsos(&["simulate", "--plant", plant, "-T", t, "--eps-x", eps, "--seed", seed, "-o", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    p.to_str().unwrap().to_string()
}

#[test]
fn sizes_headline() {
    let o = eivsos(&["sizes", "--method", "ss-alt", "-n", "2", "-m", "1", "-d", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "28,7,7,7");
    let o = eivsos(&["sizes", "--method", "ss-alt", "-n", "2", "-m", "1", "-d", "1", "--csv"]);
    assert!(stdout(&o).starts_with("role,count,size"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = eivsos(&["sizes", "--method", "ss-alt", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(eivsos(&["sizes", "--method", "lqr"]).status.code(), Some(2));
    assert_eq!(eivsos(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bad_input_files_are_usage_errors() {
    let dir = scratch("bad");
    let p = dir.join("t.json");
    std::fs::write(&p, "{\"n\": 2}").unwrap();
    let o = eivsos(&["synth", "--method", "ss-alt", "--traj", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = eivsos(&["montecarlo", "--config", "/definitely/missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn clean_rate_minimization_prints_the_optimal_rate() {
    let dir = scratch("rate");
    let t = simulate(&dir, "single-input", "4", "0", "0");
    let k = dir.join("k.json");
    let o = eivsos(&["synth", "--method", "ss-alt", "--traj", &t, "--rate-min", "-o", k.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("lambda:")).unwrap();
    let lambda: f64 = line["lambda:".len()..].trim().parse().unwrap();
    assert!((lambda - 0.4427).abs() < 5e-3, "{lambda}");

    let o = eivsos(&["verify", "--controller", k.to_str().unwrap(), "--plant", "single-input", "--traj", &t, "--samples", "20"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["linf_norm"].as_f64().unwrap() < 1.0);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn infeasible_data_exits_with_one() {
    let dir = scratch("smd");
    let t = simulate(&dir, "spring-mass-damper", "8", "0.05", "1");
    let o = eivsos(&["synth", "--method", "ss-alt", "--traj", &t]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("infeasible"));
    let o = eivsos(&["synth", "--method", "qs-alt", "--traj", &t]);
    assert_eq!(o.status.code(), Some(0));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn rate_min_flag_needs_a_superstability_method() {
    let dir = scratch("flag");
    let t = simulate(&dir, "single-input", "4", "0", "0");
    let o = eivsos(&["synth", "--method", "qs-alt", "--traj", &t, "--rate-min"]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::remove_dir_all(dir).unwrap();
}

fn without_wall(csv: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let wall = header.iter().position(|h| h.starts_with("wall")).unwrap();
    lines
        .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != wall).map(|(_, f)| f).collect::<Vec<_>>().join(","))
        .collect()
}

#[test]
fn montecarlo_is_deterministic() {
    let dir = scratch("mc");
    let cfg = dir.join("c.json");
    std::fs::write(
        &cfg,
        r#"{"plant": "single-input", "horizon": 4, "trials": 3, "seed": 5, "method": "rate-min",
            "bounds": {"eps_x": 0.02, "eps_u": 0.0, "eps_w": 0.0}}"#,
    )
    .unwrap();
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("run{k}"));
        let o = eivsos(&["montecarlo", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap(), "--csv"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        runs.push((
            std::fs::read_to_string(out.join("rate-min_eps_0.02_trials.csv")).unwrap(),
            std::fs::read_to_string(out.join("rate-min_summary.csv")).unwrap(),
        ));
    }
    assert_eq!(without_wall(&runs[0].0), without_wall(&runs[1].0));
    assert_eq!(without_wall(&runs[0].1), without_wall(&runs[1].1));
    assert_eq!(runs[0].0.lines().count(), 4);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn h2sweep_forces_the_h2_method() {
    let dir = scratch("h2");
    let cfg = dir.join("c.json");
    std::fs::write(
        &cfg,
        r#"{"plant": "two-input-h2", "horizon": 6, "trials": 1, "seed": 2, "method": "ss-alt",
            "sweep": {"param": "eps", "values": [0.0]}}"#,
    )
    .unwrap();
    let o = eivsos(&["h2sweep", "--config", cfg.to_str().unwrap(), "--csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.lines().nth(1).unwrap().contains("h2"), "{out}");
    std::fs::remove_dir_all(dir).unwrap();
}
