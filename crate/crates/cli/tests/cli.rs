use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn permtx(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_permtx"))
        .args(args)
        .env("PERMTX_OUT", out)
        .output()
        .expect("binary runs")
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "core", "scenarios", &format!("{name}.json")]
        .iter()
        .collect();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn clean_run_exits_zero_and_writes_into_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let o = permtx(&["run", "--scenario", &scenario("quorum-ibft-basic"), "--seed", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(dir.path().join("quorum-ibft-basic-seed5.trace").exists());
    let verdicts: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("quorum-ibft-basic-seed5.verdicts.json")).unwrap())
            .unwrap();
    assert_eq!(verdicts.as_array().unwrap().len(), 4);
}

#[test]
fn violating_run_exits_one_and_replay_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let o = permtx(&["run", "--scenario", &scenario("chain-hash-order")], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let run_lines: Vec<String> = stdout(&o).lines().skip(1).map(String::from).collect();
    assert!(run_lines.iter().any(|l| l.starts_with("session") && l.contains("VIOLATED")));

    let trace = dir.path().join("chain-hash-order-seed0.trace");
    let r = permtx(&["replay", "--trace", trace.to_str().unwrap()], dir.path());
    assert_eq!(r.status.code(), Some(1));
    let replay_lines: Vec<String> = stdout(&r).lines().map(String::from).collect();
    assert_eq!(run_lines, replay_lines);

    let r = permtx(&["replay", "--trace", trace.to_str().unwrap(), "--check", "durability,1cs"], dir.path());
    assert_eq!(r.status.code(), Some(0));
}

#[test]
fn out_flag_overrides_env() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let o = permtx(
        &["run", "--scenario", &scenario("zero-tx"), "--out", flag_dir.path().to_str().unwrap()],
        env_dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(flag_dir.path().join("zero-tx-seed0.trace").exists());
    assert_eq!(fs::read_dir(env_dir.path()).unwrap().count(), 0);
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"protocol": "quorum-ibft", "nodes": 4, "colour": "red"}"#).unwrap();
    let o = permtx(&["run", "--scenario", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));

    let o = permtx(&["run", "--scenario", &scenario("zero-tx"), "--check", "liveness"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = permtx(&["replay", "--trace", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = permtx(&["run", "--scenario", "/nonexistent/x.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = permtx(&["suite", "--table2", "--format", "xml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn suite_exports_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let o = permtx(&["suite", "--table2", "--runs", "1", "--format", "csv"], dir.path());
    assert!(matches!(o.status.code(), Some(0 | 1)));
    let csv = stdout(&o);
    assert!(csv.starts_with("row,Aura/Clique/Multichain,Quorum/Ripple,Chain,Fabric,Sawtooth,Tendermint/BigchainDB"));
    assert_eq!(csv, fs::read_to_string(dir.path().join("table2.csv")).unwrap());

    let o = permtx(&["suite", "--table2", "--runs", "1", "--seed-base", "7", "--format", "json"], dir.path());
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["seed_base"], 7);
    assert_eq!(json["columns"].as_array().unwrap().len(), 6);
}
