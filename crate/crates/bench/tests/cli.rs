use std::path::PathBuf;
use std::process::{Command, Output};

fn nicrpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nicrpc")).args(args).output().expect("run nicrpc")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nicrpc-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn sweep_prints_csv() {
    let out = nicrpc(&["ifmodel-sweep", "--method", "mmio", "--load-grid", "1,2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn bad_config_exits_two() {
    let dir = scratch("badcfg");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "[kvs]\nno_such_key = 1\n").unwrap();
    let out = nicrpc(&["kvs-bench", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = nicrpc(&["ifmodel-sweep", "--method", "smoke-signals"]);
    assert_eq!(out.status.code(), Some(2));
    let out = nicrpc(&["ifmodel-sweep", "--batch", "many"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn broken_sla_exits_one() {
    let dir = scratch("sla");
    let cfg = dir.join("zero_budget.toml");
    // no drop rate is strictly below a zero budget
    std::fs::write(&cfg, "[kvs]\nkeys = 1000\ndrop_budget = 0.0\n").unwrap();
    let out = nicrpc(&["kvs-bench", "--config", cfg.to_str().unwrap(), "--duration", "0.2"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn kvs_run_writes_report() {
    let dir = scratch("kvs");
    let cfg = dir.join("kvs.toml");
    std::fs::write(&cfg, "[kvs]\nkeys = 1000\n").unwrap();
    let csv = dir.join("kvs.csv");
    let out = nicrpc(&[
        "kvs-bench",
        "--config",
        cfg.to_str().unwrap(),
        "--duration",
        "0.2",
        "--get-ratio",
        "0.95",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("bench,offered_rps,achieved_rps"));
    assert!(text.lines().nth(1).unwrap().starts_with("kvs,"));
}

#[test]
fn idl_gen_writes_stubs() {
    let dir = scratch("idl");
    let src = dir.join("echo.dgr");
    std::fs::write(&src, "Message Ping { int64 n; }\nService Echo { rpc ping(Ping) returns(Ping); }\n").unwrap();
    let out_dir = dir.join("gen");
    let out = nicrpc(&["idl-gen", "--in", src.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let code = std::fs::read_to_string(out_dir.join("echo.rs")).unwrap();
    assert!(code.contains("pub struct EchoClient"));

    std::fs::write(&src, "Message Ping { float n; }\n").unwrap();
    let out = nicrpc(&["idl-gen", "--in", src.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("echo.dgr:1"));
}
