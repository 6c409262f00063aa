use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(out_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sevenleague"))
        .args(args)
        .env("SEVENLEAGUE_OUT_DIR", out_dir)
        .output()
        .unwrap()
}

fn ok(out_dir: &Path, args: &[&str]) -> String {
    let o = run(out_dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_required_field_exits_2_with_path() {
    let d = scratch("missing_field");
    let cfg = d.join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 0, "scheme": {"kind": "euler", "params": {"kind": "gbm", "mu": 0.1, "sigma": 0.3}, "dt": 0.5, "horizon": 1, "n_paths": 10}}"#,
    )
    .unwrap();
    let o = run(&d, &["simulate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scheme.params"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_missing_section_exit_2() {
    let d = scratch("unknown_key");
    let cfg = d.join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 0, "shceme": {}}"#).unwrap();
    assert_eq!(run(&d, &["simulate", cfg.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"seed": 0}"#).unwrap();
    let o = run(&d, &["price", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("scheme"));
}

#[test]
fn invalid_values_exit_2() {
    let d = scratch("invalid_values");
    let cfg = d.join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 0, "scheme": {"kind": "euler", "params": {"kind": "gbm", "mu": 0.1, "sigma": -0.3, "y0": 1}, "dt": 0.5, "horizon": 1, "n_paths": 10}}"#,
    )
    .unwrap();
    assert_eq!(run(&d, &["simulate", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn table1_dry_run_plans_80000_rows_without_writing() {
    let d = scratch("dry_run");
    let cfg = configs().join("gbm_table1.json");
    let out = ok(&d, &["gen-data", cfg.to_str().unwrap(), "--dry-run"]);
    assert!(out.contains("80000 rows"), "{out}");
    assert_eq!(std::fs::read_dir(&d).unwrap().count(), 0);
}

#[test]
fn missing_upstream_artifact_names_producer() {
    let d = scratch("missing_upstream");
    let cfg = configs().join("smoke.json");
    let o = run(&d, &["train", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sevenleague gen-data"), "{}", stderr(&o));
    let o = run(&d, &["build-cdc", cfg.to_str().unwrap()]);
    assert!(stderr(&o).contains("sevenleague train"), "{}", stderr(&o));
}

#[test]
fn bundled_configs_parse() {
    let d = scratch("bundled");
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        let text = std::fs::read_to_string(&p).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let cmds: &[(&str, &str)] = &[
            ("data", "gen-data"),
            ("scheme", "simulate"),
            ("study", "study"),
            ("ks", "ks"),
        ];
        for (section, cmd) in cmds {
            if v.get(section).is_some() {
                let o = run(&d, &[cmd, p.to_str().unwrap(), "--dry-run"]);
                assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
            }
        }
    }
}

#[test]
fn smoke_pipeline() {
    let d = scratch("smoke");
    let cfg = configs().join("smoke.json");
    let cfg = cfg.to_str().unwrap();

    let out = ok(&d, &["gen-data", cfg]);
    assert!(out.contains("rows: 120"), "{out}");
    assert!(out.contains("label 4:"));
    assert!(d.join("smoke_data.csv").exists());

    ok(&d, &["train", cfg]);
    assert!(d.join("smoke_model.json").exists());
    let loss = std::fs::read_to_string(d.join("smoke_model.loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 31);
    assert!(d.join("smoke_model.metrics.json").exists());

    ok(&d, &["build-cdc", cfg]);
    assert!(d.join("smoke_cdc.json").exists());
    assert!(d.join("smoke_cdc.bin").exists());

    ok(&d, &["simulate", cfg]);
    let first = std::fs::read(d.join("smoke_paths.bin")).unwrap();
    ok(&d, &["simulate", cfg]);
    assert_eq!(first, std::fs::read(d.join("smoke_paths.bin")).unwrap());

    ok(&d, &["price", cfg]);
    let price: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("smoke_price.json")).unwrap()).unwrap();
    for key in ["price", "stderr", "n_paths", "scheme", "spec", "seed"] {
        assert!(price.get(key).is_some(), "missing {key}");
    }
    assert_eq!(price["scheme"], "7l-cdc");
    assert!(price["price"].as_f64().unwrap() > 0.0);

    ok(&d, &["study", cfg, "--schemes", "euler,milstein,7lcdc"]);
    let csv = std::fs::read_to_string(d.join("smoke_convergence.csv")).unwrap();
    assert!(csv.starts_with("scheme,dt,strong_error"));
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    assert!(csv.contains("\n7l-cdc,"));

    ok(&d, &["ks", cfg]);
    let ks = std::fs::read_to_string(d.join("smoke_ks.csv")).unwrap();
    assert_eq!(ks.lines().count(), 1 + 2 * 2);

    for cmd in ["gen-data", "train", "build-cdc", "simulate", "price", "study", "ks"] {
        assert!(d.join(format!("{cmd}.manifest.json")).exists(), "{cmd}");
    }
}

#[test]
fn seed_override_is_recorded() {
    let d = scratch("seed_override");
    let cfg = configs().join("classical_convergence.json");
    ok(&d, &["study", cfg.to_str().unwrap(), "--seed", "42", "--threads", "1"]);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("study.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([42]));
    assert_eq!(m["config"]["seed"], 42);
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 2);
    let sha = m["artifacts"][0]["sha256"].as_str().unwrap();
    assert_eq!(sha.len(), 64);
}
