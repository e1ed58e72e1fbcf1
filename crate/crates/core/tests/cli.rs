use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};

use qplab::cli::{Command, EnergyGrid, ExperimentConfig, Format, Manifest, Params};
use qplab::model::spec::PotentialSpec;
use qplab::{Frequency, TrigPotential};

fn qplab(args: &[&str]) -> Output {
    Process::new(env!("CARGO_BIN_EXE_qplab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn base(v: &TrigPotential, w: &Frequency) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: 1,
        command: None,
        potential: PotentialSpec::from_parts(v, w),
        energies: EnergyGrid::default(),
        n: vec![100],
        samples: None,
        seed: 0,
        output: None,
        format: Format::Csv,
        params: Params::default(),
    }
}

fn run_ok(args: &[&str]) -> Output {
    let out = qplab(args);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn lyapunov_grid_writes_one_row_per_energy() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(&TrigPotential::cosine(5.0), &Frequency::golden());
    cfg.energies = EnergyGrid::Range {
        lo: -7.0,
        hi: 7.0,
        count: 50,
    };
    cfg.samples = Some(32);
    let path = write_config(dir.path(), "lyap.json", &cfg);
    let out = dir.path().join("out");
    run_ok(&["lyapunov", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let (header, rows) = read_csv(&out.join("lyapunov.csv"));
    assert_eq!(header, ["n", "E", "value", "std_error", "samples", "quadrature"]);
    assert_eq!(rows.len(), 50);
    for r in &rows {
        let l: f64 = r[2].parse().unwrap();
        assert!(l > 0.5, "{r:?}");
    }
    let manifest: Manifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("lyapunov.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, Command::Lyapunov);
    assert_eq!(manifest.config_sha256.len(), 64);
    assert!(out.join("lyapunov_vs_E.dat").exists());
    assert!(out.join("lyapunov_vs_E.gp").exists());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(&TrigPotential::cosine_sum_2d(5.0), &Frequency::default_2d());
    cfg.energies = EnergyGrid::Values(vec![0.0, 1.5]);
    cfg.samples = Some(100);
    let path = write_config(dir.path(), "cfg.json", &cfg);
    let mut bodies = Vec::new();
    let mut hashes = Vec::new();
    for (i, threads) in ["1", "2", "1"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        run_ok(&[
            "lyapunov",
            "--config",
            path.to_str().unwrap(),
            "--seed",
            "42",
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        bodies.push(std::fs::read(out.join("lyapunov.csv")).unwrap());
        let m: Manifest =
            serde_json::from_str(&std::fs::read_to_string(out.join("lyapunov.csv.manifest.json")).unwrap()).unwrap();
        assert_eq!(m.seed, 42);
        hashes.push(m.config_sha256);
    }
    assert_eq!(bodies[0], bodies[1]);
    assert_eq!(bodies[0], bodies[2]);
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn malformed_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"schema_version\": 1, \"potential\": 3}").unwrap();
    let out = qplab(&["lyapunov", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("ConfigInvalid"), "{err}");
    assert!(err.contains("line 1"), "{err}");

    let out = qplab(&["lyapunov"]);
    assert_eq!(out.status.code(), Some(2));
    let out = qplab(&["lyapunov", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn module_errors_are_named_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base(&TrigPotential::zero(1), &Frequency::golden());
    cfg.params.interval = Some([1, 1]);
    let path = write_config(dir.path(), "green.json", &cfg);
    let out = qplab(&["green", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("SingularEnergy"));
    assert!(!dir.path().join("green.csv").exists());
}

#[test]
fn recursion_ladder_json_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::flagship_recursion();
    cfg.n = vec![100, 200];
    cfg.samples = Some(256);
    let path = write_config(dir.path(), "rec.json", &cfg);
    run_ok(&["recursion", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("recursion.json")).unwrap()).unwrap();
    assert_eq!(doc["config"]["n"], serde_json::json!([100, 200]));
    let rungs = doc["result"]["rungs"].as_array().unwrap();
    assert_eq!(rungs.len(), 2);
    for key in ["n", "L", "std_error", "rho", "gate_ok", "drop_margin"] {
        assert!(rungs[1].get(key).is_some(), "missing {key}");
    }
    let dat = std::fs::read_to_string(dir.path().join("ladder.dat")).unwrap();
    assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn mismatched_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "rec.json", &ExperimentConfig::flagship_recursion());
    let out = qplab(&["ldt", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn built_in_configs_print_and_parse() {
    for cmd in ["localize", "recursion"] {
        let out = run_ok(&[cmd, "--print-config"]);
        let cfg = ExperimentConfig::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
        assert_eq!(cfg.command.unwrap().name(), cmd);
    }
}

#[test]
fn help_documents_columns() {
    let out = run_ok(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("n,E,value,std_error,samples,quadrature"));
    assert!(text.contains("n,L,std_error,rho,gate_ok,drop_margin"));
}

#[test]
fn remaining_commands_produce_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let v = TrigPotential::cosine(5.0);
    let w = Frequency::golden();

    let mut ldt = base(&v, &w);
    ldt.n = vec![20, 40];
    ldt.samples = Some(2000);
    ldt.params.sigma = Some(0.3);
    run_ok(&["ldt", "--config", write_config(dir.path(), "ldt.json", &ldt).to_str().unwrap(), "--out", d]);
    assert_eq!(read_csv(&dir.path().join("ldt.csv")).1.len(), 2);

    let mut green = base(&TrigPotential::cosine(10.0), &w);
    green.energies = EnergyGrid::Values(vec![13.0]);
    green.params.interval = Some([1, 30]);
    run_ok(&["green", "--config", write_config(dir.path(), "g.json", &green).to_str().unwrap(), "--out", d]);
    assert_eq!(read_csv(&dir.path().join("green.csv")).1.len(), 900);

    let mut pave = green.clone();
    pave.params.interval = Some([1, 200]);
    pave.params.window = Some(40);
    pave.format = Format::Json;
    run_ok(&["pave", "--config", write_config(dir.path(), "p.json", &pave).to_str().unwrap(), "--out", d]);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("pave.json")).unwrap()).unwrap();
    assert!(doc["result"]["certificate"]["rate_ok"].as_bool().unwrap());

    let mut loc = ExperimentConfig::flagship_localization();
    loc.params.interval = Some([-60, 60]);
    run_ok(&["localize", "--config", write_config(dir.path(), "l.json", &loc).to_str().unwrap(), "--out", d]);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("localize.json")).unwrap()).unwrap();
    assert_eq!(doc["result"]["count"], 121);
    assert!(dir.path().join("decay_profile.dat").exists());

    let mut lb = base(&TrigPotential::cosine(200.0).with_strip_width(2.0), &w);
    lb.energies = EnergyGrid::Values(vec![0.0]);
    lb.samples = Some(20_000);
    lb.format = Format::Json;
    run_ok(&["lowerbound", "--config", write_config(dir.path(), "lb.json", &lb).to_str().unwrap(), "--out", d]);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("lowerbound.json")).unwrap()).unwrap();
    assert!(doc["result"]["epsilon_gap"]["epsilon"].as_f64().unwrap() > 0.0);
    assert!(doc["result"]["complexified_growth"][0]["per_step_ok"].as_bool().unwrap());
}
