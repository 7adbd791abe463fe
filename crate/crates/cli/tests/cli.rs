use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use refinery_core::engine::RunRecord;
use refinery_core::{gmm, Domain, GmmModel, InitState, OracleField, StageSpec};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_refinery"));
    c.env_remove("REFINERY_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

fn constant_stage(p: f64, dim: usize) -> StageSpec {
    StageSpec::with_default_noise(0, OracleField::constant(Domain::unit(dim).unwrap(), p).unwrap()).unwrap()
}

fn read(p: PathBuf) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn eval_map_constant_field_and_repeatable() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), &json!({ "stages": [constant_stage(0.3, 3)] }));
    let cfg = cfg.to_str().unwrap();
    let o = run(t.path(), &["--config", cfg, "eval-map", "--resolution", "16x8", "--slice", "*,0.5,*", "--out", "a"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(t.path().join("a/success_map.csv"));
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r.split(',').count() == 8 && r.split(',').all(|v| v == "0.3")));
    assert!(csv.starts_with("# dims: rows=0 cols=2 resolution=16x8\n# slice: *,0.5,*\n"));

    let o = run(t.path(), &["--config", cfg, "eval-map", "--resolution", "16x8", "--slice", "*,0.5,*", "--out", "b"]);
    assert!(o.status.success());
    assert_eq!(read(t.path().join("a/success_map.csv")), read(t.path().join("b/success_map.csv")));
    assert_eq!(read(t.path().join("a/eval-map.provenance.json")), read(t.path().join("b/eval-map.provenance.json")));

    let o = run(t.path(), &["--config", cfg, "eval-map", "--slice", "*,*,*", "--out", "c"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_map_full_resolution_is_fast() {
    let t = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = run(t.path(), &["--seed", "3", "eval-map", "--resolution", "256", "--out", "m"]);
    assert!(o.status.success());
    assert!(start.elapsed().as_secs_f64() < 2.0, "{:?}", start.elapsed());
    let csv = read(t.path().join("m/success_map.csv"));
    assert_eq!(csv.lines().count(), 2 + 256);
}

#[test]
fn finetune_smoke_and_record_roundtrip() {
    let t = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = run(
        t.path(),
        &["--seed", "1", "finetune", "--probes", "20", "--rollouts", "5", "--max-epochs", "5", "--out", "f"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs_f64() < 5.0);
    let text = read(t.path().join("f/finetune_record.json"));
    let rec: RunRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(rec.epoch_rates.len(), rec.epochs);
    assert!(rec.epochs <= 5);
    assert_eq!(format!("{}\n", serde_json::to_string_pretty(&rec).unwrap()), text);
}

#[test]
fn config_errors_exit_two_and_name_the_field() {
    let t = tempfile::tempdir().unwrap();
    let o = run(t.path(), &["finetune", "--acquisition", "thompson", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("acquisition.kind"));

    let cfg = write_config(t.path(), &json!({ "finetune": { "acquisition": { "kind": "thompson" } } }));
    let o = run(t.path(), &["--config", cfg.to_str().unwrap(), "finetune", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("thompson"));

    let o = run(t.path(), &["finetune", "--probes", "4", "--rollouts", "5", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(t.path(), &["bench", "--seeds", "1", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(t.path(), &["--threads", "0", "eval-map", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(t.path(), &["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(t.path(), &["--config", "missing.json", "eval-map"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn deploy_log_is_self_consistent_with_default_budgets() {
    let t = tempfile::tempdir().unwrap();
    let o = run(t.path(), &["--seed", "2", "deploy", "--deployments", "20", "--out", "d"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log: Value = serde_json::from_str(&read(t.path().join("d/deploy_log.json"))).unwrap();
    assert_eq!(log["rollouts"], 1000);
    assert_eq!(log["candidates"], 1000);
    assert!(log["warning"].is_null());
    let m: GmmModel = serde_json::from_value(log["gmm"].clone()).unwrap();
    let entries = log["deployments"].as_array().unwrap();
    assert_eq!(entries.len(), 20);
    for e in entries {
        let x: InitState = serde_json::from_value(e["chosen"].clone()).unwrap();
        let d = e["density"].as_f64().unwrap();
        assert_eq!(gmm::density(&m, &x).unwrap(), d);
    }
}

#[test]
fn deploy_without_successes_falls_back_with_warning() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), &json!({ "stages": [constant_stage(0.0, 2)] }));
    let o = run(t.path(), &["--config", cfg.to_str().unwrap(), "deploy", "--out", "z"]);
    assert_eq!(o.status.code(), Some(0));
    let log: Value = serde_json::from_str(&read(t.path().join("z/deploy_log.json"))).unwrap();
    assert!(log["warning"].as_str().unwrap().contains("uniform"));
    assert_eq!(log["deployments"][0]["uniform_fallback"], true);
    assert_eq!(log["successes"], 0);
}

#[test]
fn chain_of_certain_stages() {
    let t = tempfile::tempdir().unwrap();
    let s = constant_stage(1.0, 2);
    let cfg = write_config(t.path(), &json!({ "stages": [s.clone(), s.clone(), s] }));
    let o = run(
        t.path(),
        &["--config", cfg.to_str().unwrap(), "chain", "--strategy", "baseline", "--trials", "200", "--out", "c"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log: Value = serde_json::from_str(&read(t.path().join("c/chain_result.json"))).unwrap();
    assert_eq!(log["result"]["sequence_rate"], 1.0);
    assert_eq!(log["result"]["per_stage_rates"].as_array().unwrap().len(), 3);
}

#[test]
fn bench_smoke_csv_contract_and_thread_independence() {
    let t = tempfile::tempdir().unwrap();
    let args = ["--seed", "4", "bench", "--seeds", "2", "--stages", "1", "--landscapes", "2"];
    let mut one = args.to_vec();
    one.extend(["--threads", "1", "--out", "t1"]);
    let o = run(t.path(), &one);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    for k in ["baseline", "deployment", "finetune", "refinery"] {
        assert!(stdout.contains(k));
    }
    let csv = read(t.path().join("t1/bench_summary.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "landscape_id,baseline,deployment,finetune,refinery");
    for l in lines {
        let cells: Vec<&str> = l.split(',').collect();
        assert_eq!(cells.len(), 5);
        for c in &cells[1..] {
            let (m, s) = c.split_once('±').unwrap();
            assert!(m.parse::<f64>().is_ok() && s.parse::<f64>().is_ok(), "{c}");
        }
    }
    let mut two = args.to_vec();
    two.extend(["--threads", "2", "--out", "t2"]);
    assert!(run(t.path(), &two).status.success());
    for f in ["bench_report.json", "bench_summary.csv", "bench.provenance.json"] {
        assert_eq!(read(t.path().join("t1").join(f)), read(t.path().join("t2").join(f)), "{f}");
    }
    // Nothing written outside the output directories.
    let mut entries: Vec<String> = std::fs::read_dir(t.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    entries.sort();
    assert_eq!(entries, ["t1", "t2"]);
}

#[test]
fn seed_precedence_flag_env_file() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), &json!({ "seed": 11 }));
    let cfg = cfg.to_str().unwrap();
    let seed_of = |dir: &str| -> u64 {
        let v: Value = serde_json::from_str(&read(t.path().join(dir).join("eval-map.provenance.json"))).unwrap();
        v["seed"].as_u64().unwrap()
    };
    let base = ["eval-map", "--resolution", "4"];

    let mut a = vec!["--config", cfg];
    a.extend(base);
    a.extend(["--out", "file"]);
    assert!(run(t.path(), &a).status.success());
    assert_eq!(seed_of("file"), 11);

    let mut a = vec!["--config", cfg];
    a.extend(base);
    a.extend(["--out", "env"]);
    assert!(bin().current_dir(t.path()).env("REFINERY_SEED", "22").args(&a).output().unwrap().status.success());
    assert_eq!(seed_of("env"), 22);

    let mut a = vec!["--config", cfg, "--seed", "33"];
    a.extend(base);
    a.extend(["--out", "flag"]);
    assert!(bin().current_dir(t.path()).env("REFINERY_SEED", "22").args(&a).output().unwrap().status.success());
    assert_eq!(seed_of("flag"), 33);

    let mut a = base.to_vec();
    a.extend(["--out", "default"]);
    assert!(run(t.path(), &a).status.success());
    assert_eq!(seed_of("default"), 0);
}
