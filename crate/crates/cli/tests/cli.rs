use std::path::Path;
use std::process::Command;

fn ward(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ward")).current_dir(dir).args(args).output().unwrap()
}

fn tempdir(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("ward-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn generate_run_and_rescore() {
    let d = tempdir("run");
    assert!(ward(&d, &["gen-part1", "--participants", "1", "--seed", "9", "--out", "s.json"]).status.success());
    let run = ward(&d, &["run", "--scenario", "s.json", "--out-dir", "o"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["trace.jsonl", "metrics.json", "errors.json"] {
        assert!(d.join("o").join(f).exists(), "{f} missing");
    }
    let written: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("o/metrics.json")).unwrap()).unwrap();
    assert_eq!(written["trials"].as_array().unwrap().len(), 15);
    let rescored = ward(&d, &["metrics", "--trace", "o/trace.jsonl", "--scenario", "s.json"]);
    assert!(rescored.status.success());
    let rescored: serde_json::Value = serde_json::from_slice(&rescored.stdout).unwrap();
    assert_eq!(rescored, written);
}

#[test]
fn errors_subcommand_tallies_the_fault_corpus() {
    let d = tempdir("errors");
    assert!(ward(&d, &["gen-faults", "--per-category", "1", "--seed", "3", "--out", "f.json"]).status.success());
    assert!(ward(&d, &["run", "--scenario", "f.json", "--out-dir", "o"]).status.success());
    let out = ward(&d, &["errors", "--trace", "o/trace.jsonl", "--out", "e.json"]);
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("system_failure"));
    let e: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("e.json")).unwrap()).unwrap();
    assert!(e["tally"]["total"].as_u64().unwrap() > 0);
}

#[test]
fn bad_input_exits_nonzero() {
    let d = tempdir("bad");
    let out = ward(&d, &["run", "--scenario", "missing.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    std::fs::write(d.join("bad.json"), "{\"schema_version\": 99}").unwrap();
    assert!(!ward(&d, &["--config", "bad.json", "gen-part1"]).status.success());
    assert!(!ward(&d, &["run", "--scenario", "x", "--mode", "warp"]).status.success());
}
