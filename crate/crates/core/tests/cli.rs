use std::path::Path;
use std::process::{Command, Output};

fn seeto(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seeto"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SEETO_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
[family]
n_source = 3
n_target = 2
outlier_targets = 1

[optimizer]
n_p = 12
fe_max = 20
inner_generations = 2
baseline_initial = 10

[experiment]
modes = ["seeto", "baseline"]
seeds = [0, 1]
out_dir = "from-config"
"#;

#[test]
fn hv_command_examples() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        std::fs::write(dir.path().join(name), text).unwrap();
    };
    write("one.txt", "0,0\n");
    write("two.txt", "0 1\n1 0\n");
    write("empty.txt", "");
    write("bad.txt", "0,0\n1,x\n");
    let o = seeto(&["hv", "one.txt", "--ref", "1,1"], dir.path());
    assert_eq!(stdout(&o), "1.000000000000\n");
    let o = seeto(&["hv", "two.txt", "--ref", "2,2"], dir.path());
    assert_eq!(stdout(&o), "3.000000000000\n");
    let o = seeto(&["hv", "empty.txt", "--ref", "1,1"], dir.path());
    assert_eq!(stdout(&o), "0.000000000000\n");
    assert!(o.status.success());
    let o = seeto(&["hv", "bad.txt", "--ref", "1,1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    let o = seeto(&["hv", "missing.txt", "--ref", "1,1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_config_exits_two_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[optimizer]\nrho = \"lots\"\n").unwrap();
    let o = seeto(&["run-sequence", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("optimizer.rho"));
    let o = seeto(&["run-sequence", "--config", "nope.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sequence_outputs_and_archive_tools() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), TINY).unwrap();
    let o = seeto(&["run-sequence", "--config", "c.toml", "--out", "run1"], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!d.join("from-config").exists());
    let o = seeto(&["run-sequence", "--config", "c.toml", "--out", "run2"], d);
    assert!(o.status.success());
    for f in ["summary.csv", "archive.json", "trajectories/target-01__baseline__seed0.csv"] {
        assert_eq!(std::fs::read(d.join("run1").join(f)).unwrap(), std::fs::read(d.join("run2").join(f)).unwrap());
    }
    let summary = std::fs::read_to_string(d.join("run1/summary.csv")).unwrap();
    assert!(summary.starts_with("task_id,outlier,fe,mode,n_runs,n_failed,hv_mean,hv_std,delta_hv_percent,add_fe_percent\n"));

    // environment variable beats the config file
    let o = Command::new(env!("CARGO_BIN_EXE_seeto"))
        .args(["run-sequence", "--config", "c.toml", "--seed", "0", "--mode", "baseline"])
        .current_dir(d)
        .env("SEETO_OUT_DIR", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(d.join("from-env/trajectories/target-00__baseline__seed0.csv").exists());
    assert!(!d.join("from-env/trajectories/target-00__seeto__seed0.csv").exists());

    let o = seeto(&["archive-inspect", "run1/archive.json"], d);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("records 3"));
    assert!(text.contains("source-02,baseline,0,20,true"));

    let o = seeto(&["embed-similarity", "--config", "c.toml", "--task", "target-00", "--archive", "run1/archive.json"], d);
    assert!(o.status.success());
    assert!(stdout(&o).contains("c = "));

    let o = seeto(
        &["run-single", "--config", "c.toml", "--task", "target-01", "--mode", "model-only", "--archive", "run1/archive.json", "--out", "single"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("single/trajectories/target-01__model-only__seed0.csv").exists());
    let o = seeto(&["run-single", "--config", "c.toml", "--task", "target-09", "--archive", "run1/archive.json"], d);
    assert_eq!(o.status.code(), Some(2));

    // a newer format version needs migration
    let text = std::fs::read_to_string(d.join("run1/archive.json")).unwrap();
    std::fs::write(d.join("v2.json"), text.replacen("\"format_version\": 1", "\"format_version\": 2", 1)).unwrap();
    let o = seeto(&["archive-inspect", "v2.json"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("migration"));
    // tampering breaks the checksum
    std::fs::write(d.join("bad.json"), text.replacen("\"source-01\"", "\"source-91\"", 1)).unwrap();
    let o = seeto(&["archive-inspect", "bad.json"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
}
