use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
task = "positioning"
seed = 4
L_list = [40]
k_list = [3]

[scene]
preset = "outdoor"
side = 60.0
grid = [2, 2]
n_subcarriers = 4
n_scatterers = 2
layout_seed = 1
noise_std = 0.01

[train]
epochs = 2
batch_size = 10

[eval]
test_size = 12

[baselines]
mlp = true
elm = true
mlp_epochs = 2
elm_hidden = 16
"#;

fn simchan(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simchan")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn config_prints_parseable_presets() {
    let dir = tempfile::tempdir().unwrap();
    for task in ["positioning", "channel-mapping"] {
        let o = simchan(&["config", "--task", task], dir.path());
        assert!(o.status.success());
        simchan_cli::ExperimentConfig::from_toml_str(&stdout(&o)).unwrap();
    }
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = simchan(&["gen", "--config", "tiny.toml", "--out", "ds.bin"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("52 samples"));
    for kind in ["similarity", "mlp", "elm"] {
        let o = simchan(&["train", "--config", "tiny.toml", "--data", "ds.bin", "--kind", kind, "--out", "m.bin"], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let o = simchan(&["eval", "--data", "ds.bin", "--model", "m.bin"], dir.path());
        assert!(o.status.success());
        let text = stdout(&o);
        assert!(text.contains("mean_error ") && text.contains("median_error "), "{text}");
    }
}

#[test]
fn report_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let o = simchan(&["report", "--config", "tiny.toml", "--out", "out"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/positioning.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("L,k,stage,metric_name,value,runtime_s,seed"));
    assert_eq!(lines.count(), 8);
}

#[test]
fn partial_report_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), TINY.replace("k_list = [3]", "k_list = [3, 40]")).unwrap();
    let o = simchan(&["report", "--config", "bad.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(std::fs::read_to_string(dir.path().join("out/positioning.csv")).unwrap().contains("failed,NaN"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.bin"), b"JUNKJUNKJUNK").unwrap();
    let o = simchan(&["eval", "--data", "junk.bin", "--model", "junk.bin"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("not a SIMCHAN-DS file"));
    std::fs::write(dir.path().join("bad.toml"), "task = 3").unwrap();
    assert!(!simchan(&["gen", "--config", "bad.toml"], dir.path()).status.success());
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = simchan(&["selftest"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("ok")).count(), 4);
}
