use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ibflow::flownib::{traces_from_jsonl, RepresentationSet, YKind};
use ibflow::reps::{write_representation_dump, SyntheticTask};
use serde_json::Value;

fn ibflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ibflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("IBFLOW_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = ibflow(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn without_timestamp(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

const QUICK_MI: [&str; 9] = ["mi-estimate", "--synthetic", "gaussian", "--rho", "0.9", "--n", "2000", "--steps", "150"];

#[test]
fn gaussian_estimate_lands_in_range() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["mi-estimate", "--synthetic", "gaussian", "--rho", "0.9", "--n", "20000", "--seed", "7"], dir.path());
    let mi = json(&dir.path().join("mi.json"));
    let est = mi["estimate_nats"].as_f64().unwrap();
    assert!((0.75..=0.90).contains(&est), "{est}");
    assert!(dir.path().join(mi["trace"].as_str().unwrap()).exists());
    assert!(dir.path().join("run.json").exists());
}

#[test]
fn rho_of_one_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ibflow(&["mi-estimate", "--synthetic", "gaussian", "--rho", "1.0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = ibflow(&["mi-estimate", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repeated_runs_match_except_for_the_timestamp() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = [&QUICK_MI[..], &["--seed", "3", "--bits"]].concat();
    ok(&args, a.path());
    ok(&args, b.path());
    let (ja, jb) = (json(&a.path().join("mi.json")), json(&b.path().join("mi.json")));
    assert!(ja["estimate_bits"].is_number());
    assert_eq!(without_timestamp(ja), without_timestamp(jb));
    for f in ["mi_trace.jsonl", "run.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn run_json_reproduces_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&["flownib", "run", "--synthetic", "gaussian-chain", "--n", "300", "--epochs", "2", "--steps-per-epoch", "4", "--hidden", "8", "--seed", "5"], a.path());
    let cfg = a.path().join("run.json");
    ok(&["flownib", "run", "--config", cfg.to_str().unwrap()], b.path());
    assert_eq!(fs::read(a.path().join("trace.jsonl")).unwrap(), fs::read(b.path().join("trace.jsonl")).unwrap());
    assert_eq!(fs::read(&cfg).unwrap(), fs::read(b.path().join("run.json")).unwrap());

    // a run.json from another command is refused
    let c = tempfile::tempdir().unwrap();
    let o = ibflow(&["mi-estimate", "--config", cfg.to_str().unwrap()], c.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn one_layer_three_epochs_gives_three_lines() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["flownib", "run", "--synthetic", "gaussian-chain", "--layers", "1", "--n", "300", "--epochs", "3", "--steps-per-epoch", "3", "--hidden", "8"], dir.path());
    let text = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 3);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["layer", "epoch", "alpha", "i_xz_raw", "i_zy_raw", "i_xz_norm", "i_zy_norm", "d_eff_z", "d_eff_y", "loss"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn coarse_delta_hits_zero_from_epoch_ten() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["flownib", "run", "--synthetic", "gaussian-chain", "--layers", "1", "--n", "200", "--hidden", "4", "--delta", "0.1", "--epochs", "20", "--steps-per-epoch", "1"], dir.path());
    let traces = traces_from_jsonl(&fs::read_to_string(dir.path().join("trace.jsonl")).unwrap()).unwrap();
    for r in &traces[0].records {
        if r.epoch >= 10 {
            assert_eq!(r.alpha, 0.0, "epoch {}", r.epoch);
        } else {
            assert!(r.alpha > 0.0, "epoch {}", r.epoch);
        }
    }
}

#[test]
fn missing_manifest_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere").join("manifest.json");
    let o = ibflow(&["flownib", "run", "--manifest", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(missing.to_str().unwrap()));
}

#[test]
fn offset_separates_layers_with_equal_values() {
    let dir = tempfile::tempdir().unwrap();
    let line = |layer: usize, epoch: usize| {
        format!(
            r#"{{"layer":{layer},"epoch":{epoch},"alpha":1.0,"i_xz_raw":0.5,"i_zy_raw":0.2,"i_xz_norm":0.5,"i_zy_norm":0.2,"d_eff_z":1.0,"d_eff_y":1.0,"loss":-0.5}}"#
        )
    };
    let trace: String = (0..2).flat_map(|l| (0..3).map(move |e| line(l, e) + "\n")).collect();
    let path = dir.path().join("trace.jsonl");
    fs::write(&path, trace).unwrap();
    ok(&["infoplane", "export", "--trace", path.to_str().unwrap(), "--offset", "0.05"], dir.path());
    let csv = fs::read_to_string(dir.path().join("plane.csv")).unwrap();
    let mut xs = [Vec::new(), Vec::new()];
    for row in csv.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        xs[f[0].parse::<usize>().unwrap()].push(f[2].parse::<f64>().unwrap());
    }
    for (a, b) in xs[0].iter().zip(&xs[1]) {
        assert!(b - a >= 0.05 - 1e-12);
    }
    assert!(dir.path().join("mic.json").exists());
    assert!(dir.path().join("plane.jsonl").exists());
}

#[test]
fn delta_ablation_fans_out() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["ablate", "--param", "delta", "--values", "1e-1,1e-3,1e-6", "--synthetic", "gaussian-chain", "--n", "200", "--epochs", "2", "--steps-per-epoch", "2", "--hidden", "4"], dir.path());
    let traces: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("trace_") && n.ends_with(".jsonl"))
        .collect();
    assert_eq!(traces.len(), 3, "{traces:?}");
    let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    // 3 deltas x 2 layers x 2 epochs
    assert_eq!(csv.lines().count(), 1 + 12);
}

#[test]
fn effdim_reads_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let set: RepresentationSet = SyntheticTask::SignBit { n: 100, d: 3 }.generate(0).unwrap();
    assert_eq!(set.y_kind, YKind::Classification);
    let manifest = write_representation_dump(&set, &dir.path().join("dump")).unwrap();
    ok(&["effdim", "--manifest", manifest.to_str().unwrap()], dir.path());
    let v = json(&dir.path().join("effdim.json"));
    assert!(v.to_string().contains("d_eff"));
}

#[test]
fn compare_bidir_writes_its_tables() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["compare-bidir", "--seeds", "1", "--n", "300", "--steps-x", "20", "--steps-y", "20", "--spectral-draws", "3"], dir.path());
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["seeds"], 1);
    assert_eq!(fs::read_to_string(dir.path().join("bidir.csv")).unwrap().lines().count(), 2);
    assert_eq!(fs::read_to_string(dir.path().join("spectral.csv")).unwrap().lines().count(), 4);
}
