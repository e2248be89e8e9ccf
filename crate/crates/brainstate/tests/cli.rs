use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brainstate::cli::{GenConfig, RunAConfig, RunBConfig};
use brainstate::core::eval::{MetricsReport, PipelineAConfig, PipelineBConfig};
use brainstate::core::synth::SynthSpec;
use brainstate::core::volume::Dims;
use brainstate::formats::{read_json, write_json};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brainstate")).args(args).output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn small_spec(dims: Dims, subjects: usize) -> SynthSpec {
    SynthSpec { n_subjects: subjects, runs_per_subject: 1, timepoints_per_run: 60, n_voxels_latent: 16, dims, ..SynthSpec::paper_a(0) }
}

fn gen_small(dir: &Path, dims: Dims, subjects: usize) -> PathBuf {
    let cfg = dir.join("gen.json");
    write_json(&cfg, &GenConfig { spec: Some(small_spec(dims, subjects)), ..GenConfig::default() }).unwrap();
    let data = dir.join("data");
    ok(bin(&["gen", "--config", p(&cfg), "--seed", "3", "--out", p(&data)]));
    data
}

fn a_config(dir: &Path, data: &Path) -> PathBuf {
    let mut pipeline = PipelineAConfig::desk();
    pipeline.m = 80;
    pipeline.model.input_len = 80;
    pipeline.model.flatten_width = 26 * 4;
    pipeline.model.train.epochs = 1;
    let cfg = dir.join("run-a.json");
    write_json(&cfg, &RunAConfig { data: data.to_path_buf(), pipeline, ..RunAConfig::default() }).unwrap();
    cfg
}

fn metrics_without_timing(path: &Path) -> MetricsReport {
    let mut m: MetricsReport = read_json(path).unwrap();
    m.latency = None;
    m
}

#[test]
fn gen_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_small(&dir.path().join("a"), Dims::new(6, 5, 4), 2);
    let b = gen_small(&dir.path().join("b"), Dims::new(6, 5, 4), 2);
    for f in ["manifest.jsonl", "mask.bmsk", "truth.json", "spec.json", "volumes/sub-01_run-0.bvol"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let spec: SynthSpec = read_json(&a.join("spec.json")).unwrap();
    assert_eq!(spec.seed, 3);
    assert!(a.join("config.json").is_file());
}

#[test]
fn gen_noise_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    write_json(&cfg, &GenConfig { spec: Some(small_spec(Dims::new(5, 5, 4), 2)), ..GenConfig::default() }).unwrap();
    let out = dir.path().join("d");
    ok(bin(&["gen", "--config", p(&cfg), "--noise", "0", "--out", p(&out)]));
    let spec: SynthSpec = read_json(&out.join("spec.json")).unwrap();
    assert_eq!(spec.noise_sigma, 0.0);
    let echoed: GenConfig = read_json(&out.join("config.json")).unwrap();
    assert_eq!(echoed.noise_sigma, Some(0.0));
}

#[test]
fn missing_manifest_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("nowhere");
    let out = bin(&["run-a", "--data", p(&data), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(p(&data.join("manifest.jsonl"))), "{err}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"seeed\": 3}").unwrap();
    let out = bin(&["gen", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_volume_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), Dims::new(5, 5, 4), 2);
    let f = data.join("volumes/sub-00_run-0.bvol");
    let bytes = std::fs::read(&f).unwrap();
    std::fs::write(&f, &bytes[..bytes.len() - 1]).unwrap();
    let out = bin(&["run-a", "--data", p(&data), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated"));
}

#[test]
fn run_a_writes_folds_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), Dims::new(10, 10, 6), 3);
    let cfg = a_config(dir.path(), &data);
    let (o1, o2) = (dir.path().join("r1"), dir.path().join("r2"));
    ok(bin(&["run-a", "--config", p(&cfg), "--seed", "5", "--out", p(&o1)]));
    ok(bin(&["run-a", "--config", p(&cfg), "--seed", "5", "--threads", "2", "--out", p(&o2)]));

    let summary: serde_json::Value = read_json(&o1.join("summary.json")).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 3);
    assert!(summary["mean_accuracy"].is_f64() && summary["sd_accuracy"].is_f64());
    assert_eq!(std::fs::read(o1.join("summary.json")).unwrap(), std::fs::read(o2.join("summary.json")).unwrap());
    for k in 0..3 {
        let f = format!("fold-{k:02}");
        for name in ["model.nnet", "model.json", "space.haln", "selection.json", "roc.csv", "predictions.csv"] {
            assert!(o1.join(&f).join(name).is_file(), "{f}/{name}");
        }
        assert_eq!(metrics_without_timing(&o1.join(&f).join("metrics.json")), metrics_without_timing(&o2.join(&f).join("metrics.json")));
        assert_eq!(std::fs::read(o1.join(&f).join("model.nnet")).unwrap(), std::fs::read(o2.join(&f).join("model.nnet")).unwrap());
        let m: MetricsReport = read_json(&o1.join(&f).join("metrics.json")).unwrap();
        assert!(m.latency.unwrap().n > 0);
    }
    let resolved: RunAConfig = read_json(&o1.join("config.json")).unwrap();
    assert_eq!(resolved.seed, 5);

    // stored predictions reproduce the fold's report
    let mo = dir.path().join("m");
    ok(bin(&["metrics", "--predictions", p(&o1.join("fold-01/predictions.csv")), "--out", p(&mo)]));
    assert_eq!(metrics_without_timing(&mo.join("metrics.json")), metrics_without_timing(&o1.join("fold-01/metrics.json")));

    // the saved network and space are enough to benchmark
    let bo = dir.path().join("b");
    ok(bin(&["bench", "--checkpoint", p(&o1.join("fold-00/model.nnet")), "--data", p(&data), "--samples", "20", "--batch", "8", "--repeats", "2", "--out", p(&bo)]));
    let bench: serde_json::Value = read_json(&bo.join("bench.json")).unwrap();
    assert_eq!(bench["samples"], 20);
    assert!(bench["single"]["mean"].as_f64().unwrap() > 0.0);
    assert!(bench["batch_per_sample"].as_f64().unwrap() > 0.0);

    let eo = dir.path().join("e");
    ok(bin(&["bench", "--checkpoint", p(&o1.join("fold-00/model.nnet")), "--data", p(&data), "--samples", "0", "--out", p(&eo)]));
    let bench: serde_json::Value = read_json(&eo.join("bench.json")).unwrap();
    assert_eq!(bench["samples"], 0);
    assert_eq!(bench["batch_per_sample"].as_f64(), Some(0.0));
}

#[test]
fn run_b_writes_one_report_per_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path(), Dims::new(16, 16, 11), 2);
    let mut pipeline = PipelineBConfig::desk();
    pipeline.model.train.epochs = 1;
    let cfg = dir.path().join("run-b.json");
    write_json(&cfg, &RunBConfig { data: data.clone(), pipeline, ..RunBConfig::default() }).unwrap();
    let out = dir.path().join("o");
    ok(bin(&["run-b", "--config", p(&cfg), "--repeats", "3", "--out", p(&out)]));
    for k in 0..3 {
        assert!(out.join(format!("repeat-{k:02}/metrics.json")).is_file());
    }
    assert!(!out.join("repeat-03").exists());
    let summary: serde_json::Value = read_json(&out.join("summary.json")).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 3);

    let bo = dir.path().join("b");
    ok(bin(&["bench", "--checkpoint", p(&out.join("repeat-00/model.nnet")), "--data", p(&data), "--samples", "4", "--batch", "2", "--repeats", "1", "--out", p(&bo)]));
}
