use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
synth.frames = 500
synth.initial_units = 6
synth.min_units = 3
synth.max_units = 12
hebb.epochs = 1
decoder.epochs = 1
baseline.epochs = 1
lstm.epochs = 1
eval.methods = untrained,self_supervised,hebbian_k1
study.fractions = 1,0.5
study.seeds = 0
";

fn hebbset(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hebbset"))
        .arg("--config")
        .arg(dir.join("exp.cfg"))
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = hebbset(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.cfg"), TINY).unwrap();
    dir
}

#[test]
fn full_pipeline_on_synthetic_data() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-data"]);
    ok(d, &["train-encoder", "--k", "1"]);
    ok(d, &["train-baseline", "--kind", "untrained"]);
    ok(d, &["train-baseline", "--kind", "self_supervised"]);
    for m in ["hebbian_k1", "untrained", "self_supervised"] {
        ok(d, &["train-decoder", "--method", m]);
    }
    ok(d, &["train-lstm", "--method", "hebbian_k1"]);
    let table = ok(d, &["eval-recon"]);
    assert!(table.contains("hebbian_k1") && table.contains("self_supervised"), "{table}");
    let pred = ok(d, &["eval-predict", "--method", "hebbian_k1"]);
    assert!(pred.contains("over 49 steps"), "{pred}");
    ok(d, &["render", "--input", d.join("out/predictions_hebbian_k1.jsonl").to_str().unwrap(), "--index", "3"]);

    let out = d.join("out");
    let recon = fs::read_to_string(out.join("recon.csv")).unwrap();
    assert!(recon.starts_with("method,k,train,validation,test\n"));
    assert_eq!(recon.lines().count(), 4);
    let steps = fs::read_to_string(out.join("predict_hebbian_k1.csv")).unwrap();
    assert_eq!(steps.lines().filter(|l| l.contains(",observed,")).count(), 25);
    assert_eq!(steps.lines().filter(|l| l.contains(",recursive,")).count(), 24);
    let pgm = fs::read(out.join("render/predictions_hebbian_k1_3.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"));

    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifests/eval-recon.json")).unwrap()).unwrap();
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["config"].as_str().unwrap().contains("hebb.epochs = 1"));
}

#[test]
fn reruns_are_bitwise_identical() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-data"]);
    let frames = fs::read(d.join("out/frames.jsonl")).unwrap();
    ok(d, &["gen-data"]);
    assert_eq!(frames, fs::read(d.join("out/frames.jsonl")).unwrap());
    ok(d, &["train-encoder", "--k", "1"]);
    ok(d, &["train-decoder", "--method", "hebbian_k1"]);
    let first = fs::read(d.join("out/decoder_hebbian_k1_history.csv")).unwrap();
    let enc = fs::read(d.join("out/encoder_hebbian_k1.json")).unwrap();
    ok(d, &["train-encoder", "--k", "1"]);
    ok(d, &["train-decoder", "--method", "hebbian_k1"]);
    assert_eq!(first, fs::read(d.join("out/decoder_hebbian_k1_history.csv")).unwrap());
    assert_eq!(enc, fs::read(d.join("out/encoder_hebbian_k1.json")).unwrap());
}

#[test]
fn limited_data_writes_one_row_per_cell() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-data"]);
    ok(d, &["limited-data", "--k", "1"]);
    let csv = fs::read_to_string(d.join("out/limited_data.csv")).unwrap();
    // header + 2 fractions × 1 seed × 2 methods
    assert_eq!(csv.lines().count(), 5, "{csv}");
}

#[test]
fn cost_report_needs_no_artifacts() {
    let dir = setup();
    let out = ok(dir.path(), &["cost-report"]);
    assert!(out.contains("36928") && out.contains("66112") && out.contains("208673"), "{out}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/cost.json")).unwrap()).unwrap();
    assert_eq!(json["reports"][0]["activations"], 132_544);
}

#[test]
fn missing_prerequisite_names_the_stage() {
    let dir = setup();
    let d = dir.path();
    let o = hebbset(d, &["train-decoder"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen-data"));
    ok(d, &["gen-data"]);
    let o = hebbset(d, &["train-lstm", "--method", "untrained"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-baseline"));
}

#[test]
fn config_errors_exit_one_with_field_path() {
    let dir = setup();
    let d = dir.path();
    let o = hebbset(d, &["--set", "hebb.eta=fast", "cost-report"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hebb.eta"));
    let o = hebbset(d, &["--set", "data.path=/no/such/file.jsonl", "cost-report"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data.path"));
    let o = hebbset(d, &["train-baseline", "--kind", "hebbian_k2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = hebbset(d, &["no-such-command"]);
    assert_eq!(o.status.code(), Some(1));
}
