use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn swd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swd")).args(args).output().expect("spawn swd")
}

fn ok(args: &[&str]) {
    let out = swd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"{
  "schema_version": 1,
  "model": {"depth": 2, "base_channels": 4, "kernel_size": 5},
  "train": {"max_epochs": 1, "batch_size": 8},
  "synth": {"subjects": 2, "recording": {"duration_s": 300.0, "swd_rate_per_hour": 60.0}}
}"#;

#[test]
fn full_chain_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.json");
    fs::write(&cfg, TINY).unwrap();
    let data = d.join("data");
    ok(&["synth", "--config", p(&cfg), "--out", p(&data), "--seed", "3"]);
    assert!(data.join("subject_01.f32").exists() && data.join("subject_01.json").exists());

    for run in ["a", "b"] {
        let ckpt = d.join(format!("ckpt_{run}"));
        ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ckpt), "--seed", "5"]);
        ok(&["predict", "--ckpt", p(&ckpt), "--in", p(&data.join("subject_01.f32")), "--out", p(&d.join(format!("pred_{run}.csv")))]);
    }
    for f in ["params.bin", "manifest.json", "run.json", "pipeline.json"] {
        assert_eq!(fs::read(d.join("ckpt_a").join(f)).unwrap(), fs::read(d.join("ckpt_b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(d.join("pred_a.csv")).unwrap(), fs::read(d.join("pred_b.csv")).unwrap());
    let run: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ckpt_a/run.json")).unwrap()).unwrap();
    assert_eq!(run["schema_version"], 1);
    assert_eq!(run["run"]["history"].as_array().unwrap().len(), 1);

    let report = d.join("report.json");
    ok(&["eval", "--pred", p(&d.join("pred_a.csv")), "--truth", p(&data.join("subject_01.swd.csv")), "--signal", p(&data.join("subject_01.f32")), "--out", p(&report)]);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(r["pointwise"]["f1"].is_number());
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.json");
    fs::write(&cfg, TINY).unwrap();
    ok(&["synth", "--config", p(&cfg), "--out", p(d), "--seed", "1"]);
    let truth = d.join("subject_00.swd.csv");
    let out = d.join("r.json");
    ok(&["eval", "--pred", p(&truth), "--truth", p(&truth), "--signal", p(&d.join("subject_00.f32")), "--out", p(&out)]);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(r["schema_version"], 1);
    for k in ["precision", "recall", "f1"] {
        assert_eq!(r["pointwise"][k], 1.0, "{k}");
        assert_eq!(r["eventwise"][k], 1.0, "{k}");
    }
}

#[test]
fn states_render_and_resample() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.json");
    fs::write(&cfg, TINY).unwrap();
    ok(&["synth", "--config", p(&cfg), "--out", p(d), "--seed", "2"]);
    let sig = d.join("subject_00.f32");

    ok(&["states", "--in", p(&sig), "--out", p(&d.join("states.csv")), "--report", p(&d.join("states.json"))]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("states.json")).unwrap()).unwrap();
    assert_eq!(report["noise"]["kind"], "noise");

    let labels = format!("{},{}", p(&d.join("subject_00.swd.csv")), p(&d.join("states.csv")));
    for name in ["t1.svg", "t2.svg"] {
        ok(&["render", "--in", p(&sig), "--labels", &labels, "--window", "60", "--start", "30", "--out", p(&d.join(name))]);
    }
    let svg = fs::read_to_string(d.join("t1.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    // Only the namespace URI; nothing is fetched.
    assert_eq!(svg.matches("http").count(), 1);
    assert_eq!(svg, fs::read_to_string(d.join("t2.svg")).unwrap());

    let csv = d.join("half.csv");
    ok(&["resample", "--in", p(&sig), "--rate", "50", "--out", p(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("sample_rate_hz=50"));
}

#[test]
fn errors_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let short = d.join("short.csv");
    let body: Vec<String> = (0..500).map(|i| format!("{}", (i as f64 * 0.3).sin())).collect();
    fs::write(&short, format!("sample_rate_hz=100\n{}\n", body.join("\n"))).unwrap();

    let cfg = d.join("c.json");
    fs::write(&cfg, TINY).unwrap();
    let data = d.join("data");
    ok(&["synth", "--config", p(&cfg), "--out", p(&data)]);
    let ckpt = d.join("ckpt");
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ckpt)]);

    let out = swd(&["predict", "--ckpt", p(&ckpt), "--in", p(&short), "--out", p(&d.join("x.csv"))]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "InputTooShort");
    assert!(err["message"].is_string());

    fs::write(&cfg, r#"{"schema_version": 2}"#).unwrap();
    let out = swd(&["states", "--in", p(&short), "--out", p(&d.join("s.csv")), "--config", p(&cfg)]);
    let err: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"], "InvalidConfig");
}
