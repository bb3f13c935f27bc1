use std::fs;
use std::process::Command;

fn mptrain() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mptrain"))
}

fn json(out: &[u8]) -> serde_json::Value {
    serde_json::from_slice(out).expect("JSON on stdout")
}

#[test]
fn translate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a.mpim", "b.mpim"] {
        let path = dir.path().join(name);
        let st = mptrain()
            .args([
                "translate",
                "--model",
                "toy_cnn",
                "--algo-config",
                "niti",
                "--out",
            ])
            .arg(&path)
            .status()
            .unwrap();
        assert!(st.success());
        outputs.push(fs::read(path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(&outputs[0][..4], b"MPIM");
}

#[test]
fn unknown_op_fails() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.toml");
    fs::write(
        &model,
        "name = \"m\"\ninput = [4]\nclasses = 2\n[[layer]]\nop = \"Softplus\"\n",
    )
    .unwrap();
    let out = mptrain()
        .args(["translate", "--model"])
        .arg(&model)
        .arg("--out")
        .arg(dir.path().join("m.mpim"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Softplus"));
}

fn schedule_with(profile: &str, switch: &str) -> serde_json::Value {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.mpim");
    assert!(mptrain()
        .args(["translate", "--model", "toy_cnn", "--out"])
        .arg(&graph)
        .status()
        .unwrap()
        .success());
    let prof = dir.path().join("p.csv");
    fs::write(&prof, profile).unwrap();
    let out = mptrain()
        .args(["schedule", "--model"])
        .arg(&graph)
        .arg("--profile")
        .arg(&prof)
        .args(["--switch-ms", switch])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    json(&out.stdout)
}

fn uniform_profile(n: u32, f: impl Fn(u32) -> (f64, f64)) -> String {
    let mut s = String::from("op_id,latency_cpu_ms,latency_dsp_ms,flops\n");
    for i in 0..n {
        let (c, d) = f(i);
        s += &format!("{i},{c},{d},0\n");
    }
    s
}

const TOY_NODES: u32 = 39;

#[test]
fn layout_ops_alone_go_to_cpu() {
    // Every op costs the Transpose/WeightRotate/Slice pairs, so CPU wins.
    let rows = [(3.0, 25.0), (4.0, 20.0), (4.0, 17.0)];
    let r = schedule_with(&uniform_profile(TOY_NODES, |i| rows[i as usize % 3]), "25");
    assert_eq!(r["ops_on_dsp"], 0);
    assert_eq!(r["switch_count"], 0);
}

#[test]
fn zero_switch_picks_per_op_minimum() {
    let f = |i: u32| {
        if i.is_multiple_of(2) {
            (1.0, 2.0)
        } else {
            (2.0, 1.0)
        }
    };
    let r = schedule_with(&uniform_profile(TOY_NODES, f), "0");
    let a = r["assignment"].as_object().unwrap();
    for (op, p) in a {
        let i: u32 = op.parse().unwrap();
        assert_eq!(p, if i.is_multiple_of(2) { "cpu" } else { "dsp" });
    }
    assert_eq!(r["t_model_ms"], serde_json::json!(TOY_NODES as f64));
}

#[test]
fn report_total_matches_simulator_on_a_chain_placement() {
    // One switch at most: the simulated makespan of a two-run placement
    // equals the sequential model.
    let r = schedule_with(
        &uniform_profile(TOY_NODES, |i| if i < 20 { (1.0, 9.0) } else { (9.0, 1.0) }),
        "3",
    );
    let t = r["t_model_ms"].as_f64().unwrap();
    let m = r["makespan_ms"].as_f64().unwrap();
    assert!(m <= t + 1e-9);
}

#[test]
fn train_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let out = mptrain()
        .args([
            "train",
            "--model",
            "toy_cnn",
            "--batch",
            "16",
            "--epochs",
            "2",
            "--samples",
            "120",
        ])
        .args([
            "--disable",
            "split",
            "--disable",
            "reuse",
            "--seed",
            "4",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = json(&out.stdout);
    assert_eq!(summary["batches"], 12);
    let log = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 13);
    assert!(dir.path().join("checkpoints/epoch_001.ckpt").exists());
}

#[test]
fn bad_disable_value_rejected() {
    let out = mptrain()
        .args(["bench", "--disable", "turbo"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn bench_reports_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let prof = dir.path().join("profile.csv");
    let out = mptrain()
        .args(["bench", "--model", "toy_cnn", "--batch", "8", "--out"])
        .arg(&prof)
        .output()
        .unwrap();
    assert!(out.status.success());
    let r = json(&out.stdout);
    assert_eq!(r["ablation"].as_array().unwrap().len(), 5);
    let csv = fs::read_to_string(prof).unwrap();
    assert!(csv.starts_with("op_id,latency_cpu_ms,latency_dsp_ms,flops"));
}
