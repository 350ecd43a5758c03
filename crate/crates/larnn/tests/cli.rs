//! Contract tests for the command-line surface: exit codes, output
//! formats, and the config-file/flag layering.

use std::process::{Command, Output};

fn larnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_larnn"))
        .args(args)
        .env_remove("LARNN_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn train_without_data_or_synth_is_a_usage_error() {
    let out = larnn(&["train", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("--data") && err.contains("--synth"), "{err}");
    assert!(err.to_lowercase().contains("usage"), "{err}");
}

#[test]
fn data_and_synth_together_is_a_usage_error() {
    let out = larnn(&["train", "--data", "/nonexistent", "--synth", "adding"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mutually exclusive"));
}

#[test]
fn unknown_flags_are_rejected() {
    let out = larnn(&["train", "--synth", "adding", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_synth_kind_is_a_runtime_error() {
    let out = larnn(&["synth", "--kind", "nonsense", "--out", "/tmp/unused.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nonsense"));
}

#[test]
fn missing_dataset_directory_fails_with_the_path() {
    let out = larnn(&["train", "--data", "/definitely/not/here", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/definitely/not/here"), "{}", stderr(&out));
}

#[test]
fn help_exits_zero() {
    let out = larnn(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    for sub in ["train", "eval", "gradcheck", "pe-dump", "sweep", "synth"] {
        assert!(stdout(&out).contains(sub), "help should list {sub}");
    }
}

#[test]
fn pe_dump_first_data_row_is_zeros_then_ones() {
    let out = larnn(&["pe-dump", "--window", "128"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "pos,sin_0,sin_1,sin_2,sin_3,cos_0,cos_1,cos_2,cos_3");
    assert_eq!(lines.next().unwrap(), "0,0.0,0.0,0.0,0.0,1.0,1.0,1.0,1.0");
    assert_eq!(text.lines().count(), 129);
}

#[test]
fn pe_dump_writes_csv_and_pgm_files() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("enc.csv");
    let pgm = dir.path().join("enc.pgm");
    let out = larnn(&[
        "pe-dump",
        "--window",
        "16",
        "--n-pe",
        "6",
        "--csv",
        csv.to_str().unwrap(),
        "--pgm",
        pgm.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(csv_text.lines().count(), 17);
    let pgm_bytes = std::fs::read(&pgm).unwrap();
    assert!(pgm_bytes.starts_with(b"P5\n16 6\n255\n"));
    assert_eq!(pgm_bytes.len(), b"P5\n16 6\n255\n".len() + 16 * 6);
    // Position 0: sines encode as mid-gray 128, cosines as white 255.
    let pixels = &pgm_bytes[b"P5\n16 6\n255\n".len()..];
    assert_eq!(pixels[0], 128);
    assert_eq!(pixels[3 * 16], 255);
}

#[test]
fn pe_dump_rejects_odd_channel_count() {
    let out = larnn(&["pe-dump", "--window", "16", "--n-pe", "5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("even"));
}

#[test]
fn synth_export_is_deterministic_and_parses() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = larnn(&[
            "synth",
            "--kind",
            "adding",
            "--n",
            "50",
            "--seq-len",
            "16",
            "--seed",
            "3",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let bytes_a = std::fs::read(&a).unwrap();
    assert_eq!(bytes_a, std::fs::read(&b).unwrap());
    let text = String::from_utf8(bytes_a).unwrap();
    assert!(text.starts_with("t0c0,t0c1,"));
    assert!(text.lines().next().unwrap().ends_with(",label"));
    assert_eq!(text.lines().count(), 51);
}

#[test]
fn train_prints_final_accuracy_on_the_last_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = larnn(&[
        "train",
        "--synth",
        "adding",
        "--synth-n",
        "160",
        "--seq-len",
        "8",
        "--hidden",
        "4",
        "--window",
        "2",
        "--n-pe",
        "4",
        "--heads",
        "2",
        "--layers",
        "1",
        "--epochs",
        "1",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let last = text.lines().last().unwrap();
    assert!(
        last.starts_with("final test accuracy: ") && last.ends_with('%'),
        "{last}"
    );
    // One decimal place.
    let value = last
        .trim_start_matches("final test accuracy: ")
        .trim_end_matches('%');
    assert!(value.contains('.') && value.split('.').nth(1).unwrap().len() == 1, "{value}");
    assert!(dir.path().join("run/checkpoint.bin").exists());
    assert!(dir.path().join("run/metrics.csv").exists());
}

#[test]
fn eval_round_trips_a_checkpoint_and_dumps_attention() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let train_out = larnn(&[
        "train",
        "--synth",
        "adding",
        "--synth-n",
        "160",
        "--seq-len",
        "8",
        "--hidden",
        "4",
        "--window",
        "3",
        "--heads",
        "2",
        "--layers",
        "1",
        "--epochs",
        "1",
        "--seed",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(train_out.status.code(), Some(0), "{}", stderr(&train_out));

    let attn = dir.path().join("attn.csv");
    let eval_out = larnn(&[
        "eval",
        "--checkpoint",
        out_dir.join("checkpoint.bin").to_str().unwrap(),
        "--synth",
        "adding",
        "--synth-n",
        "160",
        "--seq-len",
        "8",
        "--seed",
        "5",
        "--dump-attention",
        attn.to_str().unwrap(),
        "--dump-attention-samples",
        "2",
    ]);
    assert_eq!(eval_out.status.code(), Some(0), "{}", stderr(&eval_out));
    assert!(stdout(&eval_out).contains("accuracy: "));

    let csv = std::fs::read_to_string(&attn).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "sample,head,timestep,w0,w1,w2");
    // 2 samples x 2 heads x 8 timesteps rows.
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 8);
    // Each row's weights sum to ~1.
    for line in csv.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        let total: f64 = fields.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "{line}");
    }
}

#[test]
fn eval_rejects_mismatched_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let train_out = larnn(&[
        "train", "--synth", "adding", "--synth-n", "120", "--seq-len", "8", "--hidden", "4",
        "--window", "2", "--n-pe", "4", "--heads", "2", "--layers", "1", "--epochs", "1", "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(train_out.status.code(), Some(0));
    // long-sum has 1 channel, the checkpoint expects 2.
    let eval_out = larnn(&[
        "eval",
        "--checkpoint",
        out_dir.join("checkpoint.bin").to_str().unwrap(),
        "--synth",
        "long-sum",
        "--synth-n",
        "120",
        "--seq-len",
        "8",
    ]);
    assert_eq!(eval_out.status.code(), Some(1));
    assert!(stderr(&eval_out).contains("channels"));
}

#[test]
fn config_file_applies_before_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        "# comment\nhidden=6\nwindow=5\nepochs=1\nsynth=adding\nsynth_n=120\nseq_len=8\nheads=2\nlayers=1\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    // --hidden 4 must beat the file's hidden=6; window=5 from the file holds.
    let out = larnn(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--hidden",
        "4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("hidden 4"), "{text}");
    assert!(text.contains("window 5"), "{text}");
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "hidden=4\nbogus_key=1\n").unwrap();
    let out = larnn(&["train", "--config", config.to_str().unwrap(), "--synth", "adding"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus_key"));
}

#[test]
fn env_var_is_the_default_data_dir() {
    let out = Command::new(env!("CARGO_BIN_EXE_larnn"))
        .args(["train", "--epochs", "1"])
        .env("LARNN_DATA_DIR", "/definitely/not/here")
        .output()
        .expect("binary runs");
    // The env var supplied the data dir, so this fails at load time (1),
    // not as a usage error (2).
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/definitely/not/here"));
}

#[test]
fn sweep_ablation_writes_log_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("trials.jsonl");
    let out = larnn(&[
        "sweep",
        "--synth",
        "adding",
        "--synth-n",
        "120",
        "--seq-len",
        "8",
        "--hidden",
        "4",
        "--window",
        "2",
        "--n-pe",
        "4",
        "--heads",
        "2",
        "--layers",
        "1",
        "--epochs",
        "1",
        "--ablation",
        "--ablation-seeds",
        "1",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("axis mode:"), "{text}");
    assert!(text.contains("winner"), "{text}");
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 8);
}

#[test]
fn sweep_random_search_respects_trials_and_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("trials.jsonl");
    let space = dir.path().join("space.json");
    std::fs::write(
        &space,
        r#"{"layers":[1],"window":[4],"hidden":[4],"lr":{"lo":1e-3,"hi":1e-2}}"#,
    )
    .unwrap();
    let out = larnn(&[
        "sweep",
        "--synth",
        "adding",
        "--synth-n",
        "120",
        "--seq-len",
        "8",
        "--space",
        space.to_str().unwrap(),
        "--rounds",
        "2",
        "--trials",
        "2",
        "--budget-epochs",
        "1",
        "--seed",
        "9",
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("best trial"), "{}", stdout(&out));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 4);
}
