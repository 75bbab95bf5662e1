use std::path::Path;

use mlstm::cli::{command, run, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use mlstm::training::{Checkpoint, TrainLog};

fn argv(args: &[&str]) -> Vec<String> {
    std::iter::once("mlstm").chain(args.iter().copied()).map(String::from).collect()
}

fn write_corpus(dir: &Path) -> std::path::PathBuf {
    let words = ["one ", "two ", "three ", "four\n", "five "];
    let text: String = (0..1500).map(|i| words[(i * 7 + i / 3) % words.len()]).collect();
    let p = dir.join("corpus.txt");
    std::fs::write(&p, text).unwrap();
    p
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("run.json");
    std::fs::write(
        &p,
        r#"{"arch": "mlstm", "hidden": 12, "batch_lanes": 4, "window": 16, "epochs": 1,
            "eval_interval": 2000, "seed": 4, "lr_start": 0.005, "lr_min": 0.001}"#,
    )
    .unwrap();
    p
}

#[test]
fn help_lists_every_config_key() {
    let help = command().render_long_help().to_string();
    for key in [
        "arch", "hidden", "layers", "embed", "lstm_variant", "weight_norm", "dropout_hidden", "dropout_embed",
        "dropout_output_path", "optimizer", "lr_start", "lr_min", "ell_start", "ell_end", "batch_lanes", "window",
        "epochs", "eval_interval", "patience", "seed", "init_scale", "precision",
    ] {
        assert!(help.contains(&format!("  {key} ")), "{key} missing from help");
    }
    assert_eq!(run(argv(&["--help"])), EXIT_OK);
    assert_eq!(run(argv(&["train", "--help"])), EXIT_OK);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(argv(&["train", "--bogus"])), EXIT_USAGE);
    assert_eq!(run(argv(&["nonsense"])), EXIT_USAGE);
    assert_eq!(run(argv(&["perplexity", "--bits", "1", "--symbols", "5", "--words", "0"])), EXIT_USAGE);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"arch": "mlstm", "hiddden": 3}"#).unwrap();
    let data = write_corpus(dir.path());
    let out = dir.path().join("out");
    assert_eq!(
        run(argv(&["train", "--config", bad.to_str().unwrap(), "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()])),
        EXIT_USAGE
    );
    assert!(!out.exists(), "nothing is written before validation passes");
}

#[test]
fn missing_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    assert_eq!(
        run(argv(&["train", "--config", cfg.to_str().unwrap(), "--data", "/nonexistent/file", "--out", out.to_str().unwrap()])),
        EXIT_DATA
    );
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    assert_eq!(run(argv(&["sample", "--ckpt", junk.to_str().unwrap()])), EXIT_DATA);
}

#[test]
fn perplexity_and_gradcheck_succeed() {
    assert_eq!(run(argv(&["perplexity", "--bits", "1.2649", "--symbols", "1256449", "--words", "245569"])), EXIT_OK);
    assert_eq!(
        run(argv(&["gradcheck", "--arch", "mlstm", "--hidden", "11", "--vocab", "7", "--window", "5", "--seed", "23"])),
        EXIT_OK
    );
    assert_eq!(run(argv(&["gradcheck", "--arch", "tensor-rnn", "--vocab", "100"])), EXIT_USAGE);
}

#[test]
fn train_eval_sample_analyze_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_corpus(dir.path());
    let cfg = write_config(dir.path());
    let out = dir.path().join("run1");
    let d = data.to_str().unwrap();
    let o = out.to_str().unwrap();
    assert_eq!(run(argv(&["train", "--config", cfg.to_str().unwrap(), "--data", d, "--out", o, "--threads", "1"])), EXIT_OK);
    for f in ["best.ckpt", "last.ckpt", "log.csv", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = TrainLog::load(out.join("log.csv")).unwrap();
    assert!(!log.is_empty());
    let best = Checkpoint::<f32>::load(out.join("best.ckpt")).unwrap();
    assert!(best.resume.is_none());

    let losses = dir.path().join("losses.csv");
    let ck = out.join("best.ckpt");
    let c = ck.to_str().unwrap();
    assert_eq!(run(argv(&["eval", "--ckpt", c, "--data", d, "--losses", losses.to_str().unwrap()])), EXIT_OK);
    let bits = mlstm::analysis::load_position_bits(&losses).unwrap();
    assert!(bits.len() > 100);

    assert_eq!(run(argv(&["sample", "--ckpt", c, "--length", "50", "--seed", "5"])), EXIT_OK);

    let adir = dir.path().join("analysis");
    assert_eq!(
        run(argv(&[
            "analyze", "--ckpt", c, c, "--data", d, "--shared-set", "--words", "--out", adir.to_str().unwrap()
        ])),
        EXIT_OK
    );
    for f in ["surprise_0.csv", "surprise_1.csv", "comparison.csv", "words.csv"] {
        assert!(adir.join(f).exists(), "{f}");
    }
    let curve = std::fs::read_to_string(adir.join("surprise_0.csv")).unwrap();
    assert!(curve.starts_with("offset,mean_bits\n1,"));
    assert_eq!(
        run(argv(&["analyze", "--losses", losses.to_str().unwrap(), "--out", adir.to_str().unwrap()])),
        EXIT_OK
    );

    // Interrupt and resume through the command line.
    let out2 = dir.path().join("run2");
    let o2 = out2.to_str().unwrap();
    assert_eq!(
        run(argv(&["train", "--config", cfg.to_str().unwrap(), "--data", d, "--out", o2, "--stop-after", "5"])),
        EXIT_OK
    );
    let last = out2.join("last.ckpt");
    assert_eq!(
        run(argv(&["train", "--resume", last.to_str().unwrap(), "--data", d, "--out", o2])),
        EXIT_OK
    );
    let resumed = TrainLog::load(out2.join("log.csv")).unwrap();
    assert!(resumed.same_trace(&log));
}

#[test]
fn sweep_writes_one_row_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_corpus(dir.path());
    let cfg = write_config(dir.path());
    let out = dir.path().join("sweep");
    assert_eq!(
        run(argv(&[
            "sweep", "--config", cfg.to_str().unwrap(), "--data", data.to_str().unwrap(),
            "--mlstm-hidden", "4,8", "--lstm-hidden", "4", "--out", out.to_str().unwrap(), "--threads", "2"
        ])),
        EXIT_OK
    );
    let rows = mlstm::analysis::read_sweep(std::fs::File::open(out.join("sweep.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].params < rows[1].params);
    assert_eq!(rows[2].arch, "stacked-lstm");
}
