use mlstm::cells::ArchKind;
use mlstm::data::Corpus;
use mlstm::regularization::DropoutConfig;
use mlstm::training::{
    evaluate_stream, resume, train, Checkpoint, RunConfig, StopReason, TrainOptions,
};
use mlstm::Error;

fn periodic_corpus(len: usize) -> Corpus {
    Corpus::from_bytes(b"abcd".iter().copied().cycle().take(len).collect(), None).unwrap()
}

fn memorize_config() -> RunConfig {
    RunConfig {
        arch: ArchKind::Mlstm,
        hidden: 32,
        batch_lanes: 8,
        window: 25,
        epochs: 500,
        lr_start: 0.01,
        lr_min: 0.001,
        eval_interval: 50_000,
        seed: 3,
        ..Default::default()
    }
}

fn text_corpus(len: usize, seed: u64) -> Corpus {
    let words = ["the ", "cat ", "sat ", "on ", "a ", "mat ", "and ", "dog ", "ran\n"];
    let mut rng = mlstm::math::Rng::new(seed);
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        out.extend_from_slice(words[rng.below(words.len())].as_bytes());
    }
    out.truncate(len);
    Corpus::from_bytes(out, None).unwrap()
}

fn small_config() -> RunConfig {
    RunConfig {
        arch: ArchKind::Mlstm,
        hidden: 16,
        embed: 6,
        weight_norm: true,
        dropout_hidden: 0.2,
        dropout_embed: 0.1,
        batch_lanes: 4,
        window: 20,
        epochs: 2,
        eval_interval: 1_000,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn periodic_corpus_is_memorized() {
    let out = train::<f32>(&memorize_config(), &periodic_corpus(1024), &TrainOptions::default()).unwrap();
    let first = out.window_bits.iter().position(|&b| b < 0.05).expect("never below 0.05 bits");
    eprintln!("first window below 0.05 bits: {first}");
    assert!(first < 2000);
    // Smoothed loss is nonincreasing up to a few small upticks.
    let means: Vec<f64> = out.window_bits.chunks(100).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let ups = means.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(ups as f64 <= 0.05 * (means.len() - 1) as f64, "{ups} increases in {means:?}");
}

#[test]
fn identical_seeds_give_identical_logs() {
    let corpus = text_corpus(6_000, 1);
    let a = train::<f32>(&small_config(), &corpus, &TrainOptions::default()).unwrap();
    let b = train::<f32>(&small_config(), &corpus, &TrainOptions::default()).unwrap();
    assert!(a.log.len() >= 3);
    assert!(a.log.same_trace(&b.log));
    assert_eq!(a.best.params, b.best.params);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let corpus = text_corpus(6_000, 2);
    let config = small_config();
    let whole = train::<f32>(&config, &corpus, &TrainOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = train::<f32>(
        &config,
        &corpus,
        &TrainOptions {
            stop_after_windows: Some(37),
            out_dir: Some(dir.path().to_path_buf()),
        },
    )
    .unwrap();
    assert_eq!(first.stop, StopReason::Interrupted);
    let ckpt = Checkpoint::<f32>::load(dir.path().join("last.ckpt")).unwrap();
    assert_eq!(ckpt.progress.step, 37);
    let rest = resume(ckpt, &corpus, &TrainOptions::default()).unwrap();
    assert!(rest.log.same_trace(&whole.log));
    assert_eq!(rest.window_bits, whole.window_bits[37..]);
    assert_eq!(rest.last.params, whole.last.params);
    assert_eq!(rest.best.params, whole.best.params);
}

#[test]
fn best_checkpoint_has_minimum_validation_loss() {
    let corpus = text_corpus(6_000, 3);
    let config = RunConfig {
        lr_start: 0.05,
        lr_min: 0.05,
        ..small_config()
    };
    let out = train::<f32>(&config, &corpus, &TrainOptions::default()).unwrap();
    let min = out.log.rows.iter().map(|r| r.valid_bits).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.best_valid, Some(min));
    let splits = mlstm::data::split(&corpus, &config.split).unwrap();
    let again = evaluate_stream(&out.best.params, splits.valid.ids).unwrap().mean_bits;
    assert_eq!(again, min);
}

#[test]
fn patience_one_halts_at_first_non_improvement() {
    // A far too large step size makes validation loss bounce.
    let corpus = text_corpus(6_000, 4);
    let config = RunConfig {
        lr_start: 0.3,
        lr_min: 0.3,
        patience: 1,
        epochs: 20,
        eval_interval: 400,
        ..small_config()
    };
    let out = train::<f32>(&config, &corpus, &TrainOptions::default()).unwrap();
    assert_eq!(out.stop, StopReason::EarlyStopped);
    let rows = &out.log.rows;
    let n = rows.len();
    assert!(n >= 2);
    assert!(rows[n - 1].valid_bits >= rows[n - 2].valid_bits);
    for w in rows[..n - 1].windows(2) {
        assert!(w[1].valid_bits < w[0].valid_bits);
    }
    assert_eq!(out.best.best_valid, Some(rows[n - 2].valid_bits));
}

#[test]
fn evaluation_ignores_dropout() {
    let corpus = text_corpus(3_000, 5);
    let config = RunConfig {
        epochs: 1,
        ..small_config()
    };
    let out = train::<f64>(&config, &corpus, &TrainOptions::default()).unwrap();
    let ids = &corpus.ids()[..500];
    let ev = evaluate_stream(&out.best.params, ids).unwrap();
    let arch = *out.best.params.arch();
    let inputs: Vec<usize> = ids[..499].iter().map(|&i| i as usize).collect();
    let zero = mlstm::regularization::sample_masks::<f64>(
        1,
        arch.embed,
        arch.hidden,
        1,
        &DropoutConfig { hidden: 0.0, embed: 0.0, output_path: true },
        &mut mlstm::math::Rng::new(0),
    )
    .unwrap();
    let state = mlstm::cells::State::zeros(&arch, 1);
    let (a, _) = mlstm::cells::forward_sequence(&out.best.params, &state, &inputs, Some(&zero)).unwrap();
    let targets: Vec<usize> = ids[1..].iter().map(|&i| i as usize).collect();
    let bits: Vec<f64> = mlstm::cells::target_nats(&a.logits, &targets)
        .unwrap()
        .into_iter()
        .map(|x| x / std::f64::consts::LN_2)
        .collect();
    assert_eq!(bits, ev.bits[..499]);
}

#[test]
fn diverging_run_names_step_and_tensor() {
    let corpus = text_corpus(3_000, 6);
    let config = RunConfig {
        arch: ArchKind::VanillaRnn,
        embed: 0,
        weight_norm: false,
        dropout_hidden: 0.0,
        dropout_embed: 0.0,
        lr_start: 3e38,
        lr_min: 3e38,
        ..small_config()
    };
    match train::<f32>(&config, &corpus, &TrainOptions::default()) {
        Err(e @ Error::NonFinite { .. }) => {
            assert!(e.is_numeric());
            eprintln!("{e}");
        }
        other => panic!("expected a numeric failure, got {:?}", other.map(|o| o.stop)),
    }
}

#[test]
fn resume_rejects_inference_checkpoints() {
    let corpus = text_corpus(3_000, 7);
    let out = train::<f32>(&RunConfig { epochs: 1, ..small_config() }, &corpus, &TrainOptions::default()).unwrap();
    assert!(resume(out.best, &corpus, &TrainOptions::default()).is_err());
}
