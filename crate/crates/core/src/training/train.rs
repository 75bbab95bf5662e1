use std::f64::consts::LN_2;
use std::path::PathBuf;
use std::time::Instant;

use super::checkpoint::{Checkpoint, Progress, ResumeState};
use super::config::RunConfig;
use super::eval::evaluate_stream;
use super::log::{LogRow, TrainLog};
use crate::cells::{backward_sequence, forward_sequence, init_params, window_loss, ModelParams, State, Tape};
use crate::data::{make_batches, split, Corpus};
use crate::error::{Error, Result};
use crate::math::{Real, Rng};
use crate::optim::Optimizer;
use crate::regularization::sample_masks;

/// Patience bookkeeping over validation results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    /// Non-improving evaluations tolerated; 0 never stops.
    pub patience: usize,
    pub best: Option<f64>,
    pub since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Record one validation result. Only a strict decrease counts as an
    /// improvement.
    pub fn observe(&mut self, valid_bits: f64) -> Verdict {
        match self.best {
            Some(b) if valid_bits >= b => {
                self.since_best += 1;
                if self.patience > 0 && self.since_best >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Continue
                }
            }
            _ => {
                self.best = Some(valid_bits);
                self.since_best = 0;
                Verdict::Improved
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Stop after this many windows in this invocation, leaving a resumable
    /// checkpoint. No final evaluation is run.
    pub stop_after_windows: Option<u64>,
    /// Where `best.ckpt`, `last.ckpt`, `log.csv` and `config.json` go.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    EarlyStopped,
    Interrupted,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters at the lowest validation loss; the current ones if no
    /// evaluation ran.
    pub best: Checkpoint<T>,
    /// Resumable end-of-run state.
    pub last: Checkpoint<T>,
    pub log: TrainLog,
    pub stop: StopReason,
    /// Training bits/char of every window run by this invocation.
    pub window_bits: Vec<f64>,
}

/// Train from a fresh initialization.
pub fn train<T: Real>(config: &RunConfig, corpus: &Corpus, options: &TrainOptions) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let arch = config.arch_spec();
    let vocab = corpus.vocab().len();
    let mut rng = Rng::new(config.seed);
    let params: ModelParams<T> = init_params(&arch, vocab, config.init_scale, &mut rng)?;
    let splits = split(corpus, &config.split)?;
    let plan = make_batches(splits.train, config.batch_lanes, config.window)?;
    let schedule = config.schedule((config.epochs * plan.windows) as u64)?;
    let optimizer = Optimizer::new(config.optimizer, &params, schedule);
    let start = Checkpoint {
        config: config.clone(),
        vocab: corpus.vocab().clone(),
        progress: Progress {
            next_eval: config.eval_interval,
            ..Default::default()
        },
        best_valid: None,
        log: TrainLog::default(),
        resume: Some(ResumeState {
            optimizer,
            rng: rng.state(),
            state: State::zeros(&arch, config.batch_lanes),
            best: None,
        }),
        params,
    };
    log::info!(
        "training {} h={} on {} bytes ({} windows per epoch, {} epochs)",
        arch.kind.name(),
        arch.hidden,
        splits.train.len(),
        plan.windows,
        config.epochs
    );
    run(start, corpus, options)
}

/// Continue a run from a checkpoint written by [`train`].
pub fn resume<T: Real>(ckpt: Checkpoint<T>, corpus: &Corpus, options: &TrainOptions) -> Result<TrainOutcome<T>> {
    if ckpt.resume.is_none() {
        return Err(Error::Config("checkpoint carries no resume data (was it a best.ckpt?)".into()));
    }
    if ckpt.vocab != *corpus.vocab() {
        return Err(Error::Config("corpus vocabulary differs from the checkpoint's".into()));
    }
    log::info!("resuming at step {} (epoch {}, window {})", ckpt.progress.step, ckpt.progress.epoch, ckpt.progress.window);
    run(ckpt, corpus, options)
}

fn tape_culprit<T: Real>(tape: &Tape<T>) -> String {
    for (l, lt) in tape.layers.iter().enumerate() {
        if lt.h.iter().any(|v| !v.is_finite()) {
            return format!("l{l}.h");
        }
        if lt.c.iter().any(|v| !v.is_finite()) {
            return format!("l{l}.c");
        }
    }
    if !tape.logits.is_finite() {
        return "logits".into();
    }
    "loss".into()
}

fn run<T: Real>(ckpt: Checkpoint<T>, corpus: &Corpus, options: &TrainOptions) -> Result<TrainOutcome<T>> {
    let Checkpoint {
        config,
        vocab,
        mut params,
        mut progress,
        best_valid,
        mut log,
        resume,
    } = ckpt;
    let ResumeState {
        mut optimizer,
        rng,
        mut state,
        best,
    } = resume.expect("checked by callers");
    let mut rng = Rng::from_state(&rng)?;
    let arch = *params.arch();
    let dropout = config.dropout();
    let splits = split(corpus, &config.split)?;
    let plan = make_batches(splits.train, config.batch_lanes, config.window)?;
    let mut best_params = best;
    let mut stopper = EarlyStopping {
        patience: config.patience,
        best: best_valid,
        since_best: progress.evals_without_improvement,
    };
    if let Some(dir) = &options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.json");
        std::fs::write(&path, config.to_json()).map_err(|e| Error::io(&path, e))?;
    }

    let clock = Instant::now();
    let wall0 = progress.wall_s;
    let mut window_bits = Vec::new();
    let mut ran = 0u64;
    let mut stop = StopReason::Budget;
    let targets_per_window = (plan.lanes * plan.window) as u64;

    while !progress.finished {
        if options.stop_after_windows.is_some_and(|n| ran >= n) {
            stop = StopReason::Interrupted;
            break;
        }
        if progress.window == 0 {
            state = State::zeros(&arch, plan.lanes);
        }
        let win = plan.window(progress.window);
        let masks = if dropout.is_active() {
            Some(sample_masks::<T>(plan.lanes, arch.embed, arch.hidden, arch.layers, &dropout, &mut rng)?)
        } else {
            None
        };
        let (tape, next) = forward_sequence(&params, &state, &win.inputs, masks.as_ref())?;
        let loss = window_loss(&tape, &win.targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step: progress.step,
                tensor: tape_culprit(&tape),
            });
        }
        let (grads, _) = backward_sequence(&params, &tape, &win.targets)?;
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFinite {
                step: progress.step,
                tensor: format!("gradient of {name}"),
            });
        }
        optimizer.step(&mut params, &grads)?;
        if let Some(name) = params.first_non_finite() {
            return Err(Error::NonFinite {
                step: progress.step,
                tensor: name.to_string(),
            });
        }
        state = next;
        ran += 1;
        progress.step += 1;
        progress.chars_seen += targets_per_window;
        progress.train_nats += loss * targets_per_window as f64;
        progress.train_targets += targets_per_window;
        window_bits.push(loss / LN_2);
        progress.window += 1;
        if progress.window == plan.windows {
            progress.window = 0;
            progress.epoch += 1;
        }
        let budget_done = progress.epoch >= config.epochs;

        if progress.chars_seen >= progress.next_eval || budget_done {
            let valid = evaluate_stream(&params, splits.valid.ids)?.mean_bits;
            let row = LogRow {
                step: progress.step,
                chars_seen: progress.chars_seen,
                schedule: optimizer.rate(),
                train_bits: progress.train_nats / progress.train_targets as f64 / LN_2,
                valid_bits: valid,
                wall_s: wall0 + clock.elapsed().as_secs_f64(),
            };
            log::info!(
                "step {} chars {} rate {:.3e} train {:.4} valid {:.4} bits/char",
                row.step,
                row.chars_seen,
                row.schedule,
                row.train_bits,
                row.valid_bits
            );
            log.push(row)?;
            progress.train_nats = 0.0;
            progress.train_targets = 0;
            let interval = config.eval_interval;
            progress.next_eval = (progress.chars_seen / interval + 1) * interval;
            let verdict = stopper.observe(valid);
            progress.evals_without_improvement = stopper.since_best;
            if verdict == Verdict::Improved {
                best_params = Some(params.clone());
            }
            if let Some(dir) = &options.out_dir {
                log.save(dir.join("log.csv"))?;
                if verdict == Verdict::Improved {
                    let best = Checkpoint {
                        config: config.clone(),
                        vocab: vocab.clone(),
                        params: params.clone(),
                        progress: progress.clone(),
                        best_valid: stopper.best,
                        log: log.clone(),
                        resume: None,
                    };
                    best.save(dir.join("best.ckpt"))?;
                }
            }
            if verdict == Verdict::Stop {
                log::info!("validation has not improved for {} evaluations; stopping", stopper.since_best);
                progress.finished = true;
                stop = StopReason::EarlyStopped;
            }
        }
        if budget_done {
            progress.finished = true;
        }
    }
    progress.wall_s = wall0 + clock.elapsed().as_secs_f64();

    let best = Checkpoint {
        config: config.clone(),
        vocab: vocab.clone(),
        params: best_params.clone().unwrap_or_else(|| params.clone()),
        progress: progress.clone(),
        best_valid: stopper.best,
        log: log.clone(),
        resume: None,
    };
    let last = Checkpoint {
        config,
        vocab,
        params,
        progress,
        best_valid: stopper.best,
        log: log.clone(),
        resume: Some(ResumeState {
            optimizer,
            rng: rng.state(),
            state,
            best: best_params,
        }),
    };
    if let Some(dir) = &options.out_dir {
        last.save(dir.join("last.ckpt"))?;
        if stopper.best.is_none() {
            best.save(dir.join("best.ckpt"))?;
        }
        log.save(dir.join("log.csv"))?;
    }
    Ok(TrainOutcome {
        best,
        last,
        log,
        stop,
        window_bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_one_stops_at_first_worse_value() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(3.0), Verdict::Improved);
        assert_eq!(s.observe(2.5), Verdict::Improved);
        assert_eq!(s.observe(2.7), Verdict::Stop);
        assert_eq!(s.best, Some(2.5));
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut s = EarlyStopping::new(2);
        s.observe(2.0);
        assert_eq!(s.observe(2.0), Verdict::Continue);
        assert_eq!(s.observe(1.9), Verdict::Improved);
        assert_eq!(s.since_best, 0);
    }

    #[test]
    fn zero_patience_never_stops() {
        let mut s = EarlyStopping::new(0);
        s.observe(1.0);
        for _ in 0..100 {
            assert_eq!(s.observe(5.0), Verdict::Continue);
        }
    }
}
