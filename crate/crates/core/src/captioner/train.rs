use std::io::{self, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CaptionerError, EncodedSample, ModelConfig, ModelState, Net, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean NLL per target token over the epoch's batches, before each update.
    pub train_nll: f64,
    pub val_nll: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation NLL.
    pub state: ModelState,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Optimizer steps taken in total, including epochs after the best one.
    pub steps: u64,
}

/// Mean NLL per target token over `samples`.
pub fn dataset_nll(net: Net<'_>, samples: &[EncodedSample]) -> Result<f64, CaptionerError> {
    if samples.is_empty() {
        return Err(CaptionerError::EmptyDataset);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let (nll, n) = net.sample_nll(Some(&s.embedding), &s.tweet_ids, &s.alt_ids)?;
        total += nll;
        count += n;
    }
    Ok(total / count as f64)
}

pub fn train(
    config: &ModelConfig,
    hyper: &TrainConfig,
    train: &[EncodedSample],
    val: &[EncodedSample],
) -> Result<TrainOutcome, CaptionerError> {
    train_from(ModelState::new(config.clone())?, hyper, train, val)
}

/// Adam on mini-batches with early stopping on validation NLL. Mapping
/// network and decoder are updated; sample embeddings are only read.
pub fn train_from(
    mut state: ModelState,
    hyper: &TrainConfig,
    train: &[EncodedSample],
    val: &[EncodedSample],
) -> Result<TrainOutcome, CaptionerError> {
    if train.is_empty() || val.is_empty() {
        return Err(CaptionerError::EmptyDataset);
    }
    if hyper.batch_size == 0 {
        return Err(CaptionerError::InvalidConfig("batch_size must be positive".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let use_dropout = state.config.dropout > 0.0;
    let mut grads = vec![0.0; state.num_params()];
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best: Option<(f64, ModelState, usize)> = None;
    let mut since_best = 0usize;
    let mut log = Vec::new();
    let mut steps = 0u64;
    let started = Instant::now();

    'epochs: for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_nll = 0.0;
        let mut epoch_count = 0usize;
        let mut out_of_steps = false;
        for batch in order.chunks(hyper.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let targets: usize = batch.iter().map(|&i| train[i].alt_ids.len() + 1).sum();
            let scale = 1.0 / targets as f64;
            let mut batch_nll = 0.0;
            {
                let net = state.net();
                for &i in batch {
                    let s = &train[i];
                    let rng = use_dropout.then_some(&mut dropout_rng);
                    let (nll, _) = net.accumulate_grad(
                        Some(&s.embedding),
                        &s.tweet_ids,
                        &s.alt_ids,
                        None,
                        scale,
                        &mut grads,
                        rng,
                    )?;
                    batch_nll += nll;
                }
            }
            if !batch_nll.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(CaptionerError::DivergedLoss(state.step));
            }
            epoch_nll += batch_nll;
            epoch_count += targets;
            adam_step(&mut state, &grads, hyper);
            steps += 1;
            if hyper.max_steps.is_some_and(|m| steps >= m) {
                out_of_steps = true;
                break;
            }
        }
        let val_nll = dataset_nll(state.net(), val)?;
        if !val_nll.is_finite() {
            return Err(CaptionerError::DivergedLoss(state.step));
        }
        log.push(EpochLog {
            epoch,
            train_nll: epoch_nll / epoch_count as f64,
            val_nll,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        match &best {
            Some((b, _, _)) if val_nll >= *b => {
                since_best += 1;
                if since_best > hyper.patience {
                    break 'epochs;
                }
            }
            _ => {
                best = Some((val_nll, state.clone(), epoch));
                since_best = 0;
            }
        }
        if out_of_steps {
            break;
        }
    }
    let (_, state, best_epoch) = best.ok_or(CaptionerError::EmptyDataset)?;
    Ok(TrainOutcome {
        state,
        log,
        best_epoch,
        steps,
    })
}

fn adam_step(state: &mut ModelState, grads: &[f64], hyper: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (((p, m), v), &g) in state
        .params
        .iter_mut()
        .zip(state.adam_m.iter_mut())
        .zip(state.adam_v.iter_mut())
        .zip(grads)
    {
        *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
        *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
        *p -= hyper.lr * (*m / c1) / ((*v / c2).sqrt() + hyper.eps);
    }
}

/// CSV with columns `epoch,train_nll,val_nll,wall_seconds`.
pub fn write_train_log<W: Write>(mut w: W, log: &[EpochLog]) -> io::Result<()> {
    writeln!(w, "epoch,train_nll,val_nll,wall_seconds")?;
    for e in log {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.3}",
            e.epoch, e.train_nll, e.val_nll, e.wall_seconds
        )?;
    }
    Ok(())
}
