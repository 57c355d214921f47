use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::{adam_step, clip_grad_norm, cosine_lr, make_param_groups, AdamState};
use super::{LossKind, TrainConfig, TrainError};
use crate::data::WindowedDataset;
use crate::grad::{Tape, Tensor};
use crate::model::{DeepSsmModel, Mode};

/// Added to each basin's target standard deviation in the `basin_nse` weight.
const NSE_WEIGHT_EPS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    /// Learning rate of groups B and C during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: DeepSsmModel,
    pub optimizer: AdamState,
    pub log: Vec<EpochLog>,
    /// Index of the last completed epoch.
    pub epoch: usize,
}

/// Stream of the shuffling/dropout RNG, kept apart from parameter init.
const TRAIN_STREAM: u64 = 0x7472_6169_6e00;

/// Train `model` on `data` for `cfg.epochs` epochs.
///
/// Each epoch shuffles sample indices with a generator seeded from `seed`,
/// walks them in batches of `cfg.batch_size` (the final batch may be
/// short), and applies one clipped Adam step per batch with the epoch's
/// learning rates. `on_epoch` is called after every epoch.
pub fn train(
    mut model: DeepSsmModel,
    data: &WindowedDataset,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let groups = make_param_groups(&model, cfg)?;
    let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _, _)| n).collect();
    let mut state = AdamState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAIN_STREAM);
    let weights = match cfg.loss {
        LossKind::Mse => None,
        LossKind::BasinNse => Some(
            data.basin_target_std()
                .into_iter()
                .map(|s| 1.0 / ((s + NSE_WEIGHT_EPS) * (s + NSE_WEIGHT_EPS)))
                .collect::<Vec<_>>(),
        ),
    };
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let rates = cosine_lr(epoch, cfg);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.gather(batch);
            let w = weights.as_ref().map(|w| {
                Tensor::new(&[batch.len(), 1], batch.iter().map(|&i| w[data.basin_of(i)]).collect())
                    .expect("weight shape")
            });
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let xv = tape.constant(x);
            let pred = model.forward_on_tape(&mut tape, &bound, xv, Mode::Train { seed: rng.random() })?;
            let yv = tape.constant(y);
            let diff = tape.sub(pred, yv)?;
            let mut sq = tape.mul(diff, diff)?;
            if let Some(w) = w {
                let wv = tape.constant(w);
                sq = tape.mul(sq, wv)?;
            }
            let loss = tape.mean(sq)?;
            let value = tape.item(loss)?;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            tape.backward(loss)?;
            model.collect_grads(&tape, &bound)?;
            drop(tape);
            let mut params = model.parameters_mut();
            if let Some(max) = cfg.clip_norm {
                clip_grad_norm(&mut params, max);
            }
            state.step += 1;
            for g in &groups {
                let lr = rates.for_group(g.id);
                for &i in &g.members {
                    adam_step(params[i], &names[i], &mut state.m[i], &mut state.v[i], state.step, lr, g.weight_decay)?;
                }
            }
            loss_sum += value * batch.len() as f64;
        }
        model.zero_grad();
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            lr: rates.base,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        model,
        optimizer: state,
        log,
        epoch: cfg.epochs - 1,
    })
}
