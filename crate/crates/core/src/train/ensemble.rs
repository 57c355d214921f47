use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::trainer::{train, EpochLog};
use super::{TrainConfig, TrainError};
use crate::data::{fit_normalizer, BasinRecord, Normalizer, Period, WindowedDataset};
use crate::model::{build_model, Mode, ModelConfig};

const PREDICT_BATCH: usize = 64;

#[derive(Clone, Debug)]
pub struct MemberOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

#[derive(Clone, Debug)]
pub struct EnsembleOutput {
    pub normalizer: Normalizer,
    /// Successful members in seed order.
    pub members: Vec<MemberOutput>,
    /// Members that failed, with their seed.
    pub failures: Vec<(u64, TrainError)>,
}

/// Train one member per seed in `train_cfg.seeds`, at most `jobs` at a time.
///
/// The normalizer is fitted once on the training period and shared. A member
/// that fails is reported in `failures` without stopping the others.
/// `on_epoch` receives the member seed with each epoch log.
pub fn run_ensemble(
    records: &[BasinRecord],
    attribute_names: &[String],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    jobs: usize,
    on_epoch: &(dyn Fn(u64, &EpochLog) + Sync),
) -> Result<EnsembleOutput, TrainError> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    let normalizer = fit_normalizer(records, attribute_names, &train_cfg.train_period)?;
    if normalizer.input_dim() != model_cfg.input_dim {
        return Err(TrainError::InvalidConfig(vec![format!(
            "input_dim is {} but the data has {} inputs",
            model_cfg.input_dim,
            normalizer.input_dim()
        )]));
    }
    let data = WindowedDataset::training(records, &train_cfg.train_period, &normalizer, model_cfg.lookback)?;
    if data.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let seeds = &train_cfg.seeds;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<MemberOutput, TrainError>>>> = Mutex::new(vec![None; seeds.len()]);
    let workers = jobs.clamp(1, seeds.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = seeds.get(i) else { break };
                let outcome = build_model(model_cfg, seed)
                    .map_err(TrainError::from)
                    .and_then(|m| train(m, &data, train_cfg, seed, |e| on_epoch(seed, e)))
                    .map(|out| MemberOutput {
                        checkpoint: Checkpoint {
                            model_config: model_cfg.clone(),
                            train_config: train_cfg.clone(),
                            seed,
                            epoch: out.epoch,
                            normalizer: normalizer.clone(),
                            model: out.model,
                            optimizer: out.optimizer,
                        },
                        log: out.log,
                    });
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    let mut members = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in seeds.iter().zip(results.into_inner().expect("results lock")) {
        match r.expect("every seed is visited") {
            Ok(m) => members.push(m),
            Err(e) => failures.push((*seed, e)),
        }
    }
    Ok(EnsembleOutput {
        normalizer,
        members,
        failures,
    })
}

/// One simulated day of one member, in mm/day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub basin_id: String,
    pub date: NaiveDate,
    pub member: u64,
    #[serde(rename = "q_sim_mm_day")]
    pub q_sim: f64,
}

/// Simulate every day of `period` that has a full look-back window.
/// Outputs are de-standardized but otherwise unmodified, so they may be
/// negative.
pub fn predict(ck: &Checkpoint, records: &[BasinRecord], period: &Period) -> Result<Vec<PredictionRow>, TrainError> {
    let data = WindowedDataset::prediction(records, period, &ck.normalizer, ck.model_config.lookback)?;
    let mut rows = Vec::with_capacity(data.len());
    let all: Vec<usize> = (0..data.len()).collect();
    for batch in all.chunks(PREDICT_BATCH) {
        let (x, _) = data.gather(batch);
        let y = ck.model.forward(&x, Mode::Eval)?;
        for (&i, z) in batch.iter().zip(y.data()) {
            rows.push(PredictionRow {
                basin_id: data.basin_id(i).to_string(),
                date: data.target_date(i),
                member: ck.seed,
                q_sim: ck.normalizer.inverse_target(*z),
            });
        }
    }
    Ok(rows)
}

fn io_err(path: &Path, e: impl ToString) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, TrainError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

#[derive(Serialize)]
struct LossRow {
    member: u64,
    epoch: usize,
    train_loss: f64,
    lr: f64,
}

/// Write `member,epoch,train_loss,lr` for every member.
pub fn write_loss_log(path: &Path, members: &[MemberOutput]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for m in members {
        for e in &m.log {
            w.serialize(LossRow {
                member: m.checkpoint.seed,
                epoch: e.epoch,
                train_loss: e.train_loss,
                lr: e.lr,
            })
            .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}
