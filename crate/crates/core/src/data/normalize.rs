use serde::{Deserialize, Serialize};

use super::{input_names, BasinRecord, DataError, Period};

/// Global (all-basin) standardization statistics fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_names: Vec<String>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Relative standard deviation below which a feature counts as constant.
const MIN_RELATIVE_STD: f64 = 1e-10;

fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

fn degenerate(mean: f64, std: f64) -> bool {
    !(std > MIN_RELATIVE_STD * mean.abs().max(1.0))
}

/// Means and population standard deviations over every basin's rows inside
/// `train_period`. Static attributes are counted once per training row, as
/// they appear in the model input; discharge skips missing days.
pub fn fit_normalizer(
    records: &[BasinRecord],
    attribute_names: &[String],
    train_period: &Period,
) -> Result<Normalizer, DataError> {
    let names = input_names(attribute_names);
    let dim = names.len();
    if let Some(r) = records.iter().find(|r| r.input_dim() != dim) {
        return Err(DataError::Inconsistent(format!(
            "basin {} has {} inputs, expected {dim}",
            r.basin_id,
            r.input_dim()
        )));
    }
    let ranges: Vec<_> = records.iter().map(|r| r.period_range(train_period)).collect();
    if ranges.iter().all(|r| r.is_empty()) {
        return Err(DataError::EmptyTraining(*train_period));
    }
    let mut input_mean = Vec::with_capacity(dim);
    let mut input_std = Vec::with_capacity(dim);
    for j in 0..dim {
        let column = records.iter().zip(&ranges).flat_map(move |(r, range)| {
            range.clone().map(move |t| if j < 5 { r.forcing[t][j] } else { r.attributes[j - 5] })
        });
        let (mean, std, _) = moments(column);
        if degenerate(mean, std) {
            return Err(DataError::ZeroVariance(names[j].clone()));
        }
        input_mean.push(mean);
        input_std.push(std);
    }
    let q = records
        .iter()
        .zip(&ranges)
        .flat_map(|(r, range)| r.discharge[range.clone()].iter().flatten().copied());
    let (target_mean, target_std, n) = moments(q);
    if n == 0 {
        return Err(DataError::EmptyTraining(*train_period));
    }
    if degenerate(target_mean, target_std) {
        return Err(DataError::ZeroVariance("discharge_mm_day".into()));
    }
    Ok(Normalizer {
        input_names: names,
        input_mean,
        input_std,
        target_mean,
        target_std,
    })
}

impl Normalizer {
    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn transform_input(&self, j: usize, x: f64) -> f64 {
        (x - self.input_mean[j]) / self.input_std[j]
    }

    pub fn inverse_input(&self, j: usize, z: f64) -> f64 {
        z * self.input_std[j] + self.input_mean[j]
    }

    pub fn transform_target(&self, q: f64) -> f64 {
        (q - self.target_mean) / self.target_std
    }

    pub fn inverse_target(&self, z: f64) -> f64 {
        z * self.target_std + self.target_mean
    }
}
