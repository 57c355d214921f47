use chrono::NaiveDate;

use super::{BasinRecord, DataError, Normalizer, Period};
use crate::grad::Tensor;

/// One standardized look-back window and its target.
///
/// Row `t` of `inputs` is day `target_date - (lookback - 1 - t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub basin_id: String,
    pub target_date: NaiveDate,
    /// `[lookback, input_dim]`
    pub inputs: Tensor,
    pub target: f64,
}

#[derive(Clone, Debug)]
struct Series {
    basin_id: String,
    start: NaiveDate,
    /// `[T, 5]` standardized forcing.
    forcing: Vec<f64>,
    /// Standardized attributes, tiled at gather time.
    attributes: Vec<f64>,
    /// Standardized discharge (`NaN` where missing).
    target: Vec<f64>,
}

/// Lazily materialized windows over many basins.
///
/// Only standardized daily series are held; windows are assembled on demand
/// by [`WindowedDataset::gather`].
#[derive(Clone, Debug)]
pub struct WindowedDataset {
    lookback: usize,
    input_dim: usize,
    series: Vec<Series>,
    /// `(basin, end index)` per sample.
    index: Vec<(usize, usize)>,
}

/// Indices of days in `period` that have a full look-back before them.
///
/// A day qualifies when the `lookback` days preceding it are in the record;
/// its window is the `lookback` rows ending on the day itself.
fn window_ends(record: &BasinRecord, period: &Period, lookback: usize) -> impl Iterator<Item = usize> {
    let range = record.period_range(period);
    range.filter(move |&t| t >= lookback)
}

impl WindowedDataset {
    /// Windows whose target is observed.
    pub fn training(
        records: &[BasinRecord],
        period: &Period,
        normalizer: &Normalizer,
        lookback: usize,
    ) -> Result<Self, DataError> {
        Self::build(records, period, normalizer, lookback, false)
    }

    /// Windows for every day with enough look-back, observed or not.
    pub fn prediction(
        records: &[BasinRecord],
        period: &Period,
        normalizer: &Normalizer,
        lookback: usize,
    ) -> Result<Self, DataError> {
        Self::build(records, period, normalizer, lookback, true)
    }

    fn build(
        records: &[BasinRecord],
        period: &Period,
        normalizer: &Normalizer,
        lookback: usize,
        include_missing: bool,
    ) -> Result<Self, DataError> {
        let input_dim = normalizer.input_dim();
        let mut series = Vec::with_capacity(records.len());
        let mut index = Vec::new();
        for (b, r) in records.iter().enumerate() {
            if r.input_dim() != input_dim {
                return Err(DataError::Inconsistent(format!(
                    "basin {} has {} inputs, normalizer expects {input_dim}",
                    r.basin_id,
                    r.input_dim()
                )));
            }
            let forcing = r
                .forcing
                .iter()
                .flat_map(|row| row.iter().enumerate().map(|(j, v)| normalizer.transform_input(j, *v)))
                .collect();
            let attributes = r
                .attributes
                .iter()
                .enumerate()
                .map(|(j, v)| normalizer.transform_input(j + 5, *v))
                .collect();
            let target: Vec<f64> = r
                .discharge
                .iter()
                .map(|q| q.map_or(f64::NAN, |q| normalizer.transform_target(q)))
                .collect();
            index.extend(
                window_ends(r, period, lookback)
                    .filter(|&t| include_missing || !target[t].is_nan())
                    .map(|t| (b, t)),
            );
            series.push(Series {
                basin_id: r.basin_id.clone(),
                start: r.start,
                forcing,
                attributes,
                target,
            });
        }
        Ok(Self {
            lookback,
            input_dim,
            series,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn basin_count(&self) -> usize {
        self.series.len()
    }

    pub fn basin_ids(&self) -> impl Iterator<Item = &str> {
        self.series.iter().map(|s| s.basin_id.as_str())
    }

    /// Basin position (in record order) of sample `i`.
    pub fn basin_of(&self, i: usize) -> usize {
        self.index[i].0
    }

    pub fn basin_id(&self, i: usize) -> &str {
        &self.series[self.index[i].0].basin_id
    }

    pub fn target_date(&self, i: usize) -> NaiveDate {
        let (b, t) = self.index[i];
        self.series[b].start + chrono::Days::new(t as u64)
    }

    /// Standardized target of sample `i`, `NaN` if unobserved.
    pub fn target(&self, i: usize) -> f64 {
        let (b, t) = self.index[i];
        self.series[b].target[t]
    }

    /// Population standard deviation of each basin's standardized targets
    /// over this dataset's samples (0 for basins without samples).
    pub fn basin_target_std(&self) -> Vec<f64> {
        let mut acc = vec![(0.0, 0.0, 0usize); self.series.len()];
        for i in 0..self.len() {
            let y = self.target(i);
            if y.is_nan() {
                continue;
            }
            let a = &mut acc[self.index[i].0];
            a.0 += y;
            a.1 += y * y;
            a.2 += 1;
        }
        acc.into_iter()
            .map(|(s, s2, n)| {
                if n == 0 {
                    0.0
                } else {
                    let m = s / n as f64;
                    (s2 / n as f64 - m * m).max(0.0).sqrt()
                }
            })
            .collect()
    }

    fn write_window(&self, i: usize, out: &mut [f64]) {
        let (b, end) = self.index[i];
        let s = &self.series[b];
        let first = end + 1 - self.lookback;
        for (row, t) in (first..=end).enumerate() {
            let dst = &mut out[row * self.input_dim..(row + 1) * self.input_dim];
            dst[..5].copy_from_slice(&s.forcing[t * 5..t * 5 + 5]);
            dst[5..].copy_from_slice(&s.attributes);
        }
    }

    /// Inputs `[B, lookback, input_dim]` and targets `[B, 1]` for `indices`.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let stride = self.lookback * self.input_dim;
        let mut x = vec![0.0; indices.len() * stride];
        for (k, &i) in indices.iter().enumerate() {
            self.write_window(i, &mut x[k * stride..(k + 1) * stride]);
        }
        let y = indices.iter().map(|&i| self.target(i)).collect();
        (
            Tensor::new(&[indices.len(), self.lookback, self.input_dim], x).expect("window shape"),
            Tensor::new(&[indices.len(), 1], y).expect("target shape"),
        )
    }

    pub fn sample(&self, i: usize) -> SequenceSample {
        let mut x = vec![0.0; self.lookback * self.input_dim];
        self.write_window(i, &mut x);
        SequenceSample {
            basin_id: self.basin_id(i).to_string(),
            target_date: self.target_date(i),
            inputs: Tensor::new(&[self.lookback, self.input_dim], x).expect("window shape"),
            target: self.target(i),
        }
    }
}

/// Materialized training windows of one basin record.
pub fn build_windows(
    record: &BasinRecord,
    period: &Period,
    normalizer: &Normalizer,
    lookback: usize,
) -> Result<Vec<SequenceSample>, DataError> {
    let ds = WindowedDataset::training(std::slice::from_ref(record), period, normalizer, lookback)?;
    Ok((0..ds.len()).map(|i| ds.sample(i)).collect())
}
