use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricReport, Metrics};
use super::EvalError;

/// Median of the finite values, `NaN` if there are none.
pub fn median(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Median across basins, per member.
    pub member_medians: BTreeMap<u64, f64>,
    /// Mean of the member medians.
    pub mean: f64,
    /// Sample standard deviation of the member medians; absent for one member.
    pub std: Option<f64>,
    /// Median over every (basin, member) pair.
    pub pooled_median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub members: usize,
    pub basins: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

/// Summarize a metrics table: for each member the median across basins,
/// then mean and spread of those medians across members.
pub fn aggregate(reports: &[MetricReport]) -> Result<Summary, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Empty("metrics table".into()));
    }
    let mut by_member: BTreeMap<u64, Vec<&Metrics>> = BTreeMap::new();
    for r in reports {
        by_member.entry(r.member).or_default().push(&r.metrics);
    }
    let basins = reports.iter().map(|r| r.basin_id.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    let mut metrics = BTreeMap::new();
    for (k, name) in Metrics::NAMES.iter().enumerate() {
        let member_medians: BTreeMap<u64, f64> = by_member
            .iter()
            .map(|(m, rows)| (*m, median(rows.iter().map(|r| r.values()[k]))))
            .collect();
        let meds: Vec<f64> = member_medians.values().copied().collect();
        let n = meds.len() as f64;
        let mean = meds.iter().sum::<f64>() / n;
        let std = (meds.len() > 1).then(|| (meds.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0)).sqrt());
        metrics.insert(
            name.to_string(),
            MetricSummary {
                member_medians,
                mean,
                std,
                pooled_median: median(reports.iter().map(|r| r.metrics.values()[k])),
            },
        );
    }
    Ok(Summary {
        members: by_member.len(),
        basins,
        metrics,
    })
}

/// Per-basin median of each metric across members.
pub fn basin_medians(reports: &[MetricReport]) -> BTreeMap<String, Metrics> {
    let mut by_basin: BTreeMap<&str, Vec<&Metrics>> = BTreeMap::new();
    for r in reports {
        by_basin.entry(&r.basin_id).or_default().push(&r.metrics);
    }
    by_basin
        .into_iter()
        .map(|(b, rows)| {
            let v = std::array::from_fn(|k| median(rows.iter().map(|r| r.values()[k])));
            (b.to_string(), Metrics::from_values(v))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    /// Percent of basins where the model beats the reference.
    pub improved: f64,
    /// Percent of basins where the reference beats the model.
    pub decreased: f64,
}

/// Whether `model` is better (`Some(true)`), worse, or tied with `reference`
/// on metric `k`. Efficiencies are better when larger, biases when closer to
/// zero.
fn compare(k: usize, model: f64, reference: f64) -> Option<bool> {
    let (m, r) = if k < 3 { (model, reference) } else { (-model.abs(), -reference.abs()) };
    match m.partial_cmp(&r)? {
        std::cmp::Ordering::Greater => Some(true),
        std::cmp::Ordering::Less => Some(false),
        std::cmp::Ordering::Equal => None,
    }
}

/// Share of common basins where the model improved or decreased each metric.
/// Ties and undefined values count as neither.
pub fn improvement_ratios(
    model: &BTreeMap<String, Metrics>,
    reference: &BTreeMap<String, Metrics>,
) -> Result<BTreeMap<String, Ratio>, EvalError> {
    let common: Vec<(&Metrics, &Metrics)> = model
        .iter()
        .filter_map(|(b, m)| reference.get(b).map(|r| (m, r)))
        .collect();
    if common.is_empty() {
        return Err(EvalError::Empty("basins shared with the reference".into()));
    }
    let n = common.len() as f64;
    Ok(Metrics::NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (mut up, mut down) = (0usize, 0usize);
            for (m, r) in &common {
                match compare(k, m.values()[k], r.values()[k]) {
                    Some(true) => up += 1,
                    Some(false) => down += 1,
                    None => {}
                }
            }
            (
                name.to_string(),
                Ratio {
                    improved: up as f64 / n * 100.0,
                    decreased: down as f64 / n * 100.0,
                },
            )
        })
        .collect())
}
