use serde::{Deserialize, Serialize};

use super::EvalError;

/// Floor applied to flows before taking logarithms in the low-segment volume.
pub const FLV_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nse: f64,
    pub kge: f64,
    pub pearson_r: f64,
    /// Percent.
    pub fhv: f64,
    /// Percent. `NaN` when the observed low segment has no volume but the
    /// simulated one does.
    pub flv: f64,
    /// Percent.
    pub pbias: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 6] = ["nse", "kge", "pearson_r", "fhv", "flv", "pbias"];

    pub fn values(&self) -> [f64; 6] {
        [self.nse, self.kge, self.pearson_r, self.fhv, self.flv, self.pbias]
    }

    pub fn from_values(v: [f64; 6]) -> Self {
        Self {
            nse: v[0],
            kge: v[1],
            pearson_r: v[2],
            fhv: v[3],
            flv: v[4],
            pbias: v[5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub basin_id: String,
    pub member: u64,
    pub metrics: Metrics,
}

impl MetricReport {
    pub fn new(basin_id: impl Into<String>, member: u64, metrics: Metrics) -> Self {
        Self {
            basin_id: basin_id.into(),
            member,
            metrics,
        }
    }
}

/// Keep only the days where both series are finite.
pub fn paired(obs: &[f64], sim: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    if obs.len() != sim.len() {
        return Err(EvalError::LengthMismatch {
            obs: obs.len(),
            sim: sim.len(),
        });
    }
    Ok(obs
        .iter()
        .zip(sim)
        .filter(|(o, s)| o.is_finite() && s.is_finite())
        .map(|(o, s)| (*o, *s))
        .unzip())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sum_sq_dev(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m) * (v - m)).sum()
}

/// The six evaluation metrics over the finite pairs of `obs` and `sim`.
pub fn metric_suite(obs: &[f64], sim: &[f64]) -> Result<Metrics, EvalError> {
    let (obs, sim) = paired(obs, sim)?;
    if obs.len() < 2 {
        return Err(EvalError::TooFewPairs(obs.len()));
    }
    let (mo, ms) = (mean(&obs), mean(&sim));
    let (so, ss) = (sum_sq_dev(&obs, mo), sum_sq_dev(&sim, ms));
    if so == 0.0 {
        return Err(EvalError::Degenerate("observed discharge is constant".into()));
    }
    let sum_obs: f64 = obs.iter().sum();
    if sum_obs == 0.0 {
        return Err(EvalError::Degenerate("observed discharge sums to zero".into()));
    }
    let cross: f64 = obs.iter().zip(&sim).map(|(o, s)| (s - ms) * (o - mo)).sum();
    let pearson_r = cross / (ss * so).sqrt();
    let err: f64 = obs.iter().zip(&sim).map(|(o, s)| (o - s) * (o - s)).sum();
    let nse = 1.0 - err / so;
    let n = obs.len() as f64;
    let alpha = (ss / n).sqrt() / (so / n).sqrt();
    let beta = ms / mo;
    let kge = 1.0 - ((pearson_r - 1.0).powi(2) + (beta - 1.0).powi(2) + (alpha - 1.0).powi(2)).sqrt();
    let sum_sim: f64 = sim.iter().sum();
    let pbias = (sum_sim - sum_obs) / sum_obs * 100.0;
    let (fo, fs) = (flow_duration(&obs), flow_duration(&sim));
    Ok(Metrics {
        nse,
        kge,
        pearson_r,
        fhv: fhv_sorted(&fo, &fs),
        flv: flv_sorted(&fo, &fs),
        pbias,
    })
}

/// Flows sorted in descending order; rank `i` (1-based) has exceedance
/// probability `i / (n + 1)`.
pub fn flow_duration(q: &[f64]) -> Vec<f64> {
    let mut v = q.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Size of the high-flow segment for `n` flows.
pub fn high_segment_len(n: usize) -> usize {
    (n / 50).max(1)
}

/// Range of 0-based FDC indices whose exceedance is at least 0.7.
pub fn low_segment(n: usize) -> std::ops::Range<usize> {
    let first = (7 * (n + 1)).div_ceil(10).max(1);
    (first - 1).min(n)..n
}

fn fhv_sorted(obs: &[f64], sim: &[f64]) -> f64 {
    let h = high_segment_len(obs.len());
    let num: f64 = sim[..h].iter().zip(&obs[..h]).map(|(s, o)| s - o).sum();
    let den: f64 = obs[..h].iter().sum();
    num / den * 100.0
}

fn low_volume(sorted: &[f64]) -> f64 {
    let seg: Vec<f64> = sorted[low_segment(sorted.len())].iter().map(|q| q.max(FLV_FLOOR)).collect();
    let Some(min) = seg.iter().copied().reduce(f64::min) else {
        return 0.0;
    };
    seg.iter().map(|q| q.ln() - min.ln()).sum()
}

fn flv_sorted(obs: &[f64], sim: &[f64]) -> f64 {
    let (so, ss) = (low_volume(obs), low_volume(sim));
    if so == 0.0 {
        return if ss == 0.0 { 0.0 } else { f64::NAN };
    }
    (-ss + so) / so * 100.0
}

/// `(model - reference) / (1 - reference)`, for NSE or KGE.
pub fn skill_score(model: f64, reference: f64) -> Result<f64, EvalError> {
    if reference == 1.0 {
        return Err(EvalError::PerfectReference);
    }
    Ok((model - reference) / (1.0 - reference))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FhvImprovement {
    /// `(|FHV_ref - 1| - |FHV_model - 1|) / 100`.
    #[default]
    Verbatim,
    /// `(|FHV_ref| - |FHV_model|) / 100`.
    Corrected,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvements {
    pub fhv: f64,
    pub pearson_r: f64,
    pub pbias: f64,
}

pub fn improvements(
    model: &MetricReport,
    reference: &MetricReport,
    fhv_form: FhvImprovement,
) -> Result<Improvements, EvalError> {
    if model.basin_id != reference.basin_id {
        return Err(EvalError::BasinMismatch {
            model: model.basin_id.clone(),
            reference: reference.basin_id.clone(),
        });
    }
    let (m, r) = (&model.metrics, &reference.metrics);
    let fhv = match fhv_form {
        FhvImprovement::Verbatim => ((r.fhv - 1.0).abs() - (m.fhv - 1.0).abs()) / 100.0,
        FhvImprovement::Corrected => (r.fhv.abs() - m.fhv.abs()) / 100.0,
    };
    Ok(Improvements {
        fhv,
        pearson_r: (r.pearson_r - 1.0).abs() - (m.pearson_r - 1.0).abs(),
        pbias: (r.pbias.abs() - m.pbias.abs()) / 100.0,
    })
}

/// `(group2 - group1) / group1 * 100`.
pub fn percentage_difference(group2_mean: f64, group1_mean: f64) -> Option<f64> {
    (group1_mean != 0.0 && group1_mean.is_finite() && group2_mean.is_finite())
        .then(|| (group2_mean - group1_mean) / group1_mean * 100.0)
}

/// Pearson correlation, `None` for fewer than two points or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (sx, sy) = (sum_sq_dev(x, mx), sum_sq_dev(y, my));
    if sx == 0.0 || sy == 0.0 {
        return None;
    }
    let cross: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(cross / (sx * sy).sqrt())
}
