use serde::{Deserialize, Serialize};

use super::EvalError;

/// Minimum number of observed days for [`signatures`].
pub const MIN_SIGNATURE_DAYS: usize = 365;
const HIGH_FLOW_FACTOR: f64 = 9.0;
const LOW_FLOW_FACTOR: f64 = 0.2;
const DAYS_PER_YEAR: f64 = 365.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureSet {
    /// mm/day
    pub q_mean: f64,
    /// mm/day
    pub q5: f64,
    /// mm/day
    pub q95: f64,
    /// days/year
    pub high_q_freq: f64,
    /// days
    pub high_q_dur: f64,
    /// days/year
    pub low_q_freq: f64,
    /// days
    pub low_q_dur: f64,
    /// percent of days
    pub zero_q_freq: f64,
}

impl SignatureSet {
    pub const NAMES: [&'static str; 8] = [
        "q_mean",
        "q5",
        "q95",
        "high_q_freq",
        "high_q_dur",
        "low_q_freq",
        "low_q_dur",
        "zero_q_freq",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.q_mean,
            self.q5,
            self.q95,
            self.high_q_freq,
            self.high_q_dur,
            self.low_q_freq,
            self.low_q_dur,
            self.zero_q_freq,
        ]
    }
}

/// Linear-interpolation quantile of ascending `sorted` at probability `p`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Count and mean length of maximal runs of consecutive observed days
/// satisfying `pred`. Missing days end a run.
fn runs(q: &[Option<f64>], pred: impl Fn(f64) -> bool) -> (usize, f64) {
    let (mut days, mut events, mut current) = (0usize, 0usize, 0usize);
    for v in q {
        match v {
            Some(x) if pred(*x) => {
                if current == 0 {
                    events += 1;
                }
                current += 1;
                days += 1;
            }
            _ => current = 0,
        }
    }
    let dur = if events == 0 { 0.0 } else { days as f64 / events as f64 };
    (days, dur)
}

/// Hydrologic signatures of a contiguous daily series; `None` marks a
/// missing day.
pub fn signatures(q: &[Option<f64>]) -> Result<SignatureSet, EvalError> {
    let mut obs: Vec<f64> = q.iter().flatten().copied().collect();
    if obs.len() < MIN_SIGNATURE_DAYS {
        return Err(EvalError::TooFewDays {
            needed: MIN_SIGNATURE_DAYS,
            found: obs.len(),
        });
    }
    if let Some(v) = obs.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(EvalError::Degenerate(format!("discharge {v} is not a non-negative number")));
    }
    let t = obs.len() as f64;
    let q_mean = obs.iter().sum::<f64>() / t;
    obs.sort_by(f64::total_cmp);
    let median = quantile(&obs, 0.5);
    let (high_days, high_q_dur) = runs(q, |x| x > HIGH_FLOW_FACTOR * median);
    let (low_days, low_q_dur) = runs(q, |x| x < LOW_FLOW_FACTOR * q_mean);
    let zeros = obs.iter().filter(|&&x| x == 0.0).count();
    Ok(SignatureSet {
        q_mean,
        q5: quantile(&obs, 0.05),
        q95: quantile(&obs, 0.95),
        high_q_freq: high_days as f64 * DAYS_PER_YEAR / t,
        high_q_dur,
        low_q_freq: low_days as f64 * DAYS_PER_YEAR / t,
        low_q_dur,
        zero_q_freq: zeros as f64 / t * 100.0,
    })
}
