//! Built-in numerical checks: kernel versus recurrence, gradients against
//! finite differences, and metric formulas against direct summation.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::eval::{metric_suite, signatures, skill_score};
use crate::grad::{finite_diff_check, GradError, Tape, Tensor};
use crate::model::{build_model, BoundModel, Mode, ModelConfig};
use crate::s4d::{forward_conv_on_tape, init_s4d, BoundSsm, DiagonalSsm, DtBounds};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} max_error={:.3e} tolerance={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.max_error,
            self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SelfcheckOptions {
    pub seed: u64,
    /// Negate the convolution kernel before comparing it with the recurrence.
    pub kernel_sign_flip: bool,
}

fn result(name: &str, outcome: Result<(f64, String), String>, tolerance: f64) -> CheckResult {
    match outcome {
        Ok((err, detail)) => CheckResult {
            name: name.into(),
            passed: err.is_finite() && err <= tolerance,
            max_error: err,
            tolerance,
            detail,
        },
        Err(detail) => CheckResult {
            name: name.into(),
            passed: false,
            max_error: f64::NAN,
            tolerance,
            detail,
        },
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape matches data")
}

/// A layer with S4D-Lin poles, random output weights and random step sizes.
pub fn random_ssm(rng: &mut ChaCha8Rng, channels: usize, state: usize) -> DiagonalSsm {
    let bounds = DtBounds::default();
    let mut ssm = init_s4d(channels, state, bounds, rng.random()).expect("valid layer shape");
    for t in [&mut ssm.c_re, &mut ssm.c_im, &mut ssm.d_skip] {
        for v in t.data_mut() {
            *v = rng.sample(StandardNormal);
        }
    }
    for v in ssm.log_neg_a_re.data_mut() {
        *v += rng.random_range(-1.0..1.0);
    }
    let (lo, hi) = (bounds.min_dt.ln(), bounds.max_dt.ln());
    for v in ssm.log_dt.data_mut() {
        *v = rng.random_range(lo..hi);
    }
    ssm
}

/// Relative max-abs difference between convolution and recurrence outputs.
pub fn mode_gap(ssm: &DiagonalSsm, u: &Tensor, flip_kernel: bool) -> Result<f64, String> {
    let conv = if flip_kernel {
        let l = u.shape()[1];
        let k = ssm.compute_kernel(l).map_err(|e| e.to_string())?;
        let neg = Tensor::new(k.shape(), k.data().iter().map(|v| -v).collect()).expect("same shape");
        let mut tape = Tape::new();
        let kv = tape.constant(neg);
        let uv = tape.constant(u.clone());
        let y = tape.causal_conv(kv, uv).map_err(|e| e.to_string())?;
        let h = ssm.channels();
        let d = ssm.d_skip.data();
        let mut out = tape.to_tensor(y);
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += d[i % h] * u.data()[i];
        }
        out
    } else {
        ssm.forward_conv(u).map_err(|e| e.to_string())?
    };
    let rec = ssm.forward_recurrent_sequence(u).map_err(|e| e.to_string())?;
    let scale = rec.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let gap = conv.data().iter().zip(rec.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(gap / scale)
}

fn check_modes(opts: &SelfcheckOptions) -> Result<(f64, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let lengths = [16, 256, 512];
    let mut worst = 0.0f64;
    for draw in 0..50 {
        let ssm = random_ssm(&mut rng, 4, 8);
        let l = lengths[draw % lengths.len()];
        let u = random_tensor(&mut rng, &[1, l, 4]);
        worst = worst.max(mode_gap(&ssm, &u, opts.kernel_sign_flip)?);
    }
    Ok((worst, "50 layers, H=4, N=8, L in {16, 256, 512}".into()))
}

/// Finite-difference check of an MSE loss through a full model.
pub fn model_gradient_error(cfg: &ModelConfig, batch: usize, seed: u64) -> Result<f64, String> {
    let model = build_model(cfg, seed).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = random_tensor(&mut rng, &[batch, cfg.lookback, cfg.input_dim]);
    let y = random_tensor(&mut rng, &[batch, 1]);
    let params: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
    finite_diff_check(
        |tape, vars| {
            let bound = BoundModel::from_vars(vars.to_vec());
            let xv = tape.constant(x.clone());
            let pred = model
                .forward_on_tape(tape, &bound, xv, Mode::Eval)
                .map_err(|e| GradError::NonFinite(e.to_string()))?;
            let t = tape.constant(y.clone());
            let d = tape.sub(pred, t)?;
            let sq = tape.mul(d, d)?;
            tape.mean(sq)
        },
        &params,
        1e-5,
    )
    .map_err(|e| e.to_string())
}

fn check_model_gradient(opts: &SelfcheckOptions) -> Result<(f64, String), String> {
    let cfg = ModelConfig {
        d_model: 4,
        d_state: 4,
        n_layer: 2,
        dropout: 0.0,
        input_dim: 5,
        lookback: 8,
        ..ModelConfig::default()
    };
    let err = model_gradient_error(&cfg, 2, opts.seed)?;
    Ok((err, "d_model=4, d_state=4, n_layer=2, lookback=8, batch=2".into()))
}

fn check_layer_gradient(opts: &SelfcheckOptions) -> Result<(f64, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let ssm = random_ssm(&mut rng, 3, 6);
    let u = random_tensor(&mut rng, &[2, 20, 3]);
    let params: Vec<Tensor> = ssm.tensors().into_iter().cloned().collect();
    let err = finite_diff_check(
        |tape, vars| {
            let bound = BoundSsm {
                log_neg_a_re: vars[0],
                a_im: vars[1],
                c_re: vars[2],
                c_im: vars[3],
                d_skip: vars[4],
                log_dt: vars[5],
            };
            let uv = tape.constant(u.clone());
            let y = forward_conv_on_tape(tape, &bound, uv, false)?;
            let sq = tape.mul(y, y)?;
            tape.mean(sq)
        },
        &params,
        1e-6,
    )
    .map_err(|e| e.to_string())?;
    Ok((err, "single layer, H=3, N=6, L=20".into()))
}

fn naive_metrics(obs: &[f64], sim: &[f64]) -> [f64; 3] {
    let n = obs.len() as f64;
    let mo = obs.iter().sum::<f64>() / n;
    let ms = sim.iter().sum::<f64>() / n;
    let (mut c, mut so, mut ss, mut e) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..obs.len() {
        c += (obs[i] - mo) * (sim[i] - ms);
        so += (obs[i] - mo) * (obs[i] - mo);
        ss += (sim[i] - ms) * (sim[i] - ms);
        e += (obs[i] - sim[i]) * (obs[i] - sim[i]);
    }
    let r = c / (so * ss).sqrt();
    let nse = 1.0 - e / so;
    let kge = 1.0 - ((r - 1.0).powi(2) + (ms / mo - 1.0).powi(2) + ((ss / so).sqrt() - 1.0).powi(2)).sqrt();
    [nse, kge, r]
}

fn check_metrics(opts: &SelfcheckOptions) -> Result<(f64, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(2));
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let obs: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0f64..2.0).exp()).collect();
        let sim: Vec<f64> = obs.iter().map(|q| q * rng.random_range(0.7..1.3) + 0.05).collect();
        let m = metric_suite(&obs, &sim).map_err(|e| e.to_string())?;
        let reference = naive_metrics(&obs, &sim);
        for (a, b) in [m.nse, m.kge, m.pearson_r].iter().zip(reference) {
            worst = worst.max((a - b).abs());
        }
    }
    let worked = metric_suite(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]).map_err(|e| e.to_string())?;
    worst = worst.max((worked.nse - 0.8).abs());
    let obs = [1.0, 2.0, 4.0, 3.0];
    let sim = obs.map(|q| 2.0 * q);
    let doubled = metric_suite(&obs, &sim).map_err(|e| e.to_string())?;
    worst = worst.max((doubled.kge - (1.0 - 2f64.sqrt())).abs());
    worst = worst.max((doubled.pbias - 100.0).abs());
    let nse_ss = skill_score(0.74, 0.72).map_err(|e| e.to_string())?;
    let kge_ss = skill_score(0.75, 0.74).map_err(|e| e.to_string())?;
    worst = worst.max((nse_ss - 1.0 / 14.0).abs()).max((kge_ss - 1.0 / 26.0).abs());
    Ok((worst, "NSE, KGE, Pearson-r on 20 series; worked examples; skill scores".into()))
}

fn check_signatures() -> Result<(f64, String), String> {
    let mut q = vec![Some(0.0); 365];
    for d in q.iter_mut().skip(50).take(10) {
        *d = Some(10.0);
    }
    let s = signatures(&q).map_err(|e| e.to_string())?;
    let mut worst = (s.zero_q_freq - 355.0 / 365.0 * 100.0).abs();
    let mut burst = vec![Some(1.0); 365];
    for d in burst.iter_mut().skip(100).take(3) {
        *d = Some(20.0);
    }
    let s = signatures(&burst).map_err(|e| e.to_string())?;
    worst = worst.max((s.high_q_freq - 3.0 * 365.25 / 365.0).abs()).max((s.high_q_dur - 3.0).abs());
    let flat = signatures(&vec![Some(1.0); 365]).map_err(|e| e.to_string())?;
    worst = worst.max((flat.q5 - 1.0).abs()).max((flat.q95 - 1.0).abs()).max(flat.low_q_freq);
    Ok((worst, "constant, intermittent and burst series".into()))
}

/// Run every check. Checks that cannot run are reported as failures.
pub fn run_selfcheck(opts: &SelfcheckOptions) -> Vec<CheckResult> {
    vec![
        result("kernel_vs_recurrence", check_modes(opts), 1e-6),
        result("gradient_ssm_layer", check_layer_gradient(opts), 1e-3),
        result("gradient_full_model", check_model_gradient(opts), 1e-3),
        result("metric_oracles", check_metrics(opts), 1e-10),
        result("signature_oracles", check_signatures(), 1e-12),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_build_passes() {
        let report = run_selfcheck(&SelfcheckOptions::default());
        for r in &report {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn flipped_kernel_is_caught() {
        let report = run_selfcheck(&SelfcheckOptions {
            kernel_sign_flip: true,
            ..SelfcheckOptions::default()
        });
        let modes = report.iter().find(|r| r.name == "kernel_vs_recurrence").unwrap();
        assert!(!modes.passed);
        assert!(modes.max_error > 0.1);
        assert!(modes.to_string().starts_with("FAIL"));
    }
}
