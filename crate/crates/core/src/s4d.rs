//! Diagonal state space layer.
//!
//! Each of the `H` channels is a single-input single-output continuous LTI
//! system `x' = A x + B u, y = C x + D u` with diagonal complex `A`. Only
//! `N/2` conjugate-representative poles are stored; the real output is
//! `2 Re(...)`, which realizes an `N`-state real system per channel.
//!
//! Parameterization:
//! - `Re(a) = -exp(log_neg_a_re)`, strictly negative for any parameter value;
//! - `dt = exp(log_dt)`, strictly positive;
//! - `B` is the all-ones constant and is not trained.
//!
//! The layer runs either as an FFT convolution with its materialized kernel
//! (training) or as the discrete recurrence (stepping). Discretization is
//! zero-order hold: `a_bar = exp(dt a)`, `b_bar = (a_bar - 1) / a`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::grad::{GradError, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum S4dError {
    #[error("state size must be even and positive, got {0}")]
    OddStateSize(usize),
    #[error("channel count must be positive")]
    NoChannels,
    #[error("invalid dt bounds: need 0 < min_dt < max_dt, got ({min}, {max})")]
    DtBounds { min: f64, max: f64 },
    #[error("frequency tuning factors must be positive, got cfi={cfi}, cfr={cfr}")]
    Tuning { cfi: f64, cfr: f64 },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("state/input shape mismatch: {0}")]
    Shape(String),
    #[error("sequence length must be at least 1")]
    EmptySequence,
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Initialization range of the sampling interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtBounds {
    pub min_dt: f64,
    pub max_dt: f64,
}

impl Default for DtBounds {
    fn default() -> Self {
        Self {
            min_dt: 1e-2,
            max_dt: 1e-1,
        }
    }
}

impl DtBounds {
    pub fn validate(&self) -> Result<(), S4dError> {
        if self.min_dt > 0.0 && self.min_dt < self.max_dt && self.max_dt.is_finite() {
            Ok(())
        } else {
            Err(S4dError::DtBounds {
                min: self.min_dt,
                max: self.max_dt,
            })
        }
    }
}

/// Trainable parameters of one diagonal SSM layer with `channels` channels.
///
/// All pole-indexed tensors are `[channels, state_size / 2]`; `d_skip` and
/// `log_dt` are `[channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalSsm {
    channels: usize,
    state_size: usize,
    pub log_neg_a_re: Tensor,
    pub a_im: Tensor,
    pub c_re: Tensor,
    pub c_im: Tensor,
    pub d_skip: Tensor,
    pub log_dt: Tensor,
    pub dt_bounds: DtBounds,
}

/// Names of the layer's tensors, in [`DiagonalSsm::tensors`] order.
pub const SSM_TENSOR_NAMES: [&str; 6] = ["log_neg_a_re", "a_im", "c_re", "c_im", "d_skip", "log_dt"];

/// S4D-Lin initialization: pole `n` at `-1/2 + i pi n`.
///
/// Random draws, in order from a ChaCha8 stream seeded with `seed`: `log_dt`
/// (log-uniform on the bounds, per channel), then `c` (re, im standard
/// normal, per pole), then `d_skip` (standard normal, per channel).
pub fn init_s4d(
    channels: usize,
    state_size: usize,
    dt_bounds: DtBounds,
    seed: u64,
) -> Result<DiagonalSsm, S4dError> {
    if state_size == 0 || state_size % 2 != 0 {
        return Err(S4dError::OddStateSize(state_size));
    }
    if channels == 0 {
        return Err(S4dError::NoChannels);
    }
    dt_bounds.validate()?;
    let half = state_size / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (dt_bounds.min_dt.ln(), dt_bounds.max_dt.ln());
    let log_dt: Vec<f64> = (0..channels).map(|_| rng.random_range(lo..hi)).collect();
    let mut c_re = Vec::with_capacity(channels * half);
    let mut c_im = Vec::with_capacity(channels * half);
    for _ in 0..channels * half {
        c_re.push(rng.sample::<f64, _>(StandardNormal));
        c_im.push(rng.sample::<f64, _>(StandardNormal));
    }
    let d_skip: Vec<f64> = (0..channels).map(|_| rng.sample(StandardNormal)).collect();
    let log_neg_a_re = vec![0.5f64.ln(); channels * half];
    let a_im: Vec<f64> = (0..channels)
        .flat_map(|_| (0..half).map(|n| PI * n as f64))
        .collect();
    let pole = [channels, half];
    Ok(DiagonalSsm {
        channels,
        state_size,
        log_neg_a_re: Tensor::param(&pole, log_neg_a_re)?,
        a_im: Tensor::param(&pole, a_im)?,
        c_re: Tensor::param(&pole, c_re)?,
        c_im: Tensor::param(&pole, c_im)?,
        d_skip: Tensor::param(&[channels], d_skip)?,
        log_dt: Tensor::param(&[channels], log_dt)?,
        dt_bounds,
    })
}

/// Frequency-tuned initialization: scale `Im(a)` by `cfi` and `Re(a)` by
/// `cfr`. Both factors equal to 1 leave the layer unchanged.
pub fn apply_frequency_tuning(mut params: DiagonalSsm, cfi: f64, cfr: f64) -> Result<DiagonalSsm, S4dError> {
    if !(cfi > 0.0 && cfr > 0.0 && cfi.is_finite() && cfr.is_finite()) {
        return Err(S4dError::Tuning { cfi, cfr });
    }
    if cfi != 1.0 {
        params.a_im.data_mut().iter_mut().for_each(|v| *v *= cfi);
    }
    if cfr != 1.0 {
        let shift = cfr.ln();
        params.log_neg_a_re.data_mut().iter_mut().for_each(|v| *v += shift);
    }
    Ok(params)
}

/// Zero-order-hold discretization of every stored pole, row-major `[H, N/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discretized {
    pub a_bar: Vec<Complex64>,
    pub b_bar: Vec<Complex64>,
}

/// Latent state `x_k` of the discrete recurrence, complex `[batch, H, N/2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteState {
    batch: usize,
    channels: usize,
    half: usize,
    x: Vec<Complex64>,
}

impl DiscreteState {
    pub fn zeros(batch: usize, params: &DiagonalSsm) -> Self {
        let half = params.half();
        Self {
            batch,
            channels: params.channels,
            half,
            x: vec![Complex64::new(0.0, 0.0); batch * params.channels * half],
        }
    }

    pub fn from_values(batch: usize, params: &DiagonalSsm, x: Vec<Complex64>) -> Result<Self, S4dError> {
        let half = params.half();
        if x.len() != batch * params.channels * half {
            return Err(S4dError::Shape(format!(
                "state has {} entries, expected {}",
                x.len(),
                batch * params.channels * half
            )));
        }
        Ok(Self {
            batch,
            channels: params.channels,
            half,
            x,
        })
    }

    pub fn values(&self) -> &[Complex64] {
        &self.x
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn norm(&self) -> f64 {
        self.x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Tape handles for one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct BoundSsm {
    pub log_neg_a_re: Var,
    pub a_im: Var,
    pub c_re: Var,
    pub c_im: Var,
    pub d_skip: Var,
    pub log_dt: Var,
}

impl BoundSsm {
    pub fn vars(&self) -> [Var; 6] {
        [
            self.log_neg_a_re,
            self.a_im,
            self.c_re,
            self.c_im,
            self.d_skip,
            self.log_dt,
        ]
    }
}

impl DiagonalSsm {
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Real states per channel (`N`).
    pub fn state_size(&self) -> usize {
        self.state_size
    }

    /// Stored conjugate-representative poles per channel (`N/2`).
    pub fn half(&self) -> usize {
        self.state_size / 2
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.log_neg_a_re,
            &self.a_im,
            &self.c_re,
            &self.c_im,
            &self.d_skip,
            &self.log_dt,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.log_neg_a_re,
            &mut self.a_im,
            &mut self.c_re,
            &mut self.c_im,
            &mut self.d_skip,
            &mut self.log_dt,
        ]
    }

    /// Rebuild from tensors in [`SSM_TENSOR_NAMES`] order.
    pub fn from_tensors(tensors: [Tensor; 6], dt_bounds: DtBounds) -> Result<Self, S4dError> {
        let [log_neg_a_re, a_im, c_re, c_im, d_skip, log_dt] = tensors;
        let shape = log_neg_a_re.shape().to_vec();
        if shape.len() != 2 {
            return Err(S4dError::Shape(format!("pole tensors must be 2-D, got {shape:?}")));
        }
        let (channels, half) = (shape[0], shape[1]);
        for t in [&a_im, &c_re, &c_im] {
            if t.shape() != shape.as_slice() {
                return Err(S4dError::Shape(format!("pole tensor shape {:?} != {shape:?}", t.shape())));
            }
        }
        for t in [&d_skip, &log_dt] {
            if t.shape() != [channels] {
                return Err(S4dError::Shape(format!("channel tensor shape {:?} != [{channels}]", t.shape())));
            }
        }
        Ok(Self {
            channels,
            state_size: 2 * half,
            log_neg_a_re: log_neg_a_re.with_requires_grad(true),
            a_im: a_im.with_requires_grad(true),
            c_re: c_re.with_requires_grad(true),
            c_im: c_im.with_requires_grad(true),
            d_skip: d_skip.with_requires_grad(true),
            log_dt: log_dt.with_requires_grad(true),
            dt_bounds,
        })
    }

    /// Continuous-time poles `a = -exp(log_neg_a_re) + i a_im`, `[H, N/2]`.
    pub fn poles(&self) -> Vec<Complex64> {
        self.log_neg_a_re
            .data()
            .iter()
            .zip(self.a_im.data())
            .map(|(lr, im)| Complex64::new(-lr.exp(), *im))
            .collect()
    }

    pub fn dt(&self) -> Vec<f64> {
        self.log_dt.data().iter().map(|v| v.exp()).collect()
    }

    /// `Re(a) < 0` for every stored pole.
    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|a| a.re < 0.0)
    }

    pub fn discretize_zoh(&self) -> Discretized {
        let half = self.half();
        let dt = self.dt();
        let (a_bar, b_bar) = self
            .poles()
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let z = a * dt[i / half];
                // exp(z) - 1 without cancellation for small |z|
                let em1 = Complex64::new(
                    z.re.exp_m1() * z.im.cos() - 2.0 * (z.im / 2.0).sin().powi(2),
                    z.re.exp() * z.im.sin(),
                );
                (em1 + 1.0, em1 / a)
            })
            .unzip();
        Discretized { a_bar, b_bar }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundSsm {
        BoundSsm {
            log_neg_a_re: tape.leaf(&self.log_neg_a_re),
            a_im: tape.leaf(&self.a_im),
            c_re: tape.leaf(&self.c_re),
            c_im: tape.leaf(&self.c_im),
            d_skip: tape.leaf(&self.d_skip),
            log_dt: tape.leaf(&self.log_dt),
        }
    }

    /// Convolution kernel `K[h, l] = 2 Re(sum_n c_n a_bar_n^l b_bar_n)`, `[H, L]`.
    pub fn compute_kernel(&self, length: usize) -> Result<Tensor, S4dError> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let k = kernel_on_tape(&mut tape, &bound, length)?;
        Ok(tape.to_tensor(k))
    }

    /// Convolutional mode over `u: [batch, L, H]`.
    pub fn forward_conv(&self, u: &Tensor) -> Result<Tensor, S4dError> {
        if !u.is_finite() {
            return Err(S4dError::NonFiniteInput);
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let uv = tape.constant(u.clone());
        let y = forward_conv_on_tape(&mut tape, &bound, uv, false)?;
        Ok(tape.to_tensor(y))
    }

    /// One step of the discrete recurrence for `u_k: [batch, H]`.
    pub fn forward_recurrent(
        &self,
        state: &DiscreteState,
        u_k: &Tensor,
    ) -> Result<(DiscreteState, Tensor), S4dError> {
        let disc = self.discretize_zoh();
        self.step_with(&disc, state, u_k)
    }

    /// Recurrence step reusing a precomputed discretization.
    pub fn step_with(
        &self,
        disc: &Discretized,
        state: &DiscreteState,
        u_k: &Tensor,
    ) -> Result<(DiscreteState, Tensor), S4dError> {
        let (h, half) = (self.channels, self.half());
        if state.channels != h || state.half != half {
            return Err(S4dError::Shape(format!(
                "state is [{}, {}, {}], layer expects [_, {h}, {half}]",
                state.batch, state.channels, state.half
            )));
        }
        if u_k.shape() != [state.batch, h] {
            return Err(S4dError::Shape(format!(
                "input shape {:?}, expected [{}, {h}]",
                u_k.shape(),
                state.batch
            )));
        }
        let c: Vec<Complex64> = self
            .c_re
            .data()
            .iter()
            .zip(self.c_im.data())
            .map(|(r, i)| Complex64::new(*r, *i))
            .collect();
        let d = self.d_skip.data();
        let mut next = state.x.clone();
        let mut y = vec![0.0; state.batch * h];
        for b in 0..state.batch {
            for ch in 0..h {
                let u = u_k.data()[b * h + ch];
                let mut acc = 0.0;
                for n in 0..half {
                    let p = ch * half + n;
                    let s = (b * h + ch) * half + n;
                    next[s] = disc.a_bar[p] * state.x[s] + disc.b_bar[p] * u;
                    acc += (c[p] * next[s]).re;
                }
                y[b * h + ch] = 2.0 * acc + d[ch] * u;
            }
        }
        let out = Tensor::new(&[state.batch, h], y)?;
        Ok((DiscreteState { x: next, ..*state }, out))
    }

    /// Unrolled recurrence over `u: [batch, L, H]` from a zero state.
    pub fn forward_recurrent_sequence(&self, u: &Tensor) -> Result<Tensor, S4dError> {
        let shape = u.shape();
        if shape.len() != 3 || shape[2] != self.channels {
            return Err(S4dError::Shape(format!("input shape {shape:?}")));
        }
        let (b, l, h) = (shape[0], shape[1], shape[2]);
        let disc = self.discretize_zoh();
        let mut state = DiscreteState::zeros(b, self);
        let mut out = vec![0.0; b * l * h];
        for t in 0..l {
            let mut u_k = Vec::with_capacity(b * h);
            for bi in 0..b {
                u_k.extend_from_slice(&u.data()[(bi * l + t) * h..(bi * l + t + 1) * h]);
            }
            let (next, y) = self.step_with(&disc, &state, &Tensor::new(&[b, h], u_k)?)?;
            state = next;
            for bi in 0..b {
                out[(bi * l + t) * h..(bi * l + t + 1) * h].copy_from_slice(&y.data()[bi * h..(bi + 1) * h]);
            }
        }
        Ok(Tensor::new(shape, out)?)
    }
}

/// Differentiable ZOH discretization: returns `(log a_bar re, log a_bar im,
/// b_bar re, b_bar im)`, each `[H, N/2]`. `log a_bar = dt * a`.
pub fn discretize_on_tape(tape: &mut Tape, p: &BoundSsm) -> Result<[Var; 4], GradError> {
    let h = tape.shape(p.log_dt)[0];
    let dt = tape.exp(p.log_dt)?;
    let dt = tape.reshape(dt, &[h, 1])?;
    let a_mag = tape.exp(p.log_neg_a_re)?;
    let a_re = tape.neg(a_mag)?;
    let x = tape.mul(a_re, dt)?;
    let y = tape.mul(p.a_im, dt)?;
    let ex = tape.exp(x)?;
    let cy = tape.cos(y)?;
    let sy = tape.sin(y)?;
    let abar_re = tape.mul(ex, cy)?;
    let abar_im = tape.mul(ex, sy)?;
    let num_re = tape.shift(abar_re, -1.0)?;
    let num_im = abar_im;
    // (num) / a = num * conj(a) / |a|^2
    let re2 = tape.mul(a_re, a_re)?;
    let im2 = tape.mul(p.a_im, p.a_im)?;
    let den = tape.add(re2, im2)?;
    let t1 = tape.mul(num_re, a_re)?;
    let t2 = tape.mul(num_im, p.a_im)?;
    let br = tape.add(t1, t2)?;
    let br = tape.div(br, den)?;
    let t3 = tape.mul(num_im, a_re)?;
    let t4 = tape.mul(num_re, p.a_im)?;
    let bi = tape.sub(t3, t4)?;
    let bi = tape.div(bi, den)?;
    Ok([x, y, br, bi])
}

/// Differentiable kernel `[H, L]`.
pub fn kernel_on_tape(tape: &mut Tape, p: &BoundSsm, length: usize) -> Result<Var, GradError> {
    if length == 0 {
        return Err(GradError::Domain {
            op: "ssm_kernel",
            detail: "sequence length must be at least 1".into(),
        });
    }
    let [x, y, br, bi] = discretize_on_tape(tape, p)?;
    // w = c * b_bar
    let rr = tape.mul(p.c_re, br)?;
    let ii = tape.mul(p.c_im, bi)?;
    let w_re = tape.sub(rr, ii)?;
    let ri = tape.mul(p.c_re, bi)?;
    let ir = tape.mul(p.c_im, br)?;
    let w_im = tape.add(ri, ir)?;
    tape.ssm_kernel(x, y, w_re, w_im, length)
}

/// Differentiable convolutional mode: `u: [B, L, H]` -> `[B, L, H]`, or the
/// final step only (`[B, H]`) when `last_only`.
pub fn forward_conv_on_tape(tape: &mut Tape, p: &BoundSsm, u: Var, last_only: bool) -> Result<Var, GradError> {
    let shape = tape.shape(u).to_vec();
    if shape.len() != 3 {
        return Err(GradError::shape("ssm_forward", &shape, tape.shape(p.d_skip)));
    }
    let (b, l, h) = (shape[0], shape[1], shape[2]);
    let k = kernel_on_tape(tape, p, l)?;
    if last_only {
        let y = tape.causal_conv_last(k, u)?;
        let u_last = tape.slice(u, 1, l - 1, l)?;
        let u_last = tape.reshape(u_last, &[b, h])?;
        let skip = tape.mul(u_last, p.d_skip)?;
        tape.add(y, skip)
    } else {
        let y = tape.causal_conv(k, u)?;
        let skip = tape.mul(u, p.d_skip)?;
        tape.add(y, skip)
    }
}
