//! Deep sequence-to-one network built from stacked diagonal SSM blocks.
//!
//! ```text
//! x [B, L, input_dim]
//!   -> encoder (affine, input_dim -> H)
//!   -> n_layer x { LayerNorm -> SSM -> GELU -> dropout -> affine H -> 2H -> GLU -> + residual }
//!   -> final LayerNorm -> features at the last time step -> decoder (affine, H -> 1)
//! ```
//!
//! The last block only needs its final time step, so its SSM evaluates the
//! convolution at `t = L - 1` alone and its output map runs on `[B, H]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{GradError, Tape, Tensor, Var};
use crate::s4d::{self, apply_frequency_tuning, init_s4d, BoundSsm, DiagonalSsm, DtBounds, S4dError};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("input shape {got:?} does not match expected [batch, {lookback}, {input_dim}]")]
    InputShape {
        got: Vec<usize>,
        lookback: usize,
        input_dim: usize,
    },
    #[error("input batch contains non-finite values")]
    NonFiniteInput,
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Ssm(#[from] S4dError),
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub n_layer: usize,
    pub dropout: f64,
    pub cfi: f64,
    pub cfr: f64,
    pub min_dt: f64,
    pub max_dt: f64,
    pub input_dim: usize,
    pub lookback: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            d_state: 128,
            n_layer: 6,
            dropout: 0.12,
            cfi: 10.0,
            cfr: 10.0,
            min_dt: 1e-2,
            max_dt: 1e-1,
            input_dim: 32,
            lookback: 365,
        }
    }
}

impl ModelConfig {
    /// Basic S4D: frequency tuning disabled.
    pub fn basic_s4d(mut self) -> Self {
        self.cfi = 1.0;
        self.cfr = 1.0;
        self
    }

    pub fn dt_bounds(&self) -> DtBounds {
        DtBounds {
            min_dt: self.min_dt,
            max_dt: self.max_dt,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut problems = Vec::new();
        if self.d_model == 0 {
            problems.push("d_model must be positive".to_string());
        }
        if self.d_state == 0 || self.d_state % 2 != 0 {
            problems.push(format!("d_state must be even and positive, got {}", self.d_state));
        }
        if self.n_layer == 0 {
            problems.push("n_layer must be positive".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.cfi > 0.0 && self.cfi.is_finite()) {
            problems.push(format!("cfi must be positive, got {}", self.cfi));
        }
        if !(self.cfr > 0.0 && self.cfr.is_finite()) {
            problems.push(format!("cfr must be positive, got {}", self.cfr));
        }
        if self.dt_bounds().validate().is_err() {
            problems.push(format!(
                "dt bounds need 0 < min_dt < max_dt, got ({}, {})",
                self.min_dt, self.max_dt
            ));
        }
        if self.input_dim == 0 {
            problems.push("input_dim must be positive".to_string());
        }
        if self.lookback == 0 {
            problems.push("lookback must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(problems))
        }
    }

    /// Number of scalar parameters of a model built from this config.
    ///
    /// `input_dim*H + H` (encoder) + `n_layer * (2H^2 + 2HN + 6H)` (blocks:
    /// norm 2H, SSM 2HN + 2H, output map 2H^2 + 2H) + `2H` (final norm)
    /// + `H + 1` (decoder).
    pub fn parameter_count(&self) -> usize {
        let (h, n) = (self.d_model, self.d_state);
        self.input_dim * h + h + self.n_layer * (2 * h * h + 2 * h * n + 6 * h) + 2 * h + h + 1
    }
}

/// What a parameter tensor is, for optimizer grouping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Log sampling interval of an SSM layer.
    SsmDt,
    /// Poles, output residues `C`, or skip `D` of an SSM layer.
    SsmInternal,
    /// Encoder, decoder, output maps and normalization.
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub norm_gamma: Tensor,
    pub norm_beta: Tensor,
    pub ssm: DiagonalSsm,
    /// `[H, 2H]`
    pub out_weight: Tensor,
    /// `[2H]`
    pub out_bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeepSsmModel {
    config: ModelConfig,
    /// `[input_dim, H]`
    pub encoder_weight: Tensor,
    pub encoder_bias: Tensor,
    pub blocks: Vec<Block>,
    pub norm_gamma: Tensor,
    pub norm_beta: Tensor,
    /// `[H, 1]`
    pub decoder_weight: Tensor,
    pub decoder_bias: Tensor,
}

/// Evaluation or training forward pass. Training draws dropout masks from a
/// stream seeded with `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Result<Tensor, GradError> {
    let n = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.random_range(-bound..bound)).collect())
}

fn ones(shape: &[usize]) -> Tensor {
    Tensor::full(shape, 1.0).with_requires_grad(true)
}

fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape).with_requires_grad(true)
}

/// Build a model with freshly initialized parameters.
///
/// Affine maps use `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and
/// biases. SSM layers use S4D-Lin followed by frequency tuning with the
/// config's `(cfi, cfr)`. Every random draw comes from `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<DeepSsmModel, ModelError> {
    config.validate()?;
    let h = config.d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc_bound = 1.0 / (config.input_dim as f64).sqrt();
    let encoder_weight = uniform(&mut rng, &[config.input_dim, h], enc_bound)?;
    let encoder_bias = uniform(&mut rng, &[h], enc_bound)?;
    let hidden_bound = 1.0 / (h as f64).sqrt();
    let mut blocks = Vec::with_capacity(config.n_layer);
    for _ in 0..config.n_layer {
        let ssm_seed = rng.random::<u64>();
        let ssm = init_s4d(h, config.d_state, config.dt_bounds(), ssm_seed)?;
        let ssm = apply_frequency_tuning(ssm, config.cfi, config.cfr)?;
        blocks.push(Block {
            norm_gamma: ones(&[h]),
            norm_beta: zeros(&[h]),
            ssm,
            out_weight: uniform(&mut rng, &[h, 2 * h], hidden_bound)?,
            out_bias: uniform(&mut rng, &[2 * h], hidden_bound)?,
        });
    }
    let decoder_weight = uniform(&mut rng, &[h, 1], hidden_bound)?;
    let decoder_bias = uniform(&mut rng, &[1], hidden_bound)?;
    Ok(DeepSsmModel {
        config: config.clone(),
        encoder_weight,
        encoder_bias,
        blocks,
        norm_gamma: ones(&[h]),
        norm_beta: zeros(&[h]),
        decoder_weight,
        decoder_bias,
    })
}

/// Tape handles for every model parameter, in [`DeepSsmModel::named_parameters`] order.
#[derive(Clone, Debug)]
pub struct BoundModel {
    vars: Vec<Var>,
}

impl BoundModel {
    /// Handles must follow [`DeepSsmModel::named_parameters`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

const BLOCK_TENSORS: usize = 4 + s4d::SSM_TENSOR_NAMES.len();

impl DeepSsmModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.numel()).sum()
    }

    /// All parameter tensors with stable dotted names and optimizer kind.
    pub fn named_parameters(&self) -> Vec<(String, ParamKind, &Tensor)> {
        let mut out = vec![
            ("encoder.weight".to_string(), ParamKind::Dense, &self.encoder_weight),
            ("encoder.bias".to_string(), ParamKind::Dense, &self.encoder_bias),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.norm.gamma"), ParamKind::Dense, &b.norm_gamma));
            out.push((format!("blocks.{i}.norm.beta"), ParamKind::Dense, &b.norm_beta));
            for (name, t) in s4d::SSM_TENSOR_NAMES.iter().zip(b.ssm.tensors()) {
                let kind = if *name == "log_dt" {
                    ParamKind::SsmDt
                } else {
                    ParamKind::SsmInternal
                };
                out.push((format!("blocks.{i}.ssm.{name}"), kind, t));
            }
            out.push((format!("blocks.{i}.out.weight"), ParamKind::Dense, &b.out_weight));
            out.push((format!("blocks.{i}.out.bias"), ParamKind::Dense, &b.out_bias));
        }
        out.push(("norm.gamma".to_string(), ParamKind::Dense, &self.norm_gamma));
        out.push(("norm.beta".to_string(), ParamKind::Dense, &self.norm_beta));
        out.push(("decoder.weight".to_string(), ParamKind::Dense, &self.decoder_weight));
        out.push(("decoder.bias".to_string(), ParamKind::Dense, &self.decoder_bias));
        out
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.named_parameters().into_iter().map(|(_, _, t)| t).collect()
    }

    /// Mutable parameters in [`Self::named_parameters`] order.
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = vec![&mut self.encoder_weight, &mut self.encoder_bias];
        for b in &mut self.blocks {
            out.push(&mut b.norm_gamma);
            out.push(&mut b.norm_beta);
            out.extend(b.ssm.tensors_mut());
            out.push(&mut b.out_weight);
            out.push(&mut b.out_bias);
        }
        out.push(&mut self.norm_gamma);
        out.push(&mut self.norm_beta);
        out.push(&mut self.decoder_weight);
        out.push(&mut self.decoder_bias);
        out
    }

    /// Replace every parameter's values, in [`Self::named_parameters`] order.
    pub fn load_parameters(&mut self, values: &[Vec<f64>]) -> Result<(), ModelError> {
        let mut params = self.parameters_mut();
        if params.len() != values.len() {
            return Err(ModelError::Layout(format!(
                "{} tensors supplied, model has {}",
                values.len(),
                params.len()
            )));
        }
        for (i, (p, v)) in params.iter_mut().zip(values).enumerate() {
            if p.numel() != v.len() {
                return Err(ModelError::Layout(format!(
                    "tensor {i} has {} values, expected {}",
                    v.len(),
                    p.numel()
                )));
            }
            p.data_mut().copy_from_slice(v);
        }
        Ok(())
    }

    pub fn is_stable(&self) -> bool {
        self.blocks.iter().all(|b| b.ssm.is_stable())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            vars: self.parameters().into_iter().map(|t| tape.leaf(t)).collect(),
        }
    }

    /// Copy leaf gradients from `tape` into the parameter tensors.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &BoundModel) -> Result<(), ModelError> {
        for (p, v) in self.parameters_mut().into_iter().zip(&bound.vars) {
            match tape.grad(*v) {
                Some(g) => p.set_grad(g.to_vec())?,
                None => p.set_grad(vec![0.0; p.numel()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<(), ModelError> {
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.lookback || shape[2] != c.input_dim || shape[0] == 0 {
            return Err(ModelError::InputShape {
                got: shape.to_vec(),
                lookback: c.lookback,
                input_dim: c.input_dim,
            });
        }
        Ok(())
    }

    /// Predictions `[B, 1]` in normalized-discharge units.
    pub fn forward(&self, inputs: &Tensor, mode: Mode) -> Result<Tensor, ModelError> {
        self.check_input(inputs.shape())?;
        if !inputs.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(inputs.clone());
        let y = self.forward_on_tape(&mut tape, &bound, x, mode)?;
        Ok(tape.to_tensor(y))
    }

    /// Differentiable forward pass over an input already on the tape.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        inputs: Var,
        mode: Mode,
    ) -> Result<Var, ModelError> {
        self.check_input(tape.shape(inputs))?;
        if bound.vars.len() != 6 + BLOCK_TENSORS * self.blocks.len() {
            return Err(ModelError::Layout("bound parameters do not match the model".into()));
        }
        let batch = tape.shape(inputs)[0];
        let h = self.config.d_model;
        let mut dropout_rng = match mode {
            Mode::Train { seed } if self.config.dropout > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };
        let v = &bound.vars;
        let enc = tape.matmul(inputs, v[0])?;
        let mut x = tape.add(enc, v[1])?;
        let n_blocks = self.blocks.len();
        for i in 0..n_blocks {
            let base = 2 + i * BLOCK_TENSORS;
            let last = i + 1 == n_blocks;
            let ssm = BoundSsm {
                log_neg_a_re: v[base + 2],
                a_im: v[base + 3],
                c_re: v[base + 4],
                c_im: v[base + 5],
                d_skip: v[base + 6],
                log_dt: v[base + 7],
            };
            let z = tape.layer_norm(x, v[base], v[base + 1], LN_EPS)?;
            let z = s4d::forward_conv_on_tape(tape, &ssm, z, last)?;
            let z = tape.gelu(z)?;
            let z = match dropout_rng.as_mut() {
                Some(rng) => dropout(tape, z, self.config.dropout, rng)?,
                None => z,
            };
            let z = tape.matmul(z, v[base + 8])?;
            let z = tape.add(z, v[base + 9])?;
            let z = tape.glu(z)?;
            let residual = if last {
                let l = tape.shape(x)[1];
                let tail = tape.slice(x, 1, l - 1, l)?;
                tape.reshape(tail, &[batch, h])?
            } else {
                x
            };
            x = tape.add(z, residual)?;
        }
        let k = 2 + n_blocks * BLOCK_TENSORS;
        let x = tape.layer_norm(x, v[k], v[k + 1], LN_EPS)?;
        let y = tape.matmul(x, v[k + 2])?;
        Ok(tape.add(y, v[k + 3])?)
    }
}

/// Inverted dropout with a constant keep mask scaled by `1 / (1 - p)`.
fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Result<Var, GradError> {
    let shape = tape.shape(x).to_vec();
    let n = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let mask = tape.constant(Tensor::new(&shape, mask)?);
    tape.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_diff_check;
    use rand_distr::StandardNormal;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 4,
            d_state: 4,
            n_layer: 2,
            dropout: 0.0,
            input_dim: 3,
            lookback: 8,
            ..ModelConfig::default()
        }
    }

    fn random_batch(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn default_hyperparameters() {
        let c = ModelConfig::default();
        assert_eq!((c.d_model, c.d_state, c.n_layer), (128, 128, 6));
        assert_eq!((c.cfi, c.cfr, c.dropout), (10.0, 10.0, 0.12));
        assert_eq!((c.min_dt, c.max_dt), (1e-2, 1e-1));
        assert_eq!((c.input_dim, c.lookback), (32, 365));
    }

    #[test]
    fn default_model_shape() {
        let m = build_model(&ModelConfig::default(), 0).unwrap();
        assert_eq!(m.blocks.len(), 6);
        for b in &m.blocks {
            assert_eq!((b.ssm.channels(), b.ssm.half()), (128, 64));
        }
        assert_eq!(m.parameter_count(), ModelConfig::default().parameter_count());
    }

    #[test]
    fn parameter_count_formula() {
        for (h, n, layers, input) in [(4, 4, 2, 3), (8, 6, 1, 5), (16, 2, 3, 32)] {
            let c = ModelConfig {
                d_model: h,
                d_state: n,
                n_layer: layers,
                input_dim: input,
                ..tiny()
            };
            assert_eq!(build_model(&c, 1).unwrap().parameter_count(), c.parameter_count());
        }
    }

    #[test]
    fn invalid_config_lists_every_violation() {
        let c = ModelConfig {
            d_state: 3,
            dropout: 1.0,
            cfi: 0.0,
            ..tiny()
        };
        match build_model(&c, 0).unwrap_err() {
            ModelError::InvalidConfig(v) => assert_eq!(v.len(), 3, "{v:?}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn basic_variant_keeps_lin_poles() {
        let c = tiny().basic_s4d();
        let m = build_model(&c, 3).unwrap();
        for b in &m.blocks {
            let fresh = init_s4d(4, 4, c.dt_bounds(), 0).unwrap();
            assert_eq!(b.ssm.poles(), fresh.poles());
        }
        let tuned = build_model(&tiny(), 3).unwrap();
        assert!((tuned.blocks[0].ssm.poles()[1].im - 10.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn construction_is_deterministic() {
        let a = build_model(&tiny(), 9).unwrap();
        let b = build_model(&tiny(), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_model(&tiny(), 10).unwrap());
    }

    #[test]
    fn zero_input_with_zero_biases_predicts_zero() {
        let mut m = build_model(&tiny(), 2).unwrap();
        m.encoder_bias.data_mut().fill(0.0);
        m.decoder_bias.data_mut().fill(0.0);
        for b in &mut m.blocks {
            b.out_bias.data_mut().fill(0.0);
        }
        let y = m.forward(&Tensor::zeros(&[2, 8, 3]), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert!(y.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn duplicate_rows_and_repeated_calls_agree() {
        let m = build_model(&tiny(), 4).unwrap();
        let row = random_batch(&[1, 8, 3], 5);
        let mut data = row.data().to_vec();
        data.extend_from_slice(row.data());
        let batch = Tensor::new(&[2, 8, 3], data).unwrap();
        let y1 = m.forward(&batch, Mode::Eval).unwrap();
        let y2 = m.forward(&batch, Mode::Eval).unwrap();
        assert_eq!(y1.data()[0], y1.data()[1]);
        assert_eq!(y1, y2);
    }

    #[test]
    fn dropout_only_in_training() {
        let c = ModelConfig { dropout: 0.5, ..tiny() };
        let m = build_model(&c, 4).unwrap();
        let x = random_batch(&[2, 8, 3], 6);
        let eval = m.forward(&x, Mode::Eval).unwrap();
        let t1 = m.forward(&x, Mode::Train { seed: 1 }).unwrap();
        let t1b = m.forward(&x, Mode::Train { seed: 1 }).unwrap();
        let t2 = m.forward(&x, Mode::Train { seed: 2 }).unwrap();
        assert_eq!(t1, t1b);
        assert_ne!(t1, eval);
        assert_ne!(t1, t2);
    }

    #[test]
    fn rejects_bad_input() {
        let m = build_model(&tiny(), 4).unwrap();
        assert!(matches!(
            m.forward(&Tensor::zeros(&[2, 7, 3]), Mode::Eval),
            Err(ModelError::InputShape { .. })
        ));
        let mut x = Tensor::zeros(&[1, 8, 3]);
        x.data_mut()[5] = f64::INFINITY;
        assert_eq!(m.forward(&x, Mode::Eval).unwrap_err(), ModelError::NonFiniteInput);
    }

    #[test]
    fn output_depends_on_every_time_step() {
        let m = build_model(&tiny(), 7).unwrap();
        let x = random_batch(&[1, 8, 3], 8).with_requires_grad(true);
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape);
        let xv = tape.leaf(&x);
        let y = m.forward_on_tape(&mut tape, &bound, xv, Mode::Eval).unwrap();
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(xv).unwrap();
        for t in 0..8 {
            let step = g[t * 3..(t + 1) * 3].iter().map(|v| v.abs()).sum::<f64>();
            assert!(step > 0.0, "no dependence on step {t}");
        }
        let mut bumped = x.clone();
        bumped.data_mut()[7 * 3] += 0.1;
        assert_ne!(m.forward(&x, Mode::Eval).unwrap(), m.forward(&bumped, Mode::Eval).unwrap());
    }

    #[test]
    fn mse_gradient_through_the_model() {
        let m = build_model(&tiny(), 11).unwrap();
        let x = random_batch(&[2, 8, 3], 12);
        let target = Tensor::new(&[2, 1], vec![0.3, -0.7]).unwrap();
        let params: Vec<Tensor> = m.parameters().into_iter().cloned().collect();
        let err = finite_diff_check(
            |tape, vars| {
                let bound = BoundModel { vars: vars.to_vec() };
                let xv = tape.constant(x.clone());
                let y = m
                    .forward_on_tape(tape, &bound, xv, Mode::Eval)
                    .map_err(|e| GradError::NonFinite(e.to_string()))?;
                let t = tape.constant(target.clone());
                let d = tape.sub(y, t)?;
                let sq = tape.mul(d, d)?;
                tape.mean(sq)
            },
            &params,
            1e-4,
        )
        .unwrap();
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn parameter_names_are_unique_and_kinds_cover_ssm() {
        let m = build_model(&ModelConfig { n_layer: 3, ..tiny() }, 0).unwrap();
        let named = m.named_parameters();
        let names: std::collections::HashSet<_> = named.iter().map(|(n, _, _)| n.clone()).collect();
        assert_eq!(names.len(), named.len());
        assert_eq!(named.iter().filter(|(_, k, _)| *k == ParamKind::SsmDt).count(), 3);
        assert_eq!(named.iter().filter(|(_, k, _)| *k == ParamKind::SsmInternal).count(), 15);
    }

    #[test]
    fn load_parameters_round_trip() {
        let a = build_model(&tiny(), 1).unwrap();
        let mut b = build_model(&tiny(), 2).unwrap();
        let values: Vec<Vec<f64>> = a.parameters().iter().map(|t| t.data().to_vec()).collect();
        b.load_parameters(&values).unwrap();
        assert_eq!(a, b);
        assert!(b.load_parameters(&values[1..]).is_err());
    }
}
