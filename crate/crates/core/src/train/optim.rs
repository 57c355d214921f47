use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::grad::Tensor;
use crate::model::{DeepSsmModel, ParamKind};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments per parameter tensor, in model parameter order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    /// Completed optimizer steps.
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &DeepSsmModel) -> Self {
        let sizes: Vec<usize> = model.parameters().iter().map(|t| t.numel()).collect();
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One Adam update of `param` from its stored gradient.
///
/// `step` is the 1-based step used for bias correction. Decoupled weight
/// decay multiplies the parameter by `1 - lr * decay` before the Adam delta
/// is applied.
pub fn adam_step(
    param: &mut Tensor,
    name: &str,
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    decay: f64,
) -> Result<(), TrainError> {
    let grad = param
        .grad()
        .ok_or_else(|| TrainError::MissingGradient(name.to_string()))?
        .to_vec();
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient(name.to_string()));
    }
    let c1 = 1.0 - BETA1.powi(step as i32);
    let c2 = 1.0 - BETA2.powi(step as i32);
    let shrink = 1.0 - lr * decay;
    for (i, p) in param.data_mut().iter_mut().enumerate() {
        let g = grad[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p = *p * shrink - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Rescale all gradients so their joint Euclidean norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let total = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total.is_finite() {
        let scale = max_norm / total;
        for p in params.iter_mut() {
            if let Some(g) = p.grad() {
                let scaled = g.iter().map(|v| v * scale).collect();
                p.set_grad(scaled).expect("same length");
            }
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupId {
    /// Log sampling intervals: `lr_dt`, no decay.
    A,
    /// SSM poles, residues and skip terms: `lr`, decay `wd`.
    B,
    /// Everything else: `lr`, decay `weight_decay`.
    C,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub id: GroupId,
    pub weight_decay: f64,
    /// Indices into the model's parameter list.
    pub members: Vec<usize>,
}

pub fn make_param_groups(model: &DeepSsmModel, cfg: &TrainConfig) -> Result<Vec<ParamGroup>, TrainError> {
    let named = model.named_parameters();
    let mut groups = vec![
        ParamGroup {
            id: GroupId::A,
            weight_decay: 0.0,
            members: Vec::new(),
        },
        ParamGroup {
            id: GroupId::B,
            weight_decay: cfg.wd,
            members: Vec::new(),
        },
        ParamGroup {
            id: GroupId::C,
            weight_decay: cfg.weight_decay,
            members: Vec::new(),
        },
    ];
    for (i, (_, kind, _)) in named.iter().enumerate() {
        let g = match kind {
            ParamKind::SsmDt => 0,
            ParamKind::SsmInternal => 1,
            ParamKind::Dense => 2,
        };
        groups[g].members.push(i);
    }
    let mut seen = vec![0usize; named.len()];
    for g in &groups {
        for &i in &g.members {
            seen[i] += 1;
        }
    }
    if let Some(i) = seen.iter().position(|&c| c == 0) {
        return Err(TrainError::OrphanParameter(named[i].0.clone()));
    }
    if let Some(i) = seen.iter().position(|&c| c > 1) {
        return Err(TrainError::DuplicateParameter(named[i].0.clone()));
    }
    Ok(groups)
}

/// Learning rates of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    /// Groups B and C.
    pub base: f64,
    /// Group A.
    pub dt: f64,
}

impl LearningRates {
    pub fn for_group(&self, id: GroupId) -> f64 {
        match id {
            GroupId::A => self.dt,
            GroupId::B | GroupId::C => self.base,
        }
    }
}

/// Cosine annealing from `lr` to `lr_min` over `epochs_scheduler` epochs;
/// epochs past the horizon stay at the floor. Group A follows the same
/// factor between `lr_dt` and its floor `lr_dt * lr_min / lr`.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> LearningRates {
    let progress = (epoch.min(cfg.epochs_scheduler)) as f64 / cfg.epochs_scheduler as f64;
    let factor = 0.5 * (1.0 + (PI * progress).cos());
    let base = cfg.lr_min + (cfg.lr - cfg.lr_min) * factor;
    let dt_floor = cfg.lr_dt * cfg.lr_min / cfg.lr;
    LearningRates {
        base,
        dt: dt_floor + (cfg.lr_dt - dt_floor) * factor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    fn scalar_param(value: f64, grad: f64) -> Tensor {
        let mut t = Tensor::param(&[1], vec![value]).unwrap();
        t.set_grad(vec![grad]).unwrap();
        t
    }

    /// Textbook Adam written out for a single scalar.
    fn reference_adam(p0: f64, grads: &[f64], lr: f64, decay: f64) -> f64 {
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as f64;
            p *= 1.0 - lr * decay;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powf(t));
            let vh = v / (1.0 - 0.999f64.powf(t));
            p -= lr * mh / (vh.sqrt() + 1e-8);
        }
        p
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = scalar_param(1.5, 0.0);
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_step(&mut p, "p", &mut m, &mut v, 1, 0.1, 0.0).unwrap();
        assert_eq!(p.data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_param(0.0, 1.0);
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_step(&mut p, "p", &mut m, &mut v, 1, 0.1, 0.0).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_scales_parameter() {
        let mut p = scalar_param(2.0, 0.0);
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        adam_step(&mut p, "p", &mut m, &mut v, 1, 0.01, 0.03).unwrap();
        assert_eq!(p.data()[0], 2.0 * (1.0 - 0.01 * 0.03));
    }

    #[test]
    fn matches_reference_over_many_steps() {
        let grads = [0.3, -1.2, 0.7, 2.0, -0.1, 0.05];
        let mut p = scalar_param(0.4, 0.0);
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for (k, g) in grads.iter().enumerate() {
            p.set_grad(vec![*g]).unwrap();
            adam_step(&mut p, "p", &mut m, &mut v, k as u64 + 1, 0.05, 0.02).unwrap();
        }
        assert!((p.data()[0] - reference_adam(0.4, &grads, 0.05, 0.02)).abs() < 1e-14);
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let mut p = scalar_param(0.0, f64::NAN);
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        assert_eq!(
            adam_step(&mut p, "blocks.0.ssm.c_re", &mut m, &mut v, 1, 0.1, 0.0).unwrap_err(),
            TrainError::NonFiniteGradient("blocks.0.ssm.c_re".into())
        );
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut a = scalar_param(0.0, 3.0);
        let mut b = scalar_param(0.0, 4.0);
        let norm = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(norm, 5.0);
        assert!((a.grad().unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((b.grad().unwrap()[0] - 0.8).abs() < 1e-15);
        let norm = clip_grad_norm(&mut [&mut a, &mut b], 10.0);
        assert!((norm - 1.0).abs() < 1e-15);
        assert!((a.grad().unwrap()[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        let start = cosine_lr(0, &cfg);
        assert_eq!(start.base, 4e-4);
        assert!((start.dt - 1e-3).abs() < 1e-18);
        let end = cosine_lr(50, &cfg);
        assert!((end.base - 4e-5).abs() < 1e-18);
        assert!((end.dt - 1e-4).abs() < 1e-18);
        let mid = cosine_lr(25, &cfg);
        assert!((mid.base - 2.2e-4).abs() < 1e-15);
        assert!((mid.dt - 5.5e-4).abs() < 1e-15);
        assert_eq!(cosine_lr(70, &cfg), end);
    }

    #[test]
    fn schedule_is_monotone() {
        let cfg = TrainConfig::default();
        let rates: Vec<f64> = (0..=50).map(|e| cosine_lr(e, &cfg).base).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn groups_partition_parameters() {
        let model = build_model(&ModelConfig::default(), 0).unwrap();
        let groups = make_param_groups(&model, &TrainConfig::default()).unwrap();
        assert_eq!(groups.len(), 3);
        let total: usize = groups.iter().map(|g| g.members.len()).sum();
        assert_eq!(total, model.parameters().len());
        let scalars: usize = groups
            .iter()
            .flat_map(|g| g.members.iter())
            .map(|&i| model.parameters()[i].numel())
            .sum();
        assert_eq!(scalars, model.parameter_count());
        assert_eq!(groups[0].members.len(), 6);
        assert_eq!((groups[0].weight_decay, groups[1].weight_decay, groups[2].weight_decay), (0.0, 2e-2, 3e-2));
    }

    #[test]
    fn single_layer_has_one_dt_tensor_and_stable_groups() {
        let cfg = ModelConfig {
            n_layer: 1,
            d_model: 4,
            d_state: 4,
            lookback: 8,
            input_dim: 3,
            ..ModelConfig::default()
        };
        let a = make_param_groups(&build_model(&cfg, 5).unwrap(), &TrainConfig::default()).unwrap();
        let b = make_param_groups(&build_model(&cfg, 5).unwrap(), &TrainConfig::default()).unwrap();
        assert_eq!(a[0].members.len(), 1);
        assert_eq!(a, b);
    }
}
