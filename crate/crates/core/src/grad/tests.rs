use proptest::prelude::*;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn p(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::param(shape, data.to_vec()).unwrap()
}

/// Deterministic, irregular test values in roughly [-1.5, 1.5].
fn wobble(n: usize, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| 1.5 * ((i as f64 * 1.37 + phase).sin() * (i as f64 * 0.61 + 2.0 * phase).cos()))
        .collect()
}

#[test]
fn add_elementwise() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.constant(t(&[2], &[3.0, 4.0]));
    let c = tape.add(a, b).unwrap();
    assert_eq!(tape.data(c), &[4.0, 6.0]);
}

#[test]
fn exp_of_zero_is_one() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[1], &[0.0]));
    let c = tape.exp(a).unwrap();
    assert_eq!(tape.data(c), &[1.0]);
}

#[test]
fn matmul_of_ones_sums_the_contraction() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::full(&[2, 3], 1.0));
    let b = tape.constant(Tensor::full(&[3, 1], 1.0));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.shape(c), &[2, 1]);
    assert_eq!(tape.data(c), &[3.0, 3.0]);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2]));
    let err = tape.add(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    let c = tape.constant(Tensor::zeros(&[4, 1]));
    assert!(matches!(tape.matmul(a, c), Err(GradError::Shape { op: "matmul", .. })));
}

#[test]
fn domain_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 0.0]));
    assert!(matches!(tape.log(a), Err(GradError::Domain { op: "log", .. })));
    let one = tape.scalar(1.0);
    assert!(matches!(tape.div(one, a), Err(GradError::Domain { op: "div", .. })));
    let neg = tape.constant(t(&[1], &[-2.0]));
    assert!(matches!(tape.powf(neg, 0.5), Err(GradError::Domain { .. })));
}

#[test]
fn backward_of_sum_of_squares() {
    let mut tape = Tape::new();
    let x = tape.leaf(&p(&[3], &[1.0, 2.0, 3.0]));
    let sq = tape.mul(x, x).unwrap();
    let root = tape.sum(sq).unwrap();
    tape.backward(root).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_of_exp_at_zero() {
    let mut tape = Tape::new();
    let x = tape.leaf(&p(&[], &[0.0]));
    let y = tape.exp(x).unwrap();
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0]);
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut tape = Tape::new();
    let x = tape.leaf(&p(&[2], &[1.0, 2.0]));
    let y = tape.exp(x).unwrap();
    assert!(matches!(tape.backward(y), Err(GradError::NotScalar { .. })));
}

#[test]
fn fan_out_doubles_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(&p(&[2], &[0.3, -1.2]));
    let once = tape.sum(x).unwrap();
    tape.backward(once).unwrap();
    let single = tape.grad(x).unwrap().to_vec();

    let mut tape = Tape::new();
    let x = tape.leaf(&p(&[2], &[0.3, -1.2]));
    let twice = tape.add(x, x).unwrap();
    let root = tape.sum(twice).unwrap();
    tape.backward(root).unwrap();
    let doubled: Vec<f64> = single.iter().map(|g| 2.0 * g).collect();
    assert_eq!(tape.grad(x).unwrap(), doubled.as_slice());
}

#[test]
fn three_op_chain_matches_finite_differences() {
    let x = p(&[4], &[0.2, -0.7, 1.1, 0.05]);
    let err = finite_diff_check(
        |tape, v| {
            let a = tape.tanh(v[0])?;
            let b = tape.exp(a)?;
            let c = tape.mul(b, v[0])?;
            tape.sum(c)
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn quadratic_form_check() {
    let m = t(&[3, 3], &[2.0, 0.5, 0.1, 0.5, 1.0, -0.3, 0.1, -0.3, 3.0]);
    let x = p(&[3, 1], &[0.4, -1.0, 0.7]);
    let err = finite_diff_check(
        |tape, v| {
            let mv = tape.constant(m.clone());
            let mx = tape.matmul(mv, v[0])?;
            let q = tape.mul(v[0], mx)?;
            tape.sum(q)
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn constant_function_has_zero_error() {
    let x = p(&[3], &[1.0, 2.0, 3.0]);
    let err = finite_diff_check(|tape, _| Ok(tape.scalar(4.0)), &[x], 1e-5).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn finite_diff_check_rejects_non_finite_output() {
    let x = p(&[1], &[1000.0]);
    let res = finite_diff_check(
        |tape, v| {
            let e = tape.exp(v[0])?;
            tape.sum(e)
        },
        &[x],
        1e-5,
    );
    assert!(matches!(res, Err(GradError::NonFinite(_))));
}

/// Weighted sum so that every output element carries a distinct cotangent.
fn weighted_sum(tape: &mut Tape, v: Var) -> Result<Var, GradError> {
    let shape = tape.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w = tape.constant(Tensor::new(&shape, wobble(n, 0.9)).unwrap());
    let prod = tape.mul(v, w)?;
    tape.sum(prod)
}

fn check_unary(f: impl Fn(&mut Tape, Var) -> Result<Var, GradError>, data: Vec<f64>) {
    let n = data.len();
    let x = Tensor::param(&[n], data).unwrap();
    let err = finite_diff_check(
        |tape, v| {
            let y = f(tape, v[0])?;
            weighted_sum(tape, y)
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn every_unary_primitive_passes_finite_differences() {
    let signed = wobble(6, 0.3);
    let positive: Vec<f64> = signed.iter().map(|v| v.abs() + 0.5).collect();
    check_unary(|t, v| t.exp(v), signed.clone());
    check_unary(|t, v| t.log(v), positive.clone());
    check_unary(|t, v| t.neg(v), signed.clone());
    check_unary(|t, v| t.sigmoid(v), signed.clone());
    check_unary(|t, v| t.tanh(v), signed.clone());
    check_unary(|t, v| t.gelu(v), signed.clone());
    check_unary(|t, v| t.sin(v), signed.clone());
    check_unary(|t, v| t.cos(v), signed.clone());
    check_unary(|t, v| t.powf(v, 2.5), positive.clone());
    check_unary(|t, v| t.powf(v, 3.0), signed.clone());
}

fn check_params(params: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var, GradError>) {
    let err = finite_diff_check(
        |tape, v| {
            let y = f(tape, v)?;
            weighted_sum(tape, y)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn every_binary_primitive_passes_finite_differences() {
    let a = p(&[2, 3], &wobble(6, 0.1));
    let b = p(&[3], &wobble(3, 1.7));
    let positive_b = p(&[3], &[0.8, -1.3, 1.9]);
    check_params(vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
    check_params(vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]));
    check_params(vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
    check_params(vec![a.clone(), positive_b], |t, v| t.div(v[0], v[1]));
    let m = p(&[3, 2], &wobble(6, 2.3));
    check_params(vec![a.clone(), m], |t, v| t.matmul(v[0], v[1]));
    let batched = p(&[2, 2, 3], &wobble(12, 0.4));
    let m = p(&[3, 4], &wobble(12, 1.1));
    check_params(vec![batched, m], |t, v| t.matmul(v[0], v[1]));
}

#[test]
fn every_shape_primitive_passes_finite_differences() {
    let a = p(&[2, 3, 4], &wobble(24, 0.5));
    check_params(vec![a.clone()], |t, v| t.sum_axis(v[0], 1));
    check_params(vec![a.clone()], |t, v| t.mean_axis(v[0], 2));
    check_params(vec![a.clone()], |t, v| {
        let s = t.mean(v[0])?;
        t.reshape(s, &[1])
    });
    check_params(vec![a.clone()], |t, v| t.slice(v[0], 1, 1, 3));
    check_params(vec![a.clone()], |t, v| t.reshape(v[0], &[6, 4]));
    let b = p(&[2, 1, 4], &wobble(8, 0.2));
    check_params(vec![a.clone(), b.clone()], |t, v| t.concat(&[v[0], v[1]], 1));
    check_params(vec![b.clone()], |t, v| t.broadcast_to(v[0], &[3, 2, 5, 4]));
    let gamma = p(&[4], &[1.0, 0.5, -0.7, 2.0]);
    let beta = p(&[4], &[0.1, 0.0, -0.2, 0.3]);
    check_params(vec![a.clone(), gamma, beta], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5));
    check_params(vec![a.clone()], |t, v| t.glu(v[0]));
}

#[test]
fn causal_convolutions_pass_finite_differences() {
    let kernel = p(&[3, 5], &wobble(15, 0.7));
    let signal = p(&[2, 5, 3], &wobble(30, 1.9));
    check_params(vec![kernel.clone(), signal.clone()], |t, v| t.causal_conv(v[0], v[1]));
    check_params(vec![kernel, signal], |t, v| t.causal_conv_last(v[0], v[1]));
}

#[test]
fn causal_conv_last_is_final_step_of_full_convolution() {
    let kernel = t(&[3, 6], &wobble(18, 0.2));
    let signal = t(&[2, 6, 3], &wobble(36, 0.8));
    let mut tape = Tape::new();
    let k = tape.constant(kernel);
    let u = tape.constant(signal);
    let full = tape.causal_conv(k, u).unwrap();
    let last = tape.causal_conv_last(k, u).unwrap();
    let full = tape.data(full).to_vec();
    for b in 0..2 {
        for h in 0..3 {
            let a = full[(b * 6 + 5) * 3 + h];
            let c = tape.data(last)[b * 3 + h];
            assert!((a - c).abs() < 1e-12);
        }
    }
}

#[test]
fn no_node_needs_grad_without_trainable_inputs() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2], &[1.0, 2.0]));
    let b = tape.exp(a).unwrap();
    let s = tape.sum(b).unwrap();
    assert!(!tape.requires_grad(s));
    tape.backward(s).unwrap();
    assert!(tape.grad(a).is_none());
}

proptest! {
    #[test]
    fn gradient_is_linear_in_the_root(
        xs in proptest::collection::vec(-2.0f64..2.0, 4),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let x = Tensor::param(&[4], xs).unwrap();
        let f = |tape: &mut Tape, v: Var| -> Result<Var, GradError> {
            let s = tape.sin(v)?;
            let q = tape.mul(s, v)?;
            tape.sum(q)
        };
        let g = |tape: &mut Tape, v: Var| -> Result<Var, GradError> {
            let e = tape.tanh(v)?;
            let q = tape.powf(e, 2.0)?;
            tape.sum(q)
        };
        let grads_of = |which: u8| {
            let mut tape = Tape::new();
            let v = tape.leaf(&x);
            let root = match which {
                0 => f(&mut tape, v).unwrap(),
                1 => g(&mut tape, v).unwrap(),
                _ => {
                    let a = f(&mut tape, v).unwrap();
                    let b = g(&mut tape, v).unwrap();
                    let a = tape.scale(a, alpha).unwrap();
                    let b = tape.scale(b, beta).unwrap();
                    tape.add(a, b).unwrap()
                }
            };
            tape.backward(root).unwrap();
            tape.grad(v).unwrap().to_vec()
        };
        let (gf, gg, gc) = (grads_of(0), grads_of(1), grads_of(2));
        for i in 0..4 {
            let expected = alpha * gf[i] + beta * gg[i];
            let tol = 1e-10 * expected.abs().max(1.0);
            prop_assert!((gc[i] - expected).abs() <= tol);
        }
    }
}

#[test]
fn ssm_kernel_passes_finite_differences() {
    let log_re = p(&[2, 3], &[-0.1, -0.05, -0.3, -0.02, -0.2, -0.15]);
    let log_im = p(&[2, 3], &wobble(6, 0.4));
    let w_re = p(&[2, 3], &wobble(6, 1.3));
    let w_im = p(&[2, 3], &wobble(6, 2.1));
    check_params(vec![log_re, log_im, w_re, w_im], |t, v| t.ssm_kernel(v[0], v[1], v[2], v[3], 9));
}

#[test]
fn ssm_kernel_matches_composed_primitives() {
    let (h, pp, len) = (2, 3, 7);
    let log_re = t(&[h, pp], &[-0.1, -0.05, -0.3, -0.02, -0.2, -0.15]);
    let log_im = t(&[h, pp], &wobble(6, 0.4));
    let w_re = t(&[h, pp], &wobble(6, 1.3));
    let w_im = t(&[h, pp], &wobble(6, 2.1));
    let mut tape = Tape::new();
    let (lr, li, wr, wi) = (
        tape.constant(log_re),
        tape.constant(log_im),
        tape.constant(w_re),
        tape.constant(w_im),
    );
    let fused = tape.ssm_kernel(lr, li, wr, wi, len).unwrap();
    // exp(l * log z) expanded into real primitives
    let steps = tape.constant(Tensor::new(&[1, 1, len], (0..len).map(|l| l as f64).collect()).unwrap());
    let lr3 = tape.reshape(lr, &[h, pp, 1]).unwrap();
    let li3 = tape.reshape(li, &[h, pp, 1]).unwrap();
    let wr3 = tape.reshape(wr, &[h, pp, 1]).unwrap();
    let wi3 = tape.reshape(wi, &[h, pp, 1]).unwrap();
    let xl = tape.mul(lr3, steps).unwrap();
    let yl = tape.mul(li3, steps).unwrap();
    let mag = tape.exp(xl).unwrap();
    let c = tape.cos(yl).unwrap();
    let s = tape.sin(yl).unwrap();
    let rc = tape.mul(wr3, c).unwrap();
    let is = tape.mul(wi3, s).unwrap();
    let re = tape.sub(rc, is).unwrap();
    let re = tape.mul(mag, re).unwrap();
    let summed = tape.sum_axis(re, 1).unwrap();
    let composed = tape.scale(summed, 2.0).unwrap();
    for (a, b) in tape.data(fused).iter().zip(tape.data(composed)) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
