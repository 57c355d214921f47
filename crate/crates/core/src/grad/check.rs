use super::{GradError, Tape, Tensor, Var};

/// Compare tape gradients of a scalar program against central differences.
///
/// `program` is evaluated on a fresh tape with `params` registered as
/// leaves, in order. Returns the maximum over all parameter entries of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_diff_check<F>(mut program: F, params: &[Tensor], eps: f64) -> Result<f64, GradError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, GradError>,
{
    if !(eps > 0.0) {
        return Err(GradError::Domain {
            op: "finite_diff_check",
            detail: format!("eps must be positive, got {eps}"),
        });
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(&p.clone().with_requires_grad(true)))
        .collect();
    let root = program(&mut tape, &vars)?;
    let value = tape.item(root)?;
    if !value.is_finite() {
        return Err(GradError::NonFinite("program output".into()));
    }
    tape.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| {
            tape.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.numel()])
        })
        .collect();

    let mut evaluate = |perturbed: &[Tensor]| -> Result<f64, GradError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.leaf(p)).collect();
        let root = program(&mut tape, &vars)?;
        let v = tape.item(root)?;
        if !v.is_finite() {
            return Err(GradError::NonFinite("perturbed program output".into()));
        }
        Ok(v)
    };

    let mut work: Vec<Tensor> = params
        .iter()
        .map(|p| p.clone().with_requires_grad(false))
        .collect();
    let mut worst = 0.0f64;
    for p in 0..work.len() {
        for j in 0..work[p].numel() {
            let original = work[p].data()[j];
            work[p].data_mut()[j] = original + eps;
            let plus = evaluate(&work)?;
            work[p].data_mut()[j] = original - eps;
            let minus = evaluate(&work)?;
            work[p].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[p][j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
