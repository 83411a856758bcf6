use crate::diffcore::{DiffError, Param, Tensor, Var};

/// Result of a gradient verification run.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Max over all parameter elements of the relative error between the
    /// reverse-mode gradient and the central finite difference.
    pub max_rel_err: f64,
    /// (parameter name, worst relative error within that parameter).
    pub per_param: Vec<(String, f64)>,
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Verify reverse-mode gradients of a scalar computation against central
/// finite differences in double precision. `f` rebuilds the graph from the
/// given parameters on every call; it must be deterministic (no live
/// dropout) for the finite differences to be meaningful.
pub fn backward_and_check(
    params: &[Param<f64>],
    mut f: impl FnMut() -> Var<f64>,
) -> Result<GradCheck, DiffError> {
    let loss = f();
    loss.backward()?;
    let analytic: Vec<Tensor<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| Tensor::zeros(&p.value().shape().to_vec())))
        .collect();

    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel = 0.0f64;
    for (p, grad) in params.iter().zip(&analytic) {
        let base = p.value();
        let mut worst = 0.0f64;
        for i in 0..base.len() {
            let theta = base.data()[i];
            let h = 1e-5 * theta.abs().max(1.0);
            let mut plus = base.clone();
            plus.data_mut()[i] = theta + h;
            p.set_value(plus);
            let f_plus = f().value().item();
            let mut minus = base.clone();
            minus.data_mut()[i] = theta - h;
            p.set_value(minus);
            let f_minus = f().value().item();
            p.set_value(base.clone());
            let fd = (f_plus - f_minus) / (2.0 * h);
            let e = rel_err(grad.data()[i], fd);
            worst = worst.max(e);
        }
        max_rel = max_rel.max(worst);
        per_param.push((p.name.clone(), worst));
    }
    Ok(GradCheck {
        max_rel_err: max_rel,
        per_param,
    })
}
