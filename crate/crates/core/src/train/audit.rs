use crate::error::{config_err, Result};
use crate::grid::DecomposedGrid;
use crate::model::{Input, Model, ModelSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::loss::loss_mse;

/// Central-difference step.
pub const AUDIT_STEP: f64 = 1e-5;

/// Parameter budget of a spec `grad_audit` accepts.
const MAX_AUDIT_PARAMS: usize = 1000;

/// `|a - b| / max(|a|, |b|, 1e-6)`. The floor keeps gradients that are
/// zero up to rounding from reporting huge relative errors.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Initializes `spec` from `rng`, draws a small random input and target,
/// and returns the worst relative error between backward and central
/// finite differences of the MSE loss over all parameters.
pub fn grad_audit(spec: &ModelSpec, rng: &Rng) -> Result<f64> {
    let model = Model::<f64>::init(spec.clone(), rng)?;
    if model.params.num_params() > MAX_AUDIT_PARAMS {
        return Err(config_err!(
            "audit spec has {} parameters, limit is {MAX_AUDIT_PARAMS}",
            model.params.num_params()
        ));
    }
    let mut r = rng.split(1 << 30);
    let rand = |shape: Vec<usize>, r: &mut Rng| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| r.uniform(-1.0, 1.0)).collect()).unwrap()
    };
    if spec.is_split() {
        let branches = spec
            .branch_spec()
            .iter()
            .enumerate()
            .map(|(i, &k)| rand(vec![2 + i % 2, k], &mut r))
            .collect();
        let grid = DecomposedGrid::new(branches)?;
        let target = rand(vec![grid.num_points(), spec.out_dim], &mut r);
        grad_audit_model(&model, Input::Grid(&grid), &target)
    } else {
        let pts = rand(vec![5, spec.in_dim], &mut r);
        let target = rand(vec![5, spec.out_dim], &mut r);
        grad_audit_model(&model, Input::Points(&pts), &target)
    }
}

/// Worst relative error of backward vs central differences for the MSE
/// loss of `model` on `input`.
pub fn grad_audit_model(model: &Model<f64>, input: Input<'_>, target: &Tensor) -> Result<f64> {
    let cache = model.forward_cached(input)?;
    let (_, d_out) = loss_mse(&cache.output, target)?;
    let analytic = model.backward(&cache, &d_out)?;
    let loss_at = |m: &Model<f64>| -> Result<f64> { Ok(loss_mse(&m.forward_cached(input)?.output, target)?.0) };

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    let n_tensors = probe.params.tensors().len();
    for t in 0..n_tensors {
        let len = probe.params.tensors()[t].len();
        for i in 0..len {
            let orig = probe.params.tensors()[t].data()[i];
            probe.params.tensors_mut()[t].data_mut()[i] = orig + AUDIT_STEP;
            let up = loss_at(&probe)?;
            probe.params.tensors_mut()[t].data_mut()[i] = orig - AUDIT_STEP;
            let down = loss_at(&probe)?;
            probe.params.tensors_mut()[t].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * AUDIT_STEP);
            worst = worst.max(relative_error(analytic.tensors()[t].data()[i], fd));
        }
    }
    Ok(worst)
}
