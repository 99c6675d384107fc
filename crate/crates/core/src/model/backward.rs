use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul, matmul_tn, Tensor};

use super::forward::{Act, ForwardCache, LayerCache};
use super::fusion::fuse_backward;
use super::params::{Dense, Model, ModelParams};

/// Returns the layer's parameter gradients and, if asked, the gradient with
/// respect to its input.
fn dense_backward<T: Scalar>(
    cache: &LayerCache<T>,
    layer: &Dense<T>,
    act: Act<T>,
    d_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<(Dense<T>, Option<Tensor<T>>)> {
    let mut dz = d_out.clone();
    if !matches!(act, Act::Identity) {
        for (g, &z) in dz.data_mut().iter_mut().zip(cache.pre.data()) {
            *g *= act.derivative(z);
        }
    }
    let d_weight = matmul_tn(&cache.input, &dz)?;
    let fout = layer.fan_out();
    let mut d_bias = vec![T::ZERO; fout];
    for row in dz.data().chunks(fout) {
        for (b, &g) in d_bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let d_input = if want_input_grad {
        Some(matmul(&dz, &layer.weight.transpose()?)?)
    } else {
        None
    };
    Ok((
        Dense {
            weight: d_weight,
            bias: Tensor::from_vec(vec![fout], d_bias)?,
        },
        d_input,
    ))
}

impl<T: Scalar> Model<T> {
    /// Reverse-mode gradients of every weight and bias given `dLoss/dOut`
    /// (`[N × O]`, any shape with the same element count).
    ///
    /// Shared trunk layers receive the gradient summed over all branch rows.
    pub fn backward(&self, cache: &ForwardCache<T>, d_out: &Tensor<T>) -> Result<ModelParams<T>> {
        if d_out.len() != cache.output.len() {
            return Err(dim_err!(
                "output gradient has {} entries, output has {}",
                d_out.len(),
                cache.output.len()
            ));
        }
        let mut g = d_out.clone().reshape(cache.output.shape())?;
        let p = &self.params;
        let mut grads = p.zeros_like();

        for j in (0..p.tail.len()).rev() {
            let (d, dx) = dense_backward(&cache.tail[j], &p.tail[j], self.tail_act(j), &g, true)?;
            grads.tail[j] = d;
            g = dx.unwrap();
        }

        if let Some(layout) = &cache.layout {
            let refs: Vec<&Tensor<T>> = cache.branch_features.iter().collect();
            let mode = self.plan.fusion.expect("split models have a fusion mode");
            let parts = fuse_backward(&refs, &g, mode, self.plan.reduce, layout);
            g = Tensor::vstack(&parts.iter().collect::<Vec<_>>())?;
        }

        for j in (0..p.trunk.len()).rev() {
            let (d, dx) = dense_backward(&cache.trunk[j], &p.trunk[j], self.trunk_act(j), &g, true)?;
            grads.trunk[j] = d;
            g = dx.unwrap();
        }

        let width = g.last_dim();
        let mut start = 0;
        let act = self.first_act();
        for (i, &rows) in cache.branch_rows.iter().enumerate() {
            let part = Tensor::from_vec(
                vec![rows, width],
                g.data()[start * width..(start + rows) * width].to_vec(),
            )?;
            start += rows;
            grads.first[i] = dense_backward(&cache.first[i], &p.first[i], act, &part, false)?.0;
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::model::{Input, ModelSpec};
    use crate::rng::Rng;

    fn rows(t: &Tensor, start: usize, n: usize) -> Tensor {
        let w = t.last_dim();
        Tensor::from_vec(vec![n, w], t.data()[start * w..(start + n) * w].to_vec()).unwrap()
    }

    #[test]
    fn trunk_gradient_is_the_sum_over_branches() {
        let spec = ModelSpec::coordx(3, 2, 6, 4, 1);
        let m = Model::<f64>::init(spec, &Rng::new(4)).unwrap();
        let grid = make_grid(&[3, 2, 4]).unwrap().decompose();
        let cache = m.forward_cached(Input::Grid(&grid)).unwrap();
        let mut rng = Rng::new(5);
        let noise = (0..cache.output.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let d_out = Tensor::from_vec(cache.output.shape().to_vec(), noise).unwrap();
        let full = m.backward(&cache, &d_out).unwrap();

        // Gradient reaching the fused features, then split per branch.
        let mut g = d_out.clone();
        for j in (0..m.params.tail.len()).rev() {
            g = dense_backward(&cache.tail[j], &m.params.tail[j], m.tail_act(j), &g, true)
                .unwrap()
                .1
                .unwrap();
        }
        let refs: Vec<&Tensor> = cache.branch_features.iter().collect();
        let layout = cache.layout.as_ref().unwrap();
        let parts = fuse_backward(&refs, &g, m.plan.fusion.unwrap(), m.plan.reduce, layout);

        let mut summed = full.zeros_like();
        let mut start = 0;
        for (part, &n) in parts.iter().zip(&cache.branch_rows) {
            // Backpropagate this branch alone through the shared layers.
            let mut g = part.clone();
            for j in (0..m.params.trunk.len()).rev() {
                let lc = &cache.trunk[j];
                let own = LayerCache {
                    input: rows(&lc.input, start, n),
                    pre: rows(&lc.pre, start, n),
                };
                let (d, dx) = dense_backward(&own, &m.params.trunk[j], m.trunk_act(j), &g, true).unwrap();
                for (acc, v) in summed.trunk[j].weight.data_mut().iter_mut().zip(d.weight.data()) {
                    *acc += v;
                }
                for (acc, v) in summed.trunk[j].bias.data_mut().iter_mut().zip(d.bias.data()) {
                    *acc += v;
                }
                g = dx.unwrap();
            }
            start += n;
        }
        for (a, b) in summed.trunk.iter().zip(&full.trunk) {
            let scale = b.weight.data().iter().fold(0.0f64, |s, v| s.max(v.abs()));
            assert!(a.weight.max_abs_diff(&b.weight) <= 1e-12 * scale);
            assert!(a.bias.max_abs_diff(&b.bias) <= 1e-12 * scale.max(1.0));
        }
    }
}
