use crate::encoding::ActivationSpec;
use crate::error::{config_err, dim_err, Result};
use crate::exec;
use crate::grid::DecomposedGrid;
use crate::scalar::Scalar;
use crate::tensor::{matmul_into, Tensor};

use super::fusion::{fuse_rows, Layout};
use super::params::{Dense, Model};

/// What a forward pass runs on.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    /// Arbitrary `N × K` points, evaluated independently.
    Points(&'a Tensor),
    /// A decomposed lattice; CoordX reuses branch features across it.
    Grid(&'a DecomposedGrid),
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Act<T> {
    Identity,
    Relu,
    Sine(T),
}

impl<T: Scalar> Act<T> {
    #[inline]
    fn apply(self, z: T) -> T {
        match self {
            Act::Identity => z,
            Act::Relu => {
                if z > T::ZERO {
                    z
                } else {
                    T::ZERO
                }
            }
            Act::Sine(w) => (w * z).sin(),
        }
    }

    #[inline]
    pub(crate) fn derivative(self, z: T) -> T {
        match self {
            Act::Identity => T::ONE,
            Act::Relu => {
                if z > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Act::Sine(w) => w * (w * z).cos(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T: Scalar> {
    pub input: Tensor<T>,
    pub pre: Tensor<T>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    pub(crate) layout: Option<Layout>,
    pub(crate) branch_rows: Vec<usize>,
    pub(crate) first: Vec<LayerCache<T>>,
    pub(crate) trunk: Vec<LayerCache<T>>,
    pub(crate) branch_features: Vec<Tensor<T>>,
    pub(crate) tail: Vec<LayerCache<T>>,
    /// Network output, `[N × O]`.
    pub output: Tensor<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Pre-fusion features per branch (`H_{D_s}^{(i)}`).
    pub fn branch_features(&self) -> &[Tensor<T>] {
        &self.branch_features
    }
}

pub(crate) fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    layer: &Dense<T>,
    act: Act<T>,
    keep_pre: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let n = x.rows();
    let (fin, fout) = (layer.fan_in(), layer.fan_out());
    debug_assert_eq!(x.last_dim(), fin);
    let mut z = vec![T::ZERO; n * fout];
    matmul_into(x.data(), layer.weight.data(), fin, fout, &mut z);
    let bias = layer.bias.data();
    let pre = keep_pre.then(|| {
        let mut p = z.clone();
        for row in p.chunks_mut(fout) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Tensor::from_vec(vec![n, fout], p).unwrap()
    });
    exec::for_each_block(&mut z, fout, 64, |_, block| {
        for row in block.chunks_mut(fout) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v = act.apply(*v + b);
            }
        }
    });
    (pre, Tensor::from_vec(vec![n, fout], z).unwrap())
}

impl<T: Scalar> Model<T> {
    fn hidden_act(&self) -> Act<T> {
        match self.spec.activation {
            ActivationSpec::Relu => Act::Relu,
            ActivationSpec::Sine { omega0 } => Act::Sine(T::from_f64(omega0)),
        }
    }

    pub(crate) fn first_act(&self) -> Act<T> {
        if self.params.trunk.is_empty() && self.params.tail.is_empty() {
            Act::Identity
        } else {
            self.hidden_act()
        }
    }

    pub(crate) fn trunk_act(&self, j: usize) -> Act<T> {
        if self.params.tail.is_empty() && j + 1 == self.params.trunk.len() {
            Act::Identity
        } else {
            self.hidden_act()
        }
    }

    pub(crate) fn tail_act(&self, j: usize) -> Act<T> {
        if j + 1 == self.params.tail.len() {
            Act::Identity
        } else {
            self.hidden_act()
        }
    }

    /// Evaluates every point independently: `[N × K] → [N × O]`.
    pub fn forward_points(&self, points: &Tensor) -> Result<Tensor<T>> {
        Ok(self.run(Input::Points(points), false)?.output)
    }

    /// Baseline evaluation of `N × K` points.
    pub fn forward_baseline(&self, points: &Tensor) -> Result<Tensor<T>> {
        if self.spec.is_split() {
            return Err(config_err!("forward_baseline called on a split model"));
        }
        self.forward_points(points)
    }

    /// Evaluates a decomposed lattice, returning `[B_1 × … × B_C × O]`.
    ///
    /// For a split model the first `D_s` layers only see the `Σ B_i` branch
    /// rows; a baseline model evaluates the recomposed points.
    pub fn forward_coordx(&self, grid: &DecomposedGrid) -> Result<Tensor<T>> {
        let out = self.run(Input::Grid(grid), false)?.output;
        let mut shape = if self.spec.is_split() {
            grid.branch_extents()
        } else {
            vec![grid.num_points()]
        };
        shape.push(self.spec.out_dim);
        out.reshape(&shape)
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn forward_cached(&self, input: Input<'_>) -> Result<ForwardCache<T>> {
        self.run(input, true)
    }

    fn branch_inputs(&self, input: Input<'_>) -> Result<(Vec<Tensor>, Option<Layout>)> {
        let spec = &self.spec;
        let branch_spec = spec.branch_spec();
        let split = spec.is_split();
        match input {
            Input::Points(p) => {
                if p.ndim() != 2 || p.last_dim() != spec.in_dim {
                    return Err(dim_err!(
                        "points have shape {:?}, expected [N × {}]",
                        p.shape(),
                        spec.in_dim
                    ));
                }
                if !split {
                    return Ok((vec![p.clone()], None));
                }
                let mut parts = Vec::with_capacity(branch_spec.len());
                let mut off = 0;
                for &k in &branch_spec {
                    let mut data = Vec::with_capacity(p.rows() * k);
                    for r in 0..p.rows() {
                        data.extend_from_slice(&p.row(r)[off..off + k]);
                    }
                    parts.push(Tensor::from_vec(vec![p.rows(), k], data)?);
                    off += k;
                }
                Ok((parts, Some(Layout::Zip(p.rows()))))
            }
            Input::Grid(g) => {
                if g.dim() != spec.in_dim {
                    return Err(dim_err!(
                        "grid has {} coordinates, model expects {}",
                        g.dim(),
                        spec.in_dim
                    ));
                }
                if !split {
                    return Ok((vec![g.recompose()], None));
                }
                if g.branch_dims() != branch_spec {
                    return Err(dim_err!(
                        "grid branches {:?} do not match model branches {:?}",
                        g.branch_dims(),
                        branch_spec
                    ));
                }
                Ok((g.branches.clone(), Some(Layout::Outer(g.branch_extents()))))
            }
        }
    }

    fn run(&self, input: Input<'_>, keep: bool) -> Result<ForwardCache<T>> {
        let (raw, layout) = self.branch_inputs(input)?;
        let branch_rows: Vec<usize> = raw.iter().map(Tensor::rows).collect();

        let mut first_cache = Vec::new();
        let mut hidden = Vec::with_capacity(raw.len());
        let act = self.first_act();
        for (x, layer) in raw.iter().zip(&self.params.first) {
            let enc = self.spec.encoding.apply(&x.cast::<T>())?;
            let (pre, h) = dense_forward(&enc, layer, act, keep);
            if let Some(pre) = pre {
                first_cache.push(LayerCache { input: enc, pre });
            }
            hidden.push(h);
        }
        let mut h = if hidden.len() == 1 {
            hidden.pop().unwrap()
        } else {
            Tensor::vstack(&hidden.iter().collect::<Vec<_>>())?
        };
        drop(hidden);

        let mut trunk_cache = Vec::new();
        for (j, layer) in self.params.trunk.iter().enumerate() {
            let (pre, next) = dense_forward(&h, layer, self.trunk_act(j), keep);
            if let Some(pre) = pre {
                trunk_cache.push(LayerCache { input: h, pre });
            }
            h = next;
        }

        let Some(layout) = layout else {
            return Ok(ForwardCache {
                layout: None,
                branch_rows,
                first: first_cache,
                trunk: trunk_cache,
                branch_features: vec![],
                tail: vec![],
                output: h,
            });
        };

        let width = h.last_dim();
        let mut features = Vec::with_capacity(branch_rows.len());
        let mut start = 0;
        for &rows in &branch_rows {
            let slice = h.data()[start * width..(start + rows) * width].to_vec();
            features.push(Tensor::from_vec(vec![rows, width], slice)?);
            start += rows;
        }
        drop(h);
        let plan = &self.plan;
        let mode = plan.fusion.expect("split models have a fusion mode");
        let refs: Vec<&Tensor<T>> = features.iter().collect();
        let mut f = fuse_rows(&refs, mode, plan.reduce, &layout)?;

        let mut tail_cache = Vec::new();
        for (j, layer) in self.params.tail.iter().enumerate() {
            let (pre, next) = dense_forward(&f, layer, self.tail_act(j), keep);
            if let Some(pre) = pre {
                tail_cache.push(LayerCache { input: f, pre });
            }
            f = next;
        }
        Ok(ForwardCache {
            layout: Some(layout),
            branch_rows,
            first: first_cache,
            trunk: trunk_cache,
            branch_features: if keep { features } else { vec![] },
            tail: tail_cache,
            output: f,
        })
    }

    /// Pre-fusion features of every branch on a decomposed lattice.
    pub fn branch_features(&self, grid: &DecomposedGrid) -> Result<Vec<Tensor<T>>> {
        if !self.spec.is_split() {
            return Err(config_err!("a baseline model has no branch features"));
        }
        Ok(self.run(Input::Grid(grid), true)?.branch_features)
    }
}
