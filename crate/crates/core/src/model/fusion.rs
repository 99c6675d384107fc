//! Feature fusion across branches.
//!
//! Every branch feature row of width `M = R·S` is read as `[R slowest, S
//! fastest]`. Product fusion computes `Σ_r Π_i H_i[p_i, r, :]`; with
//! `R = 1` that is the plain broadcast outer product. Sum fusion adds the
//! broadcast features, concat fusion lays them side by side (width `C·S`);
//! both also sum over the `R` groups.

use crate::error::{dim_err, Result};
use crate::exec;
use crate::grid::unravel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Fusion;

/// How output rows map to branch rows.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layout {
    /// Cartesian product of branch rows, first branch slowest.
    Outer(Vec<usize>),
    /// Row `p` of every branch belongs to point `p`.
    Zip(usize),
}

impl Layout {
    pub(crate) fn num_points(&self) -> usize {
        match self {
            Layout::Outer(e) => e.iter().product(),
            Layout::Zip(n) => *n,
        }
    }

    fn start(&self, p: usize, c: usize) -> Vec<usize> {
        match self {
            Layout::Outer(e) => unravel(p, e),
            Layout::Zip(_) => vec![p; c],
        }
    }

    fn advance(&self, idx: &mut [usize]) {
        match self {
            Layout::Outer(e) => {
                for d in (0..e.len()).rev() {
                    idx[d] += 1;
                    if idx[d] < e[d] {
                        return;
                    }
                    idx[d] = 0;
                }
            }
            Layout::Zip(_) => idx.iter_mut().for_each(|i| *i += 1),
        }
    }
}

pub(crate) fn fused_width(mode: Fusion, c: usize, m: usize, r: usize) -> usize {
    match mode {
        Fusion::Concat => c * (m / r),
        _ => m / r,
    }
}

fn check<T: Scalar>(features: &[&Tensor<T>], r: usize) -> Result<usize> {
    let first = features
        .first()
        .ok_or_else(|| dim_err!("fusion needs at least one branch"))?;
    let m = first.last_dim();
    if features.iter().any(|f| f.ndim() != 2 || f.last_dim() != m) {
        return Err(dim_err!("branch features must share the trailing width {m}"));
    }
    if r == 0 || m % r != 0 {
        return Err(dim_err!("feature width {m} is not divisible by R = {r}"));
    }
    Ok(m)
}

/// Fuses branch features `[B_i × M]` into `[B_1 × … × B_C × F]`.
pub fn fuse<T: Scalar>(features: &[&Tensor<T>], mode: Fusion, r: usize) -> Result<Tensor<T>> {
    check(features, r)?;
    let extents: Vec<usize> = features.iter().map(|f| f.rows()).collect();
    let flat = fuse_rows(features, mode, r, &Layout::Outer(extents.clone()))?;
    let mut shape = extents;
    shape.push(flat.last_dim());
    flat.reshape(&shape)
}

/// Fuses row-aligned features `[N × M]` point by point into `[N × F]`.
pub fn fuse_per_point<T: Scalar>(features: &[&Tensor<T>], mode: Fusion, r: usize) -> Result<Tensor<T>> {
    check(features, r)?;
    let n = features[0].rows();
    if features.iter().any(|f| f.rows() != n) {
        return Err(dim_err!("per-point fusion needs equal row counts"));
    }
    fuse_rows(features, mode, r, &Layout::Zip(n))
}

pub(crate) fn fuse_rows<T: Scalar>(
    features: &[&Tensor<T>],
    mode: Fusion,
    r: usize,
    layout: &Layout,
) -> Result<Tensor<T>> {
    let m = check(features, r)?;
    let c = features.len();
    let s = m / r;
    let width = fused_width(mode, c, m, r);
    let n = layout.num_points();
    let mut out = vec![T::ZERO; n * width];
    exec::for_each_block(&mut out, width, 256, |row0, block| {
        let mut idx = layout.start(row0, c);
        let mut tmp = vec![T::ZERO; s];
        for orow in block.chunks_mut(width) {
            let rows: Vec<&[T]> = features.iter().zip(&idx).map(|(f, &i)| f.row(i)).collect();
            match mode {
                Fusion::Product => {
                    for g in 0..r {
                        let seg = g * s..(g + 1) * s;
                        tmp.copy_from_slice(&rows[0][seg.clone()]);
                        for h in &rows[1..] {
                            for (t, &v) in tmp.iter_mut().zip(&h[seg.clone()]) {
                                *t *= v;
                            }
                        }
                        for (o, &t) in orow.iter_mut().zip(&tmp) {
                            *o += t;
                        }
                    }
                }
                Fusion::Sum => {
                    for g in 0..r {
                        for h in &rows {
                            for (o, &v) in orow.iter_mut().zip(&h[g * s..(g + 1) * s]) {
                                *o += v;
                            }
                        }
                    }
                }
                Fusion::Concat => {
                    for (i, h) in rows.iter().enumerate() {
                        let dst = &mut orow[i * s..(i + 1) * s];
                        for g in 0..r {
                            for (o, &v) in dst.iter_mut().zip(&h[g * s..(g + 1) * s]) {
                                *o += v;
                            }
                        }
                    }
                }
            }
            layout.advance(&mut idx);
        }
    });
    Tensor::from_vec(vec![n, width], out)
}

/// Gradients of the branch features given the gradient of the fused rows.
/// Accumulation runs sequentially over points in layout order.
pub(crate) fn fuse_backward<T: Scalar>(
    features: &[&Tensor<T>],
    d_fused: &Tensor<T>,
    mode: Fusion,
    r: usize,
    layout: &Layout,
) -> Vec<Tensor<T>> {
    let c = features.len();
    let m = features[0].last_dim();
    let s = m / r;
    let width = d_fused.last_dim();
    let mut grads: Vec<Tensor<T>> = features
        .iter()
        .map(|f| Tensor::zeros(f.shape()))
        .collect();
    let mut idx = layout.start(0, c);
    for p in 0..layout.num_points() {
        let g_row = &d_fused.data()[p * width..(p + 1) * width];
        match mode {
            Fusion::Product => {
                for i in 0..c {
                    for mm in 0..m {
                        let mut prod = g_row[mm % s];
                        for (j, f) in features.iter().enumerate() {
                            if j != i {
                                prod *= f.row(idx[j])[mm];
                            }
                        }
                        grads[i].row_mut(idx[i])[mm] += prod;
                    }
                }
            }
            Fusion::Sum => {
                for i in 0..c {
                    let dst = grads[i].row_mut(idx[i]);
                    for (mm, d) in dst.iter_mut().enumerate() {
                        *d += g_row[mm % s];
                    }
                }
            }
            Fusion::Concat => {
                for i in 0..c {
                    let dst = grads[i].row_mut(idx[i]);
                    for (mm, d) in dst.iter_mut().enumerate() {
                        *d += g_row[i * s + mm % s];
                    }
                }
            }
        }
        layout.advance(&mut idx);
    }
    grads
}
