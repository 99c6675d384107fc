//! Dense row-major tensors.

use std::io::{Read, Write};

use crate::error::{dim_err, Error, Result};
use crate::exec;
use crate::scalar::Scalar;

pub const TENSOR_MAGIC: &[u8; 4] = b"CXT1";

/// Dense tensor with a flat row-major buffer.
///
/// Invariants: every extent is at least 1 and `data.len()` equals the
/// product of the extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(dim_err!("extents must be positive, got {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&e| e > 0),
            "extents must be positive, got {shape:?}"
        );
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::ONE;
        }
        t
    }

    /// Builds a matrix from nested rows; convenient in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err!("ragged rows"));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|&v| T::from_f64(v)))
            .collect();
        Self::from_vec(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Extent of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    /// Number of rows when viewed as `[rows × last_dim]`.
    pub fn rows(&self) -> usize {
        self.data.len() / self.last_dim()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.last_dim();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.last_dim();
        &mut self.data[i * w..(i + 1) * w]
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| {
                assert!(i < e, "index {i} out of bounds for extent {e}");
                acc * e + i
            })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(dim_err!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Views the tensor as a `[rows × last_dim]` matrix.
    pub fn flatten_rows(self) -> Self {
        let w = self.last_dim();
        let r = self.rows();
        Self {
            shape: vec![r, w],
            data: self.data,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.matrix_dims()?;
        let mut out = vec![T::ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }

    fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(dim_err!("expected a matrix, got shape {s:?}")),
        }
    }

    /// Selects rows of a `[rows × w]` view by index, in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Self> {
        let w = self.last_dim();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            if i >= self.rows() {
                return Err(dim_err!("row {i} out of range {}", self.rows()));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::from_vec(vec![idx.len(), w], data)
    }

    /// Stacks `[r_i × w]` matrices on top of each other.
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let w = parts
            .first()
            .ok_or_else(|| dim_err!("vstack of nothing"))?
            .last_dim();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.last_dim() != w {
                return Err(dim_err!("vstack width {} vs {w}", p.last_dim()));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Self::from_vec(vec![rows, w], data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &e in &self.shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(Error::Parse(format!("bad tensor magic {magic:?}")));
        }
        let ndim = read_u32(r)? as usize;
        if ndim == 0 || ndim > 16 {
            return Err(Error::Parse(format!("implausible tensor rank {ndim}")));
        }
        let shape = (0..ndim)
            .map(|_| read_u32(r).map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::from_vec(shape, data).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

const ROW_BLOCK: usize = 4;

/// `a[m×k] · b[k×n]`.
///
/// Each output element is accumulated from zero sequentially over `k`, so
/// the result matches a plain triple loop bit for bit in either execution
/// mode.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.matrix_dims()?;
    let (k2, n) = b.matrix_dims()?;
    if k != k2 {
        return Err(dim_err!("matmul inner dims {k} vs {k2}"));
    }
    let mut out = vec![T::ZERO; m * n];
    matmul_into(&a.data, &b.data, k, n, &mut out);
    Tensor::from_vec(vec![m, n], out)
}

/// Row-major kernel behind [`matmul`]; `out` must be zeroed.
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], k: usize, n: usize, out: &mut [T]) {
    exec::for_each_block(out, n, ROW_BLOCK, |row0, block| {
        let rows = block.len() / n;
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            for r in 0..rows {
                let aik = a[(row0 + r) * k + kk];
                let orow = &mut block[r * n..(r + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aik * bv;
                }
            }
        }
    });
}

/// `aᵀ · b` for `a[n×p]`, `b[n×q]`, accumulated sequentially over `n`.
pub fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, p) = a.matrix_dims()?;
    let (n2, q) = b.matrix_dims()?;
    if n != n2 {
        return Err(dim_err!("matmul_tn row counts {n} vs {n2}"));
    }
    let mut out = vec![T::ZERO; p * q];
    // Work is split over output rows; each thread streams all of `n`.
    let rows_per_block = if exec::parallel_enabled() { 8 } else { p.max(1) };
    exec::for_each_block(&mut out, q, rows_per_block, |i0, block| {
        let rows = block.len() / q;
        for s in 0..n {
            let brow = &b.data[s * q..(s + 1) * q];
            let arow = &a.data[s * p + i0..s * p + i0 + rows];
            for (r, &av) in arow.iter().enumerate() {
                let orow = &mut block[r * q..(r + 1) * q];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    });
    Tensor::from_vec(vec![p, q], out)
}

/// Outer product over the leading axes with a shared trailing axis:
/// `out[p_1, …, p_C, m] = Π_i factors[i][p_i, m]`.
pub fn broadcast_outer<T: Scalar>(factors: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = factors
        .first()
        .ok_or_else(|| dim_err!("broadcast_outer needs at least one factor"))?;
    let m = first.last_dim();
    for f in factors {
        if f.ndim() != 2 || f.last_dim() != m {
            return Err(dim_err!(
                "factor shape {:?} does not end in shared extent {m}",
                f.shape()
            ));
        }
    }
    let mut acc: Vec<T> = first.data.clone();
    let mut shape = vec![first.rows()];
    for f in &factors[1..] {
        let mut next = Vec::with_capacity(acc.len() * f.rows());
        for prefix in acc.chunks(m) {
            for row in f.data.chunks(m) {
                next.extend(prefix.iter().zip(row).map(|(&x, &y)| x * y));
            }
        }
        acc = next;
        shape.push(f.rows());
    }
    shape.push(m);
    Tensor::from_vec(shape, acc)
}

/// Splits the trailing axis `M = r·S` as `[r slowest, S fastest]` and sums
/// over the `r` groups.
pub fn reduce_last<T: Scalar>(t: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let m = t.last_dim();
    if r == 0 || !m.is_multiple_of(r) {
        return Err(dim_err!("trailing extent {m} is not divisible by R = {r}"));
    }
    let s = m / r;
    let mut out = Vec::with_capacity(t.rows() * s);
    for row in t.data.chunks(m) {
        let mut acc = row[..s].to_vec();
        for g in 1..r {
            for (a, &v) in acc.iter_mut().zip(&row[g * s..(g + 1) * s]) {
                *a += v;
            }
        }
        out.extend(acc);
    }
    let mut shape = t.shape.clone();
    *shape.last_mut().unwrap() = s;
    Tensor::from_vec(shape, out)
}
