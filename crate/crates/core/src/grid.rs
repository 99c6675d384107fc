//! Coordinate lattices and their per-branch decomposition.
//!
//! Enumeration order is lexicographic everywhere: the first branch (and
//! within a branch, the first axis) varies slowest.

use crate::error::{config_err, dim_err, Result};
use crate::tensor::Tensor;

/// Cartesian lattice with a partition of its axes into branches.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    axes: Vec<Vec<f64>>,
    branch_spec: Vec<usize>,
}

/// Per-branch sub-coordinates `X^(i)`, each `[B_i × K_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedGrid {
    pub branches: Vec<Tensor>,
}

/// `n` evenly spaced values spanning `[lo, hi]`; a single value sits at the
/// midpoint.
pub fn linspace(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Lattice on `[-1, 1]` along every axis, one branch per axis.
pub fn make_grid(extents: &[usize]) -> Result<CoordGrid> {
    make_grid_in(extents, &vec![(-1.0, 1.0); extents.len()])
}

pub fn make_grid_in(extents: &[usize], ranges: &[(f64, f64)]) -> Result<CoordGrid> {
    if extents.is_empty() {
        return Err(config_err!("grid needs at least one axis"));
    }
    if extents.len() != ranges.len() {
        return Err(config_err!(
            "{} extents but {} ranges",
            extents.len(),
            ranges.len()
        ));
    }
    let mut axes = Vec::with_capacity(extents.len());
    for (&n, &(lo, hi)) in extents.iter().zip(ranges) {
        if n == 0 {
            return Err(config_err!("zero grid extent"));
        }
        if !(lo < hi) {
            return Err(config_err!("axis range [{lo}, {hi}] is empty"));
        }
        axes.push(linspace(n, lo, hi));
    }
    let branch_spec = vec![1; axes.len()];
    Ok(CoordGrid { axes, branch_spec })
}

impl CoordGrid {
    pub fn from_axes(axes: Vec<Vec<f64>>, branch_spec: Vec<usize>) -> Result<Self> {
        if axes.iter().any(|a| a.is_empty()) {
            return Err(config_err!("empty axis"));
        }
        for a in &axes {
            let mut s = a.clone();
            s.sort_by(f64::total_cmp);
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(config_err!("axis values must be distinct"));
            }
        }
        Self { axes, branch_spec: vec![] }.with_branches(&branch_spec)
    }

    /// Groups consecutive axes into branches of the given sizes.
    pub fn with_branches(mut self, branch_spec: &[usize]) -> Result<Self> {
        if branch_spec.is_empty() || branch_spec.contains(&0) {
            return Err(config_err!("branch sizes must be positive: {branch_spec:?}"));
        }
        let total: usize = branch_spec.iter().sum();
        if total != self.axes.len() {
            return Err(config_err!(
                "branch sizes {branch_spec:?} do not partition {} axes",
                self.axes.len()
            ));
        }
        self.branch_spec = branch_spec.to_vec();
        Ok(self)
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn branch_spec(&self) -> &[usize] {
        &self.branch_spec
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn extents(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn num_points(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// Per-branch row counts `B_i`.
    pub fn branch_extents(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut a = 0;
        for &k in &self.branch_spec {
            out.push(self.axes[a..a + k].iter().map(Vec::len).product());
            a += k;
        }
        out
    }

    pub fn decompose(&self) -> DecomposedGrid {
        let mut branches = Vec::with_capacity(self.branch_spec.len());
        let mut a = 0;
        for &k in &self.branch_spec {
            branches.push(lattice(&self.axes[a..a + k]));
            a += k;
        }
        DecomposedGrid { branches }
    }

    /// All `N × K` points in lexicographic order.
    pub fn points(&self) -> Tensor {
        lattice(&self.axes)
    }
}

/// Row-major enumeration of the Cartesian product of `axes`.
fn lattice(axes: &[Vec<f64>]) -> Tensor {
    let k = axes.len();
    let n: usize = axes.iter().map(Vec::len).product();
    let mut data = Vec::with_capacity(n * k);
    let mut idx = vec![0usize; k];
    for _ in 0..n {
        data.extend(idx.iter().zip(axes).map(|(&i, a)| a[i]));
        for d in (0..k).rev() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_vec(vec![n, k], data).expect("lattice shape is consistent")
}

impl DecomposedGrid {
    pub fn new(branches: Vec<Tensor>) -> Result<Self> {
        if branches.is_empty() {
            return Err(dim_err!("decomposed grid needs at least one branch"));
        }
        if branches.iter().any(|b| b.ndim() != 2) {
            return Err(dim_err!("branches must be matrices"));
        }
        Ok(Self { branches })
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn branch_extents(&self) -> Vec<usize> {
        self.branches.iter().map(Tensor::rows).collect()
    }

    pub fn branch_dims(&self) -> Vec<usize> {
        self.branches.iter().map(Tensor::last_dim).collect()
    }

    pub fn num_points(&self) -> usize {
        self.branch_extents().iter().product()
    }

    pub fn dim(&self) -> usize {
        self.branch_dims().iter().sum()
    }

    /// Cartesian product of branch rows, first branch slowest.
    pub fn recompose(&self) -> Tensor {
        let k = self.dim();
        let extents = self.branch_extents();
        let n: usize = extents.iter().product();
        let mut data = Vec::with_capacity(n * k);
        for flat in 0..n {
            for (b, i) in self.branches.iter().zip(unravel(flat, &extents)) {
                data.extend_from_slice(b.row(i));
            }
        }
        Tensor::from_vec(vec![n, k], data).expect("recompose shape is consistent")
    }

    /// Splits a point list into per-branch unique sub-coordinates (in first
    /// appearance order) and checks that the list is exactly their Cartesian
    /// product in lexicographic order. Returns `None` when it is not.
    pub fn from_points(points: &Tensor, branch_spec: &[usize]) -> Option<Self> {
        let k: usize = branch_spec.iter().sum();
        if points.ndim() != 2 || points.last_dim() != k {
            return None;
        }
        let mut branches = Vec::new();
        let mut off = 0;
        for &ki in branch_spec {
            let mut uniq: Vec<Vec<f64>> = Vec::new();
            for r in 0..points.rows() {
                let sub = &points.row(r)[off..off + ki];
                if !uniq.iter().any(|u| u.as_slice() == sub) {
                    uniq.push(sub.to_vec());
                }
            }
            let rows = uniq.len();
            branches.push(Tensor::from_vec(vec![rows, ki], uniq.concat()).ok()?);
            off += ki;
        }
        let dg = Self { branches };
        (dg.recompose() == *points).then_some(dg)
    }
}

/// Row-major multi-index of `flat` within `extents`.
pub fn unravel(mut flat: usize, extents: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; extents.len()];
    for d in (0..extents.len()).rev() {
        idx[d] = flat % extents[d];
        flat /= extents[d];
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn even_spacing() {
        let g = make_grid(&[3]).unwrap();
        assert_eq!(g.axes()[0], vec![-1.0, 0.0, 1.0]);
        assert_eq!(make_grid(&[1]).unwrap().axes()[0], vec![0.0]);
        assert!(make_grid(&[0]).is_err());
        assert!(make_grid_in(&[2], &[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn two_by_two_points() {
        let p = make_grid(&[2, 2]).unwrap().points();
        assert_eq!(p.data(), &[-1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0]);
        assert_eq!(make_grid(&[512, 512]).unwrap().num_points(), 262_144);
    }

    #[test]
    fn decompose_two_by_three() {
        let g = CoordGrid::from_axes(vec![vec![1.0, 2.0], vec![4.0, 5.0, 6.0]], vec![1, 1]).unwrap();
        let dg = g.decompose();
        assert_eq!(dg.branches[0].shape(), &[2, 1]);
        assert_eq!(dg.branches[0].data(), &[1.0, 2.0]);
        assert_eq!(dg.branches[1].data(), &[4.0, 5.0, 6.0]);
        let p = dg.recompose();
        assert_eq!(
            p.data(),
            &[1.0, 4.0, 1.0, 5.0, 1.0, 6.0, 2.0, 4.0, 2.0, 5.0, 2.0, 6.0]
        );
        assert_eq!(p, g.points());
    }

    #[test]
    fn video_xy_plus_t() {
        let g = make_grid(&[4, 4, 10]).unwrap().with_branches(&[2, 1]).unwrap();
        let dg = g.decompose();
        assert_eq!(dg.branches[0].shape(), &[16, 2]);
        assert_eq!(dg.branches[1].shape(), &[10, 1]);
        assert_eq!(dg.recompose(), g.points());
        assert!(make_grid(&[4, 4]).unwrap().with_branches(&[2, 1]).is_err());
    }

    #[test]
    fn full_split_shapes() {
        let dg = make_grid(&[3, 5, 2]).unwrap().decompose();
        assert_eq!(dg.num_branches(), 3);
        for (b, e) in dg.branches.iter().zip([3, 5, 2]) {
            assert_eq!(b.shape(), &[e, 1]);
        }
    }

    #[test]
    fn recompose_matches_nested_loops() {
        let mut rng = Rng::new(3);
        let mk = |rng: &mut Rng, r: usize, k: usize| {
            Tensor::from_vec(vec![r, k], (0..r * k).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
        };
        let b = [mk(&mut rng, 2, 1), mk(&mut rng, 3, 2), mk(&mut rng, 4, 1)];
        let dg = DecomposedGrid::new(b.to_vec()).unwrap();
        let p = dg.recompose();
        let mut row = 0;
        for i in 0..2 {
            for j in 0..3 {
                for l in 0..4 {
                    let want = [b[0].row(i), b[1].row(j), b[2].row(l)].concat();
                    assert_eq!(p.row(row), want.as_slice());
                    row += 1;
                }
            }
        }
    }

    #[test]
    fn diagonal_points_are_not_decomposable() {
        let diag = Tensor::<f64>::from_rows(&[&[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0], &[4.0, 4.0]]).unwrap();
        assert!(DecomposedGrid::from_points(&diag, &[1, 1]).is_none());
        let square = Tensor::<f64>::from_rows(&[&[1.0, 1.0], &[1.0, 2.0], &[2.0, 1.0], &[2.0, 2.0]]).unwrap();
        let dg = DecomposedGrid::from_points(&square, &[1, 1]).unwrap();
        assert_eq!(dg.branches[0].data(), &[1.0, 2.0]);
        assert_eq!(dg.branches[1].data(), &[1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn decompose_recompose_round_trip(
            extents in proptest::collection::vec(1usize..5, 1..5),
            split in 0usize..4,
        ) {
            let k = extents.len();
            let first = 1 + split % k;
            let spec: Vec<usize> = if first == k { vec![k] } else { vec![first, k - first] };
            let g = make_grid(&extents).unwrap().with_branches(&spec).unwrap();
            let dg = g.decompose();
            prop_assert_eq!(dg.num_branches(), spec.len());
            prop_assert_eq!(dg.branch_dims(), spec.clone());
            prop_assert_eq!(dg.branch_extents(), g.branch_extents());
            let pts = dg.recompose();
            prop_assert_eq!(&pts, &g.points());
            prop_assert_eq!(DecomposedGrid::from_points(&pts, &spec), Some(dg));
        }
    }
}
