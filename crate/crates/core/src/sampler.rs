//! Decomposable training batches.
//!
//! Positions are drawn per branch axis and the batch is their full Cartesian
//! product, so every batch can be fed to the split first layers directly.
//! With a budget of `N` points over axes of lengths `S_i`, each axis gets
//! about `μ·S_i` positions where `μ = (N / Π S_i)^(1/C)`.

use crate::error::{config_err, Error, Result};
use crate::grid::DecomposedGrid;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    pub target_n: usize,
    /// Axis length per branch (`S_i`).
    pub dims: Vec<usize>,
    pub mu: f64,
    /// Noise-free counts `round(μ·S_i)` clamped to `[1, S_i]`.
    pub per_axis_counts: Vec<usize>,
    /// Sample real positions in `[-1, 1]` instead of lattice indices.
    pub continuous: bool,
}

/// One training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledBatch {
    pub grid: DecomposedGrid,
    /// Per-branch row indices into the canonical lattice (discrete mode).
    pub indices: Option<Vec<Vec<usize>>>,
}

impl SamplePlan {
    pub fn new(n: usize, dims: &[usize], continuous: bool) -> Result<Self> {
        if n == 0 {
            return Err(config_err!("sample budget must be positive"));
        }
        if dims.is_empty() || dims.contains(&0) {
            return Err(config_err!("sampler axes must be nonempty and positive"));
        }
        let v: f64 = dims.iter().map(|&s| s as f64).product();
        let available: usize = dims.iter().product();
        if !continuous && n > available {
            return Err(Error::Budget {
                requested: n,
                available,
            });
        }
        let mu = (n as f64 / v).powf(1.0 / dims.len() as f64);
        let per_axis_counts = dims
            .iter()
            .map(|&s| clamp_count((mu * s as f64).round() as i64, s, continuous))
            .collect();
        Ok(Self {
            target_n: n,
            dims: dims.to_vec(),
            mu,
            per_axis_counts,
            continuous,
        })
    }

    pub fn num_axes(&self) -> usize {
        self.dims.len()
    }

    /// Per-axis counts with uniform integer noise in `{-1, 0, +1}` added to
    /// every axis, clamped to `[1, S_i]`.
    pub fn draw_counts(&self, rng: &mut Rng) -> Vec<usize> {
        self.dims
            .iter()
            .map(|&s| {
                let base = (self.mu * s as f64).round() as i64;
                clamp_count(base + rng.int_inclusive(-1, 1), s, self.continuous)
            })
            .collect()
    }

    /// Draws a batch: per-axis positions without replacement (discrete) or
    /// uniformly in `[-1, 1]` (continuous), combined as a Cartesian product.
    ///
    /// `lattice` is the canonical decomposed grid the positions index into;
    /// its branch extents must equal `dims`.
    pub fn sample(&self, lattice: &DecomposedGrid, rng: &mut Rng) -> Result<SampledBatch> {
        if lattice.branch_extents() != self.dims {
            return Err(config_err!(
                "lattice extents {:?} do not match sampler axes {:?}",
                lattice.branch_extents(),
                self.dims
            ));
        }
        let counts = self.draw_counts(rng);
        if self.continuous {
            let branches = lattice
                .branches
                .iter()
                .zip(&counts)
                .map(|(b, &c)| {
                    let k = b.last_dim();
                    Tensor::from_vec(vec![c, k], (0..c * k).map(|_| rng.uniform(-1.0, 1.0)).collect())
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(SampledBatch {
                grid: DecomposedGrid::new(branches)?,
                indices: None,
            });
        }
        let mut indices = Vec::with_capacity(counts.len());
        let mut branches = Vec::with_capacity(counts.len());
        for (b, (&s, &c)) in lattice.branches.iter().zip(self.dims.iter().zip(&counts)) {
            let mut idx = rng.choose_distinct(s, c);
            idx.sort_unstable();
            branches.push(b.gather_rows(&idx)?);
            indices.push(idx);
        }
        Ok(SampledBatch {
            grid: DecomposedGrid::new(branches)?,
            indices: Some(indices),
        })
    }
}

fn clamp_count(c: i64, s: usize, continuous: bool) -> usize {
    let hi = if continuous { i64::MAX } else { s as i64 };
    c.clamp(1, hi) as usize
}

/// Plain i.i.d. uniform point sampling over an `N`-point lattice, used for
/// baseline comparison runs.
pub fn sample_iid(total: usize, n: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.below(total)).collect()
}

/// Flat lattice indices of the Cartesian product of per-branch indices,
/// first branch slowest.
pub fn product_indices(indices: &[Vec<usize>], extents: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for (idx, &e) in indices.iter().zip(extents) {
        out = out
            .iter()
            .flat_map(|&base| idx.iter().map(move |&i| base * e + i))
            .collect();
    }
    out
}

/// True iff `points` is exactly the Cartesian product of its own per-branch
/// marginals (lexicographic order).
pub fn is_decomposable(points: &Tensor, branch_spec: &[usize]) -> bool {
    DecomposedGrid::from_points(points, branch_spec).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn plan_formulas() {
        let p = SamplePlan::new(256, &[16, 16], false).unwrap();
        assert_eq!(p.mu, 1.0);
        assert_eq!(p.per_axis_counts, vec![16, 16]);
        let p = SamplePlan::new(64, &[16, 16], false).unwrap();
        assert!((p.mu - 0.5).abs() < 1e-15);
        assert_eq!(p.per_axis_counts, vec![8, 8]);
        assert!(matches!(
            SamplePlan::new(300, &[16, 16], false),
            Err(Error::Budget { requested: 300, available: 256 })
        ));
        assert!(SamplePlan::new(300, &[16, 16], true).is_ok());
        assert!(SamplePlan::new(0, &[16], false).is_err());
    }

    #[test]
    fn single_point_batch() {
        let lattice = make_grid(&[5, 7]).unwrap().decompose();
        let plan = SamplePlan::new(1, &[5, 7], false).unwrap();
        assert_eq!(plan.per_axis_counts, vec![1, 1]);
        let mut rng = Rng::new(0);
        // Noise can only push a count of 1 up to 2, never below 1.
        for _ in 0..50 {
            let b = plan.sample(&lattice, &mut rng).unwrap();
            assert!(b.grid.branch_extents().iter().all(|&c| (1..=2).contains(&c)));
        }
    }

    #[test]
    fn batches_are_products_of_their_marginals() {
        let g = make_grid(&[6, 5, 4]).unwrap();
        let lattice = g.decompose();
        let plan = SamplePlan::new(30, &[6, 5, 4], false).unwrap();
        let full = g.points();
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let b = plan.sample(&lattice, &mut rng).unwrap();
            let pts = b.grid.recompose();
            assert!(is_decomposable(&pts, &[1, 1, 1]));
            let idx = b.indices.unwrap();
            let flat = product_indices(&idx, &[6, 5, 4]);
            assert_eq!(flat.len(), pts.rows());
            assert_eq!(full.gather_rows(&flat).unwrap(), pts);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let lattice = make_grid(&[9, 9]).unwrap().decompose();
        let plan = SamplePlan::new(20, &[9, 9], false).unwrap();
        let a = plan.sample(&lattice, &mut Rng::new(5)).unwrap();
        let b = plan.sample(&lattice, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn continuous_mode_draws_in_box() {
        let lattice = make_grid(&[8, 8]).unwrap().decompose();
        let plan = SamplePlan::new(16, &[8, 8], true).unwrap();
        let b = plan.sample(&lattice, &mut Rng::new(2)).unwrap();
        assert!(b.indices.is_none());
        assert!(b.grid.recompose().data().iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
