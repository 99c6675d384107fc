//! Operation counts and wall-clock timing of baseline vs split inference.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::error::{config_err, Error, Result};
use crate::exec::{self, ExecMode};
use crate::grid::make_grid;
use crate::model::{count_fc_ops, count_fc_ops_uniform, Model, ModelSpec};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Relative tolerance of the analytic identity between the uniform-width
/// op-count ratio and the predicted speedup.
pub const GAMMA_TOLERANCE: f64 = 1e-12;

/// Baseline timings below this are treated as call-overhead noise.
pub const OVERHEAD_FLOOR_MS: f64 = 1.0;

/// Predicted speedup `(λ + 1) / (λ·C·B^(1-C) + 1)` with `λ = D_s / D_f` for
/// `C` branches of `B` positions each.
pub fn gamma_theoretical(d_s: usize, d_f: usize, c: usize, b: usize) -> Result<f64> {
    if d_f == 0 {
        return Err(Error::UseOpCountRatio);
    }
    if c == 0 || b == 0 {
        return Err(config_err!("gamma needs C ≥ 1 and B ≥ 1"));
    }
    let lambda = d_s as f64 / d_f as f64;
    let (c, b) = (c as f64, b as f64);
    Ok((lambda + 1.0) / (lambda * c * b.powf(1.0 - c) + 1.0))
}

/// The `B → ∞` limit `λ + 1`.
pub fn gamma_bound(d_s: usize, d_f: usize) -> Result<f64> {
    if d_f == 0 {
        return Err(Error::UseOpCountRatio);
    }
    Ok(d_s as f64 / d_f as f64 + 1.0)
}

/// Median and median absolute deviation of repeated timings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub median_ms: f64,
    pub mad_ms: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `f` `warmup` times untimed, then `trials` times on a monotonic
/// clock.
pub fn time_ms(warmup: usize, trials: usize, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let med = median(&mut samples);
    let mut dev: Vec<f64> = samples.iter().map(|s| (s - med).abs()).collect();
    Ok(Timing {
        median_ms: med,
        mad_ms: median(&mut dev),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    /// Lattice extents per record, e.g. `[[128, 128], [256, 256]]`.
    pub extents: Vec<Vec<usize>>,
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
    pub mode: ExecMode,
}

impl BenchConfig {
    pub fn new(extents: Vec<Vec<usize>>) -> Self {
        Self {
            extents,
            trials: 5,
            warmup: 2,
            seed: 0,
            mode: ExecMode::Sequential,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 5 {
            return Err(config_err!("bench needs at least 5 trials, got {}", self.trials));
        }
        if self.warmup < 2 {
            return Err(config_err!("bench needs at least 2 warmup passes, got {}", self.warmup));
        }
        if self.extents.is_empty() {
            return Err(config_err!("bench needs at least one extent"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub extents: Vec<usize>,
    pub n: usize,
    /// `None` when the branches differ in length or `D_f = 0`.
    pub predicted_gamma: Option<f64>,
    pub ma_baseline: u128,
    pub ma_coordx: u128,
    /// Ratio of exact multiply-add counts.
    pub ma_ratio: f64,
    /// Ratio with every layer charged `M²` per row; equals the prediction.
    pub uniform_ma_ratio: f64,
    pub t_baseline: Timing,
    pub t_coordx: Timing,
    pub trials: usize,
    pub precision: &'static str,
    pub mode: ExecMode,
    pub overhead_dominated: bool,
}

impl BenchRecord {
    pub fn wall_ratio(&self) -> f64 {
        self.t_baseline.median_ms / self.t_coordx.median_ms
    }

    /// Exact-count correction from the first and last layer widths.
    pub fn width_correction(&self) -> f64 {
        self.ma_ratio - self.uniform_ma_ratio
    }

    pub fn extent_label(&self) -> String {
        self.extents
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join("x")
    }
}

/// Times baseline and split inference over each configured lattice.
///
/// Both models are initialized from `config.seed`; inputs are built outside
/// the timed region. Execution is pinned to `config.mode` for the duration.
pub fn run_bench<T: Scalar>(baseline: &ModelSpec, coordx: &ModelSpec, config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    config.validate()?;
    if baseline.is_split() || !coordx.is_split() {
        return Err(config_err!("run_bench needs a baseline spec and a split spec"));
    }
    let same = |a: &ModelSpec, b: &ModelSpec| (a.in_dim, a.out_dim, a.width, a.depth) == (b.in_dim, b.out_dim, b.width, b.depth);
    if !same(baseline, coordx) {
        return Err(config_err!("bench specs must share K, O, M and D"));
    }
    let rng = Rng::new(config.seed);
    let base: Model<T> = Model::init(baseline.clone(), &rng)?;
    let split: Model<T> = Model::init(coordx.clone(), &rng)?;
    let branch_spec = coordx.branch_spec();
    exec::with_mode(config.mode, || {
        config
            .extents
            .iter()
            .map(|extents| {
                let grid = make_grid(extents)?.with_branches(&branch_spec)?;
                let points = grid.points();
                let dg = grid.decompose();
                let branch_extents = dg.branch_extents();
                let n = grid.num_points();
                let ma_baseline = count_fc_ops(baseline, &[n])?;
                let ma_coordx = count_fc_ops(coordx, &branch_extents)?;
                let uniform_ma_ratio = count_fc_ops_uniform(baseline, &[n])? as f64
                    / count_fc_ops_uniform(coordx, &branch_extents)? as f64;
                let d_f = coordx.post_fusion();
                let equal = branch_extents.windows(2).all(|w| w[0] == w[1]);
                let predicted_gamma = if equal {
                    gamma_theoretical(coordx.depth - d_f, d_f, branch_extents.len(), branch_extents[0]).ok()
                } else {
                    None
                };
                let t_baseline = time_ms(config.warmup, config.trials, || base.forward_points(&points).map(drop))?;
                let t_coordx = time_ms(config.warmup, config.trials, || split.forward_coordx(&dg).map(drop))?;
                Ok(BenchRecord {
                    extents: extents.clone(),
                    n,
                    predicted_gamma,
                    ma_baseline,
                    ma_coordx,
                    ma_ratio: ma_baseline as f64 / ma_coordx as f64,
                    uniform_ma_ratio,
                    t_baseline,
                    t_coordx,
                    trials: config.trials,
                    precision: T::NAME,
                    mode: config.mode,
                    overhead_dominated: t_baseline.median_ms < OVERHEAD_FLOOR_MS,
                })
            })
            .collect()
    })
}

pub fn write_csv(records: &[BenchRecord], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "extent,N,predicted_gamma,ma_ratio,t_baseline_ms,t_coordx_ms,ratio,uniform_ma_ratio,t_baseline_mad_ms,t_coordx_mad_ms,trials,precision,overhead_dominated"
    )?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.extent_label(),
            r.n,
            r.predicted_gamma.map_or_else(String::new, |g| g.to_string()),
            r.ma_ratio,
            r.t_baseline.median_ms,
            r.t_coordx.median_ms,
            r.wall_ratio(),
            r.uniform_ma_ratio,
            r.t_baseline.mad_ms,
            r.t_coordx.mad_ms,
            r.trials,
            r.precision,
            r.overhead_dominated
        )?;
    }
    Ok(())
}

/// Summary of a bench sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    /// Every record with a prediction matched it within [`GAMMA_TOLERANCE`].
    pub gamma_match: bool,
    /// Wall-clock ratio never decreased across the sweep, ignoring
    /// overhead-dominated records.
    pub wall_monotone: bool,
    pub largest_wall_ratio: f64,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.gamma_match
    }
}

pub fn verdict(records: &[BenchRecord]) -> Verdict {
    let gamma_match = records.iter().all(|r| {
        r.predicted_gamma
            .is_none_or(|g| (r.uniform_ma_ratio - g).abs() <= GAMMA_TOLERANCE * g)
    });
    let timed: Vec<f64> = records
        .iter()
        .filter(|r| !r.overhead_dominated)
        .map(BenchRecord::wall_ratio)
        .collect();
    Verdict {
        gamma_match,
        wall_monotone: timed.windows(2).all(|w| w[1] >= w[0]),
        largest_wall_ratio: records.last().map_or(f64::NAN, BenchRecord::wall_ratio),
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "op-count ratio vs predicted gamma: {}",
            if self.gamma_match { "PASS" } else { "FAIL" }
        )?;
        writeln!(
            f,
            "wall-clock ratio monotone in extent: {}",
            if self.wall_monotone { "yes" } else { "no" }
        )?;
        write!(f, "wall-clock ratio at largest extent: {:.3}", self.largest_wall_ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_cases() {
        assert!((gamma_theoretical(3, 2, 2, 512).unwrap() - 2.4854).abs() < 1e-4);
        // Direct evaluation: 2.5 / (1.5 · 2 / 512 + 1).
        let direct = 2.5 / (1.5 * 2.0 / 512.0 + 1.0);
        assert!((gamma_theoretical(3, 2, 2, 512).unwrap() - direct).abs() < 1e-15);
        for b in [1, 7, 1000] {
            assert!((gamma_theoretical(3, 2, 1, b).unwrap() - 1.0).abs() < 1e-15);
        }
        assert_eq!(gamma_bound(3, 2).unwrap(), 2.5);
        assert!((gamma_theoretical(3, 2, 2, 1 << 30).unwrap() - 2.5).abs() < 1e-8);
        assert!(matches!(gamma_theoretical(5, 0, 2, 16), Err(Error::UseOpCountRatio)));
    }

    #[test]
    fn timing_stats() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let mut calls = 0;
        let t = time_ms(2, 5, || {
            calls += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, 7);
        assert!(t.median_ms >= 0.0 && t.mad_ms >= 0.0);
    }

    #[test]
    fn small_sweep() {
        let base = ModelSpec::baseline(2, 1, 8, 5);
        let split = ModelSpec::coordx(2, 1, 8, 5, 2);
        let cfg = BenchConfig::new(vec![vec![1, 1], vec![16, 16]]);
        let recs = run_bench::<f32>(&base, &split, &cfg).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs[0].overhead_dominated);
        let v = verdict(&recs);
        assert!(v.gamma_match, "{recs:?}");
        let mut csv = Vec::new();
        write_csv(&recs, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.lines().nth(2).unwrap().starts_with("16x16,256,"));
    }

    #[test]
    fn config_checks() {
        let mut cfg = BenchConfig::new(vec![vec![4, 4]]);
        cfg.trials = 3;
        assert!(cfg.validate().is_err());
        let base = ModelSpec::baseline(2, 1, 8, 5);
        let other = ModelSpec::coordx(2, 1, 16, 5, 2);
        assert!(run_bench::<f64>(&base, &other, &BenchConfig::new(vec![vec![4, 4]])).is_err());
    }
}
