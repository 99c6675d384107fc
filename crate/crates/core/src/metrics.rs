//! PSNR and occupancy IoU.

use std::io::Write;

use crate::error::{config_err, dim_err, Result};
use crate::rng::Rng;
use crate::signal::Shape;
use crate::tensor::Tensor;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10·log10(1 / MSE)` after clamping both inputs to `[0, 1]`, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(dim_err!(
            "psnr inputs have {} and {} values",
            pred.len(),
            truth.len()
        ));
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p.clamp(0.0, 1.0) - t.clamp(0.0, 1.0)).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// `|pred ∧ truth| / |pred ∨ truth|`; an empty union counts as a perfect
/// match.
pub fn iou(pred: &[bool], truth: &[bool]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(dim_err!("iou label lengths {} vs {}", pred.len(), truth.len()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Occupancy decision: `sigmoid(logit) > 0.5`, i.e. `logit > 0`.
pub fn labels_from_logits(logits: &[f64]) -> Vec<bool> {
    logits.iter().map(|&l| l > 0.0).collect()
}

/// Evaluation points for occupancy IoU.
#[derive(Debug, Clone, PartialEq)]
pub struct IouPointSets {
    /// Uniform samples in `[-1, 1]³`, `[n × 3]`.
    pub easy: Tensor,
    pub easy_labels: Vec<bool>,
    /// Samples within `band` of the surface, `[n × 3]`.
    pub hard: Tensor,
    pub hard_labels: Vec<bool>,
    pub band: f64,
}

const MAX_ATTEMPTS_PER_POINT: usize = 100_000;

pub fn build_iou_sets(shape: &Shape, n: usize, band: f64, rng: &mut Rng) -> Result<IouPointSets> {
    if n == 0 || !(band > 0.0) {
        return Err(config_err!("IoU sets need n > 0 and a positive band"));
    }
    let mut point = || [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
    let easy: Vec<[f64; 3]> = (0..n).map(|_| point()).collect();
    let mut hard = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while hard.len() < n {
        attempts += 1;
        if attempts > n * MAX_ATTEMPTS_PER_POINT {
            return Err(config_err!(
                "rejection sampling found only {} of {n} points within band {band}",
                hard.len()
            ));
        }
        let p = point();
        if shape.signed_distance(&p).abs() <= band {
            hard.push(p);
        }
    }
    let labels = |pts: &[[f64; 3]]| pts.iter().map(|p| shape.contains(p)).collect::<Vec<_>>();
    let to_tensor = |pts: &[[f64; 3]]| Tensor::from_vec(vec![pts.len(), 3], pts.concat()).unwrap();
    Ok(IouPointSets {
        easy_labels: labels(&easy),
        hard_labels: labels(&hard),
        easy: to_tensor(&easy),
        hard: to_tensor(&hard),
        band,
    })
}

impl IouPointSets {
    /// Writes `set,x,y,z,label` rows for both sets.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "set,x,y,z,label")?;
        for (name, pts, labels) in [
            ("easy", &self.easy, &self.easy_labels),
            ("hard", &self.hard, &self.hard_labels),
        ] {
            for (r, &l) in labels.iter().enumerate() {
                let p = pts.row(r);
                writeln!(w, "{name},{},{},{},{}", p[0], p[1], p[2], l as u8)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let a = vec![0.3; 10];
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &b[..3]).is_err());
        // Clamping: values outside [0, 1] compare as their clamped value.
        assert_eq!(psnr(&[1.5], &[1.0]).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_monotone_in_noise() {
        let truth: Vec<f64> = (0..100).map(|i| 0.2 + 0.005 * i as f64).collect();
        let mut rng = Rng::new(1);
        let signs: Vec<f64> = (0..100).map(|_| if rng.below(2) == 0 { -1.0 } else { 1.0 }).collect();
        let mut last = f64::INFINITY;
        for k in 1..=10 {
            let amp = 0.01 * k as f64;
            let noisy: Vec<f64> = truth.iter().zip(&signs).map(|(t, s)| t + amp * s).collect();
            let p = psnr(&noisy, &truth).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn iou_cases() {
        let a = [true, false, true];
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&[true, false], &[false, true]).unwrap(), 0.0);
        assert_eq!(iou(&[false, false], &[false, false]).unwrap(), 1.0);
        assert_eq!(iou(&[true, true, false], &[true, false, true]).unwrap(), 1.0 / 3.0);
        assert!(iou(&a, &a[..2]).is_err());
    }

    #[test]
    fn iou_sets_follow_the_oracle() {
        let shape = Shape::Sphere { radius: 0.5 };
        let sets = build_iou_sets(&shape, 500, 0.05, &mut Rng::new(2)).unwrap();
        for r in 0..500 {
            assert_eq!(sets.easy_labels[r], shape.contains(sets.easy.row(r)));
            assert!(shape.signed_distance(sets.hard.row(r)).abs() <= 0.05);
            assert_eq!(sets.hard_labels[r], shape.contains(sets.hard.row(r)));
        }
        let mut csv = Vec::new();
        sets.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1001);
    }

    #[test]
    fn hard_set_inside_fraction_matches_shell_volumes() {
        // Inside shell (0.45, 0.5) vs outside shell (0.5, 0.55).
        let inner = 0.5f64.powi(3) - 0.45f64.powi(3);
        let outer = 0.55f64.powi(3) - 0.5f64.powi(3);
        let expected = inner / (inner + outer);
        assert!((expected - 0.4502).abs() < 1e-4);
        let shape = Shape::Sphere { radius: 0.5 };
        let sets = build_iou_sets(&shape, 20_000, 0.05, &mut Rng::new(3)).unwrap();
        let frac = sets.hard_labels.iter().filter(|&&l| l).count() as f64 / 20_000.0;
        // Binomial standard error is about 0.0035.
        assert!((frac - expected).abs() < 0.015, "{frac}");
        assert!((frac - 0.5).abs() <= 0.05 + 0.015);
    }
}
