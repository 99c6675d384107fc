use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean squared error over all elements and its gradient `2(p - t)/n`.
pub fn loss_mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.len() != target.len() {
        return Err(dim_err!(
            "mse shapes {:?} vs {:?}",
            pred.shape(),
            target.shape()
        ));
    }
    let n = pred.len() as f64;
    let scale = T::from_f64(2.0 / n);
    let mut sum = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            sum += d.to_f64() * d.to_f64();
            scale * d
        })
        .collect();
    Ok((sum / n, Tensor::from_vec(pred.shape().to_vec(), grad)?))
}

/// Binary cross-entropy on logits, averaged, in the overflow-free form
/// `max(l, 0) - l·y + ln(1 + e^{-|l|})`. Gradient is `(σ(l) - y)/n`.
pub fn loss_bce_logits<T: Scalar>(logits: &Tensor<T>, labels: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if logits.len() != labels.len() {
        return Err(dim_err!(
            "bce shapes {:?} vs {:?}",
            logits.shape(),
            labels.shape()
        ));
    }
    let n = logits.len() as f64;
    let mut sum = 0.0;
    let grad = logits
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&l, &y)| {
            let (l, y) = (l.to_f64(), y.to_f64());
            sum += l.max(0.0) - l * y + (-l.abs()).exp().ln_1p();
            T::from_f64((sigmoid(l) - y) / n)
        })
        .collect();
    Ok((sum / n, Tensor::from_vec(logits.shape().to_vec(), grad)?))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn mse_cases() {
        let a = t(&[0.2, 0.4]);
        assert_eq!(loss_mse(&a, &a).unwrap().0, 0.0);
        assert_eq!(loss_mse(&t(&[1.0, 0.0]), &t(&[0.0, 0.0])).unwrap().0, 0.5);
        assert!(loss_mse(&a, &t(&[1.0])).is_err());
    }

    #[test]
    fn mse_gradient_matches_fd() {
        let mut rng = Rng::new(0);
        let p: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y = t(&(0..6).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>());
        let (_, g) = loss_mse(&t(&p), &y).unwrap();
        let h = 1e-6;
        for i in 0..6 {
            let mut a = p.clone();
            a[i] += h;
            let mut b = p.clone();
            b[i] -= h;
            let fd = (loss_mse(&t(&a), &y).unwrap().0 - loss_mse(&t(&b), &y).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() <= 1e-6 * fd.abs().max(1e-3));
        }
    }

    #[test]
    fn bce_cases() {
        let (l, g) = loss_bce_logits(&t(&[0.0]), &t(&[1.0])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g.data()[0] + 0.5).abs() < 1e-15);
        let (l, _) = loss_bce_logits(&t(&[800.0]), &t(&[1.0])).unwrap();
        assert!(l.abs() < 1e-300);
        let (l, _) = loss_bce_logits(&t(&[-800.0]), &t(&[1.0])).unwrap();
        assert!(l.is_finite() && (l - 800.0).abs() < 1e-9);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let mut rng = Rng::new(1);
        let logits: Vec<f64> = (0..50).map(|_| rng.uniform(-6.0, 6.0)).collect();
        let labels: Vec<f64> = (0..50).map(|_| rng.below(2) as f64).collect();
        let (l, _) = loss_bce_logits(&t(&logits), &t(&labels)).unwrap();
        let direct = logits
            .iter()
            .zip(&labels)
            .map(|(&x, &y)| {
                let s = 1.0 / (1.0 + (-x).exp());
                -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
            })
            .sum::<f64>()
            / 50.0;
        assert!((l - direct).abs() < 1e-10);
    }
}
