//! Input encodings, activations and SIREN initialization.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncodingSpec {
    #[default]
    None,
    /// `d` octaves of sin/cos per scalar, raw input appended.
    Positional { d: usize },
}

impl EncodingSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EncodingSpec::Positional { d } if d < 1 => {
                Err(config_err!("positional encoding needs d >= 1"))
            }
            _ => Ok(()),
        }
    }

    /// Width of the encoding of a `k`-dimensional point: `2kd + k`.
    pub fn width(&self, k: usize) -> usize {
        match *self {
            EncodingSpec::None => k,
            EncodingSpec::Positional { d } => 2 * k * d + k,
        }
    }

    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match *self {
            EncodingSpec::None => Ok(x.clone()),
            EncodingSpec::Positional { d } => positional_encode(x, d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActivationSpec {
    Relu,
    Sine {
        #[serde(default = "default_omega0")]
        omega0: f64,
    },
}

fn default_omega0() -> f64 {
    30.0
}

impl Default for ActivationSpec {
    fn default() -> Self {
        ActivationSpec::Sine { omega0: 30.0 }
    }
}

/// Per-scalar sinusoidal lifting: for every coordinate `p` emits
/// `sin(2^j π p), cos(2^j π p)` for `j = 0..d`, then the raw point.
pub fn positional_encode<T: Scalar>(x: &Tensor<T>, d: usize) -> Result<Tensor<T>> {
    if d < 1 {
        return Err(config_err!("positional encoding needs d >= 1"));
    }
    let k = x.last_dim();
    let width = 2 * k * d + k;
    let mut out = Vec::with_capacity(x.rows() * width);
    for row in x.data().chunks(k) {
        for &p in row {
            let p = p.to_f64();
            let mut freq = std::f64::consts::PI;
            for _ in 0..d {
                let (s, c) = (freq * p).sin_cos();
                out.push(T::from_f64(s));
                out.push(T::from_f64(c));
                freq *= 2.0;
            }
        }
        out.extend_from_slice(row);
    }
    Tensor::from_vec(vec![x.rows(), width], out)
}

/// SIREN weight initialization, shaped `[fan_out × fan_in]`.
///
/// First layer: `U(-1/fan_in, 1/fan_in)`. Other layers:
/// `U(-√(6/fan_in)/ω₀, √(6/fan_in)/ω₀)`.
pub fn siren_init(
    rng: &mut Rng,
    fan_in: usize,
    fan_out: usize,
    is_first: bool,
    omega0: f64,
) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(config_err!("siren_init needs positive fans"));
    }
    if !(omega0 > 0.0) {
        return Err(config_err!("omega0 must be positive, got {omega0}"));
    }
    let bound = siren_bound(fan_in, is_first, omega0);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Tensor::from_vec(vec![fan_out, fan_in], data)
}

pub fn siren_bound(fan_in: usize, is_first: bool, omega0: f64) -> f64 {
    if is_first {
        1.0 / fan_in as f64
    } else {
        (6.0 / fan_in as f64).sqrt() / omega0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    #[test]
    fn encode_zero() {
        let x = Tensor::<f64>::from_vec(vec![1, 1], vec![0.0]).unwrap();
        let e = positional_encode(&x, 2).unwrap();
        assert_eq!(e.data(), &[0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn encode_half() {
        let x = Tensor::<f64>::from_vec(vec![1, 1], vec![0.5]).unwrap();
        let e = positional_encode(&x, 1).unwrap();
        assert!((e.data()[0] - 1.0).abs() < 1e-15);
        assert!(e.data()[1].abs() < 1e-15);
        assert_eq!(e.data()[2], 0.5);
    }

    #[test]
    fn encode_width() {
        let x = Tensor::<f64>::zeros(&[3, 2]);
        assert_eq!(positional_encode(&x, 4).unwrap().shape(), &[3, 18]);
        assert_eq!(EncodingSpec::Positional { d: 4 }.width(2), 18);
        assert!(positional_encode(&x, 0).is_err());
        assert!(EncodingSpec::Positional { d: 0 }.validate().is_err());
    }

    #[test]
    fn siren_bounds() {
        let mut rng = Rng::new(0);
        let w = siren_init(&mut rng, 256, 64, false, 30.0).unwrap();
        assert_eq!(w.shape(), &[64, 256]);
        let b = (6.0f64 / 256.0).sqrt() / 30.0;
        assert!((b - 0.005103).abs() < 1e-6);
        assert!(w.data().iter().all(|v| v.abs() <= b));
        let w = siren_init(&mut rng, 1, 10, true, 30.0).unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 1.0));
        let a = siren_init(&mut Rng::new(5), 3, 4, false, 30.0).unwrap();
        let b = siren_init(&mut Rng::new(5), 3, 4, false, 30.0).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn encoded_values_bounded_and_rowwise(
            pts in proptest::collection::vec(-1.0f64..=1.0, 2..20), d in 1usize..6,
        ) {
            let n = pts.len() / 2;
            prop_assume!(n >= 1);
            let x = Tensor::<f64>::from_vec(vec![n, 2], pts[..2 * n].to_vec()).unwrap();
            let e = positional_encode(&x, d).unwrap();
            prop_assert!(e.data().iter().all(|v| v.abs() <= 1.0));
            let rev: Vec<usize> = (0..n).rev().collect();
            let er = positional_encode(&x.gather_rows(&rev).unwrap(), d).unwrap();
            prop_assert_eq!(er, e.gather_rows(&rev).unwrap());
        }

        #[test]
        fn siren_samples_within_bounds(
            fan_in in 1usize..300, fan_out in 1usize..8, first in any::<bool>(), seed in 0u64..100,
        ) {
            let w = siren_init(&mut Rng::new(seed), fan_in, fan_out, first, 30.0).unwrap();
            let b = siren_bound(fan_in, first, 30.0);
            prop_assert!(w.data().iter().all(|v| v.abs() <= b));
        }
    }
}
