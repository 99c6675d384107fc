use crate::encoding::{siren_init, ActivationSpec};
use crate::error::{config_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{LayerPlan, ModelSpec};

/// Fully connected layer `y = x·W + b` with `W` stored `[fan_in × fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar = f64> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar = f64> {
    pub first: Vec<Dense<T>>,
    pub trunk: Vec<Dense<T>>,
    pub tail: Vec<Dense<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(plan: &LayerPlan) -> Self {
        let mk = |v: &[(usize, usize)]| v.iter().map(|&(i, o)| Dense::zeros(i, o)).collect();
        Self {
            first: mk(&plan.first),
            trunk: mk(&plan.trunk),
            tail: mk(&plan.tail),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mk = |v: &[Dense<T>]| v.iter().map(|d| Dense::zeros(d.fan_in(), d.fan_out())).collect();
        Self {
            first: mk(&self.first),
            trunk: mk(&self.trunk),
            tail: mk(&self.tail),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense<T>> {
        self.first.iter().chain(&self.trunk).chain(&self.tail)
    }

    /// Weight and bias tensors in checkpoint order (branches, trunk, tail).
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers().flat_map(|d| [&d.weight, &d.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.first
            .iter_mut()
            .chain(&mut self.trunk)
            .chain(&mut self.tail)
            .flat_map(|d| [&mut d.weight, &mut d.bias])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Dense::num_params).sum()
    }

    /// Weight-matrix entries only, biases excluded.
    pub fn num_weights(&self) -> usize {
        self.layers().map(|d| d.weight.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            first: self.first.iter().map(Dense::cast).collect(),
            trunk: self.trunk.iter().map(Dense::cast).collect(),
            tail: self.tail.iter().map(Dense::cast).collect(),
        }
    }

    pub fn matches_plan(&self, plan: &LayerPlan) -> bool {
        let shapes = |v: &[Dense<T>]| v.iter().map(|d| (d.fan_in(), d.fan_out())).collect::<Vec<_>>();
        shapes(&self.first) == plan.first
            && shapes(&self.trunk) == plan.trunk
            && shapes(&self.tail) == plan.tail
    }
}

/// A spec together with a matching parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f64> {
    pub spec: ModelSpec,
    pub params: ModelParams<T>,
    pub(crate) plan: LayerPlan,
}

impl<T: Scalar> Model<T> {
    /// Random initialization: SIREN scheme for sine networks, uniform
    /// `±1/√fan_in` otherwise. Biases are `U(±1/√fan_in)` in both cases.
    pub fn init(spec: ModelSpec, rng: &Rng) -> Result<Self> {
        let plan = spec.plan()?;
        let mut layer_id = 0u64;
        let mut make = |fan_in: usize, fan_out: usize, is_first: bool| -> Result<Dense<T>> {
            let mut r = rng.split(layer_id);
            layer_id += 1;
            let weight = match spec.activation {
                ActivationSpec::Sine { omega0 } => {
                    siren_init(&mut r, fan_in, fan_out, is_first, omega0)?.transpose()?
                }
                ActivationSpec::Relu => {
                    let b = 1.0 / (fan_in as f64).sqrt();
                    Tensor::from_vec(
                        vec![fan_in, fan_out],
                        (0..fan_in * fan_out).map(|_| r.uniform(-b, b)).collect(),
                    )?
                }
            };
            let bb = 1.0 / (fan_in as f64).sqrt();
            let bias = Tensor::from_vec(vec![fan_out], (0..fan_out).map(|_| r.uniform(-bb, bb)).collect())?;
            Ok(Dense {
                weight: weight.cast(),
                bias: bias.cast(),
            })
        };
        let first = plan.first.iter().map(|&(i, o)| make(i, o, true)).collect::<Result<_>>()?;
        let trunk = plan.trunk.iter().map(|&(i, o)| make(i, o, false)).collect::<Result<_>>()?;
        let tail = plan.tail.iter().map(|&(i, o)| make(i, o, false)).collect::<Result<_>>()?;
        Ok(Self {
            spec,
            params: ModelParams { first, trunk, tail },
            plan,
        })
    }

    pub fn from_params(spec: ModelSpec, params: ModelParams<T>) -> Result<Self> {
        let plan = spec.plan()?;
        if !params.matches_plan(&plan) {
            return Err(config_err!("parameter shapes do not match the model spec"));
        }
        Ok(Self { spec, params, plan })
    }

    pub fn plan(&self) -> &LayerPlan {
        &self.plan
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            params: self.params.cast(),
            plan: self.plan.clone(),
        }
    }

    pub fn with_params(&self, params: ModelParams<T>) -> Self {
        Self {
            spec: self.spec.clone(),
            params,
            plan: self.plan.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Augment, Fusion};

    #[test]
    fn init_is_deterministic_and_shaped() {
        let spec = ModelSpec::coordx(2, 3, 16, 4, 2);
        let a = Model::<f64>::init(spec.clone(), &Rng::new(1)).unwrap();
        let b = Model::<f64>::init(spec, &Rng::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params.first.len(), 2);
        assert_eq!(a.params.trunk.len(), 1);
        assert_eq!(a.params.tail.len(), 2);
        assert_eq!(a.params.tensors().len(), 10);
    }

    #[test]
    fn split_partitions_first_layer_weights() {
        for (k, c_spec) in [(2, vec![1, 1]), (3, vec![1, 1, 1]), (3, vec![2, 1])] {
            let spec = ModelSpec {
                encoding: crate::encoding::EncodingSpec::Positional { d: 3 },
                ..ModelSpec::coordx(k, 3, 16, 5, 2)
            }
            .with_split(|s| s.branches = c_spec.clone());
            let cx = Model::<f64>::init(spec.clone(), &Rng::new(0)).unwrap();
            let base = Model::<f64>::init(spec.to_baseline(), &Rng::new(0)).unwrap();
            assert_eq!(cx.params.num_weights(), base.params.num_weights());
            // Per-branch first-layer biases add (C-1)·M entries.
            assert_eq!(
                cx.params.num_params(),
                base.params.num_params() + (c_spec.len() - 1) * 16
            );
        }
    }

    #[test]
    fn augmented_models_are_larger() {
        let base = ModelSpec::coordx(2, 3, 16, 5, 2).with_split(|s| s.reduce = 2);
        let n = |s: ModelSpec| Model::<f64>::init(s, &Rng::new(0)).unwrap().params.num_params();
        let none = n(base.clone());
        let plus = n(base.clone().with_split(|s| s.augment = Augment::Plus));
        let pp = n(base.clone().with_split(|s| s.augment = Augment::PlusPlus));
        assert!(none < plus && plus < pp);
        let cat = n(ModelSpec::coordx(2, 3, 16, 5, 2).with_split(|s| s.fusion = Fusion::Concat));
        let prod = n(ModelSpec::coordx(2, 3, 16, 5, 2));
        assert_eq!(cat - prod, 16 * 16);
    }

    #[test]
    fn from_params_checks_shapes() {
        let m = Model::<f64>::init(ModelSpec::coordx(2, 1, 8, 3, 1), &Rng::new(0)).unwrap();
        let other = ModelSpec::coordx(2, 1, 9, 3, 1);
        assert!(Model::from_params(other, m.params.clone()).is_err());
        assert!(Model::from_params(m.spec.clone(), m.params.clone()).is_ok());
    }
}
