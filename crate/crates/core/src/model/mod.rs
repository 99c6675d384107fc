//! Baseline coordinate MLPs and the CoordX split architecture.
//!
//! Layer groups, in checkpoint order:
//!
//! - `first`: one input layer per branch (a single layer for the baseline),
//! - `trunk`: the remaining pre-fusion layers, shared by every branch,
//! - `tail`: the `D_f` layers applied to fused per-point features.
//!
//! Every layer carries a bias. All layers are activated except the final
//! output layer; fused features feed the tail without an activation.

mod backward;
mod forward;
mod fusion;
mod ops;
mod params;

use serde::{Deserialize, Serialize};

use crate::encoding::{ActivationSpec, EncodingSpec};
use crate::error::{config_err, Result};

pub use forward::{ForwardCache, Input};
pub use fusion::{fuse, fuse_per_point};
pub use ops::{count_fc_ops, count_fc_ops_uniform};
pub use params::{Dense, Model, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Product,
    Sum,
    Concat,
}

/// Capacity augmentation for `R > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Augment {
    /// Fused width is `S = M / R`.
    #[default]
    None,
    /// Only the last pre-fusion layer is widened to `R·M`.
    Plus,
    /// Every pre-fusion layer is widened to `R·M`.
    PlusPlus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    /// Input dimensions per branch (`K_i`), consecutive, summing to `K`.
    pub branches: Vec<usize>,
    /// Layers before fusion (`D_s`), including the split first layer.
    pub pre_fusion: usize,
    /// Reduction extent `R` of the fusion.
    #[serde(default = "one")]
    pub reduce: usize,
    #[serde(default)]
    pub augment: Augment,
    #[serde(default)]
    pub fusion: Fusion,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub width: usize,
    pub depth: usize,
    #[serde(default)]
    pub encoding: EncodingSpec,
    #[serde(default)]
    pub activation: ActivationSpec,
    /// `None` is the baseline coordinate MLP.
    #[serde(default)]
    pub split: Option<SplitSpec>,
}

/// Resolved layer shapes `(fan_in, fan_out)` per group.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub first: Vec<(usize, usize)>,
    pub trunk: Vec<(usize, usize)>,
    pub tail: Vec<(usize, usize)>,
    /// Per-branch input dimensions before encoding.
    pub branch_dims: Vec<usize>,
    pub reduce: usize,
    /// Fused feature width after reduction, `S`.
    pub fused_width: usize,
    pub fusion: Option<Fusion>,
}

impl LayerPlan {
    pub fn num_layers(&self) -> usize {
        1 + self.trunk.len() + self.tail.len()
    }
}

impl ModelSpec {
    pub fn baseline(in_dim: usize, out_dim: usize, width: usize, depth: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            width,
            depth,
            encoding: EncodingSpec::None,
            activation: ActivationSpec::default(),
            split: None,
        }
    }

    /// CoordX with one branch per input dimension.
    pub fn coordx(in_dim: usize, out_dim: usize, width: usize, depth: usize, post_fusion: usize) -> Self {
        Self {
            split: Some(SplitSpec {
                branches: vec![1; in_dim],
                pre_fusion: depth - post_fusion,
                reduce: 1,
                augment: Augment::None,
                fusion: Fusion::Product,
            }),
            ..Self::baseline(in_dim, out_dim, width, depth)
        }
    }

    pub fn with_activation(mut self, a: ActivationSpec) -> Self {
        self.activation = a;
        self
    }

    pub fn with_encoding(mut self, e: EncodingSpec) -> Self {
        self.encoding = e;
        self
    }

    pub fn with_split(mut self, f: impl FnOnce(&mut SplitSpec)) -> Self {
        if let Some(s) = self.split.as_mut() {
            f(s);
        }
        self
    }

    pub fn is_split(&self) -> bool {
        self.split.is_some()
    }

    /// Number of layers after fusion; the baseline has none by convention.
    pub fn post_fusion(&self) -> usize {
        self.split
            .as_ref()
            .map_or(0, |s| self.depth.saturating_sub(s.pre_fusion))
    }

    pub fn branch_spec(&self) -> Vec<usize> {
        self.split
            .as_ref()
            .map_or_else(|| vec![self.in_dim], |s| s.branches.clone())
    }

    pub fn num_branches(&self) -> usize {
        self.branch_spec().len()
    }

    /// The unsplit counterpart with the same `(K, O, M, D)`, encoding and
    /// activation.
    pub fn to_baseline(&self) -> Self {
        Self {
            split: None,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    pub fn plan(&self) -> Result<LayerPlan> {
        let (k, o, m, d) = (self.in_dim, self.out_dim, self.width, self.depth);
        if k == 0 || o == 0 || m == 0 || d == 0 {
            return Err(config_err!(
                "in_dim, out_dim, width and depth must be positive"
            ));
        }
        self.encoding.validate()?;
        if let ActivationSpec::Sine { omega0 } = self.activation {
            if !(omega0 > 0.0 && omega0.is_finite()) {
                return Err(config_err!("omega0 must be positive, got {omega0}"));
            }
        }
        let enc = |k| self.encoding.width(k);
        let Some(split) = &self.split else {
            let widths: Vec<usize> = (0..=d)
                .map(|l| match l {
                    0 => enc(k),
                    l if l == d => o,
                    _ => m,
                })
                .collect();
            let layers: Vec<_> = widths.windows(2).map(|w| (w[0], w[1])).collect();
            return Ok(LayerPlan {
                first: vec![layers[0]],
                trunk: layers[1..].to_vec(),
                tail: vec![],
                branch_dims: vec![k],
                reduce: 1,
                fused_width: o,
                fusion: None,
            });
        };

        let (ds, r) = (split.pre_fusion, split.reduce);
        if split.branches.is_empty() || split.branches.contains(&0) {
            return Err(config_err!("branch sizes must be positive"));
        }
        if split.branches.iter().sum::<usize>() != k {
            return Err(config_err!(
                "branch sizes {:?} do not sum to in_dim {k}",
                split.branches
            ));
        }
        if ds < 1 || ds > d {
            return Err(config_err!("pre_fusion must be in 1..={d}, got {ds}"));
        }
        if r < 1 {
            return Err(config_err!("reduce must be >= 1"));
        }
        let df = d - ds;
        let c = split.branches.len();
        if df == 0 && split.fusion == Fusion::Concat {
            return Err(config_err!(
                "concat fusion needs at least one layer after fusion"
            ));
        }
        let wide = |aug: bool| if aug { r * m } else { m };
        let pre_out: Vec<usize> = (1..=ds)
            .map(|j| {
                if j == ds {
                    if df == 0 {
                        r * o
                    } else {
                        wide(split.augment != Augment::None)
                    }
                } else {
                    wide(split.augment == Augment::PlusPlus)
                }
            })
            .collect();
        let last = pre_out[ds - 1];
        if !last.is_multiple_of(r) {
            return Err(config_err!(
                "pre-fusion width {last} is not divisible by R = {r}"
            ));
        }
        let s = last / r;
        let first = split
            .branches
            .iter()
            .map(|&ki| (enc(ki), pre_out[0]))
            .collect();
        let trunk = pre_out.windows(2).map(|w| (w[0], w[1])).collect();
        let fused_in = if split.fusion == Fusion::Concat { c * s } else { s };
        let tail = (1..=df)
            .map(|l| {
                let fin = if l == 1 { fused_in } else { m };
                let fout = if l == df { o } else { m };
                (fin, fout)
            })
            .collect();
        Ok(LayerPlan {
            first,
            trunk,
            tail,
            branch_dims: split.branches.clone(),
            reduce: r,
            fused_width: s,
            fusion: Some(split.fusion),
        })
    }
}
