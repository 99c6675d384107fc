//! Scalar reference implementations used as test oracles.
#![allow(dead_code)]

use coordx::encoding::{ActivationSpec, EncodingSpec};
use coordx::model::{Dense, Fusion};
use coordx::Model;

fn encode(x: &[f64], enc: EncodingSpec) -> Vec<f64> {
    match enc {
        EncodingSpec::None => x.to_vec(),
        EncodingSpec::Positional { d } => {
            let mut out = Vec::new();
            for &p in x {
                for j in 0..d {
                    let a = 2f64.powi(j as i32) * std::f64::consts::PI * p;
                    out.push(a.sin());
                    out.push(a.cos());
                }
            }
            out.extend_from_slice(x);
            out
        }
    }
}

fn dense(x: &[f64], layer: &Dense, act: Option<ActivationSpec>) -> Vec<f64> {
    let (fin, fout) = (layer.fan_in(), layer.fan_out());
    assert_eq!(x.len(), fin);
    let w = layer.weight.data();
    (0..fout)
        .map(|o| {
            let mut z = 0.0;
            for i in 0..fin {
                z += x[i] * w[i * fout + o];
            }
            z += layer.bias.data()[o];
            match act {
                None => z,
                Some(ActivationSpec::Relu) => z.max(0.0),
                Some(ActivationSpec::Sine { omega0 }) => (omega0 * z).sin(),
            }
        })
        .collect()
}

/// Evaluates one point with plain loops, independent of the batched
/// forward pass.
pub fn oracle_point(model: &Model, p: &[f64]) -> Vec<f64> {
    let spec = &model.spec;
    let d = spec.depth;
    let act = |layer: usize| (layer + 1 != d).then_some(spec.activation);
    let params = &model.params;
    let Some(split) = &spec.split else {
        let mut h = dense(&encode(p, spec.encoding), &params.first[0], act(0));
        for (j, l) in params.trunk.iter().enumerate() {
            h = dense(&h, l, act(j + 1));
        }
        return h;
    };
    let mut feats = Vec::new();
    let mut off = 0;
    for (i, &k) in split.branches.iter().enumerate() {
        let mut h = dense(&encode(&p[off..off + k], spec.encoding), &params.first[i], act(0));
        for (j, l) in params.trunk.iter().enumerate() {
            h = dense(&h, l, act(j + 1));
        }
        feats.push(h);
        off += k;
    }
    let r = split.reduce;
    let s = feats[0].len() / r;
    let group_sum = |h: &[f64], c: usize| (0..r).map(|g| h[g * s + c]).sum::<f64>();
    let mut f: Vec<f64> = match split.fusion {
        Fusion::Product => (0..s)
            .map(|c| (0..r).map(|g| feats.iter().map(|h| h[g * s + c]).product::<f64>()).sum())
            .collect(),
        Fusion::Sum => (0..s).map(|c| feats.iter().map(|h| group_sum(h, c)).sum()).collect(),
        Fusion::Concat => feats.iter().flat_map(|h| (0..s).map(|c| group_sum(h, c)).collect::<Vec<_>>()).collect(),
    };
    let ds = split.pre_fusion;
    for (j, l) in params.tail.iter().enumerate() {
        f = dense(&f, l, act(ds + j));
    }
    f
}

/// `max |a - b| / max(max |b|, 1e-300)` over all entries.
pub fn normwise_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}
