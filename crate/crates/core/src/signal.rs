//! Fitting targets: images, synthetic videos and analytic occupancy fields.
//!
//! Every signal lives on the normalized box `[-1, 1]^K`. Lattice signals
//! (images, videos) put sample centers on the canonical lattice, axis 0
//! first: images are `(row, column)`, videos `(row, column, frame)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::grid::{make_grid, CoordGrid};
use crate::pnm::Image8;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Sphere { radius: f64 },
    Torus { major: f64, minor: f64 },
}

impl Shape {
    /// Signed distance to the surface, negative inside.
    pub fn signed_distance(&self, p: &[f64]) -> f64 {
        match *self {
            Shape::Sphere { radius } => norm(p) - radius,
            Shape::Torus { major, minor } => {
                let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
                (ring * ring + p[2] * p[2]).sqrt() - minor
            }
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.signed_distance(p) <= 0.0
    }
}

fn norm(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Signal {
    /// `extents` are the lattice sizes per axis, `values` is `[N × O]` in
    /// lexicographic lattice order.
    Lattice {
        extents: Vec<usize>,
        channels: usize,
        values: Vec<f64>,
    },
    /// Binary occupancy on `[-1, 1]³`, trained on a `resolution³` lattice.
    Occupancy { shape: Shape, resolution: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Image2d,
    Video3d,
    Occupancy3d,
}

/// Names and parameters of the synthetic signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthSpec {
    /// Grayscale `u ⊗ v` with smooth random profiles `u, v ∈ [0,1]^size`.
    Rank1Image { size: usize },
    /// RGB mixture of random Gaussian blobs.
    GaussiansImage {
        size: usize,
        #[serde(default = "default_components")]
        components: usize,
    },
    CheckerImage {
        size: usize,
        #[serde(default = "default_squares")]
        squares: usize,
    },
    /// RGB blob moving along a line across `frames` frames.
    MovingGaussianVideo { size: usize, frames: usize },
    SphereOcc {
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
    TorusOcc {
        #[serde(default = "default_major")]
        major: f64,
        #[serde(default = "default_minor")]
        minor: f64,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
}

fn default_components() -> usize {
    6
}
fn default_squares() -> usize {
    4
}
fn default_radius() -> f64 {
    0.5
}
fn default_major() -> f64 {
    0.5
}
fn default_minor() -> f64 {
    0.2
}
fn default_resolution() -> usize {
    32
}

/// Smooth random profile in `[0, 1]`: a few low-frequency sinusoids.
fn smooth_profile(n: usize, rng: &mut Rng) -> Vec<f64> {
    let terms: Vec<(f64, f64, f64)> = (1..=4)
        .map(|k| {
            let amp = rng.uniform(0.3, 1.0) / k as f64;
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            (k as f64, amp, phase)
        })
        .collect();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let x = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            terms
                .iter()
                .map(|&(k, a, ph)| a * (std::f64::consts::PI * k * x + ph).sin())
                .sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    raw.iter().map(|v| 0.05 + 0.9 * (v - lo) / span).collect()
}

pub fn synth_signal(spec: &SynthSpec, rng: &mut Rng) -> Result<Signal> {
    let axis = |n: usize| crate::grid::linspace(n, -1.0, 1.0);
    match *spec {
        SynthSpec::Rank1Image { size } => {
            check_size(size)?;
            let u = smooth_profile(size, rng);
            let v = smooth_profile(size, rng);
            let values = u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect();
            Ok(Signal::Lattice {
                extents: vec![size, size],
                channels: 1,
                values,
            })
        }
        SynthSpec::GaussiansImage { size, components } => {
            check_size(size)?;
            let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..components)
                .map(|_| {
                    let c = [rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)];
                    let s = rng.uniform(0.15, 0.45);
                    let col = [rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)];
                    (c, s, col)
                })
                .collect();
            let ax = axis(size);
            let mut values = Vec::with_capacity(size * size * 3);
            for &y in &ax {
                for &x in &ax {
                    let mut px = [0.05; 3];
                    for (c, s, col) in &blobs {
                        let d2 = (y - c[0]).powi(2) + (x - c[1]).powi(2);
                        let w = (-d2 / (2.0 * s * s)).exp();
                        for ch in 0..3 {
                            px[ch] += 0.6 * w * col[ch];
                        }
                    }
                    values.extend(px.iter().map(|v| v.clamp(0.0, 1.0)));
                }
            }
            Ok(Signal::Lattice {
                extents: vec![size, size],
                channels: 3,
                values,
            })
        }
        SynthSpec::CheckerImage { size, squares } => {
            check_size(size)?;
            if squares == 0 {
                return Err(config_err!("checker needs at least one square"));
            }
            let cell = |i: usize| i * squares / size;
            let values = (0..size)
                .flat_map(|r| (0..size).map(move |c| ((cell(r) + cell(c)) % 2) as f64))
                .collect();
            Ok(Signal::Lattice {
                extents: vec![size, size],
                channels: 1,
                values,
            })
        }
        SynthSpec::MovingGaussianVideo { size, frames } => {
            check_size(size)?;
            check_size(frames)?;
            let start = [rng.uniform(-0.6, -0.2), rng.uniform(-0.6, -0.2)];
            let end = [rng.uniform(0.2, 0.6), rng.uniform(0.2, 0.6)];
            let col = [rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)];
            let ax = axis(size);
            let mut values = Vec::with_capacity(size * size * frames * 3);
            for &y in &ax {
                for &x in &ax {
                    for t in 0..frames {
                        let a = if frames == 1 { 0.0 } else { t as f64 / (frames - 1) as f64 };
                        let cy = start[0] + a * (end[0] - start[0]);
                        let cx = start[1] + a * (end[1] - start[1]);
                        let w = (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * 0.25f64.powi(2))).exp();
                        values.extend(col.iter().map(|c| 0.1 + 0.8 * w * c));
                    }
                }
            }
            Ok(Signal::Lattice {
                extents: vec![size, size, frames],
                channels: 3,
                values,
            })
        }
        SynthSpec::SphereOcc { radius, resolution } => {
            check_size(resolution)?;
            Ok(Signal::Occupancy {
                shape: Shape::Sphere { radius },
                resolution,
            })
        }
        SynthSpec::TorusOcc {
            major,
            minor,
            resolution,
        } => {
            check_size(resolution)?;
            Ok(Signal::Occupancy {
                shape: Shape::Torus { major, minor },
                resolution,
            })
        }
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(config_err!("signal extents must be positive"));
    }
    Ok(())
}

impl Signal {
    pub fn from_image(img: &Image8) -> Self {
        Signal::Lattice {
            extents: vec![img.height, img.width],
            channels: img.channels,
            values: img.to_unit(),
        }
    }

    pub fn load_image(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_image(&Image8::load(path)?))
    }

    pub fn kind(&self) -> SignalKind {
        match self {
            Signal::Lattice { extents, .. } if extents.len() == 3 => SignalKind::Video3d,
            Signal::Lattice { .. } => SignalKind::Image2d,
            Signal::Occupancy { .. } => SignalKind::Occupancy3d,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.canonical_extents().len()
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Signal::Lattice { channels, .. } => *channels,
            Signal::Occupancy { .. } => 1,
        }
    }

    pub fn canonical_extents(&self) -> Vec<usize> {
        match self {
            Signal::Lattice { extents, .. } => extents.clone(),
            Signal::Occupancy { resolution, .. } => vec![*resolution; 3],
        }
    }

    pub fn canonical_grid(&self) -> CoordGrid {
        make_grid(&self.canonical_extents()).expect("signal extents are positive")
    }

    pub fn shape(&self) -> Option<Shape> {
        match self {
            Signal::Occupancy { shape, .. } => Some(*shape),
            _ => None,
        }
    }

    /// Value at an arbitrary point of the box (nearest sample for lattice
    /// signals, analytic label for occupancy).
    pub fn eval(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Signal::Lattice {
                extents,
                channels,
                values,
            } => {
                let flat = extents.iter().zip(p).fold(0, |acc, (&n, &x)| {
                    let i = if n == 1 {
                        0
                    } else {
                        (((x + 1.0) * 0.5 * (n - 1) as f64).round() as i64).clamp(0, n as i64 - 1) as usize
                    };
                    acc * n + i
                });
                values[flat * channels..(flat + 1) * channels].to_vec()
            }
            Signal::Occupancy { shape, .. } => vec![if shape.contains(p) { 1.0 } else { 0.0 }],
        }
    }

    /// Targets on the canonical lattice, `[N × O]` in lexicographic order.
    pub fn lattice_values(&self) -> Tensor {
        match self {
            Signal::Lattice {
                extents,
                channels,
                values,
            } => Tensor::from_vec(vec![extents.iter().product(), *channels], values.clone())
                .expect("lattice signal is consistent"),
            Signal::Occupancy { .. } => self.eval_points(&self.canonical_grid().points()),
        }
    }

    pub fn eval_points(&self, points: &Tensor) -> Tensor {
        let o = self.out_dim();
        let data = (0..points.rows()).flat_map(|r| self.eval(points.row(r))).collect();
        Tensor::from_vec(vec![points.rows(), o], data).expect("eval shape is consistent")
    }
}
