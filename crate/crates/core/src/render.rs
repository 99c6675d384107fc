//! Dense field grids, trilinear lookup, slices and volume ray marching.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Error, Result};
use crate::exec;
use crate::grid::{linspace, make_grid};
use crate::model::Model;
use crate::pnm::Image8;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Values sampled on a regular lattice spanning `[-1, 1]³` (endpoints
/// included).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid3 {
    pub resolution: [usize; 3],
    /// `[Rx × Ry × Rz × O]`.
    pub values: Tensor,
}

pub const BOX_LO: f64 = -1.0;
pub const BOX_HI: f64 = 1.0;

impl DenseGrid3 {
    pub fn new(values: Tensor) -> Result<Self> {
        let s = values.shape();
        if s.len() != 4 {
            return Err(dim_err!("dense grid values need shape [Rx, Ry, Rz, O], got {s:?}"));
        }
        let resolution = [s[0], s[1], s[2]];
        if resolution.iter().any(|&r| r < 2) {
            return Err(config_err!("grid resolution must be at least 2 per axis, got {resolution:?}"));
        }
        Ok(Self { resolution, values })
    }

    /// Samples `f` at every lattice node.
    pub fn from_fn(resolution: [usize; 3], out_dim: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let points = make_grid(&resolution)?.points();
        let data = (0..points.rows()).flat_map(|r| f(points.row(r))).collect();
        Self::new(Tensor::from_vec(
            vec![resolution[0], resolution[1], resolution[2], out_dim],
            data,
        )?)
    }

    pub fn out_dim(&self) -> usize {
        self.values.last_dim()
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let [_, ry, rz] = self.resolution;
        self.values.row((i * ry + j) * rz + k)
    }
}

/// Evaluates a 3-input model on the lattice through `forward_coordx`, so
/// split models only run their pre-fusion layers on `Rx + Ry + Rz` rows.
pub fn precompute_grid<T: Scalar>(model: &Model<T>, resolution: [usize; 3]) -> Result<DenseGrid3> {
    if model.spec.in_dim != 3 {
        return Err(Error::Task(format!(
            "rendering needs a 3-input model, this one takes {}",
            model.spec.in_dim
        )));
    }
    if resolution.iter().any(|&r| r < 2) {
        return Err(config_err!("grid resolution must be at least 2 per axis, got {resolution:?}"));
    }
    let grid = make_grid(&resolution)?.with_branches(&model.spec.branch_spec())?;
    let out: Tensor = model.forward_coordx(&grid.decompose())?.cast();
    let o = model.spec.out_dim;
    DenseGrid3::new(out.reshape(&[resolution[0], resolution[1], resolution[2], o])?)
}

/// Trilinear blend of the 8 corners of the cell holding `p`; zero outside
/// the box.
pub fn trilinear(grid: &DenseGrid3, p: &[f64]) -> Vec<f64> {
    let o = grid.out_dim();
    if p.iter().any(|&x| !(BOX_LO..=BOX_HI).contains(&x)) {
        return vec![0.0; o];
    }
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        let cells = grid.resolution[a] - 1;
        let mut u = (p[a] - BOX_LO) / (BOX_HI - BOX_LO) * cells as f64;
        // Lattice coordinates can land an ulp off their node; snap them so
        // nodes reproduce exactly.
        if (u - u.round()).abs() <= 4.0 * f64::EPSILON * cells as f64 {
            u = u.round();
        }
        let i = (u.floor() as usize).min(cells - 1);
        base[a] = i;
        frac[a] = u - i as f64;
    }
    (0..o)
        .map(|c| {
            let v = |di: usize, dj: usize, dk: usize| grid.node(base[0] + di, base[1] + dj, base[2] + dk)[c];
            let x0 = lerp(lerp(v(0, 0, 0), v(0, 0, 1), frac[2]), lerp(v(0, 1, 0), v(0, 1, 1), frac[2]), frac[1]);
            let x1 = lerp(lerp(v(1, 0, 0), v(1, 0, 1), frac[2]), lerp(v(1, 1, 0), v(1, 1, 1), frac[2]), frac[1]);
            lerp(x0, x1, frac[0])
        })
        .collect()
}

/// Exact at both ends and for equal endpoints.
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if a == b {
        a
    } else {
        (1.0 - t) * a + t * b
    }
}

/// Maps a stored field value to a density or display intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transfer {
    /// `scale · sigmoid(v)`, for occupancy logits.
    Sigmoid { scale: f64 },
    /// `max(v, 0)`.
    Raw,
}

impl Default for Transfer {
    fn default() -> Self {
        Transfer::Sigmoid { scale: 50.0 }
    }
}

impl Transfer {
    pub fn apply(&self, v: f64) -> f64 {
        match *self {
            Transfer::Sigmoid { scale } => scale * crate::train::sigmoid(v),
            Transfer::Raw => v.max(0.0),
        }
    }
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn default_albedo() -> f64 {
    1.0
}

/// Pinhole camera and per-ray sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub origin: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    pub fov: f64,
    /// `[width, height]` in pixels.
    pub resolution: [usize; 2],
    pub near: f64,
    pub far: f64,
    /// Samples per ray.
    pub samples: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.near < self.far) || self.near < 0.0 {
            return Err(config_err!("camera needs 0 ≤ near < far"));
        }
        if self.samples == 0 || self.resolution.contains(&0) {
            return Err(config_err!("camera needs positive samples and resolution"));
        }
        if !(self.fov > 0.0 && self.fov < 180.0) {
            return Err(config_err!("camera fov must lie in (0, 180) degrees"));
        }
        let f = sub(self.look_at, self.origin);
        if norm(f) == 0.0 || norm(cross(f, self.up)) == 0.0 {
            return Err(config_err!("camera look direction must be nonzero and not parallel to up"));
        }
        Ok(())
    }

    /// Unit direction through the center of pixel `(row, col)`.
    pub fn direction(&self, row: usize, col: usize) -> [f64; 3] {
        let [w, h] = self.resolution;
        let fwd = normalize(sub(self.look_at, self.origin));
        let right = normalize(cross(fwd, self.up));
        let up = cross(right, fwd);
        let half = (self.fov.to_radians() * 0.5).tan();
        let x = (2.0 * (col as f64 + 0.5) / w as f64 - 1.0) * half * w as f64 / h as f64;
        let y = (1.0 - 2.0 * (row as f64 + 0.5) / h as f64) * half;
        normalize([
            fwd[0] + x * right[0] + y * up[0],
            fwd[1] + x * right[1] + y * up[1],
            fwd[2] + x * right[2] + y * up[2],
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shading {
    #[serde(default)]
    pub transfer: Transfer,
    #[serde(default = "default_albedo")]
    pub albedo: f64,
    #[serde(default)]
    pub background: f64,
}

impl Default for Shading {
    fn default() -> Self {
        Self {
            transfer: Transfer::default(),
            albedo: default_albedo(),
            background: 0.0,
        }
    }
}

/// Result of accumulating one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTrace {
    pub color: f64,
    /// `T(i) = exp(-Σ_{j<i} σ_j δ)` for every sample, then the final
    /// transmittance.
    pub transmittance: Vec<f64>,
}

/// Discrete volume rendering `Σ T(i)(1 - e^{-σ_i δ}) c_i` plus the
/// background weighted by the remaining transmittance.
pub fn raymarch_samples(sigmas: &[f64], colors: &[f64], delta: f64, background: f64) -> RayTrace {
    let mut t = 1.0;
    let mut optical = 0.0;
    let mut color = 0.0;
    let mut transmittance = Vec::with_capacity(sigmas.len() + 1);
    for (&s, &c) in sigmas.iter().zip(colors) {
        transmittance.push(t);
        color += t * (1.0 - (-s * delta).exp()) * c;
        optical += s * delta;
        t = (-optical).exp();
    }
    transmittance.push(t);
    RayTrace {
        color: color + t * background,
        transmittance,
    }
}

/// Densities at the sample midpoints of one ray; samples outside the box
/// are empty space.
pub fn ray_densities(grid: &DenseGrid3, origin: [f64; 3], dir: [f64; 3], camera: &Camera, shading: &Shading) -> Vec<f64> {
    let delta = (camera.far - camera.near) / camera.samples as f64;
    (0..camera.samples)
        .map(|i| {
            let t = camera.near + (i as f64 + 0.5) * delta;
            let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
            if p.iter().any(|&x| !(BOX_LO..=BOX_HI).contains(&x)) {
                0.0
            } else {
                shading.transfer.apply(trilinear(grid, &p)[0])
            }
        })
        .collect()
}

/// Renders the first channel of `grid` as a density field.
pub fn raymarch(grid: &DenseGrid3, camera: &Camera, shading: &Shading) -> Result<Image8> {
    camera.validate()?;
    let [w, h] = camera.resolution;
    let delta = (camera.far - camera.near) / camera.samples as f64;
    let colors = vec![shading.albedo; camera.samples];
    let mut pixels = vec![0.0f64; w * h];
    exec::for_each_block(&mut pixels, w, 1, |row, line| {
        for (col, px) in line.iter_mut().enumerate() {
            let dir = camera.direction(row, col);
            let sigmas = ray_densities(grid, camera.origin, dir, camera, shading);
            *px = raymarch_samples(&sigmas, &colors, delta, shading.background).color;
        }
    });
    Image8::from_unit(w, h, 1, &pixels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Cross-section at `axis = coord` sampled at `size × size` pixel centers.
/// Rows follow the first remaining axis, columns the second.
pub fn slice_image(grid: &DenseGrid3, axis: Axis, coord: f64, size: usize, map: SliceMap) -> Result<Image8> {
    if size == 0 {
        return Err(config_err!("slice size must be positive"));
    }
    let centers = pixel_centers(size);
    let a = axis.index();
    let (u, v) = match a {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut values = Vec::with_capacity(size * size);
    for &cu in &centers {
        for &cv in &centers {
            let mut p = [0.0; 3];
            p[a] = coord;
            p[u] = cu;
            p[v] = cv;
            values.push(map.apply(trilinear(grid, &p)[0]));
        }
    }
    Image8::from_unit(size, size, 1, &values)
}

/// How slice values become intensities in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SliceMap {
    /// Occupancy logit through a sigmoid.
    #[default]
    Sigmoid,
    /// Value clamped to `[0, 1]`.
    Raw,
}

impl SliceMap {
    fn apply(self, v: f64) -> f64 {
        match self {
            SliceMap::Sigmoid => crate::train::sigmoid(v),
            SliceMap::Raw => v.clamp(0.0, 1.0),
        }
    }
}

/// Centers of `n` equal pixels across `[-1, 1]`.
pub fn pixel_centers(n: usize) -> Vec<f64> {
    let half = 1.0 / n as f64;
    linspace(n, BOX_LO + half, BOX_HI - half)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}
