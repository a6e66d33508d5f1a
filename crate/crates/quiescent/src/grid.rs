//! Periodic spatial grids, spectral and finite-difference derivatives,
//! truncated-cone geometry, region masks, smooth extensions, and discrete
//! Sobolev norms.
//!
//! The torus is the box `[-L, L]^{n-1}` with opposite sides identified;
//! fields are stored as flat row-major arrays (axis 0 slowest).

use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Derivative discretization choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DerivMethod {
    /// Fourier pseudo-spectral; exact on resolved trigonometric polynomials.
    Spectral,
    /// Centered finite differences of the given order (2 or 4).
    CenteredFd { order: usize },
}

/// Serializable grid description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub l: f64,
    pub dims: Vec<usize>,
    pub deriv: DerivMethod,
}

/// Integration/diagnostic region on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Torus,
    /// Euclidean ball of the given radius about the origin (minimal-image).
    Ball(f64),
}

/// Periodic grid on the spatial torus `[-L, L]^{n-1}`.
pub struct TorusGrid {
    /// Half-period of the box.
    pub l: f64,
    /// Points per axis; axes with a single point carry no variation.
    pub dims: Vec<usize>,
    pub deriv: DerivMethod,
    fwd: HashMap<usize, Arc<dyn Fft<f64>>>,
    inv: HashMap<usize, Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusGrid")
            .field("l", &self.l)
            .field("dims", &self.dims)
            .field("deriv", &self.deriv)
            .finish()
    }
}

impl Clone for TorusGrid {
    fn clone(&self) -> Self {
        TorusGrid::new(self.l, self.dims.clone(), self.deriv).expect("clone of valid grid")
    }
}

impl TorusGrid {
    pub fn new(l: f64, dims: Vec<usize>, deriv: DerivMethod) -> Result<Self> {
        if l <= 0.0 {
            return Err(Error::Grid(format!("half-period L must be positive, got {l}")));
        }
        if dims.is_empty() {
            return Err(Error::Grid("grid needs at least one axis".into()));
        }
        for &d in &dims {
            if d != 1 && d < 8 {
                return Err(Error::Grid(format!(
                    "active axes need at least 8 points, got {d}"
                )));
            }
        }
        if let DerivMethod::CenteredFd { order } = deriv {
            if order != 2 && order != 4 {
                return Err(Error::Grid(format!(
                    "centered FD supports order 2 or 4, got {order}"
                )));
            }
        }
        let mut planner = FftPlanner::<f64>::new();
        let mut fwd = HashMap::new();
        let mut inv = HashMap::new();
        for &d in &dims {
            if d > 1 {
                fwd.entry(d).or_insert_with(|| planner.plan_fft_forward(d));
                inv.entry(d).or_insert_with(|| planner.plan_fft_inverse(d));
            }
        }
        Ok(TorusGrid { l, dims, deriv, fwd, inv })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            l: self.l,
            dims: self.dims.clone(),
            deriv: self.deriv,
        }
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        TorusGrid::new(spec.l, spec.dims.clone(), spec.deriv)
    }

    /// Number of spatial axes (n-1).
    pub fn n_spatial(&self) -> usize {
        self.dims.len()
    }

    /// Total number of grid points.
    pub fn npoints(&self) -> usize {
        self.dims.iter().product()
    }

    /// Row-major stride of the given axis.
    fn stride(&self, axis: usize) -> usize {
        self.dims[axis + 1..].iter().product()
    }

    /// Grid spacing along an axis.
    pub fn dx(&self, axis: usize) -> f64 {
        2.0 * self.l / self.dims[axis] as f64
    }

    /// Coordinate of index i along an axis, in [-L, L).
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        -self.l + i as f64 * self.dx(axis)
    }

    /// Cell volume (product of spacings over all axes).
    pub fn cell_volume(&self) -> f64 {
        self.dims
            .iter()
            .map(|&d| 2.0 * self.l / d as f64)
            .product()
    }

    /// Multi-index of a flat point index.
    pub fn unravel(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for a in (0..self.dims.len()).rev() {
            out[a] = idx % self.dims[a];
            idx /= self.dims[a];
        }
        out
    }

    /// Coordinates of a flat point index.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.unravel(idx)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coord(a, i))
            .collect()
    }

    /// Minimal-image Euclidean distance of a flat point index from the origin.
    pub fn radius(&self, idx: usize) -> f64 {
        self.point(idx).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Periodic spatial derivative of a scalar field along an axis.
    pub fn spatial_derivative(&self, field: &[f64], axis: usize) -> Result<Vec<f64>> {
        if axis >= self.dims.len() {
            return Err(Error::Grid(format!(
                "axis {axis} out of range for {}-dimensional grid",
                self.dims.len()
            )));
        }
        if field.len() != self.npoints() {
            return Err(Error::DimensionMismatch {
                expected: self.npoints(),
                got: field.len(),
            });
        }
        let nd = self.dims[axis];
        if nd == 1 {
            return Ok(vec![0.0; field.len()]);
        }
        match self.deriv {
            DerivMethod::Spectral => Ok(self.spectral_derivative(field, axis)),
            DerivMethod::CenteredFd { order } => Ok(self.fd_derivative(field, axis, order)),
        }
    }

    fn for_each_line(&self, axis: usize, mut f: impl FnMut(&[usize])) {
        // Enumerates pencils along `axis` as lists of flat indices.
        let nd = self.dims[axis];
        let stride = self.stride(axis);
        let npoints = self.npoints();
        let nlines = npoints / nd;
        let outer = stride * nd;
        let mut line = vec![0usize; nd];
        for li in 0..nlines {
            let block = li / stride;
            let offset = block * outer + (li % stride);
            for (j, slot) in line.iter_mut().enumerate() {
                *slot = offset + j * stride;
            }
            f(&line);
        }
    }

    fn spectral_derivative(&self, field: &[f64], axis: usize) -> Vec<f64> {
        let nd = self.dims[axis];
        let fwd = &self.fwd[&nd];
        let inv = &self.inv[&nd];
        // Fourier modes exp(i π m x / L) on period 2L; Nyquist mode zeroed.
        let k0 = std::f64::consts::PI / self.l;
        let mut out = vec![0.0; field.len()];
        let mut buf = vec![Complex64::default(); nd];
        self.for_each_line(axis, |line| {
            for (j, &p) in line.iter().enumerate() {
                buf[j] = Complex64::new(field[p], 0.0);
            }
            fwd.process(&mut buf);
            for (j, v) in buf.iter_mut().enumerate() {
                let m = if 2 * j < nd {
                    j as f64
                } else if 2 * j == nd {
                    0.0
                } else {
                    j as f64 - nd as f64
                };
                *v *= Complex64::new(0.0, k0 * m);
            }
            inv.process(&mut buf);
            let scale = 1.0 / nd as f64;
            for (j, &p) in line.iter().enumerate() {
                out[p] = buf[j].re * scale;
            }
        });
        out
    }

    fn fd_derivative(&self, field: &[f64], axis: usize, order: usize) -> Vec<f64> {
        let nd = self.dims[axis];
        let dx = self.dx(axis);
        let mut out = vec![0.0; field.len()];
        self.for_each_line(axis, |line| {
            for j in 0..nd {
                let get = |off: isize| {
                    let jj = (j as isize + off).rem_euclid(nd as isize) as usize;
                    field[line[jj]]
                };
                out[line[j]] = match order {
                    2 => (get(1) - get(-1)) / (2.0 * dx),
                    _ => (-get(2) + 8.0 * get(1) - 8.0 * get(-1) + get(-2)) / (12.0 * dx),
                };
            }
        });
        out
    }

    /// Region mask (1 inside, 0 outside) as a field.
    pub fn region_mask(&self, region: Region) -> Vec<f64> {
        match region {
            Region::Torus => vec![1.0; self.npoints()],
            Region::Ball(r) => (0..self.npoints())
                .map(|p| if self.radius(p) <= r { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Discrete L² inner-product norm of a set of component fields over a region.
    pub fn l2_norm(&self, fields: &[&[f64]], region: Region) -> f64 {
        let mask = self.region_mask(region);
        let vol = self.cell_volume();
        let mut acc = 0.0;
        for f in fields {
            for (p, &v) in f.iter().enumerate() {
                acc += mask[p] * v * v;
            }
        }
        (acc * vol).sqrt()
    }

    /// Discrete Sobolev `H^k` norm of a set of component fields over a region:
    /// `(Σ_{|b|≤k} ∫ |∂^b u|²)^{1/2}` with cell-sum quadrature.
    pub fn sobolev_norm(&self, fields: &[&[f64]], k: usize, region: Region) -> Result<f64> {
        for f in fields {
            if f.len() != self.npoints() {
                return Err(Error::DimensionMismatch {
                    expected: self.npoints(),
                    got: f.len(),
                });
            }
        }
        use rayon::prelude::*;
        let mask = self.region_mask(region);
        let vol = self.cell_volume();
        // Per-field partial sums are collected in index order and added
        // sequentially so the reduction is deterministic across runs.
        let per_field: Vec<f64> = fields
            .par_iter()
            .map(|f| -> Result<f64> {
                let mut acc = 0.0;
                // Breadth-first over derivative orders: order m holds ∂^b f
                // for all |b|=m, keyed by the multi-index.
                let mut level: Vec<(Vec<usize>, Vec<f64>)> =
                    vec![(vec![0; self.n_spatial()], f.to_vec())];
                for m in 0..=k {
                    for (_, g) in &level {
                        for (p, &v) in g.iter().enumerate() {
                            acc += mask[p] * v * v;
                        }
                    }
                    if m == k {
                        break;
                    }
                    let mut next: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
                    for (b, g) in &level {
                        // Only extend along axes >= the last nonzero axis so
                        // each multi-index appears exactly once.
                        let first = b.iter().rposition(|&x| x > 0).unwrap_or(0);
                        for a in first..self.n_spatial() {
                            let mut b2 = b.clone();
                            b2[a] += 1;
                            next.push((b2, self.spatial_derivative(g, a)?));
                        }
                    }
                    level = next;
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let acc: f64 = per_field.iter().sum();
        Ok((acc * vol).sqrt())
    }

    /// Applies a multi-index derivative `∂^b` to a scalar field.
    pub fn multi_derivative(&self, field: &[f64], b: &[usize]) -> Result<Vec<f64>> {
        let mut g = field.to_vec();
        for (axis, &cnt) in b.iter().enumerate() {
            for _ in 0..cnt {
                g = self.spatial_derivative(&g, axis)?;
            }
        }
        Ok(g)
    }

    /// Smooth periodic proxy for the distance from the origin:
    /// `sqrt(Σ (2L/π)² sin²(πx/(2L)))`; equals |x| to second order near 0 and
    /// is bounded by |x| (minimal image) everywhere.
    pub fn periodic_radius(&self) -> Vec<f64> {
        let c = 2.0 * self.l / std::f64::consts::PI;
        (0..self.npoints())
            .map(|p| {
                self.point(p)
                    .iter()
                    .map(|&x| {
                        let s = c * (x / c).sin();
                        s * s
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// C^∞ transition: 1 for s ≤ 0, 0 for s ≥ 1, strictly decreasing between.
pub fn smooth_transition(s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let g = |x: f64| (-1.0 / x).exp();
        g(1.0 - s) / (g(1.0 - s) + g(s))
    }
}

/// Smooth bump field: 1 on radius ≤ r_in, 0 on radius ≥ r_out, using the
/// minimal-image radius.
pub fn bump_field(grid: &TorusGrid, r_in: f64, r_out: f64) -> Vec<f64> {
    (0..grid.npoints())
        .map(|p| smooth_transition((grid.radius(p) - r_in) / (r_out - r_in)))
        .collect()
}

/// Smoothly extends data given inside the ball of radius `rho0` to the whole
/// torus by blending with a background field: the output equals `inner`
/// on the ball and `background` outside radius `(rho0 + L)/2`.
pub fn extend_initial_data(
    inner: &[f64],
    background: &[f64],
    grid: &TorusGrid,
    rho0: f64,
) -> Result<Vec<f64>> {
    if rho0 >= grid.l {
        return Err(Error::Grid(format!(
            "extension ball radius {rho0} exceeds torus half-period {}",
            grid.l
        )));
    }
    let bump = bump_field(grid, rho0, 0.5 * (rho0 + grid.l));
    Ok(inner
        .iter()
        .zip(background)
        .zip(&bump)
        .map(|((&f, &g), &w)| w * f + (1.0 - w) * g)
        .collect())
}

/// Truncated cone domain: spatial radius shrinking toward t = 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConeDomain {
    /// Initial (largest) time of the interval.
    pub t0: f64,
    /// Final (smallest) time of the interval.
    pub t1: f64,
    /// Radius at t0.
    pub rho0: f64,
    /// Slope parameter (positive).
    pub rho1: f64,
    /// Cone exponent; equals the rescaling exponent eps2 in runs.
    pub eps: f64,
}

impl ConeDomain {
    pub fn new(t0: f64, t1: f64, rho0: f64, rho1: f64, eps: f64) -> Result<Self> {
        if !(0.0 <= t1 && t1 < t0) {
            return Err(Error::ParameterRange {
                what: format!("cone needs 0 <= t1 < t0, got t1={t1}, t0={t0}"),
            });
        }
        if rho0 <= 0.0 || rho1 <= 0.0 {
            return Err(Error::ParameterRange {
                what: format!("cone needs rho0, rho1 > 0, got rho0={rho0}, rho1={rho1}"),
            });
        }
        let cd = ConeDomain { t0, t1, rho0, rho1, eps };
        if cd.rho_tilde0() <= 0.0 {
            return Err(Error::ParameterRange {
                what: format!(
                    "cone limit radius rho0 - rho1 t0^(1-eps)/(1-eps) = {} must be positive",
                    cd.rho_tilde0()
                ),
            });
        }
        Ok(cd)
    }

    /// Limit radius as t -> 0.
    pub fn rho_tilde0(&self) -> f64 {
        self.rho0 - self.rho1 * self.t0.powf(1.0 - self.eps) / (1.0 - self.eps)
    }

    /// Radius of the cone cross-section at time t.
    pub fn rho_of_t(&self, t: f64) -> Result<f64> {
        if !(t > self.t1 && t <= self.t0) && (t - self.t1).abs() > 1e-14 {
            return Err(Error::ParameterRange {
                what: format!("time {t} outside cone interval ({}, {}]", self.t1, self.t0),
            });
        }
        Ok(self.rho1 * (t.powf(1.0 - self.eps) - self.t0.powf(1.0 - self.eps))
            / (1.0 - self.eps)
            + self.rho0)
    }

    /// Outward covector normal to the lateral boundary at (t, x):
    /// time slot first, then the n-1 spatial slots.
    pub fn boundary_normal(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let r: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return Err(Error::ParameterRange {
                what: "boundary normal undefined at the spatial origin".into(),
            });
        }
        let mut n = Vec::with_capacity(x.len() + 1);
        n.push(-self.rho1 / t.powf(self.eps));
        for &v in x {
            n.push(v / r);
        }
        Ok(n)
    }
}
