//! Grid-field state containers shared by the frame and rescaled systems.
//!
//! Both systems carry the same component layout per grid point:
//! a frame/coefficient matrix (d×d), a lapse-type scalar, commutator-type
//! coefficients (d×d×d, antisymmetric in the outer index pair), a vector,
//! a Hubble-type scalar, and a symmetric trace-free matrix, with d = n−1.
//!
//! The commutator block stores the flat component `C[A][M][B]` = C_A{}^M{}_B
//! with the middle index the naturally raised one; outer antisymmetry means
//! `C[A][M][B] = −C[B][M][A]`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, TorusGrid};

/// Per-point component bundle stored as structure-of-arrays grid fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    /// Spatial dimension d = n−1.
    pub d: usize,
    /// Frame/coefficient matrix entries, `e[a*d+om]` is a grid field.
    pub e: Vec<Vec<f64>>,
    /// Lapse-type scalar field.
    pub alpha: Vec<f64>,
    /// Commutator coefficients, `c[(a*d+m)*d+b]` is a grid field.
    pub c: Vec<Vec<f64>>,
    /// Vector components `u[a]`.
    pub u: Vec<Vec<f64>>,
    /// Hubble-type scalar field.
    pub h: Vec<f64>,
    /// Symmetric trace-free matrix entries `sigma[a*d+b]`.
    pub sigma: Vec<Vec<f64>>,
}

/// Total number of scalar components per grid point: d² + 1 + d³ + d + 1 + d².
pub fn ncomp(d: usize) -> usize {
    d * d + 1 + d * d * d + d + 1 + d * d
}

impl Components {
    pub fn zeros(d: usize, npoints: usize) -> Self {
        Components {
            d,
            e: vec![vec![0.0; npoints]; d * d],
            alpha: vec![0.0; npoints],
            c: vec![vec![0.0; npoints]; d * d * d],
            u: vec![vec![0.0; npoints]; d],
            h: vec![0.0; npoints],
            sigma: vec![vec![0.0; npoints]; d * d],
        }
    }

    pub fn npoints(&self) -> usize {
        self.alpha.len()
    }

    #[inline]
    pub fn midx(d: usize, a: usize, b: usize) -> usize {
        a * d + b
    }

    #[inline]
    pub fn cidx(d: usize, a: usize, m: usize, b: usize) -> usize {
        (a * d + m) * d + b
    }

    /// In-place `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Components, factor: f64) {
        let pairs = |dst: &mut Vec<Vec<f64>>, src: &Vec<Vec<f64>>| {
            for (df, sf) in dst.iter_mut().zip(src) {
                for (dv, sv) in df.iter_mut().zip(sf) {
                    *dv += factor * sv;
                }
            }
        };
        pairs(&mut self.e, &other.e);
        pairs(&mut self.c, &other.c);
        pairs(&mut self.u, &other.u);
        pairs(&mut self.sigma, &other.sigma);
        for (dv, sv) in self.alpha.iter_mut().zip(&other.alpha) {
            *dv += factor * sv;
        }
        for (dv, sv) in self.h.iter_mut().zip(&other.h) {
            *dv += factor * sv;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for f in self
            .e
            .iter_mut()
            .chain(self.c.iter_mut())
            .chain(self.u.iter_mut())
            .chain(self.sigma.iter_mut())
        {
            for v in f.iter_mut() {
                *v *= factor;
            }
        }
        for v in self.alpha.iter_mut().chain(self.h.iter_mut()) {
            *v *= factor;
        }
    }

    /// Largest absolute value over all components and points.
    pub fn max_abs(&self) -> f64 {
        self.all_fields()
            .iter()
            .flat_map(|f| f.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// All component fields in the composite state-vector order
    /// (e, alpha, C, U, H, Sigma).
    pub fn all_fields(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(ncomp(self.d));
        for f in &self.e {
            out.push(f);
        }
        out.push(&self.alpha);
        for f in &self.c {
            out.push(f);
        }
        for f in &self.u {
            out.push(f);
        }
        out.push(&self.h);
        for f in &self.sigma {
            out.push(f);
        }
        out
    }

    /// Mutable access in the same composite order.
    pub fn all_fields_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::with_capacity(ncomp(self.d));
        for f in &mut self.e {
            out.push(f);
        }
        out.push(&mut self.alpha);
        for f in &mut self.c {
            out.push(f);
        }
        for f in &mut self.u {
            out.push(f);
        }
        out.push(&mut self.h);
        for f in &mut self.sigma {
            out.push(f);
        }
        out
    }

    /// Composite state vector at one grid point, in the order
    /// (e_P^Σ, α, C_PQR, U_P, ℋ, Σ_PQ).
    pub fn pack_point(&self, p: usize) -> Vec<f64> {
        self.all_fields().iter().map(|f| f[p]).collect()
    }

    pub fn unpack_point(&mut self, p: usize, v: &[f64]) {
        for (f, &val) in self.all_fields_mut().iter_mut().zip(v) {
            f[p] = val;
        }
    }

    /// Projects sigma onto its symmetric trace-free part; returns the largest
    /// pointwise change (the projection distance).
    pub fn project_sigma(&mut self) -> f64 {
        let d = self.d;
        let np = self.npoints();
        let mut dist = 0.0f64;
        for p in 0..np {
            let mut m = vec![0.0; d * d];
            for a in 0..d {
                for b in 0..d {
                    m[a * d + b] = self.sigma[a * d + b][p];
                }
            }
            let tr: f64 = (0..d).map(|a| m[a * d + a]).sum();
            for a in 0..d {
                for b in 0..d {
                    let mut v = 0.5 * (m[a * d + b] + m[b * d + a]);
                    if a == b {
                        v -= tr / d as f64;
                    }
                    dist = dist.max((v - m[a * d + b]).abs());
                    self.sigma[a * d + b][p] = v;
                }
            }
        }
        dist
    }

    /// Projects the commutator block onto outer antisymmetry; returns the
    /// largest pointwise change.
    pub fn project_c(&mut self) -> f64 {
        let d = self.d;
        let np = self.npoints();
        let mut dist = 0.0f64;
        for p in 0..np {
            for a in 0..d {
                for m in 0..d {
                    for b in 0..=a {
                        let iab = Components::cidx(d, a, m, b);
                        let iba = Components::cidx(d, b, m, a);
                        let v = 0.5 * (self.c[iab][p] - self.c[iba][p]);
                        dist = dist.max((v - self.c[iab][p]).abs());
                        self.c[iab][p] = v;
                        self.c[iba][p] = -v;
                    }
                }
            }
        }
        dist
    }

    /// Largest violation of the sigma symmetry/trace and C outer-antisymmetry
    /// classes, without modifying the state.
    pub fn class_violation(&self) -> f64 {
        let d = self.d;
        let mut worst = 0.0f64;
        for p in 0..self.npoints() {
            let mut tr = 0.0;
            for a in 0..d {
                tr += self.sigma[a * d + a][p];
                for b in 0..d {
                    worst = worst
                        .max((self.sigma[a * d + b][p] - self.sigma[b * d + a][p]).abs());
                    for m in 0..d {
                        worst = worst.max(
                            (self.c[Components::cidx(d, a, m, b)][p]
                                + self.c[Components::cidx(d, b, m, a)][p])
                                .abs(),
                        );
                    }
                }
            }
            worst = worst.max(tr.abs());
        }
        worst
    }

    /// 2-3 trace of the commutator block, tr23[A] = Σ_B C[A][B][B], as fields.
    pub fn c_tr23(&self) -> Vec<Vec<f64>> {
        let d = self.d;
        let np = self.npoints();
        let mut out = vec![vec![0.0; np]; d];
        for a in 0..d {
            for b in 0..d {
                let idx = Components::cidx(d, a, b, b);
                for p in 0..np {
                    out[a][p] += self.c[idx][p];
                }
            }
        }
        out
    }
}

/// Tetrad-variable state at a fixed conformal time.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameState {
    pub t: f64,
    pub f: Components,
}

/// Fuchsian-variable state at a fixed conformal time.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledState {
    pub t: f64,
    pub f: Components,
}

impl FrameState {
    /// Checks pointwise positivity of the lapse and the frame determinant.
    pub fn check_positivity(&self) -> Result<()> {
        check_positivity_impl(&self.f, "alphatilde", "etilde")
    }
}

impl RescaledState {
    pub fn check_positivity(&self) -> Result<()> {
        check_positivity_impl(&self.f, "alpha", "e")
    }
}

fn check_positivity_impl(f: &Components, alpha_name: &str, e_name: &str) -> Result<()> {
    let d = f.d;
    for p in 0..f.npoints() {
        if f.alpha[p] <= 0.0 {
            return Err(Error::Positivity {
                what: format!("{alpha_name} = {} at point {p}", f.alpha[p]),
            });
        }
        let m = nalgebra::DMatrix::from_fn(d, d, |a, om| f.e[a * d + om][p]);
        let det = m.determinant();
        if det <= 0.0 {
            return Err(Error::Positivity {
                what: format!("det({e_name}) = {det} at point {p}"),
            });
        }
    }
    Ok(())
}

/// On-disk snapshot of either state kind.
#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub n: usize,
    pub grid: GridSpec,
    pub t: f64,
    /// "frame" or "rescaled".
    pub kind: String,
    pub fields: BTreeMap<String, Vec<Vec<f64>>>,
}

fn to_field_map(f: &Components) -> BTreeMap<String, Vec<Vec<f64>>> {
    let mut m = BTreeMap::new();
    m.insert("e".into(), f.e.clone());
    m.insert("alpha".into(), vec![f.alpha.clone()]);
    m.insert("c".into(), f.c.clone());
    m.insert("u".into(), f.u.clone());
    m.insert("h".into(), vec![f.h.clone()]);
    m.insert("sigma".into(), f.sigma.clone());
    m
}

fn from_field_map(d: usize, m: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<Components> {
    let get = |name: &str, count: usize| -> Result<Vec<Vec<f64>>> {
        let v = m
            .get(name)
            .ok_or_else(|| Error::Config(format!("snapshot missing field '{name}'")))?;
        if v.len() != count {
            return Err(Error::DimensionMismatch {
                expected: count,
                got: v.len(),
            });
        }
        Ok(v.clone())
    };
    Ok(Components {
        d,
        e: get("e", d * d)?,
        alpha: get("alpha", 1)?.remove(0),
        c: get("c", d * d * d)?,
        u: get("u", d)?,
        h: get("h", 1)?.remove(0),
        sigma: get("sigma", d * d)?,
    })
}

/// Writes a state snapshot as JSON; floats use shortest round-trip encoding,
/// so reading the file back restores the state bit-exactly.
pub fn write_snapshot(
    path: &Path,
    f: &Components,
    t: f64,
    grid: &TorusGrid,
    kind: &str,
) -> Result<()> {
    let snap = Snapshot {
        n: f.d + 1,
        grid: grid.spec(),
        t,
        kind: kind.into(),
        fields: to_field_map(f),
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &snap)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(Components, f64, GridSpec, String)> {
    let file = std::fs::File::open(path)?;
    let snap: Snapshot = serde_json::from_reader(std::io::BufReader::new(file))?;
    let d = snap.n - 1;
    let f = from_field_map(d, &snap.fields)?;
    Ok((f, snap.t, snap.grid, snap.kind))
}

/// Fills a grid field with a random low-mode trigonometric polynomial of the
/// given amplitude (resolved exactly by the spectral derivative).
pub fn random_smooth_field<R: Rng>(grid: &TorusGrid, amplitude: f64, rng: &mut R) -> Vec<f64> {
    let d = grid.n_spatial();
    let np = grid.npoints();
    let mut out = vec![0.0; np];
    let nmodes = 3;
    let k0 = std::f64::consts::PI / grid.l;
    for _ in 0..nmodes {
        let amp = amplitude * (rng.gen::<f64>() - 0.5) * 2.0 / nmodes as f64;
        let phase: Vec<f64> = (0..d)
            .map(|_| rng.gen::<f64>() * 2.0 * std::f64::consts::PI)
            .collect();
        let modes: Vec<i32> = (0..d)
            .map(|a| {
                if grid.dims[a] == 1 {
                    0
                } else {
                    rng.gen_range(0..3)
                }
            })
            .collect();
        for p in 0..np {
            let x = grid.point(p);
            let mut v = amp;
            for a in 0..d {
                v *= (k0 * modes[a] as f64 * x[a] + phase[a]).cos();
            }
            out[p] += v;
        }
    }
    out
}

/// Random smooth perturbation of the component classes: sigma is symmetric
/// trace-free, C outer-antisymmetric, e/alpha perturbed multiplicatively
/// around the supplied positive background values.
pub fn random_smooth_components<R: Rng>(
    grid: &TorusGrid,
    d: usize,
    amplitude: f64,
    alpha_bg: f64,
    e_bg: &[f64],
    rng: &mut R,
) -> Components {
    let np = grid.npoints();
    let mut f = Components::zeros(d, np);
    for a in 0..d {
        for om in 0..d {
            let pert = random_smooth_field(grid, amplitude, rng);
            let base = if a == om { e_bg[a] } else { 0.0 };
            f.e[a * d + om] = pert.iter().map(|&v| base + v).collect();
        }
    }
    let pert = random_smooth_field(grid, amplitude, rng);
    f.alpha = pert.iter().map(|&v| alpha_bg * (1.0 + v)).collect();
    for field in f.c.iter_mut() {
        *field = random_smooth_field(grid, amplitude, rng);
    }
    for field in f.u.iter_mut() {
        *field = random_smooth_field(grid, amplitude, rng);
    }
    f.h = random_smooth_field(grid, amplitude, rng);
    for field in f.sigma.iter_mut() {
        *field = random_smooth_field(grid, amplitude, rng);
    }
    f.project_sigma();
    f.project_c();
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DerivMethod;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_grid() -> TorusGrid {
        TorusGrid::new(1.0, vec![8, 8, 8], DerivMethod::Spectral).unwrap()
    }

    #[test]
    fn ncomp_matches_block_sizes() {
        assert_eq!(ncomp(3), 50);
        assert_eq!(ncomp(10), 1212);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let g = small_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut f = random_smooth_components(&g, 3, 0.1, 1.0, &[1.0, 1.0, 1.0], &mut rng);
        let v = f.pack_point(5);
        assert_eq!(v.len(), ncomp(3));
        let mut g2 = Components::zeros(3, f.npoints());
        g2.unpack_point(5, &v);
        assert_eq!(g2.pack_point(5), v);
        // order check: slot d*d is alpha
        assert_eq!(v[9], f.alpha[5]);
        f.unpack_point(5, &v);
        assert_eq!(f.pack_point(5), v);
    }

    #[test]
    fn projections_idempotent_and_class_clean() {
        let g = small_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut f = Components::zeros(3, g.npoints());
        for field in f.sigma.iter_mut().chain(f.c.iter_mut()) {
            *field = random_smooth_field(&g, 1.0, &mut rng);
        }
        assert!(f.class_violation() > 1e-3);
        let d1 = f.project_sigma();
        let d2 = f.project_c();
        assert!(d1 > 0.0 && d2 > 0.0);
        assert!(f.class_violation() < 1e-13);
        assert!(f.project_sigma() < 1e-13);
        assert!(f.project_c() < 1e-13);
    }

    #[test]
    fn add_scaled_and_scale() {
        let g = small_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_smooth_components(&g, 3, 0.1, 1.0, &[1.0, 1.0, 1.0], &mut rng);
        let mut s = f.clone();
        s.add_scaled(&f, -1.0);
        assert_eq!(s.max_abs(), 0.0);
        let mut s2 = f.clone();
        s2.scale(2.0);
        let mut s3 = f.clone();
        s3.add_scaled(&f, 1.0);
        assert_abs_diff_eq!(s2.max_abs(), s3.max_abs(), epsilon = 1e-14);
    }

    #[test]
    fn tr23_of_antisymmetric_storage() {
        let mut f = Components::zeros(3, 2);
        // C[0][1][1] = 2 contributes to tr23[0]
        f.c[Components::cidx(3, 0, 1, 1)][0] = 2.0;
        let tr = f.c_tr23();
        assert_eq!(tr[0][0], 2.0);
        assert_eq!(tr[1][0], 0.0);
        assert_eq!(tr[0][1], 0.0);
    }

    #[test]
    fn positivity_checks() {
        let g = small_grid();
        let mut f = Components::zeros(3, g.npoints());
        for a in 0..3 {
            f.e[a * 3 + a] = vec![1.0; g.npoints()];
        }
        f.alpha = vec![1.0; g.npoints()];
        let st = FrameState { t: 1.0, f: f.clone() };
        assert!(st.check_positivity().is_ok());
        let mut bad = f.clone();
        bad.alpha[3] = -0.5;
        assert!(FrameState { t: 1.0, f: bad }.check_positivity().is_err());
        let mut bad2 = f;
        bad2.e[0][0] = -1.0; // flips the determinant sign at point 0
        assert!(RescaledState { t: 1.0, f: bad2 }.check_positivity().is_err());
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let g = small_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_smooth_components(&g, 3, 0.3, 1.0, &[1.0, 0.9, 1.1], &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        write_snapshot(&path, &f, 0.25, &g, "rescaled").unwrap();
        let (back, t, spec, kind) = read_snapshot(&path).unwrap();
        assert_eq!(t, 0.25);
        assert_eq!(kind, "rescaled");
        assert_eq!(spec.dims, vec![8, 8, 8]);
        assert_eq!(back, f);
    }

    #[test]
    fn random_fields_are_spectrally_resolved() {
        let g = small_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_smooth_field(&g, 1.0, &mut rng);
        // derivative of a resolved field twice along each axis stays bounded
        let mut worst: f64 = 0.0;
        for axis in 0..3 {
            let d1 = g.spatial_derivative(&f, axis).unwrap();
            let d2 = g.spatial_derivative(&d1, axis).unwrap();
            worst = worst.max(d2.iter().fold(0.0f64, |m, &v| m.max(v.abs())));
        }
        assert!(worst < 100.0);
    }
}
