//! Time integration toward `t = 0`: constraint-solved initial data, the RK4
//! stepper with log-spaced steps, run orchestration with diagnostics
//! recording, and the dual-run machinery for cone-domain uniqueness checks.
//!
//! Initial data is built from a one-dimensional even-parity ansatz along the
//! first grid axis: a free lapse perturbation fixes `U` and `C` exactly
//! through the lapse-gradient and frame-integrability constraints, the
//! Hamiltonian constraint is solved pointwise for `ℋ`, and the momentum
//! constraints are solved for the `Σ_A0` column by a spectral antiderivative,
//! iterated to a fixed point.  Cone runs evolve on the full torus and
//! restrict diagnostics to the shrinking ball, monitoring the spacelike
//! character of the lateral boundary.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    curvature_invariants, extract_asymptotics, mean_curvature, min_max, weyl_component,
    AsymptoticData, DiagnosticsRecord, ProbeRow,
};
use crate::error::{Error, Result};
use crate::frame::{all_partials, PointData};
use crate::fuchsian::{
    background_rescaled, hamiltonian_at, momentum_at, rescaled_constraints, rhs_modified,
    GaugeParams,
};
use crate::grid::{bump_field, ConeDomain, GridSpec, Region, TorusGrid};
use crate::kasner::KasnerData;
use crate::state::{random_smooth_field, Components, RescaledState};
use crate::symmetrizer::{FieldIndexMap, SymmetrizerSet};

/// Spectrum of the initial perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Overall amplitude; zero gives the exact background.
    pub amplitude: f64,
    /// Number of cosine modes along the first axis.
    pub modes: usize,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn none() -> Self {
        PerturbationSpec {
            amplitude: 0.0,
            modes: 2,
            seed: 0,
        }
    }
}

/// Modification applied outside a ball, used for dual-run uniqueness tests.
/// The modified data agrees exactly with the unmodified data inside radius
/// `rho0` and differs by `O(amplitude)` outside; no constraint solve is
/// performed on the exterior part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExteriorSpec {
    pub amplitude: f64,
    pub seed: u64,
    /// Inner radius: the modification vanishes identically inside it.
    pub rho0: f64,
    /// Radius beyond which the modification reaches full strength.
    pub rho_out: f64,
}

/// Full description of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub kd: KasnerData,
    pub gp: GaugeParams,
    pub grid: GridSpec,
    /// Cone domain for localized runs; diagnostics are then restricted to
    /// the ball of radius ρ(t) and boundary monitors are evaluated.
    pub cone: Option<ConeDomain>,
    pub t0: f64,
    pub t_end: f64,
    /// CFL fraction for the spatial step bound `c_cfl t^{ε₂} Δx / ‖e‖_∞`.
    pub c_cfl: f64,
    /// Logarithmic step fraction: `dt ≤ c_log t`.
    pub c_log: f64,
    pub perturbation: PerturbationSpec,
    pub exterior: Option<ExteriorSpec>,
    /// Sobolev order k for `‖W‖_{H^k}`; the projected norm uses k−1.
    pub sobolev_order: usize,
    /// Steps between diagnostic records.
    pub output_every: usize,
    /// Times (strictly inside (t_end, t0)) at which full states are kept.
    pub snapshot_times: Vec<f64>,
    /// Residual tolerance demanded of the constraint-solved initial data.
    pub id_tolerance: f64,
    /// Whether to compute the Weyl invariant at record times.
    pub record_weyl: bool,
    /// Whether to finish with asymptotic extraction.
    pub extract: bool,
}

impl RunConfig {
    pub fn new(kd: KasnerData, gp: GaugeParams, grid: GridSpec) -> Self {
        RunConfig {
            kd,
            gp,
            grid,
            cone: None,
            t0: 1.0,
            t_end: 1e-3,
            c_cfl: 0.4,
            c_log: 0.02,
            perturbation: PerturbationSpec::none(),
            exterior: None,
            sobolev_order: 3,
            output_every: 10,
            snapshot_times: Vec::new(),
            id_tolerance: 1e-8,
            record_weyl: true,
            extract: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end < self.t0) {
            return Err(Error::ParameterRange {
                what: format!(
                    "need 0 < t_end < t0, got t_end={}, t0={}",
                    self.t_end, self.t0
                ),
            });
        }
        for &(v, name) in &[(self.c_cfl, "c_cfl"), (self.c_log, "c_log")] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::ParameterRange {
                    what: format!("{name} must lie in (0,1), got {v}"),
                });
            }
        }
        if self.sobolev_order == 0 || self.output_every == 0 {
            return Err(Error::ParameterRange {
                what: "sobolev_order and output_every must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Zero-mean antiderivative of a periodic profile on [-L, L), spectral.
fn profile_antiderivative(l: f64, prof: &[f64]) -> Vec<f64> {
    let n = prof.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = prof.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    let k0 = std::f64::consts::PI / l;
    for (j, v) in buf.iter_mut().enumerate() {
        let m = if 2 * j < n {
            j as f64
        } else if 2 * j == n {
            0.0
        } else {
            j as f64 - n as f64
        };
        *v = if m == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            *v / Complex64::new(0.0, k0 * m)
        };
    }
    inv.process(&mut buf);
    buf.iter().map(|v| v.re / n as f64).collect()
}

fn axis0_stride(grid: &TorusGrid) -> usize {
    grid.dims[1..].iter().product()
}

fn axis0_profile(grid: &TorusGrid, field: &[f64]) -> Vec<f64> {
    let stride = axis0_stride(grid);
    (0..grid.dims[0]).map(|j| field[j * stride]).collect()
}

fn broadcast_axis0(grid: &TorusGrid, prof: &[f64]) -> Vec<f64> {
    let stride = axis0_stride(grid);
    (0..grid.npoints()).map(|p| prof[p / stride]).collect()
}

/// Even periodic profile built from the first `modes` cosine modes with
/// seeded coefficients, scaled by `amplitude`.
fn even_profile<R: Rng>(grid: &TorusGrid, amplitude: f64, modes: usize, rng: &mut R) -> Vec<f64> {
    let l = grid.l;
    let coef: Vec<f64> = (0..modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (0..grid.npoints())
        .map(|p| {
            let x = grid.coord(0, grid.unravel(p)[0]);
            amplitude
                * coef
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| {
                        let m = (i + 1) as f64;
                        c / m * (m * std::f64::consts::PI * x / l).cos()
                    })
                    .sum::<f64>()
        })
        .collect()
}

/// Constraint-solved initial data at `t0`; returns the state together with
/// the maximum rescaled-constraint residual.
pub fn make_initial_data(
    grid: &TorusGrid,
    kd: &KasnerData,
    gp: &GaugeParams,
    t0: f64,
    pert: &PerturbationSpec,
    tol: f64,
) -> Result<(RescaledState, f64)> {
    let d = kd.dim();
    let np = grid.npoints();
    let bg = background_rescaled(kd, gp, t0, np)?;
    if pert.amplitude == 0.0 {
        return Ok((bg, 0.0));
    }
    if grid.deriv != crate::grid::DerivMethod::Spectral {
        return Err(Error::Config(
            "constraint-solved initial data requires spectral derivatives".into(),
        ));
    }
    if grid.dims[0] < 8 {
        return Err(Error::Config(
            "constraint-solved initial data needs an active first axis".into(),
        ));
    }
    if pert.modes == 0 || 2 * pert.modes >= grid.dims[0] {
        return Err(Error::ParameterRange {
            what: format!(
                "perturbation modes {} unresolvable on {} points",
                pert.modes, grid.dims[0]
            ),
        });
    }
    let nf = (d + 1) as f64;
    let t1e = t0.powf(1.0 - gp.eps2);
    let mut rng = ChaCha8Rng::seed_from_u64(pert.seed);

    // Free data: even lapse perturbation and an even tangential shear seed.
    let lapse_prof = even_profile(grid, pert.amplitude, pert.modes, &mut rng);
    let mut tau = vec![vec![0.0; np]; d * d];
    for a in 1..d {
        for b in a..d {
            let prof = even_profile(grid, pert.amplitude, pert.modes, &mut rng);
            tau[a * d + b] = prof.clone();
            tau[b * d + a] = prof;
        }
    }

    let mut f = bg.f.clone();
    let e00 = f.e[0][0];
    for p in 0..np {
        let factor = 1.0 + lapse_prof[p];
        if factor <= 0.0 {
            return Err(Error::ConstraintSolve {
                what: "lapse perturbation exceeds the positivity basin".into(),
                residual: factor,
            });
        }
        f.alpha[p] *= factor;
    }
    // Lapse-gradient constraint fixes U exactly (only the first slot is
    // nonzero for one-dimensional data), and the frame-integrability
    // constraint then fixes C.
    let dalpha = grid.spatial_derivative(&f.alpha, 0)?;
    let u0: Vec<f64> = (0..np).map(|p| t1e * e00 * dalpha[p] / f.alpha[p]).collect();
    f.u[0] = u0.clone();
    for bb in 1..d {
        for p in 0..np {
            f.c[Components::cidx(d, 0, bb, bb)][p] = -u0[p];
            f.c[Components::cidx(d, bb, bb, 0)][p] = u0[p];
        }
    }

    // Fixed point: Hamiltonian solve for ℋ, momentum solve for the Σ_A0
    // column, tangential block closed by trace-freeness.
    let a2 = (nf - 1.0) * (nf - 2.0);
    let b2 = (nf - 2.0) * kd.r0 + 2.0 * (nf - 1.0);
    let mut change = f64::INFINITY;
    let mut iter = 0usize;
    while change > 1e-13 {
        iter += 1;
        if iter > 100 {
            return Err(Error::ConstraintSolve {
                what: format!("initial-data fixed point stalled (last change {change:.3e})"),
                residual: change,
            });
        }
        change = 0.0;

        let partials = all_partials(grid, &f)?;
        let mut hnew = vec![0.0; np];
        for p in 0..np {
            let pd = PointData::gather(&f, &partials, p);
            let h = pd.h();
            let q = hamiltonian_at(&pd, kd, t1e) - a2 * h * h - b2 * h;
            let disc = b2 * b2 - 4.0 * a2 * q;
            if disc < 0.0 {
                return Err(Error::ConstraintSolve {
                    what: "Hamiltonian solve lost its real root (amplitude too large)".into(),
                    residual: disc,
                });
            }
            hnew[p] = (-b2 + disc.sqrt()) / (2.0 * a2);
            change = change.max((hnew[p] - h).abs());
        }
        f.h = hnew;

        let partials = all_partials(grid, &f)?;
        let mut sig_col = vec![vec![0.0; np]; d];
        for p in 0..np {
            let pd = PointData::gather(&f, &partials, p);
            let mom = momentum_at(&pd, kd, t1e);
            for a in 0..d {
                // Remove the divergence term the antiderivative will re-create.
                sig_col[a][p] = mom[a] - t1e * pd.dsigma(0, a, 0);
            }
        }
        for a in 0..d {
            let mut prof = axis0_profile(grid, &sig_col[a]);
            let mean = prof.iter().sum::<f64>() / prof.len() as f64;
            for v in &mut prof {
                *v -= mean;
            }
            let anti = profile_antiderivative(grid.l, &prof);
            let new = broadcast_axis0(grid, &anti);
            for p in 0..np {
                let v = -new[p] / (t1e * e00);
                change = change.max((f.sigma[a * d][p] - v).abs());
                f.sigma[a * d][p] = v;
                f.sigma[a][p] = v;
            }
        }
        // Tangential block: free symmetric seed, diagonal shifted so the
        // full shear is trace-free.
        for a in 1..d {
            for b in 1..d {
                if a != b {
                    f.sigma[a * d + b] = tau[a * d + b].clone();
                }
            }
        }
        for p in 0..np {
            let mut tr = f.sigma[0][p];
            for c in 1..d {
                tr += tau[c * d + c][p];
            }
            for a in 1..d {
                let v = tau[a * d + a][p] - tr / (d as f64 - 1.0);
                change = change.max((f.sigma[a * d + a][p] - v).abs());
                f.sigma[a * d + a][p] = v;
            }
        }
    }

    let w = RescaledState { t: t0, f };
    let cons = rescaled_constraints(grid, &w, gp, kd)?;
    let residual = cons.max_abs();
    if residual > tol {
        return Err(Error::ConstraintSolve {
            what: format!("initial-data residual {residual:.3e} exceeds tolerance {tol:.3e}"),
            residual,
        });
    }
    Ok((w, residual))
}

/// Add a seeded smooth modification to the lapse, mean curvature and shear,
/// cut off to vanish identically inside the ball of radius `ext.rho0`.
pub fn apply_exterior_modification(
    grid: &TorusGrid,
    w: &mut RescaledState,
    ext: &ExteriorSpec,
) -> Result<()> {
    if ext.rho_out <= ext.rho0 {
        return Err(Error::ParameterRange {
            what: format!(
                "exterior modification needs rho_out > rho0, got {} <= {}",
                ext.rho_out, ext.rho0
            ),
        });
    }
    let d = w.f.d;
    let np = grid.npoints();
    let bump = bump_field(grid, ext.rho0, ext.rho_out);
    let mut rng = ChaCha8Rng::seed_from_u64(ext.seed);
    let g_alpha = random_smooth_field(grid, ext.amplitude, &mut rng);
    let g_h = random_smooth_field(grid, ext.amplitude, &mut rng);
    let mut g_sigma = Vec::with_capacity(d * d);
    for _ in 0..d * d {
        g_sigma.push(random_smooth_field(grid, ext.amplitude, &mut rng));
    }
    for p in 0..np {
        let c = 1.0 - bump[p];
        w.f.alpha[p] *= 1.0 + c * g_alpha[p];
        w.f.h[p] += c * g_h[p];
        for i in 0..d * d {
            w.f.sigma[i][p] += c * g_sigma[i][p];
        }
    }
    w.f.project_sigma();
    Ok(())
}

/// Post-step projection distances and bookkeeping for one RK4 step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub proj_sigma: f64,
    pub proj_c: f64,
}

/// One RK4 step backward in time from `w.t` to `w.t - dt`, followed by
/// projection back onto the Σ/C symmetry classes.
pub fn step(
    grid: &TorusGrid,
    w: &RescaledState,
    dt: f64,
    gp: &GaugeParams,
    kd: &KasnerData,
) -> Result<(RescaledState, StepStats)> {
    if !(dt > 0.0 && dt < w.t) {
        return Err(Error::ParameterRange {
            what: format!("step must satisfy 0 < dt < t, got dt={dt}, t={}", w.t),
        });
    }
    let h = -dt;
    let t = w.t;
    let k1 = rhs_modified(grid, w, gp, kd)?;
    let mut f2 = w.f.clone();
    f2.add_scaled(&k1, 0.5 * h);
    let k2 = rhs_modified(grid, &RescaledState { t: t + 0.5 * h, f: f2 }, gp, kd)?;
    let mut f3 = w.f.clone();
    f3.add_scaled(&k2, 0.5 * h);
    let k3 = rhs_modified(grid, &RescaledState { t: t + 0.5 * h, f: f3 }, gp, kd)?;
    let mut f4 = w.f.clone();
    f4.add_scaled(&k3, h);
    let k4 = rhs_modified(grid, &RescaledState { t: t + h, f: f4 }, gp, kd)?;
    let mut f = w.f.clone();
    f.add_scaled(&k1, h / 6.0);
    f.add_scaled(&k2, h / 3.0);
    f.add_scaled(&k3, h / 3.0);
    f.add_scaled(&k4, h / 6.0);
    let proj_sigma = f.project_sigma();
    let proj_c = f.project_c();
    if !f.max_abs().is_finite() {
        return Err(Error::Abort(format!("state became non-finite at t = {}", t - dt)));
    }
    let out = RescaledState { t: t - dt, f };
    out.check_positivity()?;
    Ok((out, StepStats { proj_sigma, proj_c }))
}

/// Step-size rule `dt = min(c_cfl t^{ε₂} Δx / ‖e‖_∞, c_log t)`.
pub fn time_step(grid: &TorusGrid, w: &RescaledState, gp: &GaugeParams, cfg: &RunConfig) -> f64 {
    let mut dx = f64::INFINITY;
    for a in 0..grid.n_spatial() {
        if grid.dims[a] > 1 {
            dx = dx.min(grid.dx(a));
        }
    }
    let emax = w
        .f
        .e
        .iter()
        .flat_map(|f| f.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    let dt_log = cfg.c_log * w.t;
    if !dx.is_finite() || emax == 0.0 {
        return dt_log;
    }
    dt_log.min(cfg.c_cfl * w.t.powf(gp.eps2) * dx / emax)
}

/// The recorded scalar time series of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeSeries {
    pub records: Vec<DiagnosticsRecord>,
}

impl TimeSeries {
    /// CSV with one row per record and the scalar columns flattened.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        let mut header = vec![
            "t".to_string(),
            "frame".into(),
            "curl".into(),
            "jacobi".into(),
            "lapse".into(),
            "momentum".into(),
            "hamiltonian".into(),
            "w_norm".into(),
            "pw_norm".into(),
            "ricci_min".into(),
            "ricci_max".into(),
            "mean_curv_min".into(),
            "mean_curv_max".into(),
            "weyl_min".into(),
            "weyl_max".into(),
            "sup_e".into(),
            "boundary_form_max".into(),
            "background_dev".into(),
            "projection_dist".into(),
        ];
        let nprobe = self.records.first().map_or(0, |r| r.probes.points.len());
        for j in 0..nprobe {
            header.push(format!("probe{j}_alpha"));
            header.push(format!("probe{j}_ricci"));
        }
        wtr.write_record(&header)
            .map_err(|e| Error::Config(e.to_string()))?;
        for r in &self.records {
            let mut row = vec![
                r.t.to_string(),
                r.constraints[0].to_string(),
                r.constraints[1].to_string(),
                r.constraints[2].to_string(),
                r.constraints[3].to_string(),
                r.constraints[4].to_string(),
                r.constraints[5].to_string(),
                r.w_norm.to_string(),
                r.pw_norm.to_string(),
                r.ricci_scalar.min.to_string(),
                r.ricci_scalar.max.to_string(),
                r.mean_curv.min.to_string(),
                r.mean_curv.max.to_string(),
                r.weyl_invariant.map_or(String::new(), |m| m.min.to_string()),
                r.weyl_invariant.map_or(String::new(), |m| m.max.to_string()),
                r.sup_e.to_string(),
                r.boundary_form_max.map_or(String::new(), |v| v.to_string()),
                r.background_dev.to_string(),
                r.projection_dist.to_string(),
            ];
            for j in 0..nprobe {
                row.push(r.probes.alpha[j].to_string());
                row.push(r.probes.ricci[j].to_string());
            }
            wtr.write_record(&row)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        wtr.flush().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// Everything produced by a run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub series: TimeSeries,
    pub final_state: RescaledState,
    /// States captured at the configured snapshot times, in the order the
    /// run crossed them, ending with the final state.
    pub snapshots: Vec<RescaledState>,
    pub asymptotics: Option<AsymptoticData>,
    /// Initial-data residual reported by the constraint solver.
    pub id_residual: f64,
    /// max over records of (‖W‖² + ∫ s⁻¹‖ℙW‖²_{H^k} ds) / ‖W₀‖².
    pub energy_ratio: f64,
    pub steps: usize,
}

/// Largest eigenvalue of the symmetric part of the lateral-boundary flux
/// form `(x_Λ/|x|) e_D{}^Λ B^D − ρ₁ B⁰` over grid points within a shell
/// around radius `rho` (weak spacelikeness requires it to be ≤ 0).
pub fn boundary_form_max(
    grid: &TorusGrid,
    w: &RescaledState,
    sym: &SymmetrizerSet,
    rho: f64,
    rho1: f64,
) -> f64 {
    let d = w.f.d;
    let map = FieldIndexMap::new(d);
    let dxmax = (0..grid.n_spatial())
        .filter(|&a| grid.dims[a] > 1)
        .map(|a| grid.dx(a))
        .fold(0.0f64, f64::max);
    let shell: Vec<usize> = (0..grid.npoints())
        .filter(|&p| {
            let r = grid.radius(p);
            r > rho - 1.5 * dxmax && r <= rho + 0.5 * dxmax
        })
        .collect();
    let stride = (shell.len() / 64).max(1);
    let mut worst = f64::NEG_INFINITY;
    for &p in shell.iter().step_by(stride) {
        let x = grid.point(p);
        let r = grid.radius(p);
        if r == 0.0 {
            continue;
        }
        let mut m = &sym.b0 * (-rho1);
        for dd in 0..d {
            for om in 0..d {
                let c = x[om] / r * w.f.e[dd * d + om][p];
                if c != 0.0 {
                    m += &sym.bd[dd] * c;
                }
            }
        }
        let symm = DMatrix::from_fn(map.n_total, map.n_total, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
        let eig = symm.symmetric_eigenvalues();
        worst = worst.max(eig.max());
    }
    worst
}

fn probe_points(grid: &TorusGrid, count: usize) -> Vec<usize> {
    let stride = axis0_stride(grid);
    let n0 = grid.dims[0];
    let count = count.min(n0);
    (0..count).map(|j| (j * n0 / count) * stride).collect()
}

struct Recorder<'a> {
    cfg: &'a RunConfig,
    grid: &'a TorusGrid,
    sym: Option<SymmetrizerSet>,
    probes: Vec<usize>,
    pfields: Vec<usize>,
    energy_acc: f64,
    last_energy_sample: Option<(f64, f64)>,
    energy_max: f64,
    w0_sq: Option<f64>,
}

impl<'a> Recorder<'a> {
    fn new(cfg: &'a RunConfig, grid: &'a TorusGrid) -> Result<Self> {
        let sym = if cfg.cone.is_some() {
            Some(SymmetrizerSet::build(
                &cfg.kd,
                cfg.gp.eps1,
                cfg.gp.eps2,
                cfg.gp.nu,
                &cfg.gp.sym,
            )?)
        } else {
            None
        };
        let map = FieldIndexMap::new(cfg.kd.dim());
        Ok(Recorder {
            cfg,
            grid,
            sym,
            probes: probe_points(grid, 10),
            pfields: (0..map.p_range()).collect(),
            energy_acc: 0.0,
            last_energy_sample: None,
            energy_max: 0.0,
            w0_sq: None,
        })
    }

    fn record(&mut self, w: &RescaledState, projection_dist: f64) -> Result<DiagnosticsRecord> {
        let cfg = self.cfg;
        let grid = self.grid;
        let region = match &cfg.cone {
            Some(cd) => Region::Ball(cd.rho_of_t(w.t)?),
            None => Region::Torus,
        };
        let decay_region = match &cfg.cone {
            Some(cd) => Region::Ball(cd.rho_tilde0()),
            None => Region::Torus,
        };
        let mask = grid.region_mask(region);
        let mask_opt = cfg.cone.as_ref().map(|_| mask.as_slice());

        let cons = rescaled_constraints(grid, w, &cfg.gp, &cfg.kd)?;
        let group = |fs: &[&[f64]]| grid.l2_norm(fs, region);
        let constraints = [
            group(&cons.frame.iter().map(|f| f.as_slice()).collect::<Vec<_>>()),
            group(&cons.curl.iter().map(|f| f.as_slice()).collect::<Vec<_>>()),
            group(&cons.jacobi.iter().map(|f| f.as_slice()).collect::<Vec<_>>()),
            group(&cons.lapse.iter().map(|f| f.as_slice()).collect::<Vec<_>>()),
            group(&cons.momentum.iter().map(|f| f.as_slice()).collect::<Vec<_>>()),
            group(&[cons.hamiltonian.as_slice()]),
        ];

        let all = w.f.all_fields();
        let w_norm = grid.sobolev_norm(&all, cfg.sobolev_order, region)?;
        let pslots: Vec<&[f64]> = self.pfields.iter().map(|&i| all[i]).collect();
        let pw_norm = grid.sobolev_norm(&pslots_ref(&pslots), cfg.sobolev_order - 1, decay_region)?;
        let pw_k = grid.sobolev_norm(&pslots_ref(&pslots), cfg.sobolev_order, decay_region)?;

        // Energy monitor: trapezoid accumulation of ∫ s⁻¹ ‖ℙW‖²_{H^k} ds.
        if let Some((tp, gp_prev)) = self.last_energy_sample {
            let g_now = pw_k * pw_k / w.t;
            self.energy_acc += 0.5 * (gp_prev + g_now) * (tp - w.t);
        }
        self.last_energy_sample = Some((w.t, pw_k * pw_k / w.t));
        let w0_sq = *self.w0_sq.get_or_insert(w_norm * w_norm);
        self.energy_max = self
            .energy_max
            .max((w_norm * w_norm + self.energy_acc) / w0_sq);

        let (ricci, ricci_sq) = curvature_invariants(w, &cfg.gp, &cfg.kd)?;
        let kbar = mean_curvature(w, &cfg.gp, &cfg.kd)?;
        let weyl = if cfg.record_weyl {
            Some(weyl_component(grid, w, &cfg.gp, &cfg.kd)?)
        } else {
            None
        };

        let bg = background_rescaled(&cfg.kd, &cfg.gp, w.t, 1)?;
        let mut dev = 0.0f64;
        let mut bg_scale = 0.0f64;
        for (i, field) in all.iter().enumerate() {
            let b = bg.f.all_fields()[i][0];
            bg_scale = bg_scale.max(b.abs());
            for (p, &v) in field.iter().enumerate() {
                if mask_opt.map_or(true, |m| m[p] > 0.0) {
                    dev = dev.max((v - b).abs());
                }
            }
        }
        let background_dev = dev / bg_scale.max(1e-300);

        let sup_e = w
            .f
            .e
            .iter()
            .flat_map(|f| f.iter().enumerate())
            .filter(|(p, _)| mask_opt.map_or(true, |m| m[*p] > 0.0))
            .fold(0.0f64, |m, (_, &v)| m.max(v.abs()));

        let boundary = match (&cfg.cone, &self.sym) {
            (Some(cd), Some(sym)) => Some(boundary_form_max(
                grid,
                w,
                sym,
                cd.rho_of_t(w.t)?,
                cd.rho1,
            )),
            _ => None,
        };

        let probes = ProbeRow {
            points: self.probes.clone(),
            alpha: self.probes.iter().map(|&p| w.f.alpha[p]).collect(),
            h: self.probes.iter().map(|&p| w.f.h[p]).collect(),
            ricci: self.probes.iter().map(|&p| ricci[p]).collect(),
            mean_curv: self.probes.iter().map(|&p| kbar[p]).collect(),
            weyl: weyl
                .as_ref()
                .map(|wy| self.probes.iter().map(|&p| wy.invariant[p]).collect())
                .unwrap_or_default(),
        };

        Ok(DiagnosticsRecord {
            t: w.t,
            constraints,
            w_norm,
            pw_norm,
            ricci_scalar: min_max(&ricci, mask_opt),
            ricci_sq: min_max(&ricci_sq, mask_opt),
            mean_curv: min_max(&kbar, mask_opt),
            weyl_invariant: weyl.as_ref().map(|wy| min_max(&wy.invariant, mask_opt)),
            sup_e,
            boundary_form_max: boundary,
            background_dev,
            projection_dist,
            probes,
        })
    }
}

fn pslots_ref<'a>(v: &'a [&'a [f64]]) -> Vec<&'a [f64]> {
    v.to_vec()
}

/// Integrate a configured run from `t0` down to `t_end`.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let grid = TorusGrid::from_spec(&cfg.grid)?;
    let (mut w, id_residual) = make_initial_data(
        &grid,
        &cfg.kd,
        &cfg.gp,
        cfg.t0,
        &cfg.perturbation,
        cfg.id_tolerance,
    )?;
    if let Some(ext) = &cfg.exterior {
        apply_exterior_modification(&grid, &mut w, ext)?;
    }

    let mut targets: Vec<f64> = cfg
        .snapshot_times
        .iter()
        .copied()
        .filter(|&s| s > cfg.t_end && s < cfg.t0)
        .collect();
    targets.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut target_idx = 0usize;

    let mut recorder = Recorder::new(cfg, &grid)?;
    let mut records = vec![recorder.record(&w, 0.0)?];
    let mut snapshots = Vec::new();
    let mut steps = 0usize;
    let mut proj_acc = 0.0f64;

    while w.t > cfg.t_end * (1.0 + 1e-12) {
        let mut dt = time_step(&grid, &w, &cfg.gp, cfg);
        let mut hit_target = false;
        if target_idx < targets.len() && w.t - dt <= targets[target_idx] {
            dt = w.t - targets[target_idx];
            hit_target = true;
        } else if w.t - dt < cfg.t_end {
            dt = w.t - cfg.t_end;
        }
        let (next, stats) = step(&grid, &w, dt, &cfg.gp, &cfg.kd)?;
        w = next;
        steps += 1;
        proj_acc = proj_acc.max(stats.proj_sigma.max(stats.proj_c));
        if hit_target {
            w.t = targets[target_idx];
            snapshots.push(w.clone());
            target_idx += 1;
        }
        let at_end = w.t <= cfg.t_end * (1.0 + 1e-12);
        if steps % cfg.output_every == 0 || hit_target || at_end {
            records.push(recorder.record(&w, proj_acc)?);
            proj_acc = 0.0;
        }
    }
    snapshots.push(w.clone());

    let asymptotics = if cfg.extract {
        let series: Vec<(f64, f64)> = records
            .iter()
            // Slightly more than the final decade so the discrete record
            // times always span a full decade for the ζ fit.
            .filter(|r| r.t <= 15.0 * cfg.t_end)
            .map(|r| (r.t, r.pw_norm))
            .collect();
        Some(extract_asymptotics(&cfg.kd, &cfg.gp, &snapshots, &series)?)
    } else {
        None
    };

    Ok(RunResult {
        series: TimeSeries { records },
        final_state: w,
        snapshots,
        asymptotics,
        id_residual,
        energy_ratio: recorder.energy_max,
        steps,
    })
}

/// Maximum pointwise discrepancy between two states over a ball, used by the
/// dual-run uniqueness comparison.
pub fn restricted_discrepancy(
    grid: &TorusGrid,
    a: &RescaledState,
    b: &RescaledState,
    rho: f64,
) -> f64 {
    let mask = grid.region_mask(Region::Ball(rho));
    let fa = a.f.all_fields();
    let fb = b.f.all_fields();
    let mut worst = 0.0f64;
    for (x, y) in fa.iter().zip(fb.iter()) {
        for p in 0..x.len() {
            if mask[p] > 0.0 {
                worst = worst.max((x[p] - y[p]).abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DerivMethod;
    use crate::kasner::kasner_from_q;
    use approx::assert_relative_eq;

    fn kd4() -> KasnerData {
        kasner_from_q(4, &[0.5, 0.3, 0.2]).unwrap()
    }

    fn line_grid(n: usize) -> TorusGrid {
        TorusGrid::new(1.0, vec![n, 1, 1], DerivMethod::Spectral).unwrap()
    }

    #[test]
    fn antiderivative_inverts_derivative() {
        let grid = line_grid(32);
        let x: Vec<f64> = (0..32).map(|i| grid.coord(0, i)).collect();
        let f: Vec<f64> = x
            .iter()
            .map(|&x| (std::f64::consts::PI * x).sin() + 0.3 * (2.0 * std::f64::consts::PI * x).cos())
            .collect();
        let df: Vec<f64> = x
            .iter()
            .map(|&x| {
                std::f64::consts::PI * (std::f64::consts::PI * x).cos()
                    - 0.6 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * x).sin()
            })
            .collect();
        let anti = profile_antiderivative(grid.l, &df);
        for i in 0..32 {
            assert_relative_eq!(anti[i], f[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_amplitude_data_is_background() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = line_grid(16);
        let (w, res) = make_initial_data(&grid, &kd, &gp, 0.8, &PerturbationSpec::none(), 1e-8)
            .unwrap();
        assert_eq!(res, 0.0);
        let bg = background_rescaled(&kd, &gp, 0.8, grid.npoints()).unwrap();
        assert_eq!(w.f, bg.f);
    }

    #[test]
    fn small_amplitude_data_solves_constraints() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = line_grid(32);
        let pert = PerturbationSpec {
            amplitude: 1e-3,
            modes: 3,
            seed: 7,
        };
        let (w, res) = make_initial_data(&grid, &kd, &gp, 1.0, &pert, 1e-8).unwrap();
        assert!(res <= 1e-8, "residual {res:.3e}");
        let bg = background_rescaled(&kd, &gp, 1.0, grid.npoints()).unwrap();
        let mut diff = w.f.clone();
        diff.add_scaled(&bg.f, -1.0);
        let dev = diff.max_abs();
        assert!(dev > 1e-5 && dev < 1e-1, "deviation {dev:.3e}");
        assert!(w.f.class_violation() < 1e-14);
    }

    #[test]
    fn initial_data_is_tangentially_constant_on_3d_grids() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = TorusGrid::new(1.0, vec![16, 8, 8], DerivMethod::Spectral).unwrap();
        let pert = PerturbationSpec {
            amplitude: 1e-3,
            modes: 2,
            seed: 3,
        };
        let (w, res) = make_initial_data(&grid, &kd, &gp, 1.0, &pert, 1e-8).unwrap();
        assert!(res <= 1e-8, "residual {res:.3e}");
        let stride = axis0_stride(&grid);
        for field in w.f.all_fields() {
            for p in 0..grid.npoints() {
                assert_eq!(field[p], field[(p / stride) * stride]);
            }
        }
    }

    #[test]
    fn oversized_amplitude_is_rejected() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = line_grid(16);
        let pert = PerturbationSpec {
            amplitude: 2.0,
            modes: 2,
            seed: 1,
        };
        assert!(make_initial_data(&grid, &kd, &gp, 1.0, &pert, 1e-8).is_err());
    }

    #[test]
    fn background_step_matches_closed_form() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = line_grid(8);
        let w = background_rescaled(&kd, &gp, 0.5, grid.npoints()).unwrap();
        let dt = 1e-3;
        let (next, _) = step(&grid, &w, dt, &gp, &kd).unwrap();
        let exact = background_rescaled(&kd, &gp, 0.5 - dt, grid.npoints()).unwrap();
        let mut diff = next.f.clone();
        diff.add_scaled(&exact.f, -1.0);
        assert!(diff.max_abs() < 1e-11, "one-step error {:.3e}", diff.max_abs());
    }

    #[test]
    fn rk4_is_fourth_order() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = line_grid(16);
        let pert = PerturbationSpec {
            amplitude: 1e-2,
            modes: 2,
            seed: 11,
        };
        let (w0, _) = make_initial_data(&grid, &kd, &gp, 0.5, &pert, 1e-7).unwrap();
        let integrate = |nsteps: usize| -> RescaledState {
            let dt = 0.1 / nsteps as f64;
            let mut w = w0.clone();
            for _ in 0..nsteps {
                w = step(&grid, &w, dt, &gp, &kd).unwrap().0;
            }
            w
        };
        let reference = integrate(64);
        let err = |w: &RescaledState| {
            let mut d = w.f.clone();
            d.add_scaled(&reference.f, -1.0);
            d.max_abs()
        };
        let e1 = err(&integrate(8));
        let e2 = err(&integrate(16));
        let order = (e1 / e2).log2();
        assert!(order > 3.5, "observed order {order:.2} (e1={e1:.3e}, e2={e2:.3e})");
    }

    #[test]
    fn small_steps_recover_the_rhs() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = line_grid(16);
        let pert = PerturbationSpec {
            amplitude: 1e-2,
            modes: 2,
            seed: 5,
        };
        let (w, _) = make_initial_data(&grid, &kd, &gp, 0.7, &pert, 1e-7).unwrap();
        let dt = 1e-6;
        let (next, _) = step(&grid, &w, dt, &gp, &kd).unwrap();
        let rhs = rhs_modified(&grid, &w, &gp, &kd).unwrap();
        let mut fd = w.f.clone();
        fd.add_scaled(&next.f, -1.0);
        // (w - w') / dt should approximate the RHS to O(dt).
        let mut worst = 0.0f64;
        for (a, b) in fd.all_fields().iter().zip(rhs.all_fields().iter()) {
            for p in 0..a.len() {
                worst = worst.max((a[p] / dt - b[p]).abs());
            }
        }
        assert!(worst < 1e-4, "consistency defect {worst:.3e}");
    }

    #[test]
    fn step_rejects_crossing_the_singularity() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = line_grid(8);
        let w = background_rescaled(&kd, &gp, 0.01, grid.npoints()).unwrap();
        assert!(step(&grid, &w, 0.02, &gp, &kd).is_err());
    }

    #[test]
    fn run_is_deterministic_and_records() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = line_grid(16);
        let mut cfg = RunConfig::new(kd, gp, grid.spec());
        cfg.t0 = 1.0;
        cfg.t_end = 0.5;
        cfg.perturbation = PerturbationSpec {
            amplitude: 1e-3,
            modes: 2,
            seed: 9,
        };
        cfg.output_every = 5;
        cfg.record_weyl = false;
        let r1 = run(&cfg).unwrap();
        let r2 = run(&cfg).unwrap();
        assert!(r1.series.records.len() >= 3);
        assert_eq!(r1.steps, r2.steps);
        for (a, b) in r1.series.records.iter().zip(r2.series.records.iter()) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.constraints, b.constraints);
            assert_eq!(a.w_norm, b.w_norm);
            assert_eq!(a.pw_norm, b.pw_norm);
        }
        assert_eq!(r1.final_state.f, r2.final_state.f);
        assert_relative_eq!(r1.final_state.t, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn snapshots_land_on_requested_times() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = line_grid(8);
        let mut cfg = RunConfig::new(kd, gp, grid.spec());
        cfg.t0 = 1.0;
        cfg.t_end = 0.25;
        cfg.snapshot_times = vec![0.5];
        cfg.record_weyl = false;
        let r = run(&cfg).unwrap();
        assert_eq!(r.snapshots.len(), 2);
        assert_relative_eq!(r.snapshots[0].t, 0.5, epsilon = 1e-12);
        assert_relative_eq!(r.snapshots[1].t, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn exterior_modification_vanishes_inside_the_ball() {
        let kd = kd4();
        let gp = GaugeParams::defaults(&kd).unwrap();
        let grid = TorusGrid::new(8.0, vec![16, 16, 16], DerivMethod::Spectral).unwrap();
        let mut w = background_rescaled(&kd, &gp, 0.5, grid.npoints()).unwrap();
        let base = w.clone();
        apply_exterior_modification(
            &grid,
            &mut w,
            &ExteriorSpec {
                amplitude: 1e-3,
                seed: 2,
                rho0: 3.0,
                rho_out: 6.0,
            },
        )
        .unwrap();
        assert_eq!(restricted_discrepancy(&grid, &base, &w, 3.0), 0.0);
        assert!(restricted_discrepancy(&grid, &base, &w, 8.0) > 1e-5);
    }
}
