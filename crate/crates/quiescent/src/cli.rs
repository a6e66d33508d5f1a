//! Command-line interface: configuration loading with dotted-path
//! overrides, command dispatch, and artifact emission.
//!
//! Every command is deterministic given the configuration and seed.  Reports
//! are printed as JSON to stdout; with `--out DIR` the effective
//! configuration echo, CSV time series, JSON reports, and state snapshots
//! are also written under the directory.  Exit codes: 0 all assertions pass,
//! 1 an assertion failed, 2 configuration error, 3 runtime abort.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diagnostics::{blowup_exponents, min_max, weyl_component};
use crate::error::{Error, Result};
use crate::evolution::{
    restricted_discrepancy, run, ExteriorSpec, PerturbationSpec, RunConfig, RunResult,
};
use crate::fuchsian::{rescaled_constraints, GaugeParams};
use crate::grid::{ConeDomain, DerivMethod, GridSpec, TorusGrid};
use crate::kasner::{check_subcritical, kasner_from_q, KasnerData};
use crate::state::{read_snapshot, write_snapshot, RescaledState};
use crate::symmetrizer::{appendix_identities, mc_pd_check, SymmetrizerSet};

#[derive(Debug, Parser)]
#[command(name = "quiescent", about = "Frame/Fuchsian evolution toward a big bang", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file; defaults apply for absent keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted-path override, e.g. `--set grid.dims=[24,24,24]`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory for config echo, CSV series, and snapshots.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the perturbation seed from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Rayon thread count (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check Kasner exponent relations, sub-criticality, and gauge exponents.
    CheckKasner,
    /// Build the symmetrizer matrices and verify their algebraic properties.
    VerifySymmetrizer,
    /// Exact contraction identities and the C-block positivity criterion.
    AppendixCheck,
    /// Solve the constraints for perturbed initial data and write a snapshot.
    MakeData,
    /// Integrate a configured run from t0 down to t_end.
    Evolve,
    /// Constraint and curvature diagnostics for a stored snapshot.
    Diagnose {
        /// Snapshot file produced by `make-data` or `evolve`.
        snapshot: PathBuf,
    },
    /// Evolve and extract asymptotic data (Ĥ, Σ̂, α̂, ζ).
    Extract,
    /// Dual-run uniqueness comparison on a truncated cone domain.
    ConeUniqueness,
}

/// Cone parameters as configured; the gauge exponent ε₂ and the time
/// interval come from the rest of the configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConeSpec {
    pub rho0: f64,
    pub rho1: f64,
}

/// The full configuration; every field has a default so a missing file or
/// partial file is valid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Spacetime dimension.
    pub n: usize,
    /// Kasner exponents q_Λ (n−1 of them).
    pub q: Vec<f64>,
    /// Gauge exponent overrides; derived from the background when absent.
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub nu: Option<f64>,
    pub grid: GridSpec,
    pub cone: Option<ConeSpec>,
    pub t0: f64,
    pub t_end: f64,
    pub c_cfl: f64,
    pub c_log: f64,
    pub amplitude: f64,
    pub modes: usize,
    pub seed: u64,
    pub exterior: Option<ExteriorSpec>,
    pub sobolev_order: usize,
    pub output_every: usize,
    pub snapshot_times: Vec<f64>,
    pub id_tolerance: f64,
    pub record_weyl: bool,
    /// Tolerance for the dual-run restricted agreement check.
    pub uniqueness_tol: f64,
    /// Random (a, b) samples for the C-block positivity cross-check.
    pub mc_pd_samples: usize,
    /// Whether the sub-criticality maximum ranges over distinct Γ only.
    pub gamma_distinct: bool,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            n: 4,
            q: vec![0.5, 0.3, 0.2],
            eps1: None,
            eps2: None,
            nu: None,
            grid: GridSpec {
                l: 1.0,
                dims: vec![16, 1, 1],
                deriv: DerivMethod::Spectral,
            },
            cone: None,
            t0: 1.0,
            t_end: 1e-2,
            c_cfl: 0.4,
            c_log: 0.02,
            amplitude: 1e-3,
            modes: 2,
            seed: 0,
            exterior: None,
            sobolev_order: 3,
            output_every: 10,
            snapshot_times: Vec::new(),
            id_tolerance: 1e-8,
            record_weyl: true,
            uniqueness_tol: 1e-5,
            mc_pd_samples: 100,
            gamma_distinct: true,
        }
    }
}

impl CliConfig {
    pub fn kasner(&self) -> Result<KasnerData> {
        kasner_from_q(self.n, &self.q)
    }

    pub fn gauge(&self, kd: &KasnerData) -> Result<GaugeParams> {
        match (self.eps1, self.eps2) {
            (None, None) => {
                let mut gp = GaugeParams::defaults(kd)?;
                if let Some(nu) = self.nu {
                    gp = GaugeParams::with_exponents(kd, gp.eps1, gp.eps2, nu, gp.k_order)?;
                }
                Ok(gp)
            }
            (e1, e2) => {
                let defaults = GaugeParams::defaults(kd)?;
                let eps1 = e1.unwrap_or(defaults.eps1);
                let eps2 = e2.unwrap_or(defaults.eps2);
                let nu = self.nu.unwrap_or(0.5 * (1.0 - eps2));
                GaugeParams::with_exponents(kd, eps1, eps2, nu, defaults.k_order)
            }
        }
    }

    pub fn run_config(&self, extract: bool) -> Result<RunConfig> {
        let kd = self.kasner()?;
        let gp = self.gauge(&kd)?;
        let cone = match self.cone {
            Some(cs) => Some(ConeDomain::new(
                self.t0, self.t_end, cs.rho0, cs.rho1, gp.eps2,
            )?),
            None => None,
        };
        let mut cfg = RunConfig::new(kd, gp, self.grid.clone());
        cfg.cone = cone;
        cfg.t0 = self.t0;
        cfg.t_end = self.t_end;
        cfg.c_cfl = self.c_cfl;
        cfg.c_log = self.c_log;
        cfg.perturbation = PerturbationSpec {
            amplitude: self.amplitude,
            modes: self.modes,
            seed: self.seed,
        };
        cfg.exterior = self.exterior;
        cfg.sobolev_order = self.sobolev_order;
        cfg.output_every = self.output_every;
        cfg.snapshot_times = self.snapshot_times.clone();
        cfg.id_tolerance = self.id_tolerance;
        cfg.record_weyl = self.record_weyl;
        cfg.extract = extract;
        Ok(cfg)
    }
}

/// Apply a `key=value` override to a JSON tree, creating intermediate
/// objects along the dotted path; the value is parsed as JSON, falling back
/// to a plain string.
fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::Config(format!("override '{spec}' is not of the form key=value"))
    })?;
    let val: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            return Err(Error::Config(format!(
                "override path '{path}' descends through a non-object at '{part}'"
            )));
        }
        let map = node.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            map.insert(part.to_string(), val);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

/// Deep-merge `user` onto `base`: objects merge recursively, anything else
/// replaces.  This lets partial files/overrides leave nested defaults alone.
fn merge(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Load the configuration file (if any) and apply overrides.
pub fn load_config(cli: &Cli) -> Result<CliConfig> {
    let mut tree: Value = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for spec in &cli.set {
        apply_override(&mut tree, spec)?;
    }
    let mut full = serde_json::to_value(CliConfig::default())?;
    merge(&mut full, tree);
    let mut cfg: CliConfig = serde_json::from_value(full)
        .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_json(dir: Option<&Path>, name: &str, value: &Value) -> Result<()> {
    if let Some(dir) = dir {
        let path = dir.join(name);
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    }
    Ok(())
}

struct Emitter<'a> {
    out: Option<&'a Path>,
}

impl<'a> Emitter<'a> {
    fn new(out: Option<&'a Path>, cfg: &CliConfig) -> Result<Self> {
        if let Some(dir) = out {
            std::fs::create_dir_all(dir)?;
            write_json(Some(dir), "config_echo.json", &serde_json::to_value(cfg)?)?;
        }
        Ok(Emitter { out })
    }

    fn report(&self, value: &Value) -> Result<()> {
        println!("{}", serde_json::to_string_pretty(value)?);
        write_json(self.out, "report.json", value)
    }

    fn run_artifacts(&self, cfg: &CliConfig, result: &RunResult) -> Result<()> {
        if let Some(dir) = self.out {
            result.series.write_csv(&dir.join("series.csv"))?;
            let grid = TorusGrid::from_spec(&cfg.grid)?;
            for (i, snap) in result.snapshots.iter().enumerate() {
                write_snapshot(
                    &dir.join(format!("snapshot_{i:03}.json")),
                    &snap.f,
                    snap.t,
                    &grid,
                    "rescaled",
                )?;
            }
        }
        Ok(())
    }
}

/// Monitors that every cone-domain record must satisfy: the boundary flux
/// form nonpositive (weak spacelikeness) and sup|e| within the admissible
/// bound ρ₁/(6n³).
fn cone_monitors_ok(cfg: &RunConfig, result: &RunResult) -> bool {
    let Some(cd) = &cfg.cone else {
        return true;
    };
    let nf = (cfg.kd.dim() + 1) as f64;
    let e_bound = cd.rho1 / (6.0 * nf * nf * nf);
    result.series.records.iter().all(|r| {
        r.boundary_form_max.map_or(false, |v| v <= 0.0) && r.sup_e <= e_bound
    })
}

fn cmd_check_kasner(cfg: &CliConfig, em: &Emitter) -> Result<bool> {
    let kd = cfg.kasner()?;
    let residuals = kd.relation_residuals();
    let (subcritical, margin) = check_subcritical(&kd, cfg.gamma_distinct);
    let gauge = cfg.gauge(&kd);
    let relations_ok = residuals.iter().all(|&r| r.abs() <= 1e-12);
    let pass = subcritical && relations_ok && gauge.is_ok();
    let report = json!({
        "n": kd.n,
        "q": kd.q,
        "p": kd.p,
        "r0": kd.r0,
        "r": kd.r,
        "relation_residuals": residuals,
        "relations_ok": relations_ok,
        "subcritical": subcritical,
        "margin": margin,
        "gauge": match &gauge {
            Ok(gp) => json!({"eps1": gp.eps1, "eps2": gp.eps2, "nu": gp.nu}),
            Err(e) => json!({"error": e.to_string()}),
        },
        "pass": pass,
    });
    em.report(&report)?;
    Ok(pass)
}

fn cmd_verify_symmetrizer(cfg: &CliConfig, em: &Emitter) -> Result<bool> {
    let kd = cfg.kasner()?;
    let gp = cfg.gauge(&kd)?;
    let start = Instant::now();
    let sym = SymmetrizerSet::build(&kd, gp.eps1, gp.eps2, gp.nu, &gp.sym)?;
    let report = sym.verify();
    let min_k = sym.min_k(1_000_000)?;
    let elapsed = start.elapsed().as_secs_f64();
    let pass = report.b0_sym_defect <= 1e-12
        && report.bd_sym_defect <= 1e-12
        && report.b0_bounds_ok
        && report.coupling_residual.abs() <= 1e-14
        && report.gamma_mu_residual.abs() <= 1e-12
        && report.v_inverse_defect <= 1e-9
        && report.bc_min > 0.0
        && report.pos1 > 0.0
        && report.pos2_margin > 0.0
        && report.mstar_min_abs_eig > 0.0;
    let out = json!({
        "report": report,
        "min_k": min_k,
        "build_seconds": elapsed,
        "pass": pass,
    });
    em.report(&out)?;
    Ok(pass)
}

fn cmd_appendix_check(cfg: &CliConfig, em: &Emitter) -> Result<bool> {
    let appendix = appendix_identities(cfg.n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples_ok = true;
    let mut worst_gap = 0.0f64;
    for _ in 0..cfg.mc_pd_samples {
        let a = rng.gen_range(-2.0..2.0);
        let b = rng.gen_range(-2.0..2.0);
        let rep = mc_pd_check(cfg.n, a, b);
        if let (Some(pd), Some(dense_min)) = (rep.dense_pd, rep.dense_min_eig) {
            samples_ok &= rep.corrected_sufficient == pd;
            worst_gap = worst_gap.max((rep.analytic_min_eig - dense_min).abs());
        }
    }
    let pass = appendix.all_hold() && samples_ok && worst_gap <= 1e-10;
    let out = json!({
        "appendix": appendix,
        "mc_pd_samples": cfg.mc_pd_samples,
        "mc_pd_consistent": samples_ok,
        "mc_pd_worst_eig_gap": worst_gap,
        "pass": pass,
    });
    em.report(&out)?;
    Ok(pass)
}

fn cmd_make_data(cfg: &CliConfig, em: &Emitter, out: Option<&Path>) -> Result<bool> {
    let rc = cfg.run_config(false)?;
    let grid = TorusGrid::from_spec(&rc.grid)?;
    let (w, residual) = crate::evolution::make_initial_data(
        &grid,
        &rc.kd,
        &rc.gp,
        rc.t0,
        &rc.perturbation,
        rc.id_tolerance,
    )?;
    let path = out
        .map(|d| d.join("initial_data.json"))
        .unwrap_or_else(|| PathBuf::from("initial_data.json"));
    write_snapshot(&path, &w.f, w.t, &grid, "rescaled")?;
    let pass = residual <= rc.id_tolerance;
    em.report(&json!({
        "t0": rc.t0,
        "residual": residual,
        "tolerance": rc.id_tolerance,
        "snapshot": path.display().to_string(),
        "pass": pass,
    }))?;
    Ok(pass)
}

fn run_summary(rc: &RunConfig, result: &RunResult) -> Value {
    let last = result.series.records.last().unwrap();
    let max_constraint = result
        .series
        .records
        .iter()
        .flat_map(|r| r.constraints.iter())
        .fold(0.0f64, |m, &v| m.max(v));
    json!({
        "steps": result.steps,
        "t_final": result.final_state.t,
        "id_residual": result.id_residual,
        "energy_ratio": result.energy_ratio,
        "max_constraint_norm": max_constraint,
        "final_constraints": last.constraints,
        "final_w_norm": last.w_norm,
        "final_pw_norm": last.pw_norm,
        "final_background_dev": last.background_dev,
        "cone_monitors_ok": cone_monitors_ok(rc, result),
    })
}

fn cmd_evolve(cfg: &CliConfig, em: &Emitter) -> Result<bool> {
    let rc = cfg.run_config(false)?;
    let result = run(&rc)?;
    em.run_artifacts(cfg, &result)?;
    let pass = cone_monitors_ok(&rc, &result);
    let mut out = run_summary(&rc, &result);
    out["pass"] = json!(pass);
    em.report(&out)?;
    Ok(pass)
}

fn cmd_diagnose(cfg: &CliConfig, em: &Emitter, snapshot: &Path) -> Result<bool> {
    let (f, t, gspec, kind) = read_snapshot(snapshot)?;
    let kd = cfg.kasner()?;
    if kd.dim() != f.d {
        return Err(Error::DimensionMismatch {
            expected: kd.dim(),
            got: f.d,
        });
    }
    let gp = cfg.gauge(&kd)?;
    let grid = TorusGrid::from_spec(&gspec)?;
    let w = RescaledState { t, f };
    let cons = rescaled_constraints(&grid, &w, &gp, &kd)?;
    let (ricci, ricci_sq) = crate::diagnostics::curvature_invariants(&w, &gp, &kd)?;
    let kbar = crate::diagnostics::mean_curvature(&w, &gp, &kd)?;
    let weyl = weyl_component(&grid, &w, &gp, &kd)?;
    let ricci_range = min_max(&ricci, None);
    let ricci_sq_range = min_max(&ricci_sq, None);
    let pass = ricci_range.max <= 0.0 && ricci_sq_range.min >= 0.0;
    em.report(&json!({
        "snapshot": snapshot.display().to_string(),
        "kind": kind,
        "t": t,
        "max_constraint": cons.max_abs(),
        "ricci_scalar": ricci_range,
        "ricci_sq": ricci_sq_range,
        "mean_curvature": min_max(&kbar, None),
        "weyl_invariant": min_max(&weyl.invariant, None),
        "pass": pass,
    }))?;
    Ok(pass)
}

fn cmd_extract(cfg: &CliConfig, em: &Emitter) -> Result<bool> {
    let rc = cfg.run_config(true)?;
    let result = run(&rc)?;
    em.run_artifacts(cfg, &result)?;
    let asym = result.asymptotics.as_ref().ok_or_else(|| {
        Error::Abort("extraction produced no asymptotic data".into())
    })?;
    let hr = min_max(&asym.hhat, None);
    let pass = asym.zeta_fit > 0.0
        && asym.branch_residual <= 1e-6
        && cone_monitors_ok(&rc, &result);
    let mut out = run_summary(&rc, &result);
    out["zeta_fit"] = json!(asym.zeta_fit);
    out["max_kasner_residual"] = json!(asym.max_residual);
    out["branch_residual"] = json!(asym.branch_residual);
    out["hhat_range"] = json!(hr);
    out["blowup_exponents"] = serde_json::to_value(blowup_exponents(&rc.kd, 0.5 * (hr.min + hr.max)))?;
    out["pass"] = json!(pass);
    em.report(&out)?;
    if let Some(dir) = em.out {
        write_json(Some(dir), "asymptotics.json", &serde_json::to_value(asym)?)?;
    }
    Ok(pass)
}

fn cmd_cone_uniqueness(cfg: &CliConfig, em: &Emitter) -> Result<bool> {
    if cfg.cone.is_none() {
        return Err(Error::Config("cone-uniqueness requires a cone section".into()));
    }
    let ext = cfg.exterior.ok_or_else(|| {
        Error::Config("cone-uniqueness requires an exterior section".into())
    })?;
    let rc_a = cfg.run_config(false)?;
    let mut rc_b = rc_a.clone();
    rc_b.exterior = Some(ext);
    let grid = TorusGrid::from_spec(&rc_a.grid)?;
    let result_a = run(&rc_a)?;
    let result_b = run(&rc_b)?;
    let cd = rc_a.cone.as_ref().unwrap();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (sa, sb) in result_a.snapshots.iter().zip(result_b.snapshots.iter()) {
        let rho = cd.rho_of_t(sa.t)?;
        let disc = restricted_discrepancy(&grid, sa, sb, rho);
        worst = worst.max(disc);
        rows.push(json!({"t": sa.t, "rho": rho, "restricted_discrepancy": disc}));
    }
    let monitors = cone_monitors_ok(&rc_a, &result_a) && cone_monitors_ok(&rc_b, &result_b);
    let pass = worst <= cfg.uniqueness_tol && monitors;
    em.report(&json!({
        "comparisons": rows,
        "max_restricted_discrepancy": worst,
        "tolerance": cfg.uniqueness_tol,
        "monitors_ok": monitors,
        "pass": pass,
    }))?;
    Ok(pass)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::ParameterRange { .. }
        | Error::GaugeCondition { .. }
        | Error::KasnerRelation { .. }
        | Error::DimensionMismatch { .. }
        | Error::Serde(_) => 2,
        _ => 3,
    }
}

/// Parse arguments, dispatch, and return the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through this path with code 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let outcome = (|| -> Result<bool> {
        let cfg = load_config(&cli)?;
        let em = Emitter::new(cli.out.as_deref(), &cfg)?;
        match &cli.command {
            Command::CheckKasner => cmd_check_kasner(&cfg, &em),
            Command::VerifySymmetrizer => cmd_verify_symmetrizer(&cfg, &em),
            Command::AppendixCheck => cmd_appendix_check(&cfg, &em),
            Command::MakeData => cmd_make_data(&cfg, &em, cli.out.as_deref()),
            Command::Evolve => cmd_evolve(&cfg, &em),
            Command::Diagnose { snapshot } => cmd_diagnose(&cfg, &em, snapshot),
            Command::Extract => cmd_extract(&cfg, &em),
            Command::ConeUniqueness => cmd_cone_uniqueness(&cfg, &em),
        }
    })();
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let mut tree = Value::Object(Default::default());
        apply_override(&mut tree, "grid.dims=[8,1,1]").unwrap();
        apply_override(&mut tree, "t_end=0.5").unwrap();
        apply_override(&mut tree, "grid.l=2.0").unwrap();
        let mut full = serde_json::to_value(CliConfig::default()).unwrap();
        merge(&mut full, tree);
        let cfg: CliConfig = serde_json::from_value(full).unwrap();
        assert_eq!(cfg.grid.dims, vec![8, 1, 1]);
        assert_eq!(cfg.grid.l, 2.0);
        assert_eq!(cfg.t_end, 0.5);
    }

    #[test]
    fn malformed_overrides_are_config_errors() {
        let mut tree = Value::Object(Default::default());
        assert!(apply_override(&mut tree, "no-equals-sign").is_err());
        apply_override(&mut tree, "t_end=oops").unwrap();
        assert!(serde_json::from_value::<CliConfig>(tree).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let tree = serde_json::json!({"t_endd": 0.5});
        assert!(serde_json::from_value::<CliConfig>(tree).is_err());
    }

    #[test]
    fn check_kasner_flrw_passes() {
        let mut cfg = CliConfig::default();
        cfg.q = vec![1.0 / 3.0; 3];
        let em = Emitter { out: None };
        assert!(cmd_check_kasner(&cfg, &em).unwrap());
    }

    #[test]
    fn check_kasner_supercritical_fails() {
        let mut cfg = CliConfig::default();
        // A negative exponent violates sub-criticality at n=4.
        cfg.q = vec![0.96, 0.05, -0.01];
        let em = Emitter { out: None };
        assert!(!cmd_check_kasner(&cfg, &em).unwrap());
    }

    #[test]
    fn exit_codes_classify_errors() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Abort("x".into())), 3);
    }
}
