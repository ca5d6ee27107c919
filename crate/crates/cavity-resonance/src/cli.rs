//! Command-line front end: configuration, commands and output files.
//!
//! A run is driven by one JSON document. Physical numbers are decimal
//! strings; every field is optional and falls back to a default derived from
//! the geometry. Floating-point output is written with 17 significant digits
//! in the style of C's `%.17g`, so repeated runs give identical bytes.

use crate::bs_operator::Truncation;
use crate::geometry::{Duct, Geometry, Strip};
use crate::oracle::{cap_stability, CapConfig, CapStability};
use crate::resonance::{
    default_seed, fit_power_law, level_targets, lifetime, operator_estimates, reconstruct_field,
    solve_resonance, source_coefficients, sweep, EstimatePoint, FieldGrid, FitWindow, PowerFit, ResonanceBranch,
    SolverOptions, SweepMode, SweepOptions, Target, WindowedFit, ZetaEvaluator,
};
use crate::spectrum::{enumerate_embedded, lowest_threshold, CavityMode, EmbeddedLevel};
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "cavres", version, about = "Resonances of a cavity opened to a waveguide through a small aperture")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir` of the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Embedded cavity levels up to `e_max`.
    Spectrum,
    /// Resonance branches along the aperture grid.
    Sweep,
    /// Cross-check one resonance against the finite-difference oracle.
    Validate,
    /// Operator estimates along the aperture grid.
    Asymptotics,
    /// Field of the resonance state on a sample grid.
    Field,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("partial branch failure: {0}")]
    Partial(String),
    #[error("validation failed: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Partial(_) => EXIT_PARTIAL,
            CliError::Validation(_) => EXIT_VALIDATION,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// `%.17g`.
pub fn fmt_g17(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    const P: i32 = 17;
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..P).contains(&exp) {
        strip(&format!("{:.*}", (P - 1 - exp) as usize, x))
    } else {
        format!("{}e{}{:02}", strip(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// A float serialized as a raw `%.17g` JSON number; non-finite values become `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct G17(pub f64);

impl Serialize for G17 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            RawValue::from_string(fmt_g17(self.0)).map_err(serde::ser::Error::custom)?.serialize(s)
        } else {
            s.serialize_none()
        }
    }
}

fn g(x: f64) -> G17 {
    G17(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexOut {
    pub re: G17,
    pub im: G17,
}

fn cplx(z: Complex64) -> ComplexOut {
    ComplexOut { re: g(z.re), im: g(z.im) }
}

// ---- configuration -------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    dimension: Option<u32>,
    d1: Option<String>,
    d2: Option<String>,
    d3: Option<String>,
    t: Option<String>,
    t2: Option<String>,
    t3: Option<String>,
    a: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawGrid {
    List(Vec<String>),
    Range {
        min: String,
        max: String,
        count: usize,
        #[serde(default = "yes")]
        log: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValidate {
    eps: Option<String>,
    h: Option<String>,
    length: Option<String>,
    cap_start: Option<String>,
    eta: Option<String>,
    cap_power: Option<u32>,
    tolerance: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAsymptotics {
    disk_offset: Option<String>,
    probe_fraction: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAxis {
    min: String,
    max: String,
    count: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    eps: Option<String>,
    x1: Option<RawAxis>,
    x2: Option<RawAxis>,
    x3: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    spec: u32,
    #[serde(default)]
    geometry: RawGeometry,
    mode: Option<Vec<usize>>,
    eps_grid: Option<RawGrid>,
    truncation: Option<Truncation>,
    tol: Option<String>,
    fit_window: Option<[usize; 2]>,
    sweep_mode: Option<SweepMode>,
    e_max: Option<String>,
    #[serde(default)]
    validate: RawValidate,
    #[serde(default)]
    asymptotics: RawAsymptotics,
    #[serde(default)]
    field: RawField,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateConfig {
    pub eps: f64,
    pub cap: CapConfig,
    /// Relative tolerance on `z - c1`.
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticsConfig {
    /// Offset of the four outer disk points from the level.
    pub disk_offset: f64,
    /// Depth of the off-axis probe below the level, as a fraction of the threshold clearance.
    pub probe_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub eps: f64,
    pub grid: FieldGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub mode: CavityMode,
    pub eps_grid: Vec<f64>,
    pub truncation: Truncation,
    pub tol: f64,
    pub fit_window: Option<FitWindow>,
    pub sweep_mode: SweepMode,
    pub e_max: f64,
    pub validate: ValidateConfig,
    pub asymptotics: AsymptoticsConfig,
    pub field: FieldConfig,
    pub out_dir: PathBuf,
}

fn num(name: &str, s: &str) -> Result<f64, CliError> {
    let v: f64 = s.trim().parse().map_err(|_| config_err(format!("{name}: not a decimal number: {s:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(config_err(format!("{name} must be finite")))
    }
}

fn num_or(name: &str, s: &Option<String>, default: f64) -> Result<f64, CliError> {
    s.as_deref().map_or(Ok(default), |s| num(name, s))
}

fn linspace(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..count).map(|i| min + (max - min) * i as f64 / (count - 1) as f64).collect(),
    }
}

fn geometry_from(raw: &RawGeometry) -> Result<Geometry, CliError> {
    match raw.dimension.unwrap_or(2) {
        2 => {
            if raw.d3.is_some() || raw.t2.is_some() || raw.t3.is_some() || raw.a.is_some() {
                return Err(config_err("geometry: 3D fields given with dimension 2"));
            }
            let d = Strip::DEFAULT;
            Ok(Geometry::Strip(Strip {
                d1: num_or("geometry.d1", &raw.d1, d.d1)?,
                d2: num_or("geometry.d2", &raw.d2, d.d2)?,
                t: num_or("geometry.t", &raw.t, d.t)?,
            }))
        }
        3 => {
            if raw.t.is_some() {
                return Err(config_err("geometry: field t is 2D only, use t2 and t3"));
            }
            let d = Duct::DEFAULT;
            Ok(Geometry::Duct(Duct {
                d1: num_or("geometry.d1", &raw.d1, d.d1)?,
                d2: num_or("geometry.d2", &raw.d2, d.d2)?,
                d3: num_or("geometry.d3", &raw.d3, d.d3)?,
                t2: num_or("geometry.t2", &raw.t2, d.t2)?,
                t3: num_or("geometry.t3", &raw.t3, d.t3)?,
                a: num_or("geometry.a", &raw.a, d.a)?,
            }))
        }
        n => Err(config_err(format!("geometry.dimension must be 2 or 3, got {n}"))),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(config_err)?;
        if raw.spec != 1 {
            return Err(config_err(format!("unsupported spec version {}", raw.spec)));
        }
        let geometry = geometry_from(&raw.geometry)?;
        let dim = geometry.dimension();
        let d2 = geometry.directions()[0].width;

        let mode_tuple = raw.mode.unwrap_or_else(|| vec![1; dim]);
        if mode_tuple.len() != dim {
            return Err(config_err(format!("mode needs {dim} indices for a {dim}D geometry")));
        }
        let mode = CavityMode::from_tuple(&mode_tuple)
            .filter(|m| m.tuple().iter().all(|&i| i > 0))
            .ok_or_else(|| config_err("mode indices must be positive"))?;

        let eps_grid = match &raw.eps_grid {
            None => log_grid(0.01 * d2, 0.08 * d2, 8),
            Some(RawGrid::List(v)) => v.iter().map(|s| num("eps_grid", s)).collect::<Result<_, _>>()?,
            Some(RawGrid::Range { min, max, count, log }) => {
                let (lo, hi) = (num("eps_grid.min", min)?, num("eps_grid.max", max)?);
                if *log {
                    if lo <= 0.0 {
                        return Err(config_err("eps_grid.min must be positive for a log grid"));
                    }
                    log_grid(lo, hi, *count)
                } else {
                    linspace(lo, hi, *count)
                }
            }
        };
        if eps_grid.is_empty() {
            return Err(config_err("eps_grid is empty"));
        }
        if eps_grid.iter().any(|&e| e < 0.0) || eps_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err("eps_grid must be non-negative and strictly ascending"));
        }
        let truncation = raw.truncation.unwrap_or_else(|| Truncation::default_for(&geometry));
        truncation.validate().map_err(config_err)?;
        let tol = num_or("tol", &raw.tol, SolverOptions::default().tol)?;
        if tol <= 0.0 {
            return Err(config_err("tol must be positive"));
        }
        let fit_window = match raw.fit_window {
            Some([s, e]) if s + 2 > e || e >= eps_grid.len() => {
                return Err(config_err("fit_window needs i_min + 2 <= i_max < grid length"))
            }
            Some([start, end]) => Some(FitWindow { start, end }),
            None => None,
        };

        let xi = mode.energy(&geometry);
        let e_max = num_or("e_max", &raw.e_max, 4.0 * xi)?;
        if e_max <= 0.0 {
            return Err(config_err("e_max must be positive"));
        }

        let rv = &raw.validate;
        let v_eps = num_or("validate.eps", &rv.eps, 0.05 * d2)?;
        let h = num_or("validate.h", &rv.h, d2 / 140.0)?;
        let mut cap = match geometry {
            Geometry::Strip(s) => CapConfig::standard(&s, xi, h),
            Geometry::Duct(_) => CapConfig { h, length: 0.0, cap_start: 0.0, eta: 0.0, cap_power: 2 },
        };
        cap.length = num_or("validate.length", &rv.length, cap.length)?;
        cap.cap_start = num_or("validate.cap_start", &rv.cap_start, cap.cap_start)?;
        cap.eta = num_or("validate.eta", &rv.eta, cap.eta)?;
        cap.cap_power = rv.cap_power.unwrap_or(cap.cap_power);
        let tolerance = num_or("validate.tolerance", &rv.tolerance, 0.05)?;

        let ra = &raw.asymptotics;
        let asymptotics = AsymptoticsConfig {
            disk_offset: num_or("asymptotics.disk_offset", &ra.disk_offset, 0.1)?,
            probe_fraction: num_or("asymptotics.probe_fraction", &ra.probe_fraction, 0.1)?,
        };

        let rf = &raw.field;
        let axis = |name: &str, a: &Option<RawAxis>, lo: f64, hi: f64, n: usize| -> Result<Vec<f64>, CliError> {
            match a {
                Some(a) => Ok(linspace(num(name, &a.min)?, num(name, &a.max)?, a.count)),
                None => Ok(linspace(lo, hi, n)),
            }
        };
        let d1 = geometry.d1();
        let field = FieldConfig {
            eps: num_or("field.eps", &rf.eps, 0.0)?,
            grid: FieldGrid {
                x1: axis("field.x1", &rf.x1, 0.0, d1 + d2, 41)?,
                x2: axis("field.x2", &rf.x2, 0.0, d2, 21)?,
                x3: rf.x3.as_deref().map(|s| num("field.x3", s)).transpose()?,
            },
        };

        let eps_max = eps_grid.iter().copied().fold(v_eps.max(field.eps), f64::max);
        let geometry = geometry.validate(eps_max).map_err(config_err)?;

        Ok(RunConfig {
            geometry,
            mode,
            eps_grid,
            truncation,
            tol,
            fit_window,
            sweep_mode: raw.sweep_mode.unwrap_or(SweepMode::Continuation),
            e_max,
            validate: ValidateConfig { eps: v_eps, cap, tolerance },
            asymptotics,
            field,
            out_dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("cavres-out")),
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions { tol: self.tol, ..SolverOptions::default() }
    }

    fn target(&self) -> Result<Target, CliError> {
        Target::new(&self.geometry, self.mode, self.truncation).map_err(config_err)
    }

    /// The embedded level containing the configured mode.
    pub fn level(&self) -> Result<EmbeddedLevel, CliError> {
        let xi = self.mode.energy(&self.geometry);
        enumerate_embedded(&self.geometry, xi * (1.0 + 1e-6))
            .into_iter()
            .find(|l| l.indices.contains(&self.mode))
            .ok_or_else(|| config_err("mode is not an embedded level (below the lowest threshold)"))
    }
}

fn log_grid(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..count).map(|i| min * (max / min).powf(i as f64 / (count - 1) as f64)).collect(),
    }
}

// ---- commands ------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GeometryOut {
    pub dimension: usize,
    pub d1: G17,
    pub d2: G17,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d3: Option<G17>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<G17>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t2: Option<G17>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t3: Option<G17>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<G17>,
}

fn geometry_echo(geo: &Geometry) -> GeometryOut {
    match *geo {
        Geometry::Strip(s) => GeometryOut {
            dimension: 2,
            d1: g(s.d1),
            d2: g(s.d2),
            d3: None,
            t: Some(g(s.t)),
            t2: None,
            t3: None,
            a: None,
        },
        Geometry::Duct(d) => GeometryOut {
            dimension: 3,
            d1: g(d.d1),
            d2: g(d.d2),
            d3: Some(g(d.d3)),
            t: None,
            t2: Some(g(d.t2)),
            t3: Some(g(d.t3)),
            a: Some(g(d.a)),
        },
    }
}

fn index_label(m: &CavityMode) -> String {
    m.tuple().iter().map(|i| i.to_string()).collect::<Vec<_>>().join("-")
}

pub fn cmd_spectrum(cfg: &RunConfig) -> Vec<EmbeddedLevel> {
    enumerate_embedded(&cfg.geometry, cfg.e_max)
}

pub fn spectrum_csv(levels: &[EmbeddedLevel]) -> String {
    let mut s = String::from("value,multiplicity,above_threshold,indices\n");
    for l in levels {
        let idx = l.indices.iter().map(index_label).collect::<Vec<_>>().join(";");
        let _ = writeln!(s, "{},{},{},{}", fmt_g17(l.value), l.multiplicity, l.above_threshold, idx);
    }
    s
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<ResonanceBranch>, CliError> {
    let level = cfg.level()?;
    let opts = SweepOptions { solver: cfg.solver(), mode: cfg.sweep_mode, window: cfg.fit_window, check_truncation: true };
    let mut out = Vec::new();
    for target in level_targets(&cfg.geometry, &level, cfg.truncation) {
        let target = target.map_err(config_err)?;
        out.push(sweep(&level, &target, &cfg.eps_grid, &opts));
    }
    Ok(out)
}

pub fn sweep_csv(branch: &ResonanceBranch, trunc: Truncation) -> String {
    let mut s = String::from("eps,re_z,im_z,mu,nu,residual,iterations,n_basis,n_sum\n");
    for p in &branch.points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            fmt_g17(p.eps),
            fmt_g17(p.z.re),
            fmt_g17(p.z.im),
            fmt_g17(p.mu),
            fmt_g17(p.nu),
            fmt_g17(p.residual),
            p.iterations,
            trunc.n_basis,
            trunc.n_sum
        );
    }
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct FitOut {
    pub slope: G17,
    pub intercept: G17,
    pub r2: G17,
    pub window: [usize; 2],
}

fn fit_out(f: &Option<WindowedFit>) -> Option<FitOut> {
    f.map(|w| FitOut {
        slope: g(w.fit.slope),
        intercept: g(w.fit.intercept),
        r2: g(w.fit.r_squared),
        window: [w.window.start, w.window.end],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchSummary {
    pub seed: Vec<usize>,
    pub csv: String,
    pub points: usize,
    pub complete: bool,
    pub failure: Option<String>,
    pub fit_mu: Option<FitOut>,
    pub fit_nu: Option<FitOut>,
    pub lifetime_exponent: Option<G17>,
    pub truncation_shift: Option<G17>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub spec: u32,
    pub geometry: GeometryOut,
    pub level: G17,
    pub multiplicity: usize,
    pub truncation: Truncation,
    pub tol: G17,
    pub branches: Vec<BranchSummary>,
}

pub fn sweep_summary(cfg: &RunConfig, branches: &[ResonanceBranch]) -> SweepSummary {
    let level = branches.first().map_or(cfg.mode.energy(&cfg.geometry), |b| b.level.value);
    SweepSummary {
        spec: 1,
        geometry: geometry_echo(&cfg.geometry),
        level: g(level),
        multiplicity: branches.first().map_or(1, |b| b.level.multiplicity),
        truncation: cfg.truncation,
        tol: g(cfg.tol),
        branches: branches
            .iter()
            .map(|b| {
                let mut warnings = b.warnings.clone();
                let exponent = match lifetime(b, &cfg.geometry) {
                    Ok(l) => l.volume_fit.map(|f| g(f.slope)),
                    Err(e) => {
                        warnings.push(format!("lifetime: {e}"));
                        None
                    }
                };
                BranchSummary {
                    seed: b.seed.tuple(),
                    csv: format!("sweep_{}.csv", index_label(&b.seed)),
                    points: b.points.len(),
                    complete: b.complete(),
                    failure: b.failure.clone(),
                    fit_mu: fit_out(&b.fit_mu),
                    fit_nu: fit_out(&b.fit_nu),
                    lifetime_exponent: exponent,
                    truncation_shift: b.truncation_shift.map(g),
                    warnings,
                }
            })
            .collect(),
    }
}

/// Root at `eps`, reached by continuation through three intermediate apertures.
fn continued_root(cfg: &RunConfig, target: &Target, eps: f64) -> Result<crate::resonance::Solution, CliError> {
    let solver = cfg.solver();
    if eps == 0.0 {
        return solve_resonance(0.0, target, default_seed(target.xi), &solver).map_err(runtime_err);
    }
    let level = cfg.level()?;
    let grid: Vec<f64> = (1..=4).map(|i| eps * i as f64 / 4.0).collect();
    let opts = SweepOptions { solver, mode: SweepMode::Continuation, window: None, check_truncation: false };
    let b = sweep(&level, target, &grid, &opts);
    if let Some(f) = b.failure {
        return Err(runtime_err(f));
    }
    let z0 = b.points.last().map(|p| p.z).unwrap_or_else(|| default_seed(target.xi));
    solve_resonance(eps, target, z0, &solver).map_err(runtime_err)
}

#[derive(Debug, Clone, Serialize)]
pub struct CapOut {
    pub h: G17,
    pub length: G17,
    pub cap_start: G17,
    pub eta: G17,
    pub cap_power: u32,
    pub eigenvalue: ComplexOut,
    pub half_strength: ComplexOut,
    pub longer_domain: ComplexOut,
    pub drift: G17,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub spec: u32,
    pub geometry: GeometryOut,
    pub seed: Vec<usize>,
    pub eps: G17,
    pub level: G17,
    pub threshold: G17,
    pub resonance: ComplexOut,
    pub residual: G17,
    pub cap: CapOut,
    /// `|z_cap - z| / |z - threshold|`.
    pub discrepancy: G17,
    pub tolerance: G17,
    /// Largest drift accepted from the stability recomputations.
    pub drift_limit: G17,
    pub stable: bool,
    pub pass: bool,
    pub warnings: Vec<String>,
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<ValidationReport, CliError> {
    let s = match cfg.geometry {
        Geometry::Strip(s) => s,
        Geometry::Duct(_) => return Err(config_err("validate is available for 2D geometries only")),
    };
    let target = cfg.target()?;
    let v = &cfg.validate;
    v.cap.validate(&s, v.eps).map_err(config_err)?;
    let root = continued_root(cfg, &target, v.eps)?;
    let c1 = lowest_threshold(&cfg.geometry);
    let st: CapStability =
        cap_stability(&cfg.geometry, v.eps, &v.cap, Complex64::new(target.xi, 0.0)).map_err(runtime_err)?;
    let scale = (root.z - c1).norm();
    let discrepancy = (st.eigenvalue - root.z).norm() / scale;
    let drift_limit = 0.2 * v.tolerance * scale;
    let stable = st.drift <= drift_limit;
    let pass = stable && discrepancy <= v.tolerance;
    let c = &v.cap;
    Ok(ValidationReport {
        spec: 1,
        geometry: geometry_echo(&cfg.geometry),
        seed: cfg.mode.tuple(),
        eps: g(v.eps),
        level: g(target.xi),
        threshold: g(c1),
        resonance: cplx(root.z),
        residual: g(root.residual),
        cap: CapOut {
            h: g(c.h),
            length: g(c.length),
            cap_start: g(c.cap_start),
            eta: g(c.eta),
            cap_power: c.cap_power,
            eigenvalue: cplx(st.eigenvalue),
            half_strength: cplx(st.half_strength),
            longer_domain: cplx(st.longer_domain),
            drift: g(st.drift),
        },
        discrepancy: g(discrepancy),
        tolerance: g(v.tolerance),
        drift_limit: g(drift_limit),
        stable,
        pass,
        warnings: st.warnings,
    })
}

/// Fitted exponent of one operator quantity.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeOut {
    pub name: String,
    pub z: ComplexOut,
    pub slope: Option<G17>,
    pub r2: Option<G17>,
    pub points: usize,
    pub expected: G17,
    pub tolerance: G17,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticsRow {
    pub eps: G17,
    pub h_norm: Vec<G17>,
    pub projector_gap: Option<G17>,
    pub eta_norm: Option<G17>,
    pub quad_form: G17,
    pub j_value: Option<G17>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticsReport {
    pub spec: u32,
    pub geometry: GeometryOut,
    pub seed: Vec<usize>,
    pub level: G17,
    /// Sample points of the operator norm: the level and four points around it.
    pub disk: Vec<ComplexOut>,
    /// Off-axis point where the branch quantities are evaluated.
    pub probe: ComplexOut,
    pub rows: Vec<AsymptoticsRow>,
    pub slopes: Vec<SlopeOut>,
    pub warnings: Vec<String>,
}

impl AsymptoticsReport {
    pub fn slope(&self, name: &str) -> Option<&SlopeOut> {
        self.slopes.iter().find(|s| s.name == name)
    }
}

pub fn cmd_asymptotics(cfg: &RunConfig) -> Result<AsymptoticsReport, CliError> {
    let pos: Vec<f64> = cfg.eps_grid.iter().copied().filter(|&e| e > 0.0).collect();
    if pos.len() < 3 {
        return Err(config_err(crate::resonance::ResonanceError::TooFewPoints(pos.len())));
    }
    let target = cfg.target()?;
    let xi = target.xi;
    let a = &cfg.asymptotics;
    let d = a.disk_offset;
    let disk = [
        Complex64::new(xi, 0.0),
        Complex64::new(xi + d, 0.0),
        Complex64::new(xi - d, 0.0),
        Complex64::new(xi, d),
        Complex64::new(xi, -d),
    ];
    let probe = Complex64::new(xi, -a.probe_fraction * target.clearance);
    let order = if cfg.geometry.dimension() == 2 { 2.0 } else { 4.0 };
    let order_tol = if cfg.geometry.dimension() == 2 { 0.15 } else { 0.3 };

    let estimate = |z: Complex64| -> Result<Vec<EstimatePoint>, CliError> {
        pos.iter().map(|&e| operator_estimates(&target, e, z, None).map_err(runtime_err)).collect()
    };
    let at_disk: Vec<Vec<EstimatePoint>> = disk.iter().map(|&z| estimate(z)).collect::<Result<_, _>>()?;
    let at_probe = estimate(probe)?;
    let at_level = &at_disk[0];

    let mut warnings = Vec::new();
    let mut slopes = Vec::new();
    let mut add = |name: &str, z: Complex64, data: Vec<(f64, f64)>, expected: f64, tol: f64| {
        let fit: Option<PowerFit> = fit_power_law(&data).ok();
        if fit.is_none() {
            warnings.push(format!("{name}: fewer than 3 usable points"));
        }
        slopes.push(SlopeOut {
            name: name.to_string(),
            z: cplx(z),
            slope: fit.map(|f| g(f.slope)),
            r2: fit.map(|f| g(f.r_squared)),
            points: data.len(),
            expected: g(expected),
            tolerance: g(tol),
            within: fit.is_some_and(|f| (f.slope - expected).abs() <= tol),
        });
    };
    for (z, pts) in disk.iter().zip(&at_disk) {
        add("h_norm", *z, pts.iter().map(|p| (p.eps, p.h_norm)).collect(), 0.5, 0.1);
    }
    let branch_data = |pts: &[EstimatePoint], f: &dyn Fn(&crate::resonance::BranchEstimate) -> f64| -> Vec<(f64, f64)> {
        pts.iter().filter_map(|p| p.branch.as_ref().map(|b| (p.eps, f(b)))).collect()
    };
    add("projector_gap", probe, branch_data(&at_probe, &|b| b.projector_gap), 0.5, 0.1);
    add("eta_norm", probe, branch_data(&at_probe, &|b| b.eta_norm), 0.5, 0.1);
    add("quad_form", disk[0], at_level.iter().map(|p| (p.eps, p.quad_form)).collect(), order, order_tol);
    add("j_value", disk[0], branch_data(at_level, &|b| b.j_value), order, order_tol);
    for (name, pts) in [("probe", &at_probe), ("level", at_level)] {
        let missing = pts.iter().filter(|p| p.branch.is_none()).count();
        if missing > 0 {
            warnings.push(format!("{missing} aperture(s) with an ambiguous branch at the {name} point"));
        }
    }

    let rows = pos
        .iter()
        .enumerate()
        .map(|(i, &e)| AsymptoticsRow {
            eps: g(e),
            h_norm: at_disk.iter().map(|v| g(v[i].h_norm)).collect(),
            projector_gap: at_probe[i].branch.map(|b| g(b.projector_gap)),
            eta_norm: at_probe[i].branch.map(|b| g(b.eta_norm)),
            quad_form: g(at_level[i].quad_form),
            j_value: at_level[i].branch.map(|b| g(b.j_value)),
        })
        .collect();
    Ok(AsymptoticsReport {
        spec: 1,
        geometry: geometry_echo(&cfg.geometry),
        seed: cfg.mode.tuple(),
        level: g(xi),
        disk: disk.iter().map(|&z| cplx(z)).collect(),
        probe: cplx(probe),
        rows,
        slopes,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct FieldSamples {
    pub z: Complex64,
    pub grid: FieldGrid,
    pub values: Vec<Complex64>,
}

pub fn cmd_field(cfg: &RunConfig) -> Result<FieldSamples, CliError> {
    let target = cfg.target()?;
    let eps = cfg.field.eps;
    let root = continued_root(cfg, &target, eps)?;
    let eval = ZetaEvaluator::new(&target, eps, None).map_err(runtime_err)?;
    let f = source_coefficients(&eval, &root.branch);
    let values = reconstruct_field(root.z, &f, &cfg.geometry, &cfg.field.grid, &eval.sheets);
    Ok(FieldSamples { z: root.z, grid: cfg.field.grid.clone(), values })
}

pub fn field_csv(f: &FieldSamples) -> String {
    let mut s = String::from("x1,x2,re_u,im_u\n");
    let mut it = f.values.iter();
    for &x1 in &f.grid.x1 {
        for &x2 in &f.grid.x2 {
            let u = it.next().copied().unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", fmt_g17(x1), fmt_g17(x2), fmt_g17(u.re), fmt_g17(u.im));
        }
    }
    s
}

// ---- driver --------------------------------------------------------------

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime_err(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(runtime_err)
}

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("cavres: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_deref().ok_or_else(|| config_err("--config PATH is required"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let say = |s: String| {
        if !cli.quiet {
            println!("{s}");
        }
    };
    let dir = cfg.out_dir.clone();
    match cli.command {
        Command::Spectrum => {
            let levels = cmd_spectrum(&cfg);
            let csv = spectrum_csv(&levels);
            write(&dir, "spectrum.csv", &csv)?;
            say(csv.trim_end().to_string());
        }
        Command::Sweep => {
            let branches = cmd_sweep(&cfg)?;
            for b in &branches {
                write(&dir, &format!("sweep_{}.csv", index_label(&b.seed)), &sweep_csv(b, cfg.truncation))?;
            }
            let summary = sweep_summary(&cfg, &branches);
            write(&dir, "summary.json", &to_json(&summary)?)?;
            for b in &branches {
                let slope = |f: &Option<WindowedFit>| f.map_or("-".to_string(), |w| format!("{:.3}", w.fit.slope));
                say(format!(
                    "seed {}: {} points, mu slope {}, nu slope {}{}",
                    index_label(&b.seed),
                    b.points.len(),
                    slope(&b.fit_mu),
                    slope(&b.fit_nu),
                    b.failure.as_ref().map_or(String::new(), |f| format!(", failed: {f}"))
                ));
            }
            let failed: Vec<String> =
                branches.iter().filter(|b| !b.complete()).map(|b| index_label(&b.seed)).collect();
            if !failed.is_empty() {
                return Err(CliError::Partial(format!("incomplete branches {}", failed.join(", "))));
            }
        }
        Command::Validate => {
            let report = cmd_validate(&cfg)?;
            write(&dir, "validate.json", &to_json(&report)?)?;
            say(format!(
                "discrepancy {} (tolerance {}), drift {} (limit {})",
                fmt_g17(report.discrepancy.0),
                fmt_g17(report.tolerance.0),
                fmt_g17(report.cap.drift.0),
                fmt_g17(report.drift_limit.0)
            ));
            if !report.pass {
                return Err(CliError::Validation(format!(
                    "discrepancy {} with tolerance {}{}",
                    fmt_g17(report.discrepancy.0),
                    fmt_g17(report.tolerance.0),
                    if report.stable { "" } else { ", CAP eigenvalue not stable" }
                )));
            }
        }
        Command::Asymptotics => {
            let report = cmd_asymptotics(&cfg)?;
            write(&dir, "asymptotics.json", &to_json(&report)?)?;
            for s in &report.slopes {
                say(format!(
                    "{} at {}{:+}i: slope {} (expected {})",
                    s.name,
                    fmt_g17(s.z.re.0),
                    s.z.im.0,
                    s.slope.map_or("-".to_string(), |v| format!("{:.3}", v.0)),
                    fmt_g17(s.expected.0)
                ));
            }
        }
        Command::Field => {
            let f = cmd_field(&cfg)?;
            write(&dir, "field.csv", &field_csv(&f))?;
            say(format!("z = {} {:+}i, {} samples", fmt_g17(f.z.re), f.z.im, f.values.len()));
        }
    }
    Ok(())
}

// ---- unit tests ------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_c_formatting() {
        let cases = [
            (0.0, "0"),
            (-0.0, "-0"),
            (1.0, "1"),
            (0.1, "0.10000000000000001"),
            (-2.5, "-2.5"),
            (1e-5, "1.0000000000000001e-05"),
            (1.5e-300, "1.5000000000000001e-300"),
            (123456789.0, "123456789"),
            (1e17, "1e+17"),
            (1e16, "10000000000000000"),
            (0.0001, "0.0001"),
            (29.608813203268074, "29.608813203268074"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g17(x), want, "{x:e}");
        }
    }

    #[test]
    fn g17_round_trips() {
        for x in [std::f64::consts::PI, 1.0 / 3.0, -7.123456789e-12, 6.02e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn defaults_fill_an_empty_config() {
        let c = RunConfig::from_json(r#"{"spec": 1}"#).unwrap();
        assert_eq!(c.geometry, Geometry::Strip(Strip::DEFAULT));
        assert_eq!(c.mode.tuple(), vec![1, 1]);
        assert_eq!(c.eps_grid.len(), 8);
        assert!((c.eps_grid[0] - 0.007).abs() < 1e-15 && (c.eps_grid[7] - 0.056).abs() < 1e-15);
        assert_eq!(c.truncation, Truncation::DEFAULT_2D);
        assert!((c.validate.cap.h - 0.005).abs() < 1e-15);
        let c3 = RunConfig::from_json(r#"{"spec": 1, "geometry": {"dimension": 3}}"#).unwrap();
        assert_eq!(c3.geometry, Geometry::Duct(Duct::DEFAULT));
        assert_eq!(c3.mode.tuple(), vec![1, 1, 1]);
        assert_eq!(c3.truncation, Truncation::DEFAULT_3D);
    }

    #[test]
    fn numbers_are_decimal_strings() {
        let c = RunConfig::from_json(r#"{"spec": 1, "geometry": {"d1": "1.25"}, "eps_grid": ["0", "0.01"]}"#).unwrap();
        assert_eq!(c.geometry.d1(), 1.25);
        assert_eq!(c.eps_grid, vec![0.0, 0.01]);
        assert!(RunConfig::from_json(r#"{"spec": 1, "geometry": {"d1": 1.25}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"spec": 1, "tol": "abc"}"#).is_err());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            r#"{"spec": 2}"#,
            r#"{"spec": 1, "geometry": {"d2": "-1"}}"#,
            r#"{"spec": 1, "geometry": {"t": "0.69"}}"#,
            r#"{"spec": 1, "mode": [1, 1, 1]}"#,
            r#"{"spec": 1, "mode": [0, 1]}"#,
            r#"{"spec": 1, "eps_grid": ["0.02", "0.01"]}"#,
            r#"{"spec": 1, "unknown": 1}"#,
            r#"{"spec": 1, "fit_window": [0, 1]}"#,
        ] {
            let e = RunConfig::from_json(text).unwrap_err();
            assert_eq!(e.exit_code(), EXIT_CONFIG, "{text}: {e}");
        }
    }

    #[test]
    fn spectrum_of_the_square() {
        let c = RunConfig::from_json(
            r#"{"spec": 1, "geometry": {"d1": "1", "d2": "1", "t": "0.3"}, "e_max": "592.176264"}"#,
        )
        .unwrap();
        let levels = cmd_spectrum(&c);
        let l = levels.iter().find(|l| (l.value / (std::f64::consts::PI.powi(2)) - 50.0).abs() < 1e-9).unwrap();
        assert_eq!(l.multiplicity, 3);
        let csv = spectrum_csv(&levels);
        assert!(csv.lines().any(|r| r.ends_with(",3,true,1-7;5-5;7-1")), "{csv}");
        let empty = RunConfig::from_json(r#"{"spec": 1, "e_max": "1"}"#).unwrap();
        assert_eq!(spectrum_csv(&cmd_spectrum(&empty)).lines().count(), 1);
    }

    #[test]
    fn closed_aperture_sweep_has_one_row() {
        let c = RunConfig::from_json(r#"{"spec": 1, "eps_grid": ["0"]}"#).unwrap();
        let b = cmd_sweep(&c).unwrap();
        assert_eq!(b.len(), 1);
        let csv = sweep_csv(&b[0], c.truncation);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 2);
        let cols: Vec<&str> = rows[1].split(',').collect();
        let xi = c.mode.energy(&c.geometry);
        for col in &cols[3..5] {
            assert!(col.parse::<f64>().unwrap().abs() <= 1e-10 * xi, "{col}");
        }
        assert_eq!(&cols[7..], &["64", "256"]);
    }

    #[test]
    fn one_point_asymptotics_is_refused() {
        let c = RunConfig::from_json(r#"{"spec": 1, "eps_grid": ["0.01"]}"#).unwrap();
        let e = cmd_asymptotics(&c).unwrap_err();
        assert!(e.to_string().contains("fit needs ≥3 points"), "{e}");
    }

    #[test]
    fn json_numbers_use_seventeen_digits() {
        let s = serde_json::to_string(&cplx(Complex64::new(0.1, f64::NAN))).unwrap();
        assert_eq!(s, r#"{"re":0.10000000000000001,"im":null}"#);
    }
}
