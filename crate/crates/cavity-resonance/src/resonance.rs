//! Resonance poles as zeros of the tracked Birman–Schwinger eigenvalue,
//! continuation in the aperture size and power-law fits.

use crate::bs_operator::{
    branch_eigenpair, j_diagnostic, operator_norm, projector_gap, Assembler, BsError, EigenBranch, KernelSum,
    Truncation,
};
use crate::geometry::{Geometry, GeometryError};
use crate::greens::{green_segment, sheet_assignment, SheetChoice};
use crate::modes::{mode_value, ModeIndex};
use crate::spectrum::{basis_thresholds, open_channels, threshold_clearance, CavityMode, EmbeddedLevel};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResonanceError {
    #[error(transparent)]
    Operator(#[from] BsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("no convergence after {iterations} iterations (|zeta| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("left working disk: |z - xi| = {distance:e} > {radius:e}")]
    LeftDisk { distance: f64, radius: f64 },
    #[error("threshold coincidence: the level lies on a transverse threshold")]
    ThresholdCoincidence,
    #[error("seed mode outside the truncated basis")]
    SeedOutsideBasis,
    #[error("level is below the essential spectrum, not embedded")]
    NotEmbedded,
    #[error("fit needs ≥3 points, got {0}")]
    TooFewPoints(usize),
    #[error("fit needs strictly positive data")]
    NonPositive,
    #[error("zero imaginary part: lifetime undefined")]
    ZeroWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Working disk radius as a fraction of the threshold clearance.
    pub disk_fraction: f64,
    pub kernel: Option<KernelSum>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-12, max_iter: 50, disk_fraction: 0.2, kernel: None }
    }
}

/// Embedded level and seed mode to be followed.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub geometry: Geometry,
    pub mode: CavityMode,
    pub xi: f64,
    pub seed: usize,
    pub trunc: Truncation,
    pub clearance: f64,
}

impl Target {
    pub fn new(g: &Geometry, mode: CavityMode, trunc: Truncation) -> Result<Self, ResonanceError> {
        let trunc = trunc.validate()?;
        let xi = mode.energy(g);
        let seed = mode.k.flat(trunc.n_basis).ok_or(ResonanceError::SeedOutsideBasis)?;
        if mode.k.components().len() + 1 != g.dimension() {
            return Err(ResonanceError::SeedOutsideBasis);
        }
        let open = open_channels(g, xi);
        if open.threshold_coincidence {
            return Err(ResonanceError::ThresholdCoincidence);
        }
        if open.channels.is_empty() {
            return Err(ResonanceError::NotEmbedded);
        }
        Ok(Target { geometry: *g, mode, xi, seed, trunc, clearance: threshold_clearance(g, xi) })
    }

    pub fn with_trunc(&self, trunc: Truncation) -> Result<Self, ResonanceError> {
        Target::new(&self.geometry, self.mode, trunc)
    }
}

/// `zeta(z)` at a fixed aperture size, with `z`-independent parts cached.
#[derive(Debug, Clone)]
pub struct ZetaEvaluator {
    pub target: Target,
    pub assembler: Assembler,
    pub sheets: SheetChoice,
}

impl ZetaEvaluator {
    pub fn new(target: &Target, eps: f64, kernel: Option<KernelSum>) -> Result<Self, ResonanceError> {
        let g = target.geometry.validate(eps)?;
        let assembler = match kernel {
            Some(k) => Assembler::with_sum(&g, eps, target.trunc, k)?,
            None => Assembler::new(&g, eps, target.trunc)?,
        };
        let sheets = sheet_assignment(target.xi, &assembler.thresholds, 0);
        Ok(ZetaEvaluator { target: target.clone(), assembler, sheets })
    }

    pub fn eps(&self) -> f64 {
        self.assembler.eps
    }

    pub fn eval(&self, z: Complex64) -> Result<EigenBranch, ResonanceError> {
        let bs = self.assembler.assemble(z, &self.sheets)?;
        Ok(branch_eigenpair(&bs, self.target.seed)?)
    }
}

/// Tracked eigenvalue, plus the eigenpair, at one `(z, eps)`.
pub fn zeta(
    z: Complex64,
    eps: f64,
    g: &Geometry,
    mode: CavityMode,
    trunc: Truncation,
    sheets: &SheetChoice,
) -> Result<(Complex64, EigenBranch), ResonanceError> {
    let target = Target::new(g, mode, trunc)?;
    let eval = ZetaEvaluator::new(&target, eps, None)?;
    let bs = eval.assembler.assemble(z, sheets)?;
    let b = branch_eigenpair(&bs, target.seed)?;
    Ok((b.zeta, b))
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub z: Complex64,
    pub residual: f64,
    pub iterations: usize,
    pub branch: EigenBranch,
}

/// Secant iteration from `z0` and `z0 - 1e-6 i xi`.
pub fn solve_with(eval: &ZetaEvaluator, z0: Complex64, opts: &SolverOptions) -> Result<Solution, ResonanceError> {
    let xi = eval.target.xi;
    let radius = opts.disk_fraction * eval.target.clearance;
    let inside = |z: Complex64| -> Result<(), ResonanceError> {
        let distance = (z - xi).norm();
        if distance > radius || !distance.is_finite() {
            Err(ResonanceError::LeftDisk { distance, radius })
        } else {
            Ok(())
        }
    };
    inside(z0)?;
    let first = eval.eval(z0)?;
    if first.zeta.norm() <= opts.tol {
        return Ok(Solution { z: z0, residual: first.zeta.norm(), iterations: 0, branch: first });
    }
    let (mut za, mut fa) = (z0, first.zeta);
    let mut zb = z0 - Complex64::new(0.0, 1e-6 * xi);
    let mut fb = eval.eval(zb)?;
    for it in 1..=opts.max_iter {
        if fb.zeta.norm() <= opts.tol {
            return Ok(Solution { z: zb, residual: fb.zeta.norm(), iterations: it, branch: fb });
        }
        let denom = fb.zeta - fa;
        if denom.norm() == 0.0 {
            break;
        }
        let zc = zb - fb.zeta * (zb - za) / denom;
        inside(zc)?;
        let fc = eval.eval(zc)?;
        let step = (zc - zb).norm();
        za = zb;
        fa = fb.zeta;
        zb = zc;
        fb = fc;
        if step <= opts.tol * xi.abs() {
            return Ok(Solution { z: zb, residual: fb.zeta.norm(), iterations: it + 1, branch: fb });
        }
    }
    if fb.zeta.norm() <= opts.tol {
        return Ok(Solution { z: zb, residual: fb.zeta.norm(), iterations: opts.max_iter, branch: fb });
    }
    Err(ResonanceError::NoConvergence { iterations: opts.max_iter, residual: fb.zeta.norm() })
}

pub fn solve_resonance(
    eps: f64,
    target: &Target,
    z0: Complex64,
    opts: &SolverOptions,
) -> Result<Solution, ResonanceError> {
    solve_with(&ZetaEvaluator::new(target, eps, opts.kernel)?, z0, opts)
}

/// Starting point nudged towards the lower half-plane.
pub fn default_seed(xi: f64) -> Complex64 {
    Complex64::new(xi, -1e-8 * xi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub z: Complex64,
    pub mu: f64,
    pub nu: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares on `(ln x, ln y)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerFit, ResonanceError> {
    if points.len() < 3 {
        return Err(ResonanceError::TooFewPoints(points.len()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(ResonanceError::NonPositive);
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(PowerFit { slope, intercept, r_squared })
}

/// Inclusive index range of the sweep points used by a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowedFit {
    pub fit: PowerFit,
    pub window: FitWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// Each point seeded from the previous roots.
    Continuation,
    /// Every point seeded from the unperturbed level, solved in parallel.
    FixedSeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceBranch {
    pub level: EmbeddedLevel,
    pub seed: CavityMode,
    pub points: Vec<SweepPoint>,
    pub fit_mu: Option<WindowedFit>,
    pub fit_nu: Option<WindowedFit>,
    /// Shift of the last root when `n_sum` is doubled.
    pub truncation_shift: Option<f64>,
    /// `max |z_{i+1} - z_i| / |eps_{i+1}^2 - eps_i^2|` over the branch.
    pub continuity_constant: Option<f64>,
    pub failure: Option<String>,
    pub warnings: Vec<String>,
}

impl ResonanceBranch {
    pub fn complete(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub solver: SolverOptions,
    pub mode: SweepMode,
    /// Explicit fit window; chosen automatically when absent.
    pub window: Option<FitWindow>,
    /// Re-solve the last point with doubled `n_sum`.
    pub check_truncation: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { solver: SolverOptions::default(), mode: SweepMode::Continuation, window: None, check_truncation: true }
    }
}

fn point(eps: f64, xi: f64, s: &Solution) -> SweepPoint {
    SweepPoint { eps, z: s.z, mu: s.z.re - xi, nu: s.z.im, residual: s.residual, iterations: s.iterations }
}

fn solve_point(target: &Target, eps: f64, z0: Complex64, opts: &SolverOptions) -> Result<SweepPoint, String> {
    solve_resonance(eps, target, z0, opts).map(|s| point(eps, target.xi, &s)).map_err(|e| format!("eps={eps}: {e}"))
}

/// Solves the branch along `eps_grid` and fits `|mu|`, `|nu|` against `eps`.
pub fn sweep(level: &EmbeddedLevel, target: &Target, eps_grid: &[f64], opts: &SweepOptions) -> ResonanceBranch {
    let xi = target.xi;
    let mut points = Vec::new();
    let mut failure = None;
    let mut warnings = Vec::new();
    if eps_grid.windows(2).any(|w| w[1] <= w[0]) {
        failure = Some("eps grid must be strictly ascending".to_string());
    }
    match (failure.is_some(), opts.mode) {
        (true, _) => {}
        (false, SweepMode::Continuation) => {
            for &eps in eps_grid {
                let z0 = predict(xi, &points, eps);
                match solve_point(target, eps, z0, &opts.solver) {
                    Ok(p) => points.push(p),
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
        }
        (false, SweepMode::FixedSeed) => {
            let results: Vec<Result<SweepPoint, String>> = std::thread::scope(|s| {
                let handles: Vec<_> = eps_grid
                    .iter()
                    .map(|&eps| s.spawn(move || solve_point(target, eps, default_seed(xi), &opts.solver)))
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("solver panicked".into()))).collect()
            });
            for r in results {
                match r {
                    Ok(p) => points.push(p),
                    Err(e) => {
                        failure = Some(e);
                        break;
                    }
                }
            }
        }
    }
    for p in &points {
        if p.nu > 1e-10 * xi {
            warnings.push(format!("eps={}: Im z = {:e} above the real axis", p.eps, p.nu));
        }
    }
    let continuity_constant = points
        .windows(2)
        .map(|w| (w[1].z - w[0].z).norm() / (w[1].eps.powi(2) - w[0].eps.powi(2)).abs())
        .filter(|v| v.is_finite())
        .reduce(f64::max);

    let mut truncation_shift = None;
    let mut last_unstable = false;
    if opts.check_truncation && failure.is_none() {
        if let Some(last) = points.last().filter(|p| p.eps > 0.0) {
            let doubled = Truncation { n_basis: target.trunc.n_basis, n_sum: 2 * target.trunc.n_sum };
            // same starting point as the original solve, so the shift is not
            // hidden by an immediate acceptance of the old root
            let z0 = match opts.mode {
                SweepMode::Continuation => predict(xi, &points[..points.len() - 1], last.eps),
                SweepMode::FixedSeed => default_seed(xi),
            };
            match target.with_trunc(doubled).map(|t| solve_resonance(last.eps, &t, z0, &opts.solver)) {
                Ok(Ok(s)) => {
                    let shift = (s.z - last.z).norm();
                    truncation_shift = Some(shift);
                    if shift > 10.0 * opts.solver.tol {
                        last_unstable = true;
                        warnings.push(format!("truncation: doubling n_sum moves the last root by {shift:e}"));
                    }
                }
                Ok(Err(e)) | Err(e) => {
                    last_unstable = true;
                    warnings.push(format!("truncation check failed: {e}"));
                }
            }
        }
    }

    let window = opts.window.or_else(|| auto_window(&points, opts.solver.tol, last_unstable));
    let fit = |f: &dyn Fn(&SweepPoint) -> f64| -> Option<WindowedFit> {
        let w = window?;
        let data: Vec<(f64, f64)> = points.get(w.start..=w.end)?.iter().map(|p| (p.eps, f(p).abs())).collect();
        fit_power_law(&data).ok().map(|fit| WindowedFit { fit, window: w })
    };
    let fit_mu = fit(&|p| p.mu);
    let fit_nu = fit(&|p| p.nu);
    if points.len() >= 3 && (fit_mu.is_none() || fit_nu.is_none()) {
        warnings.push("power-law fit skipped: fewer than 3 usable points".into());
    }
    ResonanceBranch {
        level: level.clone(),
        seed: target.mode,
        points,
        fit_mu,
        fit_nu,
        truncation_shift,
        continuity_constant,
        failure,
        warnings,
    }
}

/// Starting point for the next continuation step: the shift `z - xi`
/// scaled by `eps^2`, with the ratio `(z - xi)/eps^2` extrapolated linearly in
/// `ln eps` from the last two roots.
pub fn predict(xi: f64, previous: &[SweepPoint], eps: f64) -> Complex64 {
    let open: Vec<&SweepPoint> = previous.iter().filter(|p| p.eps > 0.0 && p.eps < eps).collect();
    let ratio = |p: &SweepPoint| (p.z - xi) / (p.eps * p.eps);
    match open.as_slice() {
        [] => previous.last().map_or(default_seed(xi), |p| if p.eps == 0.0 { default_seed(xi) } else { p.z }),
        [only] => xi + ratio(only) * eps * eps,
        [.., a, b] => {
            let slope = (ratio(b) - ratio(a)) / (b.eps.ln() - a.eps.ln());
            xi + (ratio(b) + slope * (eps.ln() - b.eps.ln())) * eps * eps
        }
    }
}

/// Drops points below the noise floor `|nu| < 100 tol` and, when flagged,
/// the last point.
fn auto_window(points: &[SweepPoint], tol: f64, drop_last: bool) -> Option<FitWindow> {
    let start = points.iter().position(|p| p.eps > 0.0 && p.nu.abs() >= 100.0 * tol && p.mu != 0.0)?;
    let mut end = points.len().checked_sub(1)?;
    if drop_last {
        end = end.checked_sub(1)?;
    }
    (end >= start + 2).then_some(FitWindow { start, end })
}

/// Decay times `1 / (2 |nu|)` and their exponent in the aperture volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lifetimes {
    pub points: Vec<(f64, f64)>,
    pub volume_fit: Option<PowerFit>,
}

pub fn lifetime(branch: &ResonanceBranch, g: &Geometry) -> Result<Lifetimes, ResonanceError> {
    let mut points = Vec::new();
    let mut by_volume = Vec::new();
    for p in branch.points.iter().filter(|p| p.eps > 0.0) {
        if p.nu == 0.0 {
            return Err(ResonanceError::ZeroWidth);
        }
        let tau = 1.0 / (2.0 * p.nu.abs());
        points.push((p.eps, tau));
        by_volume.push((g.aperture_volume(p.eps), tau));
    }
    let volume_fit = match branch.fit_nu.map(|f| f.window) {
        Some(w) => {
            let first = branch.points.iter().take(w.start).filter(|p| p.eps > 0.0).count();
            let len = w.end - w.start + 1;
            by_volume.get(first..first + len).and_then(|d| fit_power_law(d).ok())
        }
        None => fit_power_law(&by_volume).ok(),
    };
    Ok(Lifetimes { points, volume_fit })
}

/// Sample points of a reconstructed field; `x3` fixes the slice in 3D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Option<f64>,
}

/// Sine coefficients of the wall function on all `n_sum` channels.
pub fn source_coefficients(eval: &ZetaEvaluator, branch: &EigenBranch) -> Vec<Complex64> {
    let a = &eval.assembler;
    let nb = a.trunc.n_basis;
    let ns = a.trunc.n_sum;
    match a.overlaps.dirs.len() {
        1 => {
            let o = &a.overlaps.dirs[0];
            (0..ns).map(|j| (0..nb).map(|m| branch.coeffs[m] * o.wall(m, j)).sum()).collect()
        }
        _ => {
            let (o2, o3) = (&a.overlaps.dirs[0], &a.overlaps.dirs[1]);
            let mut out = Vec::with_capacity(ns * ns);
            for j2 in 0..ns {
                // partial contraction over m3 first
                let inner: Vec<Vec<Complex64>> = (0..nb)
                    .map(|m2| (0..ns).map(|j3| (0..nb).map(|m3| branch.coeffs[m2 * nb + m3] * o3.wall(m3, j3)).sum()).collect())
                    .collect();
                for j3 in 0..ns {
                    out.push((0..nb).map(|m2| o2.wall(m2, j2) * inner[m2][j3]).sum());
                }
            }
            out
        }
    }
}

/// `u(x) = sum_n f_n g_n(z; x1, d1) e_n(x_perp)`, sampled row-major over
/// `(x1, x2)`.
pub fn reconstruct_field(
    z: Complex64,
    f_coeffs: &[Complex64],
    g: &Geometry,
    grid: &FieldGrid,
    sheets: &SheetChoice,
) -> Vec<Complex64> {
    let dirs = g.directions();
    let d1 = g.d1();
    let per = if dirs.len() == 1 { f_coeffs.len() } else { (f_coeffs.len() as f64).sqrt().round() as usize };
    let thresholds = basis_thresholds(g, per);
    let transverse = |n: usize, x2: f64| -> f64 {
        if dirs.len() == 1 {
            mode_value(n + 1, x2, dirs[0].width).unwrap_or(0.0)
        } else {
            let (n2, n3) = (n / per + 1, n % per + 1);
            let x3 = grid.x3.unwrap_or(0.5 * dirs[1].width);
            mode_value(n2, x2, dirs[0].width).unwrap_or(0.0) * mode_value(n3, x3, dirs[1].width).unwrap_or(0.0)
        }
    };
    let mut out = Vec::with_capacity(grid.x1.len() * grid.x2.len());
    for &x1 in &grid.x1 {
        let segments: Vec<Complex64> = (0..f_coeffs.len())
            .map(|n| green_segment(z, thresholds[n], sheets.get(n), x1, d1))
            .collect();
        for &x2 in &grid.x2 {
            out.push((0..f_coeffs.len()).map(|n| f_coeffs[n] * segments[n] * transverse(n, x2)).sum());
        }
    }
    out
}

/// Operator quantities along an aperture sweep at fixed `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatePoint {
    pub eps: f64,
    pub z: Complex64,
    pub h_norm: f64,
    pub quad_form: f64,
    /// Branch quantities; absent when the tracked branch is not identifiable at `z`.
    pub branch: Option<BranchEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchEstimate {
    pub projector_gap: f64,
    pub eta_norm: f64,
    pub j_value: f64,
}

pub fn operator_estimates(
    target: &Target,
    eps: f64,
    z: Complex64,
    kernel: Option<KernelSum>,
) -> Result<EstimatePoint, ResonanceError> {
    let eval = ZetaEvaluator::new(target, eps, kernel)?;
    let bs = eval.assembler.assemble(z, &eval.sheets)?;
    let branch = match branch_eigenpair(&bs, target.seed) {
        Ok(b) => Some(BranchEstimate {
            projector_gap: projector_gap(&b),
            eta_norm: b.eta_norm,
            j_value: j_diagnostic(&bs, &b, target.seed)?.norm(),
        }),
        Err(BsError::BranchAmbiguity { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(EstimatePoint {
        eps,
        z,
        h_norm: operator_norm(&bs.h),
        quad_form: bs.h.read(target.seed, target.seed).norm(),
        branch,
    })
}

/// Seeds of every mode of a (possibly degenerate) level.
pub fn level_targets(g: &Geometry, level: &EmbeddedLevel, trunc: Truncation) -> Vec<Result<Target, ResonanceError>> {
    level.indices.iter().map(|&m| Target::new(g, m, trunc)).collect()
}

/// Interior cavity mode `(l, k)` in one call.
pub fn cavity_mode(l: usize, k: ModeIndex) -> CavityMode {
    CavityMode { l, k }
}
