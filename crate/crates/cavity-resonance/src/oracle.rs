//! Finite-difference cross-check with a complex absorbing potential.
//!
//! The strip is cut at `x1 = L` and the 5-point Dirichlet Laplacian is
//! discretised on a uniform grid whose lines pass through the wall and the
//! aperture edges. A potential `-i eta ((x1 - L_cap)/(L - L_cap))^p` in the
//! far part of the guide absorbs outgoing waves, so resonances appear as
//! complex eigenvalues of a complex symmetric matrix.
//!
//! Shifted solves use the structure of the grid: the cavity and the guide
//! are separable (sine transforms across the strip), and the two are
//! coupled only through the few aperture nodes on the wall, which are
//! eliminated by a Schur complement.

use crate::geometry::{Geometry, Strip};
use faer::prelude::SpSolver;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

const ALIGN_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("geometry not aligned with the grid: {0}")]
    NotAligned(String),
    #[error("the finite-difference oracle is two-dimensional only")]
    ThreeDimensional,
    #[error("invalid CAP configuration: {0}")]
    BadConfig(String),
    #[error("inverse iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapConfig {
    pub h: f64,
    /// Truncation length in `x1`.
    pub length: f64,
    /// Start of the absorbing layer.
    pub cap_start: f64,
    pub eta: f64,
    pub cap_power: u32,
}

impl CapConfig {
    /// `L = d1 + 6 d2`, `L_cap = d1 + 3 d2`, `eta = 5 xi`, quadratic ramp.
    pub fn standard(s: &Strip, xi: f64, h: f64) -> Self {
        CapConfig { h, length: s.d1 + 6.0 * s.d2, cap_start: s.d1 + 3.0 * s.d2, eta: 5.0 * xi, cap_power: 2 }
    }

    pub fn validate(&self, s: &Strip, eps: f64) -> Result<(), OracleError> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(OracleError::BadConfig("h must be positive".into()));
        }
        if self.cap_power < 2 {
            return Err(OracleError::BadConfig("cap_power must be >= 2".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(OracleError::BadConfig("eta must be non-negative".into()));
        }
        if !(s.d1 < self.cap_start && self.cap_start < self.length) {
            return Err(OracleError::BadConfig("need d1 < L_cap < L".into()));
        }
        for (name, v) in [("d1", s.d1), ("d2", s.d2), ("t", s.t), ("eps", eps), ("L", self.length)] {
            let r = v / self.h;
            if (r - r.round()).abs() > ALIGN_TOL * r.abs().max(1.0) {
                return Err(OracleError::NotAligned(format!("{name}/h = {r}")));
            }
        }
        Ok(())
    }
}

/// Closed-cavity eigenvalue of the 5-point Laplacian with spacing `h`.
pub fn fd_cavity_eigenvalue(d1: f64, d2: f64, h: f64, l: usize, k: usize) -> f64 {
    let s1 = (PI * l as f64 * h / (2.0 * d1)).sin();
    let s2 = (PI * k as f64 * h / (2.0 * d2)).sin();
    4.0 / (h * h) * (s1 * s1 + s2 * s2)
}

/// Index layout of the unknowns.
#[derive(Debug, Clone)]
struct CapGrid {
    h: f64,
    /// Cells across the strip; interior rows `j = 1..ny`.
    ny: usize,
    /// Column of the wall.
    iw: usize,
    /// Last column; `x1 = nx h` is a Dirichlet end.
    nx: usize,
    /// Aperture rows on the wall, `j` in `a0..a1`.
    a0: usize,
    a1: usize,
    /// Potential on the guide columns `iw+1..nx`.
    potential: Vec<Complex64>,
}

impl CapGrid {
    fn new(s: &Strip, eps: f64, cfg: &CapConfig) -> Self {
        let h = cfg.h;
        let cells = |v: f64| (v / h).round() as usize;
        let (ny, iw, nx) = (cells(s.d2), cells(s.d1), cells(cfg.length));
        let (ts, te) = (cells(s.t), cells(s.t + eps));
        let (a0, a1) = if te > ts + 1 { (ts + 1, te) } else { (0, 0) };
        let potential = (iw + 1..nx)
            .map(|i| {
                let x = i as f64 * h;
                if x > cfg.cap_start {
                    let r = (x - cfg.cap_start) / (cfg.length - cfg.cap_start);
                    Complex64::new(0.0, -cfg.eta * r.powi(cfg.cap_power as i32))
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        CapGrid { h, ny, iw, nx, a0, a1, potential }
    }

    fn rows(&self) -> usize {
        self.ny - 1
    }
    fn cav_cols(&self) -> usize {
        self.iw - 1
    }
    fn duct_cols(&self) -> usize {
        self.nx - self.iw - 1
    }
    fn n_ap(&self) -> usize {
        self.a1 - self.a0
    }
    fn cav_len(&self) -> usize {
        self.rows() * self.cav_cols()
    }
    fn len(&self) -> usize {
        self.cav_len() + self.n_ap() + self.rows() * self.duct_cols()
    }

    /// Flat index of grid node `(i, j)`, if it is an unknown.
    fn index(&self, i: usize, j: usize) -> Option<usize> {
        if j == 0 || j >= self.ny || i == 0 || i >= self.nx {
            return None;
        }
        if i < self.iw {
            Some((i - 1) * self.rows() + (j - 1))
        } else if i == self.iw {
            (self.a0..self.a1).contains(&j).then(|| self.cav_len() + j - self.a0)
        } else {
            Some(self.cav_len() + self.n_ap() + (i - self.iw - 1) * self.rows() + (j - 1))
        }
    }

    fn node_potential(&self, i: usize) -> Complex64 {
        if i > self.iw {
            self.potential[i - self.iw - 1]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }

    /// Nonzeros `(row, col, value)` of the matrix, row by row.
    #[cfg(test)]
    fn triplets(&self) -> Vec<(usize, usize, Complex64)> {
        let inv = 1.0 / (self.h * self.h);
        let mut out = Vec::new();
        for i in 1..self.nx {
            for j in 1..self.ny {
                let Some(row) = self.index(i, j) else { continue };
                out.push((row, row, Complex64::new(4.0 * inv, 0.0) + self.node_potential(i)));
                for (ni, nj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                    if let Some(col) = self.index(ni, nj) {
                        out.push((row, col, Complex64::new(-inv, 0.0)));
                    }
                }
            }
        }
        out
    }

    fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        let inv = 1.0 / (self.h * self.h);
        let mut out = vec![Complex64::new(0.0, 0.0); self.len()];
        let value = |i: usize, j: usize| self.index(i, j).map_or(Complex64::new(0.0, 0.0), |k| u[k]);
        for i in 1..self.nx {
            for j in 1..self.ny {
                let Some(row) = self.index(i, j) else { continue };
                let lap = 4.0 * u[row] - value(i - 1, j) - value(i + 1, j) - value(i, j - 1) - value(i, j + 1);
                out[row] = lap * inv + self.node_potential(i) * u[row];
            }
        }
        out
    }
}

/// Orthonormal sine transform of size `n - 1`; its own inverse.
fn dst_matrix(n: usize) -> Mat<Complex64> {
    let norm = (2.0 / n as f64).sqrt();
    Mat::from_fn(n - 1, n - 1, |a, b| Complex64::new(norm * (PI * ((a + 1) * (b + 1)) as f64 / n as f64).sin(), 0.0))
}

fn dst_eigenvalues(n: usize, h: f64) -> Vec<f64> {
    (1..n).map(|a| 4.0 / (h * h) * (PI * a as f64 / (2.0 * n as f64)).sin().powi(2)).collect()
}

/// Tridiagonal LU with partial pivoting.
#[derive(Debug, Clone)]
struct TriLu {
    dl: Vec<Complex64>,
    d: Vec<Complex64>,
    du: Vec<Complex64>,
    du2: Vec<Complex64>,
    swap: Vec<bool>,
}

impl TriLu {
    fn new(mut dl: Vec<Complex64>, mut d: Vec<Complex64>, mut du: Vec<Complex64>) -> Self {
        let n = d.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut du2 = vec![zero; n.saturating_sub(2)];
        let mut swap = vec![false; n];
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i] != zero {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swap[i] = true;
            }
        }
        TriLu { dl, d, du, du2, swap }
    }

    fn solve(&self, b: &mut [Complex64]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swap[i] {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            } else {
                b[i + 1] = b[i + 1] - self.dl[i] * b[i];
            }
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }
}

/// `(A - sigma)^{-1}` for one shift.
struct ShiftedSolver {
    grid: CapGrid,
    sy: Mat<Complex64>,
    sx: Mat<Complex64>,
    cav_inv: Mat<Complex64>,
    duct: Vec<TriLu>,
    cav_cols_of_ap: Mat<Complex64>,
    duct_cols_of_ap: Mat<Complex64>,
    schur: Option<faer::solvers::PartialPivLu<Complex64>>,
}

impl ShiftedSolver {
    fn new(grid: &CapGrid, sigma: Complex64) -> Self {
        let g = grid.clone();
        let inv = 1.0 / (g.h * g.h);
        let ly = dst_eigenvalues(g.ny, g.h);
        let lx = dst_eigenvalues(g.iw, g.h);
        let cav_inv = Mat::from_fn(g.rows(), g.cav_cols(), |a, b| 1.0 / (ly[a] + lx[b] - sigma));
        let nd = g.duct_cols();
        let duct = ly
            .iter()
            .map(|&l| {
                let d = (0..nd).map(|c| Complex64::new(2.0 * inv + l, 0.0) + g.potential[c] - sigma).collect();
                TriLu::new(vec![Complex64::new(-inv, 0.0); nd - 1], d, vec![Complex64::new(-inv, 0.0); nd - 1])
            })
            .collect();
        let mut solver = ShiftedSolver {
            sy: dst_matrix(g.ny),
            sx: dst_matrix(g.iw),
            cav_inv,
            duct,
            cav_cols_of_ap: Mat::zeros(0, 0),
            duct_cols_of_ap: Mat::zeros(0, 0),
            schur: None,
            grid: g,
        };
        let na = solver.grid.n_ap();
        if na > 0 {
            let rows = solver.grid.rows();
            let (ncav, nduct) = (solver.grid.cav_cols(), solver.grid.duct_cols());
            let mut zc = Mat::<Complex64>::zeros(rows * ncav, na);
            let mut zd = Mat::<Complex64>::zeros(rows * nduct, na);
            for a in 0..na {
                let j = solver.grid.a0 + a;
                let mut rc = Mat::<Complex64>::zeros(rows, ncav);
                rc.write(j - 1, ncav - 1, Complex64::new(-inv, 0.0));
                let yc = solver.cavity(&rc);
                let mut rd = Mat::<Complex64>::zeros(rows, nduct);
                rd.write(j - 1, 0, Complex64::new(-inv, 0.0));
                let yd = solver.guide(&rd);
                for c in 0..ncav {
                    for r in 0..rows {
                        zc.write(c * rows + r, a, yc.read(r, c));
                    }
                }
                for c in 0..nduct {
                    for r in 0..rows {
                        zd.write(c * rows + r, a, yd.read(r, c));
                    }
                }
            }
            let s = Mat::<Complex64>::from_fn(na, na, |a, b| {
                let mut v = if a == b {
                    Complex64::new(4.0 * inv, 0.0) - sigma
                } else if a.abs_diff(b) == 1 {
                    Complex64::new(-inv, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let j = solver.grid.a0 + a;
                v -= -inv * zc.read((ncav - 1) * rows + j - 1, b);
                v -= -inv * zd.read(j - 1, b);
                v
            });
            solver.schur = Some(s.partial_piv_lu());
            solver.cav_cols_of_ap = zc;
            solver.duct_cols_of_ap = zd;
        }
        solver
    }

    fn cavity(&self, r: &Mat<Complex64>) -> Mat<Complex64> {
        let t = &self.sy * r * &self.sx;
        let t = Mat::from_fn(t.nrows(), t.ncols(), |a, b| t.read(a, b) * self.cav_inv.read(a, b));
        &self.sy * t * &self.sx
    }

    fn guide(&self, r: &Mat<Complex64>) -> Mat<Complex64> {
        let mut t = &self.sy * r;
        let mut row = vec![Complex64::new(0.0, 0.0); t.ncols()];
        for (a, lu) in self.duct.iter().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = t.read(a, c);
            }
            lu.solve(&mut row);
            for (c, v) in row.iter().enumerate() {
                t.write(a, c, *v);
            }
        }
        &self.sy * t
    }

    fn solve(&self, r: &[Complex64]) -> Vec<Complex64> {
        let g = &self.grid;
        let rows = g.rows();
        let (ncav, nduct, na) = (g.cav_cols(), g.duct_cols(), g.n_ap());
        let off = g.cav_len() + na;
        let rc = Mat::from_fn(rows, ncav, |a, c| r[c * rows + a]);
        let rd = Mat::from_fn(rows, nduct, |a, c| r[off + c * rows + a]);
        let yc = self.cavity(&rc);
        let yd = self.guide(&rd);
        let mut out = vec![Complex64::new(0.0, 0.0); g.len()];
        for c in 0..ncav {
            for a in 0..rows {
                out[c * rows + a] = yc.read(a, c);
            }
        }
        for c in 0..nduct {
            for a in 0..rows {
                out[off + c * rows + a] = yd.read(a, c);
            }
        }
        if let Some(schur) = &self.schur {
            let inv = 1.0 / (g.h * g.h);
            let rhs = Mat::from_fn(na, 1, |a, _| {
                let j = g.a0 + a;
                r[g.cav_len() + a] + inv * yc.read(j - 1, ncav - 1) + inv * yd.read(j - 1, 0)
            });
            let ua = schur.solve(&rhs);
            for a in 0..na {
                let v = ua.read(a, 0);
                out[g.cav_len() + a] = v;
                for k in 0..g.cav_len() {
                    out[k] -= self.cav_cols_of_ap.read(k, a) * v;
                }
                for k in 0..rows * nduct {
                    out[off + k] -= self.duct_cols_of_ap.read(k, a) * v;
                }
            }
        }
        out
    }
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Modified Gram–Schmidt, applied twice.
fn orthonormalize(vs: &mut [Vec<Complex64>]) {
    for _ in 0..2 {
        for i in 0..vs.len() {
            for j in 0..i {
                let p = dot(&vs[j], &vs[i]);
                let (head, tail) = vs.split_at_mut(i);
                for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                    *x -= p * y;
                }
            }
            let n = norm(&vs[i]);
            vs[i].iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Settings of the block inverse iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationOptions {
    /// Relative residual `|A x - lambda x| / (|lambda| |x|)` accepted.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Extra vectors carried beyond the requested count.
    pub guard_vectors: usize,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions { tol: 1e-9, max_sweeps: 300, guard_vectors: 5 }
    }
}

fn strip_of(g: &Geometry) -> Result<Strip, OracleError> {
    match g {
        Geometry::Strip(s) => Ok(*s),
        Geometry::Duct(_) => Err(OracleError::ThreeDimensional),
    }
}

/// The `count` eigenvalues nearest `center`, sorted by distance.
pub fn cap_eigenvalues(
    g: &Geometry,
    eps: f64,
    cfg: &CapConfig,
    center: Complex64,
    count: usize,
) -> Result<Vec<Complex64>, OracleError> {
    cap_eigenvalues_with(g, eps, cfg, center, count, &IterationOptions::default())
}

pub fn cap_eigenvalues_with(
    g: &Geometry,
    eps: f64,
    cfg: &CapConfig,
    center: Complex64,
    count: usize,
    opts: &IterationOptions,
) -> Result<Vec<Complex64>, OracleError> {
    let s = strip_of(g)?;
    cfg.validate(&s, eps)?;
    let grid = CapGrid::new(&s, eps, cfg);
    let solver = ShiftedSolver::new(&grid, center);
    let n = grid.len();
    let m = count + opts.guard_vectors;
    let mut vs: Vec<Vec<Complex64>> = (0..m)
        .map(|k| {
            (0..n)
                .map(|i| {
                    let x = i as f64;
                    Complex64::new((0.37 * x * (k + 1) as f64).sin() + 0.1, (0.53 * x + k as f64).cos())
                })
                .collect()
        })
        .collect();
    orthonormalize(&mut vs);
    let mut worst = f64::INFINITY;
    for _ in 0..opts.max_sweeps {
        let ws: Vec<Vec<Complex64>> = vs.iter().map(|v| solver.solve(v)).collect();
        let small = Mat::from_fn(m, m, |i, j| dot(&vs[i], &ws[j]));
        let evd = small.eigendecomposition::<Complex64>();
        let theta = evd.s().column_vector();
        let y = evd.u();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| theta.read(b).norm().total_cmp(&theta.read(a).norm()));
        let mut values = Vec::with_capacity(count);
        worst = 0.0;
        for &i in order.iter().take(count) {
            let lambda = center + 1.0 / theta.read(i);
            let x: Vec<Complex64> = (0..n).map(|r| (0..m).map(|k| vs[k][r] * y.read(k, i)).sum()).collect();
            let ax = grid.apply(&x);
            let res: Vec<Complex64> = ax.iter().zip(&x).map(|(a, b)| a - lambda * b).collect();
            worst = worst.max(norm(&res) / (lambda.norm().max(1.0) * norm(&x)));
            values.push(lambda);
        }
        if worst <= opts.tol {
            values.sort_by(|a, b| (a - center).norm().total_cmp(&(b - center).norm()));
            return Ok(values);
        }
        vs = ws;
        orthonormalize(&mut vs);
    }
    Err(OracleError::NoConvergence { iterations: opts.max_sweeps, residual: worst })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapStability {
    pub eigenvalue: Complex64,
    pub half_strength: Complex64,
    pub longer_domain: Complex64,
    pub drift: f64,
    pub warnings: Vec<String>,
}

/// Nearest eigenvalue to `center` and its drift when `eta` is halved and
/// when the domain is extended by `d1`.
pub fn cap_stability(g: &Geometry, eps: f64, cfg: &CapConfig, center: Complex64) -> Result<CapStability, OracleError> {
    let s = strip_of(g)?;
    let base = cap_eigenvalues(g, eps, cfg, center, 1)?[0];
    let half = CapConfig { eta: 0.5 * cfg.eta, ..*cfg };
    let half_strength = cap_eigenvalues(g, eps, &half, center, 1)?[0];
    let longer = CapConfig { length: cfg.length + s.d1, cap_start: cfg.cap_start + s.d1, ..*cfg };
    let longer_domain = cap_eigenvalues(g, eps, &longer, center, 1)?[0];
    let drift = (half_strength - base).norm().max((longer_domain - base).norm());
    let mut warnings = Vec::new();
    if cfg.eta == 0.0 {
        warnings.push("no absorption: eta = 0 leaves a closed box with real spectrum".to_string());
    }
    Ok(CapStability { eigenvalue: base, half_strength, longer_domain, drift, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn small_cfg(eta: f64) -> CapConfig {
        CapConfig { h: 0.05, length: 2.0, cap_start: 1.4, eta, cap_power: 2 }
    }

    fn small_strip() -> Strip {
        Strip { d1: 0.5, d2: 0.4, t: 0.1 }
    }

    fn dense(grid: &CapGrid) -> Mat<Complex64> {
        let n = grid.len();
        let mut m = Mat::<Complex64>::zeros(n, n);
        for (r, col, v) in grid.triplets() {
            m.write(r, col, m.read(r, col) + v);
        }
        m
    }

    #[test]
    fn matrix_is_complex_symmetric_and_matches_stencil() {
        let grid = CapGrid::new(&small_strip(), 0.15, &small_cfg(20.0));
        assert_eq!(grid.n_ap(), 2);
        let a = dense(&grid);
        let n = grid.len();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(a.read(i, j), a.read(j, i));
            }
        }
        let u: Vec<Complex64> = (0..n).map(|i| c((i as f64 * 0.7).sin(), (i as f64 * 0.3).cos())).collect();
        let au = grid.apply(&u);
        for i in 0..n {
            let row: Complex64 = (0..n).map(|j| a.read(i, j) * u[j]).sum();
            assert!((row - au[i]).norm() < 1e-10 * au[i].norm().max(1.0));
        }
    }

    #[test]
    fn structured_solve_inverts_the_matrix() {
        let grid = CapGrid::new(&small_strip(), 0.15, &small_cfg(20.0));
        let sigma = c(90.0, 0.5);
        let solver = ShiftedSolver::new(&grid, sigma);
        let n = grid.len();
        let r: Vec<Complex64> = (0..n).map(|i| c((i as f64 * 1.3).cos(), (i as f64 * 0.1).sin())).collect();
        let x = solver.solve(&r);
        let ax = grid.apply(&x);
        for i in 0..n {
            assert!((ax[i] - sigma * x[i] - r[i]).norm() < 1e-9, "{i}");
        }
    }

    #[test]
    fn pivoted_tridiagonal_solve() {
        let n = 7;
        let dl: Vec<Complex64> = (0..n - 1).map(|i| c(3.0 + i as f64, 0.2)).collect();
        let d: Vec<Complex64> = (0..n).map(|i| c(if i % 2 == 0 { 1e-3 } else { -0.5 }, 0.0)).collect();
        let du: Vec<Complex64> = (0..n - 1).map(|i| c(1.0, -(i as f64))).collect();
        let lu = TriLu::new(dl.clone(), d.clone(), du.clone());
        let b: Vec<Complex64> = (0..n).map(|i| c(i as f64, 1.0)).collect();
        let mut x = b.clone();
        lu.solve(&mut x);
        for i in 0..n {
            let mut v = d[i] * x[i];
            if i > 0 {
                v += dl[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += du[i] * x[i + 1];
            }
            assert!((v - b[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn closed_box_spectrum_is_real_without_absorption() {
        let s = small_strip();
        let g = Geometry::Strip(s);
        let xi = fd_cavity_eigenvalue(0.5, 0.4, 0.05, 1, 1);
        let ev = cap_eigenvalues(&g, 0.15, &small_cfg(0.0), c(xi, 0.0), 1).unwrap();
        assert!(ev.iter().all(|e| e.im.abs() < 1e-8 * e.re));
        let closed = cap_eigenvalues(&g, 0.0, &small_cfg(20.0), c(xi + 0.3, 0.0), 1).unwrap();
        assert!((closed[0] - xi).norm() < 1e-9 * xi);
    }

    #[test]
    fn misaligned_geometry_is_rejected() {
        let g = Geometry::Strip(small_strip());
        let err = cap_eligible(&g, 0.12);
        assert!(matches!(err, Err(OracleError::NotAligned(_))));
        let duct = Geometry::Duct(crate::geometry::Duct::DEFAULT);
        assert_eq!(cap_eigenvalues(&duct, 0.0, &small_cfg(1.0), c(1.0, 0.0), 1).unwrap_err(), OracleError::ThreeDimensional);
    }

    fn cap_eligible(g: &Geometry, eps: f64) -> Result<Vec<Complex64>, OracleError> {
        cap_eigenvalues(g, eps, &small_cfg(1.0), c(50.0, 0.0), 1)
    }

    #[test]
    fn cavity_eigenvalue_converges_at_second_order() {
        let xi = PI * PI * (1.0 + 1.0 / 0.49);
        let errs: Vec<f64> = [0.05, 0.025, 0.0125].iter().map(|&h| (fd_cavity_eigenvalue(1.0, 0.7, h, 1, 1) - xi).abs()).collect();
        for w in errs.windows(2) {
            assert!(((w[0] / w[1]).log2() - 2.0).abs() < 0.05);
        }
    }
}
