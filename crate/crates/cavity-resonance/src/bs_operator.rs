//! Truncated Birman–Schwinger matrix on the wall and its tracked eigenpair.
//!
//! In the sine basis `e_m` of the wall the operator has entries
//! `K[m][n] = sum_j G_j(z) O[m][j] O[n][j]`, where `O` is the wall overlap
//! matrix. `K0 = diag(G_m)` is the operator of the closed wall and
//! `H = K - K0` the aperture perturbation.
//!
//! The sine vectors restricted to the wall, `chi e_m`, are not orthonormal
//! once the slit is open. Eigenpairs are therefore computed in the
//! orthonormal basis of their span obtained from the Gram matrix
//! `B = I - Gbar`; directions with Gram eigenvalue below [`GRAM_FLOOR`]
//! carry no wall function and are discarded.

use crate::geometry::Geometry;
use crate::greens::{green_wall, Sheet, SheetChoice};
use crate::modes::{gap_raw, GapMatrix, ModeError, OverlapTable};
use crate::quadrature;
use crate::spectrum::basis_thresholds;
use faer::{Mat, Side};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;
use thiserror::Error;

/// Relative cut-off for Gram eigenvalues.
pub const GRAM_FLOOR: f64 = 1e-10;
/// Minimal overlap of a tracked eigenvector with its seed mode.
pub const BRANCH_GUARD: f64 = FRAC_1_SQRT_2;
/// Terms of the `1/j^3` moment summed explicitly.
const CUBIC_TERMS: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BsError {
    #[error("truncation mismatch: {0}")]
    Mismatch(String),
    #[error("invalid truncation: need 1 <= n_basis <= n_sum, got {n_basis}, {n_sum}")]
    BadTruncation { n_basis: usize, n_sum: usize },
    #[error("branch ambiguity: best seed overlap {best:.6} <= 1/sqrt(2)")]
    BranchAmbiguity { best: f64 },
    #[error("defective matrix: eigensolver returned non-finite values")]
    Defective,
    #[error("mode index outside the truncated basis")]
    IndexOutOfRange,
    #[error(transparent)]
    Mode(#[from] ModeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub n_basis: usize,
    pub n_sum: usize,
}

impl Truncation {
    pub const DEFAULT_2D: Truncation = Truncation { n_basis: 64, n_sum: 256 };
    pub const DEFAULT_3D: Truncation = Truncation { n_basis: 24, n_sum: 64 };

    pub fn default_for(g: &Geometry) -> Self {
        if g.dimension() == 2 {
            Self::DEFAULT_2D
        } else {
            Self::DEFAULT_3D
        }
    }

    pub fn validate(self) -> Result<Self, BsError> {
        if self.n_basis >= 1 && self.n_basis <= self.n_sum {
            Ok(self)
        } else {
            Err(BsError::BadTruncation { n_basis: self.n_basis, n_sum: self.n_sum })
        }
    }

    /// Size of the flattened basis for a geometry of the given dimension.
    pub fn basis_size(&self, dimension: usize) -> usize {
        if dimension == 2 {
            self.n_basis
        } else {
            self.n_basis * self.n_basis
        }
    }
}

/// How the channel sum in `K` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSum {
    /// Plain sum over the first `n_sum` channels.
    Truncated,
    /// Leading large-channel behaviour `1/j` and `1/j^3` summed to infinity,
    /// only the remainder truncated at `n_sum` (2D only).
    Kummer,
}

/// Orthonormal basis of the span of `chi e_m`, `m` in the truncated basis.
#[derive(Debug, Clone)]
pub struct WallGram {
    /// `X = W S^{-1/2}`: columns are basis functions as combinations of `chi e_m`.
    pub to_wall: Mat<f64>,
    /// `Y = W S^{1/2}`: row `k` holds the sine coefficient `(q_i, e_k)`.
    pub overlaps: Mat<f64>,
}

impl WallGram {
    pub fn rank(&self) -> usize {
        self.to_wall.ncols()
    }

    /// Gram factorisation for one direction.
    fn direction(gap: &GapMatrix, n: usize) -> (Mat<f64>, Vec<f64>) {
        if gap.slit == 0.0 {
            return (Mat::identity(n, n), vec![1.0; n]);
        }
        let b = Mat::<f64>::from_fn(n, n, |i, j| gap.wall(i, j));
        let evd = b.selfadjoint_eigendecomposition(Side::Lower);
        let s = evd.s().column_vector();
        ((evd.u()).to_owned(), (0..n).map(|i| s.read(i)).collect())
    }

    pub fn new(overlaps: &OverlapTable, n_basis: usize) -> Self {
        let parts: Vec<(Mat<f64>, Vec<f64>)> =
            overlaps.dirs.iter().map(|g| Self::direction(g, n_basis)).collect();
        let mut cols: Vec<(Vec<usize>, f64)> = Vec::new();
        match parts.len() {
            1 => {
                let smax = parts[0].1.iter().cloned().fold(0.0, f64::max);
                for (i, &s) in parts[0].1.iter().enumerate() {
                    if s > GRAM_FLOOR * smax {
                        cols.push((vec![i], s));
                    }
                }
            }
            _ => {
                let smax = parts[0].1.iter().cloned().fold(0.0, f64::max)
                    * parts[1].1.iter().cloned().fold(0.0, f64::max);
                for (i2, &s2) in parts[0].1.iter().enumerate() {
                    for (i3, &s3) in parts[1].1.iter().enumerate() {
                        if s2 * s3 > GRAM_FLOOR * smax {
                            cols.push((vec![i2, i3], s2 * s3));
                        }
                    }
                }
            }
        }
        let n = if parts.len() == 1 { n_basis } else { n_basis * n_basis };
        let value = |row: usize, col: &[usize]| -> f64 {
            if parts.len() == 1 {
                parts[0].0.read(row, col[0])
            } else {
                parts[0].0.read(row / n_basis, col[0]) * parts[1].0.read(row % n_basis, col[1])
            }
        };
        let to_wall = Mat::from_fn(n, cols.len(), |r, c| value(r, &cols[c].0) / cols[c].1.sqrt());
        let overlaps = Mat::from_fn(n, cols.len(), |r, c| value(r, &cols[c].0) * cols[c].1.sqrt());
        WallGram { to_wall, overlaps }
    }
}

/// Channel sums of the leading large-channel terms, independent of `z`.
#[derive(Debug, Clone)]
struct KummerMoments {
    /// `sum_j O[m][j] O[n][j] / j` over all channels.
    first: Mat<f64>,
    /// `sum_j O[m][j] O[n][j] / j^3` over all channels.
    third: Mat<f64>,
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Splits `[a, b]` into panels no wider than `width`.
fn uniform_edges(a: f64, b: f64, width: f64) -> Vec<f64> {
    let count = (((b - a) / width).ceil() as usize).max(1);
    (0..=count).map(|i| a + (b - a) * i as f64 / count as f64).collect()
}

fn basis_table(n: usize, xs: &[f64], d: f64) -> Mat<f64> {
    let norm = (2.0 / d).sqrt();
    Mat::from_fn(n, xs.len(), |m, q| norm * ((m + 1) as f64 * PI * xs[q] / d).sin())
}

impl KummerMoments {
    fn new(gap: &GapMatrix, n: usize) -> Self {
        let d = gap.dir.width;
        let t = gap.dir.offset;
        let eps = gap.slit;
        let mut first = Mat::<f64>::from_fn(n, n, |i, j| {
            let delta = if i == j { 1.0 / (i + 1) as f64 } else { 0.0 };
            delta - gap.gap(i, j) * (1.0 / (i + 1) as f64 + 1.0 / (j + 1) as f64)
        });
        if eps > 0.0 {
            let interior = Self::slit_log_kernel(n, t, eps, d);
            for i in 0..n {
                for j in 0..n {
                    first.write(i, j, first.read(i, j) + interior.read(i, j));
                }
            }
        }
        let terms = CUBIC_TERMS.max(4 * n);
        let wall = Mat::<f64>::from_fn(n, terms, |m, j| {
            let delta = if m == j { 1.0 } else { 0.0 };
            let v = if j < gap.size() { gap.gap(m, j) } else { gap_raw(m + 1, j + 1, t, eps, d) };
            (delta - v) / ((j + 1) as f64).powi(3).sqrt()
        });
        let third = &wall * wall.transpose();
        KummerMoments { first, third: symmetrize(third) }
    }

    /// `int int_{slit^2} e_m(x) e_n(y) (2/d) sum_j sin(j pi x/d) sin(j pi y/d)/j dx dy`,
    /// the channel sum written as a logarithmic kernel.
    fn slit_log_kernel(n: usize, t: f64, eps: f64, d: f64) -> Mat<f64> {
        let order = 16;
        let phase = (n as f64) * PI * eps / d;
        let width = (3.0 / phase).min(1.0);
        // smooth part of the kernel on a tensor rule
        let (xs, ws) = quadrature::composite(&uniform_edges(t, t + eps, width * eps), order);
        let smooth = Mat::<f64>::from_fn(xs.len(), xs.len(), |a, b| {
            let (x, y) = (PI * xs[a] / d, PI * xs[b] / d);
            (((x + y) / 2.0).sin().abs().ln() - (PI / (2.0 * d)).ln() - sinc((x - y) / 2.0).ln()) / d
                * ws[a]
                * ws[b]
        });
        let e = basis_table(n, &xs, d);
        let smooth_part = &e * &smooth * e.transpose();
        // -(1/d) log|x - y| on the two triangles x > y and x < y; with
        // u = eps p and y = t + (eps - u) q the weight is eps^2 (1 - p) log(eps p)
        let mut edges: Vec<f64> = std::iter::once(0.0).chain((2..=24).rev().map(|k| 0.25f64.powi(k))).collect();
        edges.extend(uniform_edges(0.25, 1.0, width));
        let (ps, pw) = quadrature::composite(&edges, 20);
        let (qs, qw) = quadrature::composite(&uniform_edges(0.0, 1.0, width), order);
        let count = ps.len() * qs.len();
        let mut xn = Vec::with_capacity(count);
        let mut yn = Vec::with_capacity(count);
        let mut wn = Vec::with_capacity(count);
        for (&p, &wp) in ps.iter().zip(&pw) {
            for (&q, &wq) in qs.iter().zip(&qw) {
                xn.push(t + eps * (p + (1.0 - p) * q));
                yn.push(t + eps * (1.0 - p) * q);
                wn.push(eps * eps * (eps * p).ln() * (1.0 - p) * wp * wq);
            }
        }
        let ex = Mat::<f64>::from_fn(n, count, |m, k| {
            (2.0 / d).sqrt() * ((m + 1) as f64 * PI * xn[k] / d).sin() * wn[k]
        });
        let ey = basis_table(n, &yn, d);
        let tri = &ex * ey.transpose();
        Mat::from_fn(n, n, |i, j| {
            let s = smooth_part.read(i, j) + smooth_part.read(j, i);
            0.5 * s - (tri.read(i, j) + tri.read(j, i)) / d
        })
    }
}

fn symmetrize(m: Mat<f64>) -> Mat<f64> {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| 0.5 * (m.read(i, j) + m.read(j, i)))
}

/// Dense `K`, its diagonal part and the perturbation at one `(z, eps)`.
#[derive(Debug, Clone)]
pub struct TruncatedBS {
    pub z: Complex64,
    pub eps: f64,
    pub trunc: Truncation,
    pub k: Mat<Complex64>,
    pub k0_diag: Vec<Complex64>,
    pub h: Mat<Complex64>,
    pub gram: Arc<WallGram>,
}

impl TruncatedBS {
    pub fn size(&self) -> usize {
        self.k.nrows()
    }

    /// Operator given directly in an orthonormal basis, with `k0_diag` as
    /// its unperturbed diagonal.
    pub fn from_matrix(z: Complex64, k: Mat<Complex64>, k0_diag: Vec<Complex64>) -> Result<Self, BsError> {
        let n = k.nrows();
        if k.ncols() != n || k0_diag.len() != n {
            return Err(BsError::Mismatch("matrix must be square with a matching diagonal".into()));
        }
        let gram = Arc::new(WallGram { to_wall: Mat::identity(n, n), overlaps: Mat::identity(n, n) });
        Ok(finish(z, 0.0, Truncation { n_basis: n, n_sum: n }, k, k0_diag, gram))
    }
}

/// Green factors of all channels `j <= n_sum` (flattened in 3D).
fn channel_factors(z: Complex64, d1: f64, thresholds: &[f64], sheets: &SheetChoice) -> Vec<Complex64> {
    thresholds
        .iter()
        .enumerate()
        .map(|(j, &c)| green_wall(z, c, sheets.get(j), d1))
        .collect()
}

fn wall_rows(gap: &GapMatrix, nb: usize, ns: usize) -> Mat<f64> {
    Mat::from_fn(nb, ns, |m, j| gap.wall(m, j))
}

/// `sum_j w_j O[m][j] O[n][j]` for one direction.
fn weighted_gram(o: &Mat<f64>, w: &[Complex64]) -> Mat<Complex64> {
    let oc = Mat::<Complex64>::from_fn(o.nrows(), o.ncols(), |m, j| o.read(m, j) * w[j]);
    let ot = Mat::<Complex64>::from_fn(o.ncols(), o.nrows(), |j, m| Complex64::new(o.read(m, j), 0.0));
    &oc * &ot
}

/// Flattened product-basis assembly: `K[(m2,m3),(n2,n3)] = sum O2 O2 G O3 O3`.
fn assemble_product(o2: &Mat<f64>, o3: &Mat<f64>, g: &[Complex64], ns: usize) -> Mat<Complex64> {
    let nb = o2.nrows();
    let pairs = nb * nb;
    // inner[j2] = O3 diag(G[j2, :]) O3^T, stored as rows (m3, n3)
    let mut inner = Mat::<Complex64>::zeros(ns, pairs);
    for j2 in 0..ns {
        let block = weighted_gram(o3, &g[j2 * ns..(j2 + 1) * ns]);
        for m3 in 0..nb {
            for n3 in 0..nb {
                inner.write(j2, m3 * nb + n3, block.read(m3, n3));
            }
        }
    }
    let outer = Mat::<Complex64>::from_fn(pairs, ns, |mn, j2| {
        Complex64::new(o2.read(mn / nb, j2) * o2.read(mn % nb, j2), 0.0)
    });
    let flat = &outer * &inner;
    Mat::from_fn(pairs, pairs, |row, col| {
        let (m2, m3) = (row / nb, row % nb);
        let (n2, n3) = (col / nb, col % nb);
        flat.read(m2 * nb + n2, m3 * nb + n3)
    })
}

fn finish(
    z: Complex64,
    eps: f64,
    trunc: Truncation,
    k: Mat<Complex64>,
    k0_diag: Vec<Complex64>,
    gram: Arc<WallGram>,
) -> TruncatedBS {
    let n = k.nrows();
    let h = Mat::from_fn(n, n, |i, j| {
        if i == j {
            k.read(i, j) - k0_diag[i]
        } else {
            k.read(i, j)
        }
    });
    TruncatedBS { z, eps, trunc, k, k0_diag, h, gram }
}

fn basis_diagonal(g: &[Complex64], nb: usize, ns: usize, dimension: usize) -> Vec<Complex64> {
    if dimension == 2 {
        g[..nb].to_vec()
    } else {
        (0..nb * nb).map(|f| g[(f / nb) * ns + f % nb]).collect()
    }
}

/// Plain truncated assembly of `K` with every channel up to `n_sum`.
pub fn assemble_k(
    z: Complex64,
    eps: f64,
    g: &Geometry,
    sheets: &SheetChoice,
    trunc: Truncation,
    overlaps: &OverlapTable,
) -> Result<TruncatedBS, BsError> {
    let trunc = trunc.validate()?;
    check_table(eps, g, trunc, overlaps)?;
    let thresholds = basis_thresholds(g, trunc.n_sum);
    check_sheets(sheets, thresholds.len())?;
    let gram = Arc::new(WallGram::new(overlaps, trunc.n_basis));
    let factors = channel_factors(z, g.d1(), &thresholds, sheets);
    let (nb, ns) = (trunc.n_basis, trunc.n_sum);
    let k = match overlaps.dirs.len() {
        1 => weighted_gram(&wall_rows(&overlaps.dirs[0], nb, ns), &factors),
        _ => assemble_product(
            &wall_rows(&overlaps.dirs[0], nb, ns),
            &wall_rows(&overlaps.dirs[1], nb, ns),
            &factors,
            ns,
        ),
    };
    let diag = basis_diagonal(&factors, nb, ns, g.dimension());
    Ok(finish(z, eps, trunc, k, diag, gram))
}

fn check_table(eps: f64, g: &Geometry, trunc: Truncation, t: &OverlapTable) -> Result<(), BsError> {
    if t.n != trunc.n_sum {
        return Err(BsError::Mismatch(format!("overlap table has {} modes, n_sum is {}", t.n, trunc.n_sum)));
    }
    if t.eps != eps {
        return Err(BsError::Mismatch(format!("overlap table built for eps={}, asked {}", t.eps, eps)));
    }
    if t.dirs.len() + 1 != g.dimension() {
        return Err(BsError::Mismatch("overlap table dimension differs from geometry".into()));
    }
    Ok(())
}

fn check_sheets(s: &SheetChoice, channels: usize) -> Result<(), BsError> {
    if s.len() != channels {
        return Err(BsError::Mismatch(format!("{} sheet flags for {} channels", s.len(), channels)));
    }
    Ok(())
}

/// Everything about `K` that does not depend on `z`, for one aperture size.
#[derive(Debug, Clone)]
pub struct Assembler {
    pub geometry: Geometry,
    pub eps: f64,
    pub trunc: Truncation,
    pub sum: KernelSum,
    pub overlaps: OverlapTable,
    pub thresholds: Vec<f64>,
    pub gram: Arc<WallGram>,
    rows: Vec<Mat<f64>>,
    moments: Option<KummerMoments>,
}

impl Assembler {
    /// Uses [`KernelSum::Kummer`] in 2D and the plain sum in 3D.
    pub fn new(g: &Geometry, eps: f64, trunc: Truncation) -> Result<Self, BsError> {
        let sum = if g.dimension() == 2 { KernelSum::Kummer } else { KernelSum::Truncated };
        Self::with_sum(g, eps, trunc, sum)
    }

    pub fn with_sum(g: &Geometry, eps: f64, trunc: Truncation, sum: KernelSum) -> Result<Self, BsError> {
        let trunc = trunc.validate()?;
        if sum == KernelSum::Kummer && g.dimension() != 2 {
            return Err(BsError::Mismatch("the accelerated channel sum is implemented in 2D only".into()));
        }
        let overlaps = OverlapTable::new(g, eps, trunc.n_sum)?;
        let gram = Arc::new(WallGram::new(&overlaps, trunc.n_basis));
        let rows = overlaps.dirs.iter().map(|d| wall_rows(d, trunc.n_basis, trunc.n_sum)).collect();
        let moments = match sum {
            KernelSum::Kummer if eps > 0.0 => Some(KummerMoments::new(&overlaps.dirs[0], trunc.n_basis)),
            _ => None,
        };
        Ok(Assembler {
            geometry: *g,
            eps,
            trunc,
            sum,
            thresholds: basis_thresholds(g, trunc.n_sum),
            overlaps,
            gram,
            rows,
            moments,
        })
    }

    pub fn basis_size(&self) -> usize {
        self.trunc.basis_size(self.geometry.dimension())
    }

    pub fn assemble(&self, z: Complex64, sheets: &SheetChoice) -> Result<TruncatedBS, BsError> {
        check_sheets(sheets, self.thresholds.len())?;
        let (nb, ns) = (self.trunc.n_basis, self.trunc.n_sum);
        let factors = channel_factors(z, self.geometry.d1(), &self.thresholds, sheets);
        let k = match (&self.moments, self.rows.len()) {
            (Some(mom), _) => {
                let d = self.overlaps.dirs[0].dir.width;
                let lead = d / PI;
                let cubic = z * d.powi(3) / (2.0 * PI.powi(3));
                let rest: Vec<Complex64> = factors
                    .iter()
                    .enumerate()
                    .map(|(j, &gj)| {
                        let jf = (j + 1) as f64;
                        gj - lead / jf - cubic / (jf * jf * jf)
                    })
                    .collect();
                let mut k = weighted_gram(&self.rows[0], &rest);
                for i in 0..nb {
                    for j in 0..nb {
                        let v = k.read(i, j) + lead * mom.first.read(i, j) + cubic * mom.third.read(i, j);
                        k.write(i, j, v);
                    }
                }
                k
            }
            (None, 1) => weighted_gram(&self.rows[0], &factors),
            (None, _) => assemble_product(&self.rows[0], &self.rows[1], &factors, ns),
        };
        let diag = basis_diagonal(&factors, nb, ns, self.geometry.dimension());
        Ok(finish(z, self.eps, self.trunc, k, diag, self.gram.clone()))
    }
}

/// Largest singular value.
pub fn operator_norm(m: &Mat<Complex64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.singular_values().into_iter().fold(0.0, f64::max)
}

/// Diagonal entry `H[k][k]` for the flat basis index `k`.
pub fn quad_form_h(bs: &TruncatedBS, k: usize) -> Result<Complex64, BsError> {
    if k >= bs.size() {
        return Err(BsError::IndexOutOfRange);
    }
    Ok(bs.h.read(k, k))
}

/// An eigenpair of `K` following the seed mode.
#[derive(Debug, Clone)]
pub struct EigenBranch {
    pub zeta: Complex64,
    /// Coordinates in the orthonormal wall basis; unit norm. At `eps = 0`
    /// the wall basis is the sine basis.
    pub vector: Vec<Complex64>,
    /// Sine coefficients `(phi, e_m)` over the truncated basis.
    pub sine_coeffs: Vec<Complex64>,
    /// Expansion `phi = sum_m coeffs[m] chi e_m`.
    pub coeffs: Vec<Complex64>,
    pub overlap_with_seed: f64,
    pub eta_norm: f64,
    /// Bilinear square `int phi^2`, the normalisation of the spectral projector.
    pub bilinear_norm: Complex64,
}

/// Eigenvector of `K` with the largest overlap with `e_seed`, phase fixed so
/// that the overlap is real and positive.
pub fn branch_eigenpair(bs: &TruncatedBS, seed: usize) -> Result<EigenBranch, BsError> {
    if seed >= bs.size() {
        return Err(BsError::IndexOutOfRange);
    }
    let x = &bs.gram.to_wall;
    let y = &bs.gram.overlaps;
    let r = x.ncols();
    let xc = Mat::<Complex64>::from_fn(x.nrows(), r, |i, j| Complex64::new(x.read(i, j), 0.0));
    let kt = xc.transpose() * (&bs.k * &xc);
    let evd = kt.eigendecomposition::<Complex64>();
    let values = evd.s().column_vector();
    let vectors = evd.u();
    let mut best = (f64::NEG_INFINITY, 0usize, Complex64::new(0.0, 0.0), 0.0);
    for i in 0..r {
        let mut proj = Complex64::new(0.0, 0.0);
        let mut norm2 = 0.0;
        for l in 0..r {
            let u = vectors.read(l, i);
            proj += u * y.read(seed, l);
            norm2 += u.norm_sqr();
        }
        let norm = norm2.sqrt();
        let ov = proj.norm() / norm;
        if !ov.is_finite() || !values.read(i).is_finite() {
            return Err(BsError::Defective);
        }
        if ov > best.0 {
            best = (ov, i, proj, norm);
        }
    }
    let (ov, i, proj, norm) = best;
    if ov <= BRANCH_GUARD {
        return Err(BsError::BranchAmbiguity { best: ov });
    }
    let phase = proj.conj() / (proj.norm() * norm);
    let v: Vec<Complex64> = (0..r).map(|l| vectors.read(l, i) * phase).collect();
    let n = bs.size();
    let sine_coeffs = (0..n).map(|m| (0..r).map(|l| v[l] * y.read(m, l)).sum()).collect();
    let coeffs = (0..n).map(|m| (0..r).map(|l| v[l] * x.read(m, l)).sum()).collect();
    let bilinear_norm = v.iter().map(|a| a * a).sum();
    Ok(EigenBranch {
        zeta: values.read(i),
        sine_coeffs,
        coeffs,
        overlap_with_seed: ov,
        eta_norm: (1.0 - ov * ov).max(0.0).sqrt(),
        bilinear_norm,
        vector: v,
    })
}

/// Norm of `P - e_k e_k^T` with `P = phi phi^T / (phi^T phi)` the rank-one
/// spectral projector of the tracked eigenvalue, from the branch alone.
pub fn projector_gap(branch: &EigenBranch) -> f64 {
    let a = branch.overlap_with_seed;
    let beta = branch.bilinear_norm;
    // D = A B^H with A = [phi/beta, -e_k], B = [conj phi, e_k]
    let aa = [
        [Complex64::new(1.0 / beta.norm_sqr(), 0.0), -a / beta.conj()],
        [-a / beta, Complex64::new(1.0, 0.0)],
    ];
    let bb = [[1.0, a], [a, 1.0]];
    let m = |i: usize, j: usize| aa[i][0] * bb[0][j] + aa[i][1] * bb[1][j];
    let tr = m(0, 0) + m(1, 1);
    let det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    let disc = (tr * tr - 4.0 * det).sqrt();
    let lmax = ((tr + disc) / 2.0).re.max(((tr - disc) / 2.0).re).max(0.0);
    lmax.sqrt()
}

pub fn projector_diff_norm(bs: &TruncatedBS, bs0: &TruncatedBS, k: usize) -> Result<f64, BsError> {
    if bs0.eps != 0.0 || bs0.z != bs.z || bs0.trunc != bs.trunc {
        return Err(BsError::Mismatch("reference operator must be the closed wall at the same z".into()));
    }
    Ok(projector_gap(&branch_eigenpair(bs, k)?))
}

/// `J = H[k][k] + (e_k, H eta)/alpha` for the tracked branch. Projecting
/// `K phi = zeta phi` on `e_k` shows that it equals `zeta - G_k(z)`.
pub fn j_diagnostic(bs: &TruncatedBS, branch: &EigenBranch, k: usize) -> Result<Complex64, BsError> {
    if k >= bs.size() {
        return Err(BsError::IndexOutOfRange);
    }
    Ok(branch.zeta - bs.k0_diag[k])
}

/// Sheets of all `n_sum` channels relative to the reference energy `xi`.
pub fn sheets_for(assembler: &Assembler, xi: f64, re_delta_sign: i8) -> SheetChoice {
    crate::greens::sheet_assignment(xi, &assembler.thresholds, re_delta_sign)
}

/// Convenience: physical sheet for every channel.
pub fn physical_sheets(n: usize) -> SheetChoice {
    SheetChoice { flags: vec![Sheet::Physical; n] }
}
