//! Transverse Dirichlet sine basis on the wall and its overlaps with the slit.
//!
//! `e_n(x) = sqrt(2/d) sin(n pi x / d)` on `[0, d]`. The gap overlap is the
//! integral of `e_n e_m` over the slit `[t, t+eps]`; the wall overlap is its
//! complement `delta_nm - gap`.

use crate::geometry::{Direction, Geometry, GeometryError};
use crate::quadrature;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModeError {
    #[error("mode numbers start at 1")]
    ZeroIndex,
    #[error("point x={x} outside [0, {d}]")]
    OutsideWall { x: f64, d: f64 },
    #[error("slit [{t}, {end}] not contained in [0, {d}]")]
    SlitOutsideWall { t: f64, end: f64, d: f64 },
    #[error("quadrature needs at least 2 points")]
    TooFewPoints,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Transverse quantum numbers: one per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModeIndex {
    Line(usize),
    Plane(usize, usize),
}

impl ModeIndex {
    pub fn components(&self) -> Vec<usize> {
        match *self {
            ModeIndex::Line(n) => vec![n],
            ModeIndex::Plane(n2, n3) => vec![n2, n3],
        }
    }

    pub fn from_components(c: &[usize]) -> Option<Self> {
        match *c {
            [n] if n >= 1 => Some(ModeIndex::Line(n)),
            [n2, n3] if n2 >= 1 && n3 >= 1 => Some(ModeIndex::Plane(n2, n3)),
            _ => None,
        }
    }

    /// Flat 0-based position in a basis with `per_direction` modes each way
    /// (row-major: `n2` outer, `n3` inner).
    pub fn flat(&self, per_direction: usize) -> Option<usize> {
        match *self {
            ModeIndex::Line(n) if (1..=per_direction).contains(&n) => Some(n - 1),
            ModeIndex::Plane(n2, n3)
                if (1..=per_direction).contains(&n2) && (1..=per_direction).contains(&n3) =>
            {
                Some((n2 - 1) * per_direction + (n3 - 1))
            }
            _ => None,
        }
    }
}

fn check_slit(t: f64, eps: f64, d: f64) -> Result<(), ModeError> {
    if !(t >= 0.0 && eps >= 0.0 && t + eps <= d) {
        return Err(ModeError::SlitOutsideWall { t, end: t + eps, d });
    }
    Ok(())
}

pub fn mode_value(n: usize, x: f64, d: f64) -> Result<f64, ModeError> {
    if n == 0 {
        return Err(ModeError::ZeroIndex);
    }
    if !(0.0..=d).contains(&x) {
        return Err(ModeError::OutsideWall { x, d });
    }
    Ok(sine(n, x, d))
}

#[inline]
pub(crate) fn sine(n: usize, x: f64, d: f64) -> f64 {
    (2.0 / d).sqrt() * (n as f64 * PI * x / d).sin()
}

/// Closed form without argument checks; `n, m >= 1`.
pub(crate) fn gap_raw(n: usize, m: usize, t: f64, eps: f64, d: f64) -> f64 {
    let centre = PI * (2.0 * t + eps) / (2.0 * d);
    let half = PI * eps / (2.0 * d);
    if n == m {
        let nf = n as f64;
        // sin A - sin B written as a product to avoid cancellation for narrow slits
        eps / d - (nf * 2.0 * centre).cos() * (nf * 2.0 * half).sin() / (nf * PI)
    } else {
        let dm = n as f64 - m as f64;
        let sm = (n + m) as f64;
        (2.0 / PI)
            * ((dm * centre).cos() * (dm * half).sin() / dm
                - (sm * centre).cos() * (sm * half).sin() / sm)
    }
}

pub fn gap_overlap(n: usize, m: usize, t: f64, eps: f64, d: f64) -> Result<f64, ModeError> {
    if n == 0 || m == 0 {
        return Err(ModeError::ZeroIndex);
    }
    check_slit(t, eps, d)?;
    Ok(gap_raw(n, m, t, eps, d))
}

pub fn wall_overlap(n: usize, m: usize, t: f64, eps: f64, d: f64) -> Result<f64, ModeError> {
    let delta = if n == m { 1.0 } else { 0.0 };
    Ok(delta - gap_overlap(n, m, t, eps, d)?)
}

/// Composite five-point Gauss–Legendre approximation of the gap overlap.
///
/// `n_points` nodes are spread over `n_points / 5` equal panels; the error
/// decreases as `h^10` in the panel width `h`.
pub fn gap_overlap_quadrature(
    n: usize,
    m: usize,
    t: f64,
    eps: f64,
    d: f64,
    n_points: usize,
) -> Result<f64, ModeError> {
    if n == 0 || m == 0 {
        return Err(ModeError::ZeroIndex);
    }
    if n_points < 2 {
        return Err(ModeError::TooFewPoints);
    }
    check_slit(t, eps, d)?;
    if eps == 0.0 {
        return Ok(0.0);
    }
    let (order, panels) = if n_points < 5 { (n_points, 1) } else { (5, n_points / 5) };
    let edges: Vec<f64> = (0..=panels).map(|i| t + eps * i as f64 / panels as f64).collect();
    let (x, w) = quadrature::composite(&edges, order);
    Ok(x.iter().zip(&w).map(|(&x, &w)| w * sine(n, x, d) * sine(m, x, d)).sum())
}

/// Gap overlaps of one direction for modes `1..=n`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GapMatrix {
    pub dir: Direction,
    pub slit: f64,
    n: usize,
    gap: Vec<f64>,
}

impl GapMatrix {
    pub fn new(dir: Direction, eps: f64, n: usize) -> Result<Self, ModeError> {
        let slit = dir.slit(eps);
        check_slit(dir.offset, slit, dir.width)?;
        let mut gap = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = gap_raw(i + 1, j + 1, dir.offset, slit, dir.width);
                gap[i * n + j] = v;
                gap[j * n + i] = v;
            }
        }
        Ok(GapMatrix { dir, slit, n, gap })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Gap overlap of modes `i+1` and `j+1`.
    #[inline]
    pub fn gap(&self, i: usize, j: usize) -> f64 {
        self.gap[i * self.n + j]
    }

    /// Wall overlap of modes `i+1` and `j+1`.
    #[inline]
    pub fn wall(&self, i: usize, j: usize) -> f64 {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta - self.gap(i, j)
    }
}

/// Per-direction overlap matrices for one aperture size, truncated at `n` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapTable {
    pub eps: f64,
    pub n: usize,
    pub dirs: Vec<GapMatrix>,
}

impl OverlapTable {
    pub fn new(g: &Geometry, eps: f64, n: usize) -> Result<Self, ModeError> {
        let g = g.validate(eps)?;
        let dirs = g
            .directions()
            .into_iter()
            .map(|dir| GapMatrix::new(dir, eps, n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(OverlapTable { eps, n, dirs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mode_values() {
        let d = 0.7;
        assert!((mode_value(1, d / 2.0, d).unwrap() - (2.0 / d).sqrt()).abs() < 1e-15);
        assert!(mode_value(2, d / 2.0, d).unwrap().abs() < 1e-15);
        let direct = (2.0f64 / 0.7).sqrt() * (3.0 * PI * 0.2 / 0.7).sin();
        assert_eq!(mode_value(3, 0.2, 0.7).unwrap(), direct);
        assert!(mode_value(1, 0.8, 0.7).is_err());
        assert!(mode_value(0, 0.1, 0.7).is_err());
    }

    #[test]
    fn trivial_overlaps() {
        for n in 1..6 {
            for m in 1..6 {
                assert_eq!(gap_overlap(n, m, 0.3, 0.0, 0.7).unwrap(), 0.0);
                let delta = if n == m { 1.0 } else { 0.0 };
                assert_eq!(wall_overlap(n, m, 0.3, 0.0, 0.7).unwrap(), delta);
            }
        }
        assert!((gap_overlap(1, 1, 0.0, 0.7, 0.7).unwrap() - 1.0).abs() < 1e-15);
        for n in 1..6 {
            assert!(wall_overlap(n, n, 0.0, 0.7, 0.7).unwrap().abs() < 1e-15);
        }
        assert!(gap_overlap(1, 1, 0.65, 0.1, 0.7).is_err());
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let q = gap_overlap_quadrature(1, 2, 0.3, 0.05, 0.7, 200).unwrap();
        assert!((gap_overlap(1, 2, 0.3, 0.05, 0.7).unwrap() - q).abs() < 1e-12);
        let q = gap_overlap_quadrature(1, 1, 0.3, 0.05, 0.7, 200).unwrap();
        assert!((wall_overlap(1, 1, 0.3, 0.05, 0.7).unwrap() - (1.0 - q)).abs() < 1e-12);
        for n in 1..=50 {
            for m in 1..=50 {
                let exact = gap_overlap(n, m, 0.3, 0.05, 0.7).unwrap();
                let q = gap_overlap_quadrature(n, m, 0.3, 0.05, 0.7, 200).unwrap();
                assert!((exact - q).abs() < 1e-12, "{n} {m} {exact} {q}");
            }
        }
    }

    #[test]
    fn quadrature_order() {
        let exact = gap_overlap(4, 7, 0.05, 0.43, 0.7).unwrap();
        let e1 = (gap_overlap_quadrature(4, 7, 0.05, 0.43, 0.7, 10).unwrap() - exact).abs();
        let e2 = (gap_overlap_quadrature(4, 7, 0.05, 0.43, 0.7, 20).unwrap() - exact).abs();
        let observed = (e1 / e2).log2();
        assert!((observed - 10.0).abs() < 1.0, "order {observed} ({e1} {e2})");
    }

    #[test]
    fn table_is_symmetric_complement() {
        let g = Geometry::strip(1.0, 0.7, 0.3);
        let t = OverlapTable::new(&g, 0.035, 40).unwrap();
        let m = &t.dirs[0];
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(m.gap(i, j), m.gap(j, i));
                let delta = if i == j { 1.0 } else { 0.0 };
                assert!((m.gap(i, j) + m.wall(i, j) - delta).abs() < 1e-14);
                assert!(m.wall(i, j).abs() <= 1.0);
            }
        }
    }

    /// `||Gbar Gbar - Gbar||_max` of the size-`n` truncation, over the leading
    /// `block x block` entries. The slit projector is idempotent only in the limit.
    fn idempotency_defect(n: usize, block: usize) -> f64 {
        let g = GapMatrix::new(Direction { width: 0.7, offset: 0.3, ratio: 1.0 }, 0.05, n).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..block {
            for j in 0..block {
                let sq: f64 = (0..n).map(|k| g.gap(i, k) * g.gap(k, j)).sum();
                worst = worst.max((sq - g.gap(i, j)).abs());
            }
        }
        worst
    }

    #[test]
    fn projector_idempotency_improves() {
        let sizes = [25, 50, 100, 200];
        let lead: Vec<f64> = sizes.iter().map(|&n| idempotency_defect(n, 25)).collect();
        assert!(lead.windows(2).all(|w| w[1] < w[0]), "{lead:?}");
        // the full truncation keeps an edge defect near the last modes
        let full: Vec<f64> = sizes.iter().map(|&n| idempotency_defect(n, n)).collect();
        assert!(full.iter().all(|&v| v < 0.05), "{full:?}");
    }

    #[test]
    fn flat_index_is_row_major() {
        assert_eq!(ModeIndex::Plane(1, 1).flat(24), Some(0));
        assert_eq!(ModeIndex::Plane(2, 3).flat(24), Some(26));
        assert_eq!(ModeIndex::Line(5).flat(4), None);
    }

    proptest! {
        #[test]
        fn complement_and_symmetry(n in 1usize..80, m in 1usize..80, tf in 0.0f64..0.9, ef in 0.0f64..0.1) {
            let d = 0.7;
            let t = tf * d;
            let eps = ef * (d - t);
            let g = gap_overlap(n, m, t, eps, d).unwrap();
            let w = wall_overlap(n, m, t, eps, d).unwrap();
            let delta = if n == m { 1.0 } else { 0.0 };
            prop_assert!((g + w - delta).abs() < 1e-14);
            prop_assert_eq!(g, gap_overlap(m, n, t, eps, d).unwrap());
        }

        #[test]
        fn off_diagonal_bound(n in 1usize..80, m in 1usize..80, tf in 0.0f64..0.9, ef in 0.0f64..0.2) {
            prop_assume!(n != m);
            let d = 0.7;
            let t = tf * d;
            let eps = ef * (d - t);
            let g = gap_overlap(n, m, t, eps, d).unwrap().abs();
            let (nf, mf) = (n as f64, m as f64);
            let bound = (2.0 * eps / d).min(2.0 / PI * (1.0 / (nf - mf).abs() + 1.0 / (nf + mf)));
            prop_assert!(g <= bound + 1e-15, "{} > {}", g, bound);
        }
    }
}
