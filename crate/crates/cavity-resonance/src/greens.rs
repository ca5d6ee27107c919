//! Longitudinal Green factors of the half-strip behind the wall and the
//! Riemann-sheet bookkeeping of the channel square roots.
//!
//! Each transverse channel with threshold `c` carries `tau = sqrt(z - c)`.
//! On the physical sheet `Im tau > 0`. On the continued sheet the root is
//! the analytic continuation of the physical one across the cut `(c, inf)`
//! from above, which is the principal root: `Re tau > 0`, and in the lower
//! half-plane `Im tau < 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Below this value of `|tau * d1|` the removable singularity is evaluated by series.
pub const SERIES_RADIUS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sheet {
    Physical,
    Continued,
}

/// Per-channel sheet flags, in the same order as the threshold list they were built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetChoice {
    pub flags: Vec<Sheet>,
}

impl SheetChoice {
    pub fn all_physical(n: usize) -> Self {
        SheetChoice { flags: vec![Sheet::Physical; n] }
    }

    pub fn get(&self, j: usize) -> Sheet {
        self.flags[j]
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Relative tolerance for treating a threshold as coincident with `xi`.
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// Channels below `xi` are continued, channels above are physical; a channel
/// sitting on `xi` is continued iff `re_delta_sign > 0`.
pub fn sheet_assignment(xi: f64, thresholds: &[f64], re_delta_sign: i8) -> SheetChoice {
    let flags = thresholds
        .iter()
        .map(|&c| {
            if (c - xi).abs() <= COINCIDENCE_TOL * xi.abs().max(1.0) {
                if re_delta_sign > 0 {
                    Sheet::Continued
                } else {
                    Sheet::Physical
                }
            } else if c < xi {
                Sheet::Continued
            } else {
                Sheet::Physical
            }
        })
        .collect();
    SheetChoice { flags }
}

/// Channel wavenumber `sqrt(z - c)` on the requested sheet.
///
/// On the cut of the physical sheet (`z` real, `z > c`) the limit from
/// `Im z -> 0+` is returned, i.e. the positive root.
pub fn tau(z: Complex64, c: f64, sheet: Sheet) -> Complex64 {
    let r = (z - c).sqrt();
    match sheet {
        Sheet::Physical => {
            if r.im < 0.0 {
                -r
            } else {
                r
            }
        }
        Sheet::Continued => {
            if r.re < 0.0 {
                -r
            } else {
                r
            }
        }
    }
}

fn i() -> Complex64 {
    Complex64::new(0.0, 1.0)
}

/// `(exp(2 i d1 tau) - 1) / (i tau)`.
pub fn green_wall_tau(t: Complex64, d1: f64) -> Complex64 {
    if (t * d1).norm() < SERIES_RADIUS {
        // sum_{n>=1} (2 i d1)^n tau^(n-1) / (n! i)
        let x = 2.0 * i() * d1;
        let mut term = x / i();
        let mut sum = term;
        for n in 2..=6 {
            term = term * x * t / n as f64;
            sum += term;
        }
        sum
    } else {
        ((2.0 * i() * d1 * t).exp() - 1.0) / (i() * t)
    }
}

/// Wall value of the longitudinal Green factor of channel `c`.
pub fn green_wall(z: Complex64, c: f64, sheet: Sheet, d1: f64) -> Complex64 {
    green_wall_tau(tau(z, c, sheet), d1)
}

/// z-derivative of [`green_wall`] on the same sheet.
pub fn green_wall_dz(z: Complex64, c: f64, sheet: Sheet, d1: f64) -> Complex64 {
    let t = tau(z, c, sheet);
    if (t * d1).norm() < SERIES_RADIUS {
        // G = sum_{n>=1} a_n tau^(n-1), a_n = (2 i d1)^n / (n! i); dG/dz = G'(tau) / (2 tau)
        let x = 2.0 * i() * d1;
        let mut a = Complex64::new(2.0 * d1, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        for n in 2..=7 {
            a = a * x / n as f64;
            sum += a * (n - 1) as f64 * t.powi(n - 3) / 2.0;
        }
        sum
    } else {
        let e = (2.0 * i() * d1 * t).exp();
        d1 * e / (t * t) + i() * (e - 1.0) / (2.0 * t * t * t)
    }
}

/// Green factor between longitudinal positions `x1` and `y1` (both >= 0).
pub fn green_segment(z: Complex64, c: f64, sheet: Sheet, x1: f64, y1: f64) -> Complex64 {
    let t = tau(z, c, sheet);
    let p = x1 + y1;
    let q = (x1 - y1).abs();
    if (t * p).norm() < SERIES_RADIUS {
        // sum_{n>=1} (i tau)^(n-1) (p^n - q^n) / n!
        let it = i() * t;
        let mut sum = Complex64::new(0.0, 0.0);
        let mut factor = Complex64::new(1.0, 0.0);
        let mut fact = 1.0;
        for n in 1..=6 {
            fact *= n as f64;
            sum += factor * (p.powi(n) - q.powi(n)) / fact;
            factor *= it;
        }
        sum
    } else {
        ((i() * t * p).exp() - (i() * t * q).exp()) / (i() * t)
    }
}

/// A channel's Green factor together with the data it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenFactor {
    pub z: Complex64,
    pub c: f64,
    pub sheet: Sheet,
    pub tau: Complex64,
    pub value: Complex64,
}

impl GreenFactor {
    pub fn new(z: Complex64, c: f64, sheet: Sheet, d1: f64) -> Self {
        let t = tau(z, c, sheet);
        GreenFactor { z, c, sheet, tau: t, value: green_wall_tau(t, d1) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Plain power series of `(exp(2 i d1 tau) - 1)/(i tau)` with many terms.
    fn series_many(t: Complex64, d1: f64) -> Complex64 {
        let x = 2.0 * c(0.0, 1.0) * d1 * t;
        let mut term = c(1.0, 0.0);
        let mut sum = c(0.0, 0.0);
        for n in 1..120 {
            term = term * x / n as f64;
            sum += term;
        }
        sum / (c(0.0, 1.0) * t)
    }

    #[test]
    fn sheets_follow_thresholds() {
        let s = sheet_assignment(3.0408 * PI * PI, &[2.0408 * PI * PI, 8.1633 * PI * PI], 0);
        assert_eq!(s.flags, vec![Sheet::Continued, Sheet::Physical]);
        let s = sheet_assignment(1.0, &[2.0, 3.0], 0);
        assert_eq!(s.flags, vec![Sheet::Physical, Sheet::Physical]);
        assert_eq!(sheet_assignment(2.0, &[2.0], 1).flags, vec![Sheet::Continued]);
        assert_eq!(sheet_assignment(2.0, &[2.0], -1).flags, vec![Sheet::Physical]);
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau(c(3.0, 0.0), 2.0, Sheet::Physical), c(1.0, 0.0));
        assert!((tau(c(1.0, 0.0), 2.0, Sheet::Physical) - c(0.0, 1.0)).norm() < 1e-15);
        assert!((tau(c(1.0, -0.0), 2.0, Sheet::Physical) - c(0.0, 1.0)).norm() < 1e-15);
        let z = c(3.0, -0.01);
        let cont = tau(z, 2.0, Sheet::Continued);
        let phys = tau(z, 2.0, Sheet::Physical);
        assert!(cont.im < 0.0);
        assert_eq!(cont, -phys);
    }

    #[test]
    fn continued_sheet_is_analytic_across_the_cut() {
        // approaching the cut from above on the physical sheet and from below on
        // the continued sheet gives the same value
        let above = tau(c(3.0, 1e-12), 2.0, Sheet::Physical);
        let below = tau(c(3.0, -1e-12), 2.0, Sheet::Continued);
        assert!((above - below).norm() < 1e-11);
    }

    #[test]
    fn wall_factor_values() {
        let (d1, d2) = (1.0, 0.7);
        let ck = (PI / d2).powi(2);
        let xi = (PI / d1).powi(2) + ck;
        assert!(green_wall(c(xi, 0.0), ck, Sheet::Continued, d1).norm() < 1e-15);
        for l in 1..5 {
            let xi = (PI * l as f64 / d1).powi(2) + ck;
            assert!(green_wall(c(xi, 0.0), ck, Sheet::Continued, d1).norm() < 1e-14);
        }
        assert!((green_wall(c(2.0, 0.0), 2.0, Sheet::Physical, d1) - 2.0 * d1).norm() < 1e-15);
        let g = green_wall(c(2.0 + 1e-12, 0.0), 2.0, Sheet::Physical, 1.3);
        assert!((g - 2.6).norm() < 1e-5);
        let z = c(5.0, 0.1);
        let t = tau(z, 2.0, Sheet::Physical);
        assert!((green_wall(z, 2.0, Sheet::Physical, 1.0) - series_many(t, 1.0)).norm() < 1e-12);
    }

    fn fd(z: Complex64, cc: f64, s: Sheet, d1: f64, h: f64) -> Complex64 {
        (green_wall(z + h, cc, s, d1) - green_wall(z - h, cc, s, d1)) / (2.0 * h)
    }

    #[test]
    fn derivative_matches_differences() {
        let z = c(30.0, -0.3);
        for s in [Sheet::Physical, Sheet::Continued] {
            let d = green_wall_dz(z, 20.1, s, 1.0);
            assert!((d - fd(z, 20.1, s, 1.0, 1e-5)).norm() <= 1e-6 * d.norm());
        }
    }

    #[test]
    fn derivative_at_embedded_level() {
        let (d1, d2) = (1.0, 0.7);
        let ck = (PI / d2).powi(2);
        for l in 1..4 {
            let lf = l as f64;
            let xi = (PI * lf / d1).powi(2) + ck;
            let expected = d1.powi(3) / (PI * lf).powi(2);
            for s in [Sheet::Physical, Sheet::Continued] {
                let d = green_wall_dz(c(xi, 0.0), ck, s, d1);
                assert!((d - expected).norm() < 1e-13 * expected, "{l} {d}");
                let f = fd(c(xi, 0.0), ck, s, d1, 1e-5);
                assert!((d - f).norm() < 1e-6 * expected);
            }
        }
    }

    #[test]
    fn derivative_series_branch() {
        for &off in &[3e-9, 1e-9] {
            let z = c(2.0 + off, -off);
            let d = green_wall_dz(z, 2.0, Sheet::Physical, 1.0);
            assert!((tau(z, 2.0, Sheet::Physical)).norm() < SERIES_RADIUS);
            // five-point differences on a scale well below |z - c|
            let h = off * 0.02;
            let gw = |s: f64| green_wall(z + s * h, 2.0, Sheet::Physical, 1.0);
            let f = (gw(-2.0) - 8.0 * gw(-1.0) + 8.0 * gw(1.0) - gw(2.0)) / (12.0 * h);
            assert!((d - f).norm() <= 1e-5 * d.norm(), "{d} {f}");
        }
    }

    #[test]
    fn segment_values() {
        let z = c(25.0, -0.2);
        let cc = 20.0;
        for s in [Sheet::Physical, Sheet::Continued] {
            assert!((green_segment(z, cc, s, 1.0, 1.0) - green_wall(z, cc, s, 1.0)).norm() < 1e-14);
            assert!(green_segment(z, cc, s, 0.0, 0.7).norm() < 1e-15);
        }
        let (d1, d2) = (1.0, 0.7);
        let ck = (PI / d2).powi(2);
        for l in 1..4 {
            let lf = l as f64;
            let xi = (PI * lf / d1).powi(2) + ck;
            for &x1 in &[0.13, 0.5, 0.77] {
                let g = green_segment(c(xi, 0.0), ck, Sheet::Continued, x1, d1);
                let expected = 2.0 * d1 / (PI * lf) * (PI * lf).cos() * (PI * lf * x1 / d1).sin();
                assert!((g - expected).norm() < 1e-14, "{g} {expected}");
            }
        }
        let tiny = green_segment(c(20.0 + 1e-14, 0.0), 20.0, Sheet::Physical, 0.3, 0.5);
        assert!((tiny - 0.6).norm() < 1e-6);
    }

    #[test]
    fn green_factor_bundles_values() {
        let f = GreenFactor::new(c(25.0, -0.1), 20.0, Sheet::Continued, 1.0);
        assert!(f.tau.im < 0.0);
        assert_eq!(f.value, green_wall(f.z, f.c, f.sheet, 1.0));
    }

    #[test]
    fn continuity_on_a_circle_around_the_level() {
        let (d1, d2) = (1.0, 0.7);
        let ck = (PI / d2).powi(2);
        let xi = (PI / d1).powi(2) + ck;
        let s = sheet_assignment(xi, &[ck], 0).get(0);
        let r = 0.5;
        let n = 400;
        let step = 2.0 * PI * r / n as f64;
        let mut prev = green_wall(c(xi + r, 0.0), ck, s, d1);
        for k in 1..=n {
            let th = 2.0 * PI * k as f64 / n as f64;
            let z = c(xi + r * th.cos(), r * th.sin());
            let g = green_wall(z, ck, s, d1);
            let bound = green_wall_dz(z, ck, s, d1).norm() * step;
            assert!((g - prev).norm() <= 10.0 * bound + 1e-14, "jump at {th}");
            prev = g;
        }
    }

    proptest! {
        #[test]
        fn schwarz_reflection_below_thresholds(re in -50.0f64..19.0, im in -5.0f64..5.0, cc in 20.0f64..80.0, d1 in 0.5f64..2.0) {
            let z = c(re, im);
            let a = green_wall(z.conj(), cc, Sheet::Physical, d1);
            let b = green_wall(z, cc, Sheet::Physical, d1).conj();
            prop_assert!((a - b).norm() <= 1e-13 * (1.0 + b.norm()));
        }

        #[test]
        fn series_agrees_with_formula(r in 1e-5f64..1e-3, th in 0.0f64..(2.0 * PI), d1 in 0.5f64..2.0) {
            let t = Complex64::from_polar(r / d1, th);
            let direct = ((2.0 * c(0.0, 1.0) * d1 * t).exp() - 1.0) / (c(0.0, 1.0) * t);
            let x = 2.0 * c(0.0, 1.0) * d1;
            let mut term = x / c(0.0, 1.0);
            let mut sum = term;
            for n in 2..=6 {
                term = term * x * t / n as f64;
                sum += term;
            }
            prop_assert!((direct - sum).norm() <= 1e-10 * sum.norm());
        }

        #[test]
        fn derivative_fd_random(re in 15.0f64..60.0, im in -3.0f64..-0.05, cc in 1.0f64..50.0, cont in proptest::bool::ANY) {
            let s = if cont { Sheet::Continued } else { Sheet::Physical };
            let z = c(re, im);
            prop_assume!((z - cc).norm() > 0.1);
            let d = green_wall_dz(z, cc, s, 1.0);
            prop_assert!((d - fd(z, cc, s, 1.0, 1e-5)).norm() <= 1e-6 * d.norm().max(1e-3));
        }
    }
}
