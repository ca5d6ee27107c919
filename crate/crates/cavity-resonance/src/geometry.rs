//! Waveguide, cavity and aperture configuration.
//!
//! A [`Geometry`] fixes the cavity depth `d1`, the transverse cross-section and
//! the aperture offsets. The aperture size `eps` is not stored here: it is a
//! per-call parameter so that a single geometry serves a whole sweep.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("{0} must be finite")]
    NotFinite(&'static str),
    #[error("aperture exceeds wall: {0}")]
    ApertureExceedsWall(&'static str),
    #[error("scale factor must be positive, got {0}")]
    BadScale(f64),
}

/// Two-dimensional strip: cavity `[0,d1] x [0,d2]`, slit `[t, t+eps]` on the wall `x1 = d1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub d1: f64,
    pub d2: f64,
    pub t: f64,
}

/// Three-dimensional duct of cross-section `d2 x d3`; the opening is the
/// rectangle `[t2, t2+eps] x [t3, t3+a*eps]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Duct {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub t2: f64,
    pub t3: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dimension")]
pub enum Geometry {
    #[serde(rename = "2")]
    Strip(Strip),
    #[serde(rename = "3")]
    Duct(Duct),
}

/// One transverse direction of the wall: width, slit offset and the ratio of
/// the slit length to `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub width: f64,
    pub offset: f64,
    pub ratio: f64,
}

impl Direction {
    pub fn slit(&self, eps: f64) -> f64 {
        self.ratio * eps
    }
}

impl Strip {
    pub const DEFAULT: Strip = Strip { d1: 1.0, d2: 0.7, t: 0.3 };
}

impl Duct {
    pub const DEFAULT: Duct = Duct { d1: 1.0, d2: 0.7, d3: 0.9, t2: 0.3, t3: 0.35, a: 1.0 };
}

fn positive(name: &'static str, v: f64) -> Result<(), GeometryError> {
    if !v.is_finite() {
        Err(GeometryError::NotFinite(name))
    } else if v <= 0.0 {
        Err(GeometryError::NonPositive(name))
    } else {
        Ok(())
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<(), GeometryError> {
    if !v.is_finite() {
        Err(GeometryError::NotFinite(name))
    } else if v < 0.0 {
        Err(GeometryError::Negative(name))
    } else {
        Ok(())
    }
}

impl Geometry {
    pub fn strip(d1: f64, d2: f64, t: f64) -> Self {
        Geometry::Strip(Strip { d1, d2, t })
    }

    pub fn dimension(&self) -> usize {
        match self {
            Geometry::Strip(_) => 2,
            Geometry::Duct(_) => 3,
        }
    }

    pub fn d1(&self) -> f64 {
        match self {
            Geometry::Strip(s) => s.d1,
            Geometry::Duct(d) => d.d1,
        }
    }

    /// Transverse directions in basis order (`x2` first, then `x3`).
    pub fn directions(&self) -> Vec<Direction> {
        match self {
            Geometry::Strip(s) => vec![Direction { width: s.d2, offset: s.t, ratio: 1.0 }],
            Geometry::Duct(d) => vec![
                Direction { width: d.d2, offset: d.t2, ratio: 1.0 },
                Direction { width: d.d3, offset: d.t3, ratio: d.a },
            ],
        }
    }

    /// Aperture measure: `eps` in 2D, `a*eps^2` in 3D.
    pub fn aperture_volume(&self, eps: f64) -> f64 {
        match self {
            Geometry::Strip(_) => eps,
            Geometry::Duct(d) => d.a * eps * eps,
        }
    }

    /// Checks every invariant for all `eps` in `[0, eps_max]`.
    pub fn validate(self, eps_max: f64) -> Result<Self, GeometryError> {
        non_negative("eps_max", eps_max)?;
        match &self {
            Geometry::Strip(s) => {
                positive("d1", s.d1)?;
                positive("d2", s.d2)?;
                non_negative("t", s.t)?;
                if s.t + eps_max > s.d2 {
                    return Err(GeometryError::ApertureExceedsWall("t+ε > d2"));
                }
            }
            Geometry::Duct(d) => {
                positive("d1", d.d1)?;
                positive("d2", d.d2)?;
                positive("d3", d.d3)?;
                positive("a", d.a)?;
                non_negative("t2", d.t2)?;
                non_negative("t3", d.t3)?;
                if d.t2 + eps_max > d.d2 {
                    return Err(GeometryError::ApertureExceedsWall("t2+ε > d2"));
                }
                if d.t3 + d.a * eps_max > d.d3 {
                    return Err(GeometryError::ApertureExceedsWall("t3+a·ε > d3"));
                }
            }
        }
        Ok(self)
    }

    /// Multiplies every length by `s`; the ratio `a` is dimensionless and kept.
    pub fn rescale(&self, s: f64) -> Result<Self, GeometryError> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(GeometryError::BadScale(s));
        }
        Ok(match *self {
            Geometry::Strip(g) => Geometry::Strip(Strip { d1: g.d1 * s, d2: g.d2 * s, t: g.t * s }),
            Geometry::Duct(g) => Geometry::Duct(Duct {
                d1: g.d1 * s,
                d2: g.d2 * s,
                d3: g.d3 * s,
                t2: g.t2 * s,
                t3: g.t3 * s,
                a: g.a,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_strip_is_valid() {
        let g = Geometry::Strip(Strip::DEFAULT);
        assert_eq!(g.validate(0.1), Ok(g));
    }

    #[test]
    fn oversized_aperture_is_rejected() {
        let err = Geometry::strip(1.0, 0.7, 0.65).validate(0.1).unwrap_err();
        assert!(err.to_string().starts_with("aperture exceeds wall"), "{err}");
    }

    #[test]
    fn negative_depth_is_rejected() {
        let err = Geometry::strip(-1.0, 0.7, 0.3).validate(0.1).unwrap_err();
        assert_eq!(err.to_string(), "d1 must be positive");
    }

    #[test]
    fn duct_height_constraint_uses_ratio() {
        let mut d = Duct::DEFAULT;
        d.a = 6.0;
        let err = Geometry::Duct(d).validate(0.1).unwrap_err();
        assert_eq!(err, GeometryError::ApertureExceedsWall("t3+a·ε > d3"));
    }

    #[test]
    fn rescale_scales_lengths() {
        let g = Geometry::strip(1.0, 0.7, 0.3).rescale(2.0).unwrap();
        assert_eq!(g, Geometry::strip(2.0, 1.4, 0.6));
        let g0 = Geometry::strip(1.0, 0.7, 0.3);
        assert_eq!(g0.rescale(1.0).unwrap(), g0);
        let mut d = Duct::DEFAULT;
        d.a = 0.5;
        match Geometry::Duct(d).rescale(3.0).unwrap() {
            Geometry::Duct(r) => assert_eq!(r.a, 0.5),
            _ => unreachable!(),
        }
        assert!(g0.rescale(0.0).is_err());
        assert!(g0.rescale(-1.0).is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let g = Geometry::Duct(Duct::DEFAULT);
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("\"dimension\":\"3\""));
        let back: Geometry = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
    }

    fn ulps(a: f64, b: f64) -> u64 {
        (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
    }

    proptest! {
        #[test]
        fn rescale_roundtrip(d1 in 0.1f64..10.0, d2 in 0.1f64..10.0, tf in 0.0f64..0.9, s in 0.01f64..100.0) {
            let g = Geometry::strip(d1, d2, tf * d2);
            let back = g.rescale(s).unwrap().rescale(1.0 / s).unwrap();
            if let (Geometry::Strip(a), Geometry::Strip(b)) = (g, back) {
                prop_assert!(ulps(a.d1, b.d1) <= 1);
                prop_assert!(ulps(a.d2, b.d2) <= 1);
                prop_assert!(ulps(a.t, b.t) <= 1);
            }
        }

        #[test]
        fn validate_idempotent(d1 in -1.0f64..2.0, d2 in 0.1f64..2.0, t in 0.0f64..2.0, e in 0.0f64..0.5) {
            let g = Geometry::strip(d1, d2, t);
            let once = g.validate(e);
            if let Ok(v) = once {
                prop_assert_eq!(v.validate(e), Ok(v));
            }
        }
    }
}
