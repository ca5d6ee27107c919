//! Closed-cavity eigenvalues, transverse thresholds and open channels.

use crate::geometry::Geometry;
use crate::modes::ModeIndex;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative tolerance for grouping eigenvalues into one level.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// A cavity eigenmode: longitudinal number `l` and transverse index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CavityMode {
    pub l: usize,
    pub k: ModeIndex,
}

impl CavityMode {
    /// `[l, k]` in 2D, `[k1, k2, k3]` in 3D.
    pub fn tuple(&self) -> Vec<usize> {
        let mut v = vec![self.l];
        v.extend(self.k.components());
        v
    }

    pub fn from_tuple(t: &[usize]) -> Option<Self> {
        let (&l, rest) = t.split_first()?;
        if l == 0 {
            return None;
        }
        Some(CavityMode { l, k: ModeIndex::from_components(rest)? })
    }

    pub fn energy(&self, g: &Geometry) -> f64 {
        (PI * self.l as f64 / g.d1()).powi(2) + transverse_energy(g, self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedLevel {
    pub value: f64,
    pub indices: Vec<CavityMode>,
    pub multiplicity: usize,
    pub above_threshold: bool,
}

pub fn transverse_energy(g: &Geometry, k: ModeIndex) -> f64 {
    let dirs = g.directions();
    k.components()
        .iter()
        .zip(&dirs)
        .map(|(&n, dir)| (PI * n as f64 / dir.width).powi(2))
        .sum()
}

pub fn lowest_threshold(g: &Geometry) -> f64 {
    g.directions().iter().map(|d| (PI / d.width).powi(2)).sum()
}

/// All transverse indices with energy `<= e_max`, in basis order.
fn transverse_indices(g: &Geometry, e_max: f64) -> Vec<(ModeIndex, f64)> {
    let dirs = g.directions();
    let max_n = |w: f64, budget: f64| -> usize {
        if budget <= 0.0 {
            0
        } else {
            (budget.sqrt() * w / PI).floor() as usize + 1
        }
    };
    let mut out = Vec::new();
    match dirs.len() {
        1 => {
            for n in 1..=max_n(dirs[0].width, e_max) {
                let k = ModeIndex::Line(n);
                let e = transverse_energy(g, k);
                if e <= e_max {
                    out.push((k, e));
                }
            }
        }
        _ => {
            let e3_min = (PI / dirs[1].width).powi(2);
            for n2 in 1..=max_n(dirs[0].width, e_max - e3_min) {
                let e2 = (PI * n2 as f64 / dirs[0].width).powi(2);
                for n3 in 1..=max_n(dirs[1].width, e_max - e2) {
                    let k = ModeIndex::Plane(n2, n3);
                    let e = transverse_energy(g, k);
                    if e <= e_max {
                        out.push((k, e));
                    }
                }
            }
        }
    }
    out
}

/// Integer key `l^2 + k^2 (+ k3^2)` when all lengths coincide.
fn integer_key(g: &Geometry, m: &CavityMode) -> Option<u64> {
    let d1 = g.d1();
    if g.directions().iter().all(|d| d.width == d1) {
        Some(m.tuple().iter().map(|&n| (n * n) as u64).sum())
    } else {
        None
    }
}

/// Cavity levels up to `e_max`, grouped within [`DEGENERACY_TOL`], ascending.
pub fn enumerate_embedded(g: &Geometry, e_max: f64) -> Vec<EmbeddedLevel> {
    let d1 = g.d1();
    let floor = lowest_threshold(g);
    let mut modes: Vec<(f64, Option<u64>, CavityMode)> = Vec::new();
    let mut l = 1;
    loop {
        let el = (PI * l as f64 / d1).powi(2);
        if el > e_max {
            break;
        }
        for (k, _) in transverse_indices(g, e_max - el) {
            let m = CavityMode { l, k };
            let e = m.energy(g);
            if e <= e_max {
                modes.push((e, integer_key(g, &m), m));
            }
        }
        l += 1;
    }
    modes.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let mut levels: Vec<EmbeddedLevel> = Vec::new();
    let mut keys: Vec<Option<u64>> = Vec::new();
    for (e, key, m) in modes {
        let joins = match (levels.last(), keys.last()) {
            (Some(_), Some(&Some(prev))) if key.is_some() => key == Some(prev),
            (Some(last), _) => (e - last.value).abs() <= DEGENERACY_TOL * last.value,
            _ => false,
        };
        if joins {
            let last = levels.last_mut().unwrap();
            last.indices.push(m);
            last.multiplicity += 1;
        } else {
            let value = match key {
                Some(n) => (PI / d1).powi(2) * n as f64,
                None => e,
            };
            levels.push(EmbeddedLevel {
                value,
                indices: vec![m],
                multiplicity: 1,
                above_threshold: value >= floor,
            });
            keys.push(key);
        }
    }
    for level in &mut levels {
        level.indices.sort();
    }
    levels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenChannels {
    pub channels: Vec<ModeIndex>,
    pub threshold_coincidence: bool,
}

/// Channels with threshold strictly below `e`.
pub fn open_channels(g: &Geometry, e: f64) -> OpenChannels {
    let mut channels = Vec::new();
    let mut threshold_coincidence = false;
    for (k, c) in transverse_indices(g, e * (1.0 + 1e-12) + 1e-300) {
        if (c - e).abs() <= 1e-12 * e.abs() {
            threshold_coincidence = true;
        } else if c < e {
            channels.push(k);
        }
    }
    OpenChannels { channels, threshold_coincidence }
}

/// Distance from `xi` to the nearest transverse threshold.
pub fn threshold_clearance(g: &Geometry, xi: f64) -> f64 {
    let below = transverse_indices(g, xi.max(0.0))
        .into_iter()
        .map(|(_, c)| xi - c)
        .fold(f64::INFINITY, f64::min);
    // the nearest threshold above xi is found among indices up to a safe bound
    let bound = (xi.max(0.0).sqrt() + PI / smallest_width(g) * 2.0).powi(2);
    let above = transverse_indices(g, bound)
        .into_iter()
        .filter(|&(_, c)| c >= xi)
        .map(|(_, c)| c - xi)
        .fold(f64::INFINITY, f64::min);
    below.abs().min(above)
}

fn smallest_width(g: &Geometry) -> f64 {
    g.directions().iter().map(|d| d.width).fold(f64::INFINITY, f64::min)
}

/// Thresholds of the first `n` modes per direction in basis order (row-major in 3D).
pub fn basis_thresholds(g: &Geometry, n: usize) -> Vec<f64> {
    let dirs = g.directions();
    match dirs.len() {
        1 => (1..=n).map(|j| (PI * j as f64 / dirs[0].width).powi(2)).collect(),
        _ => {
            let mut v = Vec::with_capacity(n * n);
            for j2 in 1..=n {
                for j3 in 1..=n {
                    v.push(transverse_energy(g, ModeIndex::Plane(j2, j3)));
                }
            }
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Duct;
    use proptest::prelude::*;

    fn pi2() -> f64 {
        PI * PI
    }

    fn level_at(levels: &[EmbeddedLevel], v: f64) -> &EmbeddedLevel {
        levels.iter().find(|l| (l.value - v).abs() < 1e-9 * v).expect("level present")
    }

    #[test]
    fn unit_square_degeneracies() {
        let g = Geometry::strip(1.0, 1.0, 0.3);
        let levels = enumerate_embedded(&g, 400.0 * pi2());
        let l50 = level_at(&levels, 50.0 * pi2());
        assert_eq!(l50.multiplicity, 3);
        let idx: Vec<Vec<usize>> = l50.indices.iter().map(|m| m.tuple()).collect();
        assert_eq!(idx, vec![vec![1, 7], vec![5, 5], vec![7, 1]]);
        assert_eq!(level_at(&levels, 325.0 * pi2()).multiplicity, 6);
        let l2 = level_at(&levels, 2.0 * pi2());
        assert_eq!(l2.multiplicity, 1);
        assert_eq!(l2.indices[0].tuple(), vec![1, 1]);
    }

    #[test]
    fn levels_are_sorted_and_consistent() {
        let g = Geometry::strip(1.0, 0.7, 0.3);
        let levels = enumerate_embedded(&g, 500.0);
        assert!(levels.windows(2).all(|w| w[0].value < w[1].value));
        for lv in &levels {
            assert_eq!(lv.multiplicity, lv.indices.len());
            for m in &lv.indices {
                assert!((m.energy(&g) - lv.value).abs() <= 1e-12 * lv.value);
            }
            assert_eq!(lv.above_threshold, lv.value >= (PI / 0.7).powi(2));
        }
    }

    #[test]
    fn incommensurate_near_degeneracy_uses_tolerance() {
        let d2 = 1.0 + 1e-12;
        let g = Geometry::strip(1.0, d2, 0.3);
        let levels = enumerate_embedded(&g, 6.0 * pi2());
        assert_eq!(level_at(&levels, 5.0 * pi2()).multiplicity, 2);
    }

    #[test]
    fn three_dimensional_levels() {
        let g = Geometry::Duct(Duct { d1: 1.0, d2: 1.0, d3: 1.0, t2: 0.3, t3: 0.3, a: 1.0 });
        let levels = enumerate_embedded(&g, 12.0 * pi2());
        assert_eq!(level_at(&levels, 3.0 * pi2()).multiplicity, 1);
        assert_eq!(level_at(&levels, 6.0 * pi2()).multiplicity, 3);
        assert_eq!(level_at(&levels, 9.0 * pi2()).multiplicity, 3);
    }

    #[test]
    fn open_channels_default() {
        let g = Geometry::strip(1.0, 0.7, 0.3);
        let xi = pi2() * (1.0 + 1.0 / 0.49);
        assert_eq!(open_channels(&g, xi).channels, vec![ModeIndex::Line(1)]);
        assert!(open_channels(&g, 0.5 * pi2() / 0.49).channels.is_empty());
        let at = open_channels(&g, (PI / 0.7).powi(2));
        assert!(at.channels.is_empty() && at.threshold_coincidence);
    }

    #[test]
    fn clearance_examples() {
        let g = Geometry::strip(1.0, 0.7, 0.3);
        let xi = pi2() * (1.0 + 1.0 / 0.49);
        assert!((threshold_clearance(&g, xi) - pi2()).abs() < 1e-12);
        assert!(threshold_clearance(&g, (2.0 * PI / 0.7).powi(2)).abs() < 1e-12);
        let below = 5.0;
        assert!((threshold_clearance(&g, below) - ((PI / 0.7).powi(2) - below)).abs() < 1e-12);
    }

    #[test]
    fn equal_sides_give_double_levels() {
        let g = Geometry::strip(1.0, 1.0, 0.3);
        for lv in enumerate_embedded(&g, 200.0 * pi2()) {
            for m in &lv.indices {
                let k = m.k.components()[0];
                if m.l != k {
                    assert!(lv.multiplicity >= 2, "{:?}", lv);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn multiplicity_invariant_under_rescale(d1 in 0.5f64..2.0, d2 in 0.5f64..2.0, s in 0.3f64..3.0) {
            let g = Geometry::strip(d1, d2, 0.1);
            let e_max = 80.0 * pi2() / d1.min(d2).powi(2);
            let a = enumerate_embedded(&g, e_max);
            let b = enumerate_embedded(&g.rescale(s).unwrap(), e_max / (s * s) * (1.0 - 1e-9));
            let a: Vec<_> = a.into_iter().filter(|l| l.value < e_max * (1.0 - 1e-6)).collect();
            prop_assert!(b.len() >= a.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.multiplicity, y.multiplicity);
                prop_assert!((x.value / (s * s) - y.value).abs() <= 1e-10 * y.value);
            }
        }
    }
}
