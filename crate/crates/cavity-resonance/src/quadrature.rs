//! Gauss–Legendre rules on intervals and composite panels.

use gauss_quad::GaussLegendre;

/// Nodes and weights of an `n`-point rule mapped to `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(n.try_into().expect("rule needs at least two nodes"));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.iter().map(|(x, w)| (mid + half * x, half * w)).unzip()
}

/// Concatenated rules on consecutive panels given by `edges`.
pub fn composite(edges: &[f64], order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(order * edges.len());
    let mut weights = Vec::with_capacity(order * edges.len());
    for pair in edges.windows(2) {
        let (x, w) = gauss_legendre(order, pair[0], pair[1]);
        nodes.extend(x);
        weights.extend(w);
    }
    (nodes, weights)
}

/// Rule on `[0, 1]` for integrands with a logarithmic singularity at 0:
/// panels shrink geometrically towards the origin.
pub fn graded_unit(levels: usize, ratio: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut edges = vec![0.0];
    for k in (1..=levels).rev() {
        edges.push(ratio.powi(k as i32));
    }
    edges.push(1.0);
    composite(&edges, order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(5, 1.0, 3.0);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(9)).sum();
        assert!((s - (3f64.powi(10) - 1.0) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn graded_rule_handles_log() {
        let (x, w) = graded_unit(24, 0.25, 20);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.ln()).sum();
        assert!((s + 1.0).abs() < 1e-13, "{s}");
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x.ln() * (3.0 * x).cos()).sum();
        let reference = -0.048199369893200359;
        assert!((s - reference).abs() < 1e-12, "{s}");
    }
}
