//! Composite Gauss-Legendre quadrature. Nodes are computed once per order
//! by Newton iteration on the Legendre recurrence and cached.

use std::sync::OnceLock;

/// Nodes and weights on [-1, 1] for fixed order 32.
fn gl32() -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    CACHE.get_or_init(|| gauss_legendre_nodes(32))
}

/// Legendre polynomial P_n and derivative P_n' at x via the three-term
/// recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton from Chebyshev guesses.
pub fn gauss_legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Integrate f over [a, b] with `panels` composite GL-32 panels.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let (nodes, weights) = gl32();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            acc += w * f(mid + half * x);
        }
        total += acc * half;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_are_symmetric_and_weights_sum_to_two() {
        let (nodes, weights) = gauss_legendre_nodes(32);
        let ws: f64 = weights.iter().sum();
        assert!((ws - 2.0).abs() < 1e-14);
        for i in 0..16 {
            assert!((nodes[i] + nodes[31 - i]).abs() < 1e-14);
        }
    }

    #[test]
    fn integrates_polynomials_exactly() {
        // degree 63 is exact for GL-32
        let val = integrate(|x| x.powi(10), -1.0, 1.0, 1);
        assert!((val - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn integrates_gaussian_density() {
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let val = integrate(|x| inv_sqrt_2pi * (-0.5 * x * x).exp(), -10.0, 10.0, 20);
        assert!((val - 1.0).abs() < 1e-14);
    }
}
