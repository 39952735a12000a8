//! Multivariate normal CDF by Genz's separation-of-variables transform,
//! integrated with a randomized Richtmyer (Kronecker) rule. Used for
//! dimensions >= 3; the randomization across shifted replicates gives an
//! honest standard-error estimate.

use super::normal::{phi_cdf, phi_inv};
use crate::error::{Error, Result};
use crate::linalg::cholesky_lower;
use crate::rng::Stream;

const SQRT_PRIMES: [f64; 8] = [2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0];

/// RNG purpose tag for QMC shifts.
const QMC_TAG: u64 = 0x716d_63; // "qmc"

pub struct QmcResult {
    pub value: f64,
    pub std_error: f64,
    pub points_used: usize,
}

/// P(G < b) componentwise for G ~ N(0, Sigma), Sigma positive definite.
///
/// `target_se` stops refinement early; the budget caps total points.
pub fn mvn_cdf_qmc(
    b: &[f64],
    sigma: &[Vec<f64>],
    target_se: f64,
    max_points: usize,
    seed: u64,
) -> Result<QmcResult> {
    let s = b.len();
    assert!(s >= 2, "use the closed forms below dimension 2");
    assert!(s <= 9, "dimension above supported prime table");
    let flat: Vec<f64> = sigma.iter().flatten().copied().collect();
    let chol = cholesky_lower(&flat, s, 1e-12)
        .ok_or_else(|| Error::InvalidCovariance("not positive semidefinite".into()))?;
    for j in 0..s {
        if chol[j * s + j] <= 0.0 {
            return Err(Error::InvalidCovariance(
                "covariance is rank-deficient beyond duplicate coordinates".into(),
            ));
        }
    }
    let lattice: Vec<f64> = SQRT_PRIMES[..s - 1].iter().map(|p| p.sqrt()).collect();
    let n_shifts = 12usize;
    let mut points_per_shift = 256usize;
    let mut result = estimate(b, &chol, s, &lattice, n_shifts, points_per_shift, seed);
    let mut total = n_shifts * points_per_shift;
    while result.1 > target_se && total * 2 <= max_points {
        points_per_shift *= 2;
        result = estimate(b, &chol, s, &lattice, n_shifts, points_per_shift, seed);
        total = n_shifts * points_per_shift;
    }
    Ok(QmcResult { value: result.0, std_error: result.1, points_used: total })
}

fn estimate(
    b: &[f64],
    chol: &[f64],
    s: usize,
    lattice: &[f64],
    n_shifts: usize,
    points: usize,
    seed: u64,
) -> (f64, f64) {
    let mut shift_means = Vec::with_capacity(n_shifts);
    let mut y = vec![0.0; s - 1];
    for shift_idx in 0..n_shifts {
        let mut stream = Stream::new(seed, &[QMC_TAG, shift_idx as u64]);
        let shifts: Vec<f64> = (0..s - 1).map(|_| stream.next_f64()).collect();
        let mut acc = 0.0;
        for j in 1..=points {
            // edge = conditional probability at the current level,
            // prob = product of edges so far
            let mut edge = phi_cdf(b[0] / chol[0]);
            let mut prob = edge;
            for i in 1..s {
                // Kronecker point component, shifted, with baker's fold
                let w = (j as f64 * lattice[i - 1] + shifts[i - 1]).fract();
                let w = (2.0 * w - 1.0).abs();
                // y_{i-1} uniform on the admissible tail of the previous level
                let u = (w * edge).clamp(1e-16, 1.0 - 1e-16);
                y[i - 1] = phi_inv(u);
                let mut t = b[i];
                for k in 0..i {
                    t -= chol[i * s + k] * y[k];
                }
                edge = phi_cdf(t / chol[i * s + i]);
                prob *= edge;
            }
            acc += prob;
        }
        shift_means.push(acc / points as f64);
    }
    let mean: f64 = shift_means.iter().sum::<f64>() / n_shifts as f64;
    let var: f64 =
        shift_means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n_shifts as f64 - 1.0);
    (mean, (var / n_shifts as f64).sqrt())
}
