//! Closed-form asymptotics of the random spectral radius for structured
//! families: the limit `rho_inf`, per-coordinate growth rates, the
//! maximizer set J, the fluctuation covariance, and exact finite-n moments
//! in the aligned-dominance regime, with a brute-force enumeration oracle.

use crate::error::{Error, Result};
use crate::family::{MatrixFamily, SpectralProfile};
use crate::linalg::{self, symmetric_eigenvalues};
use crate::sampler::ScaledProduct;
use serde::Serialize;

/// Hard cap on brute-force enumeration.
pub const ENUMERATION_BUDGET: u128 = 1 << 24;

/// Limit behavior of `rho_n`: growth rates, maximizers, fluctuation scale.
///
/// `sigma_infinity` is present only when the maximizer set is a singleton;
/// with several maximizers the Gaussian constant is undefined and the
/// max-of-Gaussian law (see the gaussmax module) applies instead.
#[derive(Clone, Debug, Serialize)]
pub struct AsymptoticSummary {
    /// per-coordinate mean log growth, mu_j = sum_i p_i log |lambda_j^(i)|
    pub mu: Vec<f64>,
    /// exp(mu_j)
    pub rho_components: Vec<f64>,
    /// max_j exp(mu_j)
    pub rho_infinity: f64,
    /// coordinates attaining the maximum (0-based in memory; serialized
    /// 1-based to match the text interfaces)
    #[serde(serialize_with = "serialize_one_based")]
    pub maximizers: Vec<usize>,
    /// per-coordinate CLT scale, rho_j * sqrt(Var(log-modulus at j))
    pub sigma_components: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_infinity: Option<f64>,
    /// fluctuation covariance restricted to the maximizers
    pub covariance: Vec<Vec<f64>>,
    pub tie_tolerance: f64,
}

impl AsymptoticSummary {
    /// Coordinates outside J whose growth rate is within `5/sqrt(n)` of the
    /// maximum: at length n these still compete with the maximizers, so
    /// both limit laws are worth reporting.
    pub fn near_tie_components(&self, n: u64) -> Vec<usize> {
        let mu_star = self.mu[self.maximizers[0]];
        let band = 5.0 / (n as f64).sqrt();
        (0..self.mu.len())
            .filter(|j| !self.maximizers.contains(j) && mu_star - self.mu[*j] < band)
            .collect()
    }

    /// Smallest eigenvalue of the J-restricted covariance (PSD check).
    pub fn covariance_min_eigenvalue(&self) -> f64 {
        let s = self.maximizers.len();
        let flat: Vec<f64> = self.covariance.iter().flatten().copied().collect();
        symmetric_eigenvalues(&flat, s)[0]
    }
}

fn serialize_one_based<S: serde::Serializer>(
    indices: &[usize],
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    ser.collect_seq(indices.iter().map(|i| i + 1))
}

/// Default tie tolerance for the maximizer set at a given mu*.
pub fn default_tie_tolerance(mu_star: f64) -> f64 {
    1e-12 * mu_star.abs().max(1.0)
}

/// Asymptotic summary of a spectral profile under sampling weights.
/// Every profile entry must be strictly positive (logs are taken).
pub fn asymptotic_summary(
    profile: &SpectralProfile,
    weights: &[f64],
    tie_tol: Option<f64>,
) -> Result<AsymptoticSummary> {
    let logs = profile_logs(profile)?;
    Ok(summary_from_log_atoms(&logs, weights, tie_tol))
}

fn profile_logs(profile: &SpectralProfile) -> Result<Vec<Vec<f64>>> {
    let d = profile.components();
    let mut logs = Vec::with_capacity(d);
    for j in 0..d {
        let mut row = Vec::with_capacity(profile.family_size());
        for (i, &v) in profile.row(j).iter().enumerate() {
            if v <= 0.0 {
                return Err(Error::ZeroModulus { matrix: i + 1, component: j + 1 });
            }
            row.push(v.ln());
        }
        logs.push(row);
    }
    Ok(logs)
}

/// Core computation on per-coordinate log atoms: row j holds the log
/// moduli of coordinate j across the family. Shared with the perturbation
/// module, which feeds first-order-corrected atoms through the same path.
pub fn summary_from_log_atoms(
    logs: &[Vec<f64>],
    weights: &[f64],
    tie_tol: Option<f64>,
) -> AsymptoticSummary {
    let d = logs.len();
    let m = weights.len();
    assert!(logs.iter().all(|row| row.len() == m), "one atom per family member");
    let mu: Vec<f64> = logs
        .iter()
        .map(|row| row.iter().zip(weights).map(|(l, p)| p * l).sum())
        .collect();
    let mu_star = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tie_tolerance = tie_tol.unwrap_or_else(|| default_tie_tolerance(mu_star));
    let maximizers: Vec<usize> =
        (0..d).filter(|&j| mu[j] >= mu_star - tie_tolerance).collect();
    let rho_components: Vec<f64> = mu.iter().map(|m| m.exp()).collect();
    let rho_infinity = mu_star.exp();
    let sigma_components: Vec<f64> = (0..d)
        .map(|j| {
            let second: f64 = logs[j].iter().zip(weights).map(|(l, p)| p * l * l).sum();
            rho_components[j] * (second - mu[j] * mu[j]).max(0.0).sqrt()
        })
        .collect();
    let covariance: Vec<Vec<f64>> = maximizers
        .iter()
        .map(|&l| {
            maximizers
                .iter()
                .map(|&h| {
                    let cross: f64 =
                        (0..m).map(|i| weights[i] * logs[l][i] * logs[h][i]).sum();
                    cross - mu[l] * mu[h]
                })
                .collect()
        })
        .collect();
    let sigma_infinity = (maximizers.len() == 1).then(|| sigma_components[maximizers[0]]);
    AsymptoticSummary {
        mu,
        rho_components,
        rho_infinity,
        maximizers,
        sigma_components,
        sigma_infinity,
        covariance,
        tie_tolerance,
    }
}

/// Exact mean and variance of `rho_n` along a single dominant coordinate.
///
/// `moduli` is the profile row of that coordinate. The mean uses the power
/// sum `(sum_i p_i |lambda^(i)|^(1/n))^n`, algebraically equal to the full
/// multinomial expansion. The variance gap between the second-moment and
/// squared-mean power sums is evaluated through the pairwise identity
/// `sum p x^2 - (sum p x)^2 = sum_{i<j} p_i p_j (x_i - x_j)^2`, which is
/// free of the cancellation that the direct difference suffers.
pub fn exact_moments_aligned(moduli: &[f64], weights: &[f64], n: u64) -> Result<(f64, f64)> {
    if n < 1 {
        return Err(Error::InvalidArgument("product length n must be >= 1".into()));
    }
    if let Some(i) = moduli.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroModulus { matrix: i + 1, component: 1 });
    }
    let nf = n as f64;
    let shift = moduli.iter().map(|v| v.ln() / nf).fold(f64::NEG_INFINITY, f64::max);
    let x: Vec<f64> = moduli.iter().map(|v| (v.ln() / nf - shift).exp()).collect();
    let u: f64 = x.iter().zip(weights).map(|(x, p)| p * x).sum();
    let log_mean = nf * (shift + u.ln());
    let mean = log_mean.exp();
    let mut gap = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            gap += weights[i] * weights[j] * (x[i] - x[j]) * (x[i] - x[j]);
        }
    }
    let z = gap / (u * u);
    // Var = mean^2 [ (1 + z)^n - 1 ]
    let variance = (2.0 * log_mean).exp() * (nf * z.ln_1p()).exp_m1();
    Ok((mean, variance.max(0.0)))
}

/// Exact moments of `rho_n` by enumerating all `m^n` words, weighting each
/// by its sampling probability. Goes through the scaled-product and dense
/// eigensolver path regardless of family structure, which makes it an
/// oracle independent of the closed forms above.
pub fn brute_force_moments(family: &MatrixFamily, n: u64) -> Result<(f64, f64)> {
    if n < 1 {
        return Err(Error::InvalidArgument("product length n must be >= 1".into()));
    }
    let m = family.size() as u128;
    let words = m
        .checked_pow(n as u32)
        .filter(|w| *w <= ENUMERATION_BUDGET)
        .ok_or(Error::EnumerationBudget { words: u128::MAX, budget: ENUMERATION_BUDGET })?;
    let _ = words;
    // Moments accumulate around a shift (the first word's value) with
    // compensated summation: the raw E[X^2] - E[X]^2 form loses ~3 digits
    // to cancellation, which the 1e-12 oracle-equality contract cannot
    // afford.
    let mut shift = None;
    let mut sum1 = Kahan::default();
    let mut sum2 = Kahan::default();
    // depth-first over words, reusing prefix products
    let mut stack: Vec<(ScaledProduct, f64)> =
        vec![(ScaledProduct::identity(family.dim()), 1.0)];
    let mut word = vec![0usize; n as usize];
    let mut depth = 0usize;
    loop {
        if depth == n as usize {
            let (prod, prob) = stack.last().unwrap();
            let radius = linalg::spectral_radius(prod.unit_matrix())?;
            let rho_n = if radius > 0.0 {
                ((prod.log_scale() + radius.ln()) / n as f64).exp()
            } else {
                0.0
            };
            let c = *shift.get_or_insert(rho_n);
            sum1.add(prob * (rho_n - c));
            sum2.add(prob * (rho_n - c) * (rho_n - c));
            // backtrack to the next word
            loop {
                if depth == 0 {
                    let c = shift.unwrap_or(0.0);
                    let mean = c + sum1.value();
                    let variance = (sum2.value() - sum1.value() * sum1.value()).max(0.0);
                    return Ok((mean, variance));
                }
                depth -= 1;
                stack.pop();
                if word[depth] + 1 < family.size() {
                    word[depth] += 1;
                    break;
                }
                word[depth] = 0;
            }
        }
        let (prod, prob) = stack.last().unwrap();
        let next = prod.multiplied_by(family.matrix(word[depth]));
        let next_prob = prob * family.weights()[word[depth]];
        stack.push((next, next_prob));
        depth += 1;
    }
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}
