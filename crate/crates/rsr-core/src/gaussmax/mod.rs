//! Distribution of the maximum component of a centered Gaussian vector:
//! the CDF `M_s(x; Sigma)`, its first three moments, and the constants
//! entering the multi-maximizer limit law.

mod bvn;
mod normal;
mod qmc;

pub use bvn::{bvn_cdf, bvnd};
pub use normal::{phi_cdf, phi_inv, phi_pdf, phi_sf};
pub use qmc::{mvn_cdf_qmc, QmcResult};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, quad, symmetric_eigenvalues};
use crate::rng::Stream;
use rayon::prelude::*;
use serde::Serialize;

const MC_TAG: u64 = 0x6d61_7863; // "maxc"

/// Covariance of the Gaussian vector whose maximum is studied.
#[derive(Clone, Debug)]
pub struct GaussMaxSpec {
    covariance: Vec<Vec<f64>>,
}

impl GaussMaxSpec {
    pub fn new(covariance: Vec<Vec<f64>>) -> Result<Self> {
        let s = covariance.len();
        if s == 0 || s > 8 {
            return Err(Error::InvalidCovariance(format!(
                "dimension {s} outside supported range 1..=8"
            )));
        }
        if covariance.iter().any(|row| row.len() != s) {
            return Err(Error::InvalidCovariance("matrix is not square".into()));
        }
        let scale = covariance
            .iter()
            .flatten()
            .fold(0.0f64, |a, &b| a.max(b.abs()))
            .max(1e-300);
        for i in 0..s {
            for j in 0..i {
                if (covariance[i][j] - covariance[j][i]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidCovariance(format!(
                        "asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        let flat: Vec<f64> = covariance.iter().flatten().copied().collect();
        let min_eig = symmetric_eigenvalues(&flat, s)[0];
        let trace: f64 = (0..s).map(|i| covariance[i][i]).sum();
        if min_eig < -1e-10 * trace.max(1e-300) {
            return Err(Error::InvalidCovariance(format!(
                "indefinite: min eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(GaussMaxSpec { covariance })
    }

    pub fn dim(&self) -> usize {
        self.covariance.len()
    }

    pub fn covariance(&self) -> &[Vec<f64>] {
        &self.covariance
    }

    fn std_devs(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.covariance[i][i].max(0.0).sqrt()).collect()
    }

    /// Drop coordinates that duplicate an earlier one (correlation 1 and
    /// equal variance): the max over identical Gaussians is one Gaussian.
    pub fn deduplicated(&self) -> GaussMaxSpec {
        let s = self.dim();
        let sd = self.std_devs();
        let mut keep: Vec<usize> = Vec::new();
        for i in 0..s {
            let dup = keep.iter().any(|&k| {
                let denom = sd[i] * sd[k];
                denom > 0.0
                    && (self.covariance[i][k] / denom - 1.0).abs() < 1e-12
                    && ((sd[i] - sd[k]) / sd[i].max(sd[k])).abs() < 1e-12
            });
            if !dup {
                keep.push(i);
            }
        }
        let covariance = keep
            .iter()
            .map(|&i| keep.iter().map(|&j| self.covariance[i][j]).collect())
            .collect();
        GaussMaxSpec { covariance }
    }
}

/// Options for the numeric CDF paths.
#[derive(Clone, Copy, Debug)]
pub struct MvnOptions {
    /// target standard error for the quasi-Monte Carlo path (s >= 3)
    pub target_se: f64,
    pub max_points: usize,
    pub seed: u64,
}

impl Default for MvnOptions {
    fn default() -> Self {
        MvnOptions { target_se: 1e-6, max_points: 1 << 22, seed: 0x6d766e }
    }
}

/// P(G_j < x_j for all j) for centered Gaussian G with covariance `sigma`.
/// Returns (probability, error estimate). Exact singular structure is
/// collapsed: zero-variance coordinates become indicator constraints and
/// perfectly positively correlated pairs merge into one coordinate with a
/// tightened limit.
pub fn mvn_cdf(x: &[f64], sigma: &[Vec<f64>], opts: MvnOptions) -> Result<(f64, f64)> {
    let spec = GaussMaxSpec::new(sigma.to_vec())?;
    let s = spec.dim();
    if x.len() != s {
        return Err(Error::InvalidArgument(format!(
            "{} limits for dimension {s}",
            x.len()
        )));
    }
    let sd = spec.std_devs();
    let trace: f64 = (0..s).map(|i| sigma[i][i]).sum();
    let tiny_var = 1e-14 * trace.max(1e-300);

    // active coordinates with possibly tightened limits
    let mut active: Vec<usize> = Vec::new();
    let mut limits: Vec<f64> = Vec::new();
    for i in 0..s {
        if sigma[i][i] <= tiny_var {
            // G_i is the constant 0
            if x[i] <= 0.0 {
                return Ok((0.0, 0.0));
            }
            continue;
        }
        let mut merged = false;
        for (slot, &k) in active.iter().enumerate() {
            let corr = sigma[i][k] / (sd[i] * sd[k]);
            if corr >= 1.0 - 1e-12 {
                // G_i = (sd_i/sd_k) G_k almost surely
                limits[slot] = limits[slot].min(x[i] * sd[k] / sd[i]);
                merged = true;
                break;
            }
            if corr <= -1.0 + 1e-12 {
                if active.len() == 1 && s == 2 {
                    // P(G < x_k sd_k, -c G < x_i) with c = sd_i/sd_k
                    let upper = phi_cdf(x[k] / sd[k]);
                    let lower = phi_cdf(-x[i] / sd[i]);
                    return Ok(((upper - lower).max(0.0), 1e-15));
                }
                return Err(Error::InvalidCovariance(
                    "perfect negative correlation in dimension > 2 is not supported".into(),
                ));
            }
        }
        if !merged {
            active.push(i);
            limits.push(x[i]);
        }
    }
    match active.len() {
        0 => Ok((1.0, 0.0)),
        1 => Ok((phi_cdf(limits[0] / sd[active[0]]), 1e-16)),
        2 => {
            let (i, j) = (active[0], active[1]);
            let corr = sigma[i][j] / (sd[i] * sd[j]);
            Ok((bvn_cdf(limits[0] / sd[i], limits[1] / sd[j], corr), 1e-14))
        }
        _ => {
            let sub: Vec<Vec<f64>> = active
                .iter()
                .map(|&i| active.iter().map(|&j| sigma[i][j]).collect())
                .collect();
            let r = qmc::mvn_cdf_qmc(&limits, &sub, opts.target_se, opts.max_points, opts.seed)?;
            Ok((r.value.clamp(0.0, 1.0), r.std_error))
        }
    }
}

/// CDF of the maximum component: M_s(x; Sigma) = P(all G_j < x).
pub fn max_gauss_cdf(x: f64, spec: &GaussMaxSpec) -> Result<f64> {
    let limits = vec![x; spec.dim()];
    mvn_cdf(&limits, &spec.covariance, MvnOptions::default()).map(|(p, _)| p)
}

/// How the moments were obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MomentMethod {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

/// First three moments of M = max_j G_j plus the derived variance terms
/// v0 = Var(M) and v1 = m3 - m1 m2.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GaussMaxMoments {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub v0: f64,
    pub v1: f64,
    pub method: MomentMethod,
    pub error_estimate: f64,
}

fn moments_from_raw(m1: f64, m2: f64, m3: f64, method: MomentMethod, err: f64) -> GaussMaxMoments {
    GaussMaxMoments { m1, m2, m3, v0: m2 - m1 * m1, v1: m3 - m1 * m2, method, error_estimate: err }
}

/// Density of max_j G_j by the conditional decomposition
/// f(x) = sum_j f_{G_j}(x) P(G_k <= x for k != j | G_j = x).
/// Supported for s <= 3 (general covariance) and any s with diagonal
/// covariance; callers guarantee the deduplicated, PD case.
fn max_density(spec: &GaussMaxSpec, x: f64) -> f64 {
    let s = spec.dim();
    let cov = &spec.covariance;
    let sd = spec.std_devs();
    let mut total = 0.0;
    for j in 0..s {
        let fj = phi_pdf(x / sd[j]) / sd[j];
        if fj == 0.0 {
            continue;
        }
        let others: Vec<usize> = (0..s).filter(|&k| k != j).collect();
        let cond = match others.len() {
            0 => 1.0,
            1 => {
                let k = others[0];
                let mean = cov[k][j] / cov[j][j] * x;
                let var = cov[k][k] - cov[k][j] * cov[k][j] / cov[j][j];
                if var <= 0.0 {
                    if x >= mean {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    phi_cdf((x - mean) / var.sqrt())
                }
            }
            2 => {
                let (k, l) = (others[0], others[1]);
                let mk = cov[k][j] / cov[j][j] * x;
                let ml = cov[l][j] / cov[j][j] * x;
                let vkk = cov[k][k] - cov[k][j] * cov[k][j] / cov[j][j];
                let vll = cov[l][l] - cov[l][j] * cov[l][j] / cov[j][j];
                let vkl = cov[k][l] - cov[k][j] * cov[l][j] / cov[j][j];
                let corr = vkl / (vkk * vll).sqrt();
                bvn_cdf(
                    (x - mk) / vkk.sqrt(),
                    (x - ml) / vll.sqrt(),
                    corr.clamp(-1.0, 1.0),
                )
            }
            _ => {
                // diagonal covariance only (enforced by the caller)
                others.iter().map(|&k| phi_cdf(x / sd[k])).product()
            }
        };
        total += fj * cond;
    }
    total
}

fn is_diagonal(cov: &[Vec<f64>]) -> bool {
    let s = cov.len();
    let scale = cov.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    (0..s).all(|i| (0..s).all(|j| i == j || cov[i][j].abs() <= 1e-14 * scale))
}

/// (variance, correlation) when the covariance is equicorrelated with a
/// common variance.
fn equicorrelated(cov: &[Vec<f64>]) -> Option<(f64, f64)> {
    let s = cov.len();
    let var = cov[0][0];
    if var <= 0.0 {
        return None;
    }
    for i in 0..s {
        if ((cov[i][i] - var) / var).abs() > 1e-12 {
            return None;
        }
    }
    if s == 1 {
        return Some((var, 0.0));
    }
    let rho = cov[0][1] / var;
    for i in 0..s {
        for j in 0..s {
            if i != j && (cov[i][j] / var - rho).abs() > 1e-12 {
                return None;
            }
        }
    }
    Some((var, rho))
}

fn quadrature_moments_from_density<F: Fn(f64) -> f64>(density: F, sd_max: f64) -> (f64, f64, f64) {
    let limit = 10.0 * sd_max;
    let panels = 64;
    let m1 = quad::integrate(|x| x * density(x), -limit, limit, panels);
    let m2 = quad::integrate(|x| x * x * density(x), -limit, limit, panels);
    let m3 = quad::integrate(|x| x * x * x * density(x), -limit, limit, panels);
    (m1, m2, m3)
}

/// Moments of the max of `s` i.i.d. standard normals by quadrature on the
/// closed density s phi(x) Phi(x)^(s-1).
fn iid_standard_max_moments(s: usize) -> (f64, f64, f64) {
    quadrature_moments_from_density(
        |x| s as f64 * phi_pdf(x) * phi_cdf(x).powi(s as i32 - 1),
        1.0,
    )
}

/// First three moments of the max component. Closed forms where the
/// covariance shape admits them, otherwise quadrature against the exact
/// density (s <= 3, diagonal, or equicorrelated shapes), otherwise Monte
/// Carlo with the default budget of 1e7 draws.
pub fn max_gauss_moments(spec: &GaussMaxSpec) -> Result<GaussMaxMoments> {
    let dedup = spec.deduplicated();
    let s = dedup.dim();
    let cov = &dedup.covariance;
    let sd = dedup.std_devs();
    let trace: f64 = (0..s).map(|i| cov[i][i]).sum();
    if trace <= 0.0 {
        // the zero vector: M = 0 almost surely
        return Ok(moments_from_raw(0.0, 0.0, 0.0, MomentMethod::ClosedForm, 0.0));
    }
    if sd.iter().any(|&v| v * v <= 1e-14 * trace) {
        return Err(Error::InvalidCovariance(
            "mixed zero- and positive-variance coordinates are not supported in moments".into(),
        ));
    }
    // exact singular leftovers (scaled duplicates) would break the density
    let flat: Vec<f64> = cov.iter().flatten().copied().collect();
    if symmetric_eigenvalues(&flat, s)[0] <= 1e-12 * trace {
        return Err(Error::InvalidCovariance(
            "covariance remains singular after removing duplicate coordinates".into(),
        ));
    }

    if s == 1 {
        let var = cov[0][0];
        return Ok(moments_from_raw(0.0, var, 0.0, MomentMethod::ClosedForm, 0.0));
    }

    if let Some((var, rho)) = equicorrelated(cov) {
        // G_j = sigma (sqrt(rho) Z + sqrt(1-rho) E_j) reduces the max to an
        // affine image of the i.i.d. case
        if rho >= 0.0 {
            let sigma = var.sqrt();
            let a = sigma * rho.sqrt();
            let b = sigma * (1.0 - rho).sqrt();
            let (w1, w2, w3) = iid_standard_max_moments(s);
            let m1 = b * w1;
            let m2 = a * a + b * b * w2;
            let m3 = b * b * b * w3 + 3.0 * a * a * b * w1;
            return Ok(moments_from_raw(m1, m2, m3, MomentMethod::ClosedForm, 1e-12));
        }
    }

    if s == 2 {
        let (v1v, v2v, c12) = (cov[0][0], cov[1][1], cov[0][1]);
        let theta2 = (v1v + v2v - 2.0 * c12).max(0.0);
        let m1 = (theta2 / (2.0 * std::f64::consts::PI)).sqrt();
        let m2 = 0.5 * (v1v + v2v);
        let spec2 = dedup.clone();
        let (_, _, m3) =
            quadrature_moments_from_density(move |x| max_density(&spec2, x), sd[0].max(sd[1]));
        return Ok(moments_from_raw(m1, m2, m3, MomentMethod::ClosedForm, 1e-12));
    }

    let quadrature_applicable = s <= 3 || is_diagonal(cov);
    if quadrature_applicable {
        let sd_max = sd.iter().cloned().fold(0.0, f64::max);
        let spec2 = dedup.clone();
        let (m1, m2, m3) =
            quadrature_moments_from_density(move |x| max_density(&spec2, x), sd_max);
        let mut out = moments_from_raw(m1, m2, m3, MomentMethod::Quadrature, 1e-12);
        // independent s=3: the paper's pairwise closed form for the mean
        if s == 3 && is_diagonal(cov) {
            let mut sum = 0.0;
            for i in 0..3 {
                for h in i + 1..3 {
                    sum += (cov[i][i] + cov[h][h]).sqrt();
                }
            }
            out.m1 = sum / (2.0 * (2.0 * std::f64::consts::PI).sqrt());
            out.v0 = out.m2 - out.m1 * out.m1;
            out.v1 = out.m3 - out.m1 * out.m2;
            out.method = MomentMethod::ClosedForm;
        }
        return Ok(out);
    }

    max_gauss_moments_mc(&dedup, 10_000_000, MvnOptions::default().seed)
}

/// Monte Carlo estimate of the max moments with reported standard error.
/// Deterministic in (seed, draws) and worker-count independent.
pub fn max_gauss_moments_mc(
    spec: &GaussMaxSpec,
    draws: usize,
    seed: u64,
) -> Result<GaussMaxMoments> {
    let dedup = spec.deduplicated();
    let s = dedup.dim();
    let flat: Vec<f64> = dedup.covariance.iter().flatten().copied().collect();
    let chol = cholesky_lower(&flat, s, 1e-12)
        .ok_or_else(|| Error::InvalidCovariance("not positive semidefinite".into()))?;
    const BATCH: usize = 8192;
    let n_batches = draws.div_ceil(BATCH);
    let sums: Vec<[f64; 5]> = (0..n_batches as u64)
        .into_par_iter()
        .map(|batch| {
            let mut stream = Stream::new(seed, &[MC_TAG, batch]);
            let lo = batch as usize * BATCH;
            let hi = ((batch as usize + 1) * BATCH).min(draws);
            let mut acc = [0.0f64; 5];
            let mut z = vec![0.0f64; s];
            for _ in lo..hi {
                for zj in z.iter_mut() {
                    *zj = stream.next_normal();
                }
                let mut m = f64::NEG_INFINITY;
                for i in 0..s {
                    let mut g = 0.0;
                    for k in 0..=i {
                        g += chol[i * s + k] * z[k];
                    }
                    m = m.max(g);
                }
                let m2 = m * m;
                let m3 = m2 * m;
                acc[0] += m;
                acc[1] += m2;
                acc[2] += m3;
                acc[3] += m2 * m2;
                acc[4] += m3 * m3;
            }
            acc
        })
        .collect();
    let mut tot = [0.0f64; 5];
    for b in &sums {
        for (t, v) in tot.iter_mut().zip(b) {
            *t += v;
        }
    }
    let n = draws as f64;
    let m1 = tot[0] / n;
    let m2 = tot[1] / n;
    let m3 = tot[2] / n;
    let se1 = ((tot[1] / n - m1 * m1).max(0.0) / n).sqrt();
    let se2 = ((tot[3] / n - m2 * m2).max(0.0) / n).sqrt();
    let se3 = ((tot[4] / n - m3 * m3).max(0.0) / n).sqrt();
    Ok(moments_from_raw(m1, m2, m3, MomentMethod::MonteCarlo, se1.max(se2).max(se3)))
}
