//! Dense nonsymmetric complex eigensolver for small matrices.
//!
//! Pipeline: Parlett-Reinsch balancing, Householder reduction to upper
//! Hessenberg form, then explicitly shifted QR iteration with Wilkinson
//! shifts (eigenvalues only). Eigenvectors, when requested, come from
//! inverse iteration on the shifted matrix, with left and right vectors
//! normalized to a bi-orthogonal system `u_k^T v_k = 1`.

use super::{dot_t, vec_norm, C64, CMatrix, LuFactors};
use crate::error::{Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Balance a matrix by diagonal similarity (powers of 2), equalizing row
/// and column norms. Eigenvalues are unchanged.
pub fn balance(a: &CMatrix) -> CMatrix {
    let d = a.dim();
    let mut m = a.clone();
    let radix = 2.0f64;
    loop {
        let mut converged = true;
        for i in 0..d {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..d {
                if j != i {
                    c += m[(j, i)].norm();
                    r += m[(i, j)].norm();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            while c < r / radix {
                c *= radix;
                r /= radix;
                f *= radix;
            }
            while c >= r * radix {
                c /= radix;
                r *= radix;
                f /= radix;
            }
            if c + r < 0.95 * s && f != 1.0 {
                converged = false;
                let inv = 1.0 / f;
                for j in 0..d {
                    m[(i, j)] = m[(i, j)].scale(inv);
                }
                for j in 0..d {
                    m[(j, i)] = m[(j, i)].scale(f);
                }
            }
        }
        if converged {
            return m;
        }
    }
}

/// Householder reduction to upper Hessenberg form (similarity transform).
fn hessenberg(a: &CMatrix) -> CMatrix {
    let d = a.dim();
    let mut h = a.clone();
    if d < 3 {
        return h;
    }
    for k in 0..d - 2 {
        // column k below the subdiagonal
        let mut x: Vec<C64> = (k + 1..d).map(|i| h[(i, k)]).collect();
        let xnorm = vec_norm(&x);
        if xnorm == 0.0 {
            continue;
        }
        let x0 = x[0];
        let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { C64::new(1.0, 0.0) };
        let alpha = -phase.scale(xnorm);
        x[0] -= alpha;
        let vnorm = vec_norm(&x);
        if vnorm <= f64::EPSILON * xnorm {
            continue;
        }
        let v: Vec<C64> = x.iter().map(|z| z.scale(1.0 / vnorm)).collect();
        // rows k+1..d: H <- H - 2 v (v^H H)
        for j in 0..d {
            let mut s = ZERO;
            for (t, vi) in v.iter().enumerate() {
                s += vi.conj() * h[(k + 1 + t, j)];
            }
            let s2 = s.scale(2.0);
            for (t, vi) in v.iter().enumerate() {
                let upd = vi * s2;
                h[(k + 1 + t, j)] -= upd;
            }
        }
        // cols k+1..d: H <- H - 2 (H v) v^H
        for i in 0..d {
            let mut s = ZERO;
            for (t, vi) in v.iter().enumerate() {
                s += h[(i, k + 1 + t)] * vi;
            }
            let s2 = s.scale(2.0);
            for (t, vi) in v.iter().enumerate() {
                let upd = s2 * vi.conj();
                h[(i, k + 1 + t)] -= upd;
            }
        }
        // enforce exact zeros below the subdiagonal in column k
        for i in k + 2..d {
            h[(i, k)] = ZERO;
        }
    }
    h
}

/// Unitary Givens rotation zeroing b in (a, b): returns (c, s) with
/// [c s; -conj(s) c] [a; b] = [r; 0], c real.
fn givens(a: C64, b: C64) -> (f64, C64) {
    if b == ZERO {
        return (1.0, ZERO);
    }
    if a == ZERO {
        return (0.0, b.conj() / b.norm());
    }
    let denom = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let c = a.norm() / denom;
    let s = (a / a.norm()) * b.conj().scale(1.0 / denom);
    (c, s)
}

/// Eigenvalues of a 2x2 complex block, stably: the larger root comes from
/// the quadratic formula, the smaller from det/larger.
fn eig2x2(a: C64, b: C64, c: C64, d: C64) -> (C64, C64) {
    let half_tr = (a + d).scale(0.5);
    let det = a * d - b * c;
    let disc = (half_tr * half_tr - det).sqrt();
    let r1 = half_tr + disc;
    let r2 = half_tr - disc;
    let big = if r1.norm() >= r2.norm() { r1 } else { r2 };
    if big.norm() == 0.0 {
        (half_tr, half_tr)
    } else {
        (big, det / big)
    }
}

/// Shifted QR iteration on an upper Hessenberg matrix, eigenvalues only.
fn qr_hessenberg_eigenvalues(mut h: CMatrix) -> Result<Vec<C64>> {
    let d = h.dim();
    let mut eig = vec![ZERO; d];
    if d == 0 {
        return Ok(eig);
    }
    let overall = h.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut hi = d - 1;
    let mut window_iters = 0usize;
    let mut total_iters = 0usize;
    let max_total = 60 * d;
    loop {
        // deflation scan within 0..=hi
        let mut lo = hi;
        while lo > 0 {
            let s = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            let s = if s == 0.0 { overall } else { s };
            if h[(lo, lo - 1)].norm() <= f64::EPSILON * s {
                h[(lo, lo - 1)] = ZERO;
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            eig[hi] = h[(hi, hi)];
            window_iters = 0;
            if hi == 0 {
                return Ok(eig);
            }
            hi -= 1;
            continue;
        }
        if lo + 1 == hi {
            let (l1, l2) = eig2x2(h[(lo, lo)], h[(lo, hi)], h[(hi, lo)], h[(hi, hi)]);
            eig[lo] = l1;
            eig[hi] = l2;
            window_iters = 0;
            if lo == 0 {
                return Ok(eig);
            }
            hi = lo - 1;
            continue;
        }
        if total_iters >= max_total {
            return Err(Error::EigenNonConvergence(total_iters));
        }
        total_iters += 1;
        window_iters += 1;
        let shift = if window_iters % 12 == 0 {
            // exceptional shift to break symmetric stalls
            C64::new(h[(hi, hi - 1)].norm() + h[(hi - 1, hi - 2)].norm(), 0.0)
        } else {
            let (l1, l2) = eig2x2(
                h[(hi - 1, hi - 1)],
                h[(hi - 1, hi)],
                h[(hi, hi - 1)],
                h[(hi, hi)],
            );
            let target = h[(hi, hi)];
            if (l1 - target).norm() <= (l2 - target).norm() {
                l1
            } else {
                l2
            }
        };
        for i in lo..=hi {
            h[(i, i)] -= shift;
        }
        // QR by Givens on the Hessenberg window, then RQ
        let mut rots: Vec<(f64, C64)> = Vec::with_capacity(hi - lo);
        for i in lo..hi {
            let (c, s) = givens(h[(i, i)], h[(i + 1, i)]);
            rots.push((c, s));
            for j in i..=hi {
                let hi_j = h[(i, j)];
                let hip_j = h[(i + 1, j)];
                h[(i, j)] = hi_j.scale(c) + s * hip_j;
                h[(i + 1, j)] = -s.conj() * hi_j + hip_j.scale(c);
            }
        }
        for (t, &(c, s)) in rots.iter().enumerate() {
            let i = lo + t;
            let rmax = (i + 2).min(hi);
            for r in lo..=rmax {
                let h_ri = h[(r, i)];
                let h_rip = h[(r, i + 1)];
                h[(r, i)] = h_ri.scale(c) + h_rip * s.conj();
                h[(r, i + 1)] = -h_ri * s + h_rip.scale(c);
            }
        }
        for i in lo..=hi {
            h[(i, i)] += shift;
        }
    }
}

/// All eigenvalues of a general complex matrix, in deflation order.
pub fn eigenvalues(a: &CMatrix) -> Result<Vec<C64>> {
    if a.dim() == 0 {
        return Ok(vec![]);
    }
    if a.dim() == 1 {
        return Ok(vec![a[(0, 0)]]);
    }
    let balanced = balance(a);
    let h = hessenberg(&balanced);
    qr_hessenberg_eigenvalues(h)
}

/// Spectral radius: the largest eigenvalue modulus.
pub fn spectral_radius(a: &CMatrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// One eigenvalue with its right and left eigenvectors, normalized so that
/// `u^T v = 1` (bilinear pairing, no conjugation).
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: C64,
    pub right: Vec<C64>,
    pub left: Vec<C64>,
    /// max of the right/left residual norms, relative to the matrix scale
    pub residual: f64,
}

fn inverse_iteration(a: &CMatrix, lambda: C64, seed_shift: usize) -> (Vec<C64>, f64) {
    let d = a.dim();
    let mut shifted = a.clone();
    for i in 0..d {
        shifted[(i, i)] -= lambda;
    }
    let lu = LuFactors::new(&shifted);
    // deterministic, non-symmetric start vector
    let mut v: Vec<C64> = (0..d)
        .map(|j| {
            let t = ((j + 1 + seed_shift) as f64) * 0.754_877_666_246_692_9;
            C64::new((t * std::f64::consts::TAU).cos(), (t * std::f64::consts::TAU).sin())
        })
        .collect();
    let nrm = vec_norm(&v);
    v.iter_mut().for_each(|z| *z = z.scale(1.0 / nrm));
    let scale = a.frobenius_norm().max(lambda.norm()).max(1e-300);
    let mut best_res = f64::INFINITY;
    let mut best_v = v.clone();
    for _ in 0..8 {
        let w = lu.solve(&v);
        let wn = vec_norm(&w);
        if !wn.is_finite() || wn == 0.0 {
            break;
        }
        v = w.iter().map(|z| z.scale(1.0 / wn)).collect();
        let av = a.mul_vec(&v);
        let res: Vec<C64> = av.iter().zip(&v).map(|(x, y)| x - y * lambda).collect();
        let r = vec_norm(&res) / scale;
        if r < best_res {
            best_res = r;
            best_v = v.clone();
        }
        if r < 1e-13 {
            break;
        }
    }
    (best_v, best_res)
}

/// Eigen-decomposition with bi-orthogonal left/right eigenvectors.
/// Requires well-separated (simple) eigenvalues; degenerate systems are
/// rejected because the normalization `u^T v = 1` breaks down there.
pub fn eigen_pairs(a: &CMatrix) -> Result<Vec<EigenPair>> {
    let d = a.dim();
    let values = eigenvalues(a)?;
    let at = a.transpose();
    let scale = a.frobenius_norm().max(1e-300);
    let mut pairs = Vec::with_capacity(d);
    for (k, &lambda) in values.iter().enumerate() {
        let mut right = None;
        let mut left = None;
        for attempt in 0..3 {
            let (v, rres) = inverse_iteration(a, lambda, k + attempt * 17);
            let (u, lres) = inverse_iteration(&at, lambda, k + attempt * 17 + 5);
            if rres < 1e-9 && lres < 1e-9 {
                right = Some((v, rres));
                left = Some((u, lres));
                break;
            }
            if attempt == 2 {
                right = Some((v, rres));
                left = Some((u, lres));
            }
        }
        let (v, rres) = right.unwrap();
        let (mut u, lres) = left.unwrap();
        let residual = rres.max(lres);
        if residual > 1e-8 {
            return Err(Error::DegenerateSpectrum(format!(
                "eigenvector residual {residual:.2e} for eigenvalue {lambda} (clustered spectrum?)"
            )));
        }
        let pairing = dot_t(&u, &v);
        if pairing.norm() < 1e-10 * vec_norm(&u) * vec_norm(&v) {
            return Err(Error::DegenerateSpectrum(format!(
                "left/right eigenvectors nearly orthogonal for eigenvalue {lambda}; \
                 cannot form a bi-orthogonal system"
            )));
        }
        let inv = C64::new(1.0, 0.0) / pairing;
        u.iter_mut().for_each(|z| *z *= inv);
        // one Rayleigh-quotient polish of the eigenvalue
        let av = a.mul_vec(&v);
        let value = dot_t(&u, &av);
        let value = if (value - lambda).norm() < 1e-6 * scale.max(lambda.norm()) {
            value
        } else {
            lambda
        };
        pairs.push(EigenPair { value, right: v, left: u, residual });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sorted_by_modulus(mut v: Vec<C64>) -> Vec<C64> {
        v.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
        v
    }

    #[test]
    fn diagonal_matrix_is_exact() {
        let a = CMatrix::diagonal(&[c(1.0, 0.0), c(2.0, 0.0), c(-3.0, 0.0)]);
        let eigs = sorted_by_modulus(eigenvalues(&a).unwrap());
        assert!((eigs[0] - c(-3.0, 0.0)).norm() < 1e-14);
        assert!((eigs[1] - c(2.0, 0.0)).norm() < 1e-14);
        assert!((eigs[2] - c(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn rotation_matrix_has_unit_modulus_pair() {
        // rotation by pi/2: eigenvalues +/- i
        let a = CMatrix::from_real_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]);
        let eigs = eigenvalues(&a).unwrap();
        for e in &eigs {
            assert!((e.norm() - 1.0).abs() < 1e-12);
            assert!(e.re.abs() < 1e-12);
        }
        assert!((eigs[0] + eigs[1]).norm() < 1e-12);
    }

    #[test]
    fn companion_matrix_roots() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
        let a = CMatrix::from_real_rows(&[
            vec![6.0, -11.0, 6.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ]);
        let eigs = sorted_by_modulus(eigenvalues(&a).unwrap());
        assert!((eigs[0] - c(3.0, 0.0)).norm() < 1e-10);
        assert!((eigs[1] - c(2.0, 0.0)).norm() < 1e-10);
        assert!((eigs[2] - c(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn similarity_conjugated_diagonal() {
        // V D V^-1 with unimodular V (exact integer inverse)
        let v = CMatrix::from_real_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![0.0, 1.0, 1.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let vinv = CMatrix::from_real_rows(&[
            vec![1.0, -1.0, 1.0],
            vec![0.0, 1.0, -1.0],
            vec![0.0, 0.0, 1.0],
        ]);
        let d = CMatrix::diagonal(&[c(0.5, 0.0), c(2.0, 1.0), c(-4.0, 0.0)]);
        let a = v.mul(&d).mul(&vinv);
        let eigs = sorted_by_modulus(eigenvalues(&a).unwrap());
        assert!((eigs[0] - c(-4.0, 0.0)).norm() < 1e-10);
        assert!((eigs[1] - c(2.0, 1.0)).norm() < 1e-10);
        assert!((eigs[2] - c(0.5, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn trace_and_determinant_invariants() {
        // pseudo-random but fixed 5x5 complex matrix
        let mut a = CMatrix::zeros(5);
        let mut state = 0x9e3779b97f4a7c15u64;
        for i in 0..5 {
            for j in 0..5 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let re = ((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let im = ((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
                a[(i, j)] = c(2.0 * re, 2.0 * im);
            }
        }
        let eigs = eigenvalues(&a).unwrap();
        let sum: C64 = eigs.iter().sum();
        let prod: C64 = eigs.iter().product();
        let det = LuFactors::new(&a).det();
        assert!((sum - a.trace()).norm() < 1e-10 * a.frobenius_norm());
        assert!((prod - det).norm() < 1e-10 * det.norm().max(1.0));
    }

    #[test]
    fn eigen_pairs_reconstruct_and_biorthogonal() {
        let a = CMatrix::from_real_rows(&[
            vec![4.0, 1.0, 0.0],
            vec![0.5, 2.0, 0.3],
            vec![0.1, 0.0, -1.0],
        ]);
        let pairs = eigen_pairs(&a).unwrap();
        for p in &pairs {
            let av = a.mul_vec(&p.right);
            let res: Vec<C64> = av.iter().zip(&p.right).map(|(x, y)| x - y * p.value).collect();
            assert!(vec_norm(&res) < 1e-9 * a.frobenius_norm());
            let pairing = dot_t(&p.left, &p.right);
            assert!((pairing - c(1.0, 0.0)).norm() < 1e-9);
        }
        // cross pairings vanish for simple spectra
        for (k, p) in pairs.iter().enumerate() {
            for (j, q) in pairs.iter().enumerate() {
                if k != j {
                    assert!(dot_t(&p.left, &q.right).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn spectral_radius_of_triangular_reads_diagonal() {
        let a = CMatrix::from_real_rows(&[vec![0.5, 100.0], vec![0.0, 0.25]]);
        assert!((spectral_radius(&a).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn conjugated_8x8_to_ten_digits() {
        // well-conditioned 8x8 with exactly known spectrum: V D V^-1 built
        // from a product of unimodular shears (exact integer inverse)
        let d = 8;
        let targets: Vec<C64> = (0..d)
            .map(|k| c(0.5 + 0.45 * k as f64, if k % 3 == 1 { 0.3 } else { -0.2 }))
            .collect();
        let mut v = CMatrix::identity(d);
        let mut vinv = CMatrix::identity(d);
        // apply shears E_{ij}(1): V <- V * S, Vinv <- S^-1 * Vinv
        let mut state = 0x1234_5678_9abc_def0u64;
        for _ in 0..12 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let i = (state >> 33) as usize % d;
            let j = (state >> 22) as usize % d;
            if i == j {
                continue;
            }
            let mut s = CMatrix::identity(d);
            s[(i, j)] = c(1.0, 0.0);
            let mut sinv = CMatrix::identity(d);
            sinv[(i, j)] = c(-1.0, 0.0);
            v = v.mul(&s);
            vinv = sinv.mul(&vinv);
        }
        let a = v.mul(&CMatrix::diagonal(&targets)).mul(&vinv);
        let mut eigs = eigenvalues(&a).unwrap();
        let mut expect = targets.clone();
        let key = |z: &C64| (z.re, z.im);
        eigs.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        expect.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
        for (e, t) in eigs.iter().zip(&expect) {
            assert!((e - t).norm() <= 1e-10 * t.norm(), "{e} vs {t}");
        }
    }

    #[test]
    fn badly_scaled_matrix_needs_balancing() {
        // eigenvalues 1 and 2 regardless of the wild off-diagonal scaling
        let a = CMatrix::from_real_rows(&[vec![1.0, 1e12], vec![1e-12 * 2.0 * 0.0, 2.0]]);
        let eigs = sorted_by_modulus(eigenvalues(&a).unwrap());
        assert!((eigs[0] - c(2.0, 0.0)).norm() < 1e-10);
        let b = CMatrix::from_real_rows(&[vec![1.0, 1e9], vec![1e-9, 2.0]]);
        let eigs = sorted_by_modulus(eigenvalues(&b).unwrap());
        // char poly: (1-x)(2-x) - 1 = x^2 - 3x + 1, roots (3 +/- sqrt(5))/2
        let r1 = (3.0 + 5.0f64.sqrt()) / 2.0;
        let r2 = (3.0 - 5.0f64.sqrt()) / 2.0;
        assert!((eigs[0] - c(r1, 0.0)).norm() < 1e-9);
        assert!((eigs[1] - c(r2, 0.0)).norm() < 1e-9);
    }
}
