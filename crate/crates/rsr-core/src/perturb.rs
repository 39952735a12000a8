//! Perturbation expansions: single-matrix eigenvalues to second order,
//! product expansion terms, product eigenvalues to O(eps^3), and the
//! first-order perturbed asymptotics of diagonal families.
//!
//! For integer-valued inputs the second-order product coefficients are
//! also computed in exact rational arithmetic, as a cross-check on the
//! floating-point path.

use crate::asymptotics::{summary_from_log_atoms, AsymptoticSummary};
use crate::error::{Error, Result};
use crate::family::{classify_structure, MatrixFamily, StructureTag, DEFAULT_ZERO_TOL};
use crate::linalg::{self, dot_t, C64, CMatrix};
use crate::sampler::Word;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

/// Relative eigenvalue-gap tolerance below which spectra count as
/// degenerate: second-order denominators amplify noise beyond usefulness.
pub const GAP_TOL: f64 = 1e-8;

/// A diagonal base family with one perturbation direction per member.
///
/// Delta norms are recorded but not forced to 1: the expansion formulas
/// are exact in whatever Delta is supplied, and the unit-norm convention
/// is the caller's choice of parameterization.
#[derive(Clone, Debug)]
pub struct PerturbedFamily {
    base: MatrixFamily,
    deltas: Vec<CMatrix>,
    pub epsilon: f64,
    delta_norms: Vec<f64>,
}

impl PerturbedFamily {
    pub fn new(base: MatrixFamily, deltas: Vec<CMatrix>, epsilon: f64) -> Result<Self> {
        let class = classify_structure(&base, DEFAULT_ZERO_TOL);
        if class.tag != StructureTag::Diagonal {
            return Err(Error::InvalidArgument(
                "perturbation base must be a diagonal family".into(),
            ));
        }
        if deltas.len() != base.size() {
            return Err(Error::InvalidArgument(format!(
                "{} deltas for {} base matrices",
                deltas.len(),
                base.size()
            )));
        }
        let d = base.dim();
        for (i, delta) in deltas.iter().enumerate() {
            if delta.dim() != d {
                return Err(Error::DimensionMismatch(format!("delta {} is not {d}x{d}", i + 1)));
            }
            if !delta.is_finite() {
                return Err(Error::InvalidArgument(format!("delta {} has non-finite entries", i + 1)));
            }
        }
        for (i, m) in base.matrices().iter().enumerate() {
            check_simple_nonzero(&m.diag(), i)?;
        }
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::InvalidArgument("epsilon must be nonnegative".into()));
        }
        let delta_norms = deltas.iter().map(|m| m.frobenius_norm()).collect();
        Ok(PerturbedFamily { base, deltas, epsilon, delta_norms })
    }

    /// Same, with every delta rescaled to unit Frobenius norm.
    pub fn with_normalized_deltas(
        base: MatrixFamily,
        deltas: Vec<CMatrix>,
        epsilon: f64,
    ) -> Result<Self> {
        let normalized = deltas
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                let norm = m.frobenius_norm();
                if norm == 0.0 {
                    Err(Error::InvalidArgument(format!("delta {} is zero", i + 1)))
                } else {
                    Ok(m.scale((1.0 / norm).into()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(base, normalized, epsilon)
    }

    pub fn base(&self) -> &MatrixFamily {
        &self.base
    }

    pub fn deltas(&self) -> &[CMatrix] {
        &self.deltas
    }

    pub fn delta_norms(&self) -> &[f64] {
        &self.delta_norms
    }

    /// eigenvalue of base matrix i at coordinate j
    fn lambda(&self, i: usize, j: usize) -> C64 {
        self.base.matrix(i)[(j, j)]
    }

    /// The assembled perturbed matrices A_i + eps Delta_i.
    pub fn assembled(&self, eps: f64) -> Vec<CMatrix> {
        self.base
            .matrices()
            .iter()
            .zip(&self.deltas)
            .map(|(a, d)| a.add(&d.scale(eps.into())))
            .collect()
    }
}

fn check_simple_nonzero(eigs: &[C64], matrix_index: usize) -> Result<()> {
    let moduli: Vec<f64> = eigs.iter().map(|z| z.norm()).collect();
    if moduli.iter().any(|&m| m == 0.0) {
        return Err(Error::DegenerateSpectrum(format!(
            "matrix {} has a zero eigenvalue",
            matrix_index + 1
        )));
    }
    let mut spread = 0.0f64;
    for a in 0..eigs.len() {
        for b in a + 1..eigs.len() {
            spread = spread.max((eigs[a] - eigs[b]).norm());
        }
    }
    for a in 0..eigs.len() {
        for b in a + 1..eigs.len() {
            if (eigs[a] - eigs[b]).norm() <= GAP_TOL * spread.max(moduli[a].max(moduli[b])) {
                return Err(Error::DegenerateSpectrum(format!(
                    "matrix {} has eigenvalues closer than the gap tolerance",
                    matrix_index + 1
                )));
            }
        }
    }
    Ok(())
}

/// Second-order expansion of one eigenvalue of A + eps Delta, plus the
/// log-modulus coefficients: log|lambda(eps)| = log|lambda| + eps l1
/// + eps^2 l2 + O(eps^3).
#[derive(Clone, Debug)]
pub struct SingleEigenExpansion {
    pub lambda0: C64,
    pub lambda1: C64,
    /// None when only first order was requested
    pub lambda2: Option<C64>,
    pub log_mod1: f64,
    pub log_mod2: Option<f64>,
}

/// Rayleigh-Schroedinger expansion of all eigenvalues of A + eps Delta for
/// a matrix A with simple nonzero eigenvalues.
///
/// Diagonal A uses the exact unit eigenvectors; otherwise left/right
/// eigenvectors come from the dense solver, normalized to u^T v = 1.
pub fn eigen_perturb_single(
    a: &CMatrix,
    delta: &CMatrix,
    order: u8,
) -> Result<Vec<SingleEigenExpansion>> {
    assert!(order == 1 || order == 2, "expansion order must be 1 or 2");
    let d = a.dim();
    let is_diag = (0..d).all(|i| (0..d).all(|j| i == j || a[(i, j)] == C64::new(0.0, 0.0)));
    let (values, rights, lefts): (Vec<C64>, Vec<Vec<C64>>, Vec<Vec<C64>>) = if is_diag {
        let values = a.diag();
        let units: Vec<Vec<C64>> = (0..d)
            .map(|k| {
                let mut e = vec![C64::new(0.0, 0.0); d];
                e[k] = C64::new(1.0, 0.0);
                e
            })
            .collect();
        (values, units.clone(), units)
    } else {
        let pairs = linalg::eigen_pairs(a)?;
        (
            pairs.iter().map(|p| p.value).collect(),
            pairs.iter().map(|p| p.right.clone()).collect(),
            pairs.iter().map(|p| p.left.clone()).collect(),
        )
    };
    check_simple_nonzero(&values, 0)?;
    let mut out = Vec::with_capacity(d);
    for k in 0..d {
        let dv: Vec<C64> = delta.mul_vec(&rights[k]);
        let lambda1 = dot_t(&lefts[k], &dv);
        let lambda2 = if order == 2 {
            // v1 = sum_{j != k} (u_j^T Delta v_k)/(lambda_k - lambda_j) v_j
            let mut v1 = vec![C64::new(0.0, 0.0); d];
            for j in 0..d {
                if j == k {
                    continue;
                }
                let coef = dot_t(&lefts[j], &dv) / (values[k] - values[j]);
                for (t, vj) in v1.iter_mut().zip(&rights[j]) {
                    *t += coef * vj;
                }
            }
            Some(dot_t(&lefts[k], &delta.mul_vec(&v1)))
        } else {
            None
        };
        let lam = values[k];
        let a_over = lambda1 / lam;
        let log_mod1 = a_over.re;
        let log_mod2 =
            lambda2.map(|b| (b / lam - (lambda1 * lambda1) / (lam * lam).scale(2.0)).re);
        out.push(SingleEigenExpansion { lambda0: lam, lambda1, lambda2, log_mod1, log_mod2 });
    }
    Ok(out)
}

/// The first three coefficient matrices of the product
/// prod_l (A_{s_l} + eps Delta^{(s_l)}) = Pi0 + eps Pi1 + eps^2 Pi2 + O(eps^3).
#[derive(Clone, Debug)]
pub struct ProductExpansion {
    pub pi0: CMatrix,
    pub pi1: CMatrix,
    pub pi2: CMatrix,
    pub word: Word,
}

/// Assemble Pi0, Pi1, Pi2 as exact finite sums with prefix/suffix caching:
/// Pi1 sums one delta insertion per position, Pi2 every ordered pair.
pub fn product_expansion_terms(pf: &PerturbedFamily, word: &Word) -> Result<ProductExpansion> {
    let n = word.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty word".into()));
    }
    if word.indices.iter().any(|&i| i >= pf.base.size()) {
        return Err(Error::InvalidArgument("word index out of range".into()));
    }
    let d = pf.base.dim();
    let idx = &word.indices;
    // prefixes[l] = A_{s_1} ... A_{s_l}, suffixes[l] = A_{s_l} ... A_{s_n}
    let mut prefixes: Vec<CMatrix> = Vec::with_capacity(n + 1);
    prefixes.push(CMatrix::identity(d));
    for &i in idx {
        prefixes.push(prefixes.last().unwrap().mul(pf.base.matrix(i)));
    }
    let mut suffixes: Vec<CMatrix> = vec![CMatrix::identity(d); n + 2];
    for l in (0..n).rev() {
        suffixes[l + 1] = pf.base.matrix(idx[l]).mul(&suffixes[l + 2]);
    }
    let pi0 = prefixes[n].clone();
    let mut pi1 = CMatrix::zeros(d);
    for l in 0..n {
        let term = prefixes[l].mul(&pf.deltas[idx[l]]).mul(&suffixes[l + 2]);
        pi1 = pi1.add(&term);
    }
    let mut pi2 = CMatrix::zeros(d);
    for p in 0..n {
        // left = A_{s_1}..A_{s_{p-1}} Delta^{(s_p)}, extended through the
        // middle factors as q advances
        let mut left = prefixes[p].mul(&pf.deltas[idx[p]]);
        for q in p + 1..n {
            let term = left.mul(&pf.deltas[idx[q]]).mul(&suffixes[q + 2]);
            pi2 = pi2.add(&term);
            left = left.mul(pf.base.matrix(idx[q]));
        }
    }
    Ok(ProductExpansion { pi0, pi1, pi2, word: word.clone() })
}

/// Second-order expansion of the i-th eigenvalue of the perturbed product.
#[derive(Clone, Debug)]
pub struct EigenExpansion {
    pub component: usize,
    pub lambda0: C64,
    pub lambda1: C64,
    pub lambda2: C64,
    /// exact rational coefficients when all inputs are (real) integers
    pub rational: Option<RationalExpansion>,
}

impl EigenExpansion {
    /// Evaluate the truncated expansion at eps.
    pub fn at(&self, eps: f64) -> C64 {
        self.lambda0 + self.lambda1.scale(eps) + self.lambda2.scale(eps * eps)
    }
}

/// Exact rational second-order coefficients (real integer inputs only).
#[derive(Clone, Debug, PartialEq)]
pub struct RationalExpansion {
    pub lambda0: BigRational,
    pub lambda1: BigRational,
    pub lambda2: BigRational,
}

impl RationalExpansion {
    pub fn display(&self) -> (String, String, String) {
        (
            self.lambda0.to_string(),
            self.lambda1.to_string(),
            self.lambda2.to_string(),
        )
    }
}

/// Eigenvalue expansion of the product along `word` at unperturbed
/// coordinate `i`: Lambda_i(eps) = L0 + eps L1 + eps^2 L2 + O(eps^3) with
/// L1 from the closed diagonal form and L2 combining the second-order
/// product term with the resolvent sum over the other coordinates.
pub fn eigenvalue_product_expansion(
    pf: &PerturbedFamily,
    word: &Word,
    component: usize,
) -> Result<EigenExpansion> {
    let d = pf.base.dim();
    if component >= d {
        return Err(Error::InvalidArgument(format!("component {component} out of range")));
    }
    let n = word.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty word".into()));
    }
    // unperturbed product eigenvalues: products of diagonal entries
    let lambda0: Vec<C64> = (0..d)
        .map(|j| word.indices.iter().map(|&i| pf.lambda(i, j)).product())
        .collect();
    let max_mod = lambda0.iter().map(|z| z.norm()).fold(0.0, f64::max);
    for j in 0..d {
        if j != component && (lambda0[component] - lambda0[j]).norm() <= 1e-10 * max_mod {
            return Err(Error::DegenerateSpectrum(format!(
                "unperturbed product eigenvalues {component} and {j} coincide for this word"
            )));
        }
    }
    let expansion = product_expansion_terms(pf, word)?;
    // closed diagonal form for the first order
    let lambda1: C64 = lambda0[component]
        * word
            .indices
            .iter()
            .map(|&i| pf.deltas[i][(component, component)] / pf.lambda(i, component))
            .sum::<C64>();
    let mut lambda2 = expansion.pi2[(component, component)];
    for j in 0..d {
        if j == component {
            continue;
        }
        lambda2 += expansion.pi1[(j, component)] * expansion.pi1[(component, j)]
            / (lambda0[component] - lambda0[j]);
    }
    let rational = rational_expansion(pf, &word.indices, component);
    Ok(EigenExpansion { component, lambda0: lambda0[component], lambda1, lambda2, rational })
}

/// Exact eigenvalues of the assembled perturbed product, for residual
/// studies against the expansion.
pub fn exact_product_eigenvalues(pf: &PerturbedFamily, word: &Word, eps: f64) -> Result<Vec<C64>> {
    let mats = pf.assembled(eps);
    let mut prod = CMatrix::identity(pf.base.dim());
    for &i in &word.indices {
        prod = prod.mul(&mats[i]);
    }
    linalg::eigenvalues(&prod)
}

fn to_big_integer(z: C64) -> Option<BigInt> {
    if z.im != 0.0 || z.re.fract() != 0.0 || z.re.abs() > 1e15 {
        return None;
    }
    Some(BigInt::from(z.re as i64))
}

fn rational_matrix(m: &CMatrix) -> Option<Vec<Vec<BigRational>>> {
    let d = m.dim();
    let mut out = vec![vec![BigRational::zero(); d]; d];
    for i in 0..d {
        for j in 0..d {
            out[i][j] = BigRational::from_integer(to_big_integer(m[(i, j)])?);
        }
    }
    Some(out)
}

/// Exact rational evaluation of (Lambda0, Lambda1, Lambda2) from the closed
/// diagonal-base formulas, when base and deltas are real integer matrices.
fn rational_expansion(
    pf: &PerturbedFamily,
    indices: &[usize],
    component: usize,
) -> Option<RationalExpansion> {
    let d = pf.base.dim();
    let n = indices.len();
    let bases: Vec<Vec<Vec<BigRational>>> =
        pf.base.matrices().iter().map(rational_matrix).collect::<Option<_>>()?;
    let deltas: Vec<Vec<Vec<BigRational>>> =
        pf.deltas.iter().map(rational_matrix).collect::<Option<_>>()?;
    let lam = |i: usize, j: usize| -> BigRational { bases[i][j][j].clone() };
    // partial products Lambda_j^{(a..b)} over word positions [a, b)
    let partial = |j: usize, a: usize, b: usize| -> BigRational {
        let mut acc = BigRational::from_integer(BigInt::from(1));
        for &i in &indices[a..b] {
            acc *= lam(i, j);
        }
        acc
    };
    let lambda0: Vec<BigRational> = (0..d).map(|j| partial(j, 0, n)).collect();
    // first order, closed diagonal form
    let mut l1 = BigRational::zero();
    for (l, &i) in indices.iter().enumerate() {
        let _ = l;
        l1 += deltas[i][component][component].clone() / lam(i, component);
    }
    let lambda1 = lambda0[component].clone() * l1;
    // off-diagonal first-order entries needed for the resolvent term
    let pi1_entry = |row: usize, col: usize| -> BigRational {
        let mut acc = BigRational::zero();
        for (l, &i) in indices.iter().enumerate() {
            acc += partial(row, 0, l)
                * deltas[i][row][col].clone()
                * partial(col, l + 1, n);
        }
        acc
    };
    // second-order diagonal entry
    let mut pi2_ii = BigRational::zero();
    for p in 0..n {
        for q in p + 1..n {
            for r in 0..d {
                let f = deltas[indices[p]][component][r].clone()
                    * deltas[indices[q]][r][component].clone();
                if f.is_zero() {
                    continue;
                }
                pi2_ii += partial(component, 0, p)
                    * f
                    * partial(r, p + 1, q)
                    * partial(component, q + 1, n);
            }
        }
    }
    let mut lambda2 = pi2_ii;
    for j in 0..d {
        if j == component {
            continue;
        }
        let denom = lambda0[component].clone() - lambda0[j].clone();
        if denom.is_zero() {
            return None;
        }
        lambda2 += pi1_entry(j, component) * pi1_entry(component, j) / denom;
    }
    Some(RationalExpansion { lambda0: lambda0[component].clone(), lambda1, lambda2 })
}

/// Perturbed asymptotics: the first-order-corrected log atoms
/// log|lambda_j^(i)| + eps Re(Delta_jj^(i)/lambda_j^(i)) pushed through the
/// same summary computation as the unperturbed theory, plus a validity
/// bound on eps.
#[derive(Clone, Debug)]
pub struct PerturbedAsymptotics {
    pub summary: AsymptoticSummary,
    pub epsilon: f64,
    /// largest eps for which (a) per-matrix eigenvalue gaps exceed 4 eps
    /// and (b) the maximizer set matches the unperturbed one
    pub epsilon_max: f64,
}

pub fn perturbed_asymptotics(pf: &PerturbedFamily) -> Result<PerturbedAsymptotics> {
    let d = pf.base.dim();
    let m = pf.base.size();
    let eps = pf.epsilon;
    // first-order atom corrections c[j][i] = Re(Delta_jj / lambda_j)
    let mut base_logs = vec![vec![0.0; m]; d];
    let mut slopes = vec![vec![0.0; m]; d];
    for i in 0..m {
        for j in 0..d {
            let lam = pf.lambda(i, j);
            base_logs[j][i] = lam.norm().ln();
            slopes[j][i] = (pf.deltas[i][(j, j)] / lam).re;
        }
    }
    let weights = pf.base.weights();
    let atoms: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..m).map(|i| base_logs[j][i] + eps * slopes[j][i]).collect())
        .collect();
    let summary = summary_from_log_atoms(&atoms, weights, None);
    let unperturbed = summary_from_log_atoms(&base_logs, weights, None);
    if summary.maximizers != unperturbed.maximizers {
        return Err(Error::RegimeChange(format!(
            "maximizer set changed from {:?} to {:?} at eps = {eps}",
            unperturbed.maximizers, summary.maximizers
        )));
    }
    // (a) eigenvalue gaps of each base matrix must exceed 4 eps
    let mut gap_min = f64::INFINITY;
    for mat in pf.base.matrices() {
        let diag = mat.diag();
        for a in 0..d {
            for b in a + 1..d {
                gap_min = gap_min.min((diag[a] - diag[b]).norm());
            }
        }
    }
    let bound_gap = if gap_min.is_finite() { gap_min / 4.0 } else { f64::INFINITY };
    // (b) maximizer-set stability under the linear atom drift
    let mu_slope: Vec<f64> = (0..d)
        .map(|j| (0..m).map(|i| weights[i] * slopes[j][i]).sum())
        .collect();
    let max_set = &unperturbed.maximizers;
    let mut bound_j = f64::INFINITY;
    for j in 0..d {
        if max_set.contains(&j) {
            continue;
        }
        for &k in max_set {
            let dc = mu_slope[j] - mu_slope[k];
            if dc > 0.0 {
                bound_j = bound_j.min((unperturbed.mu[k] - unperturbed.mu[j]) / dc);
            }
        }
    }
    // ties inside J survive only while the linear drift stays inside the
    // tie tolerance
    if max_set.len() > 1 {
        let mut max_dc = 0.0f64;
        for &a in max_set {
            for &b in max_set {
                max_dc = max_dc.max((mu_slope[a] - mu_slope[b]).abs());
            }
        }
        if max_dc > 0.0 {
            bound_j = bound_j.min(unperturbed.tie_tolerance / max_dc);
        }
    }
    Ok(PerturbedAsymptotics { summary, epsilon: eps, epsilon_max: bound_gap.min(bound_j) })
}
