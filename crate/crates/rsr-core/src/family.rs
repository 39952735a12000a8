//! Weighted finite families of complex square matrices: parsing,
//! validation, structural classification, and spectral profiles.

use crate::error::{Error, Result};
use crate::linalg::{self, C64, CMatrix};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Relative zero tolerance used by structure detection.
pub const DEFAULT_ZERO_TOL: f64 = 1e-14;

/// Weight sums must match 1 within this bound before renormalization.
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// A finite set of complex d x d matrices with sampling weights.
///
/// Immutable after construction; weights are renormalized to sum to 1
/// exactly (they must already sum to 1 within 1e-9 or construction fails).
#[derive(Clone, Debug)]
pub struct MatrixFamily {
    matrices: Vec<CMatrix>,
    weights: Vec<f64>,
    label: Option<String>,
    hash: String,
}

/// On-disk family document. Entries are `[re, im]` pairs; a matrix is a
/// list of `dimension` rows of `dimension` entries. Key order is fixed by
/// the struct, so serialization is byte-stable.
#[derive(Serialize, Deserialize)]
struct FamilyDoc {
    dimension: usize,
    matrices: Vec<Vec<Vec<[f64; 2]>>>,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

impl MatrixFamily {
    pub fn new(matrices: Vec<CMatrix>, weights: Vec<f64>, label: Option<String>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::Malformed("family must contain at least one matrix".into()));
        }
        let d = matrices[0].dim();
        if d == 0 {
            return Err(Error::Malformed("matrix dimension must be at least 1".into()));
        }
        for (i, m) in matrices.iter().enumerate() {
            if m.dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "matrix {} is {}x{}, expected {}x{}",
                    i + 1,
                    m.dim(),
                    m.dim(),
                    d,
                    d
                )));
            }
            if let Some((r, c)) = m.first_non_finite() {
                return Err(Error::NonFiniteEntry { matrix: i + 1, row: r + 1, col: c + 1 });
            }
        }
        if weights.len() != matrices.len() {
            return Err(Error::WeightSum(format!(
                "{} weights for {} matrices",
                weights.len(),
                matrices.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::WeightSum(format!("weight {w} is negative or non-finite")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSum(format!("weights sum to {sum}, expected 1")));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let hash = family_hash(&matrices, &weights);
        Ok(MatrixFamily { matrices, weights, label, hash })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: FamilyDoc =
            serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        let d = doc.dimension;
        let mut matrices = Vec::with_capacity(doc.matrices.len());
        for (i, rows) in doc.matrices.iter().enumerate() {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(Error::DimensionMismatch(format!(
                    "matrix {} does not match declared dimension {}",
                    i + 1,
                    d
                )));
            }
            let complex_rows: Vec<Vec<C64>> = rows
                .iter()
                .map(|r| r.iter().map(|&[re, im]| C64::new(re, im)).collect())
                .collect();
            matrices.push(CMatrix::from_rows(&complex_rows));
        }
        Self::new(matrices, doc.weights, doc.label)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Canonical document form (fixed key order, shortest round-trip floats).
    pub fn to_json_string(&self) -> String {
        let doc = FamilyDoc {
            dimension: self.dim(),
            matrices: self.matrices.iter().map(matrix_to_doc).collect(),
            weights: self.weights.clone(),
            label: self.label.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("family document serializes")
    }

    pub fn size(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].dim()
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, i: usize) -> &CMatrix {
        &self.matrices[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    /// Hex digest identifying the mathematical content (matrices + weights,
    /// label excluded); stable across platforms.
    pub fn hash_hex(&self) -> &str {
        &self.hash
    }

    /// Cumulative weights for categorical sampling.
    pub fn cumulative_weights(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut cum: Vec<f64> = self
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if let Some(last) = cum.last_mut() {
            *last = 1.0;
        }
        cum
    }
}

fn matrix_to_doc(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.dim())
        .map(|i| (0..m.dim()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn family_hash(matrices: &[CMatrix], weights: &[f64]) -> String {
    #[derive(Serialize)]
    struct HashDoc<'a> {
        dimension: usize,
        matrices: Vec<Vec<Vec<[f64; 2]>>>,
        weights: &'a [f64],
    }
    let doc = HashDoc {
        dimension: matrices[0].dim(),
        matrices: matrices.iter().map(matrix_to_doc).collect(),
        weights,
    };
    let bytes = serde_json::to_vec(&doc).expect("hash document serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Family-level matrix shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureTag {
    Diagonal,
    UpperTriangular,
    LowerTriangular,
    General,
}

impl StructureTag {
    pub fn is_structured(self) -> bool {
        self != StructureTag::General
    }
}

/// Result of structure detection. `demoted_from` is set when the family has
/// a triangular shape but a zero diagonal entry: it is then treated as
/// General so that downstream log-based closed forms refuse it loudly
/// instead of producing -inf.
#[derive(Clone, Debug, Serialize)]
pub struct StructureClass {
    pub tag: StructureTag,
    pub zero_tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub demoted_from: Option<StructureTag>,
}

/// Classify the family shape. An entry `a` of matrix `A` counts as zero iff
/// `|a| <= tol * ||A||_F`, so the classification is invariant under scaling
/// the family by a common nonzero factor.
pub fn classify_structure(family: &MatrixFamily, tol: f64) -> StructureClass {
    let d = family.dim();
    let mut all_upper = true;
    let mut all_lower = true;
    let mut zero_diag = false;
    for m in family.matrices() {
        let cutoff = tol * m.frobenius_norm();
        for i in 0..d {
            for j in 0..d {
                let is_zero = m[(i, j)].norm() <= cutoff;
                if i > j && !is_zero {
                    all_upper = false;
                }
                if i < j && !is_zero {
                    all_lower = false;
                }
                if i == j && is_zero {
                    zero_diag = true;
                }
            }
        }
    }
    let shape = match (all_upper, all_lower) {
        (true, true) => StructureTag::Diagonal,
        (true, false) => StructureTag::UpperTriangular,
        (false, true) => StructureTag::LowerTriangular,
        (false, false) => StructureTag::General,
    };
    if shape.is_structured() && zero_diag {
        StructureClass { tag: StructureTag::General, zero_tolerance: tol, demoted_from: Some(shape) }
    } else {
        StructureClass { tag: shape, zero_tolerance: tol, demoted_from: None }
    }
}

/// Average Frobenius norm of pairwise commutators,
/// `gamma = 2/(m(m-1)) * sum_{i<j} ||A_i A_j - A_j A_i||_F`; 0 when m = 1.
pub fn commutator_gap(family: &MatrixFamily) -> f64 {
    let m = family.size();
    if m < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += family.matrix(i).commutator(family.matrix(j)).frobenius_norm();
        }
    }
    total * 2.0 / (m as f64 * (m as f64 - 1.0))
}

/// Where the eigenvalue moduli of a profile came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProfileSource {
    DiagonalEntries,
    EigenSolve,
}

/// The d x m table of eigenvalue moduli: entry (j, i) is the modulus of the
/// j-th eigenvalue of family member i. For diagonal and triangular families
/// row j tracks the j-th diagonal coordinate across the family; for general
/// families each column is sorted descending and rows carry no cross-matrix
/// meaning (diagonal-surrogate diagnostics only).
#[derive(Clone, Debug, Serialize)]
pub struct SpectralProfile {
    pub moduli: Vec<Vec<f64>>,
    pub source: ProfileSource,
}

impl SpectralProfile {
    pub fn components(&self) -> usize {
        self.moduli.len()
    }

    pub fn family_size(&self) -> usize {
        self.moduli[0].len()
    }

    /// Moduli of component j across the family.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.moduli[j]
    }
}

/// Eigenvalue-modulus table of the family. Structured families read their
/// diagonals; general families go through the dense eigensolver.
pub fn spectral_profile(family: &MatrixFamily, class: &StructureClass) -> Result<SpectralProfile> {
    let d = family.dim();
    let m = family.size();
    let mut moduli = vec![vec![0.0; m]; d];
    if class.tag.is_structured() {
        for (i, mat) in family.matrices().iter().enumerate() {
            for (j, z) in mat.diag().iter().enumerate() {
                moduli[j][i] = z.norm();
            }
        }
        Ok(SpectralProfile { moduli, source: ProfileSource::DiagonalEntries })
    } else {
        for (i, mat) in family.matrices().iter().enumerate() {
            let mut mods: Vec<f64> =
                linalg::eigenvalues(mat)?.iter().map(|z| z.norm()).collect();
            mods.sort_by(|a, b| b.partial_cmp(a).unwrap());
            for (j, v) in mods.iter().enumerate() {
                moduli[j][i] = *v;
            }
        }
        Ok(SpectralProfile { moduli, source: ProfileSource::EigenSolve })
    }
}
