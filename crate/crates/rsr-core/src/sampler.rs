//! Seeded word sampling and overflow-safe evaluation of `rho_n` along
//! random products.
//!
//! Products are taken left to right: a word (s1, ..., sn) denotes
//! `A_{s1} A_{s2} ... A_{sn}`. Structured families never multiply matrices
//! at all; the log spectral radius is a running maximum of log-modulus
//! sums. General families accumulate a Frobenius-normalized product with a
//! separate log scale, so that length-10^6 words with growth e^(n mu)
//! stay representable.

use crate::error::{Error, Result};
use crate::family::{MatrixFamily, ProfileSource, SpectralProfile, StructureClass};
use crate::linalg::{self, CMatrix};
use crate::rng::Stream;
use rayon::prelude::*;
use std::io::Write;

/// RNG purpose tag for word sampling.
const WORD_TAG: u64 = 0x776f_7264; // "word"

/// An index sequence over the family, with sampling provenance when the
/// word was drawn rather than given. Indices are 0-based in memory; the
/// text interfaces use 1-based indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub indices: Vec<usize>,
    /// (seed, draw_index) when sampled; None for explicit words
    pub provenance: Option<(u64, u64)>,
}

impl Word {
    pub fn explicit(indices: Vec<usize>) -> Self {
        Word { indices, provenance: None }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draw a length-n word of i.i.d. categorical indices. Deterministic in
/// (seed, draw_index) and independent of any scheduling.
pub fn sample_word(weights: &[f64], n: u64, seed: u64, draw_index: u64) -> Word {
    let cumulative = cumulative_weights(weights);
    let mut stream = Stream::new(seed, &[WORD_TAG, draw_index]);
    let indices = (0..n).map(|_| stream.next_categorical(&cumulative)).collect();
    Word { indices, provenance: Some((seed, draw_index)) }
}

fn cumulative_weights(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cum: Vec<f64> = weights
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

/// A matrix product kept as `exp(log_scale) * unit_matrix` with
/// `||unit_matrix||_F = 1`. Renormalized at every multiplication step.
#[derive(Clone, Debug)]
pub struct ScaledProduct {
    unit: CMatrix,
    log_scale: f64,
}

impl ScaledProduct {
    pub fn identity(dim: usize) -> Self {
        let id = CMatrix::identity(dim);
        let norm = id.frobenius_norm();
        ScaledProduct { unit: id.scale((1.0 / norm).into()), log_scale: norm.ln() }
    }

    /// Right-multiply by `a` and renormalize.
    pub fn multiplied_by(&self, a: &CMatrix) -> Self {
        let raw = self.unit.mul(a);
        let norm = raw.frobenius_norm();
        if norm == 0.0 {
            // exactly singular product from here on
            return ScaledProduct { unit: raw, log_scale: f64::NEG_INFINITY };
        }
        ScaledProduct {
            unit: raw.scale((1.0 / norm).into()),
            log_scale: self.log_scale + norm.ln(),
        }
    }

    pub fn unit_matrix(&self) -> &CMatrix {
        &self.unit
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// The represented matrix, exp(log_scale) * unit. Overflows for long
    /// products by construction; intended for small-n cross-checks.
    pub fn to_matrix(&self) -> CMatrix {
        self.unit.scale(self.log_scale.exp().into())
    }
}

/// Prepared evaluator of `rho_n` along words of one family.
pub struct RhoSampler<'a> {
    family: &'a MatrixFamily,
    /// log diagonal moduli, row j across the family; None for general families
    log_profile: Option<Vec<Vec<f64>>>,
}

impl<'a> RhoSampler<'a> {
    pub fn new(
        family: &'a MatrixFamily,
        class: &StructureClass,
        profile: &SpectralProfile,
    ) -> Result<Self> {
        let log_profile = if class.tag.is_structured() {
            assert_eq!(profile.source, ProfileSource::DiagonalEntries);
            let mut rows = Vec::with_capacity(profile.components());
            for j in 0..profile.components() {
                let mut row = Vec::with_capacity(family.size());
                for (i, &v) in profile.row(j).iter().enumerate() {
                    if v <= 0.0 {
                        return Err(Error::DegenerateSpectrum(format!(
                            "structured family has zero diagonal entry at matrix {}, coordinate {}",
                            i + 1,
                            j + 1
                        )));
                    }
                    row.push(v.ln());
                }
                rows.push(row);
            }
            Some(rows)
        } else {
            None
        };
        Ok(RhoSampler { family, log_profile })
    }

    /// (rho_n, log rho(product)). A singular product yields (0, -inf); the
    /// caller decides whether to flag it.
    pub fn rho_for_indices(&self, indices: &[usize]) -> Result<(f64, f64)> {
        let n = indices.len();
        assert!(n >= 1, "empty word");
        match &self.log_profile {
            Some(rows) => {
                let mut best = f64::NEG_INFINITY;
                for row in rows {
                    let sum: f64 = indices.iter().map(|&i| row[i]).sum();
                    best = best.max(sum);
                }
                Ok(((best / n as f64).exp(), best))
            }
            None => {
                let mut prod = ScaledProduct::identity(self.family.dim());
                for &i in indices {
                    prod = prod.multiplied_by(self.family.matrix(i));
                }
                let radius = linalg::spectral_radius(prod.unit_matrix())?;
                if radius <= 0.0 || prod.log_scale() == f64::NEG_INFINITY {
                    return Ok((0.0, f64::NEG_INFINITY));
                }
                let log_rho = prod.log_scale() + radius.ln();
                Ok(((log_rho / n as f64).exp(), log_rho))
            }
        }
    }
}

/// `rho_n` of one explicit word (n-th root of the spectral radius of the
/// word's product). Structured families use the diagonal fast path.
pub fn product_spectral_radius(
    family: &MatrixFamily,
    class: &StructureClass,
    profile: &SpectralProfile,
    word: &Word,
) -> Result<(f64, f64)> {
    if word.indices.iter().any(|&i| i >= family.size()) {
        return Err(Error::InvalidArgument(format!(
            "word index out of range for family of size {}",
            family.size()
        )));
    }
    RhoSampler::new(family, class, profile)?.rho_for_indices(&word.indices)
}

/// A seeded collection of rho_n realizations.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub n: u64,
    pub count: usize,
    pub seed: u64,
    pub family_hash: String,
    /// number of samples with exactly singular products (rho_n = 0)
    pub zero_count: usize,
}

impl SampleSet {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.count as f64
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.count as f64
    }

    /// CSV export: metadata header line, column name, one value per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# rsr {} samples n={} count={} seed={} family={} zeros={}",
            env!("CARGO_PKG_VERSION"),
            self.n,
            self.count,
            self.seed,
            self.family_hash,
            self.zero_count
        )?;
        writeln!(w, "rho_n")?;
        for v in &self.values {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    /// Compact binary column: little-endian f64, no header.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Draw `count` independent realizations of rho_n. Each sample's word is a
/// pure function of (seed, sample index), so the result is identical for
/// any worker count; samples are evaluated in parallel and assembled in
/// sample-index order.
pub fn sample_rho_n(
    family: &MatrixFamily,
    class: &StructureClass,
    profile: &SpectralProfile,
    n: u64,
    count: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n < 1 || count < 1 {
        return Err(Error::InvalidArgument("need n >= 1 and count >= 1".into()));
    }
    let sampler = RhoSampler::new(family, class, profile)?;
    let cumulative = cumulative_weights(family.weights());
    let values: Result<Vec<f64>> = (0..count as u64)
        .into_par_iter()
        .map(|draw| {
            let mut stream = Stream::new(seed, &[WORD_TAG, draw]);
            let indices: Vec<usize> =
                (0..n).map(|_| stream.next_categorical(&cumulative)).collect();
            sampler.rho_for_indices(&indices).map(|(rho, _)| rho)
        })
        .collect();
    let values = values?;
    let zero_count = values.iter().filter(|v| **v == 0.0).count();
    Ok(SampleSet {
        values,
        n,
        count,
        seed,
        family_hash: family.hash_hex().to_string(),
        zero_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{classify_structure, spectral_profile, DEFAULT_ZERO_TOL};
    use crate::linalg::C64;

    fn prepared(fam: &MatrixFamily) -> (StructureClass, SpectralProfile) {
        let class = classify_structure(fam, DEFAULT_ZERO_TOL);
        let prof = spectral_profile(fam, &class).unwrap();
        (class, prof)
    }

    fn diag_family(diags: &[Vec<f64>], weights: &[f64]) -> MatrixFamily {
        let matrices: Vec<CMatrix> = diags
            .iter()
            .map(|d| {
                let entries: Vec<C64> = d.iter().map(|&x| C64::new(x, 0.0)).collect();
                CMatrix::diagonal(&entries)
            })
            .collect();
        MatrixFamily::new(matrices, weights.to_vec(), None).unwrap()
    }

    fn general_family() -> MatrixFamily {
        let a = CMatrix::from_real_rows(&[vec![0.9, 0.4], vec![-0.2, 1.1]]);
        let b = CMatrix::from_real_rows(&[vec![1.2, -0.3], vec![0.5, 0.7]]);
        MatrixFamily::new(vec![a, b], vec![0.5, 0.5], None).unwrap()
    }

    #[test]
    fn degenerate_weights_give_constant_word() {
        let w = sample_word(&[1.0, 0.0], 32, 9, 0);
        assert!(w.indices.iter().all(|&i| i == 0));
    }

    #[test]
    fn same_seed_and_draw_reproduce_word() {
        let a = sample_word(&[0.3, 0.7], 64, 123, 7);
        let b = sample_word(&[0.3, 0.7], 64, 123, 7);
        assert_eq!(a, b);
        let c = sample_word(&[0.3, 0.7], 64, 123, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_frequency_within_binomial_band() {
        let n = 1_000_000u64;
        let w = sample_word(&[0.3, 0.7], n, 2024, 0);
        let freq = w.indices.iter().filter(|&&i| i == 0).count() as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.002, "freq {freq}");
    }

    #[test]
    fn known_product_value() {
        // diag(1,2) * diag(3,5) = diag(3,10): rho = 10, rho_2 = sqrt(10)
        let fam = diag_family(&[vec![1.0, 2.0], vec![3.0, 5.0]], &[0.5, 0.5]);
        let (class, prof) = prepared(&fam);
        let word = Word::explicit(vec![0, 1]);
        let (rho_2, log_rho) = product_spectral_radius(&fam, &class, &prof, &word).unwrap();
        assert!((rho_2 - 10f64.sqrt()).abs() < 1e-14);
        assert!((log_rho - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn word_index_out_of_range_is_rejected() {
        let fam = diag_family(&[vec![1.0, 2.0]], &[1.0]);
        let (class, prof) = prepared(&fam);
        let word = Word::explicit(vec![0, 1]);
        assert!(product_spectral_radius(&fam, &class, &prof, &word).is_err());
    }

    #[test]
    fn cyclic_shift_invariance_general() {
        let fam = general_family();
        let (class, prof) = prepared(&fam);
        let sampler = RhoSampler::new(&fam, &class, &prof).unwrap();
        let word = sample_word(fam.weights(), 12, 5, 3).indices;
        let (base, _) = sampler.rho_for_indices(&word).unwrap();
        for r in 1..word.len() {
            let mut rotated = word.clone();
            rotated.rotate_left(r);
            let (v, _) = sampler.rho_for_indices(&rotated).unwrap();
            assert!((v - base).abs() <= 1e-9 * base.abs(), "rotation {r}: {v} vs {base}");
        }
    }

    #[test]
    fn triangular_rho_depends_only_on_occurrence_counts() {
        let t1 = CMatrix::from_real_rows(&[vec![1.4, 0.8], vec![0.0, 0.6]]);
        let t2 = CMatrix::from_real_rows(&[vec![0.9, -2.0], vec![0.0, 1.3]]);
        let fam = MatrixFamily::new(vec![t1, t2], vec![0.5, 0.5], None).unwrap();
        let (class, prof) = prepared(&fam);
        let sampler = RhoSampler::new(&fam, &class, &prof).unwrap();
        let word = sample_word(fam.weights(), 20, 31, 0).indices;
        let (base, _) = sampler.rho_for_indices(&word).unwrap();
        let mut shuffled = word.clone();
        let mut stream = Stream::new(77, &[0]);
        for shuffle in 0..10 {
            // Fisher-Yates
            for i in (1..shuffled.len()).rev() {
                let j = (stream.next_u64() % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            let (v, _) = sampler.rho_for_indices(&shuffled).unwrap();
            assert!((v - base).abs() < 1e-12 * base, "shuffle {shuffle}");
        }
    }

    #[test]
    fn scaled_product_matches_naive_product() {
        let fam = general_family();
        let word = sample_word(fam.weights(), 8, 3, 1).indices;
        let mut scaled = ScaledProduct::identity(2);
        let mut naive = CMatrix::identity(2);
        for &i in &word {
            scaled = scaled.multiplied_by(fam.matrix(i));
            naive = naive.mul(fam.matrix(i));
        }
        let rec = scaled.to_matrix();
        for ((idx, a), (_, b)) in rec.entries().zip(naive.entries()) {
            assert!(
                (a - b).norm() <= 1e-10 * naive.frobenius_norm(),
                "entry {idx:?}: {a} vs {b}"
            );
        }
        assert!((scaled.unit_matrix().frobenius_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fast_path_matches_matrix_path_on_diagonal_family() {
        let fam = diag_family(&[vec![1.7, 0.4], vec![0.8, 1.2]], &[0.5, 0.5]);
        let (class, prof) = prepared(&fam);
        let fast = RhoSampler::new(&fam, &class, &prof).unwrap();
        // force the matrix path by classifying as general
        let general_class = StructureClass {
            tag: crate::family::StructureTag::General,
            zero_tolerance: DEFAULT_ZERO_TOL,
            demoted_from: None,
        };
        let gen_prof = spectral_profile(&fam, &general_class).unwrap();
        let slow = RhoSampler::new(&fam, &general_class, &gen_prof).unwrap();
        for draw in 0..20 {
            let word = sample_word(fam.weights(), 8, 11, draw).indices;
            let (a, _) = fast.rho_for_indices(&word).unwrap();
            let (b, _) = slow.rho_for_indices(&word).unwrap();
            assert!((a - b).abs() <= 1e-10 * a, "draw {draw}: {a} vs {b}");
        }
    }

    #[test]
    fn scaled_path_matches_naive_eigensolve_on_general_family() {
        // short general-family words: rho from the scaled accumulation vs
        // the eigensolver applied to the plainly multiplied product
        let fam = general_family();
        let (class, prof) = prepared(&fam);
        let sampler = RhoSampler::new(&fam, &class, &prof).unwrap();
        for draw in 0..10 {
            let word = sample_word(fam.weights(), 8, 21, draw).indices;
            let (rho_scaled, _) = sampler.rho_for_indices(&word).unwrap();
            let mut naive = CMatrix::identity(2);
            for &i in &word {
                naive = naive.mul(fam.matrix(i));
            }
            let radius = crate::linalg::spectral_radius(&naive).unwrap();
            let rho_naive = radius.powf(1.0 / word.len() as f64);
            assert!(
                (rho_scaled - rho_naive).abs() <= 1e-10 * rho_naive,
                "draw {draw}: {rho_scaled} vs {rho_naive}"
            );
        }
    }

    #[test]
    fn singular_product_is_flagged_as_zero() {
        let a = CMatrix::from_real_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let b = CMatrix::from_real_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]);
        let fam = MatrixFamily::new(vec![a, b], vec![0.5, 0.5], None).unwrap();
        let (class, prof) = prepared(&fam);
        let sampler = RhoSampler::new(&fam, &class, &prof).unwrap();
        // A*B = 0 exactly
        let (rho, log_rho) = sampler.rho_for_indices(&[0, 1]).unwrap();
        assert_eq!(rho, 0.0);
        assert_eq!(log_rho, f64::NEG_INFINITY);
    }

    #[test]
    fn sample_set_constant_for_single_matrix_family() {
        let fam = diag_family(&[vec![0.5, 2.0]], &[1.0]);
        let (class, prof) = prepared(&fam);
        let set = sample_rho_n(&fam, &class, &prof, 16, 100, 42).unwrap();
        assert!(set.values.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert_eq!(set.zero_count, 0);
    }

    #[test]
    fn sample_set_identical_across_worker_counts() {
        let fam = diag_family(&[vec![1.7, 0.4], vec![0.8, 1.2]], &[0.3, 0.7]);
        let (class, prof) = prepared(&fam);
        let run = |threads: usize| {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| sample_rho_n(&fam, &class, &prof, 64, 500, 7).unwrap())
        };
        let one = run(1);
        let eight = run(8);
        assert_eq!(one.values.len(), eight.values.len());
        for (a, b) in one.values.iter().zip(&eight.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sample_mean_approaches_limit() {
        // diagonal family, unique maximizer: mean within CLT noise + O(1/n) bias
        let fam = diag_family(&[vec![1.7, 0.4], vec![0.8, 1.2]], &[0.5, 0.5]);
        let (class, prof) = prepared(&fam);
        let summary =
            crate::asymptotics::asymptotic_summary(&prof, fam.weights(), None).unwrap();
        let n = 4096u64;
        let count = 20_000usize;
        let set = sample_rho_n(&fam, &class, &prof, n, count, 99).unwrap();
        let sigma = summary.sigma_infinity.unwrap();
        let tol = 5.0 * sigma / ((n as f64).sqrt() * (count as f64).sqrt())
            + 2.0 * summary.rho_infinity / n as f64;
        assert!(
            (set.mean() - summary.rho_infinity).abs() < tol,
            "mean {} vs rho_inf {} (tol {tol})",
            set.mean(),
            summary.rho_infinity
        );
    }

    #[test]
    fn csv_export_contains_metadata() {
        let fam = diag_family(&[vec![0.5, 2.0]], &[1.0]);
        let (class, prof) = prepared(&fam);
        let set = sample_rho_n(&fam, &class, &prof, 4, 3, 1).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("samples n=4 count=3 seed=1 family="));
        assert_eq!(text.lines().count(), 5);
        let mut bin = Vec::new();
        set.write_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 3 * 8);
    }
}
