//! Structured report documents. All artifacts share an envelope carrying
//! enough metadata (tool version, seed, family hash) to rerun the
//! producing command; serialization is byte-stable for golden-file tests.

use crate::asymptotics::AsymptoticSummary;
use crate::family::{MatrixFamily, SpectralProfile, StructureClass};
use serde::Serialize;

pub const TOOL_NAME: &str = "rsr";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
pub struct Envelope<T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    pub payload: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(command: impl Into<String>, payload: T) -> Self {
        Envelope {
            tool: TOOL_NAME,
            version: TOOL_VERSION,
            command: command.into(),
            seed: None,
            family: None,
            payload,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_family(mut self, hash: &str) -> Self {
        self.family = Some(hash.to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Full analysis of one family: structure, commutator gap, spectral
/// profile, and closed-form asymptotics.
#[derive(Serialize)]
pub struct AnalysisReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub dimension: usize,
    pub size: usize,
    pub weights: Vec<f64>,
    pub structure: StructureClass,
    pub commutator_gap: f64,
    pub profile: SpectralProfile,
    pub asymptotics: AsymptoticSummary,
}

impl AnalysisReport {
    pub fn build(
        family: &MatrixFamily,
        structure: StructureClass,
        profile: SpectralProfile,
        asymptotics: AsymptoticSummary,
    ) -> Self {
        AnalysisReport {
            label: family.label().map(str::to_string),
            dimension: family.dim(),
            size: family.size(),
            weights: family.weights().to_vec(),
            structure,
            commutator_gap: crate::family::commutator_gap(family),
            profile,
            asymptotics,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::asymptotic_summary;
    use crate::family::{classify_structure, spectral_profile, DEFAULT_ZERO_TOL};
    use crate::linalg::{C64, CMatrix};

    #[test]
    fn analysis_report_is_reproducible() {
        let d1 = CMatrix::diagonal(&[C64::new(1.0, 0.0), C64::new(2.0, 0.0)]);
        let d2 = CMatrix::diagonal(&[C64::new(3.0, 0.0), C64::new(5.0, 0.0)]);
        let fam = MatrixFamily::new(vec![d1, d2], vec![0.5, 0.5], None).unwrap();
        let build = || {
            let class = classify_structure(&fam, DEFAULT_ZERO_TOL);
            let prof = spectral_profile(&fam, &class).unwrap();
            let summary = asymptotic_summary(&prof, fam.weights(), None).unwrap();
            Envelope::new("analyze", AnalysisReport::build(&fam, class, prof, summary))
                .with_family(fam.hash_hex())
                .to_json()
        };
        let a = build();
        let b = build();
        assert_eq!(a, b);
        assert!(a.contains("\"tool\": \"rsr\""));
        assert!(a.contains("rho_infinity"));
    }
}
