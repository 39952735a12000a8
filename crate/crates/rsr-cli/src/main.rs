//! Command-line front-end: analysis, sampling, limit-law checks, Edgeworth
//! validation, perturbation expansions, and the commutator-gap study.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid input, 4 numerical failure.
//! Every artifact records tool version, seed, and family hash; wall time
//! goes to stderr so artifact files stay bitwise reproducible.

use clap::{Parser, Subcommand, ValueEnum};
use rsr_core::asymptotics::asymptotic_summary;
use rsr_core::error::Error as CoreError;
use rsr_core::experiments::{
    self, fit_loglog_slope, BenchmarkModel, MultivariateMixture,
};
use rsr_core::family::{classify_structure, spectral_profile, MatrixFamily, DEFAULT_ZERO_TOL};
use rsr_core::linalg::{C64, CMatrix};
use rsr_core::perturb::{
    eigenvalue_product_expansion, exact_product_eigenvalues, perturbed_asymptotics,
    PerturbedFamily,
};
use rsr_core::report::{AnalysisReport, Envelope};
use rsr_core::sampler::{sample_rho_n, sample_word, Word};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "rsr", version, about = "Random spectral radius toolkit")]
struct Cli {
    /// Worker threads (default: machine parallelism, or RSR_WORKERS)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleFormat {
    Csv,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    PureExp,
    GaussExpMix,
}

#[derive(Subcommand)]
enum Command {
    /// Structure, commutator gap, spectral profile, and asymptotics of a family
    Analyze {
        family: PathBuf,
        /// relative zero tolerance for structure detection
        #[arg(long, default_value_t = DEFAULT_ZERO_TOL)]
        tol: f64,
        /// tie tolerance for the maximizer set (default 1e-12 max(1,|mu*|))
        #[arg(long)]
        tie_tol: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Draw seeded rho_n realizations and export them
    Sample {
        family: PathBuf,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: SampleFormat,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Standardize rho_n samples and test them against the limit law
    CltCheck {
        family: PathBuf,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// also write the comparison rows as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
        /// write the standardized histogram as CSV (edges, counts)
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Univariate Edgeworth error curves against exact MGF benchmarks
    EdgeworthUniv {
        #[arg(long, value_enum)]
        model: ModelKind,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        s: f64,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        /// geometric ladder "50:3200:x2" or a comma list "50,100,200"
        #[arg(long)]
        n_ladder: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Multivariate Edgeworth validation from a JSON config
    EdgeworthMulti {
        #[arg(long)]
        config: PathBuf,
        /// override the Monte Carlo sample count from the config
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Eigenvalue perturbation expansion of a product along a word
    Perturb {
        family: PathBuf,
        deltas: PathBuf,
        /// explicit 1-based word, e.g. "1,1,2,2"
        #[arg(long, conflicts_with = "word_length")]
        word: Option<String>,
        /// sample a word of this length instead
        #[arg(long)]
        word_length: Option<u64>,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        /// residual-fit ladder "1e-1:1e-3:5" (log-spaced)
        #[arg(long, default_value = "1e-1:1e-3:5")]
        eps_ladder: String,
        /// 1-based eigenvalue coordinate; default: all
        #[arg(long)]
        component: Option<usize>,
        /// rescale every delta to unit Frobenius norm first
        #[arg(long)]
        normalize_deltas: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Synthesized general families: surrogate prediction error vs gamma
    GammaStudy {
        /// comma list of target commutator gaps
        #[arg(long)]
        gamma_list: String,
        /// two product lengths, e.g. "100,400"
        #[arg(long)]
        n_pair: String,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 3)]
        size: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let workers = cli
        .workers
        .or_else(|| std::env::var("RSR_WORKERS").ok().and_then(|v| v.parse().ok()));
    if let Some(w) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            fail(3, &format!("cannot configure worker pool: {e}"));
        }
    }
    let start = Instant::now();
    match run(cli.command) {
        Ok(()) => {
            eprintln!("# wall-time {:.3}s", start.elapsed().as_secs_f64());
        }
        Err(e) => {
            let code = exit_code(&e);
            fail(code, &e.to_string());
        }
    }
}

fn fail(code: i32, message: &str) -> ! {
    let record = serde_json::json!({ "error": message, "exit_code": code });
    eprintln!("{record}");
    std::process::exit(code);
}

fn exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Malformed(_)
        | CoreError::DimensionMismatch(_)
        | CoreError::WeightSum(_)
        | CoreError::NonFiniteEntry { .. }
        | CoreError::InvalidArgument(_)
        | CoreError::Io(_)
        | CoreError::Json(_) => 3,
        CoreError::DegenerateSpectrum(_)
        | CoreError::ZeroModulus { .. }
        | CoreError::EigenNonConvergence(_)
        | CoreError::EnumerationBudget { .. }
        | CoreError::InvalidCovariance(_)
        | CoreError::RegimeMismatch(_)
        | CoreError::BudgetTooSmall(_)
        | CoreError::RegimeChange(_) => 4,
    }
}

/// Entropy-derived seed for runs that did not pin one; always recorded in
/// the output metadata.
fn fresh_seed() -> u64 {
    use std::hash::{BuildHasher, Hasher};
    std::collections::hash_map::RandomState::new().build_hasher().finish()
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), CoreError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

fn parse_comma_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CoreError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<T>()
                .map_err(|_| CoreError::InvalidArgument(format!("bad {what} entry: {part}")))
        })
        .collect()
}

fn parse_n_ladder(text: &str) -> Result<Vec<u64>, CoreError> {
    if let Some(rest) = text.find(":x").map(|i| (&text[..i], &text[i + 2..])) {
        let (range, factor) = rest;
        let factor: u64 = factor
            .parse()
            .map_err(|_| CoreError::InvalidArgument(format!("bad ladder factor in {text}")))?;
        let parts: Vec<&str> = range.split(':').collect();
        if parts.len() != 2 || factor < 2 {
            return Err(CoreError::InvalidArgument(format!("bad ladder spec {text}")));
        }
        let start: u64 = parts[0]
            .parse()
            .map_err(|_| CoreError::InvalidArgument(format!("bad ladder start in {text}")))?;
        let end: u64 = parts[1]
            .parse()
            .map_err(|_| CoreError::InvalidArgument(format!("bad ladder end in {text}")))?;
        let mut out = Vec::new();
        let mut n = start;
        while n <= end {
            out.push(n);
            n = n.saturating_mul(factor);
        }
        if out.len() < 2 {
            return Err(CoreError::InvalidArgument("ladder has fewer than 2 points".into()));
        }
        Ok(out)
    } else {
        parse_comma_list(text, "n-ladder")
    }
}

fn parse_eps_ladder(text: &str) -> Result<Vec<f64>, CoreError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(CoreError::InvalidArgument(format!(
            "eps ladder must be start:end:points, got {text}"
        )));
    }
    let a: f64 = parts[0]
        .parse()
        .map_err(|_| CoreError::InvalidArgument(format!("bad ladder start {}", parts[0])))?;
    let b: f64 = parts[1]
        .parse()
        .map_err(|_| CoreError::InvalidArgument(format!("bad ladder end {}", parts[1])))?;
    let k: usize = parts[2]
        .parse()
        .map_err(|_| CoreError::InvalidArgument(format!("bad ladder count {}", parts[2])))?;
    if !(a > 0.0 && b > 0.0 && k >= 2) {
        return Err(CoreError::InvalidArgument("eps ladder needs positive endpoints, k >= 2".into()));
    }
    let (la, lb) = (a.ln(), b.ln());
    Ok((0..k)
        .map(|i| (la + (lb - la) * i as f64 / (k - 1) as f64).exp())
        .collect())
}

fn parse_word(text: &str, family_size: usize) -> Result<Vec<usize>, CoreError> {
    let one_based: Vec<usize> = parse_comma_list(text, "word")?;
    one_based
        .into_iter()
        .map(|i| {
            if i >= 1 && i <= family_size {
                Ok(i - 1)
            } else {
                Err(CoreError::InvalidArgument(format!(
                    "word index {i} outside 1..={family_size}"
                )))
            }
        })
        .collect()
}

/// Deltas document: same matrix encoding as a family, no weights.
#[derive(Deserialize)]
struct DeltasDoc {
    dimension: usize,
    matrices: Vec<Vec<Vec<[f64; 2]>>>,
}

fn load_deltas(path: &Path) -> Result<Vec<CMatrix>, CoreError> {
    let text = std::fs::read_to_string(path)?;
    let doc: DeltasDoc =
        serde_json::from_str(&text).map_err(|e| CoreError::Malformed(e.to_string()))?;
    let d = doc.dimension;
    doc.matrices
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(CoreError::DimensionMismatch(format!(
                    "delta {} does not match dimension {d}",
                    i + 1
                )));
            }
            let complex_rows: Vec<Vec<C64>> = rows
                .iter()
                .map(|r| r.iter().map(|&[re, im]| C64::new(re, im)).collect())
                .collect();
            Ok(CMatrix::from_rows(&complex_rows))
        })
        .collect()
}

#[derive(Serialize)]
struct ComplexPair {
    re: f64,
    im: f64,
}

impl From<C64> for ComplexPair {
    fn from(z: C64) -> Self {
        ComplexPair { re: z.re, im: z.im }
    }
}

#[derive(Serialize)]
struct PerturbComponentReport {
    component: usize,
    lambda0: ComplexPair,
    lambda1: ComplexPair,
    lambda2: ComplexPair,
    #[serde(skip_serializing_if = "Option::is_none")]
    rational: Option<[String; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual_slope: Option<f64>,
}

#[derive(Serialize)]
struct PerturbReport {
    word: Vec<usize>,
    epsilon: f64,
    eps_ladder: Vec<f64>,
    delta_norms: Vec<f64>,
    components: Vec<PerturbComponentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho_infinity_perturbed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_infinity_perturbed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    regime_note: Option<String>,
}

fn run(command: Command) -> Result<(), CoreError> {
    match command {
        Command::Analyze { family, tol, tie_tol, output } => {
            let fam = MatrixFamily::from_path(&family)?;
            let class = classify_structure(&fam, tol);
            let profile = spectral_profile(&fam, &class)?;
            let summary = asymptotic_summary(&profile, fam.weights(), tie_tol)?;
            let report = AnalysisReport::build(&fam, class, profile, summary);
            let doc = Envelope::new("analyze", report).with_family(fam.hash_hex());
            write_text(output.as_deref(), &doc.to_json())
        }
        Command::Sample { family, n, count, seed, format, output } => {
            let fam = MatrixFamily::from_path(&family)?;
            let class = classify_structure(&fam, DEFAULT_ZERO_TOL);
            let profile = spectral_profile(&fam, &class)?;
            let seed = seed.unwrap_or_else(fresh_seed);
            let set = sample_rho_n(&fam, &class, &profile, n, count, seed)?;
            match format {
                SampleFormat::Csv => {
                    let mut buf = Vec::new();
                    set.write_csv(&mut buf)?;
                    write_text(output.as_deref(), &String::from_utf8_lossy(&buf))
                }
                SampleFormat::Binary => {
                    let path = output.ok_or_else(|| {
                        CoreError::InvalidArgument("binary format requires --output".into())
                    })?;
                    let mut file = std::fs::File::create(path)?;
                    set.write_binary(&mut file)?;
                    Ok(())
                }
            }
        }
        Command::CltCheck { family, n, count, seed, output, csv, histogram } => {
            let fam = MatrixFamily::from_path(&family)?;
            let seed = seed.unwrap_or_else(fresh_seed);
            let report = experiments::run_clt_histogram(&fam, n, count, seed)?;
            if let Some(path) = csv {
                let mut buf = Vec::new();
                report.write_csv(&mut buf)?;
                std::fs::write(path, buf)?;
            }
            if let Some(path) = histogram {
                if let Some(h) = &report.histogram {
                    let mut buf = format!(
                        "# rsr {} clt-check histogram seed={} family={}\n",
                        rsr_core::report::TOOL_VERSION,
                        seed,
                        fam.hash_hex()
                    );
                    buf.push_str("bin_left,bin_right,count\n");
                    for (b, &c) in h.counts.iter().enumerate() {
                        buf.push_str(&format!("{},{},{}\n", h.edges[b], h.edges[b + 1], c));
                    }
                    std::fs::write(path, buf)?;
                }
            }
            let doc = Envelope::new("clt-check", &report)
                .with_seed(seed)
                .with_family(fam.hash_hex());
            write_text(output.as_deref(), &doc.to_json())
        }
        Command::EdgeworthUniv { model, mu, s, tau, n_ladder, seed, output, csv } => {
            let model = match model {
                ModelKind::PureExp => BenchmarkModel::PureExponential { mu, s },
                ModelKind::GaussExpMix => {
                    BenchmarkModel::GaussianExponentialMixture { mu, s, tau }
                }
            };
            let ladder = parse_n_ladder(&n_ladder)?;
            let seed = seed.unwrap_or_else(fresh_seed);
            let report = experiments::run_edgeworth_univariate(&model, &ladder, seed)?;
            if let Some(path) = csv {
                let mut buf = Vec::new();
                report.write_csv(&mut buf)?;
                std::fs::write(path, buf)?;
            }
            let doc = Envelope::new("edgeworth-univ", &report).with_seed(seed);
            write_text(output.as_deref(), &doc.to_json())
        }
        Command::EdgeworthMulti { config, count, seed, output, csv } => {
            #[derive(Deserialize)]
            struct MultiConfig {
                mu: f64,
                tau: f64,
                correlation: Vec<Vec<f64>>,
                q: Vec<f64>,
                n_values: Vec<u64>,
                count: usize,
                #[serde(default = "default_correction_draws")]
                correction_draws: usize,
            }
            fn default_correction_draws() -> usize {
                1_000_000
            }
            let text = std::fs::read_to_string(&config)?;
            let cfg: MultiConfig =
                serde_json::from_str(&text).map_err(|e| CoreError::Malformed(e.to_string()))?;
            let model = MultivariateMixture {
                mu: cfg.mu,
                tau: cfg.tau,
                correlation: cfg.correlation,
                q: cfg.q,
            };
            let seed = seed.unwrap_or_else(fresh_seed);
            let report = experiments::run_edgeworth_multivariate(
                &model,
                &cfg.n_values,
                count.unwrap_or(cfg.count),
                cfg.correction_draws,
                seed,
            )?;
            if let Some(path) = csv {
                let mut buf = Vec::new();
                report.write_csv(&mut buf)?;
                std::fs::write(path, buf)?;
            }
            let doc = Envelope::new("edgeworth-multi", &report).with_seed(seed);
            write_text(output.as_deref(), &doc.to_json())
        }
        Command::Perturb {
            family,
            deltas,
            word,
            word_length,
            eps,
            eps_ladder,
            component,
            normalize_deltas,
            seed,
            output,
        } => {
            let fam = MatrixFamily::from_path(&family)?;
            let delta_mats = load_deltas(&deltas)?;
            let pf = if normalize_deltas {
                PerturbedFamily::with_normalized_deltas(fam.clone(), delta_mats, eps)?
            } else {
                PerturbedFamily::new(fam.clone(), delta_mats, eps)?
            };
            let seed = seed.unwrap_or_else(fresh_seed);
            let indices = match (&word, word_length) {
                (Some(text), _) => parse_word(text, fam.size())?,
                (None, Some(len)) => sample_word(fam.weights(), len, seed, 0).indices,
                (None, None) => {
                    return Err(CoreError::InvalidArgument(
                        "need --word or --word-length".into(),
                    ))
                }
            };
            let w = Word::explicit(indices.clone());
            let ladder = parse_eps_ladder(&eps_ladder)?;
            let components: Vec<usize> = match component {
                Some(c) => {
                    if c < 1 || c > fam.dim() {
                        return Err(CoreError::InvalidArgument(format!(
                            "component {c} outside 1..={}",
                            fam.dim()
                        )));
                    }
                    vec![c - 1]
                }
                None => (0..fam.dim()).collect(),
            };
            let mut comp_reports = Vec::new();
            for &c in &components {
                let exp = eigenvalue_product_expansion(&pf, &w, c)?;
                // residual slopes against the exact eigensolve
                let mut residuals = Vec::new();
                for &e in &ladder {
                    let eigs = exact_product_eigenvalues(&pf, &w, e)?;
                    let predicted = exp.at(e);
                    let nearest = eigs
                        .iter()
                        .map(|v| (v - predicted).norm())
                        .fold(f64::INFINITY, f64::min);
                    residuals.push(nearest.max(1e-18));
                }
                // residual ~ C eps^3 shows up as slope ~ 3
                let slope = fit_loglog_slope(&ladder, &residuals);
                comp_reports.push(PerturbComponentReport {
                    component: c + 1,
                    lambda0: exp.lambda0.into(),
                    lambda1: exp.lambda1.into(),
                    lambda2: exp.lambda2.into(),
                    rational: exp.rational.map(|r| {
                        let (a, b, c) = r.display();
                        [a, b, c]
                    }),
                    residual_slope: Some(slope),
                });
            }
            let (rho_eps, sigma_eps, eps_max, note) = match perturbed_asymptotics(&pf) {
                Ok(pa) => (
                    Some(pa.summary.rho_infinity),
                    pa.summary.sigma_infinity,
                    Some(pa.epsilon_max),
                    None,
                ),
                Err(e) => (None, None, None, Some(e.to_string())),
            };
            let report = PerturbReport {
                word: indices.iter().map(|i| i + 1).collect(),
                epsilon: eps,
                eps_ladder: ladder,
                delta_norms: pf.delta_norms().to_vec(),
                components: comp_reports,
                rho_infinity_perturbed: rho_eps,
                sigma_infinity_perturbed: sigma_eps,
                epsilon_max: eps_max,
                regime_note: note,
            };
            let doc = Envelope::new("perturb", report)
                .with_seed(seed)
                .with_family(fam.hash_hex());
            write_text(output.as_deref(), &doc.to_json())
        }
        Command::GammaStudy { gamma_list, n_pair, count, dim, size, seed, output, csv } => {
            let targets: Vec<f64> = parse_comma_list(&gamma_list, "gamma list")?;
            let pair: Vec<u64> = parse_comma_list(&n_pair, "n pair")?;
            if pair.len() != 2 {
                return Err(CoreError::InvalidArgument("n-pair needs two values".into()));
            }
            let seed = seed.unwrap_or_else(fresh_seed);
            let report = experiments::run_gamma_study(
                &targets,
                (pair[0], pair[1]),
                count,
                dim,
                size,
                seed,
            )?;
            if let Some(path) = csv {
                let mut buf = Vec::new();
                report.write_csv(&mut buf)?;
                std::fs::write(path, buf)?;
            }
            let doc = Envelope::new("gamma-study", &report).with_seed(seed);
            write_text(output.as_deref(), &doc.to_json())
        }
    }
}
