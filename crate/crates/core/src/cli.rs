//! Command-line front end. Exit codes are a stable contract:
//! 0 pass, 1 runtime/comparison failure, 2 invalid spec,
//! 3 theorem-hypothesis failure.

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::asymptotics::{asymptotic_covariance, asymptotic_mean, SigmaMethod};
use crate::corpus;
use crate::error::Error;
use crate::exact_moments::{exact_covariance, CovMethod};
use crate::report::{self, AnalyzeReport, ComparisonReport, Tolerances, SCHEMA_VERSION};
use crate::simulator::{convergence_probe, estimate_moments};
use crate::spectral::{
    classify, dominant_eigendata, spectral_decomposition, SpectralOptions, UrnClass,
};
use crate::urn_model::{intensity_matrix, parse_urn, UrnSpec};

#[derive(Parser)]
#[command(
    name = "polya",
    version,
    about = "Exact and asymptotic moment analysis of balanced generalized Polya urns"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Emit machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Emit CSV tables where applicable.
    #[arg(long, global = true)]
    csv: bool,
    /// Mean tolerance in SE units (default 4).
    #[arg(long = "tol-mean-se", global = true)]
    tol_mean_se: Option<f64>,
    /// Simulated vs exact covariance tolerance, trace-relative (default 0.05).
    #[arg(long = "tol-cov", global = true)]
    tol_cov: Option<f64>,
    /// Exact vs asymptotic covariance tolerance, relative (default 0.5).
    #[arg(long = "tol-asym", global = true)]
    tol_asym: Option<f64>,
    /// Absolute fallback when the covariance limit is zero (default 0.25).
    #[arg(long = "tol-asym-abs", global = true)]
    tol_asym_abs: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an urn and report its spectral classification.
    Analyze { config: String },
    /// Exact and/or asymptotic moments at time n.
    Moments {
        config: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Only the exact finite-n moments.
        #[arg(long)]
        exact: bool,
        /// Only the asymptotic limits.
        #[arg(long)]
        asymptotic: bool,
    },
    /// Monte Carlo moment estimates, optionally probing a grid of times.
    Simulate {
        config: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated times for a convergence probe, e.g. 100,1000.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Three-way exact/asymptotic/simulated comparison with pass flags.
    Compare {
        config: String,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Bundled urns: list them or run the comparison over all of them.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
}

#[derive(Subcommand)]
enum CorpusAction {
    /// List bundled urns with provenance notes.
    List,
    /// Run `compare` on every complete bundled urn.
    Run {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Map an error to the exit-code contract.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Schema { .. }
        | Error::ProbabilitySum { .. }
        | Error::NegativeActivity { .. }
        | Error::NotBalanced { .. }
        | Error::NonPositiveBalance(_)
        | Error::IncompleteSpec(_)
        | Error::Io(_) => 2,
        Error::DominantMismatch { .. }
        | Error::DominantNotSimple { .. }
        | Error::NotStrictlySmall { .. }
        | Error::LargeUrn { .. }
        | Error::HypothesisFailed { .. }
        | Error::IrreducibilityRequired => 3,
        Error::Classification { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn load_spec(config: &str) -> Result<UrnSpec, Error> {
    if std::path::Path::new(config).exists() {
        return parse_urn(&std::fs::read_to_string(config)?);
    }
    if let Some(entry) = corpus::get(config) {
        return parse_urn(entry.text);
    }
    Err(Error::Config(format!(
        "`{config}` is neither a readable file nor a bundled urn id"
    )))
}

fn tolerances(cli: &Cli) -> Tolerances {
    let mut t = Tolerances::from_env();
    if let Some(v) = cli.tol_mean_se {
        t.mean_se_factor = v;
    }
    if let Some(v) = cli.tol_cov {
        t.cov_rel = v;
    }
    if let Some(v) = cli.tol_asym {
        t.asym_rel = v;
    }
    if let Some(v) = cli.tol_asym_abs {
        t.asym_abs = v;
    }
    t
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("report serializes")
    );
}

fn print_analyze(r: &AnalyzeReport) {
    println!("urn: {} (q = {})", r.urn, r.q);
    match r.balance {
        Some(b) => println!("balance b = {b}, w0 = {}", r.w0),
        None => println!("not balanced; w0 = {}", r.w0),
    }
    println!("tenability: {}", r.tenability);
    println!("eigenvalue clusters (Re, Im, multiplicity, nu):");
    for e in &r.eigenvalues {
        println!(
            "  {:>10.6} {:>+10.6}i   m = {}  nu = {}",
            e.re, e.im, e.multiplicity, e.nu
        );
    }
    println!("classification: {}", r.classification);
    if let Some(v1) = &r.v1 {
        let vs: Vec<String> = v1.iter().map(|x| format!("{x:.6}")).collect();
        println!("v1 = [{}]", vs.join(", "));
    }
    if let (Some(l2), Some(nu2)) = (r.lambda2_re, r.nu2) {
        println!("Re lambda2 = {l2}, nu2 = {nu2}");
    }
    if let Some(res) = r.pbp_residual {
        println!("PBP identity residual: {res:.3e}");
    }
    for w in &r.warnings {
        println!("warning: {w}");
    }
}

fn print_comparison(r: &ComparisonReport) {
    println!(
        "urn: {}  [{}]  n = {}, reps = {}, seed = {}",
        r.urn, r.classification, r.n, r.reps, r.seed
    );
    println!("covariance normalizer: {}", r.normalization);
    for row in &r.rows {
        let fmt = |v: &Vec<f64>| {
            let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
            format!("[{}]", parts.join(", "))
        };
        println!("- {} (oracle: {})", row.quantity, row.oracle);
        println!("    exact:      {}", fmt(&row.exact));
        if let Some(a) = &row.asymptotic {
            println!("    asymptotic: {}", fmt(a));
        }
        println!("    simulated:  {}", fmt(&row.simulated));
        if let Some(se) = &row.se {
            println!("    se:         {}", fmt(se));
        }
        println!(
            "    residual {:.4e} vs tolerance {:.4e}  -> {}",
            row.residual,
            row.tolerance,
            if row.pass { "pass" } else { "FAIL" }
        );
    }
    for w in &r.warnings {
        println!("warning: {w}");
    }
    println!("overall: {}", if r.pass { "pass" } else { "FAIL" });
}

fn comparison_csv(r: &ComparisonReport) -> String {
    let mut out = String::from("quantity,oracle,residual,tolerance,pass\n");
    for row in &r.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.quantity.replace(',', ";"),
            row.oracle.replace(',', ";"),
            row.residual,
            row.tolerance,
            row.pass
        ));
    }
    out
}

fn run_analyze(config: &str, json: bool) -> i32 {
    let spec = match load_spec(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match report::analyze(&spec) {
        Ok(r) => {
            if json {
                print_json(&r);
            } else {
                print_analyze(&r);
            }
            0
        }
        Err(Error::Classification { report, source }) => {
            if json {
                print_json(&report);
            } else {
                print_analyze(&report);
            }
            eprintln!("error: {source}");
            exit_code(&source)
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[derive(Serialize)]
struct MomentsReport {
    schema_version: u32,
    urn: String,
    n: usize,
    exact_mean: Option<Vec<f64>>,
    exact_covariance: Option<Vec<Vec<f64>>>,
    asymptotic_slope: Option<Vec<f64>>,
    asymptotic_error_order: Option<String>,
    covariance_normalization: Option<String>,
    covariance_limit: Option<Vec<Vec<f64>>>,
    notes: Vec<String>,
}

fn run_moments(config: &str, n: usize, want_exact: bool, want_asym: bool, json: bool) -> i32 {
    let run = || -> Result<MomentsReport, Error> {
        let spec = load_spec(config)?;
        let both = !want_exact && !want_asym;
        let mut r = MomentsReport {
            schema_version: SCHEMA_VERSION,
            urn: spec.name.clone(),
            n,
            exact_mean: None,
            exact_covariance: None,
            asymptotic_slope: None,
            asymptotic_error_order: None,
            covariance_normalization: None,
            covariance_limit: None,
            notes: Vec::new(),
        };
        if want_exact || both {
            let em = exact_covariance(&spec, n, CovMethod::Recursion)?;
            r.exact_mean = Some(em.mean.iter().copied().collect());
            r.exact_covariance = Some(report::render_matrix(&em.covariance));
        }
        if want_asym || both {
            let a = intensity_matrix(&spec)?;
            let decomp = spectral_decomposition(&a, &SpectralOptions::default())?;
            let dom = dominant_eigendata(&spec, &decomp)?;
            let mean = asymptotic_mean(&spec, &dom)?;
            r.asymptotic_slope = Some(mean.slope.iter().copied().collect());
            r.asymptotic_error_order = Some(mean.error_order);
            match classify(&dom) {
                UrnClass::Large => {
                    r.notes.push(
                        "large urn: the covariance limit has no simple description".to_string(),
                    );
                }
                _ => {
                    let cov =
                        asymptotic_covariance(&spec, &decomp, &dom, SigmaMethod::Lyapunov)?;
                    r.covariance_normalization = Some(cov.normalization);
                    r.covariance_limit = Some(report::render_matrix(&cov.limit));
                    r.notes.extend(cov.warnings);
                }
            }
        }
        Ok(r)
    };
    match run() {
        Ok(r) => {
            if json {
                print_json(&r);
            } else {
                println!("urn: {}  n = {}", r.urn, r.n);
                if let Some(m) = &r.exact_mean {
                    println!("exact mean: {m:?}");
                }
                if let Some(c) = &r.exact_covariance {
                    println!("exact covariance: {c:?}");
                }
                if let Some(s) = &r.asymptotic_slope {
                    println!(
                        "mean slope (lambda1*v1): {s:?}, error {}",
                        r.asymptotic_error_order.as_deref().unwrap_or("-")
                    );
                }
                if let Some(l) = &r.covariance_limit {
                    println!(
                        "Var(X_n)/{} -> {l:?}",
                        r.covariance_normalization.as_deref().unwrap_or("n")
                    );
                }
                for note in &r.notes {
                    println!("note: {note}");
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[derive(Serialize)]
struct SimulateReport {
    schema_version: u32,
    urn: String,
    n: usize,
    reps: usize,
    seed: u64,
    mean: Vec<f64>,
    mean_se: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    cov_se: f64,
    probe: Option<Vec<ProbeRow>>,
}

#[derive(Serialize)]
struct ProbeRow {
    n: usize,
    mean_sq_drift: f64,
    normalized_cov_trace: f64,
    normalizer: f64,
}

fn run_simulate(
    config: &str,
    n: usize,
    reps: usize,
    seed: u64,
    grid: Option<&str>,
    json: bool,
    csv: bool,
) -> i32 {
    let run = || -> Result<SimulateReport, Error> {
        let spec = load_spec(config)?;
        let est = estimate_moments(&spec, n, reps, seed)?;
        let probe = match grid {
            None => None,
            Some(g) => {
                let points: Result<Vec<usize>, _> =
                    g.split(',').map(|s| s.trim().parse::<usize>()).collect();
                let points =
                    points.map_err(|e| Error::Config(format!("bad --grid value: {e}")))?;
                let rows = convergence_probe(&spec, &points, reps, seed)?
                    .into_iter()
                    .map(|p| ProbeRow {
                        n: p.n,
                        mean_sq_drift: p.mean_sq_drift,
                        normalized_cov_trace: p.normalized_cov_trace,
                        normalizer: p.normalizer,
                    })
                    .collect();
                Some(rows)
            }
        };
        Ok(SimulateReport {
            schema_version: SCHEMA_VERSION,
            urn: spec.name.clone(),
            n,
            reps,
            seed,
            mean: est.mean.iter().copied().collect(),
            mean_se: est.mean_se.iter().copied().collect(),
            covariance: report::render_matrix(&est.covariance),
            cov_se: est.cov_se,
            probe,
        })
    };
    match run() {
        Ok(r) => {
            if json {
                print_json(&r);
            } else if csv {
                if let Some(probe) = &r.probe {
                    println!("n,mean_sq_drift,normalized_cov_trace,normalizer");
                    for p in probe {
                        println!(
                            "{},{},{},{}",
                            p.n, p.mean_sq_drift, p.normalized_cov_trace, p.normalizer
                        );
                    }
                } else {
                    println!("coordinate,mean,se");
                    for i in 0..r.mean.len() {
                        println!("{},{},{}", i + 1, r.mean[i], r.mean_se[i]);
                    }
                }
            } else {
                println!(
                    "urn: {}  n = {}, reps = {}, seed = {}",
                    r.urn, r.n, r.reps, r.seed
                );
                println!("mean:    {:?}", r.mean);
                println!("mean se: {:?}", r.mean_se);
                println!("covariance: {:?} (entrywise se <= {:.3e})", r.covariance, r.cov_se);
                if let Some(probe) = &r.probe {
                    println!("probe (n, E|X_n/n - lambda1*v1|^2, tr cov/normalizer):");
                    for p in probe {
                        println!(
                            "  {:>8}  {:.6e}  {:.6e}",
                            p.n, p.mean_sq_drift, p.normalized_cov_trace
                        );
                    }
                }
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run_compare(config: &str, n: usize, reps: usize, seed: u64, cli: &Cli) -> i32 {
    let run = || -> Result<ComparisonReport, Error> {
        let spec = load_spec(config)?;
        report::compare(&spec, n, reps, seed, &tolerances(cli))
    };
    match run() {
        Ok(r) => {
            if cli.json {
                print_json(&r);
            } else if cli.csv {
                print!("{}", comparison_csv(&r));
            } else {
                print_comparison(&r);
            }
            if r.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[derive(Serialize)]
struct CorpusRunEntry {
    urn: String,
    status: String,
    classification: String,
    report: Option<ComparisonReport>,
    detail: Option<String>,
}

#[derive(Serialize)]
struct CorpusRunReport {
    schema_version: u32,
    n: usize,
    reps: usize,
    seed: u64,
    results: Vec<CorpusRunEntry>,
    failures: usize,
}

fn run_corpus(action: &CorpusAction, cli: &Cli) -> i32 {
    match action {
        CorpusAction::List => {
            if cli.json {
                #[derive(Serialize)]
                struct Entry<'a> {
                    id: &'a str,
                    note: &'a str,
                    incomplete: bool,
                }
                let list: Vec<Entry> = corpus::ENTRIES
                    .iter()
                    .map(|e| Entry {
                        id: e.id,
                        note: e.note,
                        incomplete: e.note.starts_with("incomplete"),
                    })
                    .collect();
                print_json(&list);
            } else {
                for e in corpus::ENTRIES {
                    println!("{:<22} {}", e.id, e.note);
                }
            }
            0
        }
        CorpusAction::Run { n, reps, seed } => {
            let tol = tolerances(cli);
            let mut results = Vec::new();
            let mut failures = 0;
            for spec in corpus::complete_specs() {
                let entry = match report::compare(&spec, *n, *reps, *seed, &tol) {
                    Ok(r) => {
                        let status = if r.pass { "ok" } else { "failed" };
                        if !r.pass {
                            failures += 1;
                        }
                        CorpusRunEntry {
                            urn: spec.name.clone(),
                            status: status.to_string(),
                            classification: r.classification.clone(),
                            report: Some(r),
                            detail: None,
                        }
                    }
                    Err(e) if exit_code(&e) == 3 => CorpusRunEntry {
                        urn: spec.name.clone(),
                        status: "not-applicable".to_string(),
                        classification: UrnClass::NotApplicable(e.to_string()).to_string(),
                        report: None,
                        detail: Some(e.to_string()),
                    },
                    Err(e) => {
                        failures += 1;
                        CorpusRunEntry {
                            urn: spec.name.clone(),
                            status: "error".to_string(),
                            classification: "unknown".to_string(),
                            report: None,
                            detail: Some(e.to_string()),
                        }
                    }
                };
                results.push(entry);
            }
            let summary = CorpusRunReport {
                schema_version: SCHEMA_VERSION,
                n: *n,
                reps: *reps,
                seed: *seed,
                results,
                failures,
            };
            if cli.json {
                print_json(&summary);
            } else {
                for r in &summary.results {
                    println!("{:<18} {:<15} {}", r.urn, r.status, r.classification);
                    if let Some(d) = &r.detail {
                        println!("    {d}");
                    }
                }
                println!("failures: {}", summary.failures);
            }
            if failures == 0 {
                0
            } else {
                1
            }
        }
    }
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    match &cli.command {
        Command::Analyze { config } => run_analyze(config, cli.json),
        Command::Moments {
            config,
            n,
            exact,
            asymptotic,
        } => run_moments(config, *n, *exact, *asymptotic, cli.json),
        Command::Simulate {
            config,
            n,
            reps,
            seed,
            grid,
        } => run_simulate(config, *n, *reps, *seed, grid.as_deref(), cli.json, cli.csv),
        Command::Compare {
            config,
            n,
            reps,
            seed,
        } => run_compare(config, *n, *reps, *seed, &cli),
        Command::Corpus { action } => run_corpus(action, &cli),
    }
}
