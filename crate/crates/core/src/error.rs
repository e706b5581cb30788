use thiserror::Error;

/// Errors produced by urn parsing, validation and analysis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("schema error in field `{field}`: {detail}")]
    Schema { field: String, detail: String },

    #[error("replacement distribution for color {color}: probabilities sum to {sum}")]
    ProbabilitySum { color: usize, sum: f64 },

    #[error("negative activity a[{index}] = {value}")]
    NegativeActivity { index: usize, value: f64 },

    #[error(
        "urn is not balanced: color {color}, atom {atom} has a·v = {found}, expected {expected}"
    )]
    NotBalanced {
        color: usize,
        atom: usize,
        found: f64,
        expected: f64,
    },

    #[error("balance b = {0} is not positive")]
    NonPositiveBalance(f64),

    #[error("urn spec is incomplete (replacements missing for {0} colors); analysis unavailable")]
    IncompleteSpec(usize),

    #[error("eigenvalue clusters separated by {gap:.3e} are closer than 10x the cluster tolerance {tol:.3e} but not merged")]
    ClusteringAmbiguous { gap: f64, tol: f64 },

    #[error("spectral projection norm {norm:.3e} exceeds conditioning bound {bound:.3e}")]
    IllConditioned { norm: f64, bound: f64 },

    #[error("largest eigenvalue Re λ = {lambda_max} exceeds balance b = {b}; some colors are unreachable and should be pruned from the spec")]
    DominantMismatch { lambda_max: f64, b: f64 },

    #[error("dominant eigenvalue b = {b} has multiplicity {multiplicity} > 1 (e.g. the original Polya urn); limit theory does not apply")]
    DominantNotSimple { b: f64, multiplicity: usize },

    #[error("urn is not strictly small (Re λ2 = {re_lambda2} vs λ1/2 = {half_lambda1}); the covariance integral diverges")]
    NotStrictlySmall {
        re_lambda2: f64,
        half_lambda1: f64,
    },

    #[error("urn is large (Re λ2 = {re_lambda2} > λ1/2 = {half_lambda1}); covariance limits have no simple description and are not computed")]
    LargeUrn {
        re_lambda2: f64,
        half_lambda1: f64,
    },

    #[error("theorem hypothesis Re λ2 < λ1 fails (Re λ2 = {re_lambda2}, λ1 = {lambda1})")]
    HypothesisFailed { re_lambda2: f64, lambda1: f64 },

    #[error("missing derivative values for cluster at λ = {lambda} (need {need}, got {got})")]
    MissingDerivatives {
        lambda: String,
        need: usize,
        got: usize,
    },

    #[error("gamma-ratio evaluation too close to a pole: k + w0 + λ = {value} for k = {k}")]
    PoleProximity { k: usize, value: String },

    #[error("restricted Lyapunov operator is numerically singular (residual {residual:.3e})")]
    SingularSolve { residual: f64 },

    #[error("requested n = {n} exceeds the configured cap {cap}")]
    CapExceeded { n: usize, cap: usize },

    #[error("tenability violated at state {state:?} after drawing color {color}: {detail}")]
    TenabilityViolation {
        state: Vec<f64>,
        color: usize,
        detail: String,
    },

    #[error("degeneracy test requires an irreducible active-color intensity matrix")]
    IrreducibilityRequired,

    #[error("numerical failure: {0}")]
    Numeric(String),

    /// Classification failed, but the partial analysis is still worth
    /// showing; `source` is the underlying dominant-eigenvalue error.
    #[error("{source}")]
    Classification {
        report: Box<crate::report::AnalyzeReport>,
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
