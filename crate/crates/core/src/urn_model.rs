//! Urn specifications: parsing, validation, intensity matrix and tenability.
//!
//! An urn has `q` colors with activities `a`, per-color random replacement
//! vectors with finite support, and a deterministic initial composition.

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability sums inside a replacement distribution.
pub const PROB_TOL: f64 = 1e-12;
/// Tolerance on `a·v` across atoms when checking balance.
pub const BALANCE_TOL: f64 = 1e-9;

const INT_TOL: f64 = 1e-9;

/// One support point of a replacement distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub p: f64,
    pub v: DVector<f64>,
}

/// Finite-support distribution of the replacement vector ξ_i for one color.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementDistribution {
    pub atoms: Vec<Atom>,
}

impl ReplacementDistribution {
    /// E ξ_i.
    pub fn mean(&self) -> DVector<f64> {
        let q = self.atoms[0].v.len();
        self.atoms
            .iter()
            .fold(DVector::zeros(q), |acc, a| acc + &a.v * a.p)
    }

    /// E(ξ_i ξ_i').
    pub fn second_moment(&self) -> DMatrix<f64> {
        let q = self.atoms[0].v.len();
        self.atoms.iter().fold(DMatrix::zeros(q, q), |acc, a| {
            acc + (&a.v * a.v.transpose()) * a.p
        })
    }
}

/// A declarative urn specification.
///
/// `replacements[i]` is `None` when the config is an incomplete fragment that
/// does not specify ξ for color `i+1`; most operations require a complete spec.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnSpec {
    pub name: String,
    pub q: usize,
    pub activities: DVector<f64>,
    pub replacements: Vec<Option<ReplacementDistribution>>,
    pub initial: DVector<f64>,
    pub incomplete: bool,
}

impl UrnSpec {
    /// Initial total activity w0 = a·X0.
    pub fn w0(&self) -> f64 {
        self.activities.dot(&self.initial)
    }

    pub fn is_complete(&self) -> bool {
        self.replacements.iter().all(|r| r.is_some())
    }

    fn require_complete(&self) -> Result<()> {
        let missing = self.replacements.iter().filter(|r| r.is_none()).count();
        if missing > 0 {
            Err(Error::IncompleteSpec(missing))
        } else {
            Ok(())
        }
    }

    /// Iterate over (color index, distribution) for the defined colors.
    pub fn defined_replacements(
        &self,
    ) -> impl Iterator<Item = (usize, &ReplacementDistribution)> {
        self.replacements
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|d| (i, d)))
    }
}

/// How tenability was (or was not) established.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Tenability {
    /// The standard sufficient condition holds (integer entries with
    /// ξ_ij ≥ 0 for j ≠ i, ξ_ii ≥ −1, a·ξ_i ≥ 0, or all atoms nonnegative).
    VerifiedSufficient,
    /// Verified by analysing the reachable colors or by exhausting the
    /// reachable state space within the budget.
    VerifiedByExploration,
    /// Budget exhausted (or non-integer entries) without a verdict.
    Unverified,
    /// A reachable state breaks nonnegativity; carries a concrete witness.
    Violated {
        state: Vec<f64>,
        drawn_color: usize,
        resulting_state: Vec<f64>,
    },
}

/// Outcome of the structural checks on an urn spec.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// `Ok(b)` for a balanced urn, otherwise the failure message.
    pub balance: std::result::Result<f64, String>,
    pub tenability: Tenability,
    /// Whether λ1 = b; filled in by the spectral analysis, `None` before.
    pub dominant_ok: Option<bool>,
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

/// A number in a config file: decimal, integer, or a "num/den" rational.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum Number {
    Int(i64),
    Float(f64),
    Rational(String),
}

impl Number {
    fn value(&self, field: &str) -> Result<f64> {
        match self {
            Number::Int(i) => Ok(*i as f64),
            Number::Float(f) => Ok(*f),
            Number::Rational(s) => {
                let parts: Vec<&str> = s.split('/').collect();
                let err = || Error::Schema {
                    field: field.to_string(),
                    detail: format!("`{s}` is not a number or num/den rational"),
                };
                if parts.len() != 2 {
                    return Err(err());
                }
                let num: f64 = parts[0].trim().parse().map_err(|_| err())?;
                let den: f64 = parts[1].trim().parse().map_err(|_| err())?;
                if den == 0.0 {
                    return Err(err());
                }
                Ok(num / den)
            }
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct RawAtom {
    p: Number,
    v: Vec<Number>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawReplacement {
    color: usize,
    atoms: Vec<RawAtom>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawConfig {
    #[serde(default)]
    name: String,
    q: usize,
    activities: Vec<Number>,
    initial: Vec<Number>,
    replacements: Vec<RawReplacement>,
    #[serde(default)]
    incomplete: bool,
}

fn vector(field: &str, raw: &[Number], q: usize) -> Result<DVector<f64>> {
    if raw.len() != q {
        return Err(Error::Schema {
            field: field.to_string(),
            detail: format!("expected {q} entries, got {}", raw.len()),
        });
    }
    let vals: Result<Vec<f64>> = raw.iter().map(|n| n.value(field)).collect();
    let v = DVector::from_vec(vals?);
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Schema {
            field: field.to_string(),
            detail: "non-finite entry".to_string(),
        });
    }
    Ok(v)
}

/// Parse a structured config text (TOML) into a validated [`UrnSpec`].
pub fn parse_urn(config_text: &str) -> Result<UrnSpec> {
    let raw: RawConfig =
        toml::from_str(config_text).map_err(|e| Error::Config(e.to_string()))?;

    if raw.q < 2 {
        return Err(Error::Schema {
            field: "q".to_string(),
            detail: format!("need q >= 2, got {}", raw.q),
        });
    }
    let q = raw.q;
    let activities = vector("activities", &raw.activities, q)?;
    for (i, &a) in activities.iter().enumerate() {
        if a < 0.0 {
            return Err(Error::NegativeActivity { index: i + 1, value: a });
        }
    }
    let initial = vector("initial", &raw.initial, q)?;
    if initial.iter().any(|&x| x < 0.0) {
        return Err(Error::Schema {
            field: "initial".to_string(),
            detail: "negative initial composition".to_string(),
        });
    }
    if activities.dot(&initial) <= 0.0 {
        return Err(Error::Schema {
            field: "initial".to_string(),
            detail: "a·X0 must be positive".to_string(),
        });
    }

    let mut replacements: Vec<Option<ReplacementDistribution>> = vec![None; q];
    for rep in &raw.replacements {
        if rep.color < 1 || rep.color > q {
            return Err(Error::Schema {
                field: "replacements.color".to_string(),
                detail: format!("color {} out of range 1..={q}", rep.color),
            });
        }
        if replacements[rep.color - 1].is_some() {
            return Err(Error::Schema {
                field: "replacements.color".to_string(),
                detail: format!("duplicate entry for color {}", rep.color),
            });
        }
        if rep.atoms.is_empty() {
            return Err(Error::Schema {
                field: "replacements.atoms".to_string(),
                detail: format!("color {} has no atoms", rep.color),
            });
        }
        let mut atoms = Vec::with_capacity(rep.atoms.len());
        let mut psum = 0.0;
        for atom in &rep.atoms {
            let p = atom.p.value("replacements.atoms.p")?;
            if !(0.0..=1.0 + PROB_TOL).contains(&p) {
                return Err(Error::Schema {
                    field: "replacements.atoms.p".to_string(),
                    detail: format!("probability {p} outside [0,1]"),
                });
            }
            psum += p;
            atoms.push(Atom {
                p,
                v: vector("replacements.atoms.v", &atom.v, q)?,
            });
        }
        if (psum - 1.0).abs() > PROB_TOL {
            return Err(Error::ProbabilitySum {
                color: rep.color,
                sum: psum,
            });
        }
        replacements[rep.color - 1] = Some(ReplacementDistribution { atoms });
    }

    let missing = replacements.iter().filter(|r| r.is_none()).count();
    if missing > 0 && !raw.incomplete {
        return Err(Error::Schema {
            field: "replacements".to_string(),
            detail: format!(
                "{missing} colors have no replacement distribution (mark the config `incomplete = true` if intentional)"
            ),
        });
    }

    Ok(UrnSpec {
        name: raw.name,
        q,
        activities,
        replacements,
        initial,
        incomplete: raw.incomplete,
    })
}

/// Serialize a spec back to config text; `parse_urn` round-trips it.
pub fn serialize_urn(spec: &UrnSpec) -> String {
    let raw = RawConfig {
        name: spec.name.clone(),
        q: spec.q,
        activities: spec.activities.iter().map(|&x| Number::Float(x)).collect(),
        initial: spec.initial.iter().map(|&x| Number::Float(x)).collect(),
        replacements: spec
            .defined_replacements()
            .map(|(i, d)| RawReplacement {
                color: i + 1,
                atoms: d
                    .atoms
                    .iter()
                    .map(|a| RawAtom {
                        p: Number::Float(a.p),
                        v: a.v.iter().map(|&x| Number::Float(x)).collect(),
                    })
                    .collect(),
            })
            .collect(),
        incomplete: spec.incomplete,
    };
    toml::to_string(&raw).expect("config serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Return the balance b with a·v = b for every atom of every color.
pub fn check_balance(spec: &UrnSpec) -> Result<f64> {
    let mut b: Option<f64> = None;
    for (i, dist) in spec.defined_replacements() {
        for (k, atom) in dist.atoms.iter().enumerate() {
            let av = spec.activities.dot(&atom.v);
            match b {
                None => b = Some(av),
                Some(expected) if (av - expected).abs() > BALANCE_TOL => {
                    return Err(Error::NotBalanced {
                        color: i + 1,
                        atom: k + 1,
                        found: av,
                        expected,
                    });
                }
                _ => {}
            }
        }
    }
    let b = b.ok_or(Error::IncompleteSpec(spec.q))?;
    if b <= 0.0 {
        return Err(Error::NonPositiveBalance(b));
    }
    Ok(b)
}

/// The intensity matrix A with column j equal to a_j·E ξ_j.
pub fn intensity_matrix(spec: &UrnSpec) -> Result<DMatrix<f64>> {
    spec.require_complete()?;
    let q = spec.q;
    let mut a = DMatrix::zeros(q, q);
    for (j, dist) in spec.defined_replacements() {
        a.set_column(j, &(dist.mean() * spec.activities[j]));
    }
    Ok(a)
}

/// Deterministic total activity w_n = w0 + n·b of a balanced urn.
pub fn total_activity(spec: &UrnSpec, n: usize) -> Result<f64> {
    let b = check_balance(spec)?;
    Ok(spec.w0() + n as f64 * b)
}

/// The per-color second-moment matrices E(ξ_i ξ_i').
pub fn second_moment_matrices(spec: &UrnSpec) -> Result<Vec<DMatrix<f64>>> {
    spec.require_complete()?;
    Ok(spec
        .replacements
        .iter()
        .map(|r| r.as_ref().unwrap().second_moment())
        .collect())
}

fn is_integer(x: f64) -> bool {
    (x - x.round()).abs() < INT_TOL
}

/// Sufficient condition for tenability on a set of colors: either every atom
/// is componentwise nonnegative, or all entries are integers with
/// ξ_ij ≥ 0 (j ≠ i), ξ_ii ≥ −1 and a·ξ_i ≥ 0.
fn sufficient_on(spec: &UrnSpec, colors: &HashSet<usize>) -> bool {
    let all_nonneg = colors.iter().all(|&i| match &spec.replacements[i] {
        Some(d) => d
            .atoms
            .iter()
            .all(|a| colors.iter().all(|&j| a.v[j] >= 0.0)),
        None => false,
    });
    if all_nonneg {
        return true;
    }
    colors.iter().all(|&i| match &spec.replacements[i] {
        Some(d) => d.atoms.iter().all(|a| {
            colors.iter().all(|&j| {
                let v = a.v[j];
                is_integer(v) && if j == i { v >= -1.0 - INT_TOL } else { v >= -INT_TOL }
            }) && spec.activities.dot(&a.v) >= -BALANCE_TOL
        }),
        None => false,
    }) && colors.iter().all(|&i| is_integer(spec.initial[i]))
}

/// Colors that can ever hold a positive count, as a fixpoint over atoms
/// of colors that can be drawn.
fn reachable_colors(spec: &UrnSpec) -> HashSet<usize> {
    let mut reach: HashSet<usize> = (0..spec.q).filter(|&i| spec.initial[i] > 0.0).collect();
    loop {
        let mut added = false;
        let drawn: Vec<usize> = reach
            .iter()
            .copied()
            .filter(|&i| spec.activities[i] > 0.0)
            .collect();
        for i in drawn {
            if let Some(d) = &spec.replacements[i] {
                for atom in &d.atoms {
                    for j in 0..spec.q {
                        if atom.v[j] > 0.0 && reach.insert(j) {
                            added = true;
                        }
                    }
                }
            }
        }
        if !added {
            return reach;
        }
    }
}

/// Decide tenability: sufficient condition, reachable-color restriction,
/// then bounded breadth-first exploration of integer compositions.
pub fn check_tenability(spec: &UrnSpec, exploration_budget: usize) -> Tenability {
    let all: HashSet<usize> = (0..spec.q).collect();
    if spec.is_complete() && sufficient_on(spec, &all) {
        return Tenability::VerifiedSufficient;
    }

    let reach = reachable_colors(spec);
    // The sufficient condition on the reachable colors settles it, provided no
    // reachable atom subtracts from an unreachable (hence zero) coordinate.
    let no_outside_subtraction = reach
        .iter()
        .filter(|&&i| spec.activities[i] > 0.0)
        .all(|&i| match &spec.replacements[i] {
            Some(d) => d
                .atoms
                .iter()
                .all(|a| (0..spec.q).all(|j| reach.contains(&j) || a.v[j] >= -INT_TOL)),
            None => false,
        });
    if no_outside_subtraction && sufficient_on(spec, &reach) {
        return Tenability::VerifiedByExploration;
    }

    // Bounded BFS over integer compositions.
    let integral = spec.initial.iter().all(|&x| is_integer(x))
        && spec.defined_replacements().all(|(_, d)| {
            d.atoms.iter().all(|a| a.v.iter().all(|&x| is_integer(x)))
        });
    if !integral {
        return Tenability::Unverified;
    }

    let x0: Vec<i64> = spec.initial.iter().map(|&x| x.round() as i64).collect();
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    let mut queue: VecDeque<Vec<i64>> = VecDeque::new();
    seen.insert(x0.clone());
    queue.push_back(x0);
    while let Some(state) = queue.pop_front() {
        for i in 0..spec.q {
            if spec.activities[i] <= 0.0 || state[i] <= 0 {
                continue;
            }
            let Some(dist) = &spec.replacements[i] else {
                // A reachable color with unknown replacement: cannot verify.
                return Tenability::Unverified;
            };
            for atom in &dist.atoms {
                let next: Vec<i64> = state
                    .iter()
                    .zip(atom.v.iter())
                    .map(|(&x, &v)| x + v.round() as i64)
                    .collect();
                let total: f64 = next
                    .iter()
                    .zip(spec.activities.iter())
                    .map(|(&x, &a)| x as f64 * a)
                    .sum();
                if next.iter().any(|&x| x < 0) || total <= 0.0 {
                    return Tenability::Violated {
                        state: state.iter().map(|&x| x as f64).collect(),
                        drawn_color: i + 1,
                        resulting_state: next.iter().map(|&x| x as f64).collect(),
                    };
                }
                if !seen.contains(&next) {
                    if seen.len() >= exploration_budget {
                        return Tenability::Unverified;
                    }
                    seen.insert(next.clone());
                    queue.push_back(next);
                }
            }
        }
    }
    Tenability::VerifiedByExploration
}

/// Run the structural checks and collect them in a report.
pub fn validate(spec: &UrnSpec, exploration_budget: usize) -> ValidationReport {
    let mut warnings = Vec::new();
    if spec.incomplete {
        warnings.push("spec is an incomplete fragment; moment analysis unavailable".to_string());
    }
    let balance = check_balance(spec).map_err(|e| e.to_string());
    let tenability = check_tenability(spec, exploration_budget);
    if matches!(tenability, Tenability::Unverified) {
        warnings.push("tenability could not be verified within the exploration budget".to_string());
    }
    ValidationReport {
        balance,
        tenability,
        dominant_ok: None,
        warnings,
    }
}
