//! Asymptotic mean and covariance of small urns: the drift limit, the
//! covariance limits for strictly and critically small urns, and the
//! structural tests (PBP identity, degenerate directions, irreducibility).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{
    classify, dominant_eigendata, realify, spectral_decomposition, Dominant,
    SpectralDecomposition, SpectralOptions, UrnClass,
};
use crate::urn_model::{check_balance, intensity_matrix, second_moment_matrices, UrnSpec};

pub use crate::exact_moments::contribution_profile;

/// B = Σ_i a_i·v1_i·E(ξ_i ξ_i'). Warns when some v1_i is negative, which
/// can happen for reducible urns and makes B indefinite.
pub fn matrix_b(spec: &UrnSpec, dom: &Dominant) -> Result<(DMatrix<f64>, Vec<String>)> {
    let seconds = second_moment_matrices(spec)?;
    let q = spec.q;
    let mut warnings = Vec::new();
    let mut b = DMatrix::zeros(q, q);
    for (i, s) in seconds.iter().enumerate() {
        let weight = spec.activities[i] * dom.v1[i];
        if dom.v1[i] < -1e-10 {
            warnings.push(format!(
                "v1[{}] = {:.3e} is negative; B may be indefinite",
                i + 1,
                dom.v1[i]
            ));
        }
        b += s * weight;
    }
    Ok((b, warnings))
}

/// Residual of the projection identity
/// P̂B = BP̂' = P̂BP̂' = B − λ1²·v1v1' (largest deviation in operator form).
pub fn pbp_identity_check(spec: &UrnSpec, dom: &Dominant) -> Result<f64> {
    let (b, _) = matrix_b(spec, dom)?;
    let left = &dom.phat * &b;
    let right = &b * dom.phat.transpose();
    let closed = &b - &dom.v1 * dom.v1.transpose() * (dom.lambda1 * dom.lambda1);
    let r1 = (&left - &right).norm();
    let r2 = (&dom.phat * &b * dom.phat.transpose() - &closed).norm();
    let r3 = (&left - &closed).norm();
    Ok(r1.max(r2).max(r3))
}

fn require_strictly_small(dom: &Dominant) -> Result<()> {
    match classify(dom) {
        UrnClass::StrictlySmall => Ok(()),
        _ => Err(Error::NotStrictlySmall {
            re_lambda2: dom.lambda2.re,
            half_lambda1: dom.lambda1 / 2.0,
        }),
    }
}

/// Σ_I = ∫_0^∞ P̂ e^{sA} B e^{sA'} P̂' e^{−λ1·s} ds by adaptive Simpson
/// quadrature with a sampled exponential tail bound.
pub fn sigma_i_quadrature(spec: &UrnSpec, dom: &Dominant) -> Result<DMatrix<f64>> {
    require_strictly_small(dom)?;
    let a = intensity_matrix(spec)?;
    let (b, _) = matrix_b(spec, dom)?;
    let phat = &dom.phat;
    let phat_t = phat.transpose();
    let lambda1 = dom.lambda1;

    let integrand = |s: f64| -> DMatrix<f64> {
        let es = (&a * s).exp();
        phat * &es * &b * es.transpose() * &phat_t * (-lambda1 * s).exp()
    };
    // (e^{sA}B e^{sA'})·e^{−λ1 s} decays like e^{−gap·s} up to polynomial
    // factors; integrate in chunks until the sampled tail is negligible.
    let gap = lambda1 - 2.0 * dom.lambda2.re;
    let chunk = (2.0 / gap).clamp(0.5, 50.0);
    let mut acc = DMatrix::zeros(spec.q, spec.q);
    let mut s0 = 0.0;
    for _ in 0..500 {
        let s1 = s0 + chunk;
        acc += adaptive_simpson(&integrand, s0, s1, 1e-13, 30);
        s0 = s1;
        let tail = integrand(s0).norm() / gap;
        if tail < 1e-12 * (1.0 + acc.norm()) {
            return Ok(symmetrize(&acc));
        }
    }
    Err(Error::Numeric(format!(
        "covariance integral did not converge by s = {s0:.1} (gap {gap:.3e})"
    )))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = (&fa + &fm * 4.0 + &fb) * ((b - a) / 6.0);
    simpson_step(f, a, b, &fa, &fm, &fb, &whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: &DMatrix<f64>,
    fm: &DMatrix<f64>,
    fb: &DMatrix<f64>,
    whole: &DMatrix<f64>,
    tol: f64,
    depth: usize,
) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (fa + &flm * 4.0 + fm) * ((m - a) / 6.0);
    let right = (fm + &frm * 4.0 + fb) * ((b - m) / 6.0);
    let refined = &left + &right;
    let err = (&refined - whole).norm();
    if depth == 0 || err < 15.0 * tol {
        let correction = (&refined - whole) / 15.0;
        return refined + correction;
    }
    simpson_step(f, a, m, fa, &flm, fm, &left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, &frm, fb, &right, tol / 2.0, depth - 1)
}

/// Σ_I as the solution of the restricted Lyapunov equation
/// (A − (λ1/2)I)·Σ + Σ·(A − (λ1/2)I)' = −P̂BP̂', solved in least-squares
/// sense and projected back onto the P̂-invariant subspace.
pub fn sigma_i_lyapunov(spec: &UrnSpec, dom: &Dominant) -> Result<DMatrix<f64>> {
    require_strictly_small(dom)?;
    let a = intensity_matrix(spec)?;
    let (b, _) = matrix_b(spec, dom)?;
    let q = spec.q;
    let c = &a - DMatrix::identity(q, q) * (dom.lambda1 / 2.0);
    let rhs_mat = -(&dom.phat * &b * dom.phat.transpose());

    // vec(CΣ + ΣC') = (I⊗C + C⊗I)·vec(Σ).
    let identity = DMatrix::identity(q, q);
    let op = identity.kronecker(&c) + c.kronecker(&identity);
    let rhs = DVector::from_column_slice(rhs_mat.as_slice());
    let svd = op.clone().svd(true, true);
    let sol = svd
        .solve(&rhs, 1e-10 * (1.0 + op.norm()))
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let sigma = DMatrix::from_column_slice(q, q, sol.as_slice());
    // The least-squares kernel lives outside the invariant subspace;
    // projecting removes it.
    let sigma = &dom.phat * sigma * dom.phat.transpose();

    let residual = (&c * &sigma + &sigma * c.transpose() - &rhs_mat).norm();
    let scale = 1.0 + b.norm();
    if residual > 1e-7 * scale {
        return Err(Error::SingularSolve { residual });
    }
    Ok(symmetrize(&sigma))
}

/// The drift limit X_n/n → λ1·v1, with the order of the mean error term.
#[derive(Debug, Clone)]
pub struct AsymptoticMean {
    /// E X_n = slope·n + offset + error.
    pub slope: DVector<f64>,
    pub offset: DVector<f64>,
    pub v1: DVector<f64>,
    /// Order of ‖E X_n − slope·n − offset‖ as n → ∞.
    pub error_order: String,
}

pub fn asymptotic_mean(spec: &UrnSpec, dom: &Dominant) -> Result<AsymptoticMean> {
    let b = check_balance(spec)?;
    if dom.lambda2.re >= dom.lambda1 - 1e-9 * dom.lambda1 {
        return Err(Error::HypothesisFailed {
            re_lambda2: dom.lambda2.re,
            lambda1: dom.lambda1,
        });
    }
    let w0 = spec.w0();
    let slope = &dom.v1 * b;
    let offset = &dom.v1 * w0;
    let rho = dom.lambda2.re / dom.lambda1;
    let nu2 = dom.nu2;
    let error_order = if rho > 1e-12 {
        if nu2 == 0 {
            format!("O(n^{rho:.4})")
        } else {
            format!("O(n^{rho:.4} log^{nu2} n)")
        }
    } else if rho > -1e-12 {
        if nu2 == 0 {
            "O(1)".to_string()
        } else {
            format!("O(log^{nu2} n)")
        }
    } else {
        "o(1)".to_string()
    };
    Ok(AsymptoticMean {
        slope,
        offset,
        v1: dom.v1.clone(),
        error_order,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMethod {
    Lyapunov,
    Quadrature,
    /// Run both routes and fail unless they agree to 1e-8 (relative).
    CrossCheck,
}

/// Covariance limit: Var(X_n)/normalizer → limit.
#[derive(Debug, Clone)]
pub struct AsymptoticCovariance {
    pub class: UrnClass,
    /// "n" for strictly small urns, "n*log^{2ν+1}(n)" at criticality.
    pub normalization: String,
    pub limit: DMatrix<f64>,
    pub nu2: usize,
    pub warnings: Vec<String>,
}

pub fn asymptotic_covariance(
    spec: &UrnSpec,
    decomp: &SpectralDecomposition,
    dom: &Dominant,
    method: SigmaMethod,
) -> Result<AsymptoticCovariance> {
    let class = classify(dom);
    let (_, mut warnings) = matrix_b(spec, dom)?;
    match class {
        UrnClass::StrictlySmall => {
            let sigma_i = match method {
                SigmaMethod::Lyapunov => sigma_i_lyapunov(spec, dom)?,
                SigmaMethod::Quadrature => sigma_i_quadrature(spec, dom)?,
                SigmaMethod::CrossCheck => {
                    let lyap = sigma_i_lyapunov(spec, dom)?;
                    let quad = sigma_i_quadrature(spec, dom)?;
                    let diff = (&lyap - &quad).norm() / (1.0 + lyap.norm());
                    if diff > 1e-8 {
                        return Err(Error::Numeric(format!(
                            "Lyapunov and quadrature routes disagree: rel {diff:.3e}"
                        )));
                    }
                    lyap
                }
            };
            Ok(AsymptoticCovariance {
                class,
                normalization: "n".to_string(),
                limit: sigma_i * dom.lambda1,
                nu2: dom.nu2,
                warnings,
            })
        }
        UrnClass::CriticallySmall => {
            let half = dom.lambda1 / 2.0;
            let tol = 1e-7 * decomp.scale.max(1.0);
            // ν over the critical eigenvalues; clusters with smaller index
            // are annihilated by N^ν and drop out on their own.
            let nu = decomp
                .clusters
                .iter()
                .filter(|c| (c.lambda.re - half).abs() <= tol)
                .map(|c| c.nu)
                .max()
                .unwrap_or(0);
            let (b, _) = matrix_b(spec, dom)?;
            let bc = b.map(|x| Complex64::new(x, 0.0));
            let q = spec.q;
            let mut sum = DMatrix::<Complex64>::zeros(q, q);
            for c in decomp
                .clusters
                .iter()
                .filter(|c| (c.lambda.re - half).abs() <= tol)
            {
                let mut np = c.projection.clone();
                for _ in 0..nu {
                    np = &c.nilpotent * np;
                }
                sum += &np * &bc * np.adjoint();
            }
            let factorial: f64 = (1..=nu).map(|k| k as f64).product();
            let scale = dom.lambda1.powi(-2 * nu as i32)
                / ((2.0 * nu as f64 + 1.0) * factorial * factorial);
            let limit = realify(&(sum * Complex64::new(scale, 0.0)), 1e-8)?;
            if nu != dom.nu2 {
                warnings.push(format!(
                    "critical Jordan index {nu} differs from the leading cluster index {}",
                    dom.nu2
                ));
            }
            let normalization = if nu == 0 {
                "n*log(n)".to_string()
            } else {
                format!("n*log^{}(n)", 2 * nu + 1)
            };
            Ok(AsymptoticCovariance {
                class,
                normalization,
                limit: symmetrize(&limit),
                nu2: nu,
                warnings,
            })
        }
        UrnClass::Large => Err(Error::LargeUrn {
            re_lambda2: dom.lambda2.re,
            half_lambda1: dom.lambda1 / 2.0,
        }),
        UrnClass::NotApplicable(reason) => Err(Error::Numeric(reason)),
    }
}

/// Strong connectivity of the active colors under the intensity matrix
/// (edge j → i when A_ij ≠ 0).
pub fn irreducibility_check(spec: &UrnSpec) -> Result<bool> {
    let a = intensity_matrix(spec)?;
    let active: Vec<usize> = (0..spec.q).filter(|&i| spec.activities[i] > 0.0).collect();
    if active.is_empty() {
        return Ok(false);
    }
    let edge_tol = 1e-12;
    let reach = |forward: bool| -> usize {
        let mut seen = vec![false; spec.q];
        let mut stack = vec![active[0]];
        seen[active[0]] = true;
        let mut count = 1;
        while let Some(j) = stack.pop() {
            for &i in &active {
                let w = if forward { a[(i, j)] } else { a[(j, i)] };
                if !seen[i] && w.abs() > edge_tol {
                    seen[i] = true;
                    count += 1;
                    stack.push(i);
                }
            }
        }
        count
    };
    Ok(reach(true) == active.len() && reach(false) == active.len())
}

/// Outcome of probing a projection direction u for asymptotic degeneracy
/// of u'X_n.
#[derive(Debug, Clone)]
pub struct DegeneracyReport {
    /// u'Σu, the limit of Var(u'X_n)/n.
    pub variance: f64,
    pub degenerate: bool,
    /// max over colors i and atoms v of |u'P̂v|: zero iff u'P̂ξ_i = 0
    /// a.s. for every color, which (for irreducible strictly small urns)
    /// characterizes degeneracy: then A'P̂'u = 0, the covariance
    /// integrand vanishes for all s, and u'P̂X_n stays frozen at u'P̂X_0.
    pub structural_witness: f64,
    pub structurally_degenerate: bool,
    /// When degenerate, u'X_n/n converges to this constant.
    pub deterministic_value: Option<f64>,
}

pub fn degeneracy_test(spec: &UrnSpec, u: &DVector<f64>) -> Result<DegeneracyReport> {
    assert_eq!(u.len(), spec.q);
    if !irreducibility_check(spec)? {
        return Err(Error::IrreducibilityRequired);
    }
    let a = intensity_matrix(spec)?;
    let decomp = spectral_decomposition(&a, &SpectralOptions::default())?;
    let dom = dominant_eigendata(spec, &decomp)?;
    require_strictly_small(&dom)?;
    let sigma = sigma_i_lyapunov(spec, &dom)? * dom.lambda1;

    let variance = (u.transpose() * &sigma * u)[(0, 0)];
    let scale = (1.0 + sigma.norm()) * u.norm_squared().max(1e-300);
    let degenerate = variance < 1e-9 * scale;

    let pu = dom.phat.transpose() * u;
    let mut witness: f64 = 0.0;
    for dist in &spec.replacements {
        let dist = dist.as_ref().ok_or(Error::IncompleteSpec(1))?;
        for atom in &dist.atoms {
            witness = witness.max(pu.dot(&atom.v).abs());
        }
    }
    let structurally_degenerate = witness < 1e-9 * (1.0 + u.norm());

    let deterministic_value = if degenerate {
        Some(dom.lambda1 * u.dot(&dom.v1))
    } else {
        None
    };
    Ok(DegeneracyReport {
        variance,
        degenerate,
        structural_witness: witness,
        structurally_degenerate,
        deterministic_value,
    })
}
