//! Exact finite-n moments via the martingale decomposition
//! X_n = F_{0,n}X_0 + Σ_ℓ F_{ℓ,n}Y_ℓ: the propagation matrices F_{i,j}
//! (direct product and gamma-ratio evaluation), exact mean, and the
//! covariance by recursion or by the orthogonal sum formula.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{apply_entire_function, realify, SpectralDecomposition};
use crate::urn_model::{check_balance, second_moment_matrices, intensity_matrix, UrnSpec};

/// Default cap on n for the O(n·q³) recursions.
pub const N_CAP: usize = 100_000;

/// Exact first and second moments of the composition at time n.
#[derive(Debug, Clone)]
pub struct ExactMoments {
    pub n: usize,
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanMethod {
    Recursion,
    FMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovMethod {
    Recursion,
    SumFormula,
}

/// Shared ingredients of the moment recursions.
struct Kernel {
    a: DMatrix<f64>,
    b: f64,
    w0: f64,
    /// a_j·E(ξ_j ξ_j') per color.
    weighted_seconds: Vec<DMatrix<f64>>,
}

impl Kernel {
    fn new(spec: &UrnSpec) -> Result<Kernel> {
        let b = check_balance(spec)?;
        let a = intensity_matrix(spec)?;
        let seconds = second_moment_matrices(spec)?;
        let weighted_seconds = seconds
            .into_iter()
            .enumerate()
            .map(|(j, s)| s * spec.activities[j])
            .collect();
        Ok(Kernel {
            a,
            b,
            w0: spec.w0(),
            weighted_seconds,
        })
    }

    fn w(&self, k: usize) -> f64 {
        self.w0 + k as f64 * self.b
    }

    /// E(ΔX_k ΔX_k') given the mean composition at time k.
    fn delta_second(&self, mean: &DVector<f64>, k: usize) -> DMatrix<f64> {
        let w = self.w(k);
        let q = mean.len();
        self.weighted_seconds
            .iter()
            .enumerate()
            .fold(DMatrix::zeros(q, q), |acc, (j, s)| {
                acc + s * (mean[j] / w)
            })
    }
}

/// The ordered product F_{i,j} = Π_{i≤k<j} (I + A/w_k).
pub fn f_direct(spec: &UrnSpec, i: usize, j: usize) -> Result<DMatrix<f64>> {
    assert!(i <= j, "need i <= j");
    let kernel = Kernel::new(spec)?;
    let q = spec.q;
    let mut f = DMatrix::identity(q, q);
    for k in i..j {
        f = (&DMatrix::identity(q, q) + &kernel.a / kernel.w(k)) * f;
    }
    Ok(f)
}

/// Evaluate F_{i,j} through the gamma-ratio polynomial
/// f_{i,j}(z) = Γ(j+w0+z)Γ(i+w0) / (Γ(j+w0)Γ(i+w0+z)) and its derivatives
/// per eigenvalue cluster (internally on the urn rescaled to balance 1).
pub fn f_gamma(
    spec: &UrnSpec,
    decomp: &SpectralDecomposition,
    i: usize,
    j: usize,
) -> Result<DMatrix<f64>> {
    assert!(i <= j, "need i <= j");
    let b = check_balance(spec)?;
    let w0 = spec.w0() / b;

    let mut derivs: Vec<Vec<Complex64>> = Vec::with_capacity(decomp.clusters.len());
    for cluster in &decomp.clusters {
        let z = cluster.lambda / b;
        let order = cluster.nu;

        // f itself as a plain product; log-derivatives as power sums.
        let mut f0 = Complex64::new(1.0, 0.0);
        let mut log_derivs = vec![Complex64::new(0.0, 0.0); order + 1];
        for k in i..j {
            let base = k as f64 + w0;
            let shifted = base + z;
            // A vanishing factor is a zero of f, harmless for f itself, but
            // it blows up the log-derivative sums below.
            if order >= 1 && shifted.norm() < 1e-6 {
                return Err(Error::PoleProximity {
                    k,
                    value: format!("{shifted}"),
                });
            }
            f0 *= shifted / base;
            if order == 0 {
                continue;
            }
            let mut inv_pow = Complex64::new(1.0, 0.0);
            let mut sign_fact = 1.0;
            for m in 1..=order {
                inv_pow /= shifted;
                if m > 1 {
                    sign_fact *= -((m - 1) as f64);
                }
                log_derivs[m] += inv_pow * sign_fact;
            }
        }

        // Derivatives of f from derivatives of log f:
        // f^(m) = Σ_{r<m} C(m−1, r)·f^(r)·(log f)^(m−r).
        let mut fs = vec![f0; order + 1];
        for m in 1..=order {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut binom = 1.0;
            for r in 0..m {
                if r > 0 {
                    binom *= (m - r) as f64 / r as f64;
                }
                acc += fs[r] * log_derivs[m - r] * binom;
            }
            fs[m] = acc;
        }

        // Undo the balance rescale: g(λ) = f(λ/b), g^(m)(λ) = f^(m)(λ/b)/b^m.
        let mut scale = 1.0;
        for f in fs.iter_mut().skip(1) {
            scale *= b;
            *f /= scale;
        }
        derivs.push(fs);
    }

    let fc = apply_entire_function(decomp, &derivs)?;
    realify(&fc, 1e-8)
}

/// E X_n, either by the stepwise recursion or as F_{0,n}·X_0.
pub fn exact_mean(spec: &UrnSpec, n: usize, method: MeanMethod) -> Result<DVector<f64>> {
    match method {
        MeanMethod::FMatrix => Ok(f_direct(spec, 0, n)? * &spec.initial),
        MeanMethod::Recursion => {
            let kernel = Kernel::new(spec)?;
            let mut mean = spec.initial.clone();
            for k in 0..n {
                mean = &mean + &kernel.a * &mean / kernel.w(k);
            }
            Ok(mean)
        }
    }
}

/// Walks the coupled mean/second-moment recursion and exposes the
/// per-draw martingale covariances E(Y_i Y_i').
pub struct MomentRecursion {
    kernel: Kernel,
    /// Time index of the current state.
    pub k: usize,
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
}

impl MomentRecursion {
    pub fn new(spec: &UrnSpec) -> Result<MomentRecursion> {
        Ok(MomentRecursion {
            kernel: Kernel::new(spec)?,
            k: 0,
            mean: spec.initial.clone(),
            second_moment: &spec.initial * spec.initial.transpose(),
        })
    }

    /// E(Y_{k+1}Y_{k+1}') from the state at time k.
    pub fn next_y_covariance(&self) -> DMatrix<f64> {
        let w = self.kernel.w(self.k);
        let am = &self.kernel.a * &self.second_moment;
        self.kernel.delta_second(&self.mean, self.k)
            - &am * self.kernel.a.transpose() / (w * w)
    }

    /// Advance mean and second moment one draw.
    pub fn step(&mut self) {
        let w = self.kernel.w(self.k);
        let am = &self.kernel.a * &self.second_moment;
        self.second_moment = &self.second_moment
            + (&am + &am.transpose()) / w
            + self.kernel.delta_second(&self.mean, self.k);
        self.mean = &self.mean + &self.kernel.a * &self.mean / w;
        self.k += 1;
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second_moment - &self.mean * self.mean.transpose()
    }
}

/// E(Y_i Y_i') for a single draw index i ≥ 1.
pub fn y_covariance(spec: &UrnSpec, i: usize) -> Result<DMatrix<f64>> {
    assert!(i >= 1, "draw indices start at 1");
    let mut rec = MomentRecursion::new(spec)?;
    for _ in 0..(i - 1) {
        rec.step();
    }
    Ok(rec.next_y_covariance())
}

/// Exact mean, second moment and covariance at time n.
pub fn exact_covariance(spec: &UrnSpec, n: usize, method: CovMethod) -> Result<ExactMoments> {
    if n > N_CAP {
        return Err(Error::CapExceeded { n, cap: N_CAP });
    }
    match method {
        CovMethod::Recursion => {
            let mut rec = MomentRecursion::new(spec)?;
            for _ in 0..n {
                rec.step();
            }
            Ok(ExactMoments {
                n,
                covariance: rec.covariance(),
                mean: rec.mean,
                second_moment: rec.second_moment,
            })
        }
        CovMethod::SumFormula => {
            // Var(X_n) = Σ_i F_{i,n} E(Y_iY_i') F_{i,n}'.
            let q = spec.q;
            let mut rec = MomentRecursion::new(spec)?;
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                ys.push(rec.next_y_covariance());
                rec.step();
            }
            let kernel = Kernel::new(spec)?;
            let identity = DMatrix::identity(q, q);
            let mut f = identity.clone();
            let mut var = DMatrix::zeros(q, q);
            for i in (1..=n).rev() {
                var += &f * &ys[i - 1] * f.transpose();
                f *= &identity + &kernel.a / kernel.w(i - 1);
            }
            let mean = &f * &spec.initial; // f is now F_{0,n}
            let second = &var + &mean * mean.transpose();
            Ok(ExactMoments {
                n,
                mean,
                second_moment: second,
                covariance: var,
            })
        }
    }
}

/// Per-draw variance contributions tr(F_{ℓ,n} E(Y_ℓY_ℓ') F_{ℓ,n}') for the
/// requested draw indices.
pub fn contribution_profile(
    spec: &UrnSpec,
    n: usize,
    grid: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if n > N_CAP {
        return Err(Error::CapExceeded { n, cap: N_CAP });
    }
    assert!(grid.iter().all(|&l| (1..=n).contains(&l)));
    let q = spec.q;
    let mut wanted: Vec<usize> = grid.to_vec();
    wanted.sort_unstable();
    wanted.dedup();

    let mut rec = MomentRecursion::new(spec)?;
    let mut ys: std::collections::HashMap<usize, DMatrix<f64>> = Default::default();
    for k in 0..n {
        if wanted.binary_search(&(k + 1)).is_ok() {
            ys.insert(k + 1, rec.next_y_covariance());
        }
        rec.step();
    }

    let kernel = Kernel::new(spec)?;
    let identity = DMatrix::identity(q, q);
    let mut f = identity.clone();
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(wanted.len());
    for l in (1..=n).rev() {
        if let Some(y) = ys.get(&l) {
            let contribution = (&f * y * f.transpose()).trace();
            out.push((l, contribution));
        }
        f *= &identity + &kernel.a / kernel.w(l - 1);
    }
    out.reverse();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;
    use crate::spectral::{spectral_decomposition, SpectralOptions};
    use crate::urn_model::parse_urn;
    use approx::assert_relative_eq;

    fn friedman() -> UrnSpec {
        parse_urn(corpus::FRIEDMAN).unwrap()
    }

    #[test]
    fn f_empty_product_is_identity() {
        let f = f_direct(&friedman(), 7, 7).unwrap();
        assert_eq!(f, DMatrix::identity(2, 2));
    }

    #[test]
    fn f_first_step_friedman() {
        let f = f_direct(&friedman(), 0, 1).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert!((f - expect).norm() < 1e-15);
    }

    #[test]
    fn f_semigroup_property() {
        for spec in corpus::complete_specs() {
            let f05 = f_direct(&spec, 0, 5).unwrap();
            let f03 = f_direct(&spec, 0, 3).unwrap();
            let f35 = f_direct(&spec, 3, 5).unwrap();
            assert!((f35 * f03 - f05).norm() < 1e-12, "{}", spec.name);
        }
    }

    #[test]
    fn f_gamma_matches_direct_first_step() {
        let spec = friedman();
        let a = intensity_matrix(&spec).unwrap();
        let d = spectral_decomposition(&a, &SpectralOptions::default()).unwrap();
        let g = f_gamma(&spec, &d, 0, 1).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert!((g - expect).norm() < 1e-12);
    }

    #[test]
    fn f_gamma_matches_direct_on_corpus() {
        let pairs = [(0usize, 1usize), (0, 17), (10, 1000), (3, 250), (999, 1000)];
        for spec in corpus::complete_specs() {
            let a = intensity_matrix(&spec).unwrap();
            let d = spectral_decomposition(&a, &SpectralOptions::default()).unwrap();
            for &(i, j) in &pairs {
                let direct = f_direct(&spec, i, j).unwrap();
                let gamma = f_gamma(&spec, &d, i, j).unwrap();
                let rel = (&gamma - &direct).norm() / direct.norm();
                assert!(rel < 1e-8, "{} ({i},{j}): rel err {rel:.3e}", spec.name);
            }
        }
    }

    #[test]
    fn f_dominant_action() {
        // F_{i,j}·P1 = ((j+w0)/(i+w0))·P1 when the balance is 1.
        let spec = friedman();
        let a = intensity_matrix(&spec).unwrap();
        let d = spectral_decomposition(&a, &SpectralOptions::default()).unwrap();
        let dom = crate::spectral::dominant_eigendata(&spec, &d).unwrap();
        let (i, j) = (4usize, 77usize);
        let f = f_direct(&spec, i, j).unwrap();
        let lhs = &f * &dom.p1;
        let factor = (j as f64 + spec.w0()) / (i as f64 + spec.w0());
        assert!((lhs - &dom.p1 * factor).norm() < 1e-10);
    }

    #[test]
    fn mean_friedman_one_step() {
        let m = exact_mean(&friedman(), 1, MeanMethod::Recursion).unwrap();
        assert!((m - DVector::from_vec(vec![1.5, 1.5])).norm() < 1e-15);
    }

    #[test]
    fn mean_n0_is_initial() {
        for spec in corpus::complete_specs() {
            let m = exact_mean(&spec, 0, MeanMethod::FMatrix).unwrap();
            assert_eq!(m, spec.initial);
        }
    }

    #[test]
    fn mean_methods_agree_and_respect_balance() {
        for spec in corpus::complete_specs() {
            let b = check_balance(&spec).unwrap();
            for n in [1usize, 10, 123] {
                let m1 = exact_mean(&spec, n, MeanMethod::Recursion).unwrap();
                let m2 = exact_mean(&spec, n, MeanMethod::FMatrix).unwrap();
                let rel = (&m1 - &m2).norm() / m1.norm();
                assert!(rel < 1e-10, "{} n={n}", spec.name);
                let w_n = spec.w0() + n as f64 * b;
                assert_relative_eq!(spec.activities.dot(&m1), w_n, epsilon = 1e-9 * w_n);
            }
        }
    }

    #[test]
    fn covariance_n0_is_zero() {
        for spec in corpus::complete_specs() {
            let em = exact_covariance(&spec, 0, CovMethod::Recursion).unwrap();
            assert!(em.covariance.norm() < 1e-14);
        }
    }

    #[test]
    fn covariance_friedman_one_step() {
        let em = exact_covariance(&friedman(), 1, CovMethod::Recursion).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((em.covariance - expect).norm() < 1e-14);
    }

    #[test]
    fn covariance_routes_agree() {
        for spec in corpus::complete_specs() {
            let n = 200;
            let rec = exact_covariance(&spec, n, CovMethod::Recursion).unwrap();
            let sum = exact_covariance(&spec, n, CovMethod::SumFormula).unwrap();
            let scale = rec.covariance.norm().max(1e-12);
            let rel = (&rec.covariance - &sum.covariance).norm() / scale;
            assert!(rel < 1e-9, "{}: rel err {rel:.3e}", spec.name);
        }
    }

    #[test]
    fn covariance_kills_activity_direction() {
        for spec in corpus::complete_specs() {
            let em = exact_covariance(&spec, 150, CovMethod::Recursion).unwrap();
            let a = &spec.activities;
            let val = (a.transpose() * &em.covariance * a)[(0, 0)];
            let scale = em.covariance.norm().max(1.0) * a.norm_squared();
            assert!(val.abs() < 1e-10 * scale, "{}: a'Va = {val:.3e}", spec.name);
        }
    }

    #[test]
    fn y_covariance_friedman() {
        let y1 = y_covariance(&friedman(), 1).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]);
        assert!((y1 - expect).norm() < 1e-14);
        // a'·E(Y_iY_i')·a = 0.
        let spec = friedman();
        for i in [1usize, 5, 50] {
            let y = y_covariance(&spec, i).unwrap();
            let v = (spec.activities.transpose() * y * &spec.activities)[(0, 0)];
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn cap_is_enforced() {
        assert!(matches!(
            exact_covariance(&friedman(), N_CAP + 1, CovMethod::Recursion),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn contribution_profile_sums_to_variance() {
        let spec = friedman();
        let n = 100;
        let grid: Vec<usize> = (1..=n).collect();
        let profile = contribution_profile(&spec, n, &grid).unwrap();
        let total: f64 = profile.iter().map(|&(_, c)| c).sum();
        let em = exact_covariance(&spec, n, CovMethod::Recursion).unwrap();
        assert_relative_eq!(total, em.covariance.trace(), max_relative = 1e-8);
        // ℓ = n has F = I, so its contribution is tr E(Y_nY_n').
        let last = profile.last().unwrap();
        assert_eq!(last.0, n);
        assert_relative_eq!(last.1, y_covariance(&spec, n).unwrap().trace(), max_relative = 1e-10);
    }
}
