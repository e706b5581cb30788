//! Eigenvalue clusters of the intensity matrix: spectral projections,
//! nilpotent parts, dominant eigendata and the small/large classification.
//!
//! The route is a real Schur decomposition, conversion to complex triangular
//! form, unitary reordering so clustered eigenvalues are contiguous, and
//! block decoupling via triangular Sylvester solves. Projections come out as
//! column/row blocks of the resulting similarity, which avoids an explicit
//! Jordan form.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::urn_model::{check_balance, UrnSpec};

/// Scale-aware threshold deciding when a nilpotent power counts as zero.
pub const NU_TOL: f64 = 1e-8;

/// One eigenvalue cluster with its spectral projection and nilpotent part.
#[derive(Debug, Clone)]
pub struct EigenCluster {
    pub lambda: Complex64,
    pub multiplicity: usize,
    /// Spectral projection P onto the cluster's generalized eigenspace.
    pub projection: DMatrix<Complex64>,
    /// Nilpotent part N = A·P − λ·P.
    pub nilpotent: DMatrix<Complex64>,
    /// Largest m with N^m numerically nonzero.
    pub nu: usize,
}

/// Spectral decomposition of an intensity matrix into eigenvalue clusters,
/// ordered by decreasing real part, ties broken by decreasing ν.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub matrix: DMatrix<f64>,
    pub clusters: Vec<EigenCluster>,
    /// Norm of the matrix, used to scale tolerances.
    pub scale: f64,
}

/// Dominant eigendata of a balanced urn: λ1 = b with u1 = a and a·v1 = 1.
#[derive(Debug, Clone)]
pub struct Dominant {
    pub lambda1: f64,
    pub u1: DVector<f64>,
    pub v1: DVector<f64>,
    /// P1 = v1·u1'.
    pub p1: DMatrix<f64>,
    /// Complement projection I − P1.
    pub phat: DMatrix<f64>,
    pub lambda2: Complex64,
    pub nu2: usize,
    pub warnings: Vec<String>,
}

/// Small/large classification from the two leading eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub enum UrnClass {
    StrictlySmall,
    CriticallySmall,
    Large,
    NotApplicable(String),
}

impl std::fmt::Display for UrnClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UrnClass::StrictlySmall => write!(f, "strictly small"),
            UrnClass::CriticallySmall => write!(f, "critically small"),
            UrnClass::Large => write!(f, "large"),
            UrnClass::NotApplicable(reason) => write!(f, "not applicable ({reason})"),
        }
    }
}

/// Tunables for the decomposition.
#[derive(Debug, Clone)]
pub struct SpectralOptions {
    /// Eigenvalues closer than this are merged into one cluster.
    /// `None` uses 1e-7·‖A‖.
    pub cluster_tol: Option<f64>,
    /// Error out when a projection norm exceeds this bound.
    pub projection_norm_bound: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            cluster_tol: None,
            projection_norm_bound: 1e8,
        }
    }
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Realify a matrix whose imaginary part must be numerical noise.
pub fn realify(m: &DMatrix<Complex64>, tol: f64) -> Result<DMatrix<f64>> {
    let max_im = m.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let scale = 1.0 + m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max_im > tol * scale {
        return Err(Error::Numeric(format!(
            "imaginary residue {max_im:.3e} exceeds {:.3e}",
            tol * scale
        )));
    }
    Ok(m.map(|z| z.re))
}

/// Convert a real Schur form (T quasi-triangular, U orthogonal) to a complex
/// upper-triangular form by rotating away the 2×2 blocks.
fn rsf2csf(
    t_real: &DMatrix<f64>,
    u_real: &DMatrix<f64>,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = t_real.nrows();
    let mut t = to_complex(t_real);
    let mut u = to_complex(u_real);
    for m in (1..n).rev() {
        let sub = t[(m, m - 1)];
        if sub.norm() > f64::EPSILON * (t[(m - 1, m - 1)].norm() + t[(m, m)].norm()) {
            let t11 = t[(m - 1, m - 1)];
            let t12 = t[(m - 1, m)];
            let t21 = t[(m, m - 1)];
            let t22 = t[(m, m)];
            let tr = t11 + t22;
            let det = t11 * t22 - t12 * t21;
            let disc = (tr * tr - det * 4.0).sqrt();
            let mu = (tr + disc) * 0.5 - t22;
            let r = (mu.norm_sqr() + t21.norm_sqr()).sqrt();
            let c = mu / r;
            let s = t21 / r;
            // G = [[c*, s],[-s*, c]] is unitary; G·T·G^H triangularizes the block.
            let (g11, g12, g21, g22) = (c.conj(), s, -s.conj(), c);
            for j in (m - 1)..n {
                let (a, b) = (t[(m - 1, j)], t[(m, j)]);
                t[(m - 1, j)] = g11 * a + g12 * b;
                t[(m, j)] = g21 * a + g22 * b;
            }
            for i in 0..=m {
                let (a, b) = (t[(i, m - 1)], t[(i, m)]);
                t[(i, m - 1)] = a * g11.conj() + b * g12.conj();
                t[(i, m)] = a * g21.conj() + b * g22.conj();
            }
            for i in 0..n {
                let (a, b) = (u[(i, m - 1)], u[(i, m)]);
                u[(i, m - 1)] = a * g11.conj() + b * g12.conj();
                u[(i, m)] = a * g21.conj() + b * g22.conj();
            }
        }
        t[(m, m - 1)] = Complex64::new(0.0, 0.0);
    }
    (t, u)
}

/// Swap the diagonal entries at positions k, k+1 of a complex triangular T by
/// a unitary similarity, updating U accordingly.
fn swap_adjacent(t: &mut DMatrix<Complex64>, u: &mut DMatrix<Complex64>, k: usize) {
    let n = t.nrows();
    let x1 = t[(k, k + 1)];
    let x2 = t[(k + 1, k + 1)] - t[(k, k)];
    let r = (x1.norm_sqr() + x2.norm_sqr()).sqrt();
    if r < f64::EPSILON {
        return;
    }
    // Unitary G whose first column is the (normalized) eigenvector of the
    // 2×2 block for its lower eigenvalue; G^H·T·G swaps the diagonal.
    let c1 = x1 / r;
    let c2 = x2 / r;
    let (g11, g12, g21, g22) = (c1, -c2.conj(), c2, c1.conj());
    for j in k..n {
        let (a, b) = (t[(k, j)], t[(k + 1, j)]);
        t[(k, j)] = g11.conj() * a + g21.conj() * b;
        t[(k + 1, j)] = g12.conj() * a + g22.conj() * b;
    }
    for i in 0..(k + 2).min(n) {
        let (a, b) = (t[(i, k)], t[(i, k + 1)]);
        t[(i, k)] = a * g11 + b * g21;
        t[(i, k + 1)] = a * g12 + b * g22;
    }
    for i in 0..n {
        let (a, b) = (u[(i, k)], u[(i, k + 1)]);
        u[(i, k)] = a * g11 + b * g21;
        u[(i, k + 1)] = a * g12 + b * g22;
    }
    t[(k + 1, k)] = Complex64::new(0.0, 0.0);
}

/// Solve T11·X − X·T22 = C with T11, T22 upper triangular and disjoint spectra.
fn sylvester_triangular(
    t11: &DMatrix<Complex64>,
    t22: &DMatrix<Complex64>,
    c: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>> {
    let m = t11.nrows();
    let p = t22.nrows();
    let mut x = DMatrix::<Complex64>::zeros(m, p);
    for j in 0..p {
        let mut rhs = c.column(j).clone_owned();
        for l in 0..j {
            rhs += x.column(l) * t22[(l, j)];
        }
        // Back substitution on (T11 − t22[j,j]·I).
        let shift = t22[(j, j)];
        for i in (0..m).rev() {
            let mut acc = rhs[i];
            for l in (i + 1)..m {
                acc -= t11[(i, l)] * x[(l, j)];
            }
            let diag = t11[(i, i)] - shift;
            if diag.norm() < f64::EPSILON {
                return Err(Error::Numeric(
                    "coincident eigenvalues across clusters in Sylvester solve".to_string(),
                ));
            }
            x[(i, j)] = acc / diag;
        }
    }
    Ok(x)
}

/// Union-find clustering of eigenvalues within `tol` of each other.
fn cluster_ids(eigs: &[Complex64], tol: f64) -> Vec<usize> {
    let n = eigs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (eigs[i] - eigs[j]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut ids = vec![0usize; n];
    let mut next = 0;
    let mut map: std::collections::HashMap<usize, usize> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        let id = *map.entry(root).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        ids[i] = id;
    }
    ids
}

/// Compute the eigenvalue clusters of `a` with projections and nilpotents.
pub fn spectral_decomposition(
    a: &DMatrix<f64>,
    options: &SpectralOptions,
) -> Result<SpectralDecomposition> {
    let q = a.nrows();
    assert_eq!(q, a.ncols(), "intensity matrix must be square");
    let scale = a.norm().max(1e-300);
    let cluster_tol = options.cluster_tol.unwrap_or(1e-7 * scale);

    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("Schur iteration did not converge".to_string()))?;
    let (u_real, t_real) = schur.unpack();
    let (mut t, mut u) = rsf2csf(&t_real, &u_real);

    let eigs: Vec<Complex64> = (0..q).map(|i| t[(i, i)]).collect();
    let ids = cluster_ids(&eigs, cluster_tol);
    let n_clusters = ids.iter().max().unwrap() + 1;

    // Cluster representatives (means) and ambiguity check.
    let mut reps = vec![Complex64::new(0.0, 0.0); n_clusters];
    let mut counts = vec![0usize; n_clusters];
    for (i, &id) in ids.iter().enumerate() {
        reps[id] += eigs[i];
        counts[id] += 1;
    }
    for id in 0..n_clusters {
        reps[id] /= counts[id] as f64;
    }
    for i in 0..q {
        for j in (i + 1)..q {
            if ids[i] != ids[j] {
                let gap = (eigs[i] - eigs[j]).norm();
                if gap < 10.0 * cluster_tol {
                    return Err(Error::ClusteringAmbiguous {
                        gap,
                        tol: cluster_tol,
                    });
                }
            }
        }
    }

    // Rank clusters by decreasing real part (ν refines the order later).
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.sort_by(|&i, &j| {
        reps[j]
            .re
            .partial_cmp(&reps[i].re)
            .unwrap()
            .then(reps[j].im.partial_cmp(&reps[i].im).unwrap())
    });
    let mut rank = vec![0usize; n_clusters];
    for (r, &id) in order.iter().enumerate() {
        rank[id] = r;
    }
    let mut pos_rank: Vec<usize> = ids.iter().map(|&id| rank[id]).collect();

    // Bubble the diagonal into contiguous, rank-sorted clusters.
    loop {
        let mut swapped = false;
        for k in 0..q.saturating_sub(1) {
            if pos_rank[k] > pos_rank[k + 1] {
                swap_adjacent(&mut t, &mut u, k);
                pos_rank.swap(k, k + 1);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }

    // Block-decouple via Sylvester solves: S⁻¹·T·S is block diagonal.
    let sizes: Vec<usize> = order.iter().map(|&id| counts[id]).collect();
    let mut s = DMatrix::<Complex64>::identity(q, q);
    let mut tt = t.clone();
    let mut start = 0;
    for &m in sizes.iter().take(sizes.len().saturating_sub(1)) {
        let rest = q - start - m;
        let t11 = tt.view((start, start), (m, m)).clone_owned();
        let t22 = tt.view((start + m, start + m), (rest, rest)).clone_owned();
        let c = -tt.view((start, start + m), (m, rest)).clone_owned();
        let x = sylvester_triangular(&t11, &t22, &c)?;
        let mut e = DMatrix::<Complex64>::identity(q, q);
        e.view_mut((start, start + m), (m, rest)).copy_from(&x);
        let mut e_inv = DMatrix::<Complex64>::identity(q, q);
        e_inv.view_mut((start, start + m), (m, rest)).copy_from(&(-&x));
        tt = &e_inv * &tt * &e;
        s *= e;
        start += m;
    }

    let v = &u * &s;
    let v_inv = v
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("similarity matrix is singular".to_string()))?;

    let ac = to_complex(a);
    let mut clusters = Vec::with_capacity(n_clusters);
    let mut offset = 0;
    for (block, &id) in order.iter().enumerate() {
        let m = sizes[block];
        let lambda = reps[id];
        let cols = v.columns(offset, m).clone_owned();
        let rows = v_inv.rows(offset, m).clone_owned();
        let projection = &cols * &rows;
        let pnorm = projection.norm();
        if pnorm > options.projection_norm_bound {
            return Err(Error::IllConditioned {
                norm: pnorm,
                bound: options.projection_norm_bound,
            });
        }
        let nilpotent = &ac * &projection - &projection * lambda;
        // ν is the largest power of N that stays above the noise floor.
        let mut nu = 0;
        let mut power = nilpotent.clone();
        let mut threshold = NU_TOL * scale;
        for mth in 1..m {
            if power.norm() > threshold {
                nu = mth;
            }
            power = &power * &nilpotent;
            threshold *= scale;
        }
        clusters.push(EigenCluster {
            lambda,
            multiplicity: m,
            projection,
            nilpotent,
            nu,
        });
        offset += m;
    }

    // Canonical ordering: decreasing Re λ, ties by decreasing ν.
    clusters.sort_by(|x, y| {
        y.lambda
            .re
            .partial_cmp(&x.lambda.re)
            .unwrap()
            .then(y.nu.cmp(&x.nu))
            .then(y.lambda.im.partial_cmp(&x.lambda.im).unwrap())
    });

    Ok(SpectralDecomposition {
        matrix: a.clone(),
        clusters,
        scale,
    })
}

impl SpectralDecomposition {
    /// Σ_λ (λ·P_λ + N_λ), which must reproduce the matrix.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let q = self.matrix.nrows();
        self.clusters
            .iter()
            .fold(DMatrix::zeros(q, q), |acc, c| {
                acc + &c.projection * c.lambda + &c.nilpotent
            })
    }
}

/// Evaluate Σ_λ Σ_m f⁽ᵐ⁾(λ)/m!·N^m·P for caller-supplied derivative values.
///
/// `f_derivatives[k][m]` is f⁽ᵐ⁾(λ_k) for the k-th cluster of `decomp`,
/// required for m = 0..=ν_k.
pub fn apply_entire_function(
    decomp: &SpectralDecomposition,
    f_derivatives: &[Vec<Complex64>],
) -> Result<DMatrix<Complex64>> {
    let q = decomp.matrix.nrows();
    if f_derivatives.len() != decomp.clusters.len() {
        return Err(Error::MissingDerivatives {
            lambda: "<all>".to_string(),
            need: decomp.clusters.len(),
            got: f_derivatives.len(),
        });
    }
    let mut out = DMatrix::<Complex64>::zeros(q, q);
    for (cluster, derivs) in decomp.clusters.iter().zip(f_derivatives) {
        if derivs.len() < cluster.nu + 1 {
            return Err(Error::MissingDerivatives {
                lambda: format!("{}", cluster.lambda),
                need: cluster.nu + 1,
                got: derivs.len(),
            });
        }
        let mut n_power = cluster.projection.clone(); // N^0·P = P
        let mut factorial = 1.0;
        for (m, fm) in derivs.iter().take(cluster.nu + 1).enumerate() {
            if m > 0 {
                factorial *= m as f64;
                n_power = &n_power * &cluster.nilpotent;
            }
            out += &n_power * (fm / factorial);
        }
    }
    Ok(out)
}

/// Verify λ1 = b, extract u1 = a and the normalized right eigenvector v1.
pub fn dominant_eigendata(spec: &UrnSpec, decomp: &SpectralDecomposition) -> Result<Dominant> {
    let b = check_balance(spec)?;
    let tol = 1e-7 * decomp.scale.max(1.0);
    let mut warnings = Vec::new();

    let lambda_max = decomp
        .clusters
        .iter()
        .map(|c| c.lambda.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if lambda_max > b + tol {
        return Err(Error::DominantMismatch { lambda_max, b });
    }

    let dominant_idx = decomp
        .clusters
        .iter()
        .position(|c| (c.lambda - b).norm() <= tol)
        .ok_or_else(|| Error::Numeric(format!("no eigenvalue cluster at b = {b}")))?;
    let dom = &decomp.clusters[dominant_idx];
    if dom.multiplicity > 1 || dom.nu > 0 {
        return Err(Error::DominantNotSimple {
            b,
            multiplicity: dom.multiplicity,
        });
    }
    for (i, c) in decomp.clusters.iter().enumerate() {
        if i != dominant_idx && (c.lambda.re - b).abs() <= tol {
            // Classification is still defined here, but the limit theory
            // is not guaranteed; report rather than assume.
            warnings.push(format!(
                "complex eigenvalue {} shares the dominant real part {b}",
                c.lambda
            ));
        }
    }

    let realify_tol = 1e-8;
    let p1_raw = realify(&dom.projection, realify_tol)?;
    let ones = DVector::from_element(spec.q, 1.0);
    let total_activity: f64 = spec.activities.sum();
    let mut v1 = &p1_raw * &ones / total_activity;
    let norm = spec.activities.dot(&v1);
    if norm.abs() < 1e-12 {
        return Err(Error::Numeric("degenerate dominant eigenvector".to_string()));
    }
    v1 /= norm;
    let p1 = &v1 * spec.activities.transpose();
    let phat = DMatrix::identity(spec.q, spec.q) - &p1;

    let second = decomp
        .clusters
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != dominant_idx)
        .map(|(_, c)| c)
        .next()
        .ok_or_else(|| Error::Numeric("urn has a single eigenvalue cluster".to_string()))?;

    Ok(Dominant {
        lambda1: b,
        u1: spec.activities.clone(),
        v1,
        p1,
        phat,
        lambda2: second.lambda,
        nu2: second.nu,
        warnings,
    })
}

/// Classify the urn from its two leading eigenvalues.
pub fn classify(dominant: &Dominant) -> UrnClass {
    let tol = 1e-9 * dominant.lambda1;
    let half = dominant.lambda1 / 2.0;
    let re2 = dominant.lambda2.re;
    if re2 < half - tol {
        UrnClass::StrictlySmall
    } else if re2 <= half + tol {
        UrnClass::CriticallySmall
    } else {
        UrnClass::Large
    }
}

/// Classification that folds dominant-check failures into `NotApplicable`.
pub fn classify_urn(spec: &UrnSpec, decomp: &SpectralDecomposition) -> UrnClass {
    match dominant_eigendata(spec, decomp) {
        Ok(dom) => classify(&dom),
        Err(e) => UrnClass::NotApplicable(e.to_string()),
    }
}
