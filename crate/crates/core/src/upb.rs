//! Extraction and verification of the generalized-UPB structure of a density
//! matrix: product vectors in a subspace, coefficient fitting for the kernel
//! projection, projection-form checks for rho and rho^P, and the associated
//! trace/rank diagnostics.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bipartite::{
    expected_rank, hermitian_rank, orthonormal_complement, upb_counts, BipartiteDims,
    DensityMatrix, GeneralizedUPB, ProductVector,
};
use crate::herm::{
    eig_hermitian, partial_transpose, vectorize_raw, CMat, CVec, HermitianMatrix, RMat,
};
use crate::{tol, Error, Result};

/// Multi-start finder configuration.
#[derive(Debug, Clone, Copy)]
pub struct FinderConfig {
    /// Number of random starts.
    pub starts: usize,
    /// A local minimum with objective below this is declared a root
    /// (f = ||(1 - Pi_V) psi||^2, so 1e-16 corresponds to a 1e-8 residual).
    pub local_tol: f64,
    /// Overlap |<psi_i|psi_j>| above which two roots are identified.
    pub dedupe_overlap: f64,
    pub max_local_iters: usize,
    pub seed: u64,
}

impl Default for FinderConfig {
    fn default() -> Self {
        Self {
            starts: 2000,
            local_tol: 1e-16,
            dedupe_overlap: 1.0 - 1e-6,
            max_local_iters: 400,
            seed: 1,
        }
    }
}

impl FinderConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Result of fitting the coefficients of Q = d sum_k p_k psi_k psi_k^dag.
#[derive(Debug, Clone)]
pub struct PFitReport {
    pub p: Vec<f64>,
    /// Frobenius norm of the fit residual.
    pub residual: f64,
    pub negative_count: usize,
    /// Set when the dyads are linearly dependent and the minimum-norm
    /// solution was returned.
    pub non_unique: bool,
}

fn random_unit_cvec<R: Rng>(n: usize, rng: &mut R) -> CVec {
    let mut v = CVec::zeros(n);
    for i in 0..n {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        v[i] = Complex::new(re, im);
    }
    let norm = v.norm();
    v / Complex::new(norm, 0.0)
}

fn min_eigvec(h: &CMat) -> (f64, CVec) {
    let spec = eig_hermitian(&HermitianMatrix::hermitize(h));
    (
        spec.eigenvalues[0],
        spec.eigenvectors.column(0).into_owned(),
    )
}

/// Search for product vectors phi (x) chi lying in the subspace spanned by
/// the orthonormal columns of `subspace`. Returns the deduplicated roots and
/// a partial-result warning flag, set when the subspace is a kernel of the
/// canonical dimension but fewer than the expected number of roots was found.
///
/// Each start alternates exact minimizations of
/// f(phi, chi) = ||(1 - Pi_V)(phi (x) chi)||^2 over the unit spheres of the
/// two factors (the smallest-eigenvector step of a quadratic form); roots of
/// f are exactly the product vectors in the subspace.
pub fn find_product_vectors(
    subspace: &CMat,
    dims: BipartiteDims,
    config: &FinderConfig,
) -> Result<(Vec<ProductVector>, bool)> {
    let n = dims.total();
    let d = subspace.ncols();
    if subspace.nrows() != n || d == 0 || d >= n {
        return Err(Error::DimMismatch(format!(
            "subspace is {}x{}, system dimension {}",
            subspace.nrows(),
            d,
            n
        )));
    }
    let complement = orthonormal_complement(subspace, tol::RANK_CUTOFF);
    let roots = product_roots_orthogonal_to(&complement, dims, config);
    let warning = d == n - expected_rank(dims) && roots.len() < upb_counts(dims).0;
    Ok((roots, warning))
}

/// Product vectors orthogonal to all columns of `constraints`.
fn product_roots_orthogonal_to(
    constraints: &CMat,
    dims: BipartiteDims,
    config: &FinderConfig,
) -> Vec<ProductVector> {
    let (na, nb) = (dims.na, dims.nb);
    let ncon = constraints.ncols();
    // constraint vectors reshaped to nA x nB matrices, conjugated
    let mut umats = Vec::with_capacity(ncon);
    for j in 0..ncon {
        let mut u = CMat::zeros(na, nb);
        for a in 0..na {
            for b in 0..nb {
                u[(a, b)] = constraints[(a * nb + b, j)].conj();
            }
        }
        umats.push(u);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut found: Vec<(CVec, ProductVector)> = Vec::new();
    for start in 0..config.starts {
        let (mut phi, mut chi) = if start % 2 == 0 {
            (random_unit_cvec(na, &mut rng), random_unit_cvec(nb, &mut rng))
        } else {
            // adapted start: random vector in the target subspace, reshaped
            // to nA x nB; its top singular pair is the nearest product vector
            let mut v = random_unit_cvec(na * nb, &mut rng);
            for j in 0..ncon {
                let c = constraints.column(j);
                let overlap = c.dotc(&v);
                v -= CVec::from_iterator(na * nb, c.iter().map(|&x| x * overlap));
            }
            let norm = v.norm();
            if norm < 1e-12 {
                (random_unit_cvec(na, &mut rng), random_unit_cvec(nb, &mut rng))
            } else {
                v /= Complex::new(norm, 0.0);
                let mut m = CMat::zeros(na, nb);
                for a in 0..na {
                    for b in 0..nb {
                        m[(a, b)] = v[a * nb + b];
                    }
                }
                let svd = m.svd(true, true);
                let u = svd.u.as_ref().unwrap();
                let vt = svd.v_t.as_ref().unwrap();
                let phi = u.column(0).into_owned();
                let chi = CVec::from_iterator(nb, vt.row(0).iter().cloned());
                (phi, chi)
            }
        };
        let mut f_prev = f64::INFINITY;
        for iter in 0..config.max_local_iters {
            // rows of the chi-constraint matrix: m_j = phi^T U_j
            let mut gb = CMat::zeros(nb, nb);
            for u in &umats {
                let row = u.transpose() * &phi; // length nb, entries sum_a phi_a U[a,b]
                for b in 0..nb {
                    for bp in 0..nb {
                        gb[(b, bp)] += row[b].conj() * row[bp];
                    }
                }
            }
            let (_, c) = min_eigvec(&gb);
            chi = c;
            let mut ga = CMat::zeros(na, na);
            for u in &umats {
                let col = u * &chi; // length na, entries sum_b U[a,b] chi_b
                for a in 0..na {
                    for ap in 0..na {
                        ga[(a, ap)] += col[a].conj() * col[ap];
                    }
                }
            }
            let (f, p) = min_eigvec(&ga);
            phi = p;
            // once below the acceptance tolerance, keep polishing to the
            // machine floor so downstream transformations of the root do not
            // amplify the residual error
            if f < 1e-28 || (f < config.local_tol && f > 0.25 * f_prev) {
                break;
            }
            // stuck at a nonzero local minimum
            if iter > 20 && f > 1e-10 && (f_prev - f).abs() < 1e-3 * f {
                break;
            }
            f_prev = f;
        }
        newton_refine_root(&umats, &mut phi, &mut chi);
        // final objective
        let pv = ProductVector::new(phi.clone(), chi.clone()).unwrap();
        let psi = pv.kron();
        let mut f = 0.0;
        for j in 0..ncon {
            f += constraints.column(j).dotc(&psi).norm_sqr();
        }
        if f < config.local_tol {
            let dup = found
                .iter()
                .any(|(other, _)| other.dotc(&psi).norm() > config.dedupe_overlap);
            if !dup {
                found.push((psi, pv));
            }
        }
    }
    found.into_iter().map(|(_, pv)| pv).collect()
}

/// Newton refinement of a near-root (phi, chi). The overlaps
/// c_j = phi^T U_j chi are bilinear, hence holomorphic in the factors, so a
/// minimum-norm complex Newton step converges quadratically where the
/// alternating eigenvector scheme only converges linearly and can stall near
/// degenerate roots.
fn newton_refine_root(umats: &[CMat], phi: &mut CVec, chi: &mut CVec) {
    let na = phi.len();
    let nb = chi.len();
    let ncon = umats.len();
    if ncon == 0 {
        return;
    }
    for _ in 0..20 {
        let mut c = CVec::zeros(ncon);
        let mut jac = CMat::zeros(ncon, na + nb);
        for (j, u) in umats.iter().enumerate() {
            let row = u.transpose() * &*phi; // d c_j / d chi
            let col = u * &*chi; // d c_j / d phi
            c[j] = row.dot(&*chi);
            for a in 0..na {
                jac[(j, a)] = col[a];
            }
            for b in 0..nb {
                jac[(j, na + b)] = row[b];
            }
        }
        if c.norm() < 1e-15 {
            break;
        }
        // minimum-norm solution of J delta = -c through the range-space
        // normal equations (the system is underdetermined: the gauge
        // freedom of the factor scales is never constrained)
        let jjh = &jac * jac.adjoint();
        let reg = CMat::identity(ncon, ncon) * Complex::new(1e-14, 0.0);
        let Some(inv) = (jjh + reg).try_inverse() else {
            break;
        };
        let delta = -(jac.adjoint() * (inv * c));
        for a in 0..na {
            phi[a] += delta[a];
        }
        for b in 0..nb {
            chi[b] += delta[na + b];
        }
        let (pn, cn) = (phi.norm(), chi.norm());
        if pn < 1e-12 || cn < 1e-12 {
            break;
        }
        *phi /= Complex::new(pn, 0.0);
        *chi /= Complex::new(cn, 0.0);
    }
}

/// Locally re-converge a near-root product vector against the given
/// orthonormal constraint columns (the vectors it must be orthogonal to),
/// polishing it to the machine floor. Used to track known roots through a
/// transformation of the state.
pub(crate) fn polish_product_root(
    constraints: &CMat,
    dims: BipartiteDims,
    pv: &ProductVector,
) -> ProductVector {
    let (na, nb) = (dims.na, dims.nb);
    let ncon = constraints.ncols();
    let mut umats = Vec::with_capacity(ncon);
    for j in 0..ncon {
        let mut u = CMat::zeros(na, nb);
        for a in 0..na {
            for b in 0..nb {
                u[(a, b)] = constraints[(a * nb + b, j)].conj();
            }
        }
        umats.push(u);
    }
    let normalized = pv.normalized();
    let mut phi = normalized.phi.clone();
    let mut chi = normalized.chi.clone();
    let mut f_prev = f64::INFINITY;
    for _ in 0..200 {
        let mut gb = CMat::zeros(nb, nb);
        for u in &umats {
            let row = u.transpose() * &phi;
            for b in 0..nb {
                for bp in 0..nb {
                    gb[(b, bp)] += row[b].conj() * row[bp];
                }
            }
        }
        let (_, c) = min_eigvec(&gb);
        chi = c;
        let mut ga = CMat::zeros(na, na);
        for u in &umats {
            let col = u * &chi;
            for a in 0..na {
                for ap in 0..na {
                    ga[(a, ap)] += col[a].conj() * col[ap];
                }
            }
        }
        let (f, p) = min_eigvec(&ga);
        phi = p;
        if f < 1e-28 || f > 0.25 * f_prev {
            break;
        }
        f_prev = f;
    }
    newton_refine_root(&umats, &mut phi, &mut chi);
    ProductVector::new(phi, chi).unwrap()
}

/// True iff no product vector exists in the orthogonal complement of the
/// UPB's span.
pub fn unextendibility_check(upb: &GeneralizedUPB, config: &FinderConfig) -> bool {
    let span = upb.span_basis(tol::RANK_CUTOFF);
    let complement = orthonormal_complement(&span, tol::RANK_CUTOFF);
    if complement.ncols() == 0 {
        return true;
    }
    product_roots_orthogonal_to(&span, upb.dims, config).is_empty()
}

/// The conjugate UPB psi~_k = phi_k (x) chi_k^*; involutive, and its dyads
/// are the partial transposes of the original dyads.
pub fn conjugate_upb(upb: &GeneralizedUPB) -> GeneralizedUPB {
    let members = upb
        .members
        .iter()
        .map(|pv| ProductVector {
            phi: pv.phi.clone(),
            chi: pv.chi.map(|z| z.conj()),
        })
        .collect();
    GeneralizedUPB {
        dims: upb.dims,
        members,
    }
}

/// Least-squares fit of real coefficients x_k minimizing
/// ||sum_k x_k psi_k psi_k^dag - Q||_F over the hermitian vector space, with
/// p_k = x_k / d. Solved by SVD pseudo-inverse with relative cutoff 1e-10 so
/// the linearly dependent case is flagged rather than failed.
pub fn extract_p(
    q: &HermitianMatrix,
    upb: &GeneralizedUPB,
    dims: BipartiteDims,
) -> Result<PFitReport> {
    let n = dims.total();
    if q.dim() != n {
        return Err(Error::DimMismatch("Q dimension vs dims".into()));
    }
    let m = upb.members.len();
    if m == 0 {
        return Err(Error::InvalidInput("empty UPB".into()));
    }
    let mut design = RMat::zeros(n * n, m);
    let mut dyads = Vec::with_capacity(m);
    for (k, pv) in upb.members.iter().enumerate() {
        let psi = pv.normalized().kron();
        let mut dyad = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                dyad[(i, j)] = psi[i] * psi[j].conj();
            }
        }
        design.set_column(k, &vectorize_raw(n, &dyad));
        dyads.push(dyad);
    }
    let target = vectorize_raw(n, q.mat());
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count();
    let x = svd.solve(&target, 1e-10 * smax).map_err(|e| {
        Error::Construction(format!("p-fit SVD solve failed: {e}"))
    })?;
    let d = upb_counts(dims).1 as f64;
    let p: Vec<f64> = x.iter().map(|&v| v / d).collect();
    let mut fit = CMat::zeros(n, n);
    for (k, dyad) in dyads.iter().enumerate() {
        fit += dyad * Complex::new(x[k], 0.0);
    }
    let residual = (fit - q.mat()).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let negative_count = p.iter().filter(|&&v| v < -1e-10).count();
    Ok(PFitReport {
        p,
        residual,
        negative_count,
        non_unique: rank < m,
    })
}

/// Projection-form diagnostics for rho and its partial transpose.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionFormReport {
    pub is_proj_form: bool,
    pub r: usize,
    pub purity: f64,
    pub rank_rho_p: usize,
    pub rho_p_is_proj: bool,
}

fn idempotency_defect(h: &HermitianMatrix, scale: f64) -> f64 {
    let m = h.mat() * Complex::new(scale, 0.0);
    let d = &m * &m - &m;
    d.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Checks |Tr[rho^2] - 1/r| < tol and ||(r rho)^2 - r rho||_F < tol with
/// r = rank(rho), and the analogous conditions for rho^P at its own rank.
pub fn verify_projection_form(rho: &DensityMatrix, check_tol: f64) -> ProjectionFormReport {
    let r = hermitian_rank(rho.herm(), tol::RANK_CUTOFF);
    let purity = rho.purity();
    let is_proj_form = (purity - 1.0 / r as f64).abs() < check_tol
        && idempotency_defect(rho.herm(), r as f64) < check_tol;
    let rho_p = rho.partial_transpose();
    let rank_rho_p = hermitian_rank(&rho_p, tol::RANK_CUTOFF);
    let rho_p_is_proj = idempotency_defect(&rho_p, rank_rho_p as f64) < check_tol;
    ProjectionFormReport {
        is_proj_form,
        r,
        purity,
        rank_rho_p,
        rho_p_is_proj,
    }
}

/// A density matrix in projection form rho = (1/r)(1 - Q) together with its
/// kernel UPB and the coefficients of Q = d sum_k p_k psi_k psi_k^dag.
#[derive(Debug, Clone)]
pub struct ProjectionFormState {
    pub rho: DensityMatrix,
    pub upb: GeneralizedUPB,
    pub p: Vec<f64>,
    pub q: HermitianMatrix,
}

impl ProjectionFormState {
    /// Build from a kernel UPB alone: Q is the projector onto the span of the
    /// members (which must have the canonical dimension d), the coefficients
    /// are fitted, and rho = (1/r)(1 - Q).
    pub fn from_kernel_upb(upb: GeneralizedUPB) -> Result<Self> {
        let dims = upb.dims;
        let n = dims.total();
        let r = expected_rank(dims);
        let d = upb_counts(dims).1;
        let span = upb.span_basis(tol::RANK_CUTOFF);
        if span.ncols() != d {
            return Err(Error::Construction(format!(
                "UPB span has dimension {}, expected {}",
                span.ncols(),
                d
            )));
        }
        let mut q = CMat::zeros(n, n);
        for k in 0..d {
            let u = span.column(k);
            for i in 0..n {
                for j in 0..n {
                    q[(i, j)] += u[i] * u[j].conj();
                }
            }
        }
        let q = HermitianMatrix::hermitize(&q);
        let rho_mat = (CMat::identity(n, n) - q.mat()) / Complex::new(r as f64, 0.0);
        let rho = DensityMatrix::new(HermitianMatrix::hermitize(&rho_mat), dims)?;
        Self::assemble(rho, upb, q)
    }

    /// Build from a density matrix already proportional to a projection,
    /// with Q = 1 - r rho.
    pub fn from_density(rho: DensityMatrix, upb: GeneralizedUPB) -> Result<Self> {
        let dims = rho.dims();
        let n = dims.total();
        let r = expected_rank(dims);
        let q_mat = CMat::identity(n, n) - rho.mat() * Complex::new(r as f64, 0.0);
        let q = HermitianMatrix::hermitize(&q_mat);
        Self::assemble(rho, upb, q)
    }

    fn assemble(rho: DensityMatrix, upb: GeneralizedUPB, q: HermitianMatrix) -> Result<Self> {
        let dims = rho.dims();
        let defect = idempotency_defect(&q, 1.0);
        if defect >= 1e-9 {
            return Err(Error::Construction(format!(
                "Q is not idempotent (||Q^2 - Q||_F = {defect:.3e})"
            )));
        }
        let fit = extract_p(&q, &upb, dims)?;
        if fit.residual >= 1e-9 {
            return Err(Error::Construction(format!(
                "coefficient fit residual {:.3e} exceeds 1e-9",
                fit.residual
            )));
        }
        let sum: f64 = fit.p.iter().sum();
        if (sum - 1.0).abs() >= 1e-10 {
            return Err(Error::Construction(format!(
                "coefficients sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            rho,
            upb,
            p: fit.p,
            q,
        })
    }
}

/// Symmetry diagnostics between rho and rho^P for a projection-form state.
#[derive(Debug, Clone)]
pub struct SymmetryReport {
    pub rank_rho: usize,
    pub rank_rho_p: usize,
    pub ranks_equal: bool,
    /// ||(Q^P)^2 - Q^P||_F
    pub qp_idempotency_defect: f64,
    pub qp_is_projection: bool,
    /// max_k |p_k(Q^P, conjugate UPB) - p_k|
    pub p_deviation: f64,
    pub p_match: bool,
    pub symmetric: bool,
}

/// Verify that rho^P has the same rank as rho, that Q^P is a projection, and
/// that the conjugate UPB reproduces the same coefficients. Failures are
/// reported as data, not errors.
pub fn symmetry_report(state: &ProjectionFormState) -> SymmetryReport {
    let dims = state.rho.dims();
    let rank_rho = hermitian_rank(state.rho.herm(), tol::RANK_CUTOFF);
    let rho_p = state.rho.partial_transpose();
    let rank_rho_p = hermitian_rank(&rho_p, tol::RANK_CUTOFF);
    let qp = HermitianMatrix::hermitize(
        &partial_transpose(state.q.mat(), dims).expect("dims checked at construction"),
    );
    let qp_defect = idempotency_defect(&qp, 1.0);
    let conj = conjugate_upb(&state.upb);
    let (p_deviation, p_match) = match extract_p(&qp, &conj, dims) {
        Ok(fit) if fit.residual < 1e-8 => {
            let dev = fit
                .p
                .iter()
                .zip(state.p.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0_f64, f64::max);
            (dev, dev < 1e-8)
        }
        _ => (f64::INFINITY, false),
    };
    let ranks_equal = rank_rho == rank_rho_p;
    let qp_is_projection = qp_defect < 1e-8;
    SymmetryReport {
        rank_rho,
        rank_rho_p,
        ranks_equal,
        qp_idempotency_defect: qp_defect,
        qp_is_projection,
        p_deviation,
        p_match,
        symmetric: ranks_equal && qp_is_projection && p_match,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bipartite::rank_profile;
    use crate::herm::kron_mat;
    use crate::ico::{build_state, pyramid_lambda, IcoConfig};

    fn e_k(n: usize, k: usize) -> CVec {
        let mut v = CVec::zeros(n);
        v[k] = Complex::new(1.0, 0.0);
        v
    }

    #[test]
    fn finder_recovers_single_product_vector() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let pv = ProductVector::new(e_k(3, 0), e_k(3, 0)).unwrap();
        let mut subspace = CMat::zeros(9, 1);
        subspace.set_column(0, &pv.kron());
        let config = FinderConfig {
            starts: 200,
            ..FinderConfig::with_seed(5)
        };
        let (roots, _) = find_product_vectors(&subspace, dims, &config).unwrap();
        assert_eq!(roots.len(), 1);
        let overlap = roots[0].normalized().kron().dotc(&pv.kron()).norm();
        assert!(overlap > 1.0 - 1e-8);
    }

    #[test]
    fn finder_recovers_icosahedron_kernel() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let kernel = orthonormal_complement(
            &crate::bipartite::orthonormal_range(
                &state.rho.mat().clone(),
                tol::RANK_CUTOFF,
            ),
            tol::RANK_CUTOFF,
        );
        assert_eq!(kernel.ncols(), 5);
        let config = FinderConfig::with_seed(7);
        let (roots, warning) =
            find_product_vectors(&kernel, state.rho.dims(), &config).unwrap();
        assert!(!warning);
        assert_eq!(roots.len(), 6);
        // each root matches a construction member up to phase
        for root in &roots {
            let psi = root.normalized().kron();
            let hit = state
                .upb
                .members
                .iter()
                .any(|m| m.normalized().kron().dotc(&psi).norm() > 1.0 - 1e-8);
            assert!(hit);
        }
    }

    #[test]
    fn icosahedron_upb_is_unextendible() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        assert!(unextendibility_check(&state.upb, &FinderConfig::with_seed(11)));
    }

    #[test]
    fn pyramid_five_member_upb_is_unextendible() {
        let state = build_state(&IcoConfig::with_lambda(pyramid_lambda())).unwrap();
        let dims = state.rho.dims();
        let five = GeneralizedUPB::new(dims, state.upb.members[..5].to_vec()).unwrap();
        assert!(unextendibility_check(&five, &FinderConfig::with_seed(13)));
    }

    #[test]
    fn diagonal_triple_is_extendible() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let members = (0..3)
            .map(|i| ProductVector::new(e_k(3, i), e_k(3, i)).unwrap())
            .collect();
        let upb = GeneralizedUPB::new(dims, members).unwrap();
        let config = FinderConfig {
            starts: 300,
            ..FinderConfig::with_seed(17)
        };
        assert!(!unextendibility_check(&upb, &config));
    }

    #[test]
    fn conjugate_upb_involutive_and_pt_consistent() {
        let dims = BipartiteDims::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pv = ProductVector::new(random_unit_cvec(2, &mut rng), random_unit_cvec(2, &mut rng))
            .unwrap();
        let upb = GeneralizedUPB::new(dims, vec![pv.clone()]).unwrap();
        let conj = conjugate_upb(&upb);
        let back = conjugate_upb(&conj);
        assert!((back.members[0].chi.clone() - pv.chi.clone()).norm() < 1e-15);
        // psi~ psi~^dag = (psi psi^dag)^P
        let psi = pv.kron();
        let psit = conj.members[0].kron();
        let mut dyad = CMat::zeros(4, 4);
        let mut dyad_t = CMat::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                dyad[(i, j)] = psi[i] * psi[j].conj();
                dyad_t[(i, j)] = psit[i] * psit[j].conj();
            }
        }
        let pt = partial_transpose(&dyad, dims).unwrap();
        assert!((pt - dyad_t).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn real_upb_conjugate_is_identical() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let conj = conjugate_upb(&state.upb);
        for (a, b) in state.upb.members.iter().zip(conj.members.iter()) {
            assert!((a.chi.clone() - b.chi.clone()).norm() < 1e-15);
        }
    }

    #[test]
    fn extract_p_on_icosahedron_and_pyramid() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let fit = extract_p(&state.q, &state.upb, state.rho.dims()).unwrap();
        assert!(fit.residual < 1e-10);
        for &pk in &fit.p {
            assert!((pk - 1.0 / 6.0).abs() < 1e-10);
        }
        let pyr = build_state(&IcoConfig::with_lambda(pyramid_lambda())).unwrap();
        let fit = extract_p(&pyr.q, &pyr.upb, pyr.rho.dims()).unwrap();
        assert!(fit.residual < 1e-9);
        assert!(fit.p[5].abs() < 1e-8);
        for &pk in &fit.p[..5] {
            assert!((pk - 0.2).abs() < 1e-8);
        }
    }

    #[test]
    fn verify_projection_form_cases() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let rep = verify_projection_form(&state.rho, 1e-9);
        assert!(rep.is_proj_form);
        assert!(rep.rho_p_is_proj);
        assert_eq!(rep.r, 4);
        assert!((rep.purity - 0.25).abs() < 1e-12);

        let dims = BipartiteDims::new(3, 3).unwrap();
        let mixed =
            DensityMatrix::from_unnormalized(&HermitianMatrix::identity(9), dims).unwrap();
        let rep = verify_projection_form(&mixed, 1e-9);
        assert!(rep.is_proj_form);
        assert_eq!(rep.r, 9);
    }

    #[test]
    fn symmetry_report_on_icosahedron() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let rep = symmetry_report(&state);
        assert!(rep.symmetric);
        assert_eq!(rep.rank_rho, 4);
        assert_eq!(rep.rank_rho_p, 4);
        assert!(rep.p_deviation < 1e-10);
    }

    #[test]
    fn trace_inequality_on_random_states() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let rank = 1 + rng.gen_range(0..9);
            let rho = DensityMatrix::random_mixed(dims, rank, &mut rng);
            let r = rank_profile(&rho, tol::RANK_CUTOFF).rank_rho;
            assert!(rho.purity() >= 1.0 / r as f64 - 1e-12);
        }
    }

    #[test]
    fn extract_p_flags_dependent_dyads() {
        let dims = BipartiteDims::new(2, 2).unwrap();
        let pv = ProductVector::new(e_k(2, 0), e_k(2, 0)).unwrap();
        let upb = GeneralizedUPB::new(dims, vec![pv.clone(), pv]).unwrap();
        let phi = e_k(2, 0);
        let mut q = CMat::zeros(4, 4);
        let psi = kron_mat(
            &CMat::from_column_slice(2, 1, phi.as_slice()),
            &CMat::from_column_slice(2, 1, e_k(2, 0).as_slice()),
        );
        for i in 0..4 {
            for j in 0..4 {
                q[(i, j)] = psi[(i, 0)] * psi[(j, 0)].conj();
            }
        }
        let fit = extract_p(&HermitianMatrix::hermitize(&q), &upb, dims).unwrap();
        assert!(fit.non_unique);
        assert!(fit.residual < 1e-10);
    }
}
