//! Perturbation-based probes of the local geometry around a PPT state:
//! dimension of the surface of states with the same rank pair, equivalence
//! class dimension, and extremality certification with neighborhood sampling.
//!
//! All probes work on the real vector space of hermitian matrices. A rank
//! pair (m, n) is preserved to first order by perturbations sigma whose
//! kernel-kernel blocks vanish on both sides of the partial transpose; the
//! two conditions combine into a single eigenvalue problem for the composed
//! superoperator P Qbar P, whose unit eigenvectors span the tangent space of
//! the rank surface.

use crate::bipartite::{image_projector, hermitian_rank, DensityMatrix};
use crate::herm::{
    pt_superoperator, vectorize_raw, CMat, HermitianBasis, HermitianMatrix, RMat, RVec,
};
use crate::search::{repair_rank_ppt, SearchConfig, SearchStatus};
use crate::{tol, Error, Result};
use num_complex::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dimension counts for the surface of states sharing a rank pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimensionReport {
    /// Eigenvalues of the composed superoperator inside the unit window.
    pub unit_eigen_count: usize,
    /// Dimension of the equal-rank surface of unit-trace states.
    pub surface_dimension: usize,
    /// Surface dimension minus the dimension of the product-transformation
    /// orbit, 2(nA^2 + nB^2) - 4.
    pub eq_class_dimension: i64,
    /// Distance from 1 down to the largest eigenvalue below the unit window;
    /// counts with a gap under [`tol::DEGENERACY_GAP`] should not be trusted.
    pub spectral_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtremalityCertificate {
    pub is_extremal: bool,
    /// Dimension of the space of hermitian sigma with image(sigma) inside
    /// image(rho) and image(sigma^P) inside image(rho^P). The state itself is
    /// always a solution, so this is at least 1.
    pub solution_dim: usize,
}

/// Matrix of a linear map on hermitian space in the fixed orthonormal basis.
/// The map must send hermitian matrices to hermitian matrices.
fn superoperator<F: Fn(&CMat) -> CMat>(n: usize, f: F) -> RMat {
    let basis = HermitianBasis::new(n);
    let mut m = RMat::zeros(n * n, n * n);
    for j in 0..n * n {
        let e = basis.element(j);
        m.set_column(j, &vectorize_raw(n, &f(&e)));
    }
    m
}

/// First-order rank preservation: sigma minus its kernel-kernel block,
/// sigma -> P sigma + sigma P - P sigma P. An orthogonal projector on
/// hermitian space.
fn condpert_superoperator(p: &HermitianMatrix) -> RMat {
    let pm = p.mat().clone();
    superoperator(p.dim(), move |s| {
        let ps = &pm * s;
        &ps + s * &pm - ps * &pm
    })
}

/// Strict support restriction sigma -> P sigma P; also a projector.
fn strict_superoperator(p: &HermitianMatrix) -> RMat {
    let pm = p.mat().clone();
    superoperator(p.dim(), move |s| &pm * s * &pm)
}

struct UnitCount {
    count: usize,
    gap: f64,
    #[cfg_attr(not(test), allow(dead_code))]
    eigenvalues: Vec<f64>,
    eigenvectors: RMat,
}

/// Unit-eigenvalue count of a (numerically) symmetric superoperator whose
/// spectrum lies in [0, 1].
fn count_unit_eigenvalues(m: &RMat) -> UnitCount {
    let sym = (m + m.transpose()) * 0.5;
    let n = sym.nrows();
    let eig = sym.symmetric_eigen();
    let mut pairs: Vec<(f64, usize)> = eig
        .eigenvalues
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, lam)| (lam, i))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lo = 1.0 - tol::UNIT_EIGEN_WINDOW;
    let hi = 1.0 + tol::UNIT_EIGEN_WINDOW;
    // Candidates inside the coarse window, ordered by distance from 1. A fixed
    // window alone miscounts for ill-conditioned states whose sub-unit spectrum
    // leaks into it, so the unit cluster is cut at the largest ratio jump in
    // (1 - lambda), with a floor absorbing round-off scatter near 1.
    let mut candidates: Vec<(f64, usize)> = pairs
        .iter()
        .filter(|&&(lam, _)| lam > lo && lam <= hi)
        .cloned()
        .collect();
    candidates.sort_by(|a, b| (1.0 - a.0).total_cmp(&(1.0 - b.0)));
    let floor = 1e-13_f64;
    let below_window: f64 = pairs
        .iter()
        .filter(|&&(lam, _)| lam <= lo)
        .map(|&(lam, _)| 1.0 - lam)
        .fold(f64::INFINITY, f64::min);
    let mut count = candidates.len();
    if !candidates.is_empty() {
        let dist = |i: usize| -> f64 {
            if i < candidates.len() {
                (1.0 - candidates[i].0).max(floor)
            } else {
                below_window.max(floor)
            }
        };
        // Leaked sub-unit spectrum continues just below the window, so the
        // ratio jump from the last candidate to the rest of the spectrum is
        // small; a genuine unit cluster is followed by a wide gap. An internal
        // cut (discarding trailing candidates as leakage) is only taken when
        // its ratio dominates that edge ratio decisively, which protects
        // genuine unit eigenvalues degraded to ~1e-8 by probe conditioning.
        let edge_ratio = dist(candidates.len()) / dist(candidates.len() - 1);
        let mut best_ratio = edge_ratio;
        for i in 0..candidates.len() - 1 {
            let ratio = dist(i + 1) / dist(i);
            if ratio > best_ratio && ratio >= 100.0 * edge_ratio {
                best_ratio = ratio;
                count = i + 1;
            }
        }
    }
    let mut gap = 1.0_f64;
    for i in count..candidates.len() {
        gap = gap.min(1.0 - candidates[i].0);
    }
    gap = gap.min(below_window);
    let unit_cols: Vec<usize> = candidates[..count].iter().map(|&(_, idx)| idx).collect();
    let mut vecs = RMat::zeros(n, count);
    for (k, &idx) in unit_cols.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(idx).into_owned());
    }
    UnitCount {
        count,
        gap,
        eigenvalues: pairs.into_iter().map(|(lam, _)| lam).collect(),
        eigenvectors: vecs,
    }
}

/// The composed superoperator P Qbar P whose unit eigenspace solves
/// { sigma : sigma = phi_P(sigma), sigma^P = phi_Q(sigma^P) }, with the two
/// restriction maps supplied by the caller.
fn composed_probe(
    rho0: &DensityMatrix,
    rank_tol: f64,
    restrict: fn(&HermitianMatrix) -> RMat,
) -> Result<RMat> {
    let dims = rho0.dims();
    let n = dims.total();
    let p = image_projector(rho0.herm(), rank_tol).projector;
    let q = image_projector(&rho0.partial_transpose(), rank_tol).projector;
    let sp = restrict(&p);
    let sq = restrict(&q);
    let pi = pt_superoperator(dims, &HermitianBasis::new(n))?;
    let qbar = &pi * sq * &pi;
    Ok(&sp * qbar * sp)
}

/// Dimension of the surface of unit-trace states sharing rho0's rank pair,
/// from the unit-eigenvalue count of the composed first-order projector.
/// The count includes rho0's own direction, which only moves the
/// normalization, hence the minus one.
pub fn rank_surface_dimension(rho0: &DensityMatrix, rank_tol: f64) -> Result<DimensionReport> {
    let dims = rho0.dims();
    let m = composed_probe(rho0, rank_tol, condpert_superoperator)?;
    let unit = count_unit_eigenvalues(&m);
    if unit.count == 0 {
        return Err(Error::Construction(
            "no unit eigenvalue found; the state itself must be a solution".into(),
        ));
    }
    let orbit = 2 * (dims.na * dims.na + dims.nb * dims.nb) as i64 - 4;
    Ok(DimensionReport {
        unit_eigen_count: unit.count,
        surface_dimension: unit.count - 1,
        eq_class_dimension: (unit.count - 1) as i64 - orbit,
        spectral_gap: unit.gap,
    })
}

/// Extremality in the PPT set via strict support inclusion: rho is extremal
/// iff the only hermitian sigma with image(sigma) in image(rho) and
/// image(sigma^P) in image(rho^P) are multiples of rho itself.
pub fn extremality_check(rho: &DensityMatrix, rank_tol: f64) -> Result<ExtremalityCertificate> {
    let m = composed_probe(rho, rank_tol, strict_superoperator)?;
    let unit = count_unit_eigenvalues(&m);
    Ok(ExtremalityCertificate {
        is_extremal: unit.count == 1,
        solution_dim: unit.count,
    })
}

/// Step rho0 by eps along a trace-zero hermitian direction and re-converge
/// onto the rank surface with a seeded rank search.
pub fn perturb_and_repair(
    rho0: &DensityMatrix,
    sigma: &HermitianMatrix,
    eps: f64,
    config: &SearchConfig,
) -> Result<DensityMatrix> {
    if sigma.dim() != rho0.dims().total() {
        return Err(Error::DimMismatch("perturbation direction".into()));
    }
    if eps == 0.0 {
        return Ok(rho0.clone());
    }
    let ranks = (
        hermitian_rank(rho0.herm(), tol::RANK_CUTOFF),
        hermitian_rank(&rho0.partial_transpose(), tol::RANK_CUTOFF),
    );
    let stepped = HermitianMatrix::hermitize(
        &(rho0.mat() + sigma.mat() * Complex::new(eps, 0.0)),
    );
    let outcome = repair_rank_ppt(&stepped, rho0.dims(), ranks, config);
    match (outcome.status, outcome.state) {
        (SearchStatus::Converged, Some(state)) => Ok(state),
        _ => Err(Error::Construction(
            "perturbation repair did not converge".into(),
        )),
    }
}

/// Outcome of sampling the neighborhood of an extremal state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborhoodSample {
    pub attempted: usize,
    pub repaired: usize,
    pub extremal: usize,
    /// Perturbations whose repair search failed to converge.
    pub failures: usize,
}

impl NeighborhoodSample {
    pub fn fraction_extremal(&self) -> f64 {
        if self.attempted == 0 {
            return 0.0;
        }
        self.extremal as f64 / self.attempted as f64
    }
}

/// Repair `count` random rank-preserving perturbations of rho0 and report how
/// many of the repaired states certify extremal. Directions are drawn from
/// the unit eigenspace of the first-order probe, with the trace projected
/// out.
pub fn neighborhood_extremality_sample(
    rho0: &DensityMatrix,
    count: usize,
    eps: f64,
    config: &SearchConfig,
) -> Result<NeighborhoodSample> {
    let n = rho0.dims().total();
    let basis = HermitianBasis::new(n);
    let probe = composed_probe(rho0, tol::RANK_CUTOFF, condpert_superoperator)?;
    let unit = count_unit_eigenvalues(&probe);
    if unit.count == 0 {
        return Err(Error::Construction("empty perturbation space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sample = NeighborhoodSample {
        attempted: 0,
        repaired: 0,
        extremal: 0,
        failures: 0,
    };
    for k in 0..count {
        sample.attempted += 1;
        let sigma = random_tangent_direction(&unit.eigenvectors, &basis, &mut rng)?;
        let mut run_config = *config;
        run_config.seed = config.seed.wrapping_add(1 + k as u64);
        match perturb_and_repair(rho0, &sigma, eps, &run_config) {
            Ok(state) => {
                sample.repaired += 1;
                if extremality_check(&state, tol::RANK_CUTOFF)?.is_extremal {
                    sample.extremal += 1;
                }
            }
            Err(_) => sample.failures += 1,
        }
    }
    Ok(sample)
}

/// Unit-Frobenius trace-zero combination of the probe's unit eigenvectors.
fn random_tangent_direction<R: Rng>(
    unit_vectors: &RMat,
    basis: &HermitianBasis,
    rng: &mut R,
) -> Result<HermitianMatrix> {
    let n = basis.dim();
    let mut coords = RVec::zeros(unit_vectors.nrows());
    for j in 0..unit_vectors.ncols() {
        let c: f64 = StandardNormal.sample(rng);
        coords += unit_vectors.column(j) * c;
    }
    let mut sigma = basis.devectorize(&coords)?;
    let shift = Complex::new(sigma.trace() / n as f64, 0.0);
    let traceless = sigma.mat() - CMat::identity(n, n) * shift;
    let norm = traceless.norm();
    if norm < 1e-12 {
        return Err(Error::Construction("degenerate tangent direction".into()));
    }
    sigma = HermitianMatrix::hermitize(&(traceless / Complex::new(norm, 0.0)));
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bipartite::{product_transform, rank_profile, BipartiteDims};
    use crate::herm::CVec;
    use crate::ico::{build_state, IcoConfig};
    use crate::search::search_projection_ppt;

    fn maximally_mixed(dims: BipartiteDims) -> DensityMatrix {
        let n = dims.total();
        let h = HermitianMatrix::hermitize(
            &(CMat::identity(n, n) / Complex::new(n as f64, 0.0)),
        );
        DensityMatrix::new(h, dims).unwrap()
    }

    #[test]
    fn maximally_mixed_state_has_full_surface() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let rho = maximally_mixed(dims);
        let rep = rank_surface_dimension(&rho, tol::RANK_CUTOFF).unwrap();
        assert_eq!(rep.unit_eigen_count, 81);
        assert_eq!(rep.surface_dimension, 80);
        let cert = extremality_check(&rho, tol::RANK_CUTOFF).unwrap();
        assert!(!cert.is_extremal);
        assert_eq!(cert.solution_dim, 81);
    }

    #[test]
    fn pure_product_state_is_extremal() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let mut v = CVec::zeros(9);
        v[0] = Complex::new(1.0, 0.0);
        let h = HermitianMatrix::hermitize(&(&v * v.adjoint()));
        let rho = DensityMatrix::new(h, dims).unwrap();
        let cert = extremality_check(&rho, tol::RANK_CUTOFF).unwrap();
        assert!(cert.is_extremal);
        assert_eq!(cert.solution_dim, 1);
    }

    #[test]
    fn icosahedron_dimensions_match_expected_counts() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let rep = rank_surface_dimension(&state.rho, tol::RANK_CUTOFF).unwrap();
        assert_eq!(rep.surface_dimension, 36);
        assert_eq!(rep.eq_class_dimension, 4);
        assert!(rep.spectral_gap > tol::DEGENERACY_GAP);
        let cert = extremality_check(&state.rho, tol::RANK_CUTOFF).unwrap();
        assert!(cert.is_extremal);
    }

    #[test]
    fn probe_spectrum_is_contained_and_fixes_the_state() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let m = composed_probe(&state.rho, tol::RANK_CUTOFF, condpert_superoperator).unwrap();
        let unit = count_unit_eigenvalues(&m);
        for &lam in &unit.eigenvalues {
            assert!((-1e-10..=1.0 + 1e-10).contains(&lam), "eigenvalue {lam}");
        }
        let v = vectorize_raw(9, state.rho.mat());
        let dev = (&m * &v - &v).norm();
        assert!(dev < 1e-10, "state direction deviation {dev}");
    }

    #[test]
    fn surface_dimension_is_invariant_under_product_transformations() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut factor = |n: usize| {
            let mut g = CMat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    g[(i, j)] = Complex::new(re, im);
                }
            }
            &g * g.adjoint() + CMat::identity(n, n) * Complex::new(0.5, 0.0)
        };
        let sa = factor(3);
        let sb = factor(3);
        let moved = product_transform(&state.rho, &sa, &sb).unwrap();
        let rep = rank_surface_dimension(&moved, tol::RANK_CUTOFF).unwrap();
        assert_eq!(rep.surface_dimension, 36);
        assert_eq!(rep.eq_class_dimension, 4);
    }

    #[test]
    fn strict_solutions_satisfy_the_first_order_conditions() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let strict = composed_probe(&state.rho, tol::RANK_CUTOFF, strict_superoperator).unwrap();
        let cond = composed_probe(&state.rho, tol::RANK_CUTOFF, condpert_superoperator).unwrap();
        let unit = count_unit_eigenvalues(&strict);
        for j in 0..unit.eigenvectors.ncols() {
            let v = unit.eigenvectors.column(j).into_owned();
            let dev = (&cond * &v - &v).norm();
            assert!(dev < 1e-8, "containment deviation {dev}");
        }
    }

    #[test]
    fn rank_5_5_search_state_has_55_9_dimensions() {
        let dims = BipartiteDims::new(3, 4).unwrap();
        let out = search_projection_ppt(dims, 5, &SearchConfig::with_seed(7)).unwrap();
        assert_eq!(out.status, SearchStatus::Converged);
        let rho = out.state.unwrap();
        let rep = rank_surface_dimension(&rho, tol::RANK_CUTOFF).unwrap();
        assert_eq!(rep.surface_dimension, 55);
        assert_eq!(rep.eq_class_dimension, 9);
        assert!(rep.spectral_gap > tol::DEGENERACY_GAP);
    }

    #[test]
    fn zero_step_perturbation_returns_the_state() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let sigma = HermitianMatrix::zeros(9);
        let back =
            perturb_and_repair(&state.rho, &sigma, 0.0, &SearchConfig::with_seed(1)).unwrap();
        assert_eq!(back.mat(), state.rho.mat());
    }

    #[test]
    fn tangent_perturbation_repairs_to_a_nearby_rank_4_4_state() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let probe =
            composed_probe(&state.rho, tol::RANK_CUTOFF, condpert_superoperator).unwrap();
        let unit = count_unit_eigenvalues(&probe);
        let basis = HermitianBasis::new(9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sigma = random_tangent_direction(&unit.eigenvectors, &basis, &mut rng).unwrap();
        let eps = 1e-2;
        let repaired =
            perturb_and_repair(&state.rho, &sigma, eps, &SearchConfig::with_seed(2)).unwrap();
        let profile = rank_profile(&repaired, tol::RANK_CUTOFF);
        assert_eq!((profile.rank_rho, profile.rank_rho_p), (4, 4));
        let dist = (repaired.mat() - state.rho.mat()).norm();
        assert!(dist < 10.0 * eps, "repaired state drifted: {dist}");
        assert!(dist > 1e-4, "perturbation collapsed back to the start");
    }

    #[test]
    fn neighborhood_of_the_icosahedron_is_extremal() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let sample =
            neighborhood_extremality_sample(&state.rho, 5, 1e-2, &SearchConfig::with_seed(9))
                .unwrap();
        assert_eq!(sample.attempted, 5);
        assert_eq!(sample.failures, 0);
        assert!(sample.fraction_extremal() >= 0.9, "{sample:?}");
    }
}
