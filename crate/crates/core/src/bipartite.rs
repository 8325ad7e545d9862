//! Bipartite state types, rank and PPT diagnostics, and the counting
//! formulas for lowest-rank extremal PPT states with full local ranks.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::herm::{
    eig_hermitian, kron_mat, partial_transpose, CMat, CVec, HermitianMatrix, Spectrum, C64,
};
use crate::{Error, Result};

/// Subsystem dimensions (N_A, N_B), with N = N_A * N_B.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BipartiteDims {
    pub na: usize,
    pub nb: usize,
}

impl BipartiteDims {
    pub fn new(na: usize, nb: usize) -> Result<Self> {
        if na < 2 || nb < 2 {
            return Err(Error::InvalidInput(format!(
                "subsystem dimensions must be >= 2, got {na}x{nb}"
            )));
        }
        Ok(Self { na, nb })
    }

    pub fn total(&self) -> usize {
        self.na * self.nb
    }
}

/// Lowest rank of extremal PPT states with full local ranks: r = N_A + N_B - 2.
pub fn expected_rank(dims: BipartiteDims) -> usize {
    dims.na + dims.nb - 2
}

/// Kernel product-vector counts for the lowest-rank states:
/// total count p = (N_A+N_B-2)! / ((N_A-1)!(N_B-1)!) and
/// linearly independent count d = N_A N_B - N_A - N_B + 2.
pub fn upb_counts(dims: BipartiteDims) -> (usize, usize) {
    let (na, nb) = (dims.na, dims.nb);
    // binomial(na+nb-2, na-1), computed multiplicatively
    let mut p: u128 = 1;
    for k in 0..(na - 1) {
        p = p * (nb + k) as u128 / (k + 1) as u128;
    }
    let d = na * nb - na - nb + 2;
    (p as usize, d)
}

/// A factored vector phi (x) chi. Factors need not be normalized but must be
/// nonzero.
#[derive(Debug, Clone)]
pub struct ProductVector {
    pub phi: CVec,
    pub chi: CVec,
}

impl ProductVector {
    pub fn new(phi: CVec, chi: CVec) -> Result<Self> {
        if phi.norm() == 0.0 || chi.norm() == 0.0 {
            return Err(Error::InvalidInput("product vector factor is zero".into()));
        }
        Ok(Self { phi, chi })
    }

    /// Normalize both factors to unit norm.
    pub fn normalized(&self) -> Self {
        Self {
            phi: &self.phi / Complex::new(self.phi.norm(), 0.0),
            chi: &self.chi / Complex::new(self.chi.norm(), 0.0),
        }
    }

    /// The full vector with entries (phi (x) chi)_(a,b) = phi_a chi_b under
    /// the pairing (a, b) -> a*nB + b.
    pub fn kron(&self) -> CVec {
        let (na, nb) = (self.phi.len(), self.chi.len());
        let mut v = CVec::zeros(na * nb);
        for a in 0..na {
            for b in 0..nb {
                v[a * nb + b] = self.phi[a] * self.chi[b];
            }
        }
        v
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.phi.len(), self.chi.len())
    }
}

/// A finite collection of product vectors spanning (part of) a kernel.
#[derive(Debug, Clone)]
pub struct GeneralizedUPB {
    pub dims: BipartiteDims,
    pub members: Vec<ProductVector>,
}

impl GeneralizedUPB {
    pub fn new(dims: BipartiteDims, members: Vec<ProductVector>) -> Result<Self> {
        for pv in &members {
            if pv.dims() != (dims.na, dims.nb) {
                return Err(Error::DimMismatch(
                    "product vector factors do not match dims".into(),
                ));
            }
        }
        Ok(Self { dims, members })
    }

    /// Dimension of the span of the full member vectors at relative tolerance
    /// `tol` on singular values.
    pub fn span_dimension(&self, tol: f64) -> usize {
        if self.members.is_empty() {
            return 0;
        }
        let n = self.dims.total();
        let mut m = CMat::zeros(n, self.members.len());
        for (k, pv) in self.members.iter().enumerate() {
            m.set_column(k, &pv.normalized().kron());
        }
        let svals = m.singular_values();
        let max = svals.iter().cloned().fold(0.0_f64, f64::max);
        if max == 0.0 {
            return 0;
        }
        svals.iter().filter(|&&s| s > tol * max).count()
    }

    /// Orthonormal basis of the span, as matrix columns.
    pub fn span_basis(&self, tol: f64) -> CMat {
        let n = self.dims.total();
        let mut m = CMat::zeros(n, self.members.len());
        for (k, pv) in self.members.iter().enumerate() {
            m.set_column(k, &pv.normalized().kron());
        }
        orthonormal_range(&m, tol)
    }
}

/// Orthonormal basis of the column range of `m`, relative cutoff `tol` on
/// the pivoted-QR diagonal (a singular-value proxy). Householder QR is used
/// rather than the complex SVD, whose vectors are only ~1e-5 accurate.
pub fn orthonormal_range(m: &CMat, tol: f64) -> CMat {
    let (nr, nc) = (m.nrows(), m.ncols());
    if nc == 0 {
        return CMat::zeros(nr, 0);
    }
    let qr = m.clone().col_piv_qr();
    let q = qr.q();
    let r = qr.r();
    let r00 = r[(0, 0)].norm();
    if r00 == 0.0 {
        return CMat::zeros(nr, 0);
    }
    let rank = (0..nr.min(nc))
        .take_while(|&i| r[(i, i)].norm() > tol * r00)
        .count();
    q.columns(0, rank).into_owned()
}

/// Orthonormal basis of the orthogonal complement of the column span of `m`.
pub fn orthonormal_complement(m: &CMat, tol: f64) -> CMat {
    let n = m.nrows();
    let range = orthonormal_range(m, tol);
    let d = range.ncols();
    // complement via full eigendecomposition of 1 - sum u u^dag
    let mut proj = CMat::identity(n, n);
    for k in 0..d {
        let u = range.column(k);
        for i in 0..n {
            for j in 0..n {
                proj[(i, j)] -= u[i] * u[j].conj();
            }
        }
    }
    let spec = eig_hermitian(&HermitianMatrix::hermitize(&proj));
    let mut out = CMat::zeros(n, n - d);
    let mut k = 0;
    for (i, &lam) in spec.eigenvalues.iter().enumerate() {
        if lam > 0.5 {
            out.set_column(k, &spec.eigenvectors.column(i));
            k += 1;
        }
    }
    assert_eq!(k, n - d, "complement dimension mismatch");
    out
}

/// Unit-trace positive-semidefinite hermitian matrix tagged with bipartite
/// dimensions.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    h: HermitianMatrix,
    dims: BipartiteDims,
}

impl DensityMatrix {
    pub fn new(h: HermitianMatrix, dims: BipartiteDims) -> Result<Self> {
        if h.dim() != dims.total() {
            return Err(Error::DimMismatch(format!(
                "matrix dim {} vs N = {}",
                h.dim(),
                dims.total()
            )));
        }
        if (h.trace() - 1.0).abs() >= 1e-12 {
            return Err(Error::InvalidInput(format!(
                "trace is {} (must be 1)",
                h.trace()
            )));
        }
        let min_eig = eig_hermitian(&h).min_eigenvalue();
        if min_eig < -1e-10 {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self { h, dims })
    }

    /// Normalize trace to 1 before validating.
    pub fn from_unnormalized(h: &HermitianMatrix, dims: BipartiteDims) -> Result<Self> {
        let tr = h.trace();
        if tr.abs() < 1e-300 {
            return Err(Error::InvalidInput("zero-trace matrix".into()));
        }
        let m = h.mat() / Complex::new(tr, 0.0);
        Self::new(HermitianMatrix::hermitize(&m), dims)
    }

    /// Seeded random rank-`rank` density matrix G G^dag / Tr.
    pub fn random_mixed<R: Rng>(dims: BipartiteDims, rank: usize, rng: &mut R) -> Self {
        let n = dims.total();
        let mut g = CMat::zeros(n, rank);
        for i in 0..n {
            for j in 0..rank {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                g[(i, j)] = Complex::new(re, im);
            }
        }
        let m = &g * g.adjoint();
        Self::from_unnormalized(&HermitianMatrix::hermitize(&m), dims).unwrap()
    }

    pub fn herm(&self) -> &HermitianMatrix {
        &self.h
    }

    pub fn mat(&self) -> &CMat {
        self.h.mat()
    }

    pub fn dims(&self) -> BipartiteDims {
        self.dims
    }

    pub fn purity(&self) -> f64 {
        self.h.hs_inner(&self.h)
    }

    pub fn partial_transpose(&self) -> HermitianMatrix {
        let m = partial_transpose(self.mat(), self.dims).unwrap();
        HermitianMatrix::hermitize(&m)
    }

    /// Reduced matrix over subsystem B (a matrix on A).
    pub fn trace_out_b(&self) -> HermitianMatrix {
        let (na, nb) = (self.dims.na, self.dims.nb);
        let mut m = CMat::zeros(na, na);
        for a in 0..na {
            for ap in 0..na {
                let mut s = C64::default();
                for b in 0..nb {
                    s += self.mat()[(a * nb + b, ap * nb + b)];
                }
                m[(a, ap)] = s;
            }
        }
        HermitianMatrix::hermitize(&m)
    }

    /// Reduced matrix over subsystem A (a matrix on B).
    pub fn trace_out_a(&self) -> HermitianMatrix {
        let (na, nb) = (self.dims.na, self.dims.nb);
        let mut m = CMat::zeros(nb, nb);
        for b in 0..nb {
            for bp in 0..nb {
                let mut s = C64::default();
                for a in 0..na {
                    s += self.mat()[(a * nb + b, a * nb + bp)];
                }
                m[(b, bp)] = s;
            }
        }
        HermitianMatrix::hermitize(&m)
    }
}

/// Ranks of rho, its partial transpose, and the two reduced matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankProfile {
    pub rank_rho: usize,
    pub rank_rho_p: usize,
    pub local_a: usize,
    pub local_b: usize,
}

fn rank_of_spectrum(spec: &Spectrum, tol: f64) -> usize {
    let max = spec
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    if max == 0.0 {
        return 0;
    }
    spec.eigenvalues.iter().filter(|&&x| x.abs() > tol * max).count()
}

/// Rank of a hermitian matrix by relative eigenvalue cutoff.
pub fn hermitian_rank(h: &HermitianMatrix, tol: f64) -> usize {
    rank_of_spectrum(&eig_hermitian(h), tol)
}

/// Ranks of rho and rho^P plus local ranks of the reduced matrices, counted
/// with the relative cutoff `tol` on eigenvalue magnitude.
pub fn rank_profile(rho: &DensityMatrix, tol: f64) -> RankProfile {
    RankProfile {
        rank_rho: hermitian_rank(rho.herm(), tol),
        rank_rho_p: hermitian_rank(&rho.partial_transpose(), tol),
        local_a: hermitian_rank(&rho.trace_out_b(), tol),
        local_b: hermitian_rank(&rho.trace_out_a(), tol),
    }
}

/// PPT test: reports whether min eig(rho^P) >= -tol, together with the
/// eigenvalue itself.
pub fn is_ppt(rho: &DensityMatrix, tol: f64) -> (bool, f64) {
    let min_eig = eig_hermitian(&rho.partial_transpose()).min_eigenvalue();
    (min_eig >= -tol, min_eig)
}

/// Projector onto the image of a hermitian matrix, with a degeneracy warning
/// when the spectrum is ill separated at the cutoff.
#[derive(Debug, Clone)]
pub struct ProjectorReport {
    pub projector: HermitianMatrix,
    pub rank: usize,
    pub gap_warning: bool,
}

pub fn image_projector(h: &HermitianMatrix, tol: f64) -> ProjectorReport {
    let spec = eig_hermitian(h);
    let n = h.dim();
    let max = spec
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    let cutoff = tol * max;
    let mut ones = vec![0.0; n];
    let mut rank = 0;
    let mut gap_warning = false;
    for (i, &lam) in spec.eigenvalues.iter().enumerate() {
        if lam.abs() > cutoff {
            ones[i] = 1.0;
            rank += 1;
        }
        // ill-separated spectrum: an eigenvalue within a factor 10 of the cutoff
        if lam.abs() > cutoff / 10.0 && lam.abs() < cutoff * 10.0 {
            gap_warning = true;
        }
    }
    let p = spec.rebuild_with(&ones);
    ProjectorReport {
        projector: HermitianMatrix::hermitize(&p),
        rank,
        gap_warning,
    }
}

pub fn kernel_projector(h: &HermitianMatrix, tol: f64) -> ProjectorReport {
    let rep = image_projector(h, tol);
    let n = h.dim();
    let m = CMat::identity(n, n) - rep.projector.mat();
    ProjectorReport {
        projector: HermitianMatrix::hermitize(&m),
        rank: n - rep.rank,
        gap_warning: rep.gap_warning,
    }
}

/// Apply a product transformation S_A (x) S_B and renormalize the trace.
pub fn product_transform(
    rho: &DensityMatrix,
    sa: &CMat,
    sb: &CMat,
) -> Result<DensityMatrix> {
    let dims = rho.dims();
    if sa.nrows() != dims.na || sa.ncols() != dims.na || sb.nrows() != dims.nb || sb.ncols() != dims.nb
    {
        return Err(Error::DimMismatch("transform factor dims".into()));
    }
    let s = kron_mat(sa, sb);
    let m = &s * rho.mat() * s.adjoint();
    DensityMatrix::from_unnormalized(&HermitianMatrix::hermitize(&m), dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ico::{build_state, IcoConfig};
    use crate::tol;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e_k(n: usize, k: usize) -> CVec {
        let mut v = CVec::zeros(n);
        v[k] = Complex::new(1.0, 0.0);
        v
    }

    #[test]
    fn kron_index_convention() {
        let pv = ProductVector::new(e_k(3, 0), e_k(3, 0)).unwrap();
        let v = pv.kron();
        assert!((v[0] - Complex::new(1.0, 0.0)).norm() < 1e-15);
        assert!(v.iter().skip(1).all(|z| z.norm() == 0.0));

        let pv = ProductVector::new(e_k(3, 1), e_k(3, 2)).unwrap();
        let v = pv.kron();
        assert!((v[5] - Complex::new(1.0, 0.0)).norm() < 1e-15);

        // bilinearity in the first factor
        let alpha = Complex::new(0.3, -0.7);
        let scaled = ProductVector::new(e_k(3, 1) * alpha, e_k(3, 2)).unwrap();
        assert!((scaled.kron() - pv.kron() * alpha).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn counting_formulas_match_known_rows() {
        let rows = [
            (3, 3, 4, 6, 5),
            (3, 4, 5, 10, 7),
            (3, 5, 6, 15, 9),
            (3, 6, 7, 21, 11),
            (4, 4, 6, 20, 10),
            (4, 5, 7, 35, 13),
            (5, 5, 8, 70, 17),
        ];
        for (na, nb, r, p, d) in rows {
            let dims = BipartiteDims::new(na, nb).unwrap();
            assert_eq!(expected_rank(dims), r);
            assert_eq!(upb_counts(dims), (p, d));
            // d = N - r identity
            assert_eq!(d, dims.total() - r);
        }
    }

    #[test]
    fn rank_profile_of_maximally_mixed() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let rho = DensityMatrix::from_unnormalized(&HermitianMatrix::identity(9), dims).unwrap();
        let rp = rank_profile(&rho, tol::RANK_CUTOFF);
        assert_eq!((rp.rank_rho, rp.rank_rho_p), (9, 9));
        assert_eq!((rp.local_a, rp.local_b), (3, 3));
        assert!(is_ppt(&rho, 1e-10).0);
    }

    #[test]
    fn rank_profile_of_pure_product_state() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let pv = ProductVector::new(e_k(3, 0), e_k(3, 1)).unwrap();
        let psi = pv.kron();
        let mut m = CMat::zeros(9, 9);
        for i in 0..9 {
            for j in 0..9 {
                m[(i, j)] = psi[i] * psi[j].conj();
            }
        }
        let rho = DensityMatrix::new(HermitianMatrix::hermitize(&m), dims).unwrap();
        let rp = rank_profile(&rho, tol::RANK_CUTOFF);
        assert_eq!((rp.rank_rho, rp.rank_rho_p, rp.local_a, rp.local_b), (1, 1, 1, 1));
        assert!(is_ppt(&rho, 1e-10).0);
        // image projector of a pure state is the state itself
        let rep = image_projector(rho.herm(), tol::RANK_CUTOFF);
        assert_eq!(rep.rank, 1);
        assert!((rep.projector.mat() - rho.mat()).iter().all(|z| z.norm() < 1e-10));
    }

    #[test]
    fn maximally_entangled_state_is_not_ppt() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let mut psi = CVec::zeros(9);
        for i in 0..3 {
            psi[i * 3 + i] = Complex::new(1.0 / 3f64.sqrt(), 0.0);
        }
        let mut m = CMat::zeros(9, 9);
        for i in 0..9 {
            for j in 0..9 {
                m[(i, j)] = psi[i] * psi[j].conj();
            }
        }
        let rho = DensityMatrix::new(HermitianMatrix::hermitize(&m), dims).unwrap();
        let (ppt, min_eig) = is_ppt(&rho, 1e-10);
        assert!(!ppt);
        // oracle: rho^P of the maximally entangled state has min eigenvalue -1/3
        assert!((min_eig + 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_image_projector_is_identity() {
        let dims = BipartiteDims::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rho = DensityMatrix::random_mixed(dims, 4, &mut rng);
        let rep = image_projector(rho.herm(), tol::RANK_CUTOFF);
        assert_eq!(rep.rank, 4);
        let id = CMat::identity(4, 4);
        assert!((rep.projector.mat() - id).iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn ranks_and_ppt_invariant_under_product_transformations() {
        let state = build_state(&IcoConfig::regular()).unwrap();
        let rho = state.rho.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut accepted = 0;
        while accepted < 3 {
            let sa = random_conditioned(3, &mut rng);
            let sb = random_conditioned(3, &mut rng);
            let (da, db) = (det_abs(&sa), det_abs(&sb));
            if !(0.1..=10.0).contains(&da) || !(0.1..=10.0).contains(&db) {
                continue;
            }
            accepted += 1;
            let tr = product_transform(&rho, &sa, &sb).unwrap();
            let rp0 = rank_profile(&rho, tol::RANK_CUTOFF);
            let rp1 = rank_profile(&tr, tol::RANK_CUTOFF);
            assert_eq!(rp0, rp1);
            assert_eq!(is_ppt(&rho, 1e-9).0, is_ppt(&tr, 1e-9).0);
        }
    }

    fn random_conditioned(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let mut m = CMat::identity(n, n);
        for i in 0..n {
            for j in 0..n {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                m[(i, j)] += Complex::new(0.4 * re, 0.4 * im);
            }
        }
        m
    }

    fn det_abs(m: &CMat) -> f64 {
        m.clone().lu().determinant().norm()
    }
}
