//! Dense complex hermitian matrix machinery: validated hermitian matrices,
//! the orthonormal hermitian basis, real vectorization, eigendecomposition
//! and the partial transpose (as a matrix map and as a real superoperator).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::bipartite::BipartiteDims;
use crate::{tol, Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// A validated hermitian matrix. Construction enforces
/// `max |A - A^dag| < tol::HERMITICITY` element-wise and zeroes the imaginary
/// parts of the diagonal exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    m: CMat,
}

impl HermitianMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimMismatch(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        let dev = hermiticity_deviation(&m);
        if dev >= tol::HERMITICITY {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self::hermitize(&m))
    }

    /// Symmetrize `0.5 (A + A^dag)` without a tolerance check. Used on search
    /// iterates where roundoff accumulates.
    pub fn hermitize(m: &CMat) -> Self {
        let n = m.nrows();
        let mut h = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                h[(i, j)] = 0.5 * (m[(i, j)] + m[(j, i)].conj());
            }
            h[(i, i)] = Complex::new(h[(i, i)].re, 0.0);
        }
        Self { m: h }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: CMat::identity(n, n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            m: CMat::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn mat(&self) -> &CMat {
        &self.m
    }

    pub fn into_mat(self) -> CMat {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Hilbert-Schmidt inner product `Tr[A B]`, real for hermitian arguments.
    pub fn hs_inner(&self, other: &Self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                s += (self.m[(i, j)] * other.m[(j, i)]).re;
            }
        }
        s
    }
}

pub fn hermiticity_deviation(m: &CMat) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// The fixed orthonormal hermitian basis for dimension N: the N diagonal unit
/// matrices E_ii, followed for each i<j (lexicographic) by
/// (E_ij + E_ji)/sqrt(2) and i (E_ij - E_ji)/sqrt(2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermitianBasis {
    dim: usize,
}

impl HermitianBasis {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "basis dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Explicit basis element as a matrix.
    pub fn element(&self, idx: usize) -> CMat {
        let n = self.dim;
        assert!(idx < n * n, "basis index out of range");
        let mut m = CMat::zeros(n, n);
        if idx < n {
            m[(idx, idx)] = Complex::new(1.0, 0.0);
            return m;
        }
        let (i, j, anti) = Self::offdiag_index(n, idx);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        if anti {
            m[(i, j)] = Complex::new(0.0, s);
            m[(j, i)] = Complex::new(0.0, -s);
        } else {
            m[(i, j)] = Complex::new(s, 0.0);
            m[(j, i)] = Complex::new(s, 0.0);
        }
        m
    }

    fn offdiag_index(n: usize, idx: usize) -> (usize, usize, bool) {
        let mut k = idx - n;
        for i in 0..n {
            for j in (i + 1)..n {
                if k < 2 {
                    return (i, j, k == 1);
                }
                k -= 2;
            }
        }
        unreachable!()
    }

    /// Coordinates of H in this basis; inner-product preserving, so
    /// `coords . coords = Tr[H^2]`.
    pub fn vectorize(&self, h: &HermitianMatrix) -> Result<RVec> {
        if h.dim() != self.dim {
            return Err(Error::DimMismatch(format!(
                "matrix dim {} vs basis dim {}",
                h.dim(),
                self.dim
            )));
        }
        Ok(vectorize_raw(self.dim, h.mat()))
    }

    pub fn devectorize(&self, coords: &RVec) -> Result<HermitianMatrix> {
        if coords.len() != self.len() {
            return Err(Error::DimMismatch(format!(
                "coordinate length {} vs basis size {}",
                coords.len(),
                self.len()
            )));
        }
        Ok(HermitianMatrix {
            m: devectorize_raw(self.dim, coords),
        })
    }
}

/// Vectorize without the hermiticity gate; the caller promises `m` hermitian.
pub(crate) fn vectorize_raw(n: usize, m: &CMat) -> RVec {
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut v = RVec::zeros(n * n);
    for i in 0..n {
        v[i] = m[(i, i)].re;
    }
    let mut k = n;
    for i in 0..n {
        for j in (i + 1)..n {
            v[k] = sqrt2 * m[(i, j)].re;
            v[k + 1] = sqrt2 * m[(i, j)].im;
            k += 2;
        }
    }
    v
}

pub(crate) fn devectorize_raw(n: usize, coords: &RVec) -> CMat {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = Complex::new(coords[i], 0.0);
    }
    let mut k = n;
    for i in 0..n {
        for j in (i + 1)..n {
            let z = Complex::new(s * coords[k], s * coords[k + 1]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    m
}

/// Eigendecomposition of a hermitian matrix with ascending eigenvalues and
/// orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMat,
}

impl Spectrum {
    /// Reconstruct `sum_i lambda_i v_i v_i^dag`.
    pub fn reconstruct(&self) -> CMat {
        let n = self.eigenvectors.nrows();
        let mut m = CMat::zeros(n, n);
        for (i, &lam) in self.eigenvalues.iter().enumerate() {
            let v = self.eigenvectors.column(i);
            for r in 0..n {
                for c in 0..n {
                    m[(r, c)] += Complex::new(lam, 0.0) * v[r] * v[c].conj();
                }
            }
        }
        m
    }

    /// Rebuild a matrix with the eigenvalues replaced by `new_eigs` (same
    /// ordering as `eigenvalues`).
    pub fn rebuild_with(&self, new_eigs: &[f64]) -> CMat {
        assert_eq!(new_eigs.len(), self.eigenvalues.len());
        let n = self.eigenvectors.nrows();
        let mut m = CMat::zeros(n, n);
        for (i, &lam) in new_eigs.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            let v = self.eigenvectors.column(i);
            for r in 0..n {
                for c in 0..n {
                    m[(r, c)] += Complex::new(lam, 0.0) * v[r] * v[c].conj();
                }
            }
        }
        m
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }
}

/// Dense hermitian eigensolver. Delegates to nalgebra's symmetric
/// eigendecomposition and sorts ascending.
pub fn eig_hermitian(h: &HermitianMatrix) -> Spectrum {
    let n = h.dim();
    let se = h.mat().clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = CMat::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        eigenvalues.push(se.eigenvalues[i]);
        eigenvectors.set_column(k, &se.eigenvectors.column(i));
    }
    Spectrum {
        eigenvalues,
        eigenvectors,
    }
}

/// Partial transpose with respect to subsystem B, with the row-major index
/// pairing (a, b) -> a*nB + b.
pub fn partial_transpose(m: &CMat, dims: BipartiteDims) -> Result<CMat> {
    let n = dims.total();
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimMismatch(format!(
            "matrix is {}x{}, dims give N = {}",
            m.nrows(),
            m.ncols(),
            n
        )));
    }
    let (na, nb) = (dims.na, dims.nb);
    let mut out = CMat::zeros(n, n);
    for a in 0..na {
        for ap in 0..na {
            for b in 0..nb {
                for bp in 0..nb {
                    out[(a * nb + b, ap * nb + bp)] = m[(a * nb + bp, ap * nb + b)];
                }
            }
        }
    }
    Ok(out)
}

/// The partial transpose expressed as a real N^2 x N^2 superoperator in the
/// hermitian basis: `pi * vectorize(H) = vectorize(partial_transpose(H))`.
/// Orthogonal and involutive.
pub fn pt_superoperator(dims: BipartiteDims, basis: &HermitianBasis) -> Result<RMat> {
    let n = dims.total();
    if basis.dim() != n {
        return Err(Error::DimMismatch(format!(
            "basis dim {} vs system dim {}",
            basis.dim(),
            n
        )));
    }
    let nn = n * n;
    let mut pi = RMat::zeros(nn, nn);
    for m in 0..nn {
        let hm = basis.element(m);
        let hmt = partial_transpose(&hm, dims)?;
        let col = vectorize_raw(n, &hmt);
        pi.set_column(m, &col);
    }
    Ok(pi)
}

/// Kronecker product of complex matrices, A acting on the first factor.
pub fn kron_mat(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = (a.nrows(), a.ncols());
    let (rb, cb) = (b.nrows(), b.ncols());
    let mut out = CMat::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(n: usize, seed: u64) -> HermitianMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = Complex::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
        }
        HermitianMatrix::hermitize(&m)
    }

    #[test]
    fn identity_eigenvalues_are_one() {
        let h = HermitianMatrix::identity(9);
        let s = eig_hermitian(&h);
        for lam in &s.eigenvalues {
            assert!((lam - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pauli_x_eigenvalues() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 1)] = Complex::new(1.0, 0.0);
        m[(1, 0)] = Complex::new(1.0, 0.0);
        let s = eig_hermitian(&HermitianMatrix::new(m).unwrap());
        assert!((s.eigenvalues[0] + 1.0).abs() < 1e-12);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstruction_residual() {
        let h = random_hermitian(7, 3);
        let s = eig_hermitian(&h);
        let diff = s.reconstruct() - h.mat();
        let rel = diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() / h.frobenius();
        assert!(rel < tol::EIGEN_RESIDUAL, "residual {rel}");
        // eigenvector Gram = identity
        let g = s.eigenvectors.adjoint() * &s.eigenvectors;
        for i in 0..7 {
            for j in 0..7 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g[(i, j)] - Complex::new(expect, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 0)] = Complex::new(f64::NAN, 0.0);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NonFinite)));
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = CMat::zeros(2, 2);
        m[(0, 1)] = Complex::new(1.0, 0.0);
        assert!(matches!(
            HermitianMatrix::new(m),
            Err(Error::NotHermitian(_))
        ));
    }

    #[test]
    fn basis_is_orthonormal() {
        let b = HermitianBasis::new(3);
        for i in 0..9 {
            let hi = HermitianMatrix::new(b.element(i)).unwrap();
            for j in 0..9 {
                let hj = HermitianMatrix::new(b.element(j)).unwrap();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((hi.hs_inner(&hj) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vectorize_basis_element_gives_unit_vector() {
        let b = HermitianBasis::new(3);
        let h = HermitianMatrix::new(b.element(3)).unwrap();
        let v = b.vectorize(&h).unwrap();
        for k in 0..9 {
            let expect = if k == 3 { 1.0 } else { 0.0 };
            assert!((v[k] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn vectorize_zero() {
        let b = HermitianBasis::new(4);
        let v = b.vectorize(&HermitianMatrix::zeros(4)).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn vectorize_round_trip_and_recomposition() {
        let b = HermitianBasis::new(5);
        let h = random_hermitian(5, 11);
        let v = b.vectorize(&h).unwrap();
        // independent recomposition: sum coords_i h_i
        let mut sum = CMat::zeros(5, 5);
        for k in 0..25 {
            sum += b.element(k) * Complex::new(v[k], 0.0);
        }
        let dev = hermiticity_deviation(&(sum.clone() - h.mat()));
        assert!(dev < 1e-12);
        let back = b.devectorize(&v).unwrap();
        let diff = back.mat() - h.mat();
        assert!(diff.iter().all(|z| z.norm() < 1e-12));
        // inner product preserved
        let h2 = random_hermitian(5, 12);
        let v2 = b.vectorize(&h2).unwrap();
        assert!((v.dot(&v2) - h.hs_inner(&h2)).abs() < 1e-12);
    }

    #[test]
    fn partial_transpose_defining_case() {
        let dims = BipartiteDims::new(2, 3).unwrap();
        let x = random_hermitian(2, 21).into_mat();
        let y = random_hermitian(3, 22).into_mat();
        let m = kron_mat(&x, &y);
        let mt = partial_transpose(&m, dims).unwrap();
        let expect = kron_mat(&x, &y.transpose());
        assert!((mt - expect).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn partial_transpose_involution_and_trace_invariance() {
        let dims = BipartiteDims::new(3, 3).unwrap();
        let h = random_hermitian(9, 33);
        let p1 = partial_transpose(h.mat(), dims).unwrap();
        let p2 = partial_transpose(&p1, dims).unwrap();
        assert!((p2 - h.mat()).iter().all(|z| z.norm() < 1e-14));
        let hp = HermitianMatrix::new(p1).unwrap();
        assert!((hp.hs_inner(&hp) - h.hs_inner(&h)).abs() < 1e-12);
    }

    #[test]
    fn pt_spectrum_side_independent() {
        // PT over A and PT over B are related by a full transpose, which
        // preserves the spectrum of a hermitian matrix.
        let dims = BipartiteDims::new(2, 3).unwrap();
        let h = random_hermitian(6, 5);
        let over_b = partial_transpose(h.mat(), dims).unwrap();
        let over_a = over_b.transpose();
        let ea = eig_hermitian(&HermitianMatrix::hermitize(&over_a)).eigenvalues;
        let eb = eig_hermitian(&HermitianMatrix::hermitize(&over_b)).eigenvalues;
        for (a, b) in ea.iter().zip(eb.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn superoperator_involutive_and_orthogonal() {
        let dims = BipartiteDims::new(2, 2).unwrap();
        let basis = HermitianBasis::new(4);
        let pi = pt_superoperator(dims, &basis).unwrap();
        let sq = &pi * &pi;
        let gram = pi.transpose() * &pi;
        let id = RMat::identity(16, 16);
        assert!((sq - &id).iter().all(|x| x.abs() < 1e-12));
        assert!((gram - &id).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn superoperator_matches_matrix_map() {
        let dims = BipartiteDims::new(2, 3).unwrap();
        let basis = HermitianBasis::new(6);
        let pi = pt_superoperator(dims, &basis).unwrap();
        let h = random_hermitian(6, 44);
        let v = basis.vectorize(&h).unwrap();
        let lhs = &pi * v;
        let hp = partial_transpose(h.mat(), dims).unwrap();
        let rhs = basis
            .vectorize(&HermitianMatrix::new(hp).unwrap())
            .unwrap();
        assert!((lhs - rhs).iter().all(|x| x.abs() < 1e-12));
    }
}
