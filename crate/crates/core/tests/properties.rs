//! Randomized structural properties of the hermitian-space and bipartite
//! primitives, checked over proptest-generated inputs.

use extppt::bipartite::{BipartiteDims, DensityMatrix};
use extppt::herm::{
    eig_hermitian, hermiticity_deviation, kron_mat, partial_transpose, HermitianBasis,
    HermitianMatrix,
};
use nalgebra::DMatrix;
use num_complex::Complex;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type CMat = DMatrix<Complex<f64>>;

fn random_hermitian(n: usize, seed: u64) -> HermitianMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            g[(i, j)] = Complex::new(re, im);
        }
    }
    HermitianMatrix::hermitize(&g)
}

fn random_state(dims: BipartiteDims, rank: usize, seed: u64) -> DensityMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DensityMatrix::random_mixed(dims, rank, &mut rng)
}

fn dims_strategy() -> impl Strategy<Value = BipartiteDims> {
    (2usize..=4, 2usize..=4).prop_map(|(a, b)| BipartiteDims::new(a, b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// vectorize/devectorize over the hermitian basis is a bijective isometry.
    #[test]
    fn vectorize_round_trip(n in 2usize..=6, seed in 0u64..1_000_000) {
        let h = random_hermitian(n, seed);
        let basis = HermitianBasis::new(n);
        let v = basis.vectorize(&h).unwrap();
        let back = basis.devectorize(&v).unwrap();
        prop_assert!((h.mat() - back.mat()).norm() < 1e-12 * (1.0 + h.frobenius()));
        prop_assert!((v.norm() - h.frobenius()).abs() < 1e-10 * (1.0 + h.frobenius()));
    }

    /// the partial transpose is an involution, preserves hermiticity and the
    /// trace, and is a Hilbert-Schmidt isometry.
    #[test]
    fn partial_transpose_structure(dims in dims_strategy(), seed in 0u64..1_000_000) {
        let n = dims.total();
        let h = random_hermitian(n, seed);
        let pt = partial_transpose(h.mat(), dims).unwrap();
        prop_assert!(hermiticity_deviation(&pt) < 1e-12);
        let back = partial_transpose(&pt, dims).unwrap();
        prop_assert!((h.mat() - &back).norm() < 1e-12 * (1.0 + h.frobenius()));
        let tr: Complex<f64> = pt.diagonal().iter().sum();
        prop_assert!((tr.re - h.trace()).abs() < 1e-10 * (1.0 + h.trace().abs()));
        prop_assert!((pt.norm() - h.frobenius()).abs() < 1e-10 * (1.0 + h.frobenius()));
        // hs inner products are preserved pairwise as well
        let g = random_hermitian(n, seed.wrapping_add(1));
        let gpt = HermitianMatrix::hermitize(&partial_transpose(g.mat(), dims).unwrap());
        let hpt = HermitianMatrix::hermitize(&pt);
        prop_assert!((h.hs_inner(&g) - hpt.hs_inner(&gpt)).abs() < 1e-9 * (1.0 + h.frobenius() * g.frobenius()));
    }

    /// the kronecker product of factor transforms acts blockwise: PT of a
    /// product transform moves conjugation onto the transposed factor.
    #[test]
    fn product_transform_pt_covariance(dims in dims_strategy(), seed in 0u64..1_000_000) {
        let n = dims.total();
        let h = random_hermitian(n, seed);
        let a = random_hermitian(dims.na, seed.wrapping_add(7)).into_mat();
        let b = random_hermitian(dims.nb, seed.wrapping_add(13)).into_mat();
        let s = kron_mat(&a, &b);
        let lhs = partial_transpose(&(&s * h.mat() * s.adjoint()), dims).unwrap();
        let sc = kron_mat(&a, &b.map(|z| z.conj()));
        let rhs = &sc * partial_transpose(h.mat(), dims).unwrap() * sc.adjoint();
        prop_assert!((lhs - rhs).norm() < 1e-9 * (1.0 + h.frobenius()));
    }

    /// density matrices: unit trace, PSD spectrum, purity bounds, and the
    /// trace inequality Tr[rho^2] <= 1 with equality only near pure states.
    #[test]
    fn density_matrix_invariants(dims in dims_strategy(), rank in 1usize..=4, seed in 0u64..1_000_000) {
        let rank = rank.min(dims.total());
        let rho = random_state(dims, rank, seed);
        prop_assert!((rho.herm().trace() - 1.0).abs() < 1e-10);
        let eigs = eig_hermitian(rho.herm()).eigenvalues;
        for &lam in eigs.iter() {
            prop_assert!(lam > -1e-10);
        }
        let purity = rho.purity();
        prop_assert!(purity <= 1.0 + 1e-10);
        prop_assert!(purity >= 1.0 / dims.total() as f64 - 1e-10);
        // purity equals the sum of squared eigenvalues
        let s2: f64 = eigs.iter().map(|l| l * l).sum();
        prop_assert!((purity - s2).abs() < 1e-9);
    }

    /// partial traces of a state are unit-trace and consistent with the full
    /// trace over products of local identities.
    #[test]
    fn partial_trace_consistency(dims in dims_strategy(), seed in 0u64..1_000_000) {
        let rho = random_state(dims, dims.total(), seed);
        let ra = rho.trace_out_b();
        let rb = rho.trace_out_a();
        prop_assert!((ra.trace() - 1.0).abs() < 1e-10);
        prop_assert!((rb.trace() - 1.0).abs() < 1e-10);
        prop_assert_eq!(ra.dim(), dims.na);
        prop_assert_eq!(rb.dim(), dims.nb);
    }
}
