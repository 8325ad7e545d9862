//! The two numerical search methods: (1) an iterative search for PPT states
//! with prescribed rank (optionally of projection form), alternating spectral
//! projection and positivity repair with a linearized Newton finish, and
//! (2) a Gauss-Newton/conjugate-gradient solver for the product
//! transformation equation rho0 S^dag S rho0 = rho0 that maps a given
//! extremal state to projection form; plus the infinitesimal tangent-family
//! probe around a projection-form state.

use std::collections::BTreeMap;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bipartite::{expected_rank, BipartiteDims, DensityMatrix};
use crate::herm::{
    devectorize_raw, eig_hermitian, kron_mat, partial_transpose, vectorize_raw, CMat,
    HermitianBasis, HermitianMatrix, RMat, RVec,
};
use crate::upb::{find_product_vectors, FinderConfig, ProjectionFormState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStatus {
    Converged,
    NonConverged,
    SingularAbort,
}

#[derive(Debug, Clone, Copy)]
pub struct SearchConfig {
    pub seed: u64,
    pub max_iter: usize,
    pub tol_residual: f64,
    /// Step factor in (0, 1] for the alternating phase.
    pub damping: f64,
    pub restarts: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 10_000,
            tol_residual: 1e-10,
            damping: 1.0,
            restarts: 5,
        }
    }
}

impl SearchConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    pub state: Option<DensityMatrix>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Constraint regime for the iterative search.
#[derive(Debug, Clone, Copy)]
enum Regime {
    /// Eigenvalues of rho forced to {0 x (N-r), 1/r x r}. With `pt_rank`
    /// set, rho^P is additionally pinned to that rank (used at the lowest
    /// extremal rank, where both ranks coincide); otherwise it is only kept
    /// positive.
    Projection { r: usize, pt_rank: Option<usize> },
    /// Ranks (m, n) for rho and rho^P; nonzero eigenvalues free.
    Rank { m: usize, n: usize },
}

/// Conjugate gradient solve of the symmetric positive-semidefinite system
/// A x = a, iterations capped at the dimension. On singular A started from
/// zero the iterates stay in the range of A, giving least-squares behavior.
pub fn solve_cg(a_mat: &RMat, a_vec: &RVec, tol: f64) -> Result<RVec> {
    let n = a_mat.nrows();
    if a_mat.ncols() != n || a_vec.len() != n {
        return Err(Error::DimMismatch("solve_cg shapes".into()));
    }
    let scale = a_mat.iter().cloned().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((a_mat[(i, j)] - a_mat[(j, i)]).abs());
        }
    }
    if dev > 1e-10 * (1.0 + scale) {
        return Err(Error::InvalidInput(format!(
            "solve_cg requires a symmetric matrix (asymmetry {dev:.3e})"
        )));
    }
    let mut x = RVec::zeros(n);
    let mut r = a_vec.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let target = tol * a_vec.norm();
    if rs.sqrt() <= target {
        return Ok(x);
    }
    for _ in 0..n {
        let ap = a_mat * &p;
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rs / pap;
        x += &p * alpha;
        r -= ap * alpha;
        let rs_new = r.dot(&r);
        if rs_new.sqrt() <= target {
            break;
        }
        p = &r + &p * (rs_new / rs);
        rs = rs_new;
    }
    Ok(x)
}

fn violation(rho: &HermitianMatrix, pt: &HermitianMatrix, regime: Regime) -> f64 {
    let n = rho.dim();
    let eigs = eig_hermitian(rho).eigenvalues;
    let peigs = eig_hermitian(pt).eigenvalues;
    match regime {
        Regime::Projection { r, pt_rank } => {
            let mut v: f64 = 0.0;
            for (i, &lam) in eigs.iter().enumerate() {
                let target = if i < n - r { 0.0 } else { 1.0 / r as f64 };
                v = v.max((lam - target).abs());
            }
            v = v.max(-peigs[0]);
            if let Some(k) = pt_rank {
                for &mu in &peigs[..n - k] {
                    v = v.max(mu.abs());
                }
            }
            // see the symmetric pinning in the Newton step: when the partial
            // transpose is itself close to a rank-r projection, its full
            // spectral deviation counts towards the residual
            let one_r = 1.0 / r as f64;
            let scale = peigs.iter().cloned().fold(0.0_f64, |m, x| m.max(x.abs()));
            let active = peigs
                .iter()
                .take_while(|&&mu| mu < 0.05 * scale.max(1.0 / n as f64))
                .count();
            if n - active == r && peigs[active..].iter().all(|&mu| (mu - one_r).abs() < 0.05) {
                for &mu in &peigs[..active] {
                    v = v.max(mu.abs());
                }
                for &mu in &peigs[active..] {
                    v = v.max((mu - one_r).abs());
                }
            }
            v
        }
        Regime::Rank { m, n: pn } => {
            let mut v: f64 = 0.0;
            for (i, &lam) in eigs.iter().enumerate() {
                if i < n - m {
                    v = v.max(lam.abs());
                } else {
                    v = v.max(-lam);
                }
            }
            for (j, &mu) in peigs.iter().enumerate() {
                if j < n - pn {
                    v = v.max(mu.abs());
                } else {
                    v = v.max(-mu);
                }
            }
            v.max(0.0)
        }
    }
}

/// One alternating-projection sweep: spectral repair of rho, positivity (and
/// rank) repair of rho^P, trace renormalization.
fn sweep(rho: &HermitianMatrix, dims: BipartiteDims, regime: Regime) -> HermitianMatrix {
    let n = rho.dim();
    let spec = eig_hermitian(rho);
    let mut eigs = vec![0.0; n];
    match regime {
        Regime::Projection { r, .. } => {
            for i in (n - r)..n {
                eigs[i] = 1.0 / r as f64;
            }
        }
        Regime::Rank { m, .. } => {
            // small positive floor so the kept part of the spectrum cannot
            // collapse onto the boundary and lose rank
            for i in (n - m)..n {
                eigs[i] = spec.eigenvalues[i].max(1e-3);
            }
        }
    }
    let rho1 = spec.rebuild_with(&eigs);
    let pt = partial_transpose(&rho1, dims).unwrap();
    let pspec = eig_hermitian(&HermitianMatrix::hermitize(&pt));
    let mut peigs = vec![0.0; n];
    match regime {
        Regime::Projection { pt_rank, .. } => {
            let zeros = pt_rank.map(|k| n - k).unwrap_or(0);
            for (j, &mu) in pspec.eigenvalues.iter().enumerate() {
                peigs[j] = if j < zeros { 0.0 } else { mu.max(0.0) };
            }
        }
        Regime::Rank { n: pn, .. } => {
            for j in (n - pn)..n {
                peigs[j] = pspec.eigenvalues[j].max(1e-3);
            }
        }
    }
    let repaired_pt = pspec.rebuild_with(&peigs);
    let back = partial_transpose(&repaired_pt, dims).unwrap();
    let h = HermitianMatrix::hermitize(&back);
    let tr = h.trace();
    HermitianMatrix::hermitize(&(h.mat() / Complex::new(tr, 0.0)))
}

/// Linearized Newton refinement near a solution: first-order eigenvalue
/// perturbation rows v_i v_i^dag pin the constrained eigenvalues of rho and
/// rho^P; the minimum-norm update solves B B^T y = rhs by conjugate gradient.
fn newton_polish(
    rho: &HermitianMatrix,
    dims: BipartiteDims,
    regime: Regime,
    tol_residual: f64,
    max_steps: usize,
    history: &mut Vec<f64>,
) -> HermitianMatrix {
    let n = rho.dim();
    let nn = n * n;
    let mut current = rho.clone();
    let mut best = current.clone();
    let mut best_resid = violation(
        &current,
        &HermitianMatrix::hermitize(&partial_transpose(current.mat(), dims).unwrap()),
        regime,
    );
    for _ in 0..max_steps {
        let pt = HermitianMatrix::hermitize(&partial_transpose(current.mat(), dims).unwrap());
        let resid = violation(&current, &pt, regime);
        history.push(resid);
        if resid < best_resid {
            best_resid = resid;
            best = current.clone();
        }
        if resid < tol_residual {
            break;
        }
        let spec = eig_hermitian(&current);
        let pspec = eig_hermitian(&pt);
        let mut rows: Vec<RVec> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let push_dyad = |rows: &mut Vec<RVec>, vecs: &CMat, col: usize, pt_row: bool| {
            let vcol = vecs.column(col);
            let mut dyad = CMat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    dyad[(i, j)] = vcol[i] * vcol[j].conj();
                }
            }
            let m = if pt_row {
                partial_transpose(&dyad, dims).unwrap()
            } else {
                dyad
            };
            rows.push(vectorize_raw(n, &m));
        };
        // Within a degenerate target cluster the off-diagonal block elements
        // shift the eigenvalues at first order as well, so they get pinned to
        // zero alongside the diagonal rows.
        let push_pair = |rows: &mut Vec<RVec>, rhs: &mut Vec<f64>, vecs: &CMat, i: usize, j: usize, pt_row: bool| {
            let vi = vecs.column(i);
            let vj = vecs.column(j);
            let mut re = CMat::zeros(n, n);
            let mut im = CMat::zeros(n, n);
            for a in 0..n {
                for b in 0..n {
                    let x = vi[a] * vj[b].conj();
                    let y = vj[a] * vi[b].conj();
                    re[(a, b)] = (x + y) * Complex::new(0.5, 0.0);
                    im[(a, b)] = (x - y) * Complex::new(0.0, 0.5);
                }
            }
            for m in [re, im] {
                let m = if pt_row {
                    partial_transpose(&m, dims).unwrap()
                } else {
                    m
                };
                rows.push(vectorize_raw(n, &m));
                rhs.push(0.0);
            }
        };
        let push_cluster = |rows: &mut Vec<RVec>, rhs: &mut Vec<f64>, vecs: &CMat, lo: usize, hi: usize, pt_row: bool| {
            for i in lo..hi {
                for j in (i + 1)..hi {
                    push_pair(rows, rhs, vecs, i, j, pt_row);
                }
            }
        };
        match regime {
            Regime::Projection { r, pt_rank } => {
                for i in 0..n {
                    let target = if i < n - r { 0.0 } else { 1.0 / r as f64 };
                    push_dyad(&mut rows, &spec.eigenvectors, i, false);
                    rhs.push(target - spec.eigenvalues[i]);
                }
                push_cluster(&mut rows, &mut rhs, &spec.eigenvectors, 0, n - r, false);
                push_cluster(&mut rows, &mut rhs, &spec.eigenvectors, n - r, n, false);
                // active positivity constraints of rho^P: eigenvalues in the
                // zero cluster are pinned to zero
                let one_r = 1.0 / r as f64;
                let scale = pspec.eigenvalues.iter().cloned().fold(0.0_f64, |m, x| m.max(x.abs()));
                let active = match pt_rank {
                    Some(k) => n - k,
                    None => pspec
                        .eigenvalues
                        .iter()
                        .take_while(|&&mu| mu < 0.05 * scale.max(1.0 / n as f64))
                        .count(),
                };
                for j in 0..active {
                    push_dyad(&mut rows, &pspec.eigenvectors, j, true);
                    rhs.push(-pspec.eigenvalues[j]);
                }
                push_cluster(&mut rows, &mut rhs, &pspec.eigenvectors, 0, active, true);
                // when rho^P is already close to a rank-r projection (forced
                // at the lowest extremal rank, where purity equality makes
                // the nonzero eigenvalues equal), pin its full spectrum:
                // otherwise those eigenvalues only approach 1/r as the square
                // root of the purity defect
                let symmetric = n - active == r
                    && pspec.eigenvalues[active..]
                        .iter()
                        .all(|&mu| (mu - one_r).abs() < 0.05);
                if symmetric {
                    for j in active..n {
                        push_dyad(&mut rows, &pspec.eigenvectors, j, true);
                        rhs.push(one_r - pspec.eigenvalues[j]);
                    }
                    push_cluster(&mut rows, &mut rhs, &pspec.eigenvectors, active, n, true);
                }
            }
            Regime::Rank { m, n: pn } => {
                for i in 0..(n - m) {
                    push_dyad(&mut rows, &spec.eigenvectors, i, false);
                    rhs.push(-spec.eigenvalues[i]);
                }
                push_cluster(&mut rows, &mut rhs, &spec.eigenvectors, 0, n - m, false);
                for j in 0..(n - pn) {
                    push_dyad(&mut rows, &pspec.eigenvectors, j, true);
                    rhs.push(-pspec.eigenvalues[j]);
                }
                push_cluster(&mut rows, &mut rhs, &pspec.eigenvectors, 0, n - pn, true);
                // keep the trace fixed
                let id = CMat::identity(n, n);
                rows.push(vectorize_raw(n, &id));
                rhs.push(1.0 - current.trace());
            }
        }
        let k = rows.len();
        let mut b = RMat::zeros(k, nn);
        for (i, row) in rows.iter().enumerate() {
            b.row_mut(i).copy_from(&row.transpose());
        }
        let gram = &b * b.transpose();
        let rhs_vec = RVec::from_vec(rhs);
        let y = match solve_cg(&gram, &rhs_vec, 1e-14) {
            Ok(y) => y,
            Err(_) => break,
        };
        let delta = b.transpose() * y;
        let next = HermitianMatrix::hermitize(&(current.mat() + devectorize_raw(n, &delta)));
        let tr = next.trace();
        current = HermitianMatrix::hermitize(&(next.mat() / Complex::new(tr, 0.0)));
    }
    let pt = HermitianMatrix::hermitize(&partial_transpose(current.mat(), dims).unwrap());
    let final_resid = violation(&current, &pt, regime);
    if final_resid < best_resid {
        best = current;
    }
    best
}

/// The full iteration for one starting point: alternating sweeps with
/// periodic Newton polish attempts once the residual is small.
fn iterate(
    start: &HermitianMatrix,
    dims: BipartiteDims,
    regime: Regime,
    config: &SearchConfig,
) -> (HermitianMatrix, Vec<f64>, bool, usize) {
    let mut rho = start.clone();
    let mut history = Vec::new();
    let mut iter = 0;
    while iter < config.max_iter {
        iter += 1;
        let next = sweep(&rho, dims, regime);
        rho = if config.damping >= 1.0 {
            next
        } else {
            HermitianMatrix::hermitize(
                &(rho.mat() + (next.mat() - rho.mat()) * Complex::new(config.damping, 0.0)),
            )
        };
        let pt = HermitianMatrix::hermitize(&partial_transpose(rho.mat(), dims).unwrap());
        let resid = violation(&rho, &pt, regime);
        history.push(resid);
        if resid < config.tol_residual {
            return (rho, history, true, iter);
        }
        if resid < 1e-2 && iter % 25 == 0 {
            let polished =
                newton_polish(&rho, dims, regime, config.tol_residual, 30, &mut history);
            let ppt =
                HermitianMatrix::hermitize(&partial_transpose(polished.mat(), dims).unwrap());
            let presid = violation(&polished, &ppt, regime);
            if presid < config.tol_residual {
                return (polished, history, true, iter);
            }
            if presid < resid {
                rho = polished;
            }
        }
    }
    (rho, history, false, iter)
}

fn run_search(dims: BipartiteDims, regime: Regime, config: &SearchConfig) -> SearchOutcome {
    let init_rank = match regime {
        Regime::Projection { r, .. } => r,
        Regime::Rank { m, .. } => m,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut last_history = Vec::new();
    let mut total_iters = 0;
    for _restart in 0..config.restarts.max(1) {
        let start = DensityMatrix::random_mixed(dims, init_rank, &mut rng)
            .herm()
            .clone();
        let (rho, history, converged, iter) = iterate(&start, dims, regime, config);
        total_iters += iter;
        if converged {
            let state = DensityMatrix::from_unnormalized(&rho, dims)
                .expect("converged iterate is a valid density matrix");
            // at the lowest extremal rank the iteration occasionally lands on
            // a non-extremal stratum (kernels carrying product-vector
            // continua, degenerate coefficient fits); certify and retry
            if let Regime::Projection {
                pt_rank: Some(_), ..
            } = regime
            {
                let extremal = crate::geometry::extremality_check(&state, crate::tol::RANK_CUTOFF)
                    .map(|c| c.is_extremal)
                    .unwrap_or(false);
                if !extremal {
                    last_history = history;
                    continue;
                }
            }
            let mut diagnostics = BTreeMap::new();
            diagnostics.insert(
                "final_residual".to_string(),
                *history.last().unwrap_or(&0.0),
            );
            return SearchOutcome {
                status: SearchStatus::Converged,
                state: Some(state),
                iterations: total_iters,
                residual_history: history,
                diagnostics,
            };
        }
        last_history = history;
    }
    SearchOutcome {
        status: SearchStatus::NonConverged,
        state: None,
        iterations: total_iters,
        residual_history: last_history,
        diagnostics: BTreeMap::new(),
    }
}

/// Search for a PPT density matrix whose eigenvalues are
/// {0 x (N-r), 1/r x r}; the partial transpose is only required positive.
pub fn search_projection_ppt(
    dims: BipartiteDims,
    r: usize,
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    let n = dims.total();
    if r <= 1 || r >= n {
        return Err(Error::InvalidInput(format!(
            "projection rank must satisfy 1 < r < {n}, got {r}"
        )));
    }
    // at the lowest extremal rank the purity identity forces rho^P to the
    // same rank, so the search pins it there; higher-rank searches leave the
    // partial transpose free
    let pt_rank = if r == expected_rank(dims) {
        Some(r)
    } else {
        None
    };
    Ok(run_search(dims, Regime::Projection { r, pt_rank }, config))
}

/// Search for a PPT density matrix with rank profile (m, n); the nonzero
/// eigenvalues are unconstrained.
pub fn search_rank_ppt(
    dims: BipartiteDims,
    ranks: (usize, usize),
    config: &SearchConfig,
) -> Result<SearchOutcome> {
    let n = dims.total();
    if ranks.0 == 0 || ranks.0 > n || ranks.1 == 0 || ranks.1 > n {
        return Err(Error::InvalidInput(format!(
            "rank targets must lie in [1, {n}], got {ranks:?}"
        )));
    }
    Ok(run_search(
        dims,
        Regime::Rank {
            m: ranks.0,
            n: ranks.1,
        },
        config,
    ))
}

/// Rank search seeded at a given hermitian matrix instead of a random start.
/// Used by the perturbation repair step.
pub fn repair_rank_ppt(
    initial: &HermitianMatrix,
    dims: BipartiteDims,
    ranks: (usize, usize),
    config: &SearchConfig,
) -> SearchOutcome {
    let regime = Regime::Rank {
        m: ranks.0,
        n: ranks.1,
    };
    let tr = initial.trace();
    let start = HermitianMatrix::hermitize(&(initial.mat() / Complex::new(tr, 0.0)));
    let (rho, history, converged, iter) = iterate(&start, dims, regime, config);
    let state = if converged {
        Some(
            DensityMatrix::from_unnormalized(&rho, dims)
                .expect("converged iterate is a valid density matrix"),
        )
    } else {
        None
    };
    SearchOutcome {
        status: if converged {
            SearchStatus::Converged
        } else {
            SearchStatus::NonConverged
        },
        state,
        iterations: iter,
        residual_history: history,
        diagnostics: BTreeMap::new(),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TransformSolveConfig {
    pub max_outer: usize,
    pub cg_tol: f64,
    /// Abort when |det S_A . det S_B| (Frobenius-normalized factors) falls
    /// below this.
    pub singular_guard: f64,
    pub seed: u64,
}

impl Default for TransformSolveConfig {
    fn default() -> Self {
        Self {
            max_outer: 400,
            cg_tol: 1e-12,
            singular_guard: 1e-6,
            seed: 0,
        }
    }
}

impl TransformSolveConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransformOutcome {
    pub status: SearchStatus,
    pub sa: CMat,
    pub sb: CMat,
    pub state: Option<ProjectionFormState>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// |det S_A . det S_B| of the Frobenius-normalized factors per iteration.
    pub det_history: Vec<f64>,
}

/// Image-restricted hermitian coordinates: isometry U onto the image of rho0
/// and the map M -> vectorize(U^dag M U) in the rank-r hermitian basis.
struct ImageFrame {
    u: CMat,
    r: usize,
}

impl ImageFrame {
    fn new(rho0: &DensityMatrix, r: usize) -> Self {
        let spec = eig_hermitian(rho0.herm());
        let n = rho0.herm().dim();
        let mut u = CMat::zeros(n, r);
        for k in 0..r {
            u.set_column(k, &spec.eigenvectors.column(n - r + k));
        }
        Self { u, r }
    }

    fn coords(&self, m: &CMat) -> RVec {
        let proj = self.u.adjoint() * m * &self.u;
        vectorize_raw(self.r, &proj)
    }
}

fn orthonormal_complement_real(g: &RVec) -> RMat {
    let n = g.len();
    let gn = g / g.norm();
    let mut proj = RMat::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            proj[(i, j)] -= gn[i] * gn[j];
        }
    }
    let se = proj.symmetric_eigen();
    let mut cols: Vec<usize> = (0..n).collect();
    cols.sort_by(|&a, &b| se.eigenvalues[b].partial_cmp(&se.eigenvalues[a]).unwrap());
    let mut v = RMat::zeros(n, n - 1);
    for (k, &i) in cols.iter().take(n - 1).enumerate() {
        v.set_column(k, &se.eigenvectors.column(i));
    }
    v
}

fn det_abs_normalized(s: &CMat) -> f64 {
    let norm = s.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let scaled = s / Complex::new(norm, 0.0);
    scaled.lu().determinant().norm()
}

/// Solve rho0 S^dag S rho0 = rho0 for a product transformation
/// S = S_A (x) S_B with hermitian factors, by Gauss-Newton iteration with the
/// normal equations solved by conjugate gradient. On success the transformed
/// state S rho0 S^dag is exactly idempotent and is returned in projection
/// form together with its kernel UPB.
pub fn transform_to_projection(
    rho0: &DensityMatrix,
    config: &TransformSolveConfig,
) -> Result<TransformOutcome> {
    let dims = rho0.dims();
    let r = expected_rank(dims);
    let rank = crate::bipartite::hermitian_rank(rho0.herm(), crate::tol::RANK_CUTOFF);
    if rank != r {
        return Err(Error::InvalidInput(format!(
            "input has rank {rank}, the transform solve expects the lowest extremal rank {r}"
        )));
    }
    let (na, nb) = (dims.na, dims.nb);
    let (ka, kb) = (na * na, nb * nb);
    let frame = ImageFrame::new(rho0, r);
    let target = frame.coords(rho0.mat());
    let basis_a = HermitianBasis::new(na);
    let basis_b = HermitianBasis::new(nb);

    // initial coefficients: vectorized identities plus seeded noise
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut mu = RVec::zeros(ka + kb);
    for i in 0..na {
        mu[i] = 1.0;
    }
    for i in 0..nb {
        mu[ka + i] = 1.0;
    }
    for i in 0..(ka + kb) {
        let noise: f64 = StandardNormal.sample(&mut rng);
        mu[i] += 0.3 * noise;
    }

    let rho_mat = rho0.mat().clone();
    let eval = |mu: &RVec| -> (CMat, CMat, RVec) {
        let sa = devectorize_raw(na, &mu.rows(0, ka).into_owned());
        let sb = devectorize_raw(nb, &mu.rows(ka, kb).into_owned());
        let k = kron_mat(&(&sa * &sa), &(&sb * &sb));
        let f = frame.coords(&(&rho_mat * k * &rho_mat));
        (sa, sb, f)
    };

    let mut residual_history = Vec::new();
    let mut det_history = Vec::new();
    let (mut sa, mut sb, mut f) = eval(&mu);
    let mut status = SearchStatus::NonConverged;
    let mut iterations = 0;
    for outer in 0..config.max_outer {
        iterations = outer + 1;
        let resid_vec = &target - &f;
        let resid = resid_vec.norm();
        residual_history.push(resid);
        let det = det_abs_normalized(&sa) * det_abs_normalized(&sb);
        det_history.push(det);
        // iterate well past the success threshold so the assembled state
        // passes its own idempotency validation
        if resid < 1e-12 {
            break;
        }
        if det < config.singular_guard {
            status = SearchStatus::SingularAbort;
            break;
        }
        // full Jacobian, then restricted to the complement of the relative
        // A/B scale gauge direction
        let sb2 = &sb * &sb;
        let sa2 = &sa * &sa;
        let mut b_full = RMat::zeros(r * r, ka + kb);
        for p in 0..ka {
            let h = basis_a.element(p);
            let dsa2 = &h * &sa + &sa * &h;
            let dk = kron_mat(&dsa2, &sb2);
            b_full.set_column(p, &frame.coords(&(&rho_mat * dk * &rho_mat)));
        }
        for p in 0..kb {
            let h = basis_b.element(p);
            let dsb2 = &h * &sb + &sb * &h;
            let dk = kron_mat(&sa2, &dsb2);
            b_full.set_column(ka + p, &frame.coords(&(&rho_mat * dk * &rho_mat)));
        }
        let mut gauge = RVec::zeros(ka + kb);
        for i in 0..ka {
            gauge[i] = mu[i];
        }
        for i in 0..kb {
            gauge[ka + i] = -mu[ka + i];
        }
        let v = orthonormal_complement_real(&gauge);
        let b = &b_full * &v;
        let gram = b.transpose() * &b;
        let rhs = b.transpose() * &resid_vec;
        let dnu = solve_cg(&gram, &rhs, config.cg_tol)?;
        let step_full = &v * dnu;
        // backtracking on the Gauss-Newton step
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial = &mu + &step_full * alpha;
            let (tsa, tsb, tf) = eval(&trial);
            if (&target - &tf).norm() < resid {
                mu = trial;
                sa = tsa;
                sb = tsb;
                f = tf;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        // rebalance the relative scale gauge for conditioning
        let na_norm = mu.rows(0, ka).norm();
        let nb_norm = mu.rows(ka, kb).norm();
        if na_norm > 0.0 && nb_norm > 0.0 {
            let c = (nb_norm / na_norm).sqrt();
            for i in 0..ka {
                mu[i] *= c;
            }
            for i in 0..kb {
                mu[ka + i] /= c;
            }
            let (nsa, nsb, nf) = eval(&mu);
            sa = nsa;
            sb = nsb;
            f = nf;
        }
    }

    if status != SearchStatus::SingularAbort && (&target - &f).norm() < 1e-8 {
        status = SearchStatus::Converged;
    }

    let state = if status == SearchStatus::Converged {
        let s = kron_mat(&sa, &sb);
        let transformed = &s * rho0.mat() * s.adjoint();
        let rough =
            DensityMatrix::from_unnormalized(&HermitianMatrix::hermitize(&transformed), dims)?;
        // the equation residual controls the spectrum of the partial
        // transpose only to its square root; a final Newton polish lands the
        // state exactly on the projection variety
        let polished = newton_polish(
            rough.herm(),
            dims,
            Regime::Projection { r, pt_rank: Some(r) },
            1e-12,
            40,
            &mut Vec::new(),
        );
        let rho = DensityMatrix::from_unnormalized(&polished, dims)?;
        // the kernel UPB of S rho0 S^dag is the image of the input kernel's
        // product vectors under S_A^-1 (x) S_B^-1; the finder is more robust
        // on the input, which the caller controls. Each mapped root is then
        // re-converged against the polished state's image.
        let kernel = crate::bipartite::kernel_projector(rho0.herm(), crate::tol::RANK_CUTOFF);
        let kspan = kernel_span(&kernel.projector);
        let finder = FinderConfig::with_seed(config.seed.wrapping_add(0x9e37_79b9));
        let (members, _warn) = find_product_vectors(&kspan, dims, &finder)?;
        let sa_inv = sa.clone().try_inverse().ok_or_else(|| {
            Error::Construction("transform factor S_A is not invertible".into())
        })?;
        let sb_inv = sb.clone().try_inverse().ok_or_else(|| {
            Error::Construction("transform factor S_B is not invertible".into())
        })?;
        let image = ImageFrame::new(&rho, r);
        let mapped = members
            .iter()
            .map(|pv| {
                let raw = crate::bipartite::ProductVector::new(
                    &sa_inv * &pv.phi,
                    &sb_inv * &pv.chi,
                )?;
                Ok(crate::upb::polish_product_root(&image.u, dims, &raw).normalized())
            })
            .collect::<Result<Vec<_>>>()?;
        let upb = crate::bipartite::GeneralizedUPB::new(dims, mapped)?;
        // The equation residual controls the distance to the
        // coefficient-decomposable family only quadratically (the solution
        // variety has singular strata where family branches meet), so the
        // state can still sit ~1e-7 off it. A final Gauss-Newton solve of the
        // exact family condition on the members and coefficients lands on it.
        let q = HermitianMatrix::hermitize(
            &(CMat::identity(dims.total(), dims.total())
                - rho.mat() * Complex::new(r as f64, 0.0)),
        );
        let mut fit = crate::upb::extract_p(&q, &upb, dims)?;
        let mut upb = upb;
        if fit.residual > 1e-6 {
            // the mapped roots can collide or land on the wrong branch when
            // the transform factors are very ill-conditioned; fall back to
            // finding the kernel UPB of the polished state directly
            let own_kernel =
                crate::bipartite::kernel_projector(rho.herm(), crate::tol::RANK_CUTOFF);
            let own_span = kernel_span(&own_kernel.projector);
            let own_finder = FinderConfig::with_seed(config.seed.wrapping_add(0x51ed_270b));
            if let Ok((own_roots, _)) = find_product_vectors(&own_span, dims, &own_finder) {
                if let Ok(own_upb) = crate::bipartite::GeneralizedUPB::new(dims, own_roots) {
                    if let Ok(own_fit) = crate::upb::extract_p(&q, &own_upb, dims) {
                        if own_fit.residual < fit.residual {
                            upb = own_upb;
                            fit = own_fit;
                        }
                    }
                }
            }
        }
        let p0 = fit.p;
        let (upb, _p) = family_refine(&upb, &p0)?;
        Some(ProjectionFormState::from_kernel_upb(upb)?)
    } else {
        None
    };

    Ok(TransformOutcome {
        status,
        sa,
        sb,
        state,
        iterations,
        residual_history,
        det_history,
    })
}

/// Gauss-Newton refinement of a generalized UPB onto the coefficient-
/// decomposable family: solves the eigen-relation
/// d sum_l p_l <psi_l, psi_k> psi_l = psi_k for all k, together with
/// sum_l p_l ||psi_l||^2 = 1, over the member factors and coefficients.
/// The Jacobian is taken by central finite differences; the minimum-norm
/// step is solved through the normal equations by conjugate gradient.
fn family_refine(
    upb: &crate::bipartite::GeneralizedUPB,
    p0: &[f64],
) -> Result<(crate::bipartite::GeneralizedUPB, Vec<f64>)> {
    let dims = upb.dims;
    let (na, nb) = (dims.na, dims.nb);
    let n = dims.total();
    let m = upb.members.len();
    let d = crate::bipartite::upb_counts(dims).1 as f64;
    let per = 2 * na + 2 * nb;
    let nparams = m * per + m;
    let neq = m * 2 * n + 1;

    let mut x = RVec::zeros(nparams);
    for (k, pv) in upb.members.iter().enumerate() {
        let pv = pv.normalized();
        for i in 0..na {
            x[k * per + 2 * i] = pv.phi[i].re;
            x[k * per + 2 * i + 1] = pv.phi[i].im;
        }
        for i in 0..nb {
            x[k * per + 2 * na + 2 * i] = pv.chi[i].re;
            x[k * per + 2 * na + 2 * i + 1] = pv.chi[i].im;
        }
    }
    for k in 0..m {
        x[m * per + k] = p0[k];
    }

    let build_psis = |x: &RVec| -> Vec<crate::herm::CVec> {
        let mut psis = Vec::with_capacity(m);
        for k in 0..m {
            let mut psi = crate::herm::CVec::zeros(n);
            for a in 0..na {
                let phi = Complex::new(x[k * per + 2 * a], x[k * per + 2 * a + 1]);
                for b in 0..nb {
                    let chi = Complex::new(
                        x[k * per + 2 * na + 2 * b],
                        x[k * per + 2 * na + 2 * b + 1],
                    );
                    psi[a * nb + b] = phi * chi;
                }
            }
            psis.push(psi);
        }
        psis
    };
    let resid = |x: &RVec| -> RVec {
        let psis = build_psis(x);
        let mut out = RVec::zeros(neq);
        for k in 0..m {
            let mut e = -psis[k].clone();
            for l in 0..m {
                let coeff = Complex::new(d * x[m * per + l], 0.0) * psis[l].dotc(&psis[k]);
                e += &psis[l] * coeff;
            }
            for i in 0..n {
                out[k * 2 * n + 2 * i] = e[i].re;
                out[k * 2 * n + 2 * i + 1] = e[i].im;
            }
        }
        out[m * 2 * n] = (0..m)
            .map(|k| x[m * per + k] * psis[k].norm_squared())
            .sum::<f64>()
            - 1.0;
        out
    };

    let mut r = resid(&x);
    for _ in 0..30 {
        if r.norm() < 1e-13 {
            break;
        }
        let h = 1e-6;
        let mut b = RMat::zeros(neq, nparams);
        for j in 0..nparams {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let col = (resid(&xp) - resid(&xm)) / (2.0 * h);
            b.set_column(j, &col);
        }
        let gram = b.transpose() * &b;
        let g = b.transpose() * &r;
        let dx = solve_cg(&gram, &g, 1e-14)?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial = &x - &dx * alpha;
            let tr = resid(&trial);
            if tr.norm() < r.norm() {
                x = trial;
                r = tr;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if r.norm() >= 1e-9 {
        return Err(Error::Construction(format!(
            "family refinement stalled at residual {:.3e}",
            r.norm()
        )));
    }

    let mut members = Vec::with_capacity(m);
    let mut p = Vec::with_capacity(m);
    for k in 0..m {
        let mut phi = crate::herm::CVec::zeros(na);
        for i in 0..na {
            phi[i] = Complex::new(x[k * per + 2 * i], x[k * per + 2 * i + 1]);
        }
        let mut chi = crate::herm::CVec::zeros(nb);
        for i in 0..nb {
            chi[i] = Complex::new(
                x[k * per + 2 * na + 2 * i],
                x[k * per + 2 * na + 2 * i + 1],
            );
        }
        let scale = phi.norm_squared() * chi.norm_squared();
        members.push(crate::bipartite::ProductVector::new(phi, chi)?.normalized());
        p.push(x[m * per + k] * scale);
    }
    Ok((crate::bipartite::GeneralizedUPB::new(dims, members)?, p))
}

/// Orthonormal columns spanning the unit-eigenvalue space of a projector.
/// Orthonormal columns spanning the eigenvalue-1 space of a projector.
pub fn kernel_span(p: &HermitianMatrix) -> CMat {
    let spec = eig_hermitian(p);
    let n = p.dim();
    let count = spec.eigenvalues.iter().filter(|&&x| x > 0.5).count();
    let mut out = CMat::zeros(n, count);
    for k in 0..count {
        out.set_column(k, &spec.eigenvectors.column(n - count + k));
    }
    out
}

/// Infinitesimal product transformations preserving the projection equation:
/// the null space of (H_A, H_B) -> rho0 (H_A (x) 1 + 1 (x) H_B) rho0 over
/// hermitian pairs, with the trivial direction (c 1, -c 1) quotiented out.
#[derive(Debug, Clone)]
pub struct TangentFamily {
    pub dimension: usize,
    pub generators: Vec<(HermitianMatrix, HermitianMatrix)>,
}

pub fn tangent_family(state: &ProjectionFormState) -> Result<TangentFamily> {
    let rho0 = &state.rho;
    let dims = rho0.dims();
    let r = expected_rank(dims);
    let (na, nb) = (dims.na, dims.nb);
    let (ka, kb) = (na * na, nb * nb);
    let frame = ImageFrame::new(rho0, r);
    let basis_a = HermitianBasis::new(na);
    let basis_b = HermitianBasis::new(nb);
    let rho_mat = rho0.mat();
    let id_a = CMat::identity(na, na);
    let id_b = CMat::identity(nb, nb);
    let mut m = RMat::zeros(r * r, ka + kb);
    for p in 0..ka {
        let k = kron_mat(&basis_a.element(p), &id_b);
        m.set_column(p, &frame.coords(&(rho_mat * k * rho_mat)));
    }
    for p in 0..kb {
        let k = kron_mat(&id_a, &basis_b.element(p));
        m.set_column(ka + p, &frame.coords(&(rho_mat * k * rho_mat)));
    }
    // null space of M from its gram matrix (squared singular values)
    let total = ka + kb;
    let gram = m.transpose() * &m;
    let se = gram.symmetric_eigen();
    let gmax = se.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut null: Vec<RVec> = Vec::new();
    for i in 0..total {
        if se.eigenvalues[i] < 1e-12 * gmax.max(1e-300) {
            null.push(se.eigenvectors.column(i).into_owned());
        }
    }
    // trivial gauge direction (1_A, -1_B)
    let mut trivial = RVec::zeros(total);
    for i in 0..na {
        trivial[i] = 1.0;
    }
    for i in 0..nb {
        trivial[ka + i] = -1.0;
    }
    trivial /= trivial.norm();
    // project the trivial direction out and re-orthonormalize
    let mut generators_coords: Vec<RVec> = Vec::new();
    for v in &null {
        let mut w = v - &trivial * trivial.dot(v);
        for g in &generators_coords {
            let overlap = g.dot(&w);
            w -= g * overlap;
        }
        if w.norm() > 1e-8 {
            w /= w.norm();
            generators_coords.push(w);
        }
    }
    let generators = generators_coords
        .iter()
        .map(|w| {
            let la = devectorize_raw(na, &w.rows(0, ka).into_owned());
            let lb = devectorize_raw(nb, &w.rows(ka, kb).into_owned());
            (
                HermitianMatrix::hermitize(&la),
                HermitianMatrix::hermitize(&lb),
            )
        })
        .collect::<Vec<_>>();
    Ok(TangentFamily {
        dimension: generators.len(),
        generators,
    })
}

/// Shapes of the reduced transform Jacobian: (r^2, nA^2 + nB^2 - 1).
pub fn transform_jacobian_shape(dims: BipartiteDims) -> (usize, usize) {
    let r = expected_rank(dims);
    (r * r, dims.na * dims.na + dims.nb * dims.nb - 1)
}
