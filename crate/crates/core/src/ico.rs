//! The analytic icosahedron family of 3x3 states: six equiangular axis
//! vectors, their pairing into a generalized UPB, the stretch deformation
//! along one axis, the closed-form coefficient profile, and the orthogonal
//! (Pyramid) special case at lambda = sqrt(2 phi).

use itertools::Itertools;
use num_complex::Complex;

use crate::bipartite::{BipartiteDims, GeneralizedUPB, ProductVector};
use crate::herm::CVec;
use crate::upb::ProjectionFormState;
use crate::{Error, Result};

/// Golden ratio (sqrt(5)+1)/2.
pub const GOLDEN: f64 = 1.618_033_988_749_895;

/// Stretch value at which five of the product vectors become orthogonal
/// (the Pyramid construction): sqrt(2 phi).
pub fn pyramid_lambda() -> f64 {
    (2.0 * GOLDEN).sqrt()
}

/// A pairing chi_k = sign_k * phi_{perm(k)} between the two copies of the
/// axis set (0-indexed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pairing {
    pub perm: [usize; 6],
    pub signs: [f64; 6],
}

impl Pairing {
    pub fn is_valid(&self) -> bool {
        let mut seen = [false; 6];
        for &p in &self.perm {
            if p >= 6 || seen[p] {
                return false;
            }
            seen[p] = true;
        }
        self.signs.iter().all(|&s| s == 1.0 || s == -1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcoConfig {
    pub lambda: f64,
    pub pairing: Pairing,
}

impl IcoConfig {
    /// The regular icosahedron (lambda = 1, standard pairing).
    pub fn regular() -> Self {
        Self {
            lambda: 1.0,
            pairing: standard_pairing(),
        }
    }

    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            pairing: standard_pairing(),
        }
    }
}

fn real3(x: f64, y: f64, z: f64) -> CVec {
    let mut v = CVec::zeros(3);
    v[0] = Complex::new(x, 0.0);
    v[1] = Complex::new(y, 0.0);
    v[2] = Complex::new(z, 0.0);
    v
}

/// The six unit vectors along the symmetry axes of a regular icosahedron.
/// Any two of them satisfy |<phi_k|phi_l>| = 1/sqrt(5).
pub fn ico_axes() -> [CVec; 6] {
    let phi = GOLDEN;
    let raw = [
        real3(-phi, 0.0, 1.0),
        real3(-1.0, phi, 0.0),
        real3(1.0, phi, 0.0),
        real3(phi, 0.0, 1.0),
        real3(0.0, -1.0, phi),
        real3(0.0, 1.0, phi),
    ];
    raw.map(|v| {
        let n = v.norm();
        v / Complex::new(n, 0.0)
    })
}

/// The pairing chi_k = phi_{(2k+4) mod 5} for k = 1..5 (1-based, residue 0
/// read as index 5) and chi_6 = -phi_6. Under it every normalized product
/// Gram entry equals -1/5.
pub fn standard_pairing() -> Pairing {
    Pairing {
        perm: [0, 2, 4, 1, 3, 5],
        signs: [1.0, 1.0, 1.0, 1.0, 1.0, -1.0],
    }
}

/// Unit vectors of the icosahedron stretched by `lambda` along the sixth
/// axis. lambda = 1 reproduces `ico_axes` exactly.
pub fn deform_axes(lambda: f64) -> Result<[CVec; 6]> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "stretch parameter must be positive and finite, got {lambda}"
        )));
    }
    let axes = ico_axes();
    let axis6 = axes[5].clone();
    Ok(axes.map(|v| {
        let overlap: Complex<f64> = axis6.dotc(&v);
        let w = &v + &axis6 * (overlap * (lambda - 1.0));
        let n = w.norm();
        w / Complex::new(n, 0.0)
    }))
}

/// Closed-form coefficient profile of the stretched family:
/// p_6 = (4 + 2 lambda^2 - lambda^4) / (20 + 10 lambda^2), the other five
/// coefficients equal. Sums to 1 by construction.
pub fn p_profile(lambda: f64) -> [f64; 6] {
    let l2 = lambda * lambda;
    let p6 = (4.0 + 2.0 * l2 - l2 * l2) / (20.0 + 10.0 * l2);
    let pk = (1.0 - p6) / 5.0;
    [pk, pk, pk, pk, pk, p6]
}

/// Build the deformed icosahedron state: the generalized UPB of six product
/// vectors, the rank-5 projection Q on their span, the fitted coefficients,
/// and rho = (1/4)(1 - Q).
pub fn build_state(config: &IcoConfig) -> Result<ProjectionFormState> {
    if !config.pairing.is_valid() {
        return Err(Error::InvalidInput("invalid pairing".into()));
    }
    let axes = deform_axes(config.lambda)?;
    let dims = BipartiteDims::new(3, 3)?;
    let mut members = Vec::with_capacity(6);
    for k in 0..6 {
        let phi = axes[k].clone();
        let chi = &axes[config.pairing.perm[k]] * Complex::new(config.pairing.signs[k], 0.0);
        members.push(ProductVector::new(phi, chi)?);
    }
    let upb = GeneralizedUPB::new(dims, members)?;
    ProjectionFormState::from_kernel_upb(upb)
}

/// Brute-force enumeration of the acceptable pairings: signed permutations
/// for which every normalized product Gram entry is -1/5 and the six product
/// vectors sum to zero. Counted modulo the global sign flip (the first sign
/// is fixed to +1).
pub fn enumerate_pairings() -> (usize, Vec<Pairing>) {
    let axes = ico_axes();
    // real gram of the axis vectors
    let mut g = [[0.0; 6]; 6];
    for k in 0..6 {
        for l in 0..6 {
            g[k][l] = axes[k].dotc(&axes[l]).re;
        }
    }
    let mut found = Vec::new();
    for perm in (0..6).permutations(6) {
        for signbits in 0..32u32 {
            let mut signs = [1.0; 6];
            for (i, s) in signs.iter_mut().enumerate().skip(1) {
                if signbits & (1 << (i - 1)) != 0 {
                    *s = -1.0;
                }
            }
            if accept(&g, &perm, &signs, &axes) {
                let mut p = [0usize; 6];
                p.copy_from_slice(&perm);
                found.push(Pairing { perm: p, signs });
            }
        }
    }
    (found.len(), found)
}

fn accept(g: &[[f64; 6]; 6], perm: &[usize], signs: &[f64; 6], axes: &[CVec; 6]) -> bool {
    // product Gram: psi_k . psi_l = (phi_k . phi_l)(chi_k . chi_l)
    for k in 0..6 {
        for l in (k + 1)..6 {
            let gp = g[k][l] * signs[k] * signs[l] * g[perm[k]][perm[l]];
            if (gp + 0.2).abs() > 1e-9 {
                return false;
            }
        }
    }
    // sum of product vectors vanishes
    let mut sum = CVec::zeros(9);
    for k in 0..6 {
        let chi = &axes[perm[k]] * Complex::new(signs[k], 0.0);
        let pv = ProductVector::new(axes[k].clone(), chi).unwrap();
        sum += pv.kron();
    }
    sum.norm() < 1e-9
}
