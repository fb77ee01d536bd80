//! Single-user received-power bounds through the surface and the unitary
//! constructions that attain them.
//!
//! With the direct link blocked, the uplink amplitude through the surface is
//! `g^T (Phi - I) h_u`. The triangle inequality caps its power at
//! `(|g| |h_u| + |g^T h_u|)^2` over all unitary `Phi`; equality holds when
//! `Phi` rotates `h_u` onto `beta_u g* / |g|` with the phase `beta_u` chosen
//! to anti-align the two terms. The downlink bound mirrors this with
//! `h_d^T (Phi - I) g`. A reciprocal (symmetric) surface can attain both
//! bounds at once only when the normalized conjugate channels coincide up to
//! those free phases; [`colinearity_gap`] measures the obstruction.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::orthonormal_basis_from;
use crate::{CMat, CVec, Cx};

/// Relative tolerance below which a constructed scattering matrix counts as
/// attaining its bound.
pub const ATTAIN_TOL: f64 = 1e-9;

/// One single-user power bound plus the outcome of its constructive check.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    /// The power bound itself.
    pub bound_value: f64,
    /// Unit phase that anti-aligns the scattered and structural terms.
    pub phase_beta: Cx,
    /// Whether the constructed optimizer met the bound within [`ATTAIN_TOL`].
    pub attained: bool,
    /// Relative gap `|achieved - bound| / bound` of the constructed optimizer.
    pub residual: f64,
}

fn nonzero(name: &str, v: &CVec) -> Result<f64> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::InvalidArgument(format!("{name} must be a nonzero vector")));
    }
    if !n.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
    }
    Ok(n)
}

fn same_len(a: &CVec, b: &CVec) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Phase that anti-aligns against `inner`; the free phase when `inner = 0`.
fn anti_phase(inner: Cx) -> Cx {
    if inner.norm() == 0.0 {
        Cx::new(1.0, 0.0)
    } else {
        Cx::from_polar(1.0, (-inner).arg())
    }
}

fn report(bound: f64, beta: Cx, achieved: f64) -> BoundReport {
    let residual = (achieved - bound).abs() / bound;
    BoundReport { bound_value: bound, phase_beta: beta, attained: residual <= ATTAIN_TOL, residual }
}

/// Power of the surface path `|a^T (Phi - I) b|^2`.
fn surface_power(a: &CVec, phi: &CMat, b: &CVec) -> f64 {
    let t = phi - CMat::identity(phi.nrows(), phi.ncols());
    a.dot(&(&t * b)).norm_sqr()
}

/// Upper bound on the uplink surface-path power over all unitary scattering
/// matrices, together with a constructive attainment check.
pub fn ul_power_bound(g: &CVec, h_u: &CVec) -> Result<BoundReport> {
    same_len(g, h_u)?;
    let ng = nonzero("g", g)?;
    let nh = nonzero("h_u", h_u)?;
    let inner = g.dot(h_u);
    let bound = (ng * nh + inner.norm()).powi(2);
    let beta = anti_phase(inner);
    let phi = phi_ul_optimal(g, h_u)?;
    Ok(report(bound, beta, surface_power(g, &phi, h_u)))
}

/// Downlink counterpart of [`ul_power_bound`] for the path `h_d^T (Phi - I) g`.
pub fn dl_power_bound(h_d: &CVec, g: &CVec) -> Result<BoundReport> {
    same_len(h_d, g)?;
    let nh = nonzero("h_d", h_d)?;
    let ng = nonzero("g", g)?;
    let inner = h_d.dot(g);
    let bound = (nh * ng + inner.norm()).powi(2);
    let beta = anti_phase(inner);
    let phi = construct_unitary_map(&(g / Cx::new(ng, 0.0)), &(h_d.conjugate() * (beta / nh)))?;
    Ok(report(bound, beta, surface_power(h_d, &phi, g)))
}

/// Unitary matrix mapping one unit vector onto another: `U_dst U_src^H`,
/// where `U_x` completes `x` to an orthonormal basis deterministically.
pub fn construct_unitary_map(src: &CVec, dst: &CVec) -> Result<CMat> {
    same_len(src, dst)?;
    let u_src = orthonormal_basis_from(src)?;
    let u_dst = orthonormal_basis_from(dst)?;
    Ok(u_dst * u_src.adjoint())
}

/// Scattering matrix attaining the uplink power bound: rotates the
/// normalized uplink channel onto `beta_u g* / |g|`.
pub fn phi_ul_optimal(g: &CVec, h_u: &CVec) -> Result<CMat> {
    same_len(g, h_u)?;
    let ng = nonzero("g", g)?;
    let nh = nonzero("h_u", h_u)?;
    let beta = anti_phase(g.dot(h_u));
    construct_unitary_map(&(h_u / Cx::new(nh, 0.0)), &(g.conjugate() * (beta / ng)))
}

/// Distance between the normalized conjugate DL and UL channels after the
/// free bound phases absorb any common rotation. Zero means one reciprocal
/// surface attains both single-user bounds simultaneously.
pub fn colinearity_gap(h_d: &CVec, h_u: &CVec) -> Result<f64> {
    same_len(h_d, h_u)?;
    let nd = nonzero("h_d", h_d)?;
    let nu = nonzero("h_u", h_u)?;
    // min over a unit phase e^{j t} of |e^{j t} a - b| for unit a, b is
    // sqrt(2 - 2 |<a, b>|); here <a, b> = h_d^T h_u* / (|h_d| |h_u|).
    let overlap = h_d.dot(&h_u.conjugate()).norm() / (nd * nu);
    Ok((2.0 - 2.0 * overlap).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_unitary, standard_complex, unitarity_residual};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(v: &[Cx]) -> CVec {
        let v = CVec::from_vec(v.to_vec());
        let n = v.norm();
        v / Cx::new(n, 0.0)
    }

    fn e(i: usize, n: usize) -> CVec {
        CVec::from_fn(n, |r, _| if r == i { Cx::new(1.0, 0.0) } else { Cx::new(0.0, 0.0) })
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> CVec {
        CVec::from_fn(n, |_, _| standard_complex(rng))
    }

    #[test]
    fn orthogonal_unit_vectors_bound_is_one() {
        let rep = ul_power_bound(&e(0, 4), &e(1, 4)).unwrap();
        assert_relative_eq!(rep.bound_value, 1.0, max_relative = 1e-12);
        assert!(rep.attained, "residual {}", rep.residual);
        assert_abs_diff_eq!(rep.phase_beta.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_real_unit_vectors_bound_is_four() {
        let v = unit(&[Cx::new(1.0, 0.0), Cx::new(2.0, 0.0), Cx::new(-1.0, 0.0)]);
        let rep = ul_power_bound(&v, &v).unwrap();
        assert_relative_eq!(rep.bound_value, 4.0, max_relative = 1e-12);
        assert!(rep.attained);
        let dl = dl_power_bound(&v, &v).unwrap();
        assert_relative_eq!(dl.bound_value, 4.0, max_relative = 1e-12);
        assert!(dl.attained);
    }

    #[test]
    fn random_pair_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let g = random_vec(4, &mut rng);
            let h = random_vec(4, &mut rng);
            let want = (g.norm() * h.norm() + g.dot(&h).norm()).powi(2);
            let rep = ul_power_bound(&g, &h).unwrap();
            assert_relative_eq!(rep.bound_value, want, max_relative = 1e-12);
            assert!(rep.attained, "residual {}", rep.residual);
            let dl = dl_power_bound(&g, &h).unwrap();
            assert!(dl.attained, "residual {}", dl.residual);
        }
    }

    #[test]
    fn zero_vector_is_rejected() {
        let z = CVec::zeros(3);
        assert!(ul_power_bound(&z, &e(0, 3)).is_err());
        assert!(ul_power_bound(&e(0, 3), &z).is_err());
        assert!(colinearity_gap(&z, &e(0, 3)).is_err());
    }

    #[test]
    fn unitary_map_moves_src_to_dst() {
        // Fixed-point case first, then a known 2-d rotation.
        let v = unit(&[Cx::new(0.3, 0.4), Cx::new(0.0, 1.0)]);
        let phi = construct_unitary_map(&v, &v).unwrap();
        assert!(((&phi * &v) - &v).norm() < 1e-9);
        let phi = construct_unitary_map(&e(0, 2), &e(1, 2)).unwrap();
        assert!(((&phi * e(0, 2)) - e(1, 2)).norm() < 1e-9);
        assert!(unitarity_residual(&phi) < 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_vec(5, &mut rng);
        let b = random_vec(5, &mut rng);
        let (a, b) = (&a / Cx::new(a.norm(), 0.0), &b / Cx::new(b.norm(), 0.0));
        let phi = construct_unitary_map(&a, &b).unwrap();
        assert!(unitarity_residual(&phi) < 1e-10);
        assert!(((&phi * &a) - &b).norm() < 1e-9);
        assert!(construct_unitary_map(&(a.clone() * Cx::new(2.0, 0.0)), &b).is_err());
    }

    #[test]
    fn scalar_surface_attains_exactly() {
        let g = CVec::from_vec(vec![Cx::new(0.5, -1.0)]);
        let h = CVec::from_vec(vec![Cx::new(-0.25, 0.3)]);
        let rep = ul_power_bound(&g, &h).unwrap();
        // For M = 1 the optimizer is the explicit phase
        // beta * conj(g) conj(h) / (|g| |h|).
        let beta = Cx::from_polar(1.0, (-(g[0] * h[0])).arg());
        let phi_explicit = beta * g[0].conj() * h[0].conj() / (g[0].norm() * h[0].norm());
        let phi = phi_ul_optimal(&g, &h).unwrap();
        assert_relative_eq!(phi[(0, 0)].re, phi_explicit.re, max_relative = 1e-12);
        assert_relative_eq!(phi[(0, 0)].im, phi_explicit.im, max_relative = 1e-12);
        assert!(rep.attained);
        assert!(rep.residual < 1e-12);
    }

    #[test]
    fn conjugate_aligned_pair_attains() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_vec(8, &mut rng);
        let h = g.conjugate() * Cx::new(0.7, 0.2);
        let rep = ul_power_bound(&g, &h).unwrap();
        assert!(rep.attained, "residual {}", rep.residual);
    }

    #[test]
    fn no_unitary_beats_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = random_vec(6, &mut rng);
        let h = random_vec(6, &mut rng);
        let bound = ul_power_bound(&g, &h).unwrap().bound_value;
        for _ in 0..200 {
            let q = random_unitary(6, &mut rng);
            let p = surface_power(&g, &q, &h);
            assert!(p <= bound * (1.0 + 1e-9), "power {p} exceeds bound {bound}");
        }
    }

    #[test]
    fn colinearity_gap_reference_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_vec(4, &mut rng);
        assert_abs_diff_eq!(colinearity_gap(&h, &h).unwrap(), 0.0, epsilon = 1e-7);
        // Any complex scaling is absorbed by the free phases.
        let scaled = &h * Cx::new(-1.3, 2.2);
        assert_abs_diff_eq!(colinearity_gap(&h, &scaled).unwrap(), 0.0, epsilon = 1e-12);
        let gap = colinearity_gap(&e(0, 4), &e(1, 4)).unwrap();
        assert_relative_eq!(gap, 2f64.sqrt(), max_relative = 1e-12);
    }
}
