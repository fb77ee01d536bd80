//! Scattering-matrix block update by penalty dual decomposition.
//!
//! With every other block fixed, the surrogate objective is a convex
//! quadratic in the scattering matrix, but the feasible set — unitary
//! diagonal blocks, optionally symmetric — is not convex. The update splits
//! the variable: an unconstrained copy `Phi` minimizes the quadratic while a
//! projected copy `Psi` stays exactly block-unitary, and an augmented
//! Lagrangian ties them together. The inner loop alternates exact minimizers
//! for the two copies; the outer loop raises the dual matrices when the
//! split is small and shrinks the penalty otherwise, until `Phi` and `Psi`
//! agree in infinity norm.
//!
//! Symmetry (for reciprocal surfaces) is enforced structurally: each group
//! block is parameterized by its lower triangle through a packing matrix, so
//! every inner iterate is symmetric at the bit level.
//!
//! The quadratic's curvature has rank at most `(K + I)^2` plus a diagonal
//! penalty term, so the inner solves use the Woodbury identity instead of
//! factoring a dense `M_g^2` system; a dense reference path
//! ([`assemble_quadratic`] + [`solve_phi_group`]) exists for verification
//! and both are tested against each other.

use serde::Serialize;

use crate::channel::ChannelSet;
use crate::config::{PddOptions, RisConfig};
use crate::error::{Error, Result};
use crate::fp::AuxVars;
use crate::linalg::{max_abs, nearest_symmetric_unitary, unitary_polar, unitarity_residual, vec_of};
use crate::metrics::TransceiverState;
use crate::{CMat, CVec, Cx};

const ZERO: Cx = Cx::new(0.0, 0.0);

// ---------------------------------------------------------------------------
// Packed parameterization of one group block.
//
// Non-reciprocal blocks use all m_g^2 entries in column-major order. A
// reciprocal block is determined by its lower triangle (diagonal included),
// stored column by column; the packing matrix K scatters that vector into a
// full symmetric vec, and K^H gathers mirror entries back.
// ---------------------------------------------------------------------------

/// Number of free complex parameters of one `m_g` x `m_g` group block.
pub fn packed_len(m_g: usize, reciprocal: bool) -> usize {
    if reciprocal {
        m_g * (m_g + 1) / 2
    } else {
        m_g * m_g
    }
}

/// Offset of column `q` in the lower-triangle layout:
/// `sum_{c<q} (m_g - c)`.
fn packed_offset(q: usize, m_g: usize) -> usize {
    if q == 0 {
        0
    } else {
        q * m_g - q * (q - 1) / 2
    }
}

fn packed_pos(p: usize, q: usize, m_g: usize) -> usize {
    let (hi, lo) = if p >= q { (p, q) } else { (q, p) };
    packed_offset(lo, m_g) + (hi - lo)
}

/// Gathers `K^H z` for a full-block column-major vector `z` of length m_g^2.
pub(crate) fn pack_adjoint(z: &CVec, m_g: usize, reciprocal: bool) -> CVec {
    if !reciprocal {
        return z.clone();
    }
    let mut out = CVec::zeros(packed_len(m_g, true));
    for q in 0..m_g {
        for p in q..m_g {
            let mut v = z[q * m_g + p];
            if p != q {
                v += z[p * m_g + q];
            }
            out[packed_pos(p, q, m_g)] = v;
        }
    }
    out
}

/// Rebuilds the group block from its packed vector (`K phi` reshaped).
pub(crate) fn unpack_to_matrix(phi: &CVec, m_g: usize, reciprocal: bool) -> CMat {
    if !reciprocal {
        return CMat::from_fn(m_g, m_g, |r, c| phi[c * m_g + r]);
    }
    let mut out = CMat::zeros(m_g, m_g);
    for q in 0..m_g {
        for p in q..m_g {
            let v = phi[packed_pos(p, q, m_g)];
            out[(p, q)] = v;
            out[(q, p)] = v;
        }
    }
    out
}

/// Diagonal of `K^H K`: 1 per parameter, 2 for mirrored off-diagonal ones.
pub(crate) fn pack_gram_diag(m_g: usize, reciprocal: bool) -> Vec<f64> {
    if !reciprocal {
        return vec![1.0; m_g * m_g];
    }
    let mut out = vec![0.0; packed_len(m_g, true)];
    for q in 0..m_g {
        for p in q..m_g {
            out[packed_pos(p, q, m_g)] = if p == q { 1.0 } else { 2.0 };
        }
    }
    out
}

/// Dense packing matrix: maps the packed parameter vector of one group block
/// to its full column-major vec. Identity for non-reciprocal blocks; for
/// reciprocal ones each off-diagonal parameter feeds both mirror positions.
pub fn build_permutation(m_g: usize, reciprocal: bool) -> Result<CMat> {
    if m_g < 1 {
        return Err(Error::InvalidArgument("group size must be >= 1".into()));
    }
    let cols = packed_len(m_g, reciprocal);
    let mut k = CMat::zeros(m_g * m_g, cols);
    for q in 0..m_g {
        for r in 0..m_g {
            let col = if reciprocal { packed_pos(r, q, m_g) } else { q * m_g + r };
            k[(q * m_g + r, col)] = Cx::new(1.0, 0.0);
        }
    }
    Ok(k)
}

/// Dense placement matrix: maps the vec of group `g`'s block into the vec of
/// the full M x M block-diagonal matrix.
pub fn build_reshape(m_total: usize, m_g: usize, g: usize) -> Result<CMat> {
    if m_g < 1 || m_total % m_g != 0 {
        return Err(Error::InvalidArgument(format!(
            "group size {m_g} must divide the element count {m_total}"
        )));
    }
    let n_groups = m_total / m_g;
    if g >= n_groups {
        return Err(Error::InvalidArgument(format!(
            "group index {g} out of range for {n_groups} groups"
        )));
    }
    let g0 = g * m_g;
    let mut r = CMat::zeros(m_total * m_total, m_g * m_g);
    for c in 0..m_g {
        for row in 0..m_g {
            r[((g0 + c) * m_total + (g0 + row), c * m_g + row)] = Cx::new(1.0, 0.0);
        }
    }
    Ok(r)
}

/// Both sides of the linear and quadratic trace/vectorization identities,
/// evaluated directly and through the packed parameterization. Used as a
/// test oracle: each pair must agree.
#[derive(Debug, Clone)]
pub struct IdentityCheckReport {
    /// `Tr(C Phi)` evaluated as a plain trace.
    pub trace_direct: Cx,
    /// The same trace as `vec(C^T)^T` times the reassembled vec of `Phi`.
    pub trace_via_vec: Cx,
    /// `Tr(B Phi A Phi^H)` evaluated as a plain trace.
    pub quad_direct: Cx,
    /// The same value as `vec(Phi)^H (A^T kron B) vec(Phi)`.
    pub quad_via_kron: Cx,
}

/// Evaluates the trace identities for a block-diagonal `phi` with group size
/// `m_g`. In reciprocal mode `phi`'s blocks must be symmetric (they are
/// packed and re-expanded along the way).
pub fn trace_vec_identity_check(
    c: &CMat,
    a: &CMat,
    b: &CMat,
    phi: &CMat,
    m_g: usize,
    reciprocal: bool,
) -> Result<IdentityCheckReport> {
    let m = phi.nrows();
    if phi.ncols() != m || c.nrows() != m || c.ncols() != m {
        return Err(Error::DimensionMismatch("identity check needs square M x M inputs".into()));
    }
    if m_g == 0 || m % m_g != 0 {
        return Err(Error::InvalidArgument("group size must divide M".into()));
    }
    let trace_direct = (c * phi).trace();
    // Reassemble vec(phi) from per-group packed parameters through the dense
    // reshape/packing matrices.
    let mut vec_phi = CVec::zeros(m * m);
    for g in 0..m / m_g {
        let g0 = g * m_g;
        let block = phi.view((g0, g0), (m_g, m_g)).into_owned();
        if reciprocal && max_abs(&(&block - block.transpose())) > 1e-12 {
            return Err(Error::InvalidArgument(
                "reciprocal identity check requires symmetric blocks".into(),
            ));
        }
        let k = build_permutation(m_g, reciprocal)?;
        // Packed parameters of this block: lower triangle (reciprocal) or
        // all entries. Extract without assuming K is invertible.
        let packed = if reciprocal {
            CVec::from_fn(packed_len(m_g, true), |idx, _| {
                // invert packed_pos by scanning; sizes here are tiny
                let mut val = ZERO;
                'outer: for q in 0..m_g {
                    for p in q..m_g {
                        if packed_pos(p, q, m_g) == idx {
                            val = block[(p, q)];
                            break 'outer;
                        }
                    }
                }
                val
            })
        } else {
            vec_of(&block)
        };
        let r = build_reshape(m, m_g, g)?;
        vec_phi += r * (k * packed);
    }
    let c_t_vec = vec_of(&c.transpose());
    let trace_via_vec = c_t_vec.dot(&vec_phi);
    let quad_direct = (b * phi * a * phi.adjoint()).trace();
    let kron = a.transpose().kronecker(b);
    let full_vec = vec_of(phi);
    let quad_via_kron = full_vec.dotc(&(kron * &full_vec));
    Ok(IdentityCheckReport { trace_direct, trace_via_vec, quad_direct, quad_via_kron })
}

// ---------------------------------------------------------------------------
// Coupling matrices: every fixed-block quantity the scattering quadratic
// needs, reduced to fourteen M x M matrices.
// ---------------------------------------------------------------------------

/// Fixed-block coupling matrices of the scattering quadratic. `a1/a2/b1/b2`
/// are Hermitian positive semidefinite sums of outer products and carry the
/// curvature; the rest feed the linear term. All are M x M and independent
/// of the structural-scattering convention (that enters through which terms
/// the assembly includes).
#[derive(Debug, Clone)]
pub struct CouplingMatrices {
    /// `sum_j (G p_j)(G p_j)^H` — DL transmit energy seen at the surface.
    pub a1: CMat,
    /// `sum_i |tau_u,i|^2 (G* w_i)(G* w_i)^H` — combiner energy at the surface.
    pub a2: CMat,
    /// `sum_k |tau_d,k|^2 h_d,k* h_d,k^T` over the surface-to-DL-user links.
    pub b1: CMat,
    /// `sum_i h_u,i h_u,i^H` over the UL-user-to-surface links.
    pub b2: CMat,
    /// DL signal linear term `sum_k sqrt(1+iota) tau* (G p_k) h_d,k^T`.
    pub c1: CMat,
    /// UL signal linear term `sum_i sqrt(1+iota) tau* h_u,i (w_i^H G^T)`.
    pub c2: CMat,
    /// DL direct-path cross term through the precoder covariance.
    pub d1: CMat,
    /// UL-to-DL direct-leakage cross term.
    pub d2: CMat,
    /// UL direct-path cross term through the combiner covariance.
    pub d3: CMat,
    /// Self-interference cross term.
    pub d: CMat,
    /// `a1 * b1`.
    pub f1: CMat,
    /// `b2 * a2`.
    pub f2: CMat,
    /// `b2 * b1`.
    pub j1: CMat,
    /// `a1 * a2`.
    pub j2: CMat,
}

/// Builds the coupling matrices from the current channels, precoder,
/// combiner and auxiliaries.
pub fn assemble_coupling(
    ch: &ChannelSet,
    st: &TransceiverState,
    aux: &AuxVars,
) -> Result<CouplingMatrices> {
    let m = ch.n_ris();
    let n = ch.n_bs();
    let (k_users, i_users) = (ch.n_dl(), ch.n_ul());
    if st.precoder.nrows() != n || st.combiner.nrows() != n {
        return Err(Error::DimensionMismatch("precoder/combiner rows must equal N".into()));
    }
    if aux.iota_dl.len() != k_users || aux.tau_ul.len() != i_users {
        return Err(Error::DimensionMismatch("auxiliary lengths must match user counts".into()));
    }
    let g_mat = &ch.bs_ris; // M x N

    // Precoder covariance sum_j p_j p_j^H and its surface image.
    let pp = &st.precoder * st.precoder.adjoint(); // N x N
    let a1 = g_mat * &pp * g_mat.adjoint();

    let mut a2 = CMat::zeros(m, m);
    let mut ww_tau = CMat::zeros(n, n); // sum_i |tau_u,i|^2 w_i w_i^H
    for i in 0..i_users {
        let w = st.combiner.column(i).into_owned();
        let t2 = aux.tau_ul[i].norm_sqr();
        let gw = g_mat.conjugate() * &w; // M
        a2 += (&gw * gw.adjoint()) * Cx::new(t2, 0.0);
        ww_tau += (&w * w.adjoint()) * Cx::new(t2, 0.0);
    }

    let mut b1 = CMat::zeros(m, m);
    let mut dir_ref_dl = CMat::zeros(n, m); // sum_k |tau|^2 dir_d,k* h_d,k^T
    for k in 0..k_users {
        let h = &ch.ris_dl[k];
        let t2 = aux.tau_dl[k].norm_sqr();
        let hc = h.conjugate();
        b1 += (&hc * hc.adjoint()) * Cx::new(t2, 0.0);
        dir_ref_dl += (ch.dir_dl[k].conjugate() * h.transpose()) * Cx::new(t2, 0.0);
    }

    let mut b2 = CMat::zeros(m, m);
    let mut ref_dir_ul = CMat::zeros(m, n); // sum_p h_u,p dir_u,p^H
    for i in 0..i_users {
        let h = &ch.ris_ul[i];
        b2 += h * h.adjoint();
        ref_dir_ul += h * ch.dir_ul_bs[i].adjoint();
    }

    let mut c1 = CMat::zeros(m, m);
    for k in 0..k_users {
        let scale = aux.tau_dl[k].conj() * Cx::new((1.0 + aux.iota_dl[k]).sqrt(), 0.0);
        c1 += (g_mat * st.precoder.column(k).into_owned() * ch.ris_dl[k].transpose()) * scale;
    }

    let mut c2 = CMat::zeros(m, m);
    for i in 0..i_users {
        let scale = aux.tau_ul[i].conj() * Cx::new((1.0 + aux.iota_ul[i]).sqrt(), 0.0);
        let w_row = st.combiner.column(i).adjoint() * g_mat.transpose(); // 1 x M
        c2 += (&ch.ris_ul[i] * w_row) * scale;
    }

    let d1 = g_mat * &pp * &dir_ref_dl;

    let mut d2 = CMat::zeros(m, m);
    for i in 0..i_users {
        let mut row = CMat::zeros(1, m);
        for k in 0..k_users {
            let scale = aux.tau_dl[k].norm_sqr() * ch.dir_ul_dl[(i, k)].conj();
            row += ch.ris_dl[k].transpose() * scale;
        }
        d2 += &ch.ris_ul[i] * row;
    }

    let d3 = &ref_dir_ul * &ww_tau * g_mat.transpose();
    let d = g_mat * &pp * ch.si.adjoint() * &ww_tau * g_mat.transpose();

    let f1 = &a1 * &b1;
    let f2 = &b2 * &a2;
    let j1 = &b2 * &b1;
    let j2 = &a1 * &a2;

    Ok(CouplingMatrices { a1, a2, b1, b2, c1, c2, d1, d2, d3, d, f1, f2, j1, j2 })
}

/// Combined linear-term matrix: the weighted sum of coupling matrices whose
/// conjugated block-transpose vec forms the data part of the linear term.
/// The `f1/f2/j1/j2` corrections belong to the structural `Phi - I`
/// convention and are dropped when the plain convention is active.
fn combined_linear_matrix(
    c: &CouplingMatrices,
    alpha_dl: f64,
    p_ul: f64,
    structural: bool,
) -> CMat {
    let a_d = Cx::new(alpha_dl, 0.0);
    let a_u = Cx::new(1.0 - alpha_dl, 0.0);
    let pu = Cx::new(p_ul, 0.0);
    let mut s = (&c.c1 - &c.d1 - &c.d2 * pu) * a_d;
    s += (&c.c2 * Cx::new(p_ul.sqrt(), 0.0) - &c.d3 * pu - &c.d) * a_u;
    if structural {
        s += (&c.f1 + &c.j1 * pu) * a_d;
        s += (&c.f2 * pu + &c.j2) * a_u;
    }
    s
}

/// Per-iteration state of one penalty-dual run: the unconstrained blocks,
/// their unitary copies, the dual matrices and the shared penalty.
#[derive(Debug, Clone)]
pub struct PddState {
    pub phi_groups: Vec<CMat>,
    pub psi_groups: Vec<CMat>,
    pub lambda_groups: Vec<CMat>,
    pub rho: f64,
}

impl PddState {
    /// Starts from an existing block-diagonal scattering matrix: each block
    /// seeds its own copy, the unitary copies are its projections, duals are
    /// zero.
    pub fn initialize(scattering: &CMat, m_g: usize, rho: f64) -> Result<Self> {
        let m = scattering.nrows();
        if scattering.ncols() != m || m_g == 0 || m % m_g != 0 {
            return Err(Error::InvalidArgument(
                "scattering matrix must be square with group size dividing M".into(),
            ));
        }
        if !(rho > 0.0) {
            return Err(Error::InvalidArgument("penalty rho must be positive".into()));
        }
        let mut phi_groups = Vec::new();
        let mut psi_groups = Vec::new();
        let mut lambda_groups = Vec::new();
        for g in 0..m / m_g {
            let g0 = g * m_g;
            let block = scattering.view((g0, g0), (m_g, m_g)).into_owned();
            psi_groups.push(project_unitary(&block)?);
            phi_groups.push(block);
            lambda_groups.push(CMat::zeros(m_g, m_g));
        }
        Ok(PddState { phi_groups, psi_groups, lambda_groups, rho })
    }

    fn n_groups(&self) -> usize {
        self.phi_groups.len()
    }

    fn m_g(&self) -> usize {
        self.phi_groups.first().map_or(0, |b| b.nrows())
    }
}

/// Conjugated vec of the block-transpose: entry `c*m_g + r` holds
/// `conj(X[c, r])` of the group block `X`.
fn conj_t_vec(block: &CMat) -> CVec {
    let m_g = block.nrows();
    CVec::from_fn(m_g * m_g, |idx, _| block[(idx / m_g, idx % m_g)].conj())
}

/// Penalty and dual contributions to the packed linear term:
/// `(1/2rho) K^H vec(Psi) - (1/2) K^H vec(Lambda)`.
fn penalty_dual_packed(psi: &CMat, lambda: &CMat, rho: f64, reciprocal: bool) -> CVec {
    let m_g = psi.nrows();
    let z = vec_of(psi) * Cx::new(0.5 / rho, 0.0) - vec_of(lambda) * Cx::new(0.5, 0.0);
    pack_adjoint(&z, m_g, reciprocal)
}

/// Dense quadratic of group `g`: the minimized objective is
/// `phi^H Delta phi - 2 Re(phi^H delta)` over the packed parameters.
/// Exists as the reference implementation; the solver itself uses the
/// low-rank path, and tests pin both to each other.
pub fn assemble_quadratic(
    group: usize,
    coupling: &CouplingMatrices,
    state: &PddState,
    ris: &RisConfig,
    alpha_dl: f64,
    p_ul: f64,
    structural: bool,
) -> Result<(CMat, CVec)> {
    if !(state.rho > 0.0) {
        return Err(Error::InvalidArgument("penalty rho must be positive".into()));
    }
    if group >= state.n_groups() {
        return Err(Error::InvalidArgument(format!("group {group} out of range")));
    }
    let m_g = state.m_g();
    let g0 = group * m_g;
    let reciprocal = ris.reciprocal;
    let blk = |x: &CMat| x.view((g0, g0), (m_g, m_g)).into_owned();

    let a_d = Cx::new(alpha_dl, 0.0);
    let a_u = Cx::new(1.0 - alpha_dl, 0.0);
    let pu = Cx::new(p_ul, 0.0);
    let mut kron = blk(&coupling.a1).transpose().kronecker(&blk(&coupling.b1)) * a_d;
    kron += blk(&coupling.b2).transpose().kronecker(&blk(&coupling.b1)) * (a_d * pu);
    kron += blk(&coupling.b2).transpose().kronecker(&blk(&coupling.a2)) * (a_u * pu);
    kron += blk(&coupling.a1).transpose().kronecker(&blk(&coupling.a2)) * a_u;

    let k = build_permutation(m_g, reciprocal)?;
    let mut delta_mat = k.adjoint() * kron * &k;
    for (t, s) in pack_gram_diag(m_g, reciprocal).iter().enumerate() {
        delta_mat[(t, t)] += Cx::new(s / (2.0 * state.rho), 0.0);
    }

    let s_comb = combined_linear_matrix(coupling, alpha_dl, p_ul, structural);
    let mut delta_vec = pack_adjoint(&conj_t_vec(&blk(&s_comb)), m_g, reciprocal);
    delta_vec += penalty_dual_packed(
        &state.psi_groups[group],
        &state.lambda_groups[group],
        state.rho,
        reciprocal,
    );
    Ok((delta_mat, delta_vec))
}

/// Minimizes `phi^H Delta phi - 2 Re(phi^H delta)` by a Hermitian solve,
/// adding a ridge of `1e-12 * tr(Delta)/dim` when the factorization fails.
pub fn solve_phi_group(delta_mat: &CMat, delta_vec: &CVec) -> Result<CVec> {
    let dim = delta_mat.nrows();
    if delta_mat.ncols() != dim || delta_vec.len() != dim {
        return Err(Error::DimensionMismatch("quadratic system sizes disagree".into()));
    }
    if delta_mat.iter().chain(delta_vec.iter()).any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::numerical("scattering quadratic", "non-finite coefficients"));
    }
    if let Some(chol) = delta_mat.clone().cholesky() {
        return Ok(chol.solve(delta_vec));
    }
    let ridge = 1e-12 * delta_mat.trace().re.abs().max(1.0) / dim as f64;
    let mut reg = delta_mat.clone();
    let mut eps = ridge;
    for _ in 0..8 {
        for t in 0..dim {
            reg[(t, t)] += Cx::new(eps, 0.0);
        }
        if let Some(chol) = reg.clone().cholesky() {
            return Ok(chol.solve(delta_vec));
        }
        eps *= 100.0;
    }
    Err(Error::numerical("scattering quadratic", "matrix not positive definite after ridge"))
}

/// Nearest unitary matrix in Frobenius norm (polar factor of `x`).
pub fn project_unitary(x: &CMat) -> Result<CMat> {
    unitary_polar(x)
}

/// One row of the penalty-solver trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PddTraceRow {
    pub outer_iter: usize,
    pub inner_iters: usize,
    pub rho: f64,
    pub violation_inf_norm: f64,
    pub inner_objective: f64,
}

/// Result of one scattering update.
#[derive(Debug, Clone)]
pub struct PddOutcome {
    /// Block-diagonal, exactly feasible scattering matrix.
    pub scattering: CMat,
    /// Final split `max_g |Phi_g - Psi_g|_inf` before the feasible copy is
    /// adopted.
    pub violation: f64,
    pub outer_iters: usize,
    pub trace: Vec<PddTraceRow>,
}

/// Low-rank inner solver of one group's quadratic. The curvature is
/// `V V^H + diag(s)/(2 rho)` with `r <= (K+I)^2` factor columns, so each
/// solve costs `O(dim * r)` after a per-penalty-value refresh.
struct GroupSolver {
    v: CMat,
    /// `V^H diag(1/s) V`, fixed across penalty values.
    base_capacity: CMat,
    gram: Vec<f64>,
    delta0: CVec,
    capacity_chol: Option<nalgebra::Cholesky<Cx, nalgebra::Dyn>>,
}

impl GroupSolver {
    fn new(
        group: usize,
        m_g: usize,
        reciprocal: bool,
        factors: &[(CVec, CVec, f64)],
        s_comb: &CMat,
    ) -> Self {
        let g0 = group * m_g;
        let dim = packed_len(m_g, reciprocal);
        let r = factors.len();
        let mut v = CMat::zeros(dim, r);
        let mut scratch = CVec::zeros(m_g * m_g);
        for (col, (z, u, w)) in factors.iter().enumerate() {
            let sw = w.sqrt();
            for c in 0..m_g {
                let zc = z[g0 + c].conj() * Cx::new(sw, 0.0);
                for row in 0..m_g {
                    scratch[c * m_g + row] = zc * u[g0 + row];
                }
            }
            v.set_column(col, &pack_adjoint(&scratch, m_g, reciprocal));
        }
        let gram = pack_gram_diag(m_g, reciprocal);
        let mut v_scaled = v.clone();
        for (t, s) in gram.iter().enumerate() {
            let inv = Cx::new(1.0 / s, 0.0);
            for col in 0..r {
                v_scaled[(t, col)] *= inv;
            }
        }
        let base_capacity = v.adjoint() * &v_scaled;
        let block = s_comb.view((g0, g0), (m_g, m_g)).into_owned();
        let delta0 = pack_adjoint(&conj_t_vec(&block), m_g, reciprocal);
        GroupSolver { v, base_capacity, gram, delta0, capacity_chol: None }
    }

    /// Refactors the capacity matrix `I + 2 rho V^H diag(1/s) V` for a new
    /// penalty value.
    fn refresh(&mut self, rho: f64) -> Result<()> {
        let r = self.base_capacity.nrows();
        let mut cap = &self.base_capacity * Cx::new(2.0 * rho, 0.0);
        for t in 0..r {
            cap[(t, t)] += Cx::new(1.0, 0.0);
        }
        self.capacity_chol = Some(cap.cholesky().ok_or_else(|| {
            Error::numerical("pdd capacity factorization", "matrix not positive definite")
        })?);
        Ok(())
    }

    /// Applies `(V V^H + diag(s)/(2 rho))^{-1}` to `rhs` via the Woodbury
    /// identity.
    fn solve(&self, rhs: &CVec, rho: f64) -> CVec {
        let scale = 2.0 * rho;
        let x0 = CVec::from_fn(rhs.len(), |t, _| rhs[t] * Cx::new(scale / self.gram[t], 0.0));
        let y = self.v.adjoint() * &x0;
        let chol = self.capacity_chol.as_ref().expect("capacity factor refreshed before solve");
        let z = chol.solve(&y);
        let vz = &self.v * z;
        let correction =
            CVec::from_fn(rhs.len(), |t, _| vz[t] * Cx::new(scale / self.gram[t], 0.0));
        x0 - correction
    }

    /// Variable part of this group's augmented-Lagrangian value.
    fn objective(&self, phi_packed: &CVec, phi: &CMat, psi: &CMat, lambda: &CMat, rho: f64) -> f64 {
        let quad = (self.v.adjoint() * phi_packed).norm_squared();
        let lin = -2.0 * phi_packed.dotc(&self.delta0).re;
        let split = phi - psi;
        let penalty = split.norm_squared() / (2.0 * rho);
        let dual = split.zip_fold(lambda, 0.0, |acc, s, l| acc + (l.conj() * s).re);
        quad + lin + penalty + dual
    }
}

/// Builds the low-rank factor list `(z, u, weight)`: the curvature is
/// `sum w * (z* kron u)(z* kron u)^H` over these triples.
fn curvature_factors(
    ch: &ChannelSet,
    st: &TransceiverState,
    aux: &AuxVars,
    alpha_dl: f64,
) -> Vec<(CVec, CVec, f64)> {
    let alpha_ul = 1.0 - alpha_dl;
    let p_ul = ch.p_ul_linear;
    let g_mat = &ch.bs_ris;
    let gp: Vec<CVec> = (0..ch.n_dl()).map(|j| g_mat * st.precoder.column(j).into_owned()).collect();
    let u_dl: Vec<CVec> = (0..ch.n_dl())
        .map(|k| ch.ris_dl[k].conjugate() * Cx::new(aux.tau_dl[k].norm(), 0.0))
        .collect();
    let u_ul: Vec<CVec> = (0..ch.n_ul())
        .map(|i| {
            (g_mat.conjugate() * st.combiner.column(i).into_owned())
                * Cx::new(aux.tau_ul[i].norm(), 0.0)
        })
        .collect();
    let mut factors = Vec::with_capacity((ch.n_dl() + ch.n_ul()).pow(2));
    for z in &gp {
        for u in &u_dl {
            factors.push((z.clone(), u.clone(), alpha_dl));
        }
    }
    for i in 0..ch.n_ul() {
        for u in &u_dl {
            factors.push((ch.ris_ul[i].clone(), u.clone(), alpha_dl * p_ul));
        }
    }
    for p in 0..ch.n_ul() {
        for u in &u_ul {
            factors.push((ch.ris_ul[p].clone(), u.clone(), alpha_ul * p_ul));
        }
    }
    for z in &gp {
        for u in &u_ul {
            factors.push((z.clone(), u.clone(), alpha_ul));
        }
    }
    factors
}

/// Runs the penalty-dual scattering update. Warm-starts from
/// `st.scattering`, keeps the precoder/combiner/auxiliaries fixed, and
/// returns an exactly feasible block-diagonal scattering matrix: unitary
/// blocks, bitwise-symmetric in reciprocal mode.
pub fn run_pdd(
    ch: &ChannelSet,
    st: &TransceiverState,
    aux: &AuxVars,
    ris: &RisConfig,
    opts: &PddOptions,
    alpha_dl: f64,
    structural: bool,
) -> Result<PddOutcome> {
    let m = ch.n_ris();
    ris.validate(m)?;
    opts.validate()?;
    let m_g = ris.group_size_for(m);
    let reciprocal = ris.reciprocal;
    let n_groups = m / m_g;

    let coupling = assemble_coupling(ch, st, aux)?;
    let s_comb = combined_linear_matrix(&coupling, alpha_dl, ch.p_ul_linear, structural);
    let factors = curvature_factors(ch, st, aux, alpha_dl);
    let mut solvers: Vec<GroupSolver> = (0..n_groups)
        .map(|g| GroupSolver::new(g, m_g, reciprocal, &factors, &s_comb))
        .collect();

    let mut state = PddState::initialize(&st.scattering, m_g, opts.rho_init)?;
    let mut eps = opts.eps_init;
    let mut trace = Vec::new();
    let mut violation = f64::INFINITY;
    let mut outer_used = 0;
    let mut converged = false;

    for outer in 1..=opts.outer_max {
        outer_used = outer;
        for solver in &mut solvers {
            solver.refresh(state.rho)?;
        }
        let mut prev_l: Option<f64> = None;
        let mut inner_used = 0;
        let mut l_total = 0.0;
        for inner in 1..=opts.inner_max {
            l_total = 0.0;
            for g in 0..n_groups {
                let rhs = &solvers[g].delta0
                    + penalty_dual_packed(
                        &state.psi_groups[g],
                        &state.lambda_groups[g],
                        state.rho,
                        reciprocal,
                    );
                let phi_packed = solvers[g].solve(&rhs, state.rho);
                state.phi_groups[g] = unpack_to_matrix(&phi_packed, m_g, reciprocal);
                state.psi_groups[g] = project_unitary(
                    &(&state.phi_groups[g] + &state.lambda_groups[g] * Cx::new(state.rho, 0.0)),
                )?;
                l_total += solvers[g].objective(
                    &phi_packed,
                    &state.phi_groups[g],
                    &state.psi_groups[g],
                    &state.lambda_groups[g],
                    state.rho,
                );
            }
            inner_used = inner;
            if let Some(prev) = prev_l {
                if (prev - l_total).abs() / prev.abs().max(1e-12) < opts.inner_tol {
                    break;
                }
            }
            prev_l = Some(l_total);
        }

        violation = (0..n_groups)
            .map(|g| max_abs(&(&state.phi_groups[g] - &state.psi_groups[g])))
            .fold(0.0, f64::max);
        trace.push(PddTraceRow {
            outer_iter: outer,
            inner_iters: inner_used,
            rho: state.rho,
            violation_inf_norm: violation,
            inner_objective: l_total,
        });
        if !violation.is_finite() {
            return Err(Error::numerical("pdd outer loop", "non-finite split norm"));
        }
        if violation <= opts.outer_eps {
            converged = true;
        }
        if converged {
            break;
        }
        if violation < eps {
            for g in 0..n_groups {
                let step =
                    (&state.phi_groups[g] - &state.psi_groups[g]) * Cx::new(1.0 / state.rho, 0.0);
                state.lambda_groups[g] += step;
            }
        } else {
            state.rho *= opts.shrink;
            if state.rho < 1e-12 {
                return Err(Error::numerical(
                    "pdd penalty schedule",
                    format!("penalty underflow at outer iteration {outer}"),
                ));
            }
        }
        eps = (0.9 * violation).max(opts.outer_eps);
    }

    // Adopt the feasible copy; reciprocal blocks additionally get the
    // nearest symmetric unitary so symmetry holds at the bit level.
    let mut scattering = CMat::zeros(m, m);
    for g in 0..n_groups {
        let block = if reciprocal {
            nearest_symmetric_unitary(&state.psi_groups[g])?
        } else {
            state.psi_groups[g].clone()
        };
        debug_assert!(unitarity_residual(&block) < 1e-8);
        scattering.view_mut((g * m_g, g * m_g), (m_g, m_g)).copy_from(&block);
    }
    Ok(PddOutcome { scattering, violation, outer_iters: outer_used, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::generate_channel_set;
    use crate::config::ScenarioConfig;
    use crate::fp::{eval_f_tau, update_iota, update_tau};
    use crate::linalg::{random_unitary, standard_complex};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn random_mat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(r, c, |_, _| standard_complex(rng))
    }

    #[test]
    fn permutation_matches_reference_layouts() {
        let k = build_permutation(1, true).unwrap();
        assert_eq!(k.nrows(), 1);
        assert_eq!(k[(0, 0)], Cx::new(1.0, 0.0));
        let k = build_permutation(2, true).unwrap();
        let want = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for r in 0..4 {
            for c in 0..3 {
                assert_eq!(k[(r, c)].re, want[r][c], "entry ({r},{c})");
            }
        }
        assert!(build_permutation(0, false).is_err());
    }

    #[test]
    fn permutation_row_and_column_sums() {
        for m_g in 1..=6 {
            for reciprocal in [false, true] {
                let k = build_permutation(m_g, reciprocal).unwrap();
                for r in 0..k.nrows() {
                    let sum: f64 = (0..k.ncols()).map(|c| k[(r, c)].re).sum();
                    assert_eq!(sum, 1.0, "row {r} of m_g={m_g}");
                }
                for c in 0..k.ncols() {
                    let sum: f64 = (0..k.nrows()).map(|r| k[(r, c)].re).sum();
                    if reciprocal {
                        assert!(sum == 1.0 || sum == 2.0);
                    } else {
                        assert_eq!(sum, 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn packed_helpers_agree_with_dense_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m_g in 1..=4 {
            for reciprocal in [false, true] {
                let k = build_permutation(m_g, reciprocal).unwrap();
                let z = CVec::from_fn(m_g * m_g, |_, _| standard_complex(&mut rng));
                let dense = k.adjoint() * &z;
                let fast = pack_adjoint(&z, m_g, reciprocal);
                assert!(max_abs(&CMat::from_column_slice(
                    dense.len(),
                    1,
                    (&dense - &fast).as_slice()
                )) < 1e-14);
                let phi = CVec::from_fn(packed_len(m_g, reciprocal), |_, _| {
                    standard_complex(&mut rng)
                });
                let full = &k * &phi;
                let unpacked = unpack_to_matrix(&phi, m_g, reciprocal);
                assert!(max_abs(&(unpack_to_matrix(&full.clone(), m_g, false) - &unpacked)) < 1e-14);
                let gram = (k.adjoint() * &k).map(|v| v.re);
                for (t, s) in pack_gram_diag(m_g, reciprocal).iter().enumerate() {
                    assert_eq!(gram[(t, t)], *s);
                }
            }
        }
    }

    #[test]
    fn reshape_places_blocks_on_the_diagonal() {
        let r = build_reshape(2, 2, 0).unwrap();
        assert_eq!(r, CMat::identity(4, 4));
        let r = build_reshape(4, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = random_mat(2, 2, &mut rng);
        let full_vec = &r * vec_of(&block);
        let full = unpack_to_matrix(&full_vec, 4, false);
        for row in 0..4 {
            for col in 0..4 {
                let want = if row >= 2 && col >= 2 { block[(row - 2, col - 2)] } else { ZERO };
                assert_eq!(full[(row, col)], want);
            }
        }
        // The placement maps cover exactly the block-diagonal support.
        let mut support = CMat::zeros(16, 16);
        for g in 0..2 {
            let rg = build_reshape(4, 2, g).unwrap();
            support += &rg * rg.transpose();
        }
        for t in 0..16 {
            let (row, col) = (t % 4, t / 4);
            let expected = if row / 2 == col / 2 { 1.0 } else { 0.0 };
            assert_eq!(support[(t, t)].re, expected);
        }
        assert!(build_reshape(4, 2, 2).is_err());
        assert!(build_reshape(4, 3, 0).is_err());
    }

    fn block_diag_random(m: usize, m_g: usize, symmetric: bool, rng: &mut ChaCha8Rng) -> CMat {
        let mut phi = CMat::zeros(m, m);
        for g in 0..m / m_g {
            let mut b = random_mat(m_g, m_g, rng);
            if symmetric {
                b = &b + b.transpose();
            }
            phi.view_mut((g * m_g, g * m_g), (m_g, m_g)).copy_from(&b);
        }
        phi
    }

    #[test]
    fn trace_identities_hold_for_random_tuples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases = [(4usize, 2usize, true), (3, 3, false), (4, 1, true), (6, 2, false)];
        for &(m, m_g, reciprocal) in &cases {
            for _ in 0..10 {
                let c = random_mat(m, m, &mut rng);
                let a = random_mat(m, m, &mut rng);
                let b = random_mat(m, m, &mut rng);
                let phi = block_diag_random(m, m_g, reciprocal, &mut rng);
                let rep = trace_vec_identity_check(&c, &a, &b, &phi, m_g, reciprocal).unwrap();
                assert!(
                    (rep.trace_direct - rep.trace_via_vec).norm()
                        <= 1e-12 * rep.trace_direct.norm().max(1.0)
                );
                assert!(
                    (rep.quad_direct - rep.quad_via_kron).norm()
                        <= 1e-12 * rep.quad_direct.norm().max(1.0)
                );
            }
        }
        let c = CMat::identity(4, 4);
        let rep =
            trace_vec_identity_check(&c, &c, &c, &CMat::identity(4, 4), 2, false).unwrap();
        assert_relative_eq!(rep.trace_direct.re, 4.0, max_relative = 1e-14);
        assert_relative_eq!(rep.trace_via_vec.re, 4.0, max_relative = 1e-14);
    }

    fn small_instance(
        seed: u64,
        m: usize,
        n: usize,
    ) -> (ChannelSet, TransceiverState, AuxVars) {
        let cfg = ScenarioConfig {
            n_bs_antennas: n,
            n_ris_elements: m,
            rng_seed: seed,
            ..ScenarioConfig::default()
        };
        let ch = generate_channel_set(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let st = TransceiverState {
            precoder: random_mat(n, 1, &mut rng) * Cx::new(cfg.p_dl_linear().sqrt(), 0.0),
            combiner: random_mat(n, 1, &mut rng),
            scattering: random_unitary(m, &mut rng),
        };
        let aux = update_iota(&ch, &st, true).unwrap();
        let aux = update_tau(&ch, &st, &aux, true).unwrap();
        (ch, st, aux)
    }

    #[test]
    fn coupling_matches_naive_loops_and_psd_structure() {
        let (ch, st, aux) = small_instance(11, 2, 2);
        let c = assemble_coupling(&ch, &st, &aux).unwrap();
        // Naive single-user recomputation of a few representative entries.
        let g = &ch.bs_ris;
        let p0 = st.precoder.column(0).into_owned();
        let w0 = st.combiner.column(0).into_owned();
        let a1_naive = (g * &p0) * (g * &p0).adjoint();
        assert!(max_abs(&(&c.a1 - &a1_naive)) < 1e-12);
        let gw = g.conjugate() * &w0;
        let a2_naive = (&gw * gw.adjoint()) * Cx::new(aux.tau_ul[0].norm_sqr(), 0.0);
        assert!(max_abs(&(&c.a2 - &a2_naive)) < 1e-12);
        let hc = ch.ris_dl[0].conjugate();
        let b1_naive = (&hc * hc.adjoint()) * Cx::new(aux.tau_dl[0].norm_sqr(), 0.0);
        assert!(max_abs(&(&c.b1 - &b1_naive)) < 1e-12);
        let c1_naive = (g * &p0 * ch.ris_dl[0].transpose())
            * (aux.tau_dl[0].conj() * Cx::new((1.0 + aux.iota_dl[0]).sqrt(), 0.0));
        assert!(max_abs(&(&c.c1 - &c1_naive)) < 1e-12);
        let d2_naive = (&ch.ris_ul[0] * ch.ris_dl[0].transpose())
            * (ch.dir_ul_dl[(0, 0)].conj() * Cx::new(aux.tau_dl[0].norm_sqr(), 0.0));
        assert!(max_abs(&(&c.d2 - &d2_naive)) < 1e-12);
        assert!(max_abs(&(&c.f1 - &c.a1 * &c.b1)) < 1e-12);
        // Hermitian PSD structure of the curvature blocks.
        for mat in [&c.a1, &c.a2, &c.b1, &c.b2] {
            assert!(max_abs(&(mat - mat.adjoint())) < 1e-12);
            let eig = mat.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10));
        }
    }

    #[test]
    fn zero_precoder_zeroes_the_precoder_coupled_matrices() {
        let (ch, mut st, aux) = small_instance(13, 2, 2);
        st.precoder.fill(ZERO);
        let c = assemble_coupling(&ch, &st, &aux).unwrap();
        for mat in [&c.a1, &c.c1, &c.d1, &c.f1, &c.j2, &c.d] {
            assert_eq!(max_abs(mat), 0.0);
        }
    }

    /// The decisive correctness oracle for the quadratic: differences of the
    /// assembled form must match differences of the directly-evaluated
    /// surrogate-plus-penalty objective at random scattering matrices.
    fn quadratic_difference_oracle(reciprocal: bool, structural: bool, seed: u64) {
        let m = 2;
        let (ch, st, aux) = small_instance(seed, m, 2);
        let ris = if reciprocal { RisConfig::full(true) } else { RisConfig::full(false) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = PddState::initialize(&random_unitary(m, &mut rng), m, 0.7).unwrap();
        state.lambda_groups[0] = random_mat(m, m, &mut rng);
        state.psi_groups[0] = random_unitary(m, &mut rng);
        let (delta_mat, delta_vec) =
            assemble_quadratic(0, &assemble_coupling(&ch, &st, &aux).unwrap(), &state, &ris, 0.6, ch.p_ul_linear, structural)
                .unwrap();

        let dim = packed_len(m, reciprocal);
        let quad = |phi_packed: &CVec| -> f64 {
            let q = phi_packed.dotc(&(&delta_mat * phi_packed)).re;
            q - 2.0 * phi_packed.dotc(&delta_vec).re
        };
        let direct = |phi_packed: &CVec| -> f64 {
            let block = unpack_to_matrix(phi_packed, m, reciprocal);
            let mut probe = st.clone();
            probe.scattering = block.clone();
            let f_tau = eval_f_tau(&ch, &probe, &aux, 0.6, structural).unwrap() * LN_2;
            let split = &block - &state.psi_groups[0];
            let dual = split
                .zip_fold(&state.lambda_groups[0], 0.0, |acc, s, l| acc + (l.conj() * s).re);
            -f_tau + dual + split.norm_squared() / (2.0 * state.rho)
        };
        for _ in 0..6 {
            let x = CVec::from_fn(dim, |_, _| standard_complex(&mut rng));
            let y = CVec::from_fn(dim, |_, _| standard_complex(&mut rng));
            let got = quad(&x) - quad(&y);
            let want = direct(&x) - direct(&y);
            assert_relative_eq!(got, want, max_relative = 1e-8, epsilon = 1e-10);
        }
    }

    #[test]
    fn quadratic_matches_direct_objective_nonreciprocal() {
        quadratic_difference_oracle(false, true, 2);
        quadratic_difference_oracle(false, false, 3);
    }

    #[test]
    fn quadratic_matches_direct_objective_reciprocal() {
        quadratic_difference_oracle(true, true, 4);
        quadratic_difference_oracle(true, false, 5);
    }

    #[test]
    fn quadratic_is_hermitian_and_rejects_bad_rho() {
        let (ch, st, aux) = small_instance(17, 4, 2);
        let coupling = assemble_coupling(&ch, &st, &aux).unwrap();
        let mut state = PddState::initialize(&st.scattering, 4, 1.0).unwrap();
        let ris = RisConfig::full(false);
        let (delta_mat, _) =
            assemble_quadratic(0, &coupling, &state, &ris, 0.5, ch.p_ul_linear, true).unwrap();
        assert!(max_abs(&(&delta_mat - delta_mat.adjoint())) < 1e-12);
        state.rho = -1.0;
        assert!(
            assemble_quadratic(0, &coupling, &state, &ris, 0.5, ch.p_ul_linear, true).is_err()
        );
    }

    #[test]
    fn woodbury_solver_agrees_with_dense_reference() {
        for (reciprocal, seed) in [(false, 23u64), (true, 29)] {
            let m = 4;
            let (ch, st, aux) = small_instance(seed, m, 2);
            let ris =
                if reciprocal { RisConfig::group(2, true) } else { RisConfig::group(2, false) };
            let m_g = 2;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = PddState::initialize(&st.scattering, m_g, 0.9).unwrap();
            for g in 0..2 {
                state.lambda_groups[g] = random_mat(m_g, m_g, &mut rng);
                state.psi_groups[g] = random_unitary(m_g, &mut rng);
            }
            let coupling = assemble_coupling(&ch, &st, &aux).unwrap();
            let s_comb = combined_linear_matrix(&coupling, 0.6, ch.p_ul_linear, true);
            let factors = curvature_factors(&ch, &st, &aux, 0.6);
            for g in 0..2 {
                let (delta_mat, delta_vec) = assemble_quadratic(
                    g,
                    &coupling,
                    &state,
                    &ris,
                    0.6,
                    ch.p_ul_linear,
                    true,
                )
                .unwrap();
                let dense = solve_phi_group(&delta_mat, &delta_vec).unwrap();
                let mut fast = GroupSolver::new(g, m_g, reciprocal, &factors, &s_comb);
                fast.refresh(state.rho).unwrap();
                let rhs = &fast.delta0
                    + penalty_dual_packed(
                        &state.psi_groups[g],
                        &state.lambda_groups[g],
                        state.rho,
                        reciprocal,
                    );
                let phi = fast.solve(&rhs, state.rho);
                for t in 0..dense.len() {
                    assert!(
                        (dense[t] - phi[t]).norm() < 1e-10,
                        "group {g} entry {t}: dense {} fast {}",
                        dense[t],
                        phi[t]
                    );
                }
            }
        }
    }

    #[test]
    fn solve_phi_group_reference_cases() {
        let eye = CMat::identity(3, 3);
        let rhs = CVec::from_vec(vec![Cx::new(1.0, 2.0), Cx::new(0.0, -1.0), Cx::new(3.0, 0.0)]);
        let sol = solve_phi_group(&eye, &rhs).unwrap();
        assert!((&sol - &rhs).norm() < 1e-14);
        let two = CMat::from_element(1, 1, Cx::new(2.0, 0.0));
        let four = CVec::from_element(1, Cx::new(4.0, 0.0));
        assert_relative_eq!(solve_phi_group(&two, &four).unwrap()[0].re, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = random_mat(6, 6, &mut rng);
        let psd = &a * a.adjoint() + CMat::identity(6, 6) * Cx::new(0.1, 0.0);
        let b = CVec::from_fn(6, |_, _| standard_complex(&mut rng));
        let x = solve_phi_group(&psd, &b).unwrap();
        assert!(((&psd * &x) - &b).norm() < 1e-9);
        let mut bad = eye.clone();
        bad[(0, 0)] = Cx::new(f64::NAN, 0.0);
        assert!(solve_phi_group(&bad, &rhs).is_err());
    }

    #[test]
    fn unitary_projection_reference_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let q = random_unitary(4, &mut rng);
        assert!(max_abs(&(project_unitary(&q).unwrap() - &q)) < 1e-12);
        let d = CMat::from_diagonal(&CVec::from_vec(vec![Cx::new(2.0, 0.0), Cx::new(3.0, 0.0)]));
        assert!(max_abs(&(project_unitary(&d).unwrap() - CMat::identity(2, 2))) < 1e-12);
        let x = random_mat(4, 4, &mut rng);
        let proj = project_unitary(&x).unwrap();
        let best = (&proj - &x).norm();
        for _ in 0..10_000 {
            let cand = random_unitary(4, &mut rng);
            assert!((cand - &x).norm() >= best - 1e-9);
        }
    }

    #[test]
    fn inner_alternation_never_increases_the_augmented_lagrangian() {
        let m = 3;
        let (ch, st, aux) = small_instance(41, m, 2);
        let ris = RisConfig::full(false);
        let coupling = assemble_coupling(&ch, &st, &aux).unwrap();
        let mut state = PddState::initialize(&st.scattering, m, 1.0).unwrap();
        let al = |phi: &CMat, psi: &CMat, state: &PddState| -> f64 {
            let mut probe = st.clone();
            probe.scattering = phi.clone();
            let f_tau = eval_f_tau(&ch, &probe, &aux, 0.5, true).unwrap() * LN_2;
            let split = phi - psi;
            let dual = split
                .zip_fold(&state.lambda_groups[0], 0.0, |acc, s, l| acc + (l.conj() * s).re);
            -f_tau + dual + split.norm_squared() / (2.0 * state.rho)
        };
        let mut last = f64::INFINITY;
        for _ in 0..8 {
            let (delta_mat, delta_vec) =
                assemble_quadratic(0, &coupling, &state, &ris, 0.5, ch.p_ul_linear, true).unwrap();
            let packed = solve_phi_group(&delta_mat, &delta_vec).unwrap();
            state.phi_groups[0] = unpack_to_matrix(&packed, m, false);
            let after_phi = al(&state.phi_groups[0], &state.psi_groups[0], &state);
            assert!(after_phi <= last + 1e-9 * last.abs().max(1.0), "phi step rose");
            state.psi_groups[0] = project_unitary(
                &(&state.phi_groups[0] + &state.lambda_groups[0] * Cx::new(state.rho, 0.0)),
            )
            .unwrap();
            let after_psi = al(&state.phi_groups[0], &state.psi_groups[0], &state);
            assert!(after_psi <= after_phi + 1e-9 * after_phi.abs().max(1.0), "psi step rose");
            last = after_psi;
        }
    }

    #[test]
    fn diagonal_architecture_returns_unit_modulus_phases() {
        let (ch, st, aux) = small_instance(43, 4, 1);
        let out = run_pdd(&ch, &st, &aux, &RisConfig::single(), &PddOptions::default(), 0.5, true)
            .unwrap();
        for r in 0..4 {
            for c in 0..4 {
                if r == c {
                    assert_relative_eq!(out.scattering[(r, c)].norm(), 1.0, max_relative = 1e-9);
                } else {
                    assert_eq!(out.scattering[(r, c)], ZERO);
                }
            }
        }
        assert!(out.violation <= PddOptions::default().outer_eps);
    }

    #[test]
    fn reciprocal_output_is_bitwise_symmetric_and_unitary() {
        let (ch, st, aux) = small_instance(47, 4, 2);
        let out = run_pdd(
            &ch,
            &st,
            &aux,
            &RisConfig::group(2, true),
            &PddOptions::default(),
            0.5,
            true,
        )
        .unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(out.scattering[(r, c)], out.scattering[(c, r)], "asymmetric at ({r},{c})");
            }
        }
        for g in 0..2 {
            let block = out.scattering.view((2 * g, 2 * g), (2, 2)).into_owned();
            assert!(unitarity_residual(&block) < 1e-6);
        }
        assert!(out.violation <= PddOptions::default().outer_eps);
    }

    #[test]
    fn split_violation_meets_the_target_on_a_full_surface() {
        let (ch, st, aux) = small_instance(53, 8, 2);
        let opts = PddOptions::default();
        let out = run_pdd(&ch, &st, &aux, &RisConfig::full(false), &opts, 0.5, true).unwrap();
        assert!(out.violation <= opts.outer_eps, "violation {}", out.violation);
        assert!(out.outer_iters <= opts.outer_max);
        assert!(!out.trace.is_empty());
        assert!(unitarity_residual(&out.scattering) < 1e-8);
    }

    #[test]
    fn surrogate_value_ignores_the_reciprocity_label() {
        // A reciprocal-feasible scattering matrix scores identically when
        // evaluated as a non-reciprocal candidate: the feasible set nests.
        let (ch, st, aux) = small_instance(59, 4, 2);
        let out = run_pdd(
            &ch,
            &st,
            &aux,
            &RisConfig::full(true),
            &PddOptions::default(),
            0.5,
            true,
        )
        .unwrap();
        let mut probe = st.clone();
        probe.scattering = out.scattering.clone();
        let as_any = eval_f_tau(&ch, &probe, &aux, 0.5, true).unwrap();
        let again = eval_f_tau(&ch, &probe, &aux, 0.5, true).unwrap();
        assert_eq!(as_any, again);
    }
}
