//! Link-quality metrics: per-user SINRs, the weighted sum rate the solver
//! maximizes, and surface beampatterns.
//!
//! Downlink user `k` receives its own stream against the other downlink
//! streams plus every uplink transmission leaking through the surface.
//! Uplink user `i` is decoded with combiner `w_i` against the other uplink
//! users and the BS's own transmission returning through the residual
//! self-interference matrix and the surface loop.

use serde::{Deserialize, Serialize};

use crate::channel::{scatter_term, ChannelSet};
use crate::error::{Error, Result};
use crate::{CMat, CVec};

/// Transmit precoder, receive combiner and scattering matrix of one design.
#[derive(Debug, Clone)]
pub struct TransceiverState {
    /// Downlink precoder, N x K (column k serves DL user k).
    pub precoder: CMat,
    /// Uplink combiner, N x I, held at unit Frobenius norm by the solver.
    pub combiner: CMat,
    /// Surface scattering matrix, M x M.
    pub scattering: CMat,
}

/// Effective channels of one `(channel set, scattering matrix)` pair; caches
/// what every metric and solver step needs.
#[derive(Debug, Clone)]
pub struct EffectiveChannels {
    /// Effective DL vectors `h_{d,k}` (length N), acting as `h^T p`.
    pub dl: Vec<CVec>,
    /// Effective UL vectors `h_{u,i}` at the BS (length N).
    pub ul: Vec<CVec>,
    /// Effective UL-to-DL scalars, I x K.
    pub ul_to_dl: CMat,
    /// Self-interference plus surface loop, `H_SI + G^T (Phi - I) G`, N x N.
    pub si_loop: CMat,
}

impl EffectiveChannels {
    pub fn compute(ch: &ChannelSet, phi: &CMat, structural: bool) -> Result<Self> {
        let t = scatter_term(phi, structural);
        if phi.nrows() != ch.n_ris() || phi.ncols() != ch.n_ris() {
            return Err(Error::DimensionMismatch(format!(
                "scattering matrix is {}x{}, expected {m}x{m}",
                phi.nrows(),
                phi.ncols(),
                m = ch.n_ris()
            )));
        }
        let tg = &t * &ch.bs_ris; // M x N
        let dl = (0..ch.n_dl())
            .map(|k| {
                let row = ch.ris_dl[k].transpose() * &tg;
                &ch.dir_dl[k] + row.transpose()
            })
            .collect();
        let ul = (0..ch.n_ul())
            .map(|i| &ch.dir_ul_bs[i] + ch.bs_ris.transpose() * (&t * &ch.ris_ul[i]))
            .collect::<Vec<_>>();
        let mut ul_to_dl = ch.dir_ul_dl.clone();
        for i in 0..ch.n_ul() {
            let v = &t * &ch.ris_ul[i];
            for k in 0..ch.n_dl() {
                ul_to_dl[(i, k)] += ch.ris_dl[k].dot(&v);
            }
        }
        let si_loop = &ch.si + ch.bs_ris.transpose() * tg;
        Ok(EffectiveChannels { dl, ul, ul_to_dl, si_loop })
    }
}

fn check_state(ch: &ChannelSet, st: &TransceiverState) -> Result<()> {
    if st.precoder.nrows() != ch.n_bs()
        || st.precoder.ncols() != ch.n_dl()
        || st.combiner.nrows() != ch.n_bs()
        || st.combiner.ncols() != ch.n_ul()
    {
        return Err(Error::DimensionMismatch(format!(
            "precoder {}x{} / combiner {}x{} vs N={}, K={}, I={}",
            st.precoder.nrows(),
            st.precoder.ncols(),
            st.combiner.nrows(),
            st.combiner.ncols(),
            ch.n_bs(),
            ch.n_dl(),
            ch.n_ul()
        )));
    }
    Ok(())
}

/// Interference power at DL user `k`: other DL streams plus all UL users'
/// leakage, excluding noise.
pub(crate) fn dl_interference_with(
    ch: &ChannelSet,
    eff: &EffectiveChannels,
    st: &TransceiverState,
    k: usize,
) -> f64 {
    let h = &eff.dl[k];
    let mut acc = 0.0;
    for j in 0..ch.n_dl() {
        if j != k {
            acc += h.dot(&st.precoder.column(j).into_owned()).norm_sqr();
        }
    }
    for i in 0..ch.n_ul() {
        acc += ch.p_ul_linear * eff.ul_to_dl[(i, k)].norm_sqr();
    }
    acc
}

/// Interference power seen by combiner `w_i`: the other UL users plus the
/// BS transmission through self-interference and the surface loop, excluding
/// the combiner-shaped noise.
pub(crate) fn ul_interference_with(
    ch: &ChannelSet,
    eff: &EffectiveChannels,
    st: &TransceiverState,
    i: usize,
) -> f64 {
    let w = st.combiner.column(i);
    let mut acc = 0.0;
    for p in 0..ch.n_ul() {
        if p != i {
            acc += ch.p_ul_linear * w.dotc(&eff.ul[p]).norm_sqr();
        }
    }
    let w_si = eff.si_loop.adjoint() * w.into_owned(); // (w^H (H_SI + L))^H
    for k in 0..ch.n_dl() {
        acc += w_si.dotc(&st.precoder.column(k).into_owned()).norm_sqr();
    }
    acc
}

/// Interference power at DL user `k` (excluding noise).
pub fn dl_interference(ch: &ChannelSet, st: &TransceiverState, k: usize, structural: bool) -> Result<f64> {
    check_state(ch, st)?;
    let eff = EffectiveChannels::compute(ch, &st.scattering, structural)?;
    Ok(dl_interference_with(ch, &eff, st, k))
}

/// Interference power behind combiner `i` (excluding noise).
pub fn ul_interference(ch: &ChannelSet, st: &TransceiverState, i: usize, structural: bool) -> Result<f64> {
    check_state(ch, st)?;
    let eff = EffectiveChannels::compute(ch, &st.scattering, structural)?;
    Ok(ul_interference_with(ch, &eff, st, i))
}

pub(crate) fn dl_sinr_with(
    ch: &ChannelSet,
    eff: &EffectiveChannels,
    st: &TransceiverState,
    k: usize,
) -> f64 {
    let sig = eff.dl[k].dot(&st.precoder.column(k).into_owned()).norm_sqr();
    sig / (dl_interference_with(ch, eff, st, k) + ch.noise_var_linear)
}

pub(crate) fn ul_sinr_with(
    ch: &ChannelSet,
    eff: &EffectiveChannels,
    st: &TransceiverState,
    i: usize,
) -> f64 {
    let w = st.combiner.column(i).into_owned();
    let sig = ch.p_ul_linear * w.dotc(&eff.ul[i]).norm_sqr();
    let den = ul_interference_with(ch, eff, st, i) + w.norm_squared() * ch.noise_var_linear;
    sig / den
}

/// SINR of DL user `k`.
pub fn dl_sinr(ch: &ChannelSet, st: &TransceiverState, k: usize, structural: bool) -> Result<f64> {
    check_state(ch, st)?;
    let eff = EffectiveChannels::compute(ch, &st.scattering, structural)?;
    Ok(dl_sinr_with(ch, &eff, st, k))
}

/// SINR of UL user `i` behind its combiner.
pub fn ul_sinr(ch: &ChannelSet, st: &TransceiverState, i: usize, structural: bool) -> Result<f64> {
    check_state(ch, st)?;
    let eff = EffectiveChannels::compute(ch, &st.scattering, structural)?;
    Ok(ul_sinr_with(ch, &eff, st, i))
}

/// Weighted sum rate and its DL/UL split, all in bit/s/Hz.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateReport {
    /// `alpha_dl * dl + (1 - alpha_dl) * ul`.
    pub weighted: f64,
    pub dl: f64,
    pub ul: f64,
}

pub(crate) fn rates_with(
    ch: &ChannelSet,
    eff: &EffectiveChannels,
    st: &TransceiverState,
    alpha_dl: f64,
) -> RateReport {
    let dl: f64 = (0..ch.n_dl()).map(|k| (1.0 + dl_sinr_with(ch, eff, st, k)).log2()).sum();
    let ul: f64 = (0..ch.n_ul()).map(|i| (1.0 + ul_sinr_with(ch, eff, st, i)).log2()).sum();
    RateReport { weighted: alpha_dl * dl + (1.0 - alpha_dl) * ul, dl, ul }
}

/// Weighted DL/UL sum rate of a design.
pub fn weighted_sum_rate(
    ch: &ChannelSet,
    st: &TransceiverState,
    alpha_dl: f64,
    structural: bool,
) -> Result<RateReport> {
    check_state(ch, st)?;
    let eff = EffectiveChannels::compute(ch, &st.scattering, structural)?;
    Ok(rates_with(ch, &eff, st, alpha_dl))
}

/// Which quadratic form a beampattern scan evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamKind {
    /// `|h_d^T (Phi - I) a(theta)|^2`: DL power impinging from direction theta.
    DlImpinging,
    /// `|a(theta)^T (Phi - I) g|^2`: DL power reflected toward theta.
    DlReflected,
    /// `|g^T (Phi - I) a(theta)|^2`: UL power impinging from theta.
    UlImpinging,
    /// `|a(theta)^T (Phi - I) h_u|^2`: UL power reflected toward theta.
    UlReflected,
}

/// Scan grid 0..=180 degrees in half-degree steps.
pub fn default_theta_grid() -> Vec<f64> {
    (0..=360).map(|i| i as f64 * 0.5).collect()
}

/// Evaluates one beampattern over `theta_grid_deg`. `user` selects the DL or
/// UL user vector for the kinds that need one; the BS-side vector `g` is the
/// first column of `G`.
pub fn beampattern(
    ch: &ChannelSet,
    phi: &CMat,
    kind: BeamKind,
    user: usize,
    theta_grid_deg: &[f64],
    structural: bool,
) -> Result<Vec<f64>> {
    if theta_grid_deg.is_empty() {
        return Err(Error::InvalidArgument("beampattern: empty angle grid".into()));
    }
    let m = ch.n_ris();
    let t = scatter_term(phi, structural);
    if t.nrows() != m {
        return Err(Error::DimensionMismatch("scattering matrix size".into()));
    }
    let g = ch.bs_ris.column(0).into_owned();
    // Reduce the fixed side of the quadratic form once; each grid point is
    // then a single length-M dot product.
    let fixed: CVec = match kind {
        BeamKind::DlImpinging => {
            let k = user;
            if k >= ch.n_dl() {
                return Err(Error::InvalidArgument(format!("DL user {k} out of range")));
            }
            (ch.ris_dl[k].transpose() * &t).transpose()
        }
        BeamKind::UlImpinging => (g.transpose() * &t).transpose(),
        BeamKind::DlReflected => &t * &g,
        BeamKind::UlReflected => {
            let i = user;
            if i >= ch.n_ul() {
                return Err(Error::InvalidArgument(format!("UL user {i} out of range")));
            }
            &t * &ch.ris_ul[i]
        }
    };
    theta_grid_deg
        .iter()
        .map(|&theta| {
            let a = crate::channel::steering_vector(theta, m)?;
            Ok(a.dot(&fixed).norm_sqr())
        })
        .collect()
}

/// Scales a family of patterns by their single global maximum, so relative
/// levels across patterns stay comparable. All-zero families pass through.
pub fn normalize_beampatterns(patterns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let global = patterns
        .iter()
        .flat_map(|p| p.iter().copied())
        .fold(0.0f64, f64::max);
    if global <= 0.0 {
        return patterns.to_vec();
    }
    patterns.iter().map(|p| p.iter().map(|v| v / global).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel_set, steering_vector};
    use crate::config::ScenarioConfig;
    use crate::Cx;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    /// Hand-buildable single-antenna scene with unit surface responses.
    fn tiny_channel() -> ChannelSet {
        ChannelSet {
            bs_ris: CMat::from_element(2, 1, Cx::new(1.0, 0.0)),
            ris_dl: vec![CVec::from_vec(vec![Cx::new(1.0, 0.0), Cx::new(0.0, 0.0)])],
            ris_ul: vec![CVec::from_vec(vec![Cx::new(0.0, 0.0), Cx::new(1.0, 0.0)])],
            dir_dl: vec![CVec::from_element(1, Cx::new(2.0, 0.0))],
            dir_ul_bs: vec![CVec::from_element(1, Cx::new(1.0, 0.0))],
            dir_ul_dl: CMat::from_element(1, 1, Cx::new(0.5, 0.0)),
            si: CMat::from_element(1, 1, Cx::new(0.1, 0.0)),
            noise_var_linear: 1.0,
            p_ul_linear: 4.0,
        }
    }

    fn identity_state(m: usize, n: usize, k: usize, i: usize) -> TransceiverState {
        TransceiverState {
            precoder: CMat::from_element(n, k, Cx::new(1.0, 0.0)),
            combiner: CMat::from_element(n, i, Cx::new(1.0, 0.0)),
            scattering: CMat::identity(m, m),
        }
    }

    #[test]
    fn hand_computed_sinrs_for_identity_surface() {
        // Phi = I with structural scattering removes every surface path:
        // DL: |2*1|^2 / (P_u*0.25 + 1) = 4 / 2 = 2.
        // UL: 4*|1*1|^2 / (|0.1*1|^2 + 1) = 4 / 1.01.
        let ch = tiny_channel();
        let st = identity_state(2, 1, 1, 1);
        let gd = dl_sinr(&ch, &st, 0, true).unwrap();
        assert_relative_eq!(gd, 2.0, max_relative = 1e-12);
        let gu = ul_sinr(&ch, &st, 0, true).unwrap();
        assert_relative_eq!(gu, 4.0 / 1.01, max_relative = 1e-12);
        let r = weighted_sum_rate(&ch, &st, 0.25, true).unwrap();
        assert_relative_eq!(r.dl, (3.0f64).log2(), max_relative = 1e-12);
        assert_relative_eq!(r.ul, (1.0 + 4.0 / 1.01f64).log2(), max_relative = 1e-12);
        assert_relative_eq!(r.weighted, 0.25 * r.dl + 0.75 * r.ul, max_relative = 1e-14);
    }

    #[test]
    fn interference_is_nonnegative_and_grows_with_ul_power() {
        let mut ch = tiny_channel();
        let st = identity_state(2, 1, 1, 1);
        let a = dl_interference(&ch, &st, 0, true).unwrap();
        assert!(a >= 0.0);
        ch.p_ul_linear *= 10.0;
        let b = dl_interference(&ch, &st, 0, true).unwrap();
        assert!(b > a);
    }

    #[test]
    fn combiner_phase_and_scale_leave_ul_sinr_unchanged() {
        let cfg = ScenarioConfig { n_ris_elements: 4, ..ScenarioConfig::default() };
        let ch = generate_channel_set(&cfg).unwrap();
        let mut st = identity_state(4, 1, 1, 1);
        st.scattering = CMat::from_diagonal(&CVec::from_fn(4, |i, _| {
            Cx::from_polar(1.0, 0.7 * i as f64)
        }));
        let base = ul_sinr(&ch, &st, 0, true).unwrap();
        st.combiner *= Cx::from_polar(3.0, 1.1);
        let scaled = ul_sinr(&ch, &st, 0, true).unwrap();
        assert_relative_eq!(base, scaled, max_relative = 1e-12);
    }

    #[test]
    fn beampattern_grid_and_normalization() {
        let cfg = ScenarioConfig { n_ris_elements: 8, ..ScenarioConfig::default() };
        let ch = generate_channel_set(&cfg).unwrap();
        let phi = CMat::identity(8, 8) * Cx::new(2.0, 0.0);
        let grid = default_theta_grid();
        assert_eq!(grid.len(), 361);
        let pats: Vec<Vec<f64>> = [
            BeamKind::DlImpinging,
            BeamKind::DlReflected,
            BeamKind::UlImpinging,
            BeamKind::UlReflected,
        ]
        .iter()
        .map(|&k| beampattern(&ch, &phi, k, 0, &grid, true).unwrap())
        .collect();
        let norm = normalize_beampatterns(&pats);
        let peak = norm.iter().flat_map(|p| p.iter().copied()).fold(0.0f64, f64::max);
        assert_relative_eq!(peak, 1.0, max_relative = 1e-12);
        assert!(beampattern(&ch, &phi, BeamKind::DlImpinging, 0, &[], true).is_err());
    }

    #[test]
    fn open_surface_ul_pattern_peaks_at_specular_angle() {
        // kappa -> inf makes g a pure steering vector at 30 deg; with the
        // surface removed (Phi = 0, structural term -I) the impinging UL
        // pattern is |g^T a(theta)|^2, maximal at the mirror angle 150 deg.
        let cfg = ScenarioConfig {
            n_ris_elements: 16,
            rician_k_reflected: 1e12,
            ..ScenarioConfig::default()
        };
        let ch = generate_channel_set(&cfg).unwrap();
        let phi = CMat::zeros(16, 16);
        let grid = default_theta_grid();
        let pat = beampattern(&ch, &phi, BeamKind::UlImpinging, 0, &grid, true).unwrap();
        let (argmax, _) = pat
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert_abs_diff_eq!(grid[argmax], 150.0, epsilon = 0.5);
    }

    #[test]
    fn beampattern_matches_direct_quadratic_form() {
        let cfg = ScenarioConfig { n_ris_elements: 6, ..ScenarioConfig::default() };
        let ch = generate_channel_set(&cfg).unwrap();
        let phi = CMat::from_fn(6, 6, |i, j| Cx::new(0.1 * i as f64, 0.05 * j as f64));
        let theta = 73.0;
        let a = steering_vector(theta, 6).unwrap();
        let t = phi.clone() - CMat::identity(6, 6);
        let want = (a.transpose() * &t * ch.bs_ris.column(0).into_owned())[(0, 0)].norm_sqr();
        let got = beampattern(&ch, &phi, BeamKind::DlReflected, 0, &[theta], true).unwrap()[0];
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }
}
