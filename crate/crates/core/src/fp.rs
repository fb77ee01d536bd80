//! Fractional-programming surrogates of the weighted sum rate and the
//! closed-form updates of their auxiliary variables.
//!
//! Two nested transforms turn each `log(1 + SINR)` term into a form with
//! closed-form blocks: a Lagrangian-dual transform introducing a ratio
//! auxiliary `iota` per user, then a quadratic transform introducing a
//! complex auxiliary `tau` per user. Both surrogates are evaluated with
//! natural logarithms internally — that is the scale in which the identity
//! `ln(1 + g) = max_i ln(1 + i) - i + (1 + i) g / (1 + g)` is exact and the
//! maximizing `iota` equals the SINR — and the result is converted to
//! bit/s/Hz by `1 / ln 2`, matching the rate reported elsewhere.

use std::f64::consts::LN_2;

use crate::channel::ChannelSet;
use crate::error::Result;
use crate::metrics::{
    dl_interference_with, ul_interference_with, EffectiveChannels, TransceiverState,
};
use crate::Cx;

/// Per-user auxiliary variables of the two transforms.
#[derive(Debug, Clone)]
pub struct AuxVars {
    /// Ratio auxiliaries for DL users; the closed-form update sets them to
    /// the DL SINRs.
    pub iota_dl: Vec<f64>,
    /// Ratio auxiliaries for UL users.
    pub iota_ul: Vec<f64>,
    /// Quadratic-transform auxiliaries for DL users.
    pub tau_dl: Vec<Cx>,
    /// Quadratic-transform auxiliaries for UL users.
    pub tau_ul: Vec<Cx>,
}

impl AuxVars {
    pub fn zeros(n_dl: usize, n_ul: usize) -> Self {
        AuxVars {
            iota_dl: vec![0.0; n_dl],
            iota_ul: vec![0.0; n_ul],
            tau_dl: vec![Cx::new(0.0, 0.0); n_dl],
            tau_ul: vec![Cx::new(0.0, 0.0); n_ul],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iota_dl.iter().chain(self.iota_ul.iter()).all(|v| v.is_finite())
            && self
                .tau_dl
                .iter()
                .chain(self.tau_ul.iter())
                .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Signal amplitude and noise-plus-interference split of one user's link;
/// shared by every surrogate.
struct LinkTerms {
    /// DL: `h_k^T p_k`. UL: `sqrt(P_u) w_i^H h_i` (amplitude incl. power).
    amp: Cx,
    /// Everything in the denominator except the own signal: DL
    /// `I_k + sigma^2`, UL `I_i + |w_i|^2 sigma^2`.
    base: f64,
}

impl LinkTerms {
    /// `Gamma + noise`: the full post-transform denominator.
    fn denom(&self) -> f64 {
        self.base + self.amp.norm_sqr()
    }

    fn sinr(&self) -> f64 {
        self.amp.norm_sqr() / self.base
    }

    fn ratio(&self) -> f64 {
        self.amp.norm_sqr() / self.denom()
    }
}

fn dl_terms(ch: &ChannelSet, eff: &EffectiveChannels, st: &TransceiverState, k: usize) -> LinkTerms {
    let amp = eff.dl[k].dot(&st.precoder.column(k).into_owned());
    let base = dl_interference_with(ch, eff, st, k) + ch.noise_var_linear;
    LinkTerms { amp, base }
}

fn ul_terms(ch: &ChannelSet, eff: &EffectiveChannels, st: &TransceiverState, i: usize) -> LinkTerms {
    let w = st.combiner.column(i).into_owned();
    let amp = w.dotc(&eff.ul[i]) * Cx::new(ch.p_ul_linear.sqrt(), 0.0);
    let base = ul_interference_with(ch, eff, st, i) + w.norm_squared() * ch.noise_var_linear;
    LinkTerms { amp, base }
}

pub(crate) fn update_iota_with(
    ch: &ChannelSet,
    eff: &EffectiveChannels,
    st: &TransceiverState,
    aux: &mut AuxVars,
) {
    for k in 0..ch.n_dl() {
        aux.iota_dl[k] = dl_terms(ch, eff, st, k).sinr();
    }
    for i in 0..ch.n_ul() {
        aux.iota_ul[i] = ul_terms(ch, eff, st, i).sinr();
    }
}

pub(crate) fn update_tau_with(
    ch: &ChannelSet,
    eff: &EffectiveChannels,
    st: &TransceiverState,
    aux: &mut AuxVars,
) {
    for k in 0..ch.n_dl() {
        let t = dl_terms(ch, eff, st, k);
        aux.tau_dl[k] = t.amp * Cx::new((1.0 + aux.iota_dl[k]).sqrt() / t.denom(), 0.0);
    }
    for i in 0..ch.n_ul() {
        let t = ul_terms(ch, eff, st, i);
        aux.tau_ul[i] = t.amp * Cx::new((1.0 + aux.iota_ul[i]).sqrt() / t.denom(), 0.0);
    }
}

/// Closed-form update of the ratio auxiliaries: each becomes its user's
/// current SINR. Returns a fresh [`AuxVars`] with zeroed `tau`.
pub fn update_iota(ch: &ChannelSet, st: &TransceiverState, structural: bool) -> Result<AuxVars> {
    let eff = EffectiveChannels::compute(ch, &st.scattering, structural)?;
    let mut aux = AuxVars::zeros(ch.n_dl(), ch.n_ul());
    update_iota_with(ch, &eff, st, &mut aux);
    Ok(aux)
}

/// Closed-form update of the quadratic auxiliaries at fixed `iota`; returns
/// a copy of `aux` with the `tau` entries replaced.
pub fn update_tau(ch: &ChannelSet, st: &TransceiverState, aux: &AuxVars, structural: bool) -> Result<AuxVars> {
    let eff = EffectiveChannels::compute(ch, &st.scattering, structural)?;
    let mut out = aux.clone();
    update_tau_with(ch, &eff, st, &mut out);
    Ok(out)
}

fn f_iota_terms(iota: f64, ratio: f64) -> f64 {
    (1.0 + iota).ln() - iota + (1.0 + iota) * ratio
}

pub(crate) fn eval_f_iota_with(
    ch: &ChannelSet,
    eff: &EffectiveChannels,
    st: &TransceiverState,
    aux: &AuxVars,
    alpha_dl: f64,
) -> f64 {
    let dl: f64 = (0..ch.n_dl())
        .map(|k| f_iota_terms(aux.iota_dl[k], dl_terms(ch, eff, st, k).ratio()))
        .sum();
    let ul: f64 = (0..ch.n_ul())
        .map(|i| f_iota_terms(aux.iota_ul[i], ul_terms(ch, eff, st, i).ratio()))
        .sum();
    (alpha_dl * dl + (1.0 - alpha_dl) * ul) / LN_2
}

fn f_tau_terms(iota: f64, tau: Cx, t: &LinkTerms) -> f64 {
    (1.0 + iota).ln() - iota + 2.0 * (1.0 + iota).sqrt() * (tau.conj() * t.amp).re
        - tau.norm_sqr() * t.denom()
}

pub(crate) fn eval_f_tau_with(
    ch: &ChannelSet,
    eff: &EffectiveChannels,
    st: &TransceiverState,
    aux: &AuxVars,
    alpha_dl: f64,
) -> f64 {
    let dl: f64 = (0..ch.n_dl())
        .map(|k| f_tau_terms(aux.iota_dl[k], aux.tau_dl[k], &dl_terms(ch, eff, st, k)))
        .sum();
    let ul: f64 = (0..ch.n_ul())
        .map(|i| f_tau_terms(aux.iota_ul[i], aux.tau_ul[i], &ul_terms(ch, eff, st, i)))
        .sum();
    (alpha_dl * dl + (1.0 - alpha_dl) * ul) / LN_2
}

/// Lagrangian-dual surrogate of the weighted sum rate, in bit/s/Hz. Equals
/// the true rate when every `iota` is its user's SINR.
pub fn eval_f_iota(
    ch: &ChannelSet,
    st: &TransceiverState,
    aux: &AuxVars,
    alpha_dl: f64,
    structural: bool,
) -> Result<f64> {
    let eff = EffectiveChannels::compute(ch, &st.scattering, structural)?;
    Ok(eval_f_iota_with(ch, &eff, st, aux, alpha_dl))
}

/// Quadratic-transform surrogate, in bit/s/Hz. Equals [`eval_f_iota`] when
/// every `tau` is at its closed-form update, and is concave in `tau`.
pub fn eval_f_tau(
    ch: &ChannelSet,
    st: &TransceiverState,
    aux: &AuxVars,
    alpha_dl: f64,
    structural: bool,
) -> Result<f64> {
    let eff = EffectiveChannels::compute(ch, &st.scattering, structural)?;
    Ok(eval_f_tau_with(ch, &eff, st, aux, alpha_dl))
}
