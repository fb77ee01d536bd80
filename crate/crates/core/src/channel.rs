//! Geometric Rician channel generation and effective (surface-assisted)
//! channels.
//!
//! The scene puts the surface at the origin; the BS and every user lie on
//! rays given by their scene angles. Reflected links combine a steering-vector
//! line-of-sight with i.i.d. complex-Gaussian scattering under a Rician
//! factor; direct links default to Rayleigh fading with a steeper pathloss
//! exponent and can be blocked entirely.
//!
//! # Randomness
//!
//! Draws come from counter-based ChaCha streams keyed by the scenario seed.
//! Every channel block owns a stream, so regenerating with more users leaves
//! previously drawn blocks untouched:
//!
//! | stream id            | block                         |
//! |----------------------|-------------------------------|
//! | 0                    | BS-RIS matrix G               |
//! | 1                    | self-interference matrix      |
//! | 10000 + k            | RIS-DL user k                 |
//! | 20000 + i            | RIS-UL user i                 |
//! | 30000 + k            | direct BS-DL user k           |
//! | 40000 + i            | direct UL user i - BS         |
//! | 50000 + 1000 i + k   | direct UL user i - DL user k  |
//! | 60000                | solver initialization         |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::linalg::standard_complex;
use crate::{CMat, CVec, Cx};

const STREAM_BS_RIS: u64 = 0;
const STREAM_SI: u64 = 1;
const STREAM_RIS_DL: u64 = 10_000;
const STREAM_RIS_UL: u64 = 20_000;
const STREAM_DIR_DL: u64 = 30_000;
const STREAM_DIR_UL_BS: u64 = 40_000;
const STREAM_DIR_CROSS: u64 = 50_000;
pub(crate) const STREAM_SOLVER: u64 = 60_000;

/// ChaCha generator positioned on `stream` of the master `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Unit-norm uniform-linear-array steering vector with entries
/// `exp(j pi m cos theta) / sqrt(n)`, `m = 0..n-1`.
pub fn steering_vector(theta_deg: f64, n: usize) -> Result<CVec> {
    if n == 0 {
        return Err(Error::InvalidArgument("steering_vector: element count 0".into()));
    }
    if !theta_deg.is_finite() {
        return Err(Error::InvalidArgument("steering_vector: non-finite angle".into()));
    }
    let phase = std::f64::consts::PI * theta_deg.to_radians().cos();
    let scale = 1.0 / (n as f64).sqrt();
    Ok(CVec::from_fn(n, |m, _| Cx::from_polar(scale, phase * m as f64)))
}

/// Distance-law pathloss in linear scale:
/// `10^(ref_loss_db/10) * (d/1m)^(-exponent)`.
pub fn pathloss_linear(d_m: f64, exponent: f64, ref_loss_db: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::InvalidArgument(format!("pathloss distance must be > 0, got {d_m}")));
    }
    Ok(crate::config::db_to_linear(ref_loss_db) * d_m.powf(-exponent))
}

/// One Rician draw `sqrt(gain) (sqrt(k/(1+k)) los + sqrt(1/(1+k)) W)` with
/// `W` i.i.d. unit-variance circular complex Gaussian of the same shape.
pub fn rician_sample(
    los: &CMat,
    k_factor: f64,
    gain: f64,
    rng: &mut ChaCha8Rng,
) -> Result<CMat> {
    if k_factor < 0.0 || !k_factor.is_finite() {
        return Err(Error::InvalidArgument(format!("Rician factor must be >= 0, got {k_factor}")));
    }
    if gain < 0.0 || !gain.is_finite() {
        return Err(Error::InvalidArgument(format!("channel gain must be >= 0, got {gain}")));
    }
    let c_los = (gain * k_factor / (1.0 + k_factor)).sqrt();
    let c_nlos = (gain / (1.0 + k_factor)).sqrt();
    Ok(CMat::from_fn(los.nrows(), los.ncols(), |i, j| {
        los[(i, j)] * Cx::new(c_los, 0.0) + standard_complex(rng) * Cx::new(c_nlos, 0.0)
    }))
}

/// Every propagation block of one scenario draw, in linear-milliwatt scale.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// BS-RIS matrix `G`, M x N.
    pub bs_ris: CMat,
    /// RIS-side downlink user vectors, K entries of length M.
    pub ris_dl: Vec<CVec>,
    /// RIS-side uplink user vectors, I entries of length M.
    pub ris_ul: Vec<CVec>,
    /// Direct BS-DL-user vectors, K entries of length N (zero when blocked).
    pub dir_dl: Vec<CVec>,
    /// Direct UL-user-BS vectors, I entries of length N.
    pub dir_ul_bs: Vec<CVec>,
    /// Direct UL-user to DL-user scalars, I x K.
    pub dir_ul_dl: CMat,
    /// Residual self-interference matrix, N x N.
    pub si: CMat,
    /// Noise power, linear mW.
    pub noise_var_linear: f64,
    /// Per-user uplink transmit power, linear mW.
    pub p_ul_linear: f64,
}

impl ChannelSet {
    pub fn n_bs(&self) -> usize {
        self.bs_ris.ncols()
    }

    pub fn n_ris(&self) -> usize {
        self.bs_ris.nrows()
    }

    pub fn n_dl(&self) -> usize {
        self.ris_dl.len()
    }

    pub fn n_ul(&self) -> usize {
        self.ris_ul.len()
    }

    fn check_phi(&self, phi: &CMat) -> Result<()> {
        if phi.nrows() != self.n_ris() || phi.ncols() != self.n_ris() {
            return Err(Error::DimensionMismatch(format!(
                "scattering matrix is {}x{}, expected {m}x{m}",
                phi.nrows(),
                phi.ncols(),
                m = self.n_ris()
            )));
        }
        Ok(())
    }
}

/// Distance between polar points `(r1, th1)` and `(r2, th2)` (law of cosines).
fn polar_distance(r1: f64, th1_deg: f64, r2: f64, th2_deg: f64) -> f64 {
    let d = (th1_deg - th2_deg).to_radians();
    (r1 * r1 + r2 * r2 - 2.0 * r1 * r2 * d.cos()).sqrt()
}

/// Draws every channel block of `cfg` deterministically from its seed.
///
/// Line-of-sight structure: `G` uses the outer product of the arrival
/// steering vector at the surface and the departure steering vector at the
/// BS; each RIS-user vector uses the steering vector at the user's scene
/// angle. Direct links are Rayleigh under the default Rician factor 0; if a
/// positive factor is configured their line-of-sight is the BS-array steering
/// vector at the user's scene angle (unit phase for the scalar UL-DL links).
pub fn generate_channel_set(cfg: &ScenarioConfig) -> Result<ChannelSet> {
    cfg.validate()?;
    let m = cfg.n_ris_elements;
    let n = cfg.n_bs_antennas;
    let k_users = cfg.n_dl_users;
    let i_users = cfg.n_ul_users;
    let seed = cfg.rng_seed;

    let gain_bs_ris = pathloss_linear(cfg.d_bs_ris_m, cfg.exp_reflected, cfg.pathloss_ref_db)?;
    let gain_ris_user = pathloss_linear(cfg.d_ris_user_m, cfg.exp_reflected, cfg.pathloss_ref_db)?;

    let a_ris_bs = steering_vector(cfg.angle_bs_deg, m)?;
    let a_bs_dep = steering_vector(cfg.bs_departure_deg(), n)?;
    let los_g = &a_ris_bs * a_bs_dep.transpose();
    let bs_ris = rician_sample(
        &los_g,
        cfg.rician_k_reflected,
        gain_bs_ris,
        &mut stream_rng(seed, STREAM_BS_RIS),
    )?;

    let mut ris_dl = Vec::with_capacity(k_users);
    for (k, &theta) in cfg.angles_dl_deg.iter().enumerate() {
        let los = steering_vector(theta, m)?;
        let h = rician_sample(
            &CMat::from_column_slice(m, 1, los.as_slice()),
            cfg.rician_k_reflected,
            gain_ris_user,
            &mut stream_rng(seed, STREAM_RIS_DL + k as u64),
        )?;
        ris_dl.push(h.column(0).into_owned());
    }
    let mut ris_ul = Vec::with_capacity(i_users);
    for (i, &theta) in cfg.angles_ul_deg.iter().enumerate() {
        let los = steering_vector(theta, m)?;
        let h = rician_sample(
            &CMat::from_column_slice(m, 1, los.as_slice()),
            cfg.rician_k_reflected,
            gain_ris_user,
            &mut stream_rng(seed, STREAM_RIS_UL + i as u64),
        )?;
        ris_ul.push(h.column(0).into_owned());
    }

    let mut dir_dl = vec![CVec::zeros(n); k_users];
    let mut dir_ul_bs = vec![CVec::zeros(n); i_users];
    let mut dir_ul_dl = CMat::zeros(i_users, k_users);
    if !cfg.direct_links_blocked {
        for (k, &theta) in cfg.angles_dl_deg.iter().enumerate() {
            let d = polar_distance(cfg.d_bs_ris_m, cfg.angle_bs_deg, cfg.d_ris_user_m, theta);
            let gain = pathloss_linear(d, cfg.exp_direct, cfg.pathloss_ref_db)?;
            let los = steering_vector(theta, n)?;
            let h = rician_sample(
                &CMat::from_column_slice(n, 1, los.as_slice()),
                cfg.rician_k_direct,
                gain,
                &mut stream_rng(seed, STREAM_DIR_DL + k as u64),
            )?;
            dir_dl[k] = h.column(0).into_owned();
        }
        for (i, &theta) in cfg.angles_ul_deg.iter().enumerate() {
            let d = polar_distance(cfg.d_bs_ris_m, cfg.angle_bs_deg, cfg.d_ris_user_m, theta);
            let gain = pathloss_linear(d, cfg.exp_direct, cfg.pathloss_ref_db)?;
            let los = steering_vector(theta, n)?;
            let h = rician_sample(
                &CMat::from_column_slice(n, 1, los.as_slice()),
                cfg.rician_k_direct,
                gain,
                &mut stream_rng(seed, STREAM_DIR_UL_BS + i as u64),
            )?;
            dir_ul_bs[i] = h.column(0).into_owned();
        }
        let one = CMat::from_element(1, 1, Cx::new(1.0, 0.0));
        for (i, &theta_u) in cfg.angles_ul_deg.iter().enumerate() {
            for (k, &theta_d) in cfg.angles_dl_deg.iter().enumerate() {
                let d =
                    polar_distance(cfg.d_ris_user_m, theta_u, cfg.d_ris_user_m, theta_d);
                if d <= 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "UL user {i} and DL user {k} are co-located; \
                         block direct links or separate their angles"
                    )));
                }
                let gain = pathloss_linear(d, cfg.exp_direct, cfg.pathloss_ref_db)?;
                let h = rician_sample(
                    &one,
                    cfg.rician_k_direct,
                    gain,
                    &mut stream_rng(seed, STREAM_DIR_CROSS + 1_000 * i as u64 + k as u64),
                )?;
                dir_ul_dl[(i, k)] = h[(0, 0)];
            }
        }
    }

    let si_gain = crate::config::db_to_linear(cfg.si_power_db);
    let si = rician_sample(
        &CMat::zeros(n, n),
        0.0,
        si_gain,
        &mut stream_rng(seed, STREAM_SI),
    )?;

    Ok(ChannelSet {
        bs_ris,
        ris_dl,
        ris_ul,
        dir_dl,
        dir_ul_bs,
        dir_ul_dl,
        si,
        noise_var_linear: cfg.noise_linear(),
        p_ul_linear: cfg.p_ul_linear(),
    })
}

/// `Phi - I` when structural scattering is kept, otherwise `Phi` itself.
pub(crate) fn scatter_term(phi: &CMat, structural: bool) -> CMat {
    if structural {
        phi - CMat::identity(phi.nrows(), phi.ncols())
    } else {
        phi.clone()
    }
}

/// Effective downlink channel of user `k` as a length-N column `h`, acting on
/// a precoder through `h^T p`:
/// `h^T = dir_dl[k]^T + ris_dl[k]^T (Phi - I) G`.
pub fn effective_dl_channel(
    ch: &ChannelSet,
    phi: &CMat,
    k: usize,
    structural: bool,
) -> Result<CVec> {
    ch.check_phi(phi)?;
    let t = scatter_term(phi, structural);
    let row = ch.ris_dl[k].transpose() * t * &ch.bs_ris;
    Ok(&ch.dir_dl[k] + row.transpose())
}

/// Effective uplink channel of user `i` at the BS, length N:
/// `dir_ul_bs[i] + G^T (Phi - I) ris_ul[i]`.
pub fn effective_ul_channel(
    ch: &ChannelSet,
    phi: &CMat,
    i: usize,
    structural: bool,
) -> Result<CVec> {
    ch.check_phi(phi)?;
    let t = scatter_term(phi, structural);
    Ok(&ch.dir_ul_bs[i] + ch.bs_ris.transpose() * (t * &ch.ris_ul[i]))
}

/// Effective scalar path from UL user `i` into DL user `k`:
/// `dir_ul_dl[i][k] + ris_dl[k]^T (Phi - I) ris_ul[i]`.
pub fn effective_ul_to_dl(
    ch: &ChannelSet,
    phi: &CMat,
    i: usize,
    k: usize,
    structural: bool,
) -> Result<Cx> {
    ch.check_phi(phi)?;
    let t = scatter_term(phi, structural);
    let v = t * &ch.ris_ul[i];
    Ok(ch.dir_ul_dl[(i, k)] + ch.ris_dl[k].dot(&v))
}

/// BS transmit-to-receive loop through the surface, `G^T (Phi - I) G`, N x N.
/// Together with the static self-interference matrix this closes the
/// full-duplex loop at the BS.
pub fn loop_channel(ch: &ChannelSet, phi: &CMat, structural: bool) -> Result<CMat> {
    ch.check_phi(phi)?;
    let t = scatter_term(phi, structural);
    Ok(ch.bs_ris.transpose() * t * &ch.bs_ris)
}
