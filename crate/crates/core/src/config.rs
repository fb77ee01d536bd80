//! Scenario, surface and solver configuration.
//!
//! Every field has a default matching the reference evaluation environment:
//! a base station 30 m from the surface, users on a 5 m ring around it,
//! -30 dB pathloss at 1 m with exponent 2.2 (reflected) / 5 (direct),
//! Rician factor 10 on reflected links, Rayleigh direct links, 20 dBm power
//! budgets, -80 dBm noise and -110 dB residual self-interference.
//!
//! Configs load from a single TOML file with `[scenario]`, `[ris]`,
//! `[solver]` and `[pdd]` tables; omitted keys keep their defaults.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a decibel quantity to linear scale (also dBm -> mW).
///
/// `db_to_linear(20.0) == 100.0`, `db_to_linear(-80.0) == 1e-8`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Physical scene and link-budget description.
///
/// Angles are scene angles in degrees measured at the surface (broadside at
/// 90°); the BS sits `d_bs_ris_m` from the surface at `angle_bs_deg`, users
/// sit `d_ris_user_m` away at their listed angles.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Base-station antenna count N.
    pub n_bs_antennas: usize,
    /// RIS element count M.
    pub n_ris_elements: usize,
    /// Downlink user count K.
    pub n_dl_users: usize,
    /// Uplink user count I (0 switches the uplink off).
    pub n_ul_users: usize,
    /// BS angle seen from the surface, degrees.
    pub angle_bs_deg: f64,
    /// Downlink user angles, degrees; length K.
    pub angles_dl_deg: Vec<f64>,
    /// Uplink user angles, degrees; length I.
    pub angles_ul_deg: Vec<f64>,
    /// Departure angle of the BS-side line-of-sight at the BS array;
    /// `None` reuses `angle_bs_deg`.
    pub angle_bs_departure_deg: Option<f64>,
    /// BS-RIS distance, metres.
    pub d_bs_ris_m: f64,
    /// RIS-user ring radius, metres.
    pub d_ris_user_m: f64,
    /// Reference pathloss at 1 m, dB (negative).
    pub pathloss_ref_db: f64,
    /// Pathloss exponent of RIS-assisted (reflected) links.
    pub exp_reflected: f64,
    /// Pathloss exponent of direct links.
    pub exp_direct: f64,
    /// Rician factor of reflected links (linear).
    pub rician_k_reflected: f64,
    /// Rician factor of direct links (linear); 0 = Rayleigh.
    pub rician_k_direct: f64,
    /// Downlink power budget, dBm.
    pub p_dl_dbm: f64,
    /// Per-user uplink transmit power, dBm.
    pub p_ul_dbm: f64,
    /// Noise power, dBm.
    pub noise_dbm: f64,
    /// Residual self-interference power gain, dB (per entry of the SI matrix).
    pub si_power_db: f64,
    /// Downlink weight alpha in [0, 1]; the uplink weight is 1 - alpha.
    pub alpha_dl: f64,
    /// Zeroes every direct link (surface-only propagation).
    pub direct_links_blocked: bool,
    /// Keep the physical `Phi - I` structural-scattering term in every
    /// surface-assisted path; `false` replaces it by `Phi` alone.
    pub structural_scattering: bool,
    /// Master seed; all randomness (channels and solver init) derives from it.
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_bs_antennas: 1,
            n_ris_elements: 16,
            n_dl_users: 1,
            n_ul_users: 1,
            angle_bs_deg: 30.0,
            angles_dl_deg: vec![90.0],
            angles_ul_deg: vec![60.0],
            angle_bs_departure_deg: None,
            d_bs_ris_m: 30.0,
            d_ris_user_m: 5.0,
            pathloss_ref_db: -30.0,
            exp_reflected: 2.2,
            exp_direct: 5.0,
            rician_k_reflected: 10.0,
            rician_k_direct: 0.0,
            p_dl_dbm: 20.0,
            p_ul_dbm: 20.0,
            noise_dbm: -80.0,
            si_power_db: -110.0,
            alpha_dl: 0.5,
            direct_links_blocked: false,
            structural_scattering: true,
            rng_seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Checks counts, angle ranges, distances and weight bounds.
    pub fn validate(&self) -> Result<()> {
        if self.n_bs_antennas == 0 || self.n_ris_elements == 0 || self.n_dl_users == 0 {
            return Err(Error::InvalidArgument(
                "n_bs_antennas, n_ris_elements and n_dl_users must be >= 1".into(),
            ));
        }
        if self.angles_dl_deg.len() != self.n_dl_users {
            return Err(Error::InvalidArgument(format!(
                "angles_dl_deg has {} entries, expected K = {}",
                self.angles_dl_deg.len(),
                self.n_dl_users
            )));
        }
        if self.angles_ul_deg.len() != self.n_ul_users {
            return Err(Error::InvalidArgument(format!(
                "angles_ul_deg has {} entries, expected I = {}",
                self.angles_ul_deg.len(),
                self.n_ul_users
            )));
        }
        let mut angles: Vec<f64> = vec![self.angle_bs_deg];
        angles.extend_from_slice(&self.angles_dl_deg);
        angles.extend_from_slice(&self.angles_ul_deg);
        if let Some(dep) = self.angle_bs_departure_deg {
            angles.push(dep);
        }
        if angles.iter().any(|a| !(0.0..=180.0).contains(a) || !a.is_finite()) {
            return Err(Error::InvalidArgument(
                "all angles must lie in [0, 180] degrees".into(),
            ));
        }
        if !(self.d_bs_ris_m > 0.0) || !(self.d_ris_user_m > 0.0) {
            return Err(Error::InvalidArgument("distances must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha_dl) {
            return Err(Error::InvalidArgument("alpha_dl must lie in [0, 1]".into()));
        }
        if self.rician_k_reflected < 0.0 || self.rician_k_direct < 0.0 {
            return Err(Error::InvalidArgument("Rician factors must be >= 0".into()));
        }
        Ok(())
    }

    /// Departure angle of the BS line-of-sight (defaults to the BS angle).
    pub fn bs_departure_deg(&self) -> f64 {
        self.angle_bs_departure_deg.unwrap_or(self.angle_bs_deg)
    }

    /// Downlink power budget in linear mW.
    pub fn p_dl_linear(&self) -> f64 {
        db_to_linear(self.p_dl_dbm)
    }

    /// Uplink per-user power in linear mW.
    pub fn p_ul_linear(&self) -> f64 {
        db_to_linear(self.p_ul_dbm)
    }

    /// Noise power in linear mW.
    pub fn noise_linear(&self) -> f64 {
        db_to_linear(self.noise_dbm)
    }
}

/// Scattering-matrix architecture of the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RisArchitecture {
    /// Diagonal (conventional) surface: every element reflects independently
    /// with a unit-modulus coefficient.
    Single,
    /// Block-diagonal with groups of `group_size` interconnected elements.
    Group,
    /// One fully-connected group spanning all M elements.
    Full,
}

/// Surface architecture plus circuit reciprocity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RisConfig {
    pub architecture: RisArchitecture,
    /// Group size for [`RisArchitecture::Group`]; ignored otherwise.
    pub group_size: usize,
    /// Reciprocal circuits constrain the scattering matrix to be symmetric.
    pub reciprocal: bool,
}

impl Default for RisConfig {
    fn default() -> Self {
        RisConfig { architecture: RisArchitecture::Full, group_size: 1, reciprocal: false }
    }
}

impl RisConfig {
    pub fn single() -> Self {
        RisConfig { architecture: RisArchitecture::Single, group_size: 1, reciprocal: false }
    }

    pub fn full(reciprocal: bool) -> Self {
        RisConfig { architecture: RisArchitecture::Full, group_size: 1, reciprocal }
    }

    pub fn group(group_size: usize, reciprocal: bool) -> Self {
        RisConfig { architecture: RisArchitecture::Group, group_size, reciprocal }
    }

    /// Effective group size M_g for a surface with `m` elements.
    pub fn group_size_for(&self, m: usize) -> usize {
        match self.architecture {
            RisArchitecture::Single => 1,
            RisArchitecture::Group => self.group_size,
            RisArchitecture::Full => m,
        }
    }

    /// Validates divisibility of the element count by the group size.
    pub fn validate(&self, m: usize) -> Result<()> {
        let m_g = self.group_size_for(m);
        if m_g == 0 || m % m_g != 0 {
            return Err(Error::InvalidArgument(format!(
                "group size {m_g} must divide the element count {m}"
            )));
        }
        Ok(())
    }
}

/// Outer block-coordinate solver controls.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Iteration cap of the block-coordinate loop.
    pub max_iters: usize,
    /// Relative objective-change threshold declaring convergence.
    pub rel_tol: f64,
    /// Complementary-slackness tolerance of the power bisection.
    pub bisection_tol: f64,
    /// Record the per-iteration objective trace in the result.
    pub record_trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iters: 100, rel_tol: 1e-4, bisection_tol: 1e-10, record_trace: true }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("solver max_iters must be >= 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidArgument("solver rel_tol must be >= 0".into()));
        }
        if !(self.bisection_tol > 0.0) {
            return Err(Error::InvalidArgument("solver bisection_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Penalty-dual-decomposition controls for the scattering update.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PddOptions {
    /// Initial penalty rho.
    pub rho_init: f64,
    /// Penalty shrink factor c in (0, 1).
    pub shrink: f64,
    /// Relative stall threshold of the inner alternation.
    pub inner_tol: f64,
    /// Inner-iteration cap per outer step.
    pub inner_max: usize,
    /// Target infinity-norm of the Phi - Psi split at exit.
    pub outer_eps: f64,
    /// Outer-iteration cap.
    pub outer_max: usize,
    /// Initial dual-update threshold epsilon.
    pub eps_init: f64,
}

impl Default for PddOptions {
    fn default() -> Self {
        PddOptions {
            rho_init: 1.0,
            shrink: 0.8,
            inner_tol: 1e-5,
            inner_max: 50,
            outer_eps: 1e-4,
            outer_max: 100,
            eps_init: 0.1,
        }
    }
}

impl PddOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidArgument("pdd shrink factor must lie in (0, 1)".into()));
        }
        if !(self.rho_init > 0.0) {
            return Err(Error::InvalidArgument("pdd rho_init must be positive".into()));
        }
        Ok(())
    }
}

/// Aggregate of every table a config file may carry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: ScenarioConfig,
    pub ris: RisConfig,
    pub solver: SolverOptions,
    pub pdd: PddOptions,
    pub experiment: crate::experiment::ExperimentOverrides,
}

impl FileConfig {
    /// Parses a TOML config file and validates the scenario table.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Parses TOML text and validates the scenario table.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: FileConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.scenario.validate()?;
        cfg.ris.validate(cfg.scenario.n_ris_elements)?;
        cfg.solver.validate()?;
        cfg.pdd.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn db_conversions_match_reference_points() {
        assert_relative_eq!(db_to_linear(20.0), 100.0, max_relative = 1e-12);
        assert_relative_eq!(db_to_linear(-80.0), 1e-8, max_relative = 1e-12);
        assert_relative_eq!(db_to_linear(0.0), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn default_scenario_validates() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn angle_and_weight_bounds_are_enforced() {
        let mut cfg = ScenarioConfig::default();
        cfg.alpha_dl = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::default();
        cfg.angles_dl_deg = vec![200.0];
        assert!(cfg.validate().is_err());

        let mut cfg = ScenarioConfig::default();
        cfg.angles_ul_deg = vec![10.0, 20.0]; // length != I
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn group_size_must_divide_elements() {
        assert!(RisConfig::group(3, false).validate(16).is_err());
        assert!(RisConfig::group(4, true).validate(16).is_ok());
        assert_eq!(RisConfig::single().group_size_for(16), 1);
        assert_eq!(RisConfig::full(false).group_size_for(16), 16);
    }

    #[test]
    fn toml_roundtrip_keeps_defaults_for_omitted_keys() {
        let cfg = FileConfig::from_toml(
            r#"
            [scenario]
            n_ris_elements = 8
            angles_ul_deg = [60.0]

            [ris]
            architecture = "group"
            group_size = 4
            "#,
        )
        .unwrap();
        assert_eq!(cfg.scenario.n_ris_elements, 8);
        assert_eq!(cfg.scenario.n_bs_antennas, 1);
        assert_relative_eq!(cfg.scenario.pathloss_ref_db, -30.0);
        assert_eq!(cfg.ris.group_size_for(8), 4);
        assert_relative_eq!(cfg.pdd.shrink, 0.8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::from_toml("[scenario]\nnot_a_key = 3\n").is_err());
    }
}
