//! Simulation and optimization of a full-duplex link assisted by a
//! beyond-diagonal reconfigurable intelligent surface (BD-RIS).
//!
//! A base station with `N` antennas serves `K` downlink users while `I` uplink
//! users transmit to it on the same band. An `M`-element RIS with a
//! block-diagonal unitary scattering matrix (block size `M_g`) reshapes every
//! propagation path: the BS-RIS-user cascades, the uplink-to-downlink user
//! cross links, and the BS self-interference loop through the surface.
//!
//! The crate provides
//! * a seeded geometric channel generator ([`channel`]),
//! * rate / SINR / beampattern metrics ([`metrics`]),
//! * closed-form received-power bounds separating reciprocal from
//!   non-reciprocal surfaces ([`reciprocity`]),
//! * a block-coordinate ascent solver for the weighted downlink/uplink
//!   sum-rate built on fractional-programming surrogates ([`fp`], [`bcd`])
//!   with a penalty-dual-decomposition step for the unitary scattering blocks
//!   ([`pdd`]),
//! * reproducible experiment sweeps with CSV/JSON emission ([`experiment`]).
//!
//! All powers are carried internally in linear milliwatts; rates are reported
//! in bit/s/Hz. Randomness is fully determined by a single `u64` seed (see
//! [`channel::generate_channel_set`] for the stream layout).

pub mod bcd;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fp;
pub mod linalg;
pub mod metrics;
pub mod pdd;
pub mod reciprocity;

pub use config::{FileConfig, PddOptions, RisArchitecture, RisConfig, ScenarioConfig, SolverOptions};
pub use error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type Cx = num_complex::Complex64;
/// Dense complex matrix.
pub type CMat = nalgebra::DMatrix<Cx>;
/// Dense complex column vector.
pub type CVec = nalgebra::DVector<Cx>;
