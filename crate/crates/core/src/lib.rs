//! Desk-scale reproduction of the measurement and analysis chain of a large
//! modular MEMS microphone array.
//!
//! The crate is organised along the chain a measurement follows:
//!
//! * [`geometry`]: panel/PCB layout generation, Fermat-spiral targets and
//!   sub-array sampling, observation angles.
//! * [`propagation`]: convected free-field Green's function, atmospheric
//!   absorption and planar shear-layer refraction.
//! * [`acquisition`]: delta-sigma PDM encoding, the four-stage decimator and
//!   the packet codec used between FPGAs and the capture server.
//! * [`synthesis`]: ground-truth time series and exact cross-spectral matrices
//!   for configured source scenes.
//! * [`spectral`]: Welch CSM estimation, CSM statistics and band integration.
//! * [`beamforming`]: focus grids, level-true steering vectors, conventional
//!   beamforming with diagonal removal and CLEAN-SC.
//! * [`analysis`]: region integration, directivity and far-field projection.
//!
//! [`io`] and [`config`] hold the file formats and the pipeline configuration
//! used by the `micarray` executable.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod analysis;
pub mod beamforming;
pub mod config;
pub mod error;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod propagation;
pub mod spectral;
pub mod synthesis;

pub use error::{Error, Result};

/// Cartesian 3-vector in the tunnel frame (m): x downstream, y from the
/// model toward the array, z vertical.
pub type Vec3 = nalgebra::Vector3<f64>;

/// Reference pressure for sound pressure levels (Pa).
pub const P_REF: f64 = 2.0e-5;

/// Level floor (dB) reported in place of `-inf` for zero power.
pub const DB_FLOOR: f64 = -300.0;

/// Converts a power quantity referenced to `P_REF²` into dB, clamped to [`DB_FLOOR`].
pub fn power_db(power: f64) -> f64 {
    if power > 0.0 {
        (10.0 * (power / (P_REF * P_REF)).log10()).max(DB_FLOOR)
    } else {
        DB_FLOOR
    }
}

/// Inverse of [`power_db`].
pub fn db_power(level: f64) -> f64 {
    P_REF * P_REF * 10f64.powf(level / 10.0)
}
