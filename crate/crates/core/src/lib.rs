//! Symbol-level precoding (SLP) for the downlink multiuser MISO
//! power-minimisation problem under DPCIR constructive-interference constraints.
//!
//! - [`constellation`]: M-PSK points and their DPCIR normal matrices.
//! - [`channel`]: CN(0, I) channels, real-valued lifting, pseudo-inverse.
//! - [`nnls`]: active-set non-negative least squares and an enumeration oracle.
//! - [`precoders`]: ZFBF, closed-form sub-optimal SLP, optimal SLP, KKT checks.
//! - [`harness`]: seeded Monte-Carlo power, accuracy, timing and SER experiments.
//! - [`cli`]: the `slp` command-line front end.

pub mod channel;
pub mod cli;
pub mod config;
pub mod constellation;
pub mod error;
pub mod harness;
pub mod nnls;
pub mod output;
pub mod precoders;
pub mod verify;

pub use channel::{lift_real, pseudo_inverse, sample_channel, ChannelRealization};
pub use config::ScenarioConfig;
pub use constellation::Constellation;
pub use error::{Result, SlpError};
pub use nnls::{nnls_oracle, nnls_solve, NnlsProblem, NnlsSolution, NnlsStatus};
pub use precoders::{
    active_set_accuracy, cf_precode, cf_slp, opt_precode, opt_slp, verify_kkt, zfbf, KktResidual, PrecodeResult, Scheme, SlotProblem,
};
