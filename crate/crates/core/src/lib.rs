//! Design and verification toolkit for energy-efficient transmission
//! policies in wireless networked control systems.
//!
//! A plant and a controller close their loop over a lossy wireless link.
//! Transmissions follow a threshold policy: wait at least `n` steps since
//! the last successful delivery, require the measured channel gain to be
//! at least `h̄`, then transmit with either a constant power or a power
//! inversely proportional to the gain. The crate provides
//!
//! * the emulated closed-loop step maps ([`dynamics`]),
//! * Lyapunov decay certificates and their verification ([`lyapunov`]),
//! * finite channel models and packet-success functions ([`channel`]),
//! * the guaranteed decay rate `β(n, η)` and feasibility sets ([`stability`]),
//! * stationary clock laws and average-power formulas ([`cost`]),
//! * policy optimizers for the tractable sub-cases ([`optimizer`]),
//! * a deterministic Monte-Carlo closed-loop simulator ([`simulator`]).

pub mod channel;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod lyapunov;
pub mod optimizer;
pub mod rng;
pub mod simulator;
pub mod stability;

pub use error::{Error, Result};
