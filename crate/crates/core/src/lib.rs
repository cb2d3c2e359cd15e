//! Virtual player for the one-dimensional mirror game.
//!
//! A nonlinear HKB oscillator drives the virtual player's end effector. Its
//! control input comes from an adaptive feedback tracker or from a receding
//! one-interval optimal controller that trades tracking against staying close
//! to a velocity signature.

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod baselines;
pub mod dynamics;
pub mod error;
pub mod integrate;
pub mod metrics;
pub mod optimal;
pub mod oracle;
pub mod perception;
pub mod session;
pub mod signature;
pub mod trace;

pub use adaptive::{AdaptiveConfig, AdaptiveController, AdaptiveGains};
pub use dynamics::{DampingForm, HkbParams, HkbState};
pub use error::{Result, VpError};
pub use integrate::Scheme;
pub use optimal::{OpcMode, OptimalController, OptimalWeights};
pub use perception::{Perception, ReferenceSample};
pub use session::{run_session, run_vp_vs_vp, Engine, Mode, PartnerSource, SessionConfig, SessionLog};
pub use signature::{Signature, SignatureTrack};
pub use trace::Trace;
