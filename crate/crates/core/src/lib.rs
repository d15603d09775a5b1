//! Error-aware video frame interpolation.
//!
//! Optical flow between two frames predicts where interpolation will go wrong
//! ([`metrics`]); the frame is split into high/mid/low error regions which are
//! refined and synthesized one after another ([`ensemble`], [`warp`]).
//! [`losses`] and [`eval`] measure results per region, and [`synth`] produces
//! scenes with exact ground truth to check all of it against.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod types;
pub mod warp;

pub use error::{Error, Result};
pub use types::{elementwise_max, ErrorMap, ErrorMasks, FlowField, Frame, Mask, Region, TimeStep, VisibilityMap};
