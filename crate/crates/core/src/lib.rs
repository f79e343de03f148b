//! Near-field channel estimation for extremely large aperture arrays under
//! partial blockage.
//!
//! The crate covers the spherical-wavefront signal model, synthetic scenes,
//! an Ising prior on per-antenna visibility, an alternating-optimization
//! estimator, parametric extraction of scatterer geometry and a Monte-Carlo
//! benchmark harness.

pub mod ao;
pub mod bench;
pub mod checks;
pub mod error;
pub mod extract;
pub mod geometry;
pub mod ising;
pub mod oracle;
pub mod stacking;
pub mod synth;
pub mod tensors;

pub use error::{Error, Result};
pub use geometry::{ArrayGeometry, OfdmConfig, PathGeometry, PathParams, C64};
pub use tensors::{ChannelTensor, Dims, SnSField, SteeringField};
