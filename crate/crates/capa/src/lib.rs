//! Continuous-aperture array (CAPA) toolkit: quadrature geometry, near-field
//! channels, radiation-operator SVD, multiuser beamforming, capacity regions,
//! and fading diversity-multiplexing analysis, with spatially discrete array
//! (SPDA) baselines throughout.

pub mod beamforming;
pub mod capacity;
pub mod channel;
pub mod error;
pub mod experiments;
pub mod fading;
pub mod geometry;
pub mod linalg;
pub mod operator;

pub use error::{Error, Result};
