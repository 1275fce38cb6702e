//! Cardiac electromechanics on idealized ventricular geometries coupled to a
//! closed-loop lumped circulation.

pub mod activation;
pub mod circulation;
pub mod coupling;
pub mod electrophysiology;
pub mod error;
pub mod fem;
pub mod fibers;
pub mod geometry;
pub mod mechanics;
pub mod pipeline;
pub mod postio;
pub mod preflow;

pub use error::{Error, Result};

#[cfg(test)]
mod proptests;
