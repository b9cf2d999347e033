pub mod align;
pub mod assets;
pub mod camproj;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fitter;
pub mod grad;
pub mod gradcheck;
pub mod graphdeform;
pub mod kinematics;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod synthgen;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
