//! LPV state-space surrogate with a neural scheduling map.

mod io;
mod lpv;
mod net;
mod params;

pub use io::{ModelDocument, ModelFile};
pub use lpv::{Dims, LpvSsModel, SimOptions, SystemMatrices, Trajectory, DEFAULT_DIVERGENCE_BOUND};
pub(crate) use lpv::{check_divergence, StepBuffers};
pub use net::{Activation, Layer, NetCache, NetScratch, SchedulingNet};
pub use params::ParamLayout;

#[cfg(test)]
mod tests;
