//! Vortex identification on gridded flow data: synthetic flows, finite
//! difference operators, Q / Omega / IVD criteria, sample extraction and a
//! small MLP trainer for segmentation and viscosity classification.

pub mod cli;
pub mod criteria;
pub mod dataset;
pub mod error;
pub mod flowgrid;
pub mod metrics;
pub mod nn;
pub mod numerics;
pub mod synth;

pub use error::{Error, Result};
pub use flowgrid::{Dims, FlowGrid, FlowParams, LabelVolume, ScalarField};
