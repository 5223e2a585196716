//! Joint learning of per-frame k-space acquisition trajectories and a
//! multi-frame reconstruction model for dynamic MRI.
//!
//! The pipeline simulates acquisition with a non-uniform Fourier transform
//! evaluated on learnable trajectories, regrids with the adjoint transform and
//! reconstructs all frames of a sequence at once. Trajectories are kept
//! physically realizable by projecting them onto the set of curves with
//! bounded speed and acceleration after every optimizer step.
//!
//! Module map:
//!
//! - [`trajectory`]: the trajectory tensor, radial and golden-angle initializers, file format
//! - [`kinematics`]: hardware limits, feasibility audit and projection
//! - [`nufft`]: direct and Kaiser-Bessel gridded NUFFT, adjoint, coordinate derivatives
//! - [`reconmodel`]: reference encoder-decoder with hand-written backpropagation
//! - [`pipeline`]: subsampling, regridding and reconstruction composed into one loss
//! - [`optimizer`]: Adam and step-decay schedules
//! - [`training`]: freezing schedule, reconstruction resets, run orchestration
//! - [`data`]: synthetic dynamic phantoms, augmentation, splits, sequence files
//! - [`metrics`]: PSNR, pixel-domain VIF and FSIM
//! - [`config`] and [`experiment`]: run configuration and the commands behind the CLI

pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kinematics;
pub mod metrics;
pub mod nufft;
pub mod optimizer;
pub mod pipeline;
pub mod reconmodel;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
