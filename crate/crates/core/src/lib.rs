//! Few-point shape completion toolkit.
//!
//! - [`geom`]: point clouds, spatial index, normals, sampling, PLY I/O
//! - [`descriptor`]: FPFH histograms and their entropy as an information measure
//! - [`metrics`]: Chamfer, earth mover's and minimum matching distances
//! - [`datagen`]: primitive meshes, surface sampling, depth-rendered partial views
//! - [`autodiff`]: dense reverse-mode tape with higher-order gradients
//! - [`model`]: the dual-branch encoder / two-stage revision / folding decoder network
//! - [`training`]: losses, WGAN-GP critics, optimizer loop and evaluation
//! - [`plot`]: SVG line charts
//! - [`cli`]: the `fsc` command surface

pub mod autodiff;
pub mod cli;
pub mod datagen;
pub mod descriptor;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod rng;
pub mod training;

pub use error::{FscError, Result};
