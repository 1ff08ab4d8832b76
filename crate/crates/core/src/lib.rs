//! Contrastive forward modeling (CFM) for deformable-object manipulation.
//!
//! The crate bundles everything needed to learn a latent visual dynamics
//! model from random interaction data and to plan with it:
//!
//! * [`nn`]: tensors, reverse-mode autodiff, convolution layers, Adam.
//! * [`sim`]: pointmass, rope and cloth simulators with top-down rendering.
//! * [`dataset`]: random-policy collection and the `CFMD` file format.
//! * [`models`]: encoder, latent forward models, InfoNCE and baseline
//!   objectives, training, and the `CFMC` checkpoint format.
//! * [`planner`]: one-step sampling MPC in latent space.
//! * [`eval`]: goals, metrics, episode runner and benchmark tables.

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod models;
pub mod nn;
pub mod planner;
pub mod rng;
pub mod sim;

pub use error::{Error, FormatError, Result};
