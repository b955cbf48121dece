//! Breathing-motion deformation models estimated from k-space-undersampled
//! volumes and applied to a prior high-resolution volume.
//!
//! The pipeline: simulate low-resolution phases ([`kspace`]), register them
//! with a symmetric diffeomorphic cross-correlation optimiser
//! ([`registration`]), warp the high-resolution first phase with the result
//! ([`warp`]) and score fields and images ([`metrics`]).

pub mod error;
pub mod export;
pub mod filter;
pub mod interp;
pub mod io;
pub mod kspace;
pub mod metrics;
mod par;
pub mod phantom;
pub mod pipeline;
pub mod registration;
pub mod volume;
pub mod warp;

pub use error::{Error, Result};
pub use interp::{resample_to_grid, sample, Interpolation};
pub use registration::{register, RegistrationParams, RegistrationResult};
pub use volume::{Grid3, Mask3, VectorField3, Volume3};
pub use warp::{apply_deformation, jacobian_det};
