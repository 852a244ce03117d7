//! # ibflow
//!
//! Mutual-information estimation with trained neural critics, a dynamic
//! information-bottleneck objective over per-layer representations, and
//! spectral effective dimensionality of representations.
//!
//! | Module | What it provides |
//! |--------|------------------|
//! | [`linalg`] | sample matrices, centering, covariance, Jacobi eigenvalues |
//! | [`effdim`] | `d_eff = exp(M(p))` over normalized covariance spectra |
//! | [`nn`] | two-layer scalar critic with manual backprop and Adam |
//! | [`mi`] | Donsker–Varadhan bound, MINE training, exact discrete oracles |
//! | [`scheduler`] | the decaying tradeoff weight `alpha(t)` |
//! | [`flownib`] | per-layer critic pairs trained under the dynamic loss |
//! | [`infoplane`] | information-plane tables, layer offsets, phase labels |
//! | [`reps`] | synthetic data, toy sequence encoders, representation dumps |
//! | [`cli`] | the `ibflow` command-line front end |
//!
//! All information quantities are in nats.
//!
//! ```
//! use ibflow::effdim::{d_eff, SpectralMeasure};
//! use ibflow::linalg::Spectrum;
//!
//! let s = Spectrum::new(vec![3.0, 1.0]);
//! let d = d_eff(&s, SpectralMeasure::L2Participation).unwrap();
//! assert!((d - 1.6).abs() < 1e-12);
//! ```

pub mod cli;
pub mod effdim;
mod error;
pub mod flownib;
pub mod infoplane;
pub mod linalg;
pub mod mi;
pub mod nn;
pub mod reps;
mod rng;
pub mod scheduler;

pub use error::{Error, Result};
pub use linalg::SampleMatrix;
