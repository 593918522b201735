//! Unsupervised image segmentation with Gaussian mixtures.
//!
//! The crate implements a ladder of four closely related segmentation
//! methods over multi-channel images with an optional region of interest:
//!
//! * a classical Gaussian mixture fit by EM ([`gmm`]),
//! * a spatially variant mixture with per-pixel class proportions
//!   ([`svgmm`]),
//! * hybrids of both in which a small convolutional network replaces the
//!   E-step and is trained by gradient descent on the mixture likelihood
//!   ([`deep`]), including multi-image training and reuse of the trained
//!   network on unseen images,
//! * plus the supporting pieces: a from-scratch reverse-mode network
//!   ([`net`]), overlap metrics ([`eval`]), a synthetic data generator
//!   ([`synth`]), tensor/manifest file formats ([`io`]) and a command-line
//!   front end ([`cli`]).
//!
//! Everything is deterministic: the same seed produces the same bytes on
//! every run. See the crate examples for end-to-end walkthroughs.

pub mod cli;
pub mod deep;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod image;
pub mod io;
pub mod net;
pub mod svgmm;
pub mod synth;

pub use error::{Error, Result};
