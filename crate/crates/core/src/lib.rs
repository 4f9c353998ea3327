//! Glimpse-driven scene imagination.
//!
//! An agent looks at a scene through a sequence of small square glimpses,
//! imagines many complete scenes consistent with what it has seen, and puts
//! its next glimpse where the imagined scenes disagree the most. The model is
//! an unconditional VAE whose latent space is warped and unwarped by two
//! conditional block neural autoregressive flows driven by a recurrent summary
//! of the glimpses.
//!
//! Modules, bottom-up:
//! - [`diff`]: tensors, tape-based reverse-mode differentiation, finite-difference oracles
//! - [`flows`]: conditional BNAF layers with exact log-determinants
//! - [`vae`]: encoder/decoder, likelihoods and the five-term timestep objective
//! - [`agent`]: sensor, observation masks, recurrent features, imagination, fixation policies
//! - [`datasets`]: synthetic glyph scenes and IDX ingestion
//! - [`harness`]: training, evaluation, probe classifier, checkpoints, exports, CLI

pub mod agent;
pub mod datasets;
pub mod diff;
pub mod error;
pub mod flows;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod vae;

pub use error::{Error, Result};
