//! Radar micro-Doppler simulation of rotor-blade drones and the classical /
//! hybrid quantum networks that detect and classify them.
//!
//! Pipeline: [`signal`] synthesizes Martin–Mulgrew returns, [`spectrogram`]
//! turns them into two-channel STFT images, [`dataset`] builds labelled
//! corpora, [`models`] assembles the CNN and HQNN on top of [`autodiff`],
//! [`layers`] and [`vqc`], [`training`] fits them and [`evaluation`]
//! scores them.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod layers;
pub mod models;
pub mod pipeline;
mod linalg;
pub mod signal;
pub mod spectrogram;
pub mod svg;
pub mod training;
pub mod vqc;

pub use error::{Error, Result};
