//! Click-through-rate prediction on behavioral logs.
//!
//! The crate covers the full path from raw interaction events to ranked
//! recommendations: next-day label construction, categorical feature encoding,
//! four deep CTR architectures (inner-product PNN, DeepFM, xDeepFM with a
//! compressed interaction network, and DIFM), Adam training, and AUC/RMSE
//! evaluation. All numerics run on a small reverse-mode autodiff engine in
//! [`autodiff`].

pub mod autodiff;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod metrics;
pub mod models;
pub mod report;
pub mod synth;
pub mod train;

pub use error::{CtrError, ExitCode};
