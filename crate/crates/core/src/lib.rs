//! Two-lead ECG beat classification: record ingestion, preprocessing, a
//! wavelet/Fourier feature embedding and a deep-narrow transformer trained
//! with hand-written backpropagation.

pub mod config;
pub mod eval;
pub mod formats;
pub mod ingest;
pub mod lde;
pub mod linalg;
pub mod pipeline;
pub mod preprocess;
pub mod transformer;
