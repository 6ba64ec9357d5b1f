//! PQRST — an ECG delineation toolkit.
//!
//! Detects P, QRS, and T wave boundaries in multi-lead ECG records with a
//! compact convolutional network over an interval grid: the record is split
//! into non-overlapping intervals and the model predicts, per interval and
//! wave class, a presence confidence plus start/end fractions. Decoded
//! fragments are merged and length-filtered into segments. A self-training
//! stage pseudolabels an unlabeled corpus, keeps the most confidently
//! delineated records per wave class, and retrains from scratch before
//! fine-tuning on the labeled set. Evaluation matches predicted fiducial
//! points to ground truth inside a window tolerance and reports Se / PPV /
//! F1 and signed error statistics per point kind.
//!
//! The `pqrst` binary exposes the full pipeline:
//! `synth`, `preprocess`, `train`, `predict`, `pseudolabel`, `selftrain`,
//! `eval`, and `plot`.

pub mod config;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod grid_codec;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod plot;
pub mod selftrain;
pub mod signal_io;

pub use error::{Error, Result};
