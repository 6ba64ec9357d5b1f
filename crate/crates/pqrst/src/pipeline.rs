//! Record-to-annotation inference path shared by prediction, evaluation,
//! and self-training.

use crate::dsp::{featurize, preprocess_record, FeatureTensor, StftConfig};
use crate::error::{Error, Result};
use crate::grid_codec::{decode_grid, postprocess, GridConfig, PredictionGrid};
use crate::model::{forward, ModelParams};
use crate::signal_io::{AnnotationSet, EcgRecord};

/// Resamples and z-scores a record, checks it fits the grid geometry, and
/// computes its feature tensor.
pub fn features_for_record(
    record: &EcgRecord,
    grid: &GridConfig,
    stft: &StftConfig,
    sample_rate_hz: u32,
) -> Result<FeatureTensor> {
    let processed = preprocess_record(record, sample_rate_hz)?;
    if processed.n_samples() != grid.record_len {
        return Err(Error::config(format!(
            "record {} has {} samples at {} Hz; the grid expects {}",
            processed.id,
            processed.n_samples(),
            sample_rate_hz,
            grid.record_len
        )));
    }
    featurize(&processed, stft)
}

/// Runs the model on one record and post-processes the decoded segments.
pub fn predict_record(
    params: &ModelParams,
    record: &EcgRecord,
    grid: &GridConfig,
    stft: &StftConfig,
    sample_rate_hz: u32,
) -> Result<(AnnotationSet, PredictionGrid)> {
    let features = features_for_record(record, grid, stft, sample_rate_hz)?;
    let prediction = forward(params, &features)?;
    let decoded = decode_grid(&prediction, grid)?;
    let annotations = postprocess(&record.id, decoded, grid)?;
    Ok((annotations, prediction))
}
