//! Preprocessing, augmentation, and the mel-spectrogram feature frontend.
//!
//! All signal math runs in f64 internally; signals enter and leave as f32
//! to match the record storage format.

mod filters;
mod mel;

pub use filters::{augment, augment_draws, bandpass, notch, AugmentConfig};
pub use mel::{featurize, mel_filterbank, mel_spectrogram, FeatureTensor, StftConfig};

use crate::error::{Error, Result};
use crate::signal_io::EcgRecord;

/// Band-limited resampling via a Blackman-windowed sinc interpolator.
///
/// Output length is `round(n * to_hz / from_hz)`; equal rates return the
/// input unchanged.
pub fn resample(signal: &[f32], from_hz: u32, to_hz: u32) -> Result<Vec<f32>> {
    if from_hz == 0 || to_hz == 0 {
        return Err(Error::invalid("sampling rates must be positive"));
    }
    if from_hz == to_hz {
        return Ok(signal.to_vec());
    }
    let n = signal.len();
    let out_len = (n as f64 * to_hz as f64 / from_hz as f64).round() as usize;
    let ratio = to_hz as f64 / from_hz as f64;
    // Cutoff at the smaller Nyquist, expressed relative to input Nyquist.
    let fc = 0.5 * ratio.min(1.0);
    // Sinc lobes kept per side; stretch the window when downsampling so the
    // lobe count is preserved.
    let half_width = (32.0 / (2.0 * fc)).ceil() as isize;

    let x: Vec<f64> = signal.iter().map(|&v| v as f64).collect();
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let t = m as f64 * from_hz as f64 / to_hz as f64;
        let i0 = t.floor() as isize;
        let mut acc = 0.0;
        for k in (i0 - half_width + 1)..=(i0 + half_width) {
            if k < 0 || k >= n as isize {
                continue;
            }
            let d = t - k as f64;
            acc += x[k as usize] * 2.0 * fc * sinc(2.0 * fc * d) * blackman(d / half_width as f64);
        }
        out.push(acc as f32);
    }
    Ok(out)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn blackman(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let pu = std::f64::consts::PI * u;
    0.42 + 0.5 * pu.cos() + 0.08 * (2.0 * pu).cos()
}

/// Result of z-score normalization; `degenerate` marks a constant input that
/// was mapped to all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Zscored {
    pub values: Vec<f32>,
    pub degenerate: bool,
}

/// Normalizes to zero mean and unit population standard deviation.
///
/// A constant signal has no scale; it maps to all zeros with the
/// `degenerate` flag set.
pub fn zscore(signal: &[f32]) -> Zscored {
    let n = signal.len();
    if n < 2 {
        return Zscored {
            values: vec![0.0; n],
            degenerate: true,
        };
    }
    let mean = signal.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = signal
        .iter()
        .map(|&v| {
            let d = v as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    if var == 0.0 {
        return Zscored {
            values: vec![0.0; n],
            degenerate: true,
        };
    }
    let std = var.sqrt();
    Zscored {
        values: signal
            .iter()
            .map(|&v| (((v as f64) - mean) / std) as f32)
            .collect(),
        degenerate: false,
    }
}

/// Resamples a record to `target_hz` and z-scores each lead independently.
pub fn preprocess_record(record: &EcgRecord, target_hz: u32) -> Result<EcgRecord> {
    let mut leads = Vec::with_capacity(record.n_leads());
    for row in &record.samples {
        let resampled = resample(row, record.sampling_rate_hz, target_hz)?;
        leads.push(zscore(&resampled).values);
    }
    EcgRecord::new(
        record.id.clone(),
        target_hz,
        record.leads.clone(),
        leads,
        record.meta.clone(),
    )
}

#[cfg(test)]
pub(crate) fn sine(freq_hz: f64, fs: f64, n: usize, amplitude: f64) -> Vec<f32> {
    (0..n)
        .map(|i| (amplitude * (std::f64::consts::TAU * freq_hz * i as f64 / fs).sin()) as f32)
        .collect()
}

/// Least-squares amplitude of a tone at a known frequency (test oracle).
#[cfg(test)]
pub(crate) fn tone_amplitude(signal: &[f32], freq_hz: f64, fs: f64) -> f64 {
    let n = signal.len() as f64;
    let (mut c, mut s) = (0.0f64, 0.0f64);
    for (i, &v) in signal.iter().enumerate() {
        let phase = std::f64::consts::TAU * freq_hz * i as f64 / fs;
        c += v as f64 * phase.cos();
        s += v as f64 * phase.sin();
    }
    2.0 * (c * c + s * s).sqrt() / n
}
