//! Hann-window STFT, HTK mel filterbank, log(1+x) compression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::EcgRecord;

/// STFT / mel frontend parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mel: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            n_fft: 128,
            hop: 50,
            n_mel: 48,
            f_min_hz: 0.5,
            f_max_hz: 250.0,
        }
    }
}

impl StftConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::invalid(format!(
                "hop {} must satisfy 0 < hop <= n_fft = {}",
                self.hop, self.n_fft
            )));
        }
        if self.n_mel == 0 {
            return Err(Error::invalid("n_mel must be at least 1"));
        }
        if !(self.f_min_hz >= 0.0 && self.f_min_hz < self.f_max_hz && self.f_max_hz <= fs / 2.0) {
            return Err(Error::invalid(format!(
                "mel band [{}, {}] invalid for fs = {fs}",
                self.f_min_hz, self.f_max_hz
            )));
        }
        Ok(())
    }

    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank on the HTK mel scale, peak weight 1.
///
/// Returns `n_mel` rows of `n_fft/2 + 1` weights plus the filter center
/// frequencies in Hz.
pub fn mel_filterbank(config: &StftConfig, fs: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n_bins = config.n_fft / 2 + 1;
    let m_lo = hz_to_mel(config.f_min_hz);
    let m_hi = hz_to_mel(config.f_max_hz);
    let edges: Vec<f64> = (0..config.n_mel + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (config.n_mel + 1) as f64))
        .collect();

    let mut bank = vec![vec![0.0; n_bins]; config.n_mel];
    for (m, row) in bank.iter_mut().enumerate() {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * fs / config.n_fft as f64;
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            *w = rising.min(falling).max(0.0);
        }
    }
    let centers = edges[1..=config.n_mel].to_vec();
    (bank, centers)
}

/// Log-mel spectrogram of one lead: `n_mel x ceil(n / hop)`.
///
/// Frames start at multiples of `hop`; the tail frames are zero-padded.
/// Power spectra pass through the mel filterbank and log(1+x), so a zero
/// signal maps to an all-zero matrix.
pub fn mel_spectrogram(
    signal: &[f32],
    fs: f64,
    config: &StftConfig,
) -> Result<Vec<Vec<f64>>> {
    config.validate(fs)?;
    let n = signal.len();
    if n < config.n_fft {
        return Err(Error::invalid(format!(
            "signal of {n} samples shorter than n_fft = {}",
            config.n_fft
        )));
    }
    let n_frames = config.n_frames(n);
    let n_bins = config.n_fft / 2 + 1;

    // Periodic Hann window.
    let window: Vec<f64> = (0..config.n_fft)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / config.n_fft as f64).cos()))
        .collect();

    // DFT twiddle tables for the real bins.
    let mut cos_table = vec![0.0f64; n_bins * config.n_fft];
    let mut sin_table = vec![0.0f64; n_bins * config.n_fft];
    for k in 0..n_bins {
        for i in 0..config.n_fft {
            let phase = std::f64::consts::TAU * k as f64 * i as f64 / config.n_fft as f64;
            cos_table[k * config.n_fft + i] = phase.cos();
            sin_table[k * config.n_fft + i] = phase.sin();
        }
    }

    let (bank, _) = mel_filterbank(config, fs);
    let mut out = vec![vec![0.0f64; n_frames]; config.n_mel];
    let mut frame = vec![0.0f64; config.n_fft];
    let mut power = vec![0.0f64; n_bins];
    for t in 0..n_frames {
        let start = t * config.hop;
        for (i, w) in frame.iter_mut().enumerate() {
            let idx = start + i;
            *w = if idx < n { signal[idx] as f64 * window[i] } else { 0.0 };
        }
        for (k, p) in power.iter_mut().enumerate() {
            let cos_row = &cos_table[k * config.n_fft..(k + 1) * config.n_fft];
            let sin_row = &sin_table[k * config.n_fft..(k + 1) * config.n_fft];
            let mut re = 0.0;
            let mut im = 0.0;
            for i in 0..config.n_fft {
                re += frame[i] * cos_row[i];
                im -= frame[i] * sin_row[i];
            }
            *p = re * re + im * im;
        }
        for (m, row) in bank.iter().enumerate() {
            let mut acc = 0.0;
            for (k, &w) in row.iter().enumerate() {
                if w > 0.0 {
                    acc += w * power[k];
                }
            }
            out[m][t] = acc.ln_1p();
        }
    }
    Ok(out)
}

/// Model input: log-mel energies for every lead, `leads x mel x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub n_leads: usize,
    pub n_mel: usize,
    pub n_frames: usize,
    /// Lead-major, then mel row, then frame.
    pub data: Vec<f64>,
}

impl FeatureTensor {
    pub fn at(&self, lead: usize, mel: usize, frame: usize) -> f64 {
        self.data[(lead * self.n_mel + mel) * self.n_frames + frame]
    }
}

/// Computes the feature tensor of a (preprocessed) record.
pub fn featurize(record: &EcgRecord, config: &StftConfig) -> Result<FeatureTensor> {
    let fs = record.sampling_rate_hz as f64;
    let n_frames = config.n_frames(record.n_samples());
    let mut data = Vec::with_capacity(record.n_leads() * config.n_mel * n_frames);
    for row in &record.samples {
        let mel = mel_spectrogram(row, fs, config)?;
        for mel_row in &mel {
            data.extend_from_slice(mel_row);
        }
    }
    Ok(FeatureTensor {
        n_leads: record.n_leads(),
        n_mel: config.n_mel,
        n_frames,
        data,
    })
}
