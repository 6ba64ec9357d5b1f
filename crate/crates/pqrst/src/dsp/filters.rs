//! Zero-phase bandpass and notch filtering plus the training-time
//! augmentation that applies each with a configured probability.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::EcgRecord;

/// Augmentation parameters; each filter fires independently with its
/// configured probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub bandpass_prob: f64,
    pub notch_prob: f64,
    pub bandpass_low_hz: f64,
    pub bandpass_high_hz: f64,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            bandpass_prob: 0.5,
            notch_prob: 0.5,
            bandpass_low_hz: 0.5,
            bandpass_high_hz: 40.0,
            notch_hz: 50.0,
            notch_q: 30.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        for (name, p) in [("bandpass_prob", self.bandpass_prob), ("notch_prob", self.notch_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.bandpass_low_hz > 0.0 && self.bandpass_low_hz < self.bandpass_high_hz) {
            return Err(Error::invalid("bandpass band must satisfy 0 < low < high"));
        }
        if self.bandpass_high_hz >= fs / 2.0 {
            return Err(Error::invalid(format!(
                "bandpass high {} Hz at or above Nyquist {}",
                self.bandpass_high_hz,
                fs / 2.0
            )));
        }
        if !(self.notch_hz > 0.0 && self.notch_hz < fs / 2.0) {
            return Err(Error::invalid("notch center must lie below Nyquist"));
        }
        if !(self.notch_q > 0.0) {
            return Err(Error::invalid("notch q must be positive"));
        }
        Ok(())
    }
}

/// Single biquad section, coefficients normalized so a0 = 1.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn lowpass(fs: f64, fc: f64, q: f64) -> Biquad {
        let w = std::f64::consts::TAU * fc / fs;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Biquad::normalize(
            (1.0 - c) / 2.0,
            1.0 - c,
            (1.0 - c) / 2.0,
            1.0 + alpha,
            -2.0 * c,
            1.0 - alpha,
        )
    }

    fn highpass(fs: f64, fc: f64, q: f64) -> Biquad {
        let w = std::f64::consts::TAU * fc / fs;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Biquad::normalize(
            (1.0 + c) / 2.0,
            -(1.0 + c),
            (1.0 + c) / 2.0,
            1.0 + alpha,
            -2.0 * c,
            1.0 - alpha,
        )
    }

    fn notch(fs: f64, fc: f64, q: f64) -> Biquad {
        let w = std::f64::consts::TAU * fc / fs;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Biquad::normalize(1.0, -2.0 * c, 1.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    fn normalize(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Biquad {
        Biquad {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: a1 / a0,
            a2: a2 / a0,
        }
    }

    /// Direct form II transposed, zero initial state.
    fn run(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let xin = *v;
            let y = self.b0 * xin + s1;
            s1 = self.b1 * xin - self.a1 * y + s2;
            s2 = self.b2 * xin - self.a2 * y;
            *v = y;
        }
    }
}

/// Forward-backward application of a biquad cascade with odd-reflection
/// padding, giving zero phase so fiducial points do not shift.
fn filtfilt(sections: &[Biquad], signal: &[f32], pad: usize) -> Vec<f32> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut x = Vec::with_capacity(n + 2 * pad);
    let first = signal[0] as f64;
    for i in (1..=pad).rev() {
        x.push(2.0 * first - signal[i] as f64);
    }
    x.extend(signal.iter().map(|&v| v as f64));
    let last = signal[n - 1] as f64;
    for i in 1..=pad {
        x.push(2.0 * last - signal[n - 1 - i] as f64);
    }

    for s in sections {
        s.run(&mut x);
    }
    x.reverse();
    for s in sections {
        s.run(&mut x);
    }
    x.reverse();

    x[pad..pad + n].iter().map(|&v| v as f32).collect()
}

/// Zero-phase Butterworth-style bandpass (2nd-order highpass + lowpass
/// sections applied forward and backward).
pub fn bandpass(signal: &[f32], fs: f64, low_hz: f64, high_hz: f64) -> Result<Vec<f32>> {
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::invalid(format!(
            "bandpass band [{low_hz}, {high_hz}] invalid for fs = {fs}"
        )));
    }
    let q = std::f64::consts::FRAC_1_SQRT_2;
    let sections = [Biquad::highpass(fs, low_hz, q), Biquad::lowpass(fs, high_hz, q)];
    // Settle roughly three time constants of the slowest corner.
    let pad = (3.0 * fs / low_hz).ceil() as usize;
    Ok(filtfilt(&sections, signal, pad))
}

/// Zero-phase notch at `center_hz` with quality factor `q`.
pub fn notch(signal: &[f32], fs: f64, center_hz: f64, q: f64) -> Result<Vec<f32>> {
    if !(center_hz > 0.0 && center_hz < fs / 2.0) {
        return Err(Error::invalid(format!(
            "notch center {center_hz} Hz invalid for fs = {fs}"
        )));
    }
    if !(q > 0.0) {
        return Err(Error::invalid("notch q must be positive"));
    }
    let sections = [Biquad::notch(fs, center_hz, q)];
    let pad = (3.0 * q * fs / center_hz).ceil() as usize;
    Ok(filtfilt(&sections, signal, pad))
}

/// Draws the two application decisions for one augmentation pass.
///
/// Both decisions are always drawn, so the random stream layout does not
/// depend on the probabilities earlier in the stream.
pub fn augment_draws(config: &AugmentConfig, rng: &mut ChaCha8Rng) -> (bool, bool) {
    let do_bandpass = rng.random_bool(config.bandpass_prob);
    let do_notch = rng.random_bool(config.notch_prob);
    (do_bandpass, do_notch)
}

/// Applies bandpass then notch to every lead, each with its configured
/// probability. Deterministic given the rng state.
pub fn augment(record: &EcgRecord, config: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<EcgRecord> {
    let fs = record.sampling_rate_hz as f64;
    config.validate(fs)?;
    let (do_bandpass, do_notch) = augment_draws(config, rng);
    if !do_bandpass && !do_notch {
        return Ok(record.clone());
    }
    let mut samples = Vec::with_capacity(record.n_leads());
    for row in &record.samples {
        let mut out = row.clone();
        if do_bandpass {
            out = bandpass(&out, fs, config.bandpass_low_hz, config.bandpass_high_hz)?;
        }
        if do_notch {
            out = notch(&out, fs, config.notch_hz, config.notch_q)?;
        }
        samples.push(out);
    }
    EcgRecord::new(
        record.id.clone(),
        record.sampling_rate_hz,
        record.leads.clone(),
        samples,
        record.meta.clone(),
    )
}
