//! Synthetic PQRST records with exact ground-truth segments.
//!
//! P and T waves are truncated Gaussian bumps; the QRS complex is a
//! piecewise-linear biphasic spike. Every wave's support equals its
//! annotated segment, so with zero noise the signal is exactly the sum of
//! the templates and the labels are correct by construction.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{AnnotationSet, EcgRecord, Segment, WaveClass};

/// Parameters for one synthetic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub duration_s: f64,
    pub sampling_rate_hz: u32,
    pub heart_rate_bpm: f64,
    pub n_leads: usize,
    pub p_amplitude_mv: f64,
    pub p_width_ms: f64,
    pub qrs_amplitude_mv: f64,
    pub qrs_width_ms: f64,
    pub t_amplitude_mv: f64,
    pub t_width_ms: f64,
    pub noise_amplitude_mv: f64,
    /// Uniform per-beat placement jitter, +/- this many milliseconds.
    pub timing_jitter_ms: f64,
    /// Relative per-beat amplitude jitter, e.g. 0.1 for +/-10%.
    pub amplitude_jitter: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            duration_s: 10.0,
            sampling_rate_hz: 1000,
            heart_rate_bpm: 60.0,
            n_leads: 12,
            p_amplitude_mv: 0.15,
            p_width_ms: 220.0,
            qrs_amplitude_mv: 1.0,
            qrs_width_ms: 240.0,
            t_amplitude_mv: 0.35,
            t_width_ms: 260.0,
            noise_amplitude_mv: 0.02,
            timing_jitter_ms: 10.0,
            amplitude_jitter: 0.1,
            seed: 0,
        }
    }
}

/// Wave centers relative to the R peak, in milliseconds. Default widths
/// exceed one 200-sample grid interval so every wave spans at least two
/// grid cells.
const P_CENTER_MS: f64 = -280.0;
const T_CENTER_MS: f64 = 320.0;

/// Post-processing constants the ground truth must clear: minimum segment
/// length and same-class gap, expressed at the 1000 Hz working rate.
const MIN_SEGMENT_MS: f64 = 50.0;
const MIN_GAP_MS: f64 = 300.0;

/// Fixed per-lead gain vector; leads beyond twelve reuse it cyclically.
const LEAD_GAINS: [f64; 12] = [
    1.0, 0.8, 0.65, 1.1, 0.9, 0.7, 0.55, 1.15, 1.05, 0.85, 0.6, 0.95,
];

const LEAD_NAMES: [&str; 12] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("duration_s", self.duration_s),
            ("heart_rate_bpm", self.heart_rate_bpm),
            ("p_amplitude_mv", self.p_amplitude_mv),
            ("p_width_ms", self.p_width_ms),
            ("qrs_amplitude_mv", self.qrs_amplitude_mv),
            ("qrs_width_ms", self.qrs_width_ms),
            ("t_amplitude_mv", self.t_amplitude_mv),
            ("t_width_ms", self.t_width_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sampling_rate_hz == 0 {
            return Err(Error::invalid("sampling_rate_hz must be positive"));
        }
        if self.n_leads == 0 {
            return Err(Error::invalid("n_leads must be positive"));
        }
        if !(self.noise_amplitude_mv >= 0.0) {
            return Err(Error::invalid("noise amplitude must be >= 0"));
        }
        if !(self.timing_jitter_ms >= 0.0) || !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(Error::invalid("jitter parameters out of range"));
        }
        for (name, w) in [
            ("p_width_ms", self.p_width_ms),
            ("qrs_width_ms", self.qrs_width_ms),
            ("t_width_ms", self.t_width_ms),
        ] {
            if w < MIN_SEGMENT_MS {
                return Err(Error::invalid(format!(
                    "{name} = {w} ms is below the {MIN_SEGMENT_MS} ms minimum segment length"
                )));
            }
        }

        let period_ms = 60_000.0 / self.heart_rate_bpm;
        let max_width = self.p_width_ms.max(self.qrs_width_ms).max(self.t_width_ms);
        let worst_gap = period_ms - max_width - 2.0 * self.timing_jitter_ms;
        if worst_gap <= MIN_GAP_MS {
            return Err(Error::invalid(format!(
                "heart rate {} bpm leaves same-class gaps of {worst_gap:.1} ms; \
                 need > {MIN_GAP_MS} ms",
                self.heart_rate_bpm
            )));
        }

        // The first beat's P onset must stay inside the record even with
        // worst-case jitter; at excessive rates no beat fits at all.
        let first_r = 0.5 * period_ms - self.timing_jitter_ms;
        if first_r + P_CENTER_MS - 0.5 * self.p_width_ms < 0.0 {
            return Err(Error::invalid(format!(
                "heart rate {} bpm leaves no room for the first beat's P wave",
                self.heart_rate_bpm
            )));
        }
        if self.n_beats() == 0 {
            return Err(Error::invalid("duration too short for a single beat"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sampling_rate_hz as f64).round() as usize
    }

    /// Number of beats emitted: one per full period, minus any trailing
    /// beats whose T offset would spill past the record end.
    pub fn n_beats(&self) -> usize {
        let period_ms = 60_000.0 / self.heart_rate_bpm;
        let mut n = (self.duration_s * self.heart_rate_bpm / 60.0 + 1e-9).floor() as usize;
        while n > 0 {
            let last_r = (n as f64 - 0.5) * period_ms + self.timing_jitter_ms;
            if last_r + T_CENTER_MS + 0.5 * self.t_width_ms <= self.duration_s * 1000.0 {
                break;
            }
            n -= 1;
        }
        n
    }
}

/// Generates one record plus its exact annotations. Deterministic for a
/// fixed spec: the same seed yields bit-identical output.
pub fn synth_record(spec: &SynthSpec, id: &str) -> Result<(EcgRecord, AnnotationSet)> {
    spec.validate()?;
    let fs = spec.sampling_rate_hz as f64;
    let n = spec.n_samples();
    let to_sample = |ms: f64| -> usize { (ms * fs / 1000.0).round().clamp(0.0, n as f64) as usize };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let period_ms = 60_000.0 / spec.heart_rate_bpm;

    struct Beat {
        p: (usize, usize, f64),
        qrs: (usize, usize, f64),
        t: (usize, usize, f64),
    }

    let mut beats = Vec::with_capacity(spec.n_beats());
    for k in 0..spec.n_beats() {
        let jitter = if spec.timing_jitter_ms > 0.0 {
            rng.random_range(-spec.timing_jitter_ms..=spec.timing_jitter_ms)
        } else {
            0.0
        };
        let amp = |rng: &mut ChaCha8Rng, base: f64| {
            if spec.amplitude_jitter > 0.0 {
                base * rng.random_range(1.0 - spec.amplitude_jitter..=1.0 + spec.amplitude_jitter)
            } else {
                base
            }
        };
        let a_p = amp(&mut rng, spec.p_amplitude_mv);
        let a_qrs = amp(&mut rng, spec.qrs_amplitude_mv);
        let a_t = amp(&mut rng, spec.t_amplitude_mv);

        let r_ms = (k as f64 + 0.5) * period_ms + jitter;
        let span = |center_ms: f64, width_ms: f64| {
            (
                to_sample(center_ms - 0.5 * width_ms),
                to_sample(center_ms + 0.5 * width_ms),
            )
        };
        let (p_on, p_off) = span(r_ms + P_CENTER_MS, spec.p_width_ms);
        let (q_on, q_off) = span(r_ms, spec.qrs_width_ms);
        let (t_on, t_off) = span(r_ms + T_CENTER_MS, spec.t_width_ms);
        beats.push(Beat {
            p: (p_on, p_off, a_p),
            qrs: (q_on, q_off, a_qrs),
            t: (t_on, t_off, a_t),
        });
    }

    // Clean template, shared by all leads before gain scaling.
    let mut template = vec![0.0f64; n];
    for beat in &beats {
        add_gaussian_bump(&mut template, beat.p.0, beat.p.1, beat.p.2);
        add_qrs_spike(&mut template, beat.qrs.0, beat.qrs.1, beat.qrs.2);
        add_gaussian_bump(&mut template, beat.t.0, beat.t.1, beat.t.2);
    }

    let mut samples = Vec::with_capacity(spec.n_leads);
    for lead in 0..spec.n_leads {
        let gain = LEAD_GAINS[lead % LEAD_GAINS.len()];
        let mut row: Vec<f32> = template.iter().map(|v| (v * gain) as f32).collect();
        if spec.noise_amplitude_mv > 0.0 {
            for v in row.iter_mut() {
                *v += (spec.noise_amplitude_mv * standard_normal(&mut rng)) as f32;
            }
        }
        samples.push(row);
    }

    let leads = (0..spec.n_leads)
        .map(|i| {
            if i < LEAD_NAMES.len() {
                LEAD_NAMES[i].to_string()
            } else {
                format!("X{}", i + 1)
            }
        })
        .collect();

    let mut meta = BTreeMap::new();
    meta.insert("source".to_string(), "synth".to_string());
    meta.insert("seed".to_string(), spec.seed.to_string());
    let record = EcgRecord::new(id, spec.sampling_rate_hz, leads, samples, meta)?;

    let mut segments = Vec::with_capacity(beats.len() * 3);
    for beat in &beats {
        segments.push(Segment::new(WaveClass::P, beat.p.0, beat.p.1));
        segments.push(Segment::new(WaveClass::Qrs, beat.qrs.0, beat.qrs.1));
        segments.push(Segment::new(WaveClass::T, beat.t.0, beat.t.1));
    }
    let annotations = AnnotationSet::new(id, segments)?;
    annotations.validate_for_record_len(n)?;
    Ok((record, annotations))
}

/// Gaussian bump truncated to `[on, off)`, sigma = width/5.
fn add_gaussian_bump(signal: &mut [f64], on: usize, off: usize, amplitude: f64) {
    let center = (on + off - 1) as f64 / 2.0;
    let sigma = (off - on) as f64 / 5.0;
    for (i, v) in signal.iter_mut().enumerate().take(off).skip(on) {
        let z = (i as f64 - center) / sigma;
        *v += amplitude * (-0.5 * z * z).exp();
    }
}

/// Piecewise-linear biphasic spike: Q dip, R peak at 45% of the segment,
/// S dip, return to baseline.
fn add_qrs_spike(signal: &mut [f64], on: usize, off: usize, amplitude: f64) {
    let len = (off - on).max(2);
    let knots = [
        (0.0, 0.0),
        (0.2, -0.2),
        (0.45, 1.0),
        (0.7, -0.3),
        (1.0, 0.0),
    ];
    for i in on..off {
        let u = (i - on) as f64 / (len - 1) as f64;
        let mut y = 0.0;
        for w in knots.windows(2) {
            let ((u0, y0), (u1, y1)) = (w[0], w[1]);
            if u >= u0 && u <= u1 {
                y = y0 + (y1 - y0) * (u - u0) / (u1 - u0);
                break;
            }
        }
        signal[i] += amplitude * y;
    }
}

/// Box-Muller standard normal; two uniform draws per sample keep the
/// stream layout simple and reproducible.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
