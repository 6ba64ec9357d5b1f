//! Record and annotation types, their on-disk formats, and the synthetic
//! PQRST generator used for desk-scale testing.
//!
//! A record is a directory holding `header.json` plus `signal.bin` (float32,
//! little-endian, lead-major). Annotations live in `<record_id>.delin.json`.

mod format;
mod synth;

pub use format::{
    import_csv, read_annotations, read_record, write_annotations, write_record,
};
pub use synth::{synth_record, SynthSpec};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three delineated wave classes, ordered `P < QRS < T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WaveClass {
    P,
    #[serde(rename = "QRS")]
    Qrs,
    T,
}

impl WaveClass {
    pub const ALL: [WaveClass; 3] = [WaveClass::P, WaveClass::Qrs, WaveClass::T];

    /// Dense index used for grid/class addressing: P=0, QRS=1, T=2.
    pub fn index(self) -> usize {
        match self {
            WaveClass::P => 0,
            WaveClass::Qrs => 1,
            WaveClass::T => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WaveClass::P => "P",
            WaveClass::Qrs => "QRS",
            WaveClass::T => "T",
        }
    }
}

impl std::fmt::Display for WaveClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One class-tagged half-open sample interval `[onset, offset)`.
///
/// Ground-truth segments carry no confidence; predictions carry the grid
/// cell's confidence in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "class")]
    pub wave_class: WaveClass,
    pub onset: usize,
    pub offset: usize,
    pub confidence: Option<f64>,
}

impl Segment {
    pub fn new(wave_class: WaveClass, onset: usize, offset: usize) -> Self {
        Segment {
            wave_class,
            onset,
            offset,
            confidence: None,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    pub fn len(&self) -> usize {
        self.offset.saturating_sub(self.onset)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.onset >= self.offset {
            return Err(Error::invalid(format!(
                "segment {} [{}, {}): offset must exceed onset",
                self.wave_class, self.onset, self.offset
            )));
        }
        if let Some(c) = self.confidence {
            if !c.is_finite() || c <= 0.0 || c >= 1.0 {
                return Err(Error::invalid(format!(
                    "segment confidence {c} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// A record's full segment list, sorted by onset (ties broken `P < QRS < T`),
/// with same-class segments non-overlapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub record_id: String,
    pub segments: Vec<Segment>,
}

impl AnnotationSet {
    /// Builds a validated set; the segment list is normalized to canonical order.
    pub fn new(record_id: impl Into<String>, mut segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            s.validate()?;
        }
        segments.sort_by(|a, b| {
            a.onset
                .cmp(&b.onset)
                .then(a.wave_class.cmp(&b.wave_class))
                .then(a.offset.cmp(&b.offset))
        });
        // Same-class overlap check over the sorted list.
        for class in WaveClass::ALL {
            let mut prev_offset: Option<usize> = None;
            for s in segments.iter().filter(|s| s.wave_class == class) {
                if let Some(end) = prev_offset {
                    if s.onset < end {
                        return Err(Error::invalid(format!(
                            "overlapping {class} segments: previous ends at {end}, next starts at {}",
                            s.onset
                        )));
                    }
                }
                prev_offset = Some(s.offset);
            }
        }
        Ok(AnnotationSet {
            record_id: record_id.into(),
            segments,
        })
    }

    /// Segments of one class, in onset order.
    pub fn by_class(&self, class: WaveClass) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.wave_class == class)
    }

    /// Checks every segment fits in a record of `n_samples` samples.
    pub fn validate_for_record_len(&self, n_samples: usize) -> Result<()> {
        for s in &self.segments {
            if s.offset > n_samples {
                return Err(Error::invalid(format!(
                    "segment {} [{}, {}) exceeds record length {n_samples}",
                    s.wave_class, s.onset, s.offset
                )));
            }
        }
        Ok(())
    }
}

/// A multi-lead sampled ECG signal. Samples are stored lead-major in
/// millivolts, matching the on-disk layout bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub id: String,
    pub sampling_rate_hz: u32,
    pub leads: Vec<String>,
    pub samples: Vec<Vec<f32>>,
    pub meta: BTreeMap<String, String>,
}

impl EcgRecord {
    pub fn new(
        id: impl Into<String>,
        sampling_rate_hz: u32,
        leads: Vec<String>,
        samples: Vec<Vec<f32>>,
        meta: BTreeMap<String, String>,
    ) -> Result<Self> {
        let record = EcgRecord {
            id: id.into(),
            sampling_rate_hz,
            leads,
            samples,
            meta,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sampling_rate_hz == 0 {
            return Err(Error::invalid("sampling_rate_hz must be positive"));
        }
        if self.leads.is_empty() {
            return Err(Error::invalid("record must have at least one lead"));
        }
        {
            let mut seen = std::collections::BTreeSet::new();
            for name in &self.leads {
                if !seen.insert(name) {
                    return Err(Error::invalid(format!("duplicate lead name {name:?}")));
                }
            }
        }
        if self.samples.len() != self.leads.len() {
            return Err(Error::invalid(format!(
                "{} lead names but {} sample rows",
                self.leads.len(),
                self.samples.len()
            )));
        }
        let n = self.samples[0].len();
        if n == 0 {
            return Err(Error::invalid("record must hold at least one sample"));
        }
        for (lead, row) in self.leads.iter().zip(&self.samples) {
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "lead {lead:?} has {} samples, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "lead {lead:?} contains non-finite samples"
                )));
            }
        }
        Ok(())
    }

    pub fn n_leads(&self) -> usize {
        self.leads.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples[0].len()
    }

    pub fn duration_ms(&self) -> f64 {
        self.n_samples() as f64 * 1000.0 / self.sampling_rate_hz as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(class: WaveClass, onset: usize, offset: usize) -> Segment {
        Segment::new(class, onset, offset)
    }

    #[test]
    fn annotation_set_sorts_by_onset_then_class() {
        let set = AnnotationSet::new(
            "r",
            vec![
                seg(WaveClass::T, 350, 500),
                seg(WaveClass::P, 100, 180),
                seg(WaveClass::Qrs, 200, 290),
            ],
        )
        .unwrap();
        let classes: Vec<_> = set.segments.iter().map(|s| s.wave_class).collect();
        assert_eq!(classes, vec![WaveClass::P, WaveClass::Qrs, WaveClass::T]);

        // Onset tie: class order P < QRS < T decides.
        let set = AnnotationSet::new(
            "r",
            vec![seg(WaveClass::T, 100, 300), seg(WaveClass::P, 100, 200)],
        )
        .unwrap();
        assert_eq!(set.segments[0].wave_class, WaveClass::P);
    }

    #[test]
    fn same_class_overlap_rejected() {
        let err = AnnotationSet::new(
            "r",
            vec![seg(WaveClass::P, 100, 200), seg(WaveClass::P, 150, 250)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Invalid(_)));
        // Touching segments are fine: [100,200) and [200,300) share no sample.
        AnnotationSet::new(
            "r",
            vec![seg(WaveClass::P, 100, 200), seg(WaveClass::P, 200, 300)],
        )
        .unwrap();
        // Different classes may overlap.
        AnnotationSet::new(
            "r",
            vec![seg(WaveClass::P, 100, 200), seg(WaveClass::T, 150, 250)],
        )
        .unwrap();
    }

    #[test]
    fn degenerate_segment_rejected() {
        assert!(seg(WaveClass::P, 100, 100).validate().is_err());
        assert!(seg(WaveClass::P, 100, 90).validate().is_err());
        assert!(seg(WaveClass::P, 100, 101).validate().is_ok());
    }

    #[test]
    fn confidence_must_be_strictly_inside_unit_interval() {
        assert!(seg(WaveClass::P, 0, 1).with_confidence(0.0).validate().is_err());
        assert!(seg(WaveClass::P, 0, 1).with_confidence(1.0).validate().is_err());
        assert!(seg(WaveClass::P, 0, 1).with_confidence(0.5).validate().is_ok());
    }

    #[test]
    fn record_invariants() {
        let ok = EcgRecord::new(
            "r",
            1000,
            vec!["I".into(), "II".into()],
            vec![vec![0.0; 10], vec![0.0; 10]],
            BTreeMap::new(),
        );
        assert!(ok.is_ok());

        let ragged = EcgRecord::new(
            "r",
            1000,
            vec!["I".into(), "II".into()],
            vec![vec![0.0; 10], vec![0.0; 9]],
            BTreeMap::new(),
        );
        assert!(ragged.is_err());

        let dup = EcgRecord::new(
            "r",
            1000,
            vec!["I".into(), "I".into()],
            vec![vec![0.0; 10], vec![0.0; 10]],
            BTreeMap::new(),
        );
        assert!(dup.is_err());

        let nan = EcgRecord::new(
            "r",
            1000,
            vec!["I".into()],
            vec![vec![f32::NAN; 10]],
            BTreeMap::new(),
        );
        assert!(nan.is_err());

        let zero_rate = EcgRecord::new("r", 0, vec!["I".into()], vec![vec![0.0; 10]], BTreeMap::new());
        assert!(zero_rate.is_err());
    }
}
