//! Conversion between segment annotations and the per-interval grid the
//! model predicts, plus the merge/drop post-processing.
//!
//! The record is split into `n_intervals` equal intervals. Each interval
//! and wave class holds one cell: a presence confidence plus start/end
//! positions expressed as fractions of the interval. Segments spanning
//! several intervals are encoded as per-interval fragments; decoding
//! emits the fragments back and the merge step reunites them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{AnnotationSet, Segment, WaveClass};

/// Grid geometry and post-processing constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_intervals: usize,
    pub record_len: usize,
    pub conf_threshold: f64,
    /// Same-class segments closer than this many samples are united.
    pub merge_gap: usize,
    /// Segments shorter than this many samples are removed.
    pub min_len: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_intervals: 50,
            record_len: 10_000,
            conf_threshold: 0.5,
            merge_gap: 300,
            min_len: 50,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_intervals == 0 || self.record_len == 0 {
            return Err(Error::config("n_intervals and record_len must be positive"));
        }
        if self.record_len % self.n_intervals != 0 {
            return Err(Error::config(format!(
                "record_len {} not divisible by n_intervals {}",
                self.record_len, self.n_intervals
            )));
        }
        if !(self.conf_threshold > 0.0 && self.conf_threshold < 1.0) {
            return Err(Error::config("conf_threshold must lie strictly inside (0, 1)"));
        }
        if self.min_len == 0 {
            return Err(Error::config("min_len must be at least 1"));
        }
        Ok(())
    }

    pub fn interval_len(&self) -> usize {
        self.record_len / self.n_intervals
    }
}

/// One grid cell: presence confidence plus start/end fractions of the
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GridCell {
    pub confidence: f64,
    pub start_frac: f64,
    pub end_frac: f64,
}

/// Encoding targets: confidences in {0, 1}, plus a per-class mask so
/// partially pseudolabeled records can exclude classes from the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetGrid {
    pub n_intervals: usize,
    cells: Vec<GridCell>,
    pub class_mask: [bool; 3],
}

/// Model output: confidences and fractions strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    pub n_intervals: usize,
    cells: Vec<GridCell>,
}

impl TargetGrid {
    pub fn zeros(n_intervals: usize) -> Self {
        TargetGrid {
            n_intervals,
            cells: vec![GridCell::default(); n_intervals * 3],
            class_mask: [true; 3],
        }
    }

    pub fn cell(&self, interval: usize, class: WaveClass) -> &GridCell {
        &self.cells[interval * 3 + class.index()]
    }

    pub fn cell_mut(&mut self, interval: usize, class: WaveClass) -> &mut GridCell {
        &mut self.cells[interval * 3 + class.index()]
    }

    pub fn masked(mut self, mask: [bool; 3]) -> Self {
        self.class_mask = mask;
        self
    }
}

impl PredictionGrid {
    pub fn new(n_intervals: usize, cells: Vec<GridCell>) -> Self {
        assert_eq!(cells.len(), n_intervals * 3, "cell count mismatch");
        PredictionGrid { n_intervals, cells }
    }

    pub fn uniform(n_intervals: usize, cell: GridCell) -> Self {
        PredictionGrid {
            n_intervals,
            cells: vec![cell; n_intervals * 3],
        }
    }

    pub fn cell(&self, interval: usize, class: WaveClass) -> &GridCell {
        &self.cells[interval * 3 + class.index()]
    }

    pub fn cell_mut(&mut self, interval: usize, class: WaveClass) -> &mut GridCell {
        &mut self.cells[interval * 3 + class.index()]
    }

    pub fn cells(&self) -> &[GridCell] {
        &self.cells
    }

    /// Per-class confidences in interval order.
    pub fn class_confidences(&self, class: WaveClass) -> Vec<f64> {
        (0..self.n_intervals)
            .map(|i| self.cell(i, class).confidence)
            .collect()
    }
}

/// Encodes annotations into the target grid: a cell is positive iff some
/// same-class segment overlaps its interval by at least one sample; the
/// fractions are the overlap bounds relative to the interval.
pub fn encode_targets(annotations: &AnnotationSet, config: &GridConfig) -> Result<TargetGrid> {
    config.validate()?;
    annotations.validate_for_record_len(config.record_len)?;
    let interval_len = config.interval_len();
    let mut grid = TargetGrid::zeros(config.n_intervals);
    for seg in &annotations.segments {
        let first = seg.onset / interval_len;
        let last = (seg.offset - 1) / interval_len;
        for i in first..=last.min(config.n_intervals - 1) {
            let a = i * interval_len;
            let b = a + interval_len;
            let lo = seg.onset.max(a);
            let hi = seg.offset.min(b);
            if hi <= lo {
                continue;
            }
            let cell = grid.cell_mut(i, seg.wave_class);
            let start = (lo - a) as f64 / interval_len as f64;
            let end = (hi - a) as f64 / interval_len as f64;
            if cell.confidence == 0.0 {
                *cell = GridCell {
                    confidence: 1.0,
                    start_frac: start,
                    end_frac: end,
                };
            } else {
                // Two same-class segments in one interval: keep the span.
                cell.start_frac = cell.start_frac.min(start);
                cell.end_frac = cell.end_frac.max(end);
            }
        }
    }
    Ok(grid)
}

/// Decodes every cell above the confidence threshold into a raw segment,
/// dropping cells whose rounded extent is empty. Output is in canonical
/// onset order.
pub fn decode_grid(grid: &PredictionGrid, config: &GridConfig) -> Result<Vec<Segment>> {
    config.validate()?;
    if grid.n_intervals != config.n_intervals {
        return Err(Error::config(format!(
            "grid has {} intervals, config expects {}",
            grid.n_intervals, config.n_intervals
        )));
    }
    let interval_len = config.interval_len() as f64;
    let mut out = Vec::new();
    for i in 0..grid.n_intervals {
        let a = (i * config.interval_len()) as f64;
        for class in WaveClass::ALL {
            let cell = grid.cell(i, class);
            if cell.confidence <= config.conf_threshold {
                continue;
            }
            let onset = (a + cell.start_frac * interval_len).round() as usize;
            let offset = (a + cell.end_frac * interval_len).round() as usize;
            if offset <= onset {
                continue;
            }
            out.push(
                Segment::new(class, onset, offset.min(config.record_len))
                    .with_confidence(cell.confidence),
            );
        }
    }
    out.sort_by(|x, y| x.onset.cmp(&y.onset).then(x.wave_class.cmp(&y.wave_class)));
    Ok(out)
}

/// Unites same-class segments whose gap is strictly below `merge_gap`,
/// transitively; merged confidence is the maximum of the parts.
pub fn merge_segments(segments: &[Segment], merge_gap: usize) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
    for class in WaveClass::ALL {
        let mut current: Option<Segment> = None;
        for seg in segments.iter().filter(|s| s.wave_class == class) {
            match current.as_mut() {
                None => current = Some(seg.clone()),
                Some(acc) => {
                    // Gap is negative when segments overlap; merge then too.
                    let gap = seg.onset as i64 - acc.offset as i64;
                    if gap < merge_gap as i64 {
                        acc.offset = acc.offset.max(seg.offset);
                        acc.confidence = match (acc.confidence, seg.confidence) {
                            (Some(a), Some(b)) => Some(a.max(b)),
                            (a, b) => a.or(b),
                        };
                    } else {
                        out.push(current.take().unwrap());
                        current = Some(seg.clone());
                    }
                }
            }
        }
        if let Some(acc) = current {
            out.push(acc);
        }
    }
    out.sort_by(|x, y| x.onset.cmp(&y.onset).then(x.wave_class.cmp(&y.wave_class)));
    out
}

/// Removes segments strictly shorter than `min_len` samples.
pub fn drop_short(segments: &[Segment], min_len: usize) -> Vec<Segment> {
    segments.iter().filter(|s| s.len() >= min_len).cloned().collect()
}

/// Full post-processing: merge close same-class fragments, drop short
/// leftovers, and validate the result as an annotation set.
pub fn postprocess(
    record_id: &str,
    segments: Vec<Segment>,
    config: &GridConfig,
) -> Result<AnnotationSet> {
    config.validate()?;
    let mut sorted = segments;
    sorted.sort_by(|x, y| x.onset.cmp(&y.onset).then(x.wave_class.cmp(&y.wave_class)));
    let merged = merge_segments(&sorted, config.merge_gap);
    let kept = drop_short(&merged, config.min_len);
    AnnotationSet::new(record_id, kept)
}

#[cfg(test)]
pub(crate) fn random_clean_set(
    rng: &mut rand_chacha::ChaCha8Rng,
    record_len: usize,
) -> AnnotationSet {
    use rand::Rng;
    // Same-class gaps > 300 and lengths >= 50: post-processing is identity.
    let mut segs = Vec::new();
    for class in WaveClass::ALL {
        let mut cursor = rng.random_range(0..400usize);
        loop {
            let len = rng.random_range(50..=400usize);
            if cursor + len > record_len {
                break;
            }
            segs.push(Segment::new(class, cursor, cursor + len));
            cursor += len + 301 + rng.random_range(0..800usize);
        }
    }
    AnnotationSet::new("clean", segs).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(class: WaveClass, onset: usize, offset: usize) -> Segment {
        Segment::new(class, onset, offset)
    }

    fn small_config() -> GridConfig {
        GridConfig {
            n_intervals: 5,
            record_len: 1000,
            ..GridConfig::default()
        }
    }

    #[test]
    fn encode_single_segment_fractions() {
        let config = small_config();
        let anns = AnnotationSet::new("r", vec![seg(WaveClass::P, 100, 180)]).unwrap();
        let grid = encode_targets(&anns, &config).unwrap();
        let cell = grid.cell(0, WaveClass::P);
        assert_eq!(cell.confidence, 1.0);
        assert_eq!(cell.start_frac, 0.5);
        assert_eq!(cell.end_frac, 0.9);
        // Everything else stays empty.
        assert_eq!(grid.cell(0, WaveClass::Qrs), &GridCell::default());
        assert_eq!(grid.cell(1, WaveClass::P), &GridCell::default());
    }

    #[test]
    fn encode_spanning_segment_fragments() {
        let config = small_config();
        let anns = AnnotationSet::new("r", vec![seg(WaveClass::Qrs, 150, 450)]).unwrap();
        let grid = encode_targets(&anns, &config).unwrap();
        let c0 = grid.cell(0, WaveClass::Qrs);
        let c1 = grid.cell(1, WaveClass::Qrs);
        let c2 = grid.cell(2, WaveClass::Qrs);
        assert_eq!((c0.confidence, c0.start_frac, c0.end_frac), (1.0, 0.75, 1.0));
        assert_eq!((c1.confidence, c1.start_frac, c1.end_frac), (1.0, 0.0, 1.0));
        assert_eq!((c2.confidence, c2.start_frac, c2.end_frac), (1.0, 0.0, 0.25));
        assert_eq!(grid.cell(3, WaveClass::Qrs).confidence, 0.0);
    }

    #[test]
    fn encode_empty_set_is_all_zero() {
        let config = small_config();
        let anns = AnnotationSet::new("r", vec![]).unwrap();
        let grid = encode_targets(&anns, &config).unwrap();
        for i in 0..config.n_intervals {
            for class in WaveClass::ALL {
                assert_eq!(grid.cell(i, class), &GridCell::default());
            }
        }
    }

    #[test]
    fn encode_rejects_out_of_range_segment() {
        let config = small_config();
        let anns = AnnotationSet::new("r", vec![seg(WaveClass::P, 900, 1100)]).unwrap();
        assert!(encode_targets(&anns, &config).is_err());
    }

    #[test]
    fn decode_inverts_encode_example() {
        let config = small_config();
        let mut grid = PredictionGrid::uniform(
            5,
            GridCell {
                confidence: 0.1,
                start_frac: 0.5,
                end_frac: 0.5,
            },
        );
        *grid.cell_mut(0, WaveClass::P) = GridCell {
            confidence: 0.9,
            start_frac: 0.5,
            end_frac: 0.9,
        };
        let segs = decode_grid(&grid, &config).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].onset, segs[0].offset), (100, 180));
        assert_eq!(segs[0].wave_class, WaveClass::P);
        assert_eq!(segs[0].confidence, Some(0.9));
    }

    #[test]
    fn decode_threshold_and_zero_length() {
        let config = small_config();
        // All confidences at or below the 0.5 threshold: nothing decoded.
        let grid = PredictionGrid::uniform(
            5,
            GridCell {
                confidence: 0.5,
                start_frac: 0.2,
                end_frac: 0.8,
            },
        );
        assert!(decode_grid(&grid, &config).unwrap().is_empty());

        // Confident cell with start == end rounds to an empty extent.
        let mut grid = PredictionGrid::uniform(
            5,
            GridCell {
                confidence: 0.01,
                start_frac: 0.0,
                end_frac: 0.0,
            },
        );
        *grid.cell_mut(2, WaveClass::T) = GridCell {
            confidence: 0.99,
            start_frac: 0.4,
            end_frac: 0.4,
        };
        assert!(decode_grid(&grid, &config).unwrap().is_empty());
    }

    #[test]
    fn merge_applies_strict_gap_rule() {
        let close = [seg(WaveClass::P, 100, 180), seg(WaveClass::P, 300, 400)];
        let merged = merge_segments(&close, 300);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].onset, merged[0].offset), (100, 400));

        let far = [seg(WaveClass::P, 100, 180), seg(WaveClass::P, 500, 600)];
        assert_eq!(merge_segments(&far, 300).len(), 2);

        let mixed = [seg(WaveClass::P, 100, 180), seg(WaveClass::T, 200, 300)];
        assert_eq!(merge_segments(&mixed, 300).len(), 2);
    }

    #[test]
    fn merge_is_transitive_and_tracks_confidence() {
        let chain = [
            seg(WaveClass::P, 0, 100).with_confidence(0.6),
            seg(WaveClass::P, 150, 250).with_confidence(0.9),
            seg(WaveClass::P, 300, 400).with_confidence(0.7),
        ];
        let merged = merge_segments(&chain, 100);
        assert_eq!(merged.len(), 1);
        assert_eq!((merged[0].onset, merged[0].offset), (0, 400));
        assert_eq!(merged[0].confidence, Some(0.9));
    }

    #[test]
    fn drop_short_boundary_is_strict() {
        let segs = [seg(WaveClass::P, 100, 140), seg(WaveClass::Qrs, 100, 150)];
        let kept = drop_short(&segs, 50);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].wave_class, WaveClass::Qrs);
        assert!(drop_short(&[], 50).is_empty());
    }

    #[test]
    fn postprocess_merges_then_drops() {
        let config = GridConfig::default();
        // Two 30-sample fragments 100 apart: united into 160 samples, kept.
        let set = postprocess(
            "r",
            vec![seg(WaveClass::P, 100, 130), seg(WaveClass::P, 230, 260)],
            &config,
        )
        .unwrap();
        assert_eq!(set.segments.len(), 1);
        assert_eq!((set.segments[0].onset, set.segments[0].offset), (100, 260));

        // One isolated 30-sample fragment: removed.
        let set = postprocess("r", vec![seg(WaveClass::T, 100, 130)], &config).unwrap();
        assert!(set.segments.is_empty());

        // Already-clean sets are untouched.
        let clean = vec![
            seg(WaveClass::P, 100, 180),
            seg(WaveClass::Qrs, 600, 700),
            seg(WaveClass::P, 900, 1000),
        ];
        let set = postprocess("r", clean.clone(), &config).unwrap();
        assert_eq!(set.segments, clean);
    }

    #[test]
    fn postprocess_and_parts_are_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut segs = Vec::new();
            for class in WaveClass::ALL {
                let mut cursor = rng.random_range(0..300usize);
                while cursor + 450 < 9000 {
                    let len = rng.random_range(10..400usize);
                    segs.push(seg(class, cursor, cursor + len));
                    cursor += len + rng.random_range(1..900usize);
                }
            }
            segs.sort_by(|x, y| x.onset.cmp(&y.onset).then(x.wave_class.cmp(&y.wave_class)));
            let merged = merge_segments(&segs, 300);
            assert_eq!(merge_segments(&merged, 300), merged);
            let dropped = drop_short(&merged, 50);
            assert_eq!(drop_short(&dropped, 50), dropped);

            // Merging never loses covered samples; dropping never adds segments.
            let covered: usize = segs.iter().map(Segment::len).sum();
            let merged_covered: usize = merged.iter().map(Segment::len).sum();
            assert!(merged_covered >= covered);
            assert!(dropped.len() <= merged.len());

            let once = postprocess("r", segs.clone(), &GridConfig::default()).unwrap();
            let twice = postprocess("r", once.segments.clone(), &GridConfig::default()).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn round_trip_on_clean_sets_is_exact() {
        let config = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let epsilon = 1e-3;
        for _ in 0..1000 {
            let set = random_clean_set(&mut rng, config.record_len);
            let target = encode_targets(&set, &config).unwrap();
            // Read the {0,1} targets as confident predictions.
            let mut cells = Vec::with_capacity(config.n_intervals * 3);
            for i in 0..config.n_intervals {
                for class in WaveClass::ALL {
                    let t = target.cell(i, class);
                    cells.push(GridCell {
                        confidence: if t.confidence == 1.0 { 1.0 - epsilon } else { epsilon },
                        start_frac: t.start_frac,
                        end_frac: t.end_frac,
                    });
                }
            }
            let pred = PredictionGrid::new(config.n_intervals, cells);
            let decoded = decode_grid(&pred, &config).unwrap();
            let restored = postprocess("clean", decoded, &config).unwrap();
            let got: Vec<_> = restored
                .segments
                .iter()
                .map(|s| (s.wave_class, s.onset, s.offset))
                .collect();
            let want: Vec<_> = set
                .segments
                .iter()
                .map(|s| (s.wave_class, s.onset, s.offset))
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn decode_stays_within_record() {
        let config = GridConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let cells: Vec<GridCell> = (0..config.n_intervals * 3)
                .map(|_| GridCell {
                    confidence: rng.random_range(0.001..0.999),
                    start_frac: rng.random_range(0.0..1.0),
                    end_frac: rng.random_range(0.0..1.0),
                })
                .collect();
            let grid = PredictionGrid::new(config.n_intervals, cells);
            for s in decode_grid(&grid, &config).unwrap() {
                assert!(s.offset <= config.record_len);
                assert!(s.onset < s.offset);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(GridConfig::default().validate().is_ok());
        assert!(GridConfig {
            record_len: 10_001,
            ..GridConfig::default()
        }
        .validate()
        .is_err());
        assert!(GridConfig {
            conf_threshold: 1.0,
            ..GridConfig::default()
        }
        .validate()
        .is_err());
        assert!(GridConfig {
            min_len: 0,
            ..GridConfig::default()
        }
        .validate()
        .is_err());
    }
}
