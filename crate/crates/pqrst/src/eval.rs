//! Window-tolerance evaluation: match predicted fiducial points to ground
//! truth one-to-one within a time window, then report Se / PPV / F1 and
//! signed error statistics per point kind.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{AnnotationSet, WaveClass};

/// The six fiducial point kinds: onset and offset of each wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PointKind {
    #[serde(rename = "P_on")]
    POn,
    #[serde(rename = "P_off")]
    POff,
    #[serde(rename = "QRS_on")]
    QrsOn,
    #[serde(rename = "QRS_off")]
    QrsOff,
    #[serde(rename = "T_on")]
    TOn,
    #[serde(rename = "T_off")]
    TOff,
}

impl PointKind {
    pub const ALL: [PointKind; 6] = [
        PointKind::POn,
        PointKind::POff,
        PointKind::QrsOn,
        PointKind::QrsOff,
        PointKind::TOn,
        PointKind::TOff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PointKind::POn => "P_on",
            PointKind::POff => "P_off",
            PointKind::QrsOn => "QRS_on",
            PointKind::QrsOff => "QRS_off",
            PointKind::TOn => "T_on",
            PointKind::TOff => "T_off",
        }
    }

    /// Table-style column label ("P on", "QRS off", ...).
    pub fn label(self) -> &'static str {
        match self {
            PointKind::POn => "P on",
            PointKind::POff => "P off",
            PointKind::QrsOn => "QRS on",
            PointKind::QrsOff => "QRS off",
            PointKind::TOn => "T on",
            PointKind::TOff => "T off",
        }
    }

    pub fn of(class: WaveClass, offset_side: bool) -> PointKind {
        match (class, offset_side) {
            (WaveClass::P, false) => PointKind::POn,
            (WaveClass::P, true) => PointKind::POff,
            (WaveClass::Qrs, false) => PointKind::QrsOn,
            (WaveClass::Qrs, true) => PointKind::QrsOff,
            (WaveClass::T, false) => PointKind::TOn,
            (WaveClass::T, true) => PointKind::TOff,
        }
    }
}

impl std::fmt::Display for PointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One fiducial point in milliseconds from the record start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiducialPoint {
    pub kind: PointKind,
    pub time_ms: f64,
    pub confidence: Option<f64>,
}

/// Evaluation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tolerance_ms: f64,
    pub exclude_edges_s: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerance_ms: 150.0,
            exclude_edges_s: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_ms > 0.0) {
            return Err(Error::config("tolerance_ms must be positive"));
        }
        if !(self.exclude_edges_s >= 0.0) {
            return Err(Error::config("exclude_edges_s must be >= 0"));
        }
        Ok(())
    }
}

/// Converts segments to fiducial points (onset and offset per segment).
pub fn segments_to_points(set: &AnnotationSet, sampling_rate_hz: u32) -> Vec<FiducialPoint> {
    let ms_per_sample = 1000.0 / sampling_rate_hz as f64;
    let mut out = Vec::with_capacity(set.segments.len() * 2);
    for seg in &set.segments {
        out.push(FiducialPoint {
            kind: PointKind::of(seg.wave_class, false),
            time_ms: seg.onset as f64 * ms_per_sample,
            confidence: seg.confidence,
        });
        out.push(FiducialPoint {
            kind: PointKind::of(seg.wave_class, true),
            time_ms: seg.offset as f64 * ms_per_sample,
            confidence: seg.confidence,
        });
    }
    out
}

/// Outcome of matching one kind's points on one record.
#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    /// (predicted time, truth time) pairs, in time order.
    pub pairs: Vec<(f64, f64)>,
    pub unmatched_pred: Vec<f64>,
    pub unmatched_truth: Vec<f64>,
}

/// One-to-one matching within `|pred - truth| <= tolerance_ms` (inclusive),
/// computed greedily over the time-sorted lists by pairing the earliest
/// compatible points. For this window structure the greedy pairing attains
/// maximum cardinality.
pub fn match_points(
    predicted: &[FiducialPoint],
    truth: &[FiducialPoint],
    tolerance_ms: f64,
) -> Result<MatchResult> {
    let kind = predicted.iter().chain(truth).map(|p| p.kind).next();
    if let Some(kind) = kind {
        if predicted.iter().chain(truth).any(|p| p.kind != kind) {
            return Err(Error::invalid("match_points called with mixed point kinds"));
        }
    }
    let mut pred: Vec<f64> = predicted.iter().map(|p| p.time_ms).collect();
    let mut time: Vec<f64> = truth.iter().map(|p| p.time_ms).collect();
    pred.sort_by(|a, b| a.partial_cmp(b).unwrap());
    time.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut result = MatchResult::default();
    let (mut i, mut j) = (0usize, 0usize);
    while i < pred.len() && j < time.len() {
        let d = pred[i] - time[j];
        if d.abs() <= tolerance_ms {
            result.pairs.push((pred[i], time[j]));
            i += 1;
            j += 1;
        } else if pred[i] < time[j] {
            result.unmatched_pred.push(pred[i]);
            i += 1;
        } else {
            result.unmatched_truth.push(time[j]);
            j += 1;
        }
    }
    result.unmatched_pred.extend(&pred[i..]);
    result.unmatched_truth.extend(&time[j..]);
    Ok(result)
}

/// Counts plus derived ratios for one point kind. Ratios with a zero
/// denominator are absent, never zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub se: Option<f64>,
    pub ppv: Option<f64>,
    pub f1: Option<f64>,
    pub err_mean_ms: Option<f64>,
    pub err_std_ms: Option<f64>,
}

/// Derives the metric set from raw counts and signed errors
/// (prediction - truth, population standard deviation).
pub fn point_metrics(tp: usize, fp: usize, fn_: usize, errors_ms: &[f64]) -> PointMetrics {
    let ratio = |num: usize, den: usize| {
        if den > 0 {
            Some(num as f64 / den as f64)
        } else {
            None
        }
    };
    let se = ratio(tp, tp + fn_);
    let ppv = ratio(tp, tp + fp);
    let f1 = match (se, ppv) {
        (Some(s), Some(p)) if s + p > 0.0 => Some(2.0 * s * p / (s + p)),
        _ => None,
    };
    let (err_mean_ms, err_std_ms) = if errors_ms.is_empty() {
        (None, None)
    } else {
        let n = errors_ms.len() as f64;
        let mean = errors_ms.iter().sum::<f64>() / n;
        let var = errors_ms.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        (Some(mean), Some(var.sqrt()))
    };
    PointMetrics {
        tp,
        fp,
        fn_,
        se,
        ppv,
        f1,
        err_mean_ms,
        err_std_ms,
    }
}

impl PointMetrics {
    pub fn from_match(result: &MatchResult) -> PointMetrics {
        let errors: Vec<f64> = result.pairs.iter().map(|(p, t)| p - t).collect();
        point_metrics(
            result.pairs.len(),
            result.unmatched_pred.len(),
            result.unmatched_truth.len(),
            &errors,
        )
    }
}

/// Sampling geometry needed to place a record's points on the time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordMeta {
    pub sampling_rate_hz: u32,
    pub n_samples: usize,
}

impl RecordMeta {
    pub fn duration_ms(&self) -> f64 {
        self.n_samples as f64 * 1000.0 / self.sampling_rate_hz as f64
    }
}

/// Full evaluation report: per-kind metrics plus the all-kind aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub per_kind: BTreeMap<String, PointMetrics>,
    pub aggregate: PointMetrics,
    pub n_records: usize,
}

impl EvalReport {
    pub fn kind(&self, kind: PointKind) -> &PointMetrics {
        &self.per_kind[kind.name()]
    }
}

/// Evaluates predictions against ground truth over a dataset.
///
/// Records are processed in record-id order. Points within
/// `exclude_edges_s` of either record end are removed from both sides
/// before matching. A truth record without a prediction counts all its
/// surviving points as false negatives; a prediction without a truth
/// record is an error.
pub fn evaluate_dataset(
    predicted: &[AnnotationSet],
    truth: &[AnnotationSet],
    meta: &BTreeMap<String, RecordMeta>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let mut truth_by_id: BTreeMap<&str, &AnnotationSet> = BTreeMap::new();
    for t in truth {
        if truth_by_id.insert(&t.record_id, t).is_some() {
            return Err(Error::invalid(format!(
                "duplicate truth annotations for record {:?}",
                t.record_id
            )));
        }
    }
    let mut pred_by_id: BTreeMap<&str, &AnnotationSet> = BTreeMap::new();
    for p in predicted {
        if !truth_by_id.contains_key(p.record_id.as_str()) {
            return Err(Error::invalid(format!(
                "no ground truth for predicted record {:?}",
                p.record_id
            )));
        }
        if pred_by_id.insert(&p.record_id, p).is_some() {
            return Err(Error::invalid(format!(
                "duplicate predictions for record {:?}",
                p.record_id
            )));
        }
    }

    let empty = |id: &str| AnnotationSet {
        record_id: id.to_string(),
        segments: Vec::new(),
    };

    let mut counts: BTreeMap<PointKind, (usize, usize, usize)> = BTreeMap::new();
    let mut errors: BTreeMap<PointKind, Vec<f64>> = BTreeMap::new();
    for (id, truth_set) in &truth_by_id {
        let m = meta
            .get(*id)
            .ok_or_else(|| Error::invalid(format!("no record metadata for {id:?}")))?;
        let pred_owned;
        let pred_set = match pred_by_id.get(id) {
            Some(p) => *p,
            None => {
                pred_owned = empty(id);
                &pred_owned
            }
        };
        let duration = m.duration_ms();
        let edge = config.exclude_edges_s * 1000.0;
        let keep = |p: &FiducialPoint| p.time_ms >= edge && p.time_ms <= duration - edge;
        let pred_points: Vec<_> = segments_to_points(pred_set, m.sampling_rate_hz)
            .into_iter()
            .filter(keep)
            .collect();
        let truth_points: Vec<_> = segments_to_points(truth_set, m.sampling_rate_hz)
            .into_iter()
            .filter(keep)
            .collect();
        for kind in PointKind::ALL {
            let p: Vec<_> = pred_points.iter().copied().filter(|x| x.kind == kind).collect();
            let t: Vec<_> = truth_points.iter().copied().filter(|x| x.kind == kind).collect();
            let result = match_points(&p, &t, config.tolerance_ms)?;
            let entry = counts.entry(kind).or_default();
            entry.0 += result.pairs.len();
            entry.1 += result.unmatched_pred.len();
            entry.2 += result.unmatched_truth.len();
            errors
                .entry(kind)
                .or_default()
                .extend(result.pairs.iter().map(|(p, t)| p - t));
        }
    }

    let mut per_kind = BTreeMap::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    let mut err_all = Vec::new();
    for kind in PointKind::ALL {
        let (tp, fp, fn_) = counts.get(&kind).copied().unwrap_or_default();
        let errs = errors.remove(&kind).unwrap_or_default();
        per_kind.insert(kind.name().to_string(), point_metrics(tp, fp, fn_, &errs));
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        err_all.extend(errs);
    }
    Ok(EvalReport {
        config: *config,
        per_kind,
        aggregate: point_metrics(tp_all, fp_all, fn_all, &err_all),
        n_records: truth_by_id.len(),
    })
}

/// Renders the report as a markdown table: one column per fiducial kind,
/// rows Se / PPV / F1-score / error mean +- std.
pub fn render_markdown(report: &EvalReport) -> String {
    let fmt_ratio = |v: Option<f64>| match v {
        Some(v) => format!("{v:.3}"),
        None => "-".to_string(),
    };
    let mut out = String::new();
    out.push_str("| Metric |");
    for kind in PointKind::ALL {
        out.push_str(&format!(" {} |", kind.label()));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in PointKind::ALL {
        out.push_str("---|");
    }
    out.push('\n');
    for (row, get) in [
        ("Se", Box::new(|m: &PointMetrics| fmt_ratio(m.se)) as Box<dyn Fn(&PointMetrics) -> String>),
        ("PPV", Box::new(|m: &PointMetrics| fmt_ratio(m.ppv))),
        ("F1-score", Box::new(|m: &PointMetrics| fmt_ratio(m.f1))),
        (
            "μ ± σ (ms)",
            Box::new(|m: &PointMetrics| match (m.err_mean_ms, m.err_std_ms) {
                (Some(mean), Some(std)) => format!("{mean:.1} ± {std:.1}"),
                _ => "-".to_string(),
            }),
        ),
    ] {
        out.push_str(&format!("| {row} |"));
        for kind in PointKind::ALL {
            out.push_str(&format!(" {} |", get(report.kind(kind))));
        }
        out.push('\n');
    }
    out.push_str(&format!("\n{} records evaluated\n", report.n_records));
    out
}
