//! Self-training: pseudolabel an unlabeled corpus with a trained model,
//! keep the most confidently delineated records per wave class, retrain
//! from scratch on the pseudolabels, then fine-tune on the labeled set.
//!
//! A record's per-class delineation score is |0.5 - confidence| averaged
//! over the grid intervals: large when the model is decisively present or
//! decisively absent, zero at maximal uncertainty.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_dataset, EvalConfig, EvalReport, RecordMeta};
use crate::grid_codec::{GridConfig, PredictionGrid};
use crate::model::{
    build_model, checkpoint_id, train, ModelConfig, ModelParams, TrainConfig, TrainContext,
    TrainSample,
};
use crate::pipeline::predict_record;
use crate::signal_io::{read_record, write_annotations, AnnotationSet, WaveClass};

/// Mean and population standard deviation of one class's delineation
/// scores over all grid intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub mean: f64,
    pub std: f64,
}

/// One pseudolabeled record: per-class scores plus the post-processed
/// predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub record_id: String,
    pub scores: [ClassScore; 3],
    pub predicted: AnnotationSet,
}

/// Per-class (mean, population std) of |0.5 - confidence| over intervals.
pub fn delineation_scores(grid: &PredictionGrid) -> [ClassScore; 3] {
    let mut out = [ClassScore { mean: 0.0, std: 0.0 }; 3];
    for class in WaveClass::ALL {
        let scores: Vec<f64> = grid
            .class_confidences(class)
            .iter()
            .map(|c| (0.5 - c).abs())
            .collect();
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        out[class.index()] = ClassScore {
            mean,
            std: var.sqrt(),
        };
    }
    out
}

/// Number of records the top-N% rule keeps: round(N/100 * count), half
/// away from zero.
pub fn selection_size(corpus_size: usize, top_percent: f64) -> usize {
    (top_percent / 100.0 * corpus_size as f64).round() as usize
}

/// Record ids ranked best-first for one class: descending mean score,
/// ties by ascending record id; the first round(N%) are selected.
pub fn select_top(
    scored: &[ScoredRecord],
    class: WaveClass,
    top_percent: f64,
) -> Result<Vec<String>> {
    if !(top_percent > 0.0 && top_percent <= 100.0) {
        return Err(Error::invalid(format!(
            "top_percent must lie in (0, 100], got {top_percent}"
        )));
    }
    if scored.is_empty() {
        return Err(Error::invalid("cannot select from an empty corpus"));
    }
    let mut order: Vec<&ScoredRecord> = scored.iter().collect();
    order.sort_by(|a, b| {
        b.scores[class.index()]
            .mean
            .partial_cmp(&a.scores[class.index()].mean)
            .unwrap()
            .then_with(|| a.record_id.cmp(&b.record_id))
    });
    Ok(order
        .into_iter()
        .take(selection_size(scored.len(), top_percent))
        .map(|r| r.record_id.clone())
        .collect())
}

/// Which classes a record was selected for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSelection {
    #[serde(rename = "P")]
    pub p: bool,
    #[serde(rename = "QRS")]
    pub qrs: bool,
    #[serde(rename = "T")]
    pub t: bool,
}

impl ClassSelection {
    pub fn mask(&self) -> [bool; 3] {
        [self.p, self.qrs, self.t]
    }

    pub fn from_mask(mask: [bool; 3]) -> ClassSelection {
        ClassSelection {
            p: mask[0],
            qrs: mask[1],
            t: mask[2],
        }
    }

    pub fn any(&self) -> bool {
        self.p || self.qrs || self.t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub checkpoint_id: String,
    pub grid: GridConfig,
    /// Unix seconds at manifest creation.
    pub timestamp: u64,
}

/// The pseudolabeling outcome: per-class selections and per-record masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudolabelManifest {
    pub top_percent: f64,
    /// Per class, selected record ids in rank order.
    pub selected: BTreeMap<String, Vec<String>>,
    /// Per record, the class-selection mask (records with no selected
    /// class are omitted).
    pub records: BTreeMap<String, ClassSelection>,
    pub provenance: Provenance,
}

impl PseudolabelManifest {
    pub fn selected_for(&self, class: WaveClass) -> &[String] {
        self.selected
            .get(class.name())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

/// Everything `pseudolabel` produced, including what it skipped.
#[derive(Debug)]
pub struct PseudolabelOutcome {
    pub manifest: PseudolabelManifest,
    pub scored: Vec<ScoredRecord>,
    /// Paths that looked like records but could not be processed.
    pub skipped: Vec<(PathBuf, String)>,
}

fn manifest_path(corpus_dir: &Path) -> PathBuf {
    corpus_dir.join("pseudolabels").join("manifest.json")
}

fn pseudo_annotation_path(corpus_dir: &Path, record_id: &str) -> PathBuf {
    corpus_dir.join(format!("{record_id}.pseudo.delin.json"))
}

/// Record subdirectories of a corpus directory, sorted by name.
pub fn list_record_dirs(corpus_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    let entries =
        std::fs::read_dir(corpus_dir).map_err(|e| Error::io(corpus_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(corpus_dir, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("header.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Predicts segments for every record in `corpus_dir`, writes
/// `<id>.pseudo.delin.json` beside the records plus
/// `pseudolabels/manifest.json`, and returns the manifest with the
/// per-class top-N% selection.
///
/// Unreadable records are skipped and reported in the outcome.
pub fn pseudolabel(
    params: &ModelParams,
    corpus_dir: &Path,
    ctx: &TrainContext,
    top_percent: f64,
) -> Result<PseudolabelOutcome> {
    if !(top_percent > 0.0 && top_percent <= 100.0) {
        return Err(Error::invalid(format!(
            "top_percent must lie in (0, 100], got {top_percent}"
        )));
    }
    let dirs = list_record_dirs(corpus_dir)?;
    if dirs.is_empty() {
        return Err(Error::invalid(format!(
            "no record directories under {}",
            corpus_dir.display()
        )));
    }

    let mut scored = Vec::with_capacity(dirs.len());
    let mut skipped = Vec::new();
    for dir in &dirs {
        let outcome = read_record(dir).and_then(|record| {
            let (annotations, grid) =
                predict_record(params, &record, ctx.grid, ctx.stft, ctx.sample_rate_hz)?;
            write_annotations(
                &annotations,
                pseudo_annotation_path(corpus_dir, &record.id),
            )?;
            Ok(ScoredRecord {
                record_id: record.id.clone(),
                scores: delineation_scores(&grid),
                predicted: annotations,
            })
        });
        match outcome {
            Ok(s) => scored.push(s),
            Err(e) => skipped.push((dir.clone(), e.to_string())),
        }
    }
    if scored.is_empty() {
        return Err(Error::invalid("every record in the corpus was unreadable"));
    }

    let mut selected = BTreeMap::new();
    let mut records: BTreeMap<String, [bool; 3]> = BTreeMap::new();
    for class in WaveClass::ALL {
        let ids = select_top(&scored, class, top_percent)?;
        for id in &ids {
            records.entry(id.clone()).or_default()[class.index()] = true;
        }
        selected.insert(class.name().to_string(), ids);
    }
    let manifest = PseudolabelManifest {
        top_percent,
        selected,
        records: records
            .into_iter()
            .map(|(id, mask)| (id, ClassSelection::from_mask(mask)))
            .collect(),
        provenance: Provenance {
            checkpoint_id: checkpoint_id(params),
            grid: ctx.grid.clone(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
    };

    let path = manifest_path(corpus_dir);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    Ok(PseudolabelOutcome {
        manifest,
        scored,
        skipped,
    })
}

/// One stage of the self-training schedule.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: &'static str,
    pub loss_history: Vec<f64>,
    pub eval: Option<EvalReport>,
    pub note: String,
}

#[derive(Debug)]
pub struct SelfTrainOutcome {
    /// The fine-tuned model.
    pub params: ModelParams,
    /// The stage-1 model trained on labeled data only, kept for
    /// baseline comparisons.
    pub base_params: ModelParams,
    pub stages: Vec<StageReport>,
    pub manifest: PseudolabelManifest,
}

fn stage_err(stage: &'static str, e: Error) -> Error {
    match e {
        // I/O errors already name their path; keep the variant for the
        // exit-code mapping.
        io @ Error::Io { .. } => io,
        other => Error::invalid(format!("stage {stage}: {other}")),
    }
}

fn eval_on(
    params: &ModelParams,
    samples: &[TrainSample],
    ctx: &TrainContext,
    eval_config: &EvalConfig,
) -> Result<EvalReport> {
    let mut predicted = Vec::with_capacity(samples.len());
    let mut truth = Vec::with_capacity(samples.len());
    let mut meta = BTreeMap::new();
    for s in samples {
        let (annotations, _) =
            predict_record(params, &s.record, ctx.grid, ctx.stft, ctx.sample_rate_hz)?;
        predicted.push(annotations);
        truth.push(s.annotations.clone());
        meta.insert(
            s.record.id.clone(),
            RecordMeta {
                sampling_rate_hz: s.record.sampling_rate_hz,
                n_samples: s.record.n_samples(),
            },
        );
    }
    evaluate_dataset(&predicted, &truth, &meta, eval_config)
}

/// The four-stage self-training schedule:
///
/// 1. train a base model on the labeled set;
/// 2. pseudolabel the unlabeled corpus and keep the top N% per class;
/// 3. train a fresh model (same seed policy) on the pseudolabels, with
///    unselected classes masked out of the loss;
/// 4. fine-tune that model on the labeled set.
///
/// Each training stage is evaluated on the labeled set; the outcome
/// carries the per-stage reports and the manifest.
pub fn selftrain_run(
    labeled: &[TrainSample],
    corpus_dir: &Path,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    ctx: &TrainContext,
    eval_config: &EvalConfig,
    top_percent: f64,
) -> Result<SelfTrainOutcome> {
    if !(top_percent > 0.0 && top_percent <= 100.0) {
        return Err(Error::invalid(format!(
            "top_percent must lie in (0, 100], got {top_percent}"
        )));
    }
    if labeled.is_empty() {
        return Err(Error::invalid("labeled set is empty"));
    }

    let mut stages = Vec::new();

    // Stage 1: base model on labeled data.
    let base_init = build_model(model_config).map_err(|e| stage_err("base_train", e))?;
    let (base, hist1) =
        train(&base_init, labeled, train_config, ctx).map_err(|e| stage_err("base_train", e))?;
    let base_eval = eval_on(&base, labeled, ctx, eval_config).map_err(|e| stage_err("base_train", e))?;
    stages.push(StageReport {
        stage: "base_train",
        loss_history: hist1,
        eval: Some(base_eval),
        note: format!("checkpoint {}", checkpoint_id(&base)),
    });

    // Stage 2: pseudolabel the corpus.
    let outcome = pseudolabel(&base, corpus_dir, ctx, top_percent)
        .map_err(|e| stage_err("pseudolabel", e))?;
    stages.push(StageReport {
        stage: "pseudolabel",
        loss_history: Vec::new(),
        eval: None,
        note: format!(
            "{} records scored, {} skipped, {} selected per class",
            outcome.scored.len(),
            outcome.skipped.len(),
            outcome.manifest.selected_for(WaveClass::P).len()
        ),
    });

    // Stage 3: fresh model on pseudolabels with class masks.
    let mut pseudo_samples = Vec::new();
    for dir in list_record_dirs(corpus_dir).map_err(|e| stage_err("pseudo_train", e))? {
        let record = match read_record(&dir) {
            Ok(r) => r,
            Err(_) => continue, // already counted as skipped in stage 2
        };
        let Some(selection) = outcome.manifest.records.get(&record.id) else {
            continue;
        };
        if !selection.any() {
            continue;
        }
        let scored = outcome
            .scored
            .iter()
            .find(|s| s.record_id == record.id)
            .ok_or_else(|| Error::invalid(format!("no score for record {}", record.id)))
            .map_err(|e| stage_err("pseudo_train", e))?;
        pseudo_samples.push(TrainSample {
            record,
            annotations: scored.predicted.clone(),
            class_mask: selection.mask(),
        });
    }
    if pseudo_samples.is_empty() {
        return Err(stage_err(
            "pseudo_train",
            Error::invalid("no pseudolabeled records selected"),
        ));
    }
    let fresh = build_model(model_config).map_err(|e| stage_err("pseudo_train", e))?;
    let (pseudo_model, hist3) = train(&fresh, &pseudo_samples, train_config, ctx)
        .map_err(|e| stage_err("pseudo_train", e))?;
    stages.push(StageReport {
        stage: "pseudo_train",
        loss_history: hist3,
        eval: None,
        note: format!("{} pseudolabeled records", pseudo_samples.len()),
    });

    // Stage 4: fine-tune on the labeled set.
    let (final_model, hist4) =
        train(&pseudo_model, labeled, train_config, ctx).map_err(|e| stage_err("fine_tune", e))?;
    let final_eval =
        eval_on(&final_model, labeled, ctx, eval_config).map_err(|e| stage_err("fine_tune", e))?;
    stages.push(StageReport {
        stage: "fine_tune",
        loss_history: hist4,
        eval: Some(final_eval),
        note: format!("checkpoint {}", checkpoint_id(&final_model)),
    });

    Ok(SelfTrainOutcome {
        params: final_model,
        base_params: base,
        stages,
        manifest: outcome.manifest,
    })
}
