//! Command-line frontend for the PQRST delineation toolkit.
//!
//! Exit status: 0 on success, 1 on validation/usage errors, 2 on i/o
//! failures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use pqrst::config::ToolkitConfig;
use pqrst::dsp::preprocess_record;
use pqrst::error::{Error, Result};
use pqrst::eval::{evaluate_dataset, render_markdown, EvalReport, RecordMeta};
use pqrst::grid_codec::GridConfig;
use pqrst::model::{
    build_model, load_checkpoint, save_checkpoint, train, OptimizerKind, TrainContext,
    TrainSample,
};
use pqrst::pipeline::predict_record;
use pqrst::plot::render_svg;
use pqrst::selftrain::{list_record_dirs, pseudolabel, selftrain_run};
use pqrst::signal_io::{
    read_annotations, read_record, synth_record, write_annotations, write_record,
    AnnotationSet, Segment, SynthSpec,
};

#[derive(Parser)]
#[command(
    name = "pqrst",
    version,
    about = "ECG PQRST delineation toolkit",
    propagate_version = true
)]
struct Cli {
    /// Toolkit configuration file (TOML).
    #[arg(long, global = true, env = "ECGCODE_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,

    /// Base directory; every relative path is resolved against it.
    #[arg(long, global = true, default_value = ".", value_name = "DIR")]
    workdir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground-truth annotations.
    Synth {
        /// Output directory for the record subdirectories.
        #[arg(long, default_value = "records")]
        out: PathBuf,
        /// Number of records.
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Base seed; record i derives its own seed from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Record duration in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration_s: f64,
        /// Sampling rate in Hz [default: 1000].
        #[arg(long)]
        sample_rate: Option<u32>,
        /// Base heart rate; records cycle through nearby rates.
        #[arg(long, default_value_t = 58.0)]
        heart_rate_bpm: f64,
        /// White noise amplitude in millivolts.
        #[arg(long, default_value_t = 0.02)]
        noise_mv: f64,
        /// Number of leads per record.
        #[arg(long, default_value_t = 12)]
        leads: usize,
    },
    /// Resample records to the working rate and z-score each lead.
    Preprocess {
        /// Directory of record subdirectories.
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target sampling rate in Hz [default: 1000].
        #[arg(long)]
        sample_rate: Option<u32>,
    },
    /// Train a delineation model on labeled records.
    Train {
        /// Directory of records with `<id>.delin.json` ground truth.
        #[arg(long)]
        records: PathBuf,
        /// Checkpoint output directory.
        #[arg(long, default_value = "model")]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// adam or sgd_momentum.
        #[arg(long)]
        optimizer: Option<String>,
        /// Apply the bandpass/notch augmentation during training.
        #[arg(long, value_name = "BOOL")]
        augment: Option<bool>,
        /// Seed for initialization and data order.
        #[arg(long)]
        seed: Option<u64>,
        /// Working sampling rate in Hz [default: 1000].
        #[arg(long)]
        sample_rate: Option<u32>,
    },
    /// Predict segment annotations for every record in a directory.
    Predict {
        #[arg(long)]
        records: PathBuf,
        /// Checkpoint directory to load.
        #[arg(long)]
        model: PathBuf,
        /// Output directory for `<id>.delin.json` files.
        #[arg(long, default_value = "predictions")]
        out: PathBuf,
        /// Maximum gap united by post-processing, in samples [default: 300].
        #[arg(long)]
        merge_gap: Option<usize>,
        /// Minimum segment length kept, in samples [default: 50].
        #[arg(long)]
        min_len: Option<usize>,
        /// Decoding confidence threshold [default: 0.5].
        #[arg(long)]
        conf_threshold: Option<f64>,
        /// Working sampling rate in Hz [default: 1000].
        #[arg(long)]
        sample_rate: Option<u32>,
    },
    /// Pseudolabel an unlabeled corpus and select the top N% per class.
    Pseudolabel {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Percentage of records kept per wave class [default: 50].
        #[arg(long)]
        top_percent: Option<f64>,
        #[arg(long)]
        merge_gap: Option<usize>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        sample_rate: Option<u32>,
    },
    /// Run the full self-training schedule and save the final model.
    Selftrain {
        /// Labeled records (with `<id>.delin.json` ground truth).
        #[arg(long)]
        labeled: PathBuf,
        /// Unlabeled corpus directory.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for the final checkpoint and stage report.
        #[arg(long, default_value = "selftrained")]
        out: PathBuf,
        /// Percentage of records kept per wave class [default: 50].
        #[arg(long)]
        top_percent: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        sample_rate: Option<u32>,
    },
    /// Compare predictions to ground truth at a window tolerance.
    Eval {
        /// Directory of predicted `<id>.delin.json` files.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth `<id>.delin.json` files.
        #[arg(long)]
        truth: PathBuf,
        /// Directory of the record subdirectories (for time geometry).
        #[arg(long)]
        records: PathBuf,
        /// Report output stem; writes `<out>.json` and `<out>.md`.
        #[arg(long, default_value = "eval_report")]
        out: PathBuf,
        /// Matching window in milliseconds [default: 150].
        #[arg(long)]
        tolerance_ms: Option<f64>,
        /// Seconds excluded at each record end [default: 0].
        #[arg(long)]
        exclude_edges_s: Option<f64>,
    },
    /// Render a record with shaded segments to SVG.
    Plot {
        /// Record directory.
        #[arg(long)]
        record: PathBuf,
        /// Annotation file; defaults to `<id>.delin.json` beside the
        /// record directory when present.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let workdir = cli.workdir.clone();
    let at = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            workdir.join(p)
        }
    };
    let mut config = match &cli.config {
        Some(path) => ToolkitConfig::load(at(path))?,
        None => ToolkitConfig::default(),
    };

    match cli.command {
        Command::Synth {
            out,
            n,
            seed,
            duration_s,
            sample_rate,
            heart_rate_bpm,
            noise_mv,
            leads,
        } => {
            if n == 0 {
                return Err(Error::invalid("need at least one record"));
            }
            let rate = sample_rate.unwrap_or(config.sample_rate_hz);
            let out_dir = at(&out);
            for i in 0..n {
                let spec = SynthSpec {
                    duration_s,
                    sampling_rate_hz: rate,
                    // Cycle nearby heart rates for corpus variety.
                    heart_rate_bpm: heart_rate_bpm + (i % 13) as f64,
                    n_leads: leads,
                    noise_amplitude_mv: noise_mv,
                    seed: seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                    ..SynthSpec::default()
                };
                let id = format!("rec{i:04}");
                let (record, annotations) = synth_record(&spec, &id)?;
                write_record(&record, out_dir.join(&id))?;
                write_annotations(&annotations, out_dir.join(format!("{id}.delin.json")))?;
            }
            println!("wrote {n} records to {}", out_dir.display());
            Ok(())
        }

        Command::Preprocess {
            input,
            out,
            sample_rate,
        } => {
            let rate = sample_rate.unwrap_or(config.sample_rate_hz);
            let in_dir = at(&input);
            let out_dir = at(&out);
            let dirs = list_record_dirs(&in_dir)?;
            if dirs.is_empty() {
                return Err(Error::invalid(format!(
                    "no record directories under {}",
                    in_dir.display()
                )));
            }
            for dir in &dirs {
                let record = read_record(dir)?;
                let from_rate = record.sampling_rate_hz;
                let processed = preprocess_record(&record, rate)?;
                write_record(&processed, out_dir.join(&record.id))?;
                let ann_path = in_dir.join(format!("{}.delin.json", record.id));
                if ann_path.is_file() {
                    let set = read_annotations(&ann_path)?;
                    let scale = rate as f64 / from_rate as f64;
                    let segments = set
                        .segments
                        .iter()
                        .map(|s| Segment {
                            wave_class: s.wave_class,
                            onset: (s.onset as f64 * scale).round() as usize,
                            offset: (s.offset as f64 * scale).round() as usize,
                            confidence: s.confidence,
                        })
                        .collect();
                    let rescaled = AnnotationSet::new(set.record_id.clone(), segments)?;
                    write_annotations(
                        &rescaled,
                        out_dir.join(format!("{}.delin.json", record.id)),
                    )?;
                }
            }
            println!(
                "preprocessed {} records into {}",
                dirs.len(),
                out_dir.display()
            );
            Ok(())
        }

        Command::Train {
            records,
            out,
            epochs,
            learning_rate,
            batch_size,
            optimizer,
            augment,
            seed,
            sample_rate,
        } => {
            if let Some(v) = epochs {
                config.train.epochs = v;
            }
            if let Some(v) = learning_rate {
                config.train.learning_rate = v;
            }
            if let Some(v) = batch_size {
                config.train.batch_size = v;
            }
            if let Some(v) = augment {
                config.train.augment = v;
            }
            if let Some(v) = seed {
                config.model.seed = v;
                config.train.seed = v;
            }
            if let Some(v) = sample_rate {
                config.sample_rate_hz = v;
            }
            if let Some(name) = optimizer {
                config.train.optimizer = match name.as_str() {
                    "adam" => OptimizerKind::Adam,
                    "sgd_momentum" => OptimizerKind::SgdMomentum,
                    other => {
                        return Err(Error::invalid(format!(
                            "unknown optimizer {other:?}; use adam or sgd_momentum"
                        )))
                    }
                };
            }
            config.validate()?;

            let samples = load_labeled(&at(&records))?;
            let params = build_model(&config.model)?;
            let ctx = TrainContext {
                grid: &config.grid,
                stft: &config.stft,
                augment: &config.augment,
                sample_rate_hz: config.sample_rate_hz,
            };
            let (trained, history) = train(&params, &samples, &config.train, &ctx)?;
            let out_dir = at(&out);
            save_checkpoint(&trained, config.train.epochs, &out_dir)?;
            let history_path = out_dir.join("history.json");
            std::fs::write(
                &history_path,
                serde_json::to_string_pretty(&history).expect("history serializes"),
            )
            .map_err(|e| Error::io(&history_path, e))?;
            println!(
                "trained on {} records for {} epochs: loss {:.6} -> {:.6}",
                samples.len(),
                config.train.epochs,
                history.first().unwrap_or(&f64::NAN),
                history.last().unwrap_or(&f64::NAN)
            );
            println!("checkpoint written to {}", out_dir.display());
            Ok(())
        }

        Command::Predict {
            records,
            model,
            out,
            merge_gap,
            min_len,
            conf_threshold,
            sample_rate,
        } => {
            apply_grid_overrides(&mut config.grid, merge_gap, min_len, conf_threshold)?;
            if let Some(v) = sample_rate {
                config.sample_rate_hz = v;
            }
            let (params, _) = load_checkpoint(at(&model))?;
            let records_dir = at(&records);
            let out_dir = at(&out);
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let dirs = list_record_dirs(&records_dir)?;
            if dirs.is_empty() {
                return Err(Error::invalid(format!(
                    "no record directories under {}",
                    records_dir.display()
                )));
            }
            for dir in &dirs {
                let record = read_record(dir)?;
                let (annotations, _) = predict_record(
                    &params,
                    &record,
                    &config.grid,
                    &config.stft,
                    config.sample_rate_hz,
                )?;
                write_annotations(&annotations, out_dir.join(format!("{}.delin.json", record.id)))?;
            }
            println!(
                "wrote predictions for {} records to {}",
                dirs.len(),
                out_dir.display()
            );
            Ok(())
        }

        Command::Pseudolabel {
            corpus,
            model,
            top_percent,
            merge_gap,
            min_len,
            sample_rate,
        } => {
            apply_grid_overrides(&mut config.grid, merge_gap, min_len, None)?;
            if let Some(v) = top_percent {
                config.top_percent = v;
            }
            if let Some(v) = sample_rate {
                config.sample_rate_hz = v;
            }
            let (params, _) = load_checkpoint(at(&model))?;
            let ctx = TrainContext {
                grid: &config.grid,
                stft: &config.stft,
                augment: &config.augment,
                sample_rate_hz: config.sample_rate_hz,
            };
            let outcome = pseudolabel(&params, &at(&corpus), &ctx, config.top_percent)?;
            for (path, reason) in &outcome.skipped {
                eprintln!("skipped {}: {reason}", path.display());
            }
            println!(
                "pseudolabeled {} records ({} skipped); {} selected per class; manifest at {}",
                outcome.scored.len(),
                outcome.skipped.len(),
                outcome.manifest.selected_for(pqrst::signal_io::WaveClass::P).len(),
                at(&corpus).join("pseudolabels/manifest.json").display()
            );
            Ok(())
        }

        Command::Selftrain {
            labeled,
            corpus,
            out,
            top_percent,
            epochs,
            seed,
            sample_rate,
        } => {
            if let Some(v) = top_percent {
                config.top_percent = v;
            }
            if let Some(v) = epochs {
                config.train.epochs = v;
            }
            if let Some(v) = seed {
                config.model.seed = v;
                config.train.seed = v;
            }
            if let Some(v) = sample_rate {
                config.sample_rate_hz = v;
            }
            config.validate()?;
            let samples = load_labeled(&at(&labeled))?;
            let ctx = TrainContext {
                grid: &config.grid,
                stft: &config.stft,
                augment: &config.augment,
                sample_rate_hz: config.sample_rate_hz,
            };
            let outcome = selftrain_run(
                &samples,
                &at(&corpus),
                &config.model,
                &config.train,
                &ctx,
                &config.eval,
                config.top_percent,
            )?;
            let out_dir = at(&out);
            save_checkpoint(&outcome.params, config.train.epochs, &out_dir)?;

            #[derive(serde::Serialize)]
            struct StageSummary<'a> {
                stage: &'a str,
                final_loss: Option<f64>,
                note: &'a str,
                eval: Option<&'a EvalReport>,
            }
            let summaries: Vec<StageSummary> = outcome
                .stages
                .iter()
                .map(|s| StageSummary {
                    stage: s.stage,
                    final_loss: s.loss_history.last().copied(),
                    note: &s.note,
                    eval: s.eval.as_ref(),
                })
                .collect();
            let report_path = out_dir.join("selftrain_report.json");
            std::fs::write(
                &report_path,
                serde_json::to_string_pretty(&summaries).expect("report serializes"),
            )
            .map_err(|e| Error::io(&report_path, e))?;

            for stage in &outcome.stages {
                println!(
                    "stage {:<13} {}{}",
                    stage.stage,
                    stage
                        .loss_history
                        .last()
                        .map(|l| format!("final loss {l:.6}; "))
                        .unwrap_or_default(),
                    stage.note
                );
                if let Some(eval) = &stage.eval {
                    print!("{}", render_markdown(eval));
                }
            }
            println!("final checkpoint written to {}", out_dir.display());
            Ok(())
        }

        Command::Eval {
            pred,
            truth,
            records,
            out,
            tolerance_ms,
            exclude_edges_s,
        } => {
            if let Some(v) = tolerance_ms {
                config.eval.tolerance_ms = v;
            }
            if let Some(v) = exclude_edges_s {
                config.eval.exclude_edges_s = v;
            }
            let pred_sets = load_annotation_dir(&at(&pred))?;
            let truth_sets = load_annotation_dir(&at(&truth))?;
            if truth_sets.is_empty() {
                return Err(Error::invalid(format!(
                    "no .delin.json files under {}",
                    at(&truth).display()
                )));
            }
            let mut meta = BTreeMap::new();
            for dir in list_record_dirs(&at(&records))? {
                let record = read_record(&dir)?;
                meta.insert(
                    record.id.clone(),
                    RecordMeta {
                        sampling_rate_hz: record.sampling_rate_hz,
                        n_samples: record.n_samples(),
                    },
                );
            }
            let report = evaluate_dataset(&pred_sets, &truth_sets, &meta, &config.eval)?;
            let markdown = render_markdown(&report);
            let json_path = at(&out).with_extension("json");
            let md_path = at(&out).with_extension("md");
            if let Some(parent) = json_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(
                &json_path,
                serde_json::to_string_pretty(&report).expect("report serializes"),
            )
            .map_err(|e| Error::io(&json_path, e))?;
            std::fs::write(&md_path, &markdown).map_err(|e| Error::io(&md_path, e))?;
            print!("{markdown}");
            println!(
                "report written to {} and {}",
                json_path.display(),
                md_path.display()
            );
            Ok(())
        }

        Command::Plot {
            record,
            annotations,
            out,
        } => {
            let record_dir = at(&record);
            let rec = read_record(&record_dir)?;
            let ann_path = match annotations {
                Some(p) => Some(at(&p)),
                None => {
                    let sibling = record_dir
                        .parent()
                        .map(|parent| parent.join(format!("{}.delin.json", rec.id)))
                        .filter(|p| p.is_file());
                    sibling
                }
            };
            let set = match &ann_path {
                Some(path) => Some(read_annotations(path)?),
                None => None,
            };
            let svg = render_svg(&rec, set.as_ref());
            let out_path = at(&out);
            if let Some(parent) = out_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            std::fs::write(&out_path, svg).map_err(|e| Error::io(&out_path, e))?;
            println!("plot written to {}", out_path.display());
            Ok(())
        }
    }
}

fn apply_grid_overrides(
    grid: &mut GridConfig,
    merge_gap: Option<usize>,
    min_len: Option<usize>,
    conf_threshold: Option<f64>,
) -> Result<()> {
    if let Some(v) = merge_gap {
        grid.merge_gap = v;
    }
    if let Some(v) = min_len {
        grid.min_len = v;
    }
    if let Some(v) = conf_threshold {
        grid.conf_threshold = v;
    }
    grid.validate()
}

/// Loads every record subdirectory plus its `<id>.delin.json` annotations.
fn load_labeled(dir: &Path) -> Result<Vec<TrainSample>> {
    let dirs = list_record_dirs(dir)?;
    if dirs.is_empty() {
        return Err(Error::invalid(format!(
            "no record directories under {}",
            dir.display()
        )));
    }
    let mut samples = Vec::with_capacity(dirs.len());
    for record_dir in dirs {
        let record = read_record(&record_dir)?;
        let ann_path = dir.join(format!("{}.delin.json", record.id));
        let annotations = read_annotations(&ann_path)?;
        if annotations.record_id != record.id {
            return Err(Error::invalid(format!(
                "annotation file {} names record {:?}, expected {:?}",
                ann_path.display(),
                annotations.record_id,
                record.id
            )));
        }
        samples.push(TrainSample::labeled(record, annotations));
    }
    Ok(samples)
}

/// All plain `.delin.json` files in a directory (pseudolabel files are
/// excluded), sorted by name.
fn load_annotation_dir(dir: &Path) -> Result<Vec<AnnotationSet>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.ends_with(".delin.json") && !name.ends_with(".pseudo.delin.json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.into_iter().map(read_annotations).collect()
}
