//! Filesystem-level pseudolabeling and the four-stage schedule, on a
//! deliberately tiny geometry (2-second records, 10 grid intervals).

use std::path::Path;

use pqrst::config::ToolkitConfig;
use pqrst::dsp::StftConfig;
use pqrst::grid_codec::GridConfig;
use pqrst::model::{
    build_model, BlockSpec, ModelConfig, TrainConfig, TrainContext, TrainSample,
};
use pqrst::selftrain::{pseudolabel, selftrain_run, PseudolabelManifest};
use pqrst::signal_io::{synth_record, write_record, SynthSpec, WaveClass};

fn tiny_toolkit() -> ToolkitConfig {
    let mut config = ToolkitConfig::default();
    config.grid = GridConfig {
        n_intervals: 10,
        record_len: 2000,
        ..GridConfig::default()
    };
    config.stft = StftConfig {
        n_mel: 16,
        ..StftConfig::default()
    };
    config.model = ModelConfig {
        n_leads: 2,
        n_mel: 16,
        n_frames: 40,
        n_intervals: 10,
        stem_channels: 4,
        blocks: vec![
            BlockSpec { channels: 4, time_stride: 2 },
            BlockSpec { channels: 8, time_stride: 2 },
        ],
        seed: 5,
    };
    config.train = TrainConfig {
        epochs: 2,
        batch_size: 2,
        ..TrainConfig::default()
    };
    config.validate().unwrap();
    config
}

fn tiny_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        duration_s: 2.0,
        n_leads: 2,
        seed,
        ..SynthSpec::default()
    }
}

fn write_corpus(dir: &Path, n: usize, seed_base: u64) {
    for i in 0..n {
        let (record, _) = synth_record(&tiny_spec(seed_base + i as u64), &format!("u{i:03}")).unwrap();
        write_record(&record, dir.join(&record.id)).unwrap();
    }
}

#[test]
fn constant_half_model_selects_by_the_tie_rule() {
    let config = tiny_toolkit();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 8, 100);

    // All-zero parameters: every confidence is exactly 0.5, every score 0.
    let mut params = build_model(&config.model).unwrap();
    params.data.fill(0.0);
    let ctx = TrainContext {
        grid: &config.grid,
        stft: &config.stft,
        augment: &config.augment,
        sample_rate_hz: config.sample_rate_hz,
    };
    let outcome = pseudolabel(&params, dir.path(), &ctx, 50.0).unwrap();
    assert!(outcome.skipped.is_empty());
    assert_eq!(outcome.scored.len(), 8);
    for s in &outcome.scored {
        for class in WaveClass::ALL {
            assert_eq!(s.scores[class.index()].mean, 0.0);
            assert_eq!(s.scores[class.index()].std, 0.0);
        }
        // Nothing clears the 0.5 decoding threshold.
        assert!(s.predicted.segments.is_empty());
    }
    // round(50% of 8) = 4 per class, ties broken by ascending id.
    let expected: Vec<String> = (0..4).map(|i| format!("u{i:03}")).collect();
    for class in WaveClass::ALL {
        assert_eq!(outcome.manifest.selected_for(class), expected.as_slice());
    }
    // Selected records carry all-true masks here (same ids per class).
    for id in &expected {
        let sel = &outcome.manifest.records[id];
        assert!(sel.p && sel.qrs && sel.t);
    }

    // Artifacts: pseudo annotations beside records, manifest parseable.
    for i in 0..8 {
        assert!(dir.path().join(format!("u{i:03}.pseudo.delin.json")).is_file());
    }
    let manifest_text =
        std::fs::read_to_string(dir.path().join("pseudolabels/manifest.json")).unwrap();
    let parsed: PseudolabelManifest = serde_json::from_str(&manifest_text).unwrap();
    assert_eq!(parsed.selected, outcome.manifest.selected);
    assert_eq!(parsed.top_percent, 50.0);
    assert!(!parsed.provenance.checkpoint_id.is_empty());

    // A re-run reproduces the identical selection.
    let again = pseudolabel(&params, dir.path(), &ctx, 50.0).unwrap();
    assert_eq!(again.manifest.selected, outcome.manifest.selected);
    assert_eq!(again.manifest.records, outcome.manifest.records);
}

#[test]
fn unreadable_records_are_skipped_and_counted() {
    let config = tiny_toolkit();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 200);
    // A directory that looks like a record but has a corrupt header.
    std::fs::create_dir(dir.path().join("broken")).unwrap();
    std::fs::write(dir.path().join("broken/header.json"), b"not json").unwrap();

    let params = build_model(&config.model).unwrap();
    let ctx = TrainContext {
        grid: &config.grid,
        stft: &config.stft,
        augment: &config.augment,
        sample_rate_hz: config.sample_rate_hz,
    };
    let outcome = pseudolabel(&params, dir.path(), &ctx, 100.0).unwrap();
    assert_eq!(outcome.scored.len(), 3);
    assert_eq!(outcome.skipped.len(), 1);
    assert!(outcome.skipped[0].0.ends_with("broken"));
    // 100%: every readable record selected for every class.
    for class in WaveClass::ALL {
        assert_eq!(outcome.manifest.selected_for(class).len(), 3);
    }
}

#[test]
fn invalid_top_percent_rejected() {
    let config = tiny_toolkit();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2, 300);
    let params = build_model(&config.model).unwrap();
    let ctx = TrainContext {
        grid: &config.grid,
        stft: &config.stft,
        augment: &config.augment,
        sample_rate_hz: config.sample_rate_hz,
    };
    assert!(pseudolabel(&params, dir.path(), &ctx, 0.0).is_err());
    assert!(pseudolabel(&params, dir.path(), &ctx, 100.5).is_err());
    let labeled: Vec<TrainSample> = (0..2)
        .map(|i| {
            let (r, a) = synth_record(&tiny_spec(400 + i), &format!("l{i}")).unwrap();
            TrainSample::labeled(r, a)
        })
        .collect();
    assert!(selftrain_run(
        &labeled,
        dir.path(),
        &config.model,
        &config.train,
        &ctx,
        &config.eval,
        0.0,
    )
    .is_err());
}

#[test]
fn four_stage_schedule_completes_and_is_deterministic() {
    let config = tiny_toolkit();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 4, 500);
    let labeled: Vec<TrainSample> = (0..2)
        .map(|i| {
            let (r, a) = synth_record(&tiny_spec(600 + i), &format!("l{i}")).unwrap();
            TrainSample::labeled(r, a)
        })
        .collect();
    let ctx = TrainContext {
        grid: &config.grid,
        stft: &config.stft,
        augment: &config.augment,
        sample_rate_hz: config.sample_rate_hz,
    };

    let run = || {
        selftrain_run(
            &labeled,
            dir.path(),
            &config.model,
            &config.train,
            &ctx,
            &config.eval,
            50.0,
        )
        .unwrap()
    };
    let first = run();
    assert_eq!(first.stages.len(), 4);
    let names: Vec<_> = first.stages.iter().map(|s| s.stage).collect();
    assert_eq!(names, ["base_train", "pseudolabel", "pseudo_train", "fine_tune"]);
    // Training stages carry loss histories; eval reports on stages 1 and 4.
    assert_eq!(first.stages[0].loss_history.len(), config.train.epochs);
    assert!(first.stages[0].eval.is_some());
    assert!(first.stages[3].eval.is_some());
    assert_eq!(first.manifest.selected_for(WaveClass::P).len(), 2);

    // Identical seeds and inputs give an identical final model.
    let second = run();
    assert_eq!(first.params.data, second.params.data);
    assert_eq!(first.base_params.data, second.base_params.data);
    assert_eq!(first.manifest.selected, second.manifest.selected);
}
