//! Exercises the C ABI exactly as a foreign caller would: through raw
//! pointers, status codes, and the last-error message.

use std::ffi::{CStr, CString};
use std::ptr;

use pqrst_ffi::*;

fn c(path: &std::path::Path) -> CString {
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(pqrst_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

#[test]
fn version_is_a_c_string() {
    let version = unsafe { CStr::from_ptr(pqrst_version()) };
    assert!(!version.to_bytes().is_empty());
}

#[test]
fn synth_write_read_and_accessors() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut record: *mut PqrstRecord = ptr::null_mut();
        let mut truth: *mut PqrstAnnotations = ptr::null_mut();
        let id = CString::new("ffi-rec").unwrap();
        let status = pqrst_record_synth(
            10.0,
            1000,
            60.0,
            3,
            0.02,
            42,
            id.as_ptr(),
            &mut record,
            &mut truth,
        );
        assert_eq!(status, PqrstStatus::Ok);
        assert_eq!(pqrst_record_n_leads(record), 3);
        assert_eq!(pqrst_record_n_samples(record), 10_000);
        assert_eq!(pqrst_record_sampling_rate(record), 1000);
        assert_eq!(pqrst_annotations_len(truth), 30);

        // Segment accessor round-trips class and bounds.
        let mut seg = PqrstSegment {
            class: PqrstWaveClass::P,
            onset: 0,
            offset: 0,
            confidence: 0.0,
            has_confidence: true,
        };
        assert_eq!(pqrst_annotations_segment(truth, 0, &mut seg), PqrstStatus::Ok);
        assert!(seg.onset < seg.offset);
        assert!(!seg.has_confidence);
        assert_eq!(
            pqrst_annotations_segment(truth, 999, &mut seg),
            PqrstStatus::ValidationError
        );

        // Lead copy: exact length required.
        let mut buffer = vec![0.0f32; 10_000];
        assert_eq!(
            pqrst_record_copy_lead(record, 0, buffer.as_mut_ptr(), buffer.len()),
            PqrstStatus::Ok
        );
        assert!(buffer.iter().any(|&v| v != 0.0));
        assert_eq!(
            pqrst_record_copy_lead(record, 0, buffer.as_mut_ptr(), 10),
            PqrstStatus::ValidationError
        );
        assert_eq!(
            pqrst_record_copy_lead(record, 7, buffer.as_mut_ptr(), buffer.len()),
            PqrstStatus::ValidationError
        );

        // Write, then read back through the ABI.
        let rec_path = c(&dir.path().join("rec"));
        assert_eq!(pqrst_record_write(record, rec_path.as_ptr()), PqrstStatus::Ok);
        let mut reread: *mut PqrstRecord = ptr::null_mut();
        assert_eq!(pqrst_record_read(rec_path.as_ptr(), &mut reread), PqrstStatus::Ok);
        assert_eq!(pqrst_record_n_samples(reread), 10_000);

        // Annotations file round trip plus JSON export.
        let ann_path = c(&dir.path().join("rec.delin.json"));
        assert_eq!(pqrst_annotations_write(truth, ann_path.as_ptr()), PqrstStatus::Ok);
        let mut ann2: *mut PqrstAnnotations = ptr::null_mut();
        assert_eq!(pqrst_annotations_read(ann_path.as_ptr(), &mut ann2), PqrstStatus::Ok);
        assert_eq!(pqrst_annotations_len(ann2), 30);
        let mut json: *mut std::os::raw::c_char = ptr::null_mut();
        assert_eq!(pqrst_annotations_to_json(ann2, &mut json), PqrstStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_string();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["record_id"], "ffi-rec");
        assert_eq!(value["segments"].as_array().unwrap().len(), 30);
        pqrst_string_free(json);

        pqrst_record_free(record);
        pqrst_record_free(reread);
        pqrst_annotations_free(truth);
        pqrst_annotations_free(ann2);
    }
}

#[test]
fn error_paths_set_status_and_message() {
    unsafe {
        let mut record: *mut PqrstRecord = ptr::null_mut();
        let missing = CString::new("/nonexistent/record").unwrap();
        assert_eq!(
            pqrst_record_read(missing.as_ptr(), &mut record),
            PqrstStatus::IoError
        );
        assert!(last_error().contains("nonexistent"));
        assert!(record.is_null());

        assert_eq!(
            pqrst_record_read(ptr::null(), &mut record),
            PqrstStatus::NullArgument
        );
        assert_eq!(
            pqrst_record_read(missing.as_ptr(), ptr::null_mut()),
            PqrstStatus::NullArgument
        );

        // Invalid synth parameters surface as validation errors.
        let mut truth: *mut PqrstAnnotations = ptr::null_mut();
        let status = pqrst_record_synth(
            10.0,
            1000,
            500.0, // heart rate far too high
            1,
            0.0,
            0,
            ptr::null(),
            &mut record,
            &mut truth,
        );
        assert_eq!(status, PqrstStatus::ValidationError);
        assert!(last_error().contains("heart rate"));

        // Null handles are tolerated by the free functions.
        pqrst_record_free(ptr::null_mut());
        pqrst_annotations_free(ptr::null_mut());
        pqrst_model_free(ptr::null_mut());
        pqrst_string_free(ptr::null_mut());
    }
}

#[test]
fn model_load_and_predict_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();

    // Build a tiny checkpoint with the Rust API; the C side then loads
    // and runs it. Geometry: 2-second records on a 10-interval grid.
    let model_config = pqrst::model::ModelConfig {
        n_leads: 2,
        n_mel: 16,
        n_frames: 40,
        n_intervals: 10,
        stem_channels: 4,
        blocks: vec![
            pqrst::model::BlockSpec { channels: 4, time_stride: 2 },
            pqrst::model::BlockSpec { channels: 8, time_stride: 2 },
        ],
        seed: 1,
    };
    let params = pqrst::model::build_model(&model_config).unwrap();
    let ckpt = dir.path().join("ckpt");
    pqrst::model::save_checkpoint(&params, 0, &ckpt).unwrap();

    let mut config = pqrst::config::ToolkitConfig::default();
    config.grid.n_intervals = 10;
    config.grid.record_len = 2000;
    config.stft.n_mel = 16;
    config.model = model_config;
    config.validate().unwrap();
    let config_path = dir.path().join("toolkit.toml");
    std::fs::write(&config_path, config.to_toml()).unwrap();

    unsafe {
        let mut model: *mut PqrstModel = ptr::null_mut();
        let ckpt_c = c(&ckpt);
        let config_c = c(&config_path);
        assert_eq!(
            pqrst_model_load(ckpt_c.as_ptr(), config_c.as_ptr(), &mut model),
            PqrstStatus::Ok,
            "{}",
            last_error()
        );

        let mut record: *mut PqrstRecord = ptr::null_mut();
        assert_eq!(
            pqrst_record_synth(2.0, 1000, 60.0, 2, 0.02, 9, ptr::null(), &mut record, ptr::null_mut()),
            PqrstStatus::Ok
        );

        let mut predictions: *mut PqrstAnnotations = ptr::null_mut();
        assert_eq!(
            pqrst_model_predict(model, record, &mut predictions),
            PqrstStatus::Ok,
            "{}",
            last_error()
        );
        // An untrained model may detect anything or nothing; the handle
        // itself must be live and well-formed.
        let _ = pqrst_annotations_len(predictions);

        let mut means = [0.0f64; 3];
        let mut stds = [0.0f64; 3];
        assert_eq!(
            pqrst_model_delineation_scores(model, record, means.as_mut_ptr(), stds.as_mut_ptr()),
            PqrstStatus::Ok
        );
        for m in means {
            assert!((0.0..=0.5).contains(&m));
        }
        for s in stds {
            assert!(s >= 0.0);
        }

        // A record that does not match the grid geometry is rejected.
        let mut wrong: *mut PqrstRecord = ptr::null_mut();
        assert_eq!(
            pqrst_record_synth(10.0, 1000, 60.0, 2, 0.02, 9, ptr::null(), &mut wrong, ptr::null_mut()),
            PqrstStatus::Ok
        );
        let mut nope: *mut PqrstAnnotations = ptr::null_mut();
        assert_eq!(
            pqrst_model_predict(model, wrong, &mut nope),
            PqrstStatus::ValidationError
        );

        pqrst_annotations_free(predictions);
        pqrst_record_free(record);
        pqrst_record_free(wrong);
        pqrst_model_free(model);
    }
}

#[test]
fn generated_header_covers_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("pqrst.h");
    let text = std::fs::read_to_string(header).expect("header generated by build.rs");
    for symbol in [
        "pqrst_version",
        "pqrst_last_error_message",
        "pqrst_string_free",
        "pqrst_record_read",
        "pqrst_record_write",
        "pqrst_record_synth",
        "pqrst_record_copy_lead",
        "pqrst_record_free",
        "pqrst_model_load",
        "pqrst_model_predict",
        "pqrst_model_delineation_scores",
        "pqrst_model_free",
        "pqrst_annotations_read",
        "pqrst_annotations_write",
        "pqrst_annotations_len",
        "pqrst_annotations_segment",
        "pqrst_annotations_to_json",
        "pqrst_annotations_free",
        "PqrstStatus",
        "PqrstSegment",
    ] {
        assert!(text.contains(symbol), "header is missing {symbol}");
    }
}
