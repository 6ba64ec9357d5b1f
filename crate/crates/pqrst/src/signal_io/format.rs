//! On-disk formats: record directories, `.delin.json` annotations, CSV import.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::{AnnotationSet, EcgRecord, Segment};

#[derive(Serialize, Deserialize)]
struct HeaderJson {
    id: String,
    sampling_rate_hz: u32,
    n_samples: usize,
    leads: Vec<String>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

/// Reads a record directory (`header.json` + `signal.bin`).
///
/// Sample values are decoded bit-exactly from the little-endian float32 blob.
pub fn read_record(dir: impl AsRef<Path>) -> Result<EcgRecord> {
    let dir = dir.as_ref();
    let header_path = dir.join("header.json");
    let signal_path = dir.join("signal.bin");

    let header_text =
        fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header: HeaderJson = serde_json::from_str(&header_text)
        .map_err(|e| Error::malformed(&header_path, e.to_string()))?;

    let blob = fs::read(&signal_path).map_err(|e| Error::io(&signal_path, e))?;
    let expected = header
        .leads
        .len()
        .checked_mul(header.n_samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::malformed(&header_path, "sample count overflows"))?;
    if blob.len() != expected {
        return Err(Error::malformed(
            &signal_path,
            format!(
                "signal holds {} bytes, header declares {} leads x {} samples = {} bytes",
                blob.len(),
                header.leads.len(),
                header.n_samples,
                expected
            ),
        ));
    }

    let mut samples = Vec::with_capacity(header.leads.len());
    for lead_idx in 0..header.leads.len() {
        let start = lead_idx * header.n_samples * 4;
        let row: Vec<f32> = blob[start..start + header.n_samples * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(bad) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::malformed(
                &signal_path,
                format!("non-finite sample value {bad} in lead {lead_idx}"),
            ));
        }
        samples.push(row);
    }

    EcgRecord::new(
        header.id,
        header.sampling_rate_hz,
        header.leads,
        samples,
        header.meta,
    )
}

/// Writes a record directory; [`read_record`] inverts it exactly.
///
/// Files land via a temp-file rename so a failed write never leaves a
/// partial `header.json` behind.
pub fn write_record(record: &EcgRecord, dir: impl AsRef<Path>) -> Result<()> {
    record.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut blob = Vec::with_capacity(record.n_leads() * record.n_samples() * 4);
    for row in &record.samples {
        for v in row {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(&dir.join("signal.bin"), &blob)?;

    let header = HeaderJson {
        id: record.id.clone(),
        sampling_rate_hz: record.sampling_rate_hz,
        n_samples: record.n_samples(),
        leads: record.leads.clone(),
        meta: record.meta.clone(),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    write_atomic(&dir.join("header.json"), text.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct DelinJson {
    record_id: String,
    segments: Vec<Segment>,
}

/// Reads a `.delin.json` annotation file, normalizing segment order.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: DelinJson =
        serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
    AnnotationSet::new(raw.record_id, raw.segments)
}

/// Writes a `.delin.json` annotation file with segments in canonical order.
pub fn write_annotations(set: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    let raw = DelinJson {
        record_id: set.record_id.clone(),
        segments: set.segments.clone(),
    };
    let text = serde_json::to_string_pretty(&raw).expect("annotations serialize");
    write_atomic(path.as_ref(), text.as_bytes())
}

/// Imports a CSV with a header row: first column time (seconds) or sample
/// index, one column per lead.
///
/// The sampling rate is taken from `sampling_rate_hz` when given, otherwise
/// inferred from the first two entries of a time column.
pub fn import_csv(
    path: impl AsRef<Path>,
    id: &str,
    sampling_rate_hz: Option<u32>,
) -> Result<EcgRecord> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                Error::io(path, std::io::Error::other(e.to_string()))
            }
            _ => Error::malformed(path, e.to_string()),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::malformed(path, e.to_string()))?
        .clone();
    if headers.len() < 2 {
        return Err(Error::malformed(
            path,
            "need a time/index column plus at least one lead column",
        ));
    }
    let first = headers.get(0).unwrap_or("").to_ascii_lowercase();
    let is_time = matches!(first.as_str(), "time" | "t" | "time_s" | "seconds" | "sec");
    let leads: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();

    let mut first_col: Vec<f64> = Vec::new();
    let mut samples: Vec<Vec<f32>> = vec![Vec::new(); leads.len()];
    for row in reader.records() {
        let row = row.map_err(|e| Error::malformed(path, e.to_string()))?;
        if row.len() != headers.len() {
            return Err(Error::malformed(
                path,
                format!("row has {} fields, header has {}", row.len(), headers.len()),
            ));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::malformed(path, format!("not a number: {s:?}")))
        };
        first_col.push(parse(row.get(0).unwrap())?);
        for (lead_idx, field) in row.iter().skip(1).enumerate() {
            samples[lead_idx].push(parse(field)? as f32);
        }
    }
    if first_col.len() < 2 {
        return Err(Error::malformed(path, "need at least two data rows"));
    }

    let rate = match (sampling_rate_hz, is_time) {
        (Some(r), _) => r,
        (None, true) => {
            let dt = first_col[1] - first_col[0];
            if !(dt > 0.0) {
                return Err(Error::malformed(path, "time column is not increasing"));
            }
            (1.0 / dt).round() as u32
        }
        (None, false) => {
            return Err(Error::malformed(
                path,
                "first column is an index; pass an explicit sampling rate",
            ))
        }
    };

    EcgRecord::new(id, rate, leads, samples, BTreeMap::new())
}

/// Writes `bytes` to `path` through a sibling temp file plus rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(path, e))?;
    let write_all = file.write_all(bytes).and_then(|_| file.sync_all());
    drop(file);
    if let Err(e) = write_all {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::WaveClass;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_record(rng: &mut ChaCha8Rng) -> EcgRecord {
        let n_leads = rng.random_range(1..=12usize);
        let n = rng.random_range(1..=400usize);
        let leads = (0..n_leads).map(|i| format!("L{i}")).collect();
        let samples = (0..n_leads)
            .map(|_| (0..n).map(|_| rng.random_range(-5.0f32..5.0)).collect())
            .collect();
        let mut meta = BTreeMap::new();
        if rng.random_bool(0.5) {
            meta.insert("note".to_string(), format!("x{}", rng.random_range(0..99)));
        }
        EcgRecord::new(format!("r{}", rng.random_range(0..1_000_000)),
            rng.random_range(1..=2000u32), leads, samples, meta).unwrap()
    }

    #[test]
    fn read_valid_record() {
        let dir = tempfile::tempdir().unwrap();
        let leads: Vec<String> = (0..12).map(|i| format!("L{i}")).collect();
        let samples: Vec<Vec<f32>> = (0..12)
            .map(|l| (0..5000).map(|i| (l * 5000 + i) as f32 * 0.001).collect())
            .collect();
        let rec = EcgRecord::new("twelve", 500, leads, samples, BTreeMap::new()).unwrap();
        write_record(&rec, dir.path().join("twelve")).unwrap();
        let back = read_record(dir.path().join("twelve")).unwrap();
        assert_eq!(back.n_samples(), 5000);
        assert_eq!(back.n_leads(), 12);
        assert_eq!(back, rec);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let rec = EcgRecord::new(
            "short",
            1000,
            vec!["I".into()],
            vec![vec![0.25; 5000]],
            BTreeMap::new(),
        )
        .unwrap();
        let path = dir.path().join("short");
        write_record(&rec, &path).unwrap();
        // Truncate one sample off the blob: header says 5000, file holds 4999.
        let blob = fs::read(path.join("signal.bin")).unwrap();
        fs::write(path.join("signal.bin"), &blob[..blob.len() - 4]).unwrap();
        let err = read_record(&path).unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }), "{err}");
    }

    #[test]
    fn non_finite_samples_rejected_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let rec = EcgRecord::new("nan", 1000, vec!["I".into()], vec![vec![1.0; 4]], BTreeMap::new())
            .unwrap();
        let path = dir.path().join("nan");
        write_record(&rec, &path).unwrap();
        let mut blob = fs::read(path.join("signal.bin")).unwrap();
        blob[..4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(path.join("signal.bin"), &blob).unwrap();
        assert!(matches!(read_record(&path), Err(Error::Malformed { .. })));
    }

    #[test]
    fn record_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..100 {
            let rec = random_record(&mut rng);
            let path = dir.path().join(format!("rt{i}"));
            write_record(&rec, &path).unwrap();
            let back = read_record(&path).unwrap();
            assert_eq!(back, rec);
            // Bit-exact: the raw blobs agree too.
            for (a, b) in rec.samples.iter().flatten().zip(back.samples.iter().flatten()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn one_lead_record_creates_two_files() {
        let dir = tempfile::tempdir().unwrap();
        let rec = EcgRecord::new("one", 250, vec!["I".into()], vec![vec![0.0; 3]], BTreeMap::new())
            .unwrap();
        let path = dir.path().join("one");
        write_record(&rec, &path).unwrap();
        assert!(path.join("header.json").is_file());
        assert!(path.join("signal.bin").is_file());
    }

    #[test]
    fn unwritable_path_leaves_no_partial_header() {
        let dir = tempfile::tempdir().unwrap();
        let blocked = dir.path().join("blocked");
        // A plain file where the record directory should go.
        fs::write(&blocked, b"occupied").unwrap();
        let rec = EcgRecord::new("x", 1000, vec!["I".into()], vec![vec![0.0; 3]], BTreeMap::new())
            .unwrap();
        let err = write_record(&rec, &blocked).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(!blocked.join("header.json").exists());
    }

    #[test]
    fn annotations_parse_and_normalize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.delin.json");
        fs::write(
            &path,
            r#"{"record_id":"r","segments":[
                {"class":"T","onset":350,"offset":500,"confidence":null},
                {"class":"P","onset":100,"offset":180,"confidence":null},
                {"class":"QRS","onset":200,"offset":290,"confidence":0.75}
            ]}"#,
        )
        .unwrap();
        let set = read_annotations(&path).unwrap();
        assert_eq!(set.segments.len(), 3);
        assert_eq!(set.segments[0].wave_class, WaveClass::P);
        assert_eq!(set.segments[1].confidence, Some(0.75));
    }

    #[test]
    fn annotations_reject_overlap_and_bad_class() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.delin.json");
        fs::write(
            &path,
            r#"{"record_id":"r","segments":[
                {"class":"P","onset":100,"offset":200,"confidence":null},
                {"class":"P","onset":150,"offset":250,"confidence":null}
            ]}"#,
        )
        .unwrap();
        assert!(matches!(read_annotations(&path), Err(Error::Invalid(_))));

        fs::write(
            &path,
            r#"{"record_id":"r","segments":[{"class":"U","onset":1,"offset":2,"confidence":null}]}"#,
        )
        .unwrap();
        assert!(matches!(read_annotations(&path), Err(Error::Malformed { .. })));

        fs::write(
            &path,
            r#"{"record_id":"r","segments":[{"class":"P","onset":5,"offset":5,"confidence":null}]}"#,
        )
        .unwrap();
        assert!(matches!(read_annotations(&path), Err(Error::Invalid(_))));
    }

    #[test]
    fn annotation_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for i in 0..100 {
            // Non-overlapping per class by construction.
            let mut segments = Vec::new();
            for class in WaveClass::ALL {
                let mut cursor = rng.random_range(0..50usize);
                for _ in 0..rng.random_range(0..6usize) {
                    let len = rng.random_range(1..120usize);
                    let onset = cursor;
                    let offset = onset + len;
                    let mut seg = Segment::new(class, onset, offset);
                    if rng.random_bool(0.5) {
                        seg = seg.with_confidence(rng.random_range(0.01..0.99));
                    }
                    segments.push(seg);
                    cursor = offset + rng.random_range(0..200usize);
                }
            }
            let set = AnnotationSet::new(format!("rt{i}"), segments).unwrap();
            let path = dir.path().join(format!("rt{i}.delin.json"));
            write_annotations(&set, &path).unwrap();
            let back = read_annotations(&path).unwrap();
            assert_eq!(back, set);
        }
    }

    #[test]
    fn csv_import_time_and_index_columns() {
        let dir = tempfile::tempdir().unwrap();
        let timed = dir.path().join("timed.csv");
        fs::write(&timed, "time,I,II\n0.000,0.1,0.2\n0.002,0.3,0.4\n0.004,0.5,0.6\n").unwrap();
        let rec = import_csv(&timed, "timed", None).unwrap();
        assert_eq!(rec.sampling_rate_hz, 500);
        assert_eq!(rec.leads, vec!["I".to_string(), "II".to_string()]);
        assert_eq!(rec.samples[1], vec![0.2, 0.4, 0.6]);

        let indexed = dir.path().join("indexed.csv");
        fs::write(&indexed, "index,I\n0,0.1\n1,0.3\n").unwrap();
        assert!(import_csv(&indexed, "indexed", None).is_err());
        let rec = import_csv(&indexed, "indexed", Some(250)).unwrap();
        assert_eq!(rec.sampling_rate_hz, 250);
    }
}
