//! On-disk formats.
//!
//! A stream is `<id>.jsonl` with one `{"t", "x"}` record per frame and a
//! sidecar `<id>.header.json` holding `{"id", "fps", "n_feat"}`; CSV streams
//! with one frame per row are also accepted. Labels are a JSON array of
//! `{"stream", "class", "kind", "t1", "t2", "intention"}` records and a
//! dataset is tied together by a `dataset.json` manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::Detection;
use crate::timeline::{validate_dataset, ActivityInstance, ActivityKind, ClassTable, Dataset, FeatureStream, Interval, StreamSet, TimelineError};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "dataset.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("dataset failed validation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl ToString) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamHeader {
    pub id: String,
    pub fps: f64,
    pub n_feat: usize,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    t: usize,
    x: Vec<f64>,
}

fn header_path(jsonl: &Path) -> PathBuf {
    let stem = jsonl.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    jsonl.with_file_name(format!("{stem}.header.json"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(fs_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(fs_err(dir))?;
    }
    fs::write(path, text).map_err(fs_err(path))
}

/// Writes `<dir>/<id>.jsonl` and its header; returns the JSONL path.
pub fn write_stream_jsonl(dir: &Path, stream: &FeatureStream) -> Result<PathBuf, IoError> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let path = dir.join(format!("{}.jsonl", stream.id));
    let file = fs::File::create(&path).map_err(fs_err(&path))?;
    let mut w = BufWriter::new(file);
    for (t, x) in stream.frames().enumerate() {
        let line = serde_json::to_string(&FrameRecord { t, x: x.to_vec() }).map_err(|e| format_err(&path, e))?;
        writeln!(w, "{line}").map_err(fs_err(&path))?;
    }
    w.flush().map_err(fs_err(&path))?;
    write_json(
        &header_path(&path),
        &StreamHeader {
            id: stream.id.clone(),
            fps: stream.fps,
            n_feat: stream.n_feat(),
        },
    )?;
    Ok(path)
}

pub fn read_stream_jsonl(path: &Path) -> Result<FeatureStream, IoError> {
    let hp = header_path(path);
    let header: StreamHeader = read_json(&hp)?;
    let file = fs::File::open(path).map_err(fs_err(path))?;
    let mut data = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(fs_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let expected_t = data.len() / header.n_feat.max(1);
        if rec.t != expected_t {
            return Err(parse(format!("frame index {} out of sequence, expected {expected_t}", rec.t)));
        }
        if rec.x.len() != header.n_feat {
            return Err(parse(format!("frame has {} features, header says {}", rec.x.len(), header.n_feat)));
        }
        data.extend(rec.x);
    }
    Ok(FeatureStream::from_flat(header.id, header.fps, header.n_feat, data)?)
}

/// Reads a CSV stream with one frame per row. A leading header row is
/// skipped, as is a first column named `t`.
pub fn read_stream_csv(path: &Path, id: &str, fps: f64) -> Result<FeatureStream, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| format_err(path, e))?;
    let mut frames = Vec::new();
    let mut skip_first_col = false;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, e))?;
        if i == 0 && rec.iter().any(|f| f.trim().parse::<f64>().is_err()) {
            skip_first_col = rec.get(0).map(str::trim) == Some("t");
            continue;
        }
        let row = rec
            .iter()
            .skip(skip_first_col as usize)
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IoError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
        frames.push(row);
    }
    Ok(FeatureStream::new(id, fps, frames)?)
}

/// Reads a stream by extension: `.jsonl` or `.csv`.
pub fn read_stream(path: &Path) -> Result<FeatureStream, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") => read_stream_jsonl(path),
        Some("csv") => {
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("stream");
            read_stream_csv(path, id, 15.0)
        }
        _ => Err(format_err(path, "expected a .jsonl or .csv stream")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub stream: String,
    pub class: String,
    pub kind: ActivityKind,
    pub t1: usize,
    pub t2: usize,
    pub intention: Option<String>,
}

pub fn label_records(labels: &BTreeMap<String, Vec<ActivityInstance>>) -> Vec<LabelRecord> {
    labels
        .iter()
        .flat_map(|(stream, insts)| {
            insts.iter().map(move |i| LabelRecord {
                stream: stream.clone(),
                class: i.class.clone(),
                kind: i.kind,
                t1: i.interval.t1,
                t2: i.interval.t2,
                intention: i.intention.clone(),
            })
        })
        .collect()
}

pub fn labels_from_records(records: Vec<LabelRecord>) -> BTreeMap<String, Vec<ActivityInstance>> {
    let mut out: BTreeMap<String, Vec<ActivityInstance>> = BTreeMap::new();
    for r in records {
        out.entry(r.stream).or_default().push(ActivityInstance {
            class: r.class,
            kind: r.kind,
            interval: Interval { t1: r.t1, t2: r.t2 },
            intention: r.intention,
        });
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: Option<String>,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestStream {
    pub id: String,
    /// Path relative to the manifest.
    pub file: String,
    pub intention: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub classes: ClassTable,
    pub intentions: Vec<String>,
    pub sets: Vec<StreamSet>,
    pub streams: Vec<ManifestStream>,
    /// Path of the labels file relative to the manifest.
    pub labels: String,
    pub provenance: Provenance,
}

/// Writes streams, labels and manifest under `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, ds: &Dataset, provenance: &Provenance) -> Result<PathBuf, IoError> {
    let stream_dir = dir.join("streams");
    let mut streams = Vec::with_capacity(ds.streams.len());
    for s in &ds.streams {
        write_stream_jsonl(&stream_dir, s)?;
        streams.push(ManifestStream {
            id: s.id.clone(),
            file: format!("streams/{}.jsonl", s.id),
            intention: s.intention.clone(),
        });
    }
    write_json(&dir.join("labels.json"), &label_records(&ds.labels))?;
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        classes: ds.classes.clone(),
        intentions: ds.intentions.clone(),
        sets: ds.sets.clone(),
        streams,
        labels: "labels.json".into(),
        provenance: provenance.clone(),
    };
    let path = dir.join(MANIFEST_NAME);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a dataset from a manifest file or a directory containing one, and
/// validates it.
pub fn read_dataset(path: &Path) -> Result<(Dataset, Provenance), IoError> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(format_err(
            &manifest_path,
            format!("format_version {} is not supported (expected {DATASET_FORMAT_VERSION})", manifest.format_version),
        ));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut streams = Vec::with_capacity(manifest.streams.len());
    for ms in &manifest.streams {
        let s = read_stream(&base.join(&ms.file))?;
        if s.id != ms.id {
            return Err(format_err(&manifest_path, format!("stream file {} holds id {}, expected {}", ms.file, s.id, ms.id)));
        }
        streams.push(s.with_intention(ms.intention.clone()));
    }
    let records: Vec<LabelRecord> = read_json(&base.join(&manifest.labels))?;
    let ds = Dataset {
        classes: manifest.classes,
        intentions: manifest.intentions,
        streams,
        labels: labels_from_records(records),
        sets: manifest.sets,
    };
    let violations = validate_dataset(&ds);
    if let Some(v) = violations.first() {
        return Err(IoError::Invalid(format!("{v} ({} violations)", violations.len())));
    }
    Ok((ds, manifest.provenance))
}

/// SHA-256 over stream contents and labels, independent of file layout.
pub fn dataset_hash(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for s in &ds.streams {
        h.update(s.id.as_bytes());
        h.update((s.n_feat() as u64).to_le_bytes());
        for v in s.as_flat() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.update(serde_json::to_vec(&label_records(&ds.labels)).expect("labels serialize"));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<(), IoError> {
    write_json(path, dets)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>, IoError> {
    read_json(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{sample_scenario, ScenarioConfig};

    #[test]
    fn dataset_round_trip() {
        let cfg = ScenarioConfig {
            n_sets: 2,
            streams_per_set: 2,
            ..ScenarioConfig::default()
        };
        let g = sample_scenario(&cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let prov = Provenance {
            generator: Some("DEFAULT".into()),
            seed: Some(4),
            config_hash: Some(g.config_hash.clone()),
        };
        write_dataset(dir.path(), &g.dataset, &prov).unwrap();
        let (back, p) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, g.dataset);
        assert_eq!(p, prov);
        assert_eq!(dataset_hash(&back), dataset_hash(&g.dataset));
    }

    #[test]
    fn csv_stream_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "t,f0,f1\n0,1.0,2.0\n1,3.0,4.5\n").unwrap();
        let s = read_stream(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.frame(1), &[3.0, 4.5]);
    }

    #[test]
    fn out_of_sequence_frame_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = FeatureStream::new("x", 10.0, vec![vec![1.0], vec![2.0]]).unwrap();
        let p = write_stream_jsonl(dir.path(), &s).unwrap();
        fs::write(&p, "{\"t\":0,\"x\":[1.0]}\n{\"t\":5,\"x\":[2.0]}\n").unwrap();
        assert!(matches!(read_stream(&p), Err(IoError::Parse { line: 2, .. })));
    }
}
