//! Dataset manifests: one JSON header line, then one JSON record per sample.
//!
//! Feature payloads are either inline decimal arrays (shortest round-trip
//! formatting, so values survive save/load bit-exactly) or `{offset, len}`
//! references into a little-endian f64 sidecar blob next to the manifest.
//! Offsets and lengths count elements, not bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Dataset, MultiViewSample, Split};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MANIFEST_VERSION: u32 = 1;

/// Where [`save_manifest`] puts feature payloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureStorage {
    Inline,
    Sidecar,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    classes: usize,
    views: usize,
    feature_dim: usize,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_groups: Option<Vec<usize>>,
    class_names: Vec<String>,
    view_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sidecar: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ViewPayload {
    Inline(Vec<f64>),
    Sidecar { offset: u64, len: u64 },
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    label: usize,
    views: Vec<ViewPayload>,
}

fn sidecar_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "features".into());
    format!("{stem}.features.bin")
}

pub fn save_manifest(dataset: &Dataset, path: &Path, storage: FeatureStorage) -> Result<()> {
    dataset.validate()?;
    for s in &dataset.samples {
        for (v, feat) in s.views.iter().enumerate() {
            if !feat.all_finite() {
                return Err(Error::Schema(format!(
                    "sample {} view {v} holds a non-finite value",
                    s.id
                )));
            }
        }
    }

    let sidecar = match storage {
        FeatureStorage::Inline => None,
        FeatureStorage::Sidecar => Some(sidecar_name(path)),
    };
    let header = Header {
        version: MANIFEST_VERSION,
        classes: dataset.classes,
        views: dataset.views,
        feature_dim: dataset.feature_dim,
        split: dataset.split,
        class_groups: dataset.class_groups.clone(),
        class_names: dataset.class_names.clone(),
        view_names: dataset.view_names.clone(),
        sidecar: sidecar.clone(),
    };

    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header).map_err(io_from_json)?;
    out.write_all(b"\n")?;

    let mut blob: Vec<u8> = Vec::new();
    for s in &dataset.samples {
        let views = s
            .views
            .iter()
            .map(|feat| match storage {
                FeatureStorage::Inline => ViewPayload::Inline(feat.data().to_vec()),
                FeatureStorage::Sidecar => {
                    let offset = (blob.len() / 8) as u64;
                    for x in feat.data() {
                        blob.extend_from_slice(&x.to_le_bytes());
                    }
                    ViewPayload::Sidecar { offset, len: feat.len() as u64 }
                }
            })
            .collect();
        let record = Record { id: s.id.clone(), label: s.label, views };
        serde_json::to_writer(&mut out, &record).map_err(io_from_json)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    if let Some(name) = sidecar {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        fs::write(dir.join(name), blob)?;
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{} is empty", path.display())))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| Error::Schema(format!("manifest header: {e}")))?;
    if header.version != MANIFEST_VERSION {
        return Err(Error::Schema(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            header.version
        )));
    }

    let blob: Option<Vec<f64>> = match &header.sidecar {
        None => None,
        Some(name) => {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            let mut bytes = Vec::new();
            File::open(dir.join(name))?.read_to_end(&mut bytes)?;
            if bytes.len() % 8 != 0 {
                return Err(Error::Schema(format!(
                    "sidecar {name} holds {} bytes, not a multiple of 8",
                    bytes.len()
                )));
            }
            Some(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
    };

    let mut samples = Vec::new();
    for (lineno, line) in lines {
        let record: Record = serde_json::from_str(line)
            .map_err(|e| Error::Schema(format!("manifest line {}: {e}", lineno + 1)))?;
        let mut views = Vec::with_capacity(record.views.len());
        for (v, payload) in record.views.iter().enumerate() {
            let data = match payload {
                ViewPayload::Inline(values) => values.clone(),
                ViewPayload::Sidecar { offset, len } => {
                    let blob = blob.as_ref().ok_or_else(|| {
                        Error::Schema(format!(
                            "sample {} view {v} references a sidecar, but the header names none",
                            record.id
                        ))
                    })?;
                    let (start, n) = (*offset as usize, *len as usize);
                    let end = start.checked_add(n).filter(|e| *e <= blob.len());
                    let Some(end) = end else {
                        return Err(Error::Schema(format!(
                            "sample {} view {v} points at elements {start}..{} outside the sidecar ({} elements)",
                            record.id,
                            start.saturating_add(n),
                            blob.len()
                        )));
                    };
                    blob[start..end].to_vec()
                }
            };
            if data.len() != header.feature_dim {
                return Err(Error::Schema(format!(
                    "sample {} view {v} has {} values, expected {}",
                    record.id,
                    data.len(),
                    header.feature_dim
                )));
            }
            views.push(Tensor::vector(data));
        }
        samples.push(MultiViewSample { id: record.id, label: record.label, views });
    }

    let dataset = Dataset {
        samples,
        classes: header.classes,
        views: header.views,
        feature_dim: header.feature_dim,
        class_groups: header.class_groups,
        split: header.split,
        class_names: header.class_names,
        view_names: header.view_names,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn io_from_json(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_synthetic, SynthConfig};

    fn tiny() -> Dataset {
        let cfg = SynthConfig {
            classes: 4,
            groups: 2,
            views: 3,
            feature_dim: 5,
            train_per_class: 3,
            test_per_class: 2,
            ..SynthConfig::default()
        };
        generate_synthetic(&cfg).unwrap().0
    }

    #[test]
    fn inline_round_trip_is_exact() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        save_manifest(&ds, &path, FeatureStorage::Inline).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), ds);
    }

    #[test]
    fn sidecar_round_trip_is_exact() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        save_manifest(&ds, &path, FeatureStorage::Sidecar).unwrap();
        assert!(dir.path().join("train.features.bin").exists());
        assert_eq!(load_manifest(&path).unwrap(), ds);
    }

    #[test]
    fn saving_twice_produces_identical_bytes() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        save_manifest(&ds, &a, FeatureStorage::Inline).unwrap();
        save_manifest(&ds, &b, FeatureStorage::Inline).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    fn write_lines(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.join("m.jsonl");
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    fn header_line() -> &'static str {
        r#"{"version":1,"classes":2,"views":2,"feature_dim":2,"split":"train","class_names":["a","b"],"view_names":["v0","v1"]}"#
    }

    #[test]
    fn missing_view_is_an_alignment_error_naming_the_sample() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[header_line(), r#"{"id":"bad-sample","label":0,"views":[[1.0,2.0]]}"#],
        );
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(&err, Error::Alignment(msg) if msg.contains("bad-sample")), "{err}");
    }

    #[test]
    fn out_of_range_label_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[header_line(), r#"{"id":"s","label":9,"views":[[1.0,2.0],[3.0,4.0]]}"#],
        );
        assert!(matches!(load_manifest(&path).unwrap_err(), Error::Schema(_)));
    }

    #[test]
    fn wrong_dimension_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[header_line(), r#"{"id":"s","label":0,"views":[[1.0,2.0,3.0],[3.0,4.0]]}"#],
        );
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(&err, Error::Schema(msg) if msg.contains('s')), "{err}");
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[r#"{"version":2,"classes":2,"views":2,"feature_dim":2,"split":"train","class_names":["a","b"],"view_names":["v0","v1"]}"#],
        );
        assert!(matches!(load_manifest(&path).unwrap_err(), Error::Schema(_)));
    }

    #[test]
    fn sidecar_reference_outside_blob_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let header = r#"{"version":1,"classes":2,"views":2,"feature_dim":2,"split":"train","class_names":["a","b"],"view_names":["v0","v1"],"sidecar":"m.features.bin"}"#;
        let path = write_lines(
            dir.path(),
            &[
                header,
                r#"{"id":"far","label":0,"views":[{"offset":0,"len":2},{"offset":900,"len":2}]}"#,
            ],
        );
        fs::write(dir.path().join("m.features.bin"), [0u8; 32]).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(&err, Error::Schema(msg) if msg.contains("far")), "{err}");
    }

    #[test]
    fn malformed_record_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), &[header_line(), "{not json"]);
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(&err, Error::Schema(msg) if msg.contains("line 2")), "{err}");
    }

    #[test]
    fn non_finite_features_refuse_to_save() {
        let mut ds = tiny();
        ds.samples[0].views[0].data_mut()[0] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let err = save_manifest(&ds, &dir.path().join("x.jsonl"), FeatureStorage::Inline)
            .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }
}
