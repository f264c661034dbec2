//! Dataset directories: per record a JSON manifest `<id>.json` and the raw
//! samples `<id>.f32` (little-endian, lead-major), plus `classes.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scatternet_core::loss::WeightMatrix;
use scatternet_core::pipeline::{Record, Sex};

use crate::tables::write_weights;
use crate::{Error, Result};

pub const CLASSES_FILE: &str = "classes.csv";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    id: String,
    fs: f64,
    n_samples: usize,
    leads: usize,
    labels: Vec<String>,
    #[serde(default)]
    age: Option<f64>,
    #[serde(default)]
    sex: Option<String>,
}

fn check_id(dir: &Path, id: &str) -> Result<()> {
    let bad = id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']);
    if bad {
        return Err(Error::format(dir, format!("record id {id:?} is not a valid file name")));
    }
    Ok(())
}

pub fn write_record(dir: &Path, rec: &Record) -> Result<()> {
    check_id(dir, &rec.id)?;
    let manifest = Manifest {
        id: rec.id.clone(),
        fs: rec.fs,
        n_samples: rec.n_samples(),
        leads: rec.leads,
        labels: rec.labels.clone(),
        age: rec.age,
        sex: rec.sex.map(|s| s.name().to_string()),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(format!("{}.json", rec.id));
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    let bytes: Vec<u8> = rec.signal.iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = dir.join(format!("{}.f32", rec.id));
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

/// Reads the record whose manifest is `manifest_path`.
pub fn read_record(manifest_path: &Path) -> Result<Record> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(manifest_path, e.to_string()))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    check_id(dir, &m.id)?;
    let raw_path = dir.join(format!("{}.f32", m.id));
    let raw = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let expected = m.n_samples * m.leads * 4;
    if raw.len() != expected {
        return Err(Error::format(
            &raw_path,
            format!("{} bytes, manifest implies {} leads x {} samples = {expected}", raw.len(), m.leads, m.n_samples),
        ));
    }
    let signal = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let mut rec = Record::new(m.id, m.fs, m.leads, signal, m.labels)?;
    rec.age = m.age;
    rec.sex = m.sex.as_deref().map(Sex::parse).transpose()?;
    rec.validate()?;
    Ok(rec)
}

/// Every record in `dir`, ordered by file name.
pub fn load_dataset(dir: &Path) -> Result<Vec<Record>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifests: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            manifests.push(path);
        }
    }
    manifests.sort();
    if manifests.is_empty() {
        return Err(Error::format(dir, "no record manifests"));
    }
    manifests.iter().map(|p| read_record(p)).collect()
}

/// Writes every record and the weight matrix into `dir`, creating it.
pub fn write_dataset(dir: &Path, records: &[Record], weights: &WeightMatrix) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for rec in records {
        write_record(dir, rec)?;
    }
    write_weights(&dir.join(CLASSES_FILE), weights)
}
