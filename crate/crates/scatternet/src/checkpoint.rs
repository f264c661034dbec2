//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `SCNTCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! the payload of little-endian `f32` values. The manifest indexes every
//! payload tensor by name, kind, shape and byte offset; tensors are stored
//! back to back in index order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use scatternet_core::loss::WeightMatrix;
use scatternet_core::model::build_model;
use scatternet_core::trainer::{AdamState, Checkpoint, PlateauScheduler, TrainConfig};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SCNTCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    BnMean,
    BnVar,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SchedulerState {
    lr: f64,
    /// `None` before the first epoch.
    best_loss: Option<f64>,
    bad_epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: Vec<(String, String)>,
    pub classes: Vec<String>,
    pub weights: Vec<Vec<f64>>,
    pub epoch: usize,
    pub best_score: Option<f64>,
    scheduler: SchedulerState,
    pub adam_step: u64,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: u64,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    let mut push = |name: &str, kind, shape: Vec<usize>, data: &[f32]| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            kind,
            shape,
            offset: payload.len() as u64 * 4,
        });
        payload.extend_from_slice(data);
    };
    let params = ck.model.params();
    for p in params {
        push(&p.name, TensorKind::Param, p.value.shape().to_vec(), p.value.data());
    }
    for (name, s) in ck.model.stat_names().iter().zip(ck.model.running_stats()) {
        push(name, TensorKind::BnMean, vec![s.mean.len()], &s.mean);
        push(name, TensorKind::BnVar, vec![s.var.len()], &s.var);
    }
    for (p, m) in params.iter().zip(&ck.adam.m) {
        push(&p.name, TensorKind::AdamM, p.value.shape().to_vec(), m);
    }
    for (p, v) in params.iter().zip(&ck.adam.v) {
        push(&p.name, TensorKind::AdamV, p.value.shape().to_vec(), v);
    }
    let s = &ck.scheduler;
    let manifest = Manifest {
        version: VERSION,
        config: ck.config.entries(),
        classes: ck.weights.labels().to_vec(),
        weights: (0..ck.weights.dim()).map(|i| ck.weights.row(i).to_vec()).collect(),
        epoch: ck.epoch,
        best_score: ck.best_score,
        scheduler: SchedulerState {
            lr: s.lr,
            best_loss: s.best.is_finite().then_some(s.best),
            bad_epochs: s.bad_epochs,
        },
        adam_step: ck.adam.step,
        tensors,
        payload_bytes: payload.len() as u64 * 4,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + json.len() + payload.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend(payload.iter().flat_map(|v| v.to_le_bytes()));
    out
}

/// Parses the header and manifest, checking that the index tiles the
/// payload exactly.
pub fn read_manifest<'a>(bytes: &'a [u8], origin: &Path) -> Result<(Manifest, &'a [u8])> {
    let bad = |d: &str| Error::format(origin, d.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(20..20 + len).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(&format!("manifest: {e}")))?;
    let payload = &bytes[20 + len..];
    if manifest.payload_bytes != payload.len() as u64 {
        return Err(bad(&format!("payload has {} bytes, manifest says {}", payload.len(), manifest.payload_bytes)));
    }
    let mut expected = 0u64;
    for t in &manifest.tensors {
        if t.offset != expected {
            return Err(bad(&format!("tensor {} at offset {}, expected {expected}", t.name, t.offset)));
        }
        expected += numel(&t.shape) as u64 * 4;
    }
    if expected != manifest.payload_bytes {
        return Err(bad("tensor index does not cover the payload"));
    }
    Ok((manifest, payload))
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    let (m, payload) = read_manifest(bytes, origin)?;
    let bad = |d: String| Error::format(origin, d);
    let mut config = TrainConfig::default();
    config.apply(&m.config)?;
    config.validate()?;
    let weights = WeightMatrix::new(m.classes.clone(), m.weights.clone())?;
    let mut model = build_model::<f32>(&config.model_config(weights.dim()), config.variant, 0)?;
    let floats = |t: &TensorEntry| -> Vec<f32> {
        let start = t.offset as usize;
        payload[start..start + numel(&t.shape) * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect()
    };
    let of_kind = |kind| m.tensors.iter().filter(move |t| t.kind == kind);
    let n_params = model.params().len();
    let n_stats = model.running_stats().len();
    let counts = [
        (TensorKind::Param, n_params),
        (TensorKind::BnMean, n_stats),
        (TensorKind::BnVar, n_stats),
        (TensorKind::AdamM, n_params),
        (TensorKind::AdamV, n_params),
    ];
    for (kind, want) in counts {
        let got = of_kind(kind).count();
        if got != want {
            return Err(bad(format!("{got} {kind:?} tensors, the configured model has {want}")));
        }
    }
    let mut adam = AdamState::for_model(&model);
    adam.step = m.adam_step;
    let shapes: Vec<(String, Vec<usize>)> = model.params().iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect();
    let check = |t: &TensorEntry, (name, shape): &(String, Vec<usize>)| {
        if &t.name != name || &t.shape != shape {
            return Err(bad(format!("tensor {} {:?} where the model has {name} {shape:?}", t.name, t.shape)));
        }
        Ok(())
    };
    for (i, t) in of_kind(TensorKind::Param).enumerate() {
        check(t, &shapes[i])?;
        model.params_mut()[i].value.data_mut().copy_from_slice(&floats(t));
    }
    for (i, t) in of_kind(TensorKind::AdamM).enumerate() {
        check(t, &shapes[i])?;
        adam.m[i] = floats(t);
    }
    for (i, t) in of_kind(TensorKind::AdamV).enumerate() {
        check(t, &shapes[i])?;
        adam.v[i] = floats(t);
    }
    let stat_names = model.stat_names().to_vec();
    let stats = of_kind(TensorKind::BnMean).zip(of_kind(TensorKind::BnVar));
    for (i, (mean, var)) in stats.enumerate() {
        let c = model.running_stats()[i].channels();
        let want = (stat_names[i].clone(), vec![c]);
        check(mean, &want)?;
        check(var, &want)?;
        let s = &mut model.running_stats_mut()[i];
        s.mean = floats(mean);
        s.var = floats(var);
    }
    let mut scheduler = PlateauScheduler::new(
        m.scheduler.lr,
        config.plateau_patience,
        config.plateau_factor,
        config.plateau_tolerance,
        config.min_lr,
    );
    scheduler.best = m.scheduler.best_loss.unwrap_or(f64::INFINITY);
    scheduler.bad_epochs = m.scheduler.bad_epochs;
    Ok(Checkpoint {
        config,
        weights,
        epoch: m.epoch,
        best_score: m.best_score,
        scheduler,
        model,
        adam,
    })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, to_bytes(ck)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
