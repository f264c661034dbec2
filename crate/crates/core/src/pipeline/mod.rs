//! Record preprocessing, window sampling, augmentation and synthetic data.
//!
//! Signals are lead-major `f32` buffers: lead 0 for all samples, then lead 1.

mod synthetic;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // float methods when std is not linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use synthetic::{
    class_component, make_synthetic_dataset, synthetic_label, synthetic_signal, synthetic_weights, SYNTHETIC_LEN,
};

use crate::loss::MergedClasses;
use crate::{derive_seed, Error, Result};

pub const TARGET_FS: f64 = 500.0;
pub const RECORD_WINDOW: usize = 10240;
pub const WINDOW: usize = 5120;
pub const EPS_STD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sex {
    Female,
    Male,
    Unknown,
}

impl Sex {
    pub fn code(self) -> f64 {
        match self {
            Sex::Female => 0.0,
            Sex::Unknown => 0.5,
            Sex::Male => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            "unknown" | "" => Ok(Sex::Unknown),
            other => Err(Error::Data(format!("unknown sex {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub fs: f64,
    pub leads: usize,
    /// `leads × n_samples`, lead-major.
    pub signal: Vec<f32>,
    pub labels: Vec<String>,
    pub age: Option<f64>,
    pub sex: Option<Sex>,
}

impl Record {
    pub fn new(id: String, fs: f64, leads: usize, signal: Vec<f32>, labels: Vec<String>) -> Result<Self> {
        let rec = Record {
            id,
            fs,
            leads,
            signal,
            labels,
            age: None,
            sex: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) || !self.fs.is_finite() {
            return Err(Error::Data(format!("record {}: sampling rate must be positive", self.id)));
        }
        if self.leads == 0 || self.signal.is_empty() || !self.signal.len().is_multiple_of(self.leads) {
            return Err(Error::Data(format!(
                "record {}: {} samples do not fill {} leads",
                self.id,
                self.signal.len(),
                self.leads
            )));
        }
        if self.signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("record {}: non-finite sample", self.id)));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.signal.len() / self.leads
    }

    pub fn lead(&self, i: usize) -> &[f32] {
        let n = self.n_samples();
        &self.signal[i * n..(i + 1) * n]
    }

    /// `[age / 100 clamped to [0, 1], sex code]`; absent age reads 0.5 and
    /// absent sex reads as unknown.
    pub fn aux_features(&self) -> [f64; 2] {
        let age = self.age.map_or(0.5, |a| (a / 100.0).clamp(0.0, 1.0));
        [age, self.sex.unwrap_or(Sex::Unknown).code()]
    }
}

/// Linear interpolation onto a 500 Hz grid covering the same duration.
pub fn resample_to_500(rec: &Record) -> Record {
    if rec.fs == TARGET_FS {
        return rec.clone();
    }
    let n = rec.n_samples();
    let m = ((n as f64 * TARGET_FS / rec.fs).round() as usize).max(1);
    let ratio = rec.fs / TARGET_FS;
    let mut signal = Vec::with_capacity(rec.leads * m);
    for l in 0..rec.leads {
        let x = rec.lead(l);
        for j in 0..m {
            let pos = j as f64 * ratio;
            let i = pos.floor() as usize;
            let v = if i + 1 >= n {
                x[n - 1] as f64
            } else {
                let f = pos - i as f64;
                x[i] as f64 * (1.0 - f) + x[i + 1] as f64 * f
            };
            signal.push(v as f32);
        }
    }
    Record {
        fs: TARGET_FS,
        signal,
        ..rec.clone()
    }
}

/// Start offsets of the pieces [`split_windows`] produces.
pub fn window_starts(n: usize, win: usize) -> Vec<usize> {
    if n <= win {
        return vec![0];
    }
    let pieces = n.div_ceil(win);
    (0..pieces).map(|k| if k + 1 == pieces { n - win } else { k * win }).collect()
}

/// Cuts a record into pieces of `win` samples; the last piece ends at the
/// last sample and may overlap its predecessor. Short records stay whole.
/// Pieces of a split record are named `<id>#<k>`.
pub fn split_windows(rec: &Record, win: usize) -> Vec<Record> {
    let n = rec.n_samples();
    let starts = window_starts(n, win);
    if starts.len() == 1 {
        return vec![rec.clone()];
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let mut signal = Vec::with_capacity(rec.leads * win);
            for l in 0..rec.leads {
                signal.extend_from_slice(&rec.lead(l)[s..s + win]);
            }
            Record {
                id: format!("{}#{k}", rec.id),
                signal,
                ..rec.clone()
            }
        })
        .collect()
}

/// Per lead: standardize (std floored at [`EPS_STD`]) and apply `arctan`.
pub fn normalize_arctan(signal: &mut [f32], leads: usize) {
    let n = signal.len() / leads;
    for lead in signal.chunks_exact_mut(n) {
        let mean = lead.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = lead.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(EPS_STD);
        lead.iter_mut().for_each(|v| *v = ((*v as f64 - mean) / std).atan() as f32);
    }
}

/// Takes `out` samples per lead from a uniformly random start, or zero pads
/// symmetrically (extra zero on the right) when the signal is shorter.
/// Returns the buffer and the start offset (0 when padded).
pub fn random_crop_pad<R: Rng + ?Sized>(signal: &[f32], leads: usize, out: usize, rng: &mut R) -> (Vec<f32>, usize) {
    let n = signal.len() / leads;
    let start = if n > out { rng.random_range(0..=n - out) } else { 0 };
    (crop_pad_at(signal, leads, out, start), start)
}

/// Deterministic crop centered in the signal, padded as [`random_crop_pad`].
pub fn center_crop_pad(signal: &[f32], leads: usize, out: usize) -> (Vec<f32>, usize) {
    let n = signal.len() / leads;
    let start = n.saturating_sub(out) / 2;
    (crop_pad_at(signal, leads, out, start), start)
}

fn crop_pad_at(signal: &[f32], leads: usize, out: usize, start: usize) -> Vec<f32> {
    let n = signal.len() / leads;
    let mut buf = vec![0.0f32; leads * out];
    for (l, dst) in buf.chunks_exact_mut(out).enumerate() {
        let src = &signal[l * n..(l + 1) * n];
        if n >= out {
            dst.copy_from_slice(&src[start..start + out]);
        } else {
            let left = (out - n) / 2;
            dst[left..left + n].copy_from_slice(src);
        }
    }
    buf
}

/// Augmentation probabilities and ranges. Only the 50 Hz neighbourhood and
/// the noise level 0.08 come from the method description; the other ranges
/// are tunable defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub fs: f64,
    pub p_power: f64,
    pub power_freq: (f64, f64),
    pub power_amp: (f64, f64),
    pub p_noise: f64,
    pub noise_std: f64,
    pub p_drift: f64,
    pub drift_freq: (f64, f64),
    pub drift_amp: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            fs: TARGET_FS,
            p_power: 0.5,
            power_freq: (49.5, 50.5),
            power_amp: (0.0, 0.1),
            p_noise: 0.5,
            noise_std: 0.08,
            p_drift: 0.5,
            drift_freq: (0.05, 0.5),
            drift_amp: (0.0, 0.3),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            p_power: 0.0,
            p_noise: 0.0,
            p_drift: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_power, self.p_noise, self.p_drift];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        let ranges = [self.power_freq, self.power_amp, self.drift_freq, self.drift_amp];
        if ranges.iter().any(|(lo, hi)| !(lo <= hi) || *lo < 0.0) || !(self.noise_std >= 0.0) || !(self.fs > 0.0) {
            return Err(Error::Config("augmentation ranges must be nonnegative and ordered".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Adds, each with its own probability: a power-line sinusoid shared by all
/// leads, i.i.d. Gaussian noise, and a slow drift sinusoid with a random
/// phase per lead.
pub fn augment<R: Rng + ?Sized>(signal: &mut [f32], leads: usize, rng: &mut R, cfg: &AugmentConfig) {
    let n = signal.len() / leads;
    let dt = 1.0 / cfg.fs;
    if cfg.p_power > 0.0 && rng.random::<f64>() < cfg.p_power {
        let f = uniform(rng, cfg.power_freq);
        let a = uniform(rng, cfg.power_amp);
        let phase = rng.random_range(0.0..2.0 * PI);
        for lead in signal.chunks_exact_mut(n) {
            for (i, v) in lead.iter_mut().enumerate() {
                *v += (a * (2.0 * PI * f * i as f64 * dt + phase).sin()) as f32;
            }
        }
    }
    if cfg.p_noise > 0.0 && rng.random::<f64>() < cfg.p_noise {
        let normal = Normal::new(0.0, cfg.noise_std).expect("validated std");
        for v in signal.iter_mut() {
            *v += normal.sample(rng) as f32;
        }
    }
    if cfg.p_drift > 0.0 && rng.random::<f64>() < cfg.p_drift {
        let f = uniform(rng, cfg.drift_freq);
        let a = uniform(rng, cfg.drift_amp);
        for lead in signal.chunks_exact_mut(n) {
            let phase = rng.random_range(0.0..2.0 * PI);
            for (i, v) in lead.iter_mut().enumerate() {
                *v += (a * (2.0 * PI * f * i as f64 * dt + phase).sin()) as f32;
            }
        }
    }
}

/// A preprocessed piece: 500 Hz, at most [`RECORD_WINDOW`] samples,
/// normalized, with its target over the merged classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub leads: usize,
    pub signal: Vec<f32>,
    pub target: Vec<f64>,
    pub aux: [f64; 2],
}

/// A model input window.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub data: Vec<f32>,
    pub target: Vec<f64>,
    pub aux: [f64; 2],
    pub source: String,
    pub offset: usize,
}

/// Resamples, splits and normalizes scored records.
pub fn prepare_examples(records: &[Record], classes: &MergedClasses) -> Vec<Example> {
    let mut out = Vec::new();
    for rec in records.iter().filter(|r| classes.is_scored(&r.labels)) {
        let target = classes.encode(&rec.labels);
        for mut piece in split_windows(&resample_to_500(rec), RECORD_WINDOW) {
            normalize_arctan(&mut piece.signal, piece.leads);
            out.push(Example {
                aux: piece.aux_features(),
                id: piece.id,
                leads: piece.leads,
                signal: piece.signal,
                target: target.clone(),
            });
        }
    }
    out
}

impl Example {
    /// Random crop plus augmentation.
    pub fn training_window<R: Rng + ?Sized>(&self, window: usize, rng: &mut R, aug: &AugmentConfig) -> Window {
        let (mut data, offset) = random_crop_pad(&self.signal, self.leads, window, rng);
        augment(&mut data, self.leads, rng, aug);
        self.window(data, offset)
    }

    pub fn eval_window(&self, window: usize) -> Window {
        let (data, offset) = center_crop_pad(&self.signal, self.leads, window);
        self.window(data, offset)
    }

    fn window(&self, data: Vec<f32>, offset: usize) -> Window {
        Window {
            data,
            target: self.target.clone(),
            aux: self.aux,
            source: self.id.clone(),
            offset,
        }
    }
}

/// FNV-1a hash of a record identifier.
pub fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Split {
    pub train: Vec<Record>,
    pub val: Vec<Record>,
    pub holdout: Vec<Record>,
}

/// Drops records without a scored label and splits the rest 90/9/1. Records
/// are ranked by a seeded hash of their id, so membership depends only on
/// the id set and the seed; each split keeps the input order.
pub fn filter_and_split(records: Vec<Record>, classes: &MergedClasses, seed: u64) -> Result<Split> {
    let scored: Vec<Record> = records.into_iter().filter(|r| classes.is_scored(&r.labels)).collect();
    let n = scored.len();
    if n == 0 {
        return Err(Error::Data("no scored records".into()));
    }
    let n_hold = (n as f64 * 0.01).round() as usize;
    let n_val = ((n as f64 * 0.09).round() as usize).max(1).min(n - 1);
    let n_hold = n_hold.min(n - 1 - n_val.min(n - 1));
    let mut rank: Vec<(u64, usize)> = scored.iter().enumerate().map(|(i, r)| (derive_seed(seed, id_hash(&r.id)), i)).collect();
    rank.sort_unstable();
    let mut bucket = vec![0u8; n];
    for (pos, &(_, i)) in rank.iter().enumerate() {
        bucket[i] = if pos < n_hold {
            2
        } else if pos < n_hold + n_val {
            1
        } else {
            0
        };
    }
    let mut split = Split::default();
    for (rec, b) in scored.into_iter().zip(bucket) {
        match b {
            0 => split.train.push(rec),
            1 => split.val.push(rec),
            _ => split.holdout.push(rec),
        }
    }
    Ok(split)
}
