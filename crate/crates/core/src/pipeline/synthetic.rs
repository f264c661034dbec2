//! Seeded synthetic 12-lead dataset. Every class adds its own sinusoid and
//! burst train to a shared-form noisy baseline, so a record's signal is the
//! baseline plus the sum of its class components.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // float methods when std is not linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Record, Sex, TARGET_FS};
use crate::loss::WeightMatrix;
use crate::{derive_seed, engine_rng, Error, Result};

pub const SYNTHETIC_LEN: usize = 10240;
const LEADS: usize = 12;
const MAX_CLASSES: usize = 24;

pub fn synthetic_label(k: usize) -> String {
    format!("syn{k}")
}

/// Identity rewards over the synthetic labels.
pub fn synthetic_weights(n_classes: usize) -> WeightMatrix {
    WeightMatrix::identity((0..n_classes).map(synthetic_label).collect())
}

fn lead_gain(k: usize, lead: usize) -> f64 {
    let sign = if (k + lead).is_multiple_of(3) { -1.0 } else { 1.0 };
    sign * (0.8 + 0.05 * lead as f64)
}

/// Component of class `k` on one lead.
pub fn class_component(k: usize, lead: usize, len: usize) -> Vec<f32> {
    let freq = 2.0 + 3.5 * k as f64;
    let period = 250 + 40 * k;
    let width = 4.0 + k as f64;
    let gain = lead_gain(k, lead);
    (0..len)
        .map(|i| {
            let t = i as f64 / TARGET_FS;
            let wave = 0.4 * (2.0 * PI * freq * t).sin();
            let d = ((i + 17 * k) % period) as f64;
            let d = d.min(period as f64 - d);
            let burst = 1.2 * (-0.5 * (d / width).powi(2)).exp();
            (gain * (wave + burst)) as f32
        })
        .collect()
}

/// Baseline drawn from `noise_seed` plus the components of `classes`.
pub fn synthetic_signal(classes: &[usize], noise_seed: u64, len: usize) -> Vec<f32> {
    let mut rng = engine_rng(noise_seed);
    let normal = Normal::new(0.0, 0.2).expect("positive std");
    let mut signal = Vec::with_capacity(LEADS * len);
    for _ in 0..LEADS {
        let phase = rng.random_range(0.0..2.0 * PI);
        for i in 0..len {
            let t = i as f64 / TARGET_FS;
            signal.push((0.3 * (2.0 * PI * 1.2 * t + phase).sin() + normal.sample(&mut rng)) as f32);
        }
    }
    for &k in classes {
        for lead in 0..LEADS {
            let comp = class_component(k, lead, len);
            signal[lead * len..(lead + 1) * len].iter_mut().zip(comp).for_each(|(s, c)| *s += c);
        }
    }
    signal
}

/// `n_records` 12-lead 500 Hz records of [`SYNTHETIC_LEN`] samples. Record
/// `i` always carries class `i mod n_classes`, and every other class with
/// probability 1/4.
pub fn make_synthetic_dataset(n_records: usize, n_classes: usize, seed: u64) -> Result<Vec<Record>> {
    if n_classes == 0 || n_classes > MAX_CLASSES {
        return Err(Error::Config(format!("synthetic data supports 1..={MAX_CLASSES} classes, got {n_classes}")));
    }
    let mut rng = engine_rng(seed);
    let mut records = Vec::with_capacity(n_records);
    for i in 0..n_records {
        let mut present = vec![i % n_classes];
        for k in 0..n_classes {
            if k != i % n_classes && rng.random::<f64>() < 0.25 {
                present.push(k);
            }
        }
        present.sort_unstable();
        let signal = synthetic_signal(&present, derive_seed(seed, i as u64), SYNTHETIC_LEN);
        let mut rec = Record::new(
            format!("synth{i:05}"),
            TARGET_FS,
            LEADS,
            signal,
            present.iter().map(|&k| synthetic_label(k)).collect(),
        )?;
        rec.age = Some(rng.random_range(20.0..90.0f64).round());
        rec.sex = Some(match rng.random_range(0..3) {
            0 => Sex::Female,
            1 => Sex::Male,
            _ => Sex::Unknown,
        });
        records.push(rec);
    }
    Ok(records)
}
