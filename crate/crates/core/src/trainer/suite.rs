//! Finite-difference checks of every differentiable operation, the scatter
//! layer, attention, the objective and a whole (small) network.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use rand_distr::{Distribution, Normal};

use crate::loss::{objective, WeightMatrix};
use crate::model::{attention_block, build_model, AttentionWeights, ModelConfig, Variant};
use crate::scatter::ScatterLayer;
use crate::tensor::gradcheck::{grad_check_sampled, GradCheckReport};
use crate::tensor::{Graph, Mode, RunningStats, Tensor, Var};
use crate::{derive_seed, engine_rng, Result};

/// Tolerance on the relative error for single operations and small blocks.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance on the relative error for the whole network.
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error < self.tolerance
    }
}

type Case = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>);

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = engine_rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Tensor::from_fn(shape.to_vec(), |_| normal.sample(&mut rng))
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    let t = random(shape, seed);
    Tensor::from_fn(shape.to_vec(), |i| 0.5 + t.data()[i].abs())
}

fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(random(&shape, seed));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn op_cases() -> Vec<Case> {
    vec![
        ("add", vec![random(&[2, 3], 1), random(&[3], 2)], Box::new(|g, v| { let y = g.add(v[0], v[1])?; weighted_sum(g, y, 99) })),
        ("sub", vec![random(&[2, 3], 1), random(&[2, 3], 2)], Box::new(|g, v| { let y = g.sub(v[0], v[1])?; weighted_sum(g, y, 99) })),
        ("mul", vec![random(&[2, 3], 1), random(&[3], 2)], Box::new(|g, v| { let y = g.mul(v[0], v[1])?; weighted_sum(g, y, 99) })),
        ("scale+shift", vec![random(&[4], 1)], Box::new(|g, v| { let y = g.scale(v[0], -1.5); let y = g.add_scalar(y, 0.3); weighted_sum(g, y, 99) })),
        ("log", vec![positive(&[5], 1)], Box::new(|g, v| { let y = g.log(v[0]); weighted_sum(g, y, 99) })),
        ("sqrt", vec![positive(&[5], 1)], Box::new(|g, v| { let y = g.sqrt(v[0]); weighted_sum(g, y, 99) })),
        ("sigmoid", vec![random(&[6], 1)], Box::new(|g, v| { let y = g.sigmoid(v[0]); weighted_sum(g, y, 99) })),
        ("swish", vec![random(&[6], 1)], Box::new(|g, v| { let y = g.swish(v[0]); weighted_sum(g, y, 99) })),
        ("mean", vec![random(&[6], 1)], Box::new(|g, v| { let y = g.mul(v[0], v[0])?; Ok(g.mean(y)) })),
        ("reshape+permute", vec![random(&[2, 3, 4], 1)], Box::new(|g, v| { let y = g.permute(v[0], &[2, 0, 1])?; let y = g.reshape(y, &[8, 3])?; weighted_sum(g, y, 99) })),
        ("concat", vec![random(&[2, 3], 1), random(&[2, 2], 2)], Box::new(|g, v| { let y = g.concat(&[v[0], v[1]], 1)?; weighted_sum(g, y, 99) })),
        ("interleave", vec![random(&[2, 2, 3], 1), random(&[2, 2, 3], 2)], Box::new(|g, v| { let y = g.interleave_channels(v[0], v[1])?; weighted_sum(g, y, 99) })),
        ("conv1d", vec![random(&[2, 3, 9], 1), random(&[4, 3, 3], 2), random(&[4], 3)], Box::new(|g, v| { let y = g.conv1d(v[0], v[1], Some(v[2]), 2, 1)?; weighted_sum(g, y, 99) })),
        ("conv1d k7", vec![random(&[1, 2, 12], 1), random(&[3, 2, 7], 2), random(&[3], 3)], Box::new(|g, v| { let y = g.conv1d(v[0], v[1], Some(v[2]), 2, 3)?; weighted_sum(g, y, 99) })),
        ("depthwise", vec![random(&[2, 2, 11], 1)], Box::new(|g, v| { let y = g.depthwise_conv1d(v[0], &[0.2, -0.4, 1.0, 0.3], 2, 2)?; weighted_sum(g, y, 99) })),
        ("dropout", vec![random(&[50], 1)], Box::new(|g, v| { let y = g.dropout(v[0], 0.25, Mode::Train, &mut engine_rng(3))?; weighted_sum(g, y, 99) })),
        ("maxpool", vec![random(&[2, 2, 9], 1)], Box::new(|g, v| { let y = g.maxpool1d(v[0], 3, 2, 1)?; weighted_sum(g, y, 99) })),
        ("avgpool", vec![random(&[2, 2, 10], 1)], Box::new(|g, v| { let y = g.adaptive_avgpool1d(v[0], 8)?; weighted_sum(g, y, 99) })),
        ("linear", vec![random(&[2, 3, 4], 1), random(&[4, 5], 2), random(&[5], 3)], Box::new(|g, v| { let y = g.linear(v[0], v[1], Some(v[2]))?; weighted_sum(g, y, 99) })),
        ("matmul", vec![random(&[2, 3, 4], 1), random(&[2, 4, 5], 2)], Box::new(|g, v| { let y = g.matmul(v[0], v[1], false)?; weighted_sum(g, y, 99) })),
        ("matmul_t", vec![random(&[2, 3, 4], 1), random(&[2, 5, 4], 2)], Box::new(|g, v| { let y = g.matmul(v[0], v[1], true)?; weighted_sum(g, y, 99) })),
        ("softmax", vec![random(&[3, 5], 1)], Box::new(|g, v| { let y = g.softmax(v[0]); weighted_sum(g, y, 99) })),
        ("batchnorm train", vec![random(&[3, 4, 5], 1), positive(&[4], 2), random(&[4], 3)], Box::new(|g, v| {
            let mut stats = RunningStats::new(4, 0.1);
            let y = g.batchnorm1d(v[0], v[1], v[2], &mut stats, Mode::Train, 1e-5)?;
            weighted_sum(g, y, 99)
        })),
        ("batchnorm eval", vec![random(&[3, 4, 5], 1), positive(&[4], 2), random(&[4], 3)], Box::new(|g, v| {
            let mut stats = RunningStats::new(4, 0.1);
            let y = g.batchnorm1d(v[0], v[1], v[2], &mut stats, Mode::Eval, 1e-5)?;
            weighted_sum(g, y, 99)
        })),
        ("scatter", vec![random(&[1, 2, 32], 3)], Box::new(|g, v| { let y = ScatterLayer::default().forward(g, v[0])?; weighted_sum(g, y, 99) })),
        ("attention", {
            let mut inputs = vec![random(&[2, 6, 5], 1)];
            for i in 0..4 {
                inputs.push(random(&[6, 6], 10 + i));
                inputs.push(random(&[6], 20 + i));
            }
            inputs.iter_mut().skip(1).for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= 0.4));
            inputs
        }, Box::new(|g, v| {
            let w = AttentionWeights { wq: v[1], bq: v[2], wk: v[3], bk: v[4], wv: v[5], bv: v[6], wo: v[7], bo: v[8] };
            let y = attention_block(g, v[0], &w, 3, true)?;
            weighted_sum(g, y, 99)
        })),
        ("objective", vec![random(&[3, 4], 1)], Box::new(|g, v| {
            let wm = WeightMatrix::new(
                (0..4).map(|i| i.to_string()).collect(),
                vec![vec![1.0, 0.5, 0.0, 0.2], vec![0.5, 1.0, 0.3, 0.0], vec![0.0, 0.3, 1.0, 0.4], vec![0.2, 0.0, 0.4, 1.0]],
            )?;
            let targets = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
            objective(g, v[0], &targets, &wm)
        })),
    ]
}

/// Runs every check. Single operations are probed at every coordinate;
/// the network (tiny scatter preset, 4 classes, train mode) at
/// `per_input` random coordinates of each parameter tensor.
pub fn gradient_suite(per_input: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for (name, inputs, f) in op_cases() {
        let report = grad_check_sampled(|g, v| f(g, v), &inputs, usize::MAX, seed)?;
        out.push(SuiteResult {
            name: name.into(),
            report,
            tolerance: OP_TOLERANCE,
        });
    }

    let mut cfg = ModelConfig::tiny();
    cfg.n_classes = 4;
    let model = RefCell::new(build_model::<f64>(&cfg, Variant::Scatter, derive_seed(seed, 1))?);
    let wm = WeightMatrix::identity((0..4).map(|i| i.to_string()).collect());
    let targets = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    let mut inputs: Vec<Tensor<f64>> = model.borrow().params().iter().map(|p| p.value.clone()).collect();
    inputs.push(random(&[2, cfg.n_leads, cfg.window], derive_seed(seed, 2)));
    inputs.push(random(&[2, cfg.aux_features], derive_seed(seed, 3)));
    let dropout_seed = derive_seed(seed, 4);
    let report = grad_check_sampled(
        |g, v| {
            let n = v.len();
            let mut m = model.borrow_mut();
            let logits = m.forward(g, &v[..n - 2], v[n - 2], v[n - 1], Mode::Train, &mut engine_rng(dropout_seed))?;
            objective(g, logits, &targets, &wm)
        },
        &inputs,
        per_input,
        seed,
    )?;
    out.push(SuiteResult {
        name: "network (tiny scatter)".into(),
        report,
        tolerance: MODEL_TOLERANCE,
    });
    Ok(out)
}
