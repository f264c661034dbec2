//! Multi-head scaled dot-product self-attention over the time axis.

use alloc::format;

#[allow(unused_imports)] // float methods when std is not linked
use num_traits::Float;

use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Real, Result};

/// Projection parameters; weights are `[C, C]` (input-major), biases `[C]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionWeights {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Sinusoidal encoding `[C, T]`: even channels `sin(t / 10000^(c/C))`,
/// odd channels the matching cosine.
pub fn positional_encoding<T: Real>(channels: usize, len: usize) -> Tensor<T> {
    Tensor::from_fn([channels, len], |i| {
        let (c, t) = (i / len, i % len);
        let pair = (c - c % 2) as f64;
        let angle = t as f64 / 10000f64.powf(pair / channels as f64);
        T::cast(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// `x + O(attention(x + PE))` for `x: [B, C, T]`.
pub fn attention_block<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    w: &AttentionWeights,
    heads: usize,
    positional: bool,
) -> Result<Var> {
    let (batch, c, len) = g.value(x).dims3("attention")?;
    if heads == 0 || c % heads != 0 {
        return Err(Error::Build(format!("{c} channels cannot be split into {heads} heads")));
    }
    let d = c / heads;
    let input = if positional {
        let pe = g.constant(positional_encoding(c, len));
        g.add(x, pe)?
    } else {
        x
    };
    let h = g.permute(input, &[0, 2, 1])?;
    let split = |g: &mut Graph<T>, wt: Var, b: Var| -> Result<Var> {
        let p = g.linear(h, wt, Some(b))?;
        let p = g.reshape(p, &[batch, len, heads, d])?;
        g.permute(p, &[0, 2, 1, 3])
    };
    let q = split(g, w.wq, w.bq)?;
    let k = split(g, w.wk, w.bk)?;
    let v = split(g, w.wv, w.bv)?;
    let scores = g.matmul(q, k, true)?;
    let scores = g.scale(scores, T::cast(1.0 / (d as f64).sqrt()));
    let attn = g.softmax(scores);
    let mixed = g.matmul(attn, v, false)?;
    let mixed = g.permute(mixed, &[0, 2, 1, 3])?;
    let mixed = g.reshape(mixed, &[batch, len, c])?;
    let out = g.linear(mixed, w.wo, Some(w.bo))?;
    let out = g.permute(out, &[0, 2, 1])?;
    g.add(x, out)
}
