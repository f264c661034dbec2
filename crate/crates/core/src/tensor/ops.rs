//! Forward rules. Every method records its node on the tape; the matching
//! backward rule is in `backward.rs`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::graph::Op;
use super::kernels::{axpy_tap, gemm_acc, sliding_len};
use super::{Graph, Mode, RunningStats, Tensor, Var};
use crate::{Error, Real, Result};

pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn is_suffix(full: &[usize], tail: &[usize]) -> bool {
    tail.len() <= full.len() && full[full.len() - tail.len()..] == *tail
}

/// Row-major strides.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every output position of a permutation, the flat source index.
pub(crate) fn permute_index(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let src_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; out_shape.len()];
    let mut map = Vec::with_capacity(n);
    for _ in 0..n {
        map.push(idx.iter().zip(perm).map(|(&i, &p)| i * src_strides[p]).sum());
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

impl<T: Real> Graph<T> {
    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if !is_suffix(av.shape(), bv.shape()) {
            return Err(Error::shape(
                name,
                format!("{:?} does not broadcast against {:?}", bv.shape(), av.shape()),
            ));
        }
        let nb = bv.numel();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv.data()[i % nb]))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    fn unary(&self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let xv = self.value(x);
        Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    /// `a + b`; `b` may broadcast over leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.record(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.record(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.unary(x, |v| v * s);
        self.record(out, Op::Scale(x, s), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let out = self.unary(x, |v| v + s);
        self.record(out, Op::Shift(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| v.ln());
        self.record(out, Op::Log(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| v.sqrt());
        self.record(out, Op::Sqrt(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.unary(x, sigmoid_scalar);
        self.record(out, Op::Sigmoid(x), &[x])
    }

    /// `x · sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Var {
        let out = self.unary(x, |v| v * sigmoid_scalar(v));
        self.record(out, Op::Swish(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.record(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::cast(v.numel() as f64);
        self.record(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.record(out, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let rank = xv.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let map = permute_index(xv.shape(), perm);
        let data = map.iter().map(|&i| xv.data()[i]).collect();
        let shape: Vec<usize> = perm.iter().map(|&p| xv.shape()[p]).collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.record(out, Op::Permute(x, perm.to_vec()), &[x]))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(*xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?);
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::shape("concat", format!("axis {axis} out of range for rank {rank}")));
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for &v in xs {
            let s = self.value(v).shape();
            let compatible = s.len() == rank && (0..rank).all(|d| d == axis || s[d] == first.shape()[d]);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} incompatible with {:?} along axis {axis}", s, first.shape()),
                ));
            }
            shape[axis] += s[axis];
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.record(out, Op::Concat(xs.to_vec(), axis), xs))
    }

    /// Stacks two `[B, C, L]` tensors into `[B, 2C, L]` with channel `2i`
    /// taken from `a` and `2i + 1` from `b`.
    pub fn interleave_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "interleave_channels",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let (batch, c, l) = av.dims3("interleave_channels")?;
        let mut data = Vec::with_capacity(2 * av.numel());
        for bi in 0..batch {
            for ci in 0..c {
                let off = (bi * c + ci) * l;
                data.extend_from_slice(&av.data()[off..off + l]);
                data.extend_from_slice(&bv.data()[off..off + l]);
            }
        }
        let out = Tensor::new([batch, 2 * c, l], data)?;
        Ok(self.record(out, Op::Interleave(a, b), &[a, b]))
    }

    /// Cross-correlation of `x: [B, Cin, L]` with `w: [Cout, Cin, K]`, zero padded.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (batch, cin, len) = xv.dims3("conv1d")?;
        let (cout, wcin, k) = match wv.shape()[..] {
            [o, i, k] => (o, i, k),
            _ => return Err(Error::shape("conv1d", format!("weight must be [Cout, Cin, K], got {:?}", wv.shape()))),
        };
        if wcin != cin {
            return Err(Error::shape("conv1d", format!("input has {cin} channels, weight expects {wcin}")));
        }
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be positive".into()));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape("conv1d", format!("bias must be [{cout}], got {:?}", self.value(b).shape())));
            }
        }
        let lout = sliding_len(len, k, stride, padding).ok_or(Error::WindowTooShort {
            op: "conv1d",
            needed: k.saturating_sub(2 * padding),
            got: len,
        })?;
        let mut out = vec![T::zero(); batch * cout * lout];
        let (xd, wd) = (xv.data(), wv.data());
        let bias = b.map(|b| self.value(b).data());
        for bi in 0..batch {
            for co in 0..cout {
                let orow = &mut out[(bi * cout + co) * lout..(bi * cout + co + 1) * lout];
                if let Some(bias) = bias {
                    orow.iter_mut().for_each(|o| *o = bias[co]);
                }
                for ci in 0..cin {
                    let xrow = &xd[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                    let taps = &wd[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                    for (kk, &wt) in taps.iter().enumerate() {
                        axpy_tap(orow, xrow, wt, kk, stride, padding);
                    }
                }
            }
        }
        let out = Tensor::new([batch, cout, lout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(out, Op::Conv1d { x, w, b, stride, padding }, &inputs))
    }

    /// Applies one fixed filter to every channel independently.
    pub fn depthwise_conv1d(&mut self, x: Var, filter: &[T], stride: usize, padding: usize) -> Result<Var> {
        let xv = self.value(x);
        let (batch, c, len) = xv.dims3("depthwise_conv1d")?;
        if filter.is_empty() || stride == 0 {
            return Err(Error::Config("depthwise_conv1d needs a filter and a positive stride".into()));
        }
        let lout = sliding_len(len, filter.len(), stride, padding).ok_or(Error::WindowTooShort {
            op: "depthwise_conv1d",
            needed: filter.len().saturating_sub(2 * padding),
            got: len,
        })?;
        let mut out = vec![T::zero(); batch * c * lout];
        for (row, xrow) in xv.data().chunks_exact(len).enumerate() {
            let orow = &mut out[row * lout..(row + 1) * lout];
            for (kk, &wt) in filter.iter().enumerate() {
                axpy_tap(orow, xrow, wt, kk, stride, padding);
            }
        }
        let out = Tensor::new([batch, c, lout], out)?;
        Ok(self.record(
            out,
            Op::DepthwiseConv1d {
                x,
                filter: filter.to_vec(),
                stride,
                padding,
            },
            &[x],
        ))
    }

    /// Per-channel normalization over `(batch, time)`. In train mode batch
    /// statistics are used and `stats` is updated with its momentum; eval
    /// mode reads `stats` only.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: Mode,
        eps: T,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (batch, c, len) = xv.dims3("batchnorm1d")?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] || stats.channels() != c {
            return Err(Error::shape("batchnorm1d", format!("affine/statistics size must be {c}")));
        }
        let n = batch * len;
        let xd = xv.data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut inv_std = vec![T::zero(); c];
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let nf = T::cast(n as f64);
        for ch in 0..c {
            let rows = (0..batch).map(|bi| (bi * c + ch) * len);
            let (mean, istd) = match mode {
                Mode::Train => {
                    let mut s = T::zero();
                    for r in rows.clone() {
                        s = s + xd[r..r + len].iter().copied().sum::<T>();
                    }
                    let mean = s / nf;
                    let mut ss = T::zero();
                    for r in rows.clone() {
                        for &v in &xd[r..r + len] {
                            ss = ss + (v - mean) * (v - mean);
                        }
                    }
                    let var = ss / nf;
                    let m = stats.momentum;
                    let unbiased = if n > 1 { ss / T::cast((n - 1) as f64) } else { var };
                    stats.mean[ch] = (T::one() - m) * stats.mean[ch] + m * mean;
                    stats.var[ch] = (T::one() - m) * stats.var[ch] + m * unbiased;
                    (mean, T::one() / (var + eps).sqrt())
                }
                Mode::Eval => (stats.mean[ch], T::one() / (stats.var[ch] + eps).sqrt()),
            };
            inv_std[ch] = istd;
            for r in rows {
                for i in r..r + len {
                    let h = (xd[i] - mean) * istd;
                    xhat[i] = h;
                    out[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        let out = Tensor::new([batch, c, len], out)?;
        Ok(self.record(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == Mode::Train,
            },
            &[x, gamma, beta],
        ))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)` so eval is identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability must be in [0, 1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::cast(1.0 / (1.0 - p));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.record(out, Op::Dropout(x, mask), &[x]))
    }

    /// Max over sliding windows; padding never wins and ties go to the
    /// lowest index.
    pub fn maxpool1d(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let xv = self.value(x);
        let (batch, c, len) = xv.dims3("maxpool1d")?;
        if len < kernel {
            return Err(Error::WindowTooShort {
                op: "maxpool1d",
                needed: kernel,
                got: len,
            });
        }
        if stride == 0 || kernel == 0 || padding >= kernel {
            return Err(Error::Config("maxpool1d needs kernel > padding and stride > 0".into()));
        }
        let lout = sliding_len(len, kernel, stride, padding).expect("len >= kernel");
        let mut out = Vec::with_capacity(batch * c * lout);
        let mut argmax = Vec::with_capacity(batch * c * lout);
        for (row, xrow) in xv.data().chunks_exact(len).enumerate() {
            for t in 0..lout {
                let start = (t * stride) as isize - padding as isize;
                let mut best: Option<(usize, T)> = None;
                for kk in 0..kernel {
                    let pos = start + kk as isize;
                    if pos < 0 || pos as usize >= len {
                        continue;
                    }
                    let v = xrow[pos as usize];
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((pos as usize, v));
                    }
                }
                let (i, v) = best.expect("window overlaps the input");
                out.push(v);
                argmax.push(row * len + i);
            }
        }
        let out = Tensor::new([batch, c, lout], out)?;
        Ok(self.record(out, Op::MaxPool(x, argmax), &[x]))
    }

    /// Averages `out_len` contiguous bins; bin `i` spans
    /// `[floor(i·L/out_len), floor((i+1)·L/out_len))`.
    pub fn adaptive_avgpool1d(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (batch, c, len) = xv.dims3("adaptive_avgpool1d")?;
        if out_len == 0 || len < out_len {
            return Err(Error::WindowTooShort {
                op: "adaptive_avgpool1d",
                needed: out_len.max(1),
                got: len,
            });
        }
        let mut out = Vec::with_capacity(batch * c * out_len);
        for xrow in xv.data().chunks_exact(len) {
            for i in 0..out_len {
                let (s, e) = (i * len / out_len, (i + 1) * len / out_len);
                let total: T = xrow[s..e].iter().copied().sum();
                out.push(total / T::cast((e - s) as f64));
            }
        }
        let out = Tensor::new([batch, c, out_len], out)?;
        Ok(self.record(out, Op::AdaptiveAvgPool(x), &[x]))
    }

    /// `x[.., F] · w[F, G] + b[G]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (f, g) = match wv.shape()[..] {
            [f, g] => (f, g),
            _ => return Err(Error::shape("linear", format!("weight must be [F, G], got {:?}", wv.shape()))),
        };
        if *xv.shape().last().expect("rank >= 1") != f {
            return Err(Error::shape(
                "linear",
                format!("input {:?} does not end in {f} features", xv.shape()),
            ));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [g] {
                return Err(Error::shape("linear", format!("bias must be [{g}], got {:?}", self.value(b).shape())));
            }
        }
        let rows = xv.numel() / f;
        let mut out = vec![T::zero(); rows * g];
        if let Some(b) = b {
            let bd = self.value(b).data();
            out.chunks_exact_mut(g).for_each(|r| r.copy_from_slice(bd));
        }
        gemm_acc(&mut out, xv.data(), wv.data(), rows, f, g, false);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = g;
        let out = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(out, Op::Linear { x, w, b }, &inputs))
    }

    /// Batched matrix product over the last two axes: `a[.., M, K] · b[.., K, N]`,
    /// or `a · bᵀ` with `b[.., N, K]` when `transpose_b`.
    pub fn matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ra, rb) = (av.rank(), bv.rank());
        if ra < 2 || ra != rb || av.shape()[..ra - 2] != bv.shape()[..rb - 2] {
            return Err(Error::shape("matmul", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let (m, k) = (av.shape()[ra - 2], av.shape()[ra - 1]);
        let (bk, n) = if transpose_b {
            (bv.shape()[rb - 1], bv.shape()[rb - 2])
        } else {
            (bv.shape()[rb - 2], bv.shape()[rb - 1])
        };
        if bk != k {
            return Err(Error::shape("matmul", format!("inner dimensions {k} and {bk} differ")));
        }
        let batches: usize = av.shape()[..ra - 2].iter().product();
        let mut out = vec![T::zero(); batches * m * n];
        for i in 0..batches {
            gemm_acc(
                &mut out[i * m * n..(i + 1) * m * n],
                &av.data()[i * m * k..(i + 1) * m * k],
                &bv.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                transpose_b,
            );
        }
        let mut shape = av.shape().to_vec();
        shape[ra - 1] = n;
        let out = Tensor::new(shape, out)?;
        Ok(self.record(out, Op::MatMul { a, b, transpose_b }, &[a, b]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = *xv.shape().last().expect("rank >= 1");
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                total = total + *v;
            }
            row.iter_mut().for_each(|v| *v = *v / total);
        }
        let out = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.record(out, Op::Softmax(x), &[x])
    }
}
