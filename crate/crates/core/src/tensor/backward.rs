//! Backward rules, one arm per recorded operation.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::Op;
use super::kernels::{dot_tap, gemm_acc, gemm_at_b_acc, scatter_tap};
use super::ops::{permute_index, sigmoid_scalar};
use super::{Graph, Var};
use crate::Real;

/// Sums a full-size gradient down to a suffix-broadcast operand.
fn reduce_broadcast<T: Real>(g: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for chunk in g.chunks_exact(n) {
        out.iter_mut().zip(chunk).for_each(|(o, &v)| *o = *o + v);
    }
    out
}

impl<T: Real> Graph<T> {
    pub(crate) fn input_grads(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if self.wants(*a) {
                    res.push((*a, g.to_vec()));
                }
                if self.wants(*b) {
                    let mut gb = reduce_broadcast(g, val(*b).len());
                    gb.iter_mut().for_each(|v| *v = *v * sign);
                    res.push((*b, gb));
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let nb = bd.len();
                if self.wants(*a) {
                    res.push((*a, g.iter().enumerate().map(|(k, &gv)| gv * bd[k % nb]).collect()));
                }
                if self.wants(*b) {
                    let full: Vec<T> = g.iter().zip(ad).map(|(&gv, &av)| gv * av).collect();
                    res.push((*b, reduce_broadcast(&full, nb)));
                }
            }
            Op::Scale(x, s) => res.push((*x, g.iter().map(|&gv| gv * *s).collect())),
            Op::Shift(x) | Op::Reshape(x) => res.push((*x, g.to_vec())),
            Op::Log(x) => res.push((*x, g.iter().zip(val(*x)).map(|(&gv, &xv)| gv / xv).collect())),
            Op::Sqrt(x) => {
                let two = T::cast(2.0);
                res.push((*x, g.iter().zip(out).map(|(&gv, &y)| gv / (two * y)).collect()));
            }
            Op::Sigmoid(x) => {
                res.push((*x, g.iter().zip(out).map(|(&gv, &y)| gv * y * (T::one() - y)).collect()));
            }
            Op::Swish(x) => {
                let d = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&gv, &xv)| {
                        let s = sigmoid_scalar(xv);
                        gv * (s + xv * s * (T::one() - s))
                    })
                    .collect();
                res.push((*x, d));
            }
            Op::Sum(x) => res.push((*x, vec![g[0]; val(*x).len()])),
            Op::Mean(x) => {
                let n = val(*x).len();
                res.push((*x, vec![g[0] / T::cast(n as f64); n]));
            }
            Op::Permute(x, perm) => {
                let map = permute_index(self.nodes[x.0].value.shape(), perm);
                let mut dx = vec![T::zero(); g.len()];
                for (&src, &gv) in map.iter().zip(g) {
                    dx[src] = gv;
                }
                res.push((*x, dx));
            }
            Op::Concat(xs, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut parts: Vec<Vec<T>> = xs.iter().map(|v| Vec::with_capacity(val(*v).len())).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (k, v) in xs.iter().enumerate() {
                        let chunk = self.nodes[v.0].value.shape()[*axis] * inner;
                        parts[k].extend_from_slice(&g[pos..pos + chunk]);
                        pos += chunk;
                    }
                }
                for (v, p) in xs.iter().zip(parts) {
                    if self.wants(*v) {
                        res.push((*v, p));
                    }
                }
            }
            Op::Interleave(a, b) => {
                let (batch, c2, l) = node.value.dims3("interleave").expect("rank 3");
                let c = c2 / 2;
                let (mut ga, mut gb) = (Vec::with_capacity(g.len() / 2), Vec::with_capacity(g.len() / 2));
                for bi in 0..batch {
                    for ci in 0..c {
                        let off = (bi * c2 + 2 * ci) * l;
                        ga.extend_from_slice(&g[off..off + l]);
                        gb.extend_from_slice(&g[off + l..off + 2 * l]);
                    }
                }
                if self.wants(*a) {
                    res.push((*a, ga));
                }
                if self.wants(*b) {
                    res.push((*b, gb));
                }
            }
            Op::Conv1d { x, w, b, stride, padding } => {
                let (batch, cin, len) = self.nodes[x.0].value.dims3("conv1d").expect("rank 3");
                let (cout, k) = {
                    let s = self.nodes[w.0].value.shape();
                    (s[0], s[2])
                };
                let lout = node.value.shape()[2];
                let (xd, wd) = (val(*x), val(*w));
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); xd.len()];
                    for bi in 0..batch {
                        for co in 0..cout {
                            let grow = &g[(bi * cout + co) * lout..(bi * cout + co + 1) * lout];
                            for ci in 0..cin {
                                let dxrow = &mut dx[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                                let taps = &wd[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                                for (kk, &wt) in taps.iter().enumerate() {
                                    scatter_tap(dxrow, grow, wt, kk, *stride, *padding);
                                }
                            }
                        }
                    }
                    res.push((*x, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); wd.len()];
                    for bi in 0..batch {
                        for co in 0..cout {
                            let grow = &g[(bi * cout + co) * lout..(bi * cout + co + 1) * lout];
                            for ci in 0..cin {
                                let xrow = &xd[(bi * cin + ci) * len..(bi * cin + ci + 1) * len];
                                for kk in 0..k {
                                    let d = &mut dw[(co * cin + ci) * k + kk];
                                    *d = *d + dot_tap(grow, xrow, kk, *stride, *padding);
                                }
                            }
                        }
                    }
                    res.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    let mut db = vec![T::zero(); cout];
                    for (row, grow) in g.chunks_exact(lout).enumerate() {
                        let d = &mut db[row % cout];
                        *d = *d + grow.iter().copied().sum();
                    }
                    res.push((b, db));
                }
            }
            Op::DepthwiseConv1d {
                x,
                filter,
                stride,
                padding,
            } => {
                let len = self.nodes[x.0].value.shape()[2];
                let lout = node.value.shape()[2];
                let mut dx = vec![T::zero(); val(*x).len()];
                for (dxrow, grow) in dx.chunks_exact_mut(len).zip(g.chunks_exact(lout)) {
                    for (kk, &wt) in filter.iter().enumerate() {
                        scatter_tap(dxrow, grow, wt, kk, *stride, *padding);
                    }
                }
                res.push((*x, dx));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (batch, c, len) = node.value.dims3("batchnorm1d").expect("rank 3");
                let gd = val(*gamma);
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..batch {
                    for ch in 0..c {
                        let r = (bi * c + ch) * len;
                        for idx in r..r + len {
                            dgamma[ch] = dgamma[ch] + g[idx] * xhat[idx];
                            dbeta[ch] = dbeta[ch] + g[idx];
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    let nf = T::cast((batch * len) as f64);
                    for ch in 0..c {
                        let scale = gd[ch] * inv_std[ch];
                        for bi in 0..batch {
                            let r = (bi * c + ch) * len;
                            for idx in r..r + len {
                                dx[idx] = if *train {
                                    scale * (g[idx] - dbeta[ch] / nf - xhat[idx] * dgamma[ch] / nf)
                                } else {
                                    scale * g[idx]
                                };
                            }
                        }
                    }
                    res.push((*x, dx));
                }
                if self.wants(*gamma) {
                    res.push((*gamma, dgamma));
                }
                if self.wants(*beta) {
                    res.push((*beta, dbeta));
                }
            }
            Op::Dropout(x, mask) => res.push((*x, g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect())),
            Op::MaxPool(x, argmax) => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] = dx[src] + gv;
                }
                res.push((*x, dx));
            }
            Op::AdaptiveAvgPool(x) => {
                let len = self.nodes[x.0].value.shape()[2];
                let out_len = node.value.shape()[2];
                let mut dx = vec![T::zero(); val(*x).len()];
                for (dxrow, grow) in dx.chunks_exact_mut(len).zip(g.chunks_exact(out_len)) {
                    for (i, &gv) in grow.iter().enumerate() {
                        let (s, e) = (i * len / out_len, (i + 1) * len / out_len);
                        let share = gv / T::cast((e - s) as f64);
                        dxrow[s..e].iter_mut().for_each(|d| *d = *d + share);
                    }
                }
                res.push((*x, dx));
            }
            Op::Linear { x, w, b } => {
                let (f, gcols) = {
                    let s = self.nodes[w.0].value.shape();
                    (s[0], s[1])
                };
                let (xd, wd) = (val(*x), val(*w));
                let rows = xd.len() / f;
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); xd.len()];
                    gemm_acc(&mut dx, g, wd, rows, gcols, f, true);
                    res.push((*x, dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); wd.len()];
                    gemm_at_b_acc(&mut dw, xd, g, rows, f, gcols);
                    res.push((*w, dw));
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    res.push((b, reduce_broadcast(g, gcols)));
                }
            }
            Op::MatMul { a, b, transpose_b } => {
                let sa = self.nodes[a.0].value.shape();
                let r = sa.len();
                let (m, k) = (sa[r - 2], sa[r - 1]);
                let n = node.value.shape()[r - 1];
                let batches = val(*a).len() / (m * k);
                let (ad, bd) = (val(*a), val(*b));
                if self.wants(*a) {
                    // dA = G · Bᵀ (or G · B when B was transposed)
                    let mut da = vec![T::zero(); ad.len()];
                    for i in 0..batches {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &bd[i * k * n..(i + 1) * k * n];
                        gemm_acc(&mut da[i * m * k..(i + 1) * m * k], gi, bi, m, n, k, !*transpose_b);
                    }
                    res.push((*a, da));
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); bd.len()];
                    for i in 0..batches {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &ad[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            // dB[n×k] = Gᵀ · A
                            gemm_at_b_acc(dbi, gi, ai, m, n, k);
                        } else {
                            // dB[k×n] = Aᵀ · G
                            gemm_at_b_acc(dbi, ai, gi, m, k, n);
                        }
                    }
                    res.push((*b, db));
                }
            }
            Op::Softmax(x) => {
                let n = *node.value.shape().last().expect("rank >= 1");
                let mut dx = vec![T::zero(); g.len()];
                for ((drow, grow), yrow) in dx.chunks_exact_mut(n).zip(g.chunks_exact(n)).zip(out.chunks_exact(n)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = y * (gv - dot);
                    }
                }
                res.push((*x, dx));
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<_> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                for (v, d) in inputs.iter().zip(op.backward(&ins, &node.value, g)) {
                    if self.wants(*v) {
                        res.push((*v, d));
                    }
                }
            }
        }
        res
    }
}
