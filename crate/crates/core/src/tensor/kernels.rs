//! Raw loops shared by the forward and backward passes.

use crate::Real;

/// Output length of a 1-D sliding window, or `None` when it would be empty.
pub(crate) fn sliding_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output positions `t` for which tap `k` reads inside the input, i.e.
/// `0 <= t*stride + k - padding < len`.
#[inline]
pub(crate) fn valid_range(k: usize, stride: usize, padding: usize, len: usize, lout: usize) -> (usize, usize) {
    let lo = if padding > k {
        (padding - k).div_ceil(stride)
    } else {
        0
    };
    let end = len + padding;
    let hi = if end > k { (end - k).div_ceil(stride) } else { 0 };
    (lo.min(lout), hi.min(lout))
}

/// `out[t] += w * x[t*stride + k - padding]` over the valid range.
#[inline]
pub(crate) fn axpy_tap<T: Real>(out: &mut [T], x: &[T], w: T, k: usize, stride: usize, padding: usize) {
    let (lo, hi) = valid_range(k, stride, padding, x.len(), out.len());
    if lo >= hi {
        return;
    }
    let start = lo * stride + k - padding;
    if stride == 1 {
        for (o, &xv) in out[lo..hi].iter_mut().zip(&x[start..start + (hi - lo)]) {
            *o = *o + w * xv;
        }
    } else {
        for (o, &xv) in out[lo..hi].iter_mut().zip(x[start..].iter().step_by(stride)) {
            *o = *o + w * xv;
        }
    }
}

/// `dx[t*stride + k - padding] += w * g[t]` over the valid range.
#[inline]
pub(crate) fn scatter_tap<T: Real>(dx: &mut [T], g: &[T], w: T, k: usize, stride: usize, padding: usize) {
    let (lo, hi) = valid_range(k, stride, padding, dx.len(), g.len());
    if lo >= hi {
        return;
    }
    let start = lo * stride + k - padding;
    if stride == 1 {
        for (d, &gv) in dx[start..start + (hi - lo)].iter_mut().zip(&g[lo..hi]) {
            *d = *d + w * gv;
        }
    } else {
        for (d, &gv) in dx[start..].iter_mut().step_by(stride).zip(&g[lo..hi]) {
            *d = *d + w * gv;
        }
    }
}

/// `sum_t g[t] * x[t*stride + k - padding]` over the valid range.
#[inline]
pub(crate) fn dot_tap<T: Real>(g: &[T], x: &[T], k: usize, stride: usize, padding: usize) -> T {
    let (lo, hi) = valid_range(k, stride, padding, x.len(), g.len());
    if lo >= hi {
        return T::zero();
    }
    let start = lo * stride + k - padding;
    let mut acc = T::zero();
    if stride == 1 {
        for (&gv, &xv) in g[lo..hi].iter().zip(&x[start..start + (hi - lo)]) {
            acc = acc + gv * xv;
        }
    } else {
        for (&gv, &xv) in g[lo..hi].iter().zip(x[start..].iter().step_by(stride)) {
            acc = acc + gv * xv;
        }
    }
    acc
}

/// `c[m×n] += a[m×k] · b[k×n]`, or `a · bᵀ` with `b` stored `n×k`.
pub(crate) fn gemm_acc<T: Real>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize, transpose_b: bool) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        if transpose_b {
            for (j, cv) in crow.iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (&av, &bv) in arow.iter().zip(brow) {
                    acc = acc + av * bv;
                }
                *cv = *cv + acc;
            }
        } else {
            for (p, &av) in arow.iter().enumerate() {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv = *cv + av * bv;
                }
            }
        }
    }
}

/// `c[k×n] += aᵀ · g` where `a` is `m×k` and `g` is `m×n`.
pub(crate) fn gemm_at_b_acc<T: Real>(c: &mut [T], a: &[T], g: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv = *cv + av * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bounds_check() {
        for len in 1..12 {
            for k in 0..7 {
                for stride in 1..3 {
                    for padding in 0..4 {
                        let Some(lout) = sliding_len(len, 7.max(k + 1), stride, padding) else {
                            continue;
                        };
                        let (lo, hi) = valid_range(k, stride, padding, len, lout);
                        for t in 0..lout {
                            let pos = (t * stride + k) as isize - padding as isize;
                            let inside = pos >= 0 && (pos as usize) < len;
                            assert_eq!(inside, t >= lo && t < hi, "len {len} k {k} s {stride} p {padding} t {t}");
                        }
                    }
                }
            }
        }
    }
}
