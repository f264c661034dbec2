//! The fixed 9-tap filter pair used by the scatter layer: a real symmetric
//! low-pass `phi` and an approximately analytic complex high-pass `psi`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float methods when std is not linked
use num_traits::Float;

use crate::{Error, Result};

pub const TAPS: usize = 9;

/// Index of the tap at relative time 0.
pub const CENTER: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub phi: [f64; TAPS],
    pub psi_re: [f64; TAPS],
    pub psi_im: [f64; TAPS],
}

impl FilterBank {
    /// Taps at relative time `-4..=4`.
    pub fn offsets() -> impl Iterator<Item = isize> {
        (0..TAPS).map(|i| i as isize - CENTER as isize)
    }
}

impl Default for FilterBank {
    fn default() -> Self {
        filter_bank()
    }
}

/// The published coefficients, to all printed digits.
pub fn filter_bank() -> FilterBank {
    FilterBank {
        phi: [
            -0.0101100286,
            -0.0345177968,
            0.0589255650,
            0.2845177968,
            0.4023689270,
            0.2845177968,
            0.0589255650,
            -0.0345177968,
            -0.0101100286,
        ],
        psi_re: [
            0.0050550143,
            -0.0345177968,
            -0.0294627825,
            -0.1422588984,
            0.4023689270,
            -0.1422588984,
            -0.0294627825,
            -0.0345177968,
            0.0050550143,
        ],
        psi_im: [
            0.0087555416,
            0.0,
            0.0510310363,
            -0.2463996399,
            0.0,
            0.2463996399,
            -0.0510310363,
            0.0,
            -0.0087555416,
        ],
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticityReport {
    /// Share of `|psi_hat|^2` on negative frequencies. The self-conjugate
    /// bins (DC and Nyquist) count half to each side, so any real filter
    /// scores exactly 0.5.
    pub neg_freq_energy_ratio: f64,
    /// `max_w sqrt(|phi_hat(w)|^2 + |psi_hat(w)|^2)`, an upper bound on the
    /// scatter layer's Lipschitz constant.
    pub lipschitz_bound: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// In-place iterative radix-2 FFT, `X[k] = sum_n x[n] e^{-2 pi i k n / N}`.
pub(crate) fn fft(buf: &mut [Complex]) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * core::f64::consts::PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (s, c) = (ang * k as f64).sin_cos();
                let a = buf[start + k];
                let b = buf[start + k + len / 2];
                let t = Complex {
                    re: b.re * c - b.im * s,
                    im: b.re * s + b.im * c,
                };
                buf[start + k] = Complex {
                    re: a.re + t.re,
                    im: a.im + t.im,
                };
                buf[start + k + len / 2] = Complex {
                    re: a.re - t.re,
                    im: a.im - t.im,
                };
            }
        }
        len <<= 1;
    }
}

/// Zero-pads a centered 9-tap filter to `n` points with tap 0 at index 0
/// (negative offsets wrap), and transforms it.
pub(crate) fn centered_spectrum(re: &[f64; TAPS], im: &[f64; TAPS], n: usize) -> Vec<Complex> {
    let mut buf = vec![Complex::default(); n];
    for (i, off) in FilterBank::offsets().enumerate() {
        let idx = off.rem_euclid(n as isize) as usize;
        buf[idx] = Complex { re: re[i], im: im[i] };
    }
    fft(&mut buf);
    buf
}

/// Discrete spectrum of a centered filter as `(re, im)` pairs.
pub fn filter_spectrum(re: &[f64; TAPS], im: &[f64; TAPS], fft_len: usize) -> Result<Vec<(f64, f64)>> {
    check_fft_len(fft_len)?;
    Ok(centered_spectrum(re, im, fft_len).into_iter().map(|c| (c.re, c.im)).collect())
}

pub(crate) fn check_fft_len(fft_len: usize) -> Result<()> {
    if fft_len < 64 || !fft_len.is_power_of_two() {
        return Err(Error::Config(format!("fft length must be a power of two >= 64, got {fft_len}")));
    }
    Ok(())
}

/// Fraction of the spectral energy of `(re, im)` on negative frequencies.
pub fn negative_frequency_ratio(re: &[f64; TAPS], im: &[f64; TAPS], fft_len: usize) -> Result<f64> {
    check_fft_len(fft_len)?;
    let spec = centered_spectrum(re, im, fft_len);
    let half = fft_len / 2;
    let total: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
    let negative: f64 = spec[half + 1..].iter().map(|c| c.norm_sqr()).sum::<f64>()
        + 0.5 * (spec[0].norm_sqr() + spec[half].norm_sqr());
    Ok(negative / total)
}

pub fn analyticity_report(fb: &FilterBank, fft_len: usize) -> Result<AnalyticityReport> {
    check_fft_len(fft_len)?;
    let neg_freq_energy_ratio = negative_frequency_ratio(&fb.psi_re, &fb.psi_im, fft_len)?;
    let phi_hat = centered_spectrum(&fb.phi, &[0.0; TAPS], fft_len);
    let psi_hat = centered_spectrum(&fb.psi_re, &fb.psi_im, fft_len);
    let lipschitz_bound = phi_hat
        .iter()
        .zip(&psi_hat)
        .map(|(a, b)| (a.norm_sqr() + b.norm_sqr()).sqrt())
        .fold(0.0, f64::max);
    Ok(AnalyticityReport {
        neg_freq_energy_ratio,
        lipschitz_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_matches_naive_dft() {
        let n = 64;
        let x: Vec<Complex> = (0..n)
            .map(|i| Complex {
                re: (i as f64 * 0.37).sin(),
                im: (i as f64 * 0.11).cos(),
            })
            .collect();
        let mut fast = x.clone();
        fft(&mut fast);
        for (k, got) in fast.iter().enumerate() {
            let mut acc = Complex::default();
            for (j, v) in x.iter().enumerate() {
                let a = -2.0 * core::f64::consts::PI * (k * j) as f64 / n as f64;
                acc.re += v.re * a.cos() - v.im * a.sin();
                acc.im += v.re * a.sin() + v.im * a.cos();
            }
            assert!((acc.re - got.re).abs() < 1e-10 && (acc.im - got.im).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_lengths() {
        let fb = filter_bank();
        assert!(matches!(analyticity_report(&fb, 100), Err(Error::Config(_))));
        assert!(matches!(analyticity_report(&fb, 32), Err(Error::Config(_))));
    }
}
