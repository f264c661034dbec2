use proptest::prelude::*;
use rand::Rng;
use scatternet_core::scatter::ScatterLayer;
use scatternet_core::tensor::gradcheck::grad_check;
use scatternet_core::wavelets::{analyticity_report, filter_bank, filter_spectrum, negative_frequency_ratio};
use scatternet_core::{engine_rng, Graph, Tensor};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = engine_rng(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn scatter(x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = ScatterLayer::default().forward(&mut g, v).unwrap();
    g.value(y).clone()
}

#[test]
fn published_coefficients() {
    let fb = filter_bank();
    assert_eq!(fb.phi[4], 0.4023689270);
    assert_eq!((fb.psi_re[4], fb.psi_im[4]), (0.4023689270, 0.0));
    assert_eq!((fb.psi_re[0], fb.psi_im[0]), (0.0050550143, 0.0087555416));
}

#[test]
fn filter_bank_invariants() {
    let fb = filter_bank();
    for k in 0..=4 {
        assert_eq!(fb.phi[4 + k], fb.phi[4 - k]);
        assert_eq!(fb.psi_re[4 + k], fb.psi_re[4 - k]);
        assert_eq!(fb.psi_im[4 + k], -fb.psi_im[4 - k]);
    }
    assert!((fb.phi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(fb.psi_re.iter().sum::<f64>().abs() < 1e-9);
    assert!(fb.psi_im.iter().sum::<f64>().abs() < 1e-9);
}

#[test]
fn psi_spectrum_is_real() {
    let fb = filter_bank();
    let spec = filter_spectrum(&fb.psi_re, &fb.psi_im, 256).unwrap();
    assert!(spec.iter().all(|&(_, im)| im.abs() < 1e-9));
}

/// Negative-frequency energy share by composite Simpson quadrature of the
/// DTFT, independent of the FFT path.
fn ratio_by_quadrature(re: &[f64; 9], im: &[f64; 9]) -> f64 {
    let power = |nu: f64| {
        let (mut a, mut b) = (0.0, 0.0);
        for (i, k) in (-4..=4).enumerate() {
            let (s, c) = (-(k as f64) * nu).sin_cos();
            a += re[i] * c - im[i] * s;
            b += re[i] * s + im[i] * c;
        }
        a * a + b * b
    };
    let simpson = |lo: f64, hi: f64| {
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut acc = power(lo) + power(hi);
        for i in 1..n {
            acc += power(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let pi = std::f64::consts::PI;
    simpson(-pi, 0.0) / simpson(-pi, pi)
}

#[test]
fn analyticity() {
    let fb = filter_bank();
    let report = analyticity_report(&fb, 256).unwrap();
    println!("neg_freq_energy_ratio = {:.6e}, lipschitz_bound = {:.12}", report.neg_freq_energy_ratio, report.lipschitz_bound);
    let exact = ratio_by_quadrature(&fb.psi_re, &fb.psi_im);
    assert!((exact - 0.0680004).abs() < 1e-6, "{exact}");
    assert!((report.neg_freq_energy_ratio - exact).abs() < 2.0 / 256f64.powi(2));
    // the low-pass and high-pass together pass every frequency with gain <= 1
    assert!((report.lipschitz_bound - 1.0).abs() < 1e-9);
    let real = negative_frequency_ratio(&fb.phi, &[0.0; 9], 256).unwrap();
    assert!((real - 0.5).abs() < 1e-9);
}

#[test]
fn analyticity_report_converges_in_fft_length() {
    let fb = filter_bank();
    let exact = ratio_by_quadrature(&fb.psi_re, &fb.psi_im);
    let mut previous: Option<f64> = None;
    for n in [64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384] {
        let r = analyticity_report(&fb, n).unwrap();
        let err = (r.neg_freq_energy_ratio - exact).abs();
        assert!(err < 2.0 / (n as f64).powi(2), "{n}: {err}");
        if n >= 2048 {
            assert!(err < 1e-6, "{n}");
        }
        if let Some(p) = previous {
            assert!((r.lipschitz_bound - p).abs() < 1e-6, "{n}");
        }
        previous = Some(r.lipschitz_bound);
    }
}

#[test]
fn constant_input_response() {
    let y = scatter(&Tensor::full([1, 1, 64], 1.0));
    let (low, modulus): (Vec<f64>, Vec<f64>) = (0..32).map(|j| (y.data()[j], y.data()[32 + j])).unzip();
    // interior: the 9-tap window centered on 2j lies inside [0, 64)
    for j in 2..30 {
        assert!((low[j] - 1.0).abs() < 1e-9, "low {j}: {}", low[j]);
        assert!(modulus[j] <= 1e-6 + 1e-9, "mod {j}: {}", modulus[j]);
    }
}

#[test]
fn impulse_response_reads_even_taps() {
    let fb = filter_bank();
    let mut x = vec![0.0; 64];
    x[32] = 1.0;
    let y = scatter(&Tensor::from_f64([1, 1, 64], &x).unwrap());
    for j in 0..32 {
        // output j correlates taps at offsets -4..4 around 2j; the impulse sits at offset 32 - 2j
        let off = 32 - 2 * j as isize;
        let (lp, m) = if (-4..=4).contains(&off) {
            let i = (off + 4) as usize;
            (fb.phi[i], (fb.psi_re[i].powi(2) + fb.psi_im[i].powi(2)).sqrt())
        } else {
            (0.0, 0.0)
        };
        assert!((y.data()[j] - lp).abs() < 1e-15);
        assert!((y.data()[32 + j] - m).abs() <= 1e-6, "{j}");
    }
}

#[test]
fn gradients() {
    let report = grad_check(
        |g, v| {
            let y = ScatterLayer::default().forward(g, v[0])?;
            Ok(g.sum(y))
        },
        &[random(&[1, 2, 32], 3)],
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");

    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::zeros([1, 2, 16]));
    let y = ScatterLayer::default().forward(&mut g, x).unwrap();
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|d| d.is_finite()));
}

fn modulus_grad(x: &Tensor<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let v = g.leaf(x.clone());
    let y = ScatterLayer::default().forward(&mut g, v).unwrap();
    let mask = g.constant(Tensor::from_fn(g.shape(y).to_vec(), |i| ((i / 16) % 2) as f64));
    let m = g.mul(y, mask).unwrap();
    let loss = g.sum(m);
    g.backward(loss).unwrap();
    g.grad(v).unwrap().to_vec()
}

#[test]
fn modulus_path_is_positively_homogeneous() {
    let x = random(&[1, 1, 32], 5);
    let x2 = Tensor::from_fn([1, 1, 32], |i| 2.0 * x.data()[i]);
    let (y, y2) = (scatter(&x), scatter(&x2));
    for j in 0..16 {
        assert!((y2.data()[16 + j] - 2.0 * y.data()[16 + j]).abs() < 1e-6);
    }
    for (a, b) in modulus_grad(&x).iter().zip(modulus_grad(&x2)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn even_shift_equivariance_on_interior() {
    let l = 128;
    let base = random(&[1, 3, l + 2], 9);
    let x = Tensor::from_fn([1, 3, l], |i| base.data()[(i / l) * (l + 2) + i % l + 2]);
    let shifted = Tensor::from_fn([1, 3, l], |i| base.data()[(i / l) * (l + 2) + i % l]);
    let (y, ys) = (scatter(&x), scatter(&shifted));
    let lo = l / 2;
    for c in 0..6 {
        for j in 8..lo - 8 {
            // shifted[n] = x[n - 2] so its output j matches x's output j - 1
            let a = ys.data()[c * lo + j];
            let b = y.data()[c * lo + j - 1];
            assert!((a - b).abs() < 1e-6, "c{c} j{j}");
        }
    }
}

#[test]
fn empirical_lipschitz_bound() {
    let bound = analyticity_report(&filter_bank(), 256).unwrap().lipschitz_bound;
    let mut rng = engine_rng(21);
    let mut worst: f64 = 0.0;
    for pair in 0..1000 {
        let l = rng.random_range(8..96);
        let x = random(&[1, 2, l], 10_000 + pair);
        let y = Tensor::from_fn([1, 2, l], |i| x.data()[i] + rng.random_range(-1.0..1.0) * 10f64.powi(-(pair as i32 % 4)));
        let (sx, sy) = (scatter(&x), scatter(&y));
        let num: f64 = sx.data().iter().zip(sy.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(num / den);
        assert!(num <= bound * den, "pair {pair}: {num} > {bound} * {den}");
    }
    println!("worst ratio {worst:.6} vs bound {bound:.6}");
}

#[test]
fn cascade_of_two_layers() {
    let x = random(&[2, 3, 37], 4);
    let mut g = Graph::new();
    let v = g.constant(x);
    let layer = ScatterLayer::default();
    let y = layer.forward(&mut g, v).unwrap();
    let z = layer.forward(&mut g, y).unwrap();
    assert_eq!(g.shape(z), &[2, 12, 10]);
    assert_eq!(g.value(z).numel() * 4, 2 * 12 * 10 * 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn doubles_channels_halves_time(b in 1usize..3, c in 1usize..5, l in 2usize..70, seed in 0u64..500) {
        let y = scatter(&random(&[b, c, l], seed));
        prop_assert_eq!(y.shape(), &[b, 2 * c, l.div_ceil(2)]);
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * 2 * c + 2 * ci + 1) * l.div_ceil(2);
                prop_assert!(y.data()[off..off + l.div_ceil(2)].iter().all(|&v| v >= 0.0));
            }
        }
    }
}
