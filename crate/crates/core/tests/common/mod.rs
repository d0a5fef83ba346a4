#![allow(dead_code)]

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use mtjsnn::behavior::ActivationFit;
use mtjsnn::snn::Network;

/// Forward pass written out with plain loops, independent of ndarray.
pub fn naive_forward(net: &Network, input: &[f64]) -> Vec<Vec<f64>> {
    let fit = &net.activation;
    let mut h: Vec<f64> = input.to_vec();
    let mut zs = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        let (n_in, n_out) = layer.weights.dim();
        assert_eq!(h.len(), n_in);
        let mut z = vec![0.0; n_out];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut v = layer.bias[j];
            for (i, hi) in h.iter().enumerate() {
                v += layer.weights[[i, j]] * hi;
            }
            let v = v.max(fit.v_min).min(fit.v_max);
            *zj = fit.tau0 * (-(v - fit.vref) / fit.vc).exp();
        }
        if l + 1 < net.layers.len() {
            h = z.iter().map(|z| z / net.t_norm).collect();
        }
        zs.push(z);
    }
    zs
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// KL divergence of Exp(mean λ) from Exp(mean z) by integrating the density
/// ratio against the target density over `a ∈ [0, 60λ]`.
pub fn kl_quadrature(z: f64, lambda: f64) -> f64 {
    let integrand = |a: f64| {
        let p = (-a / lambda).exp() / lambda;
        // log of (z/λ)·exp(a(1/z − 1/λ)), expanded to stay finite
        p * ((z / lambda).ln() + a * (1.0 / z - 1.0 / lambda))
    };
    simpson(integrand, 0.0, 60.0 * lambda, 200_000)
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Activation with the shape of a calibrated device, for tests that only
/// need a plausible exponential.
pub fn test_activation() -> ActivationFit {
    ActivationFit {
        tau0: 5e-8,
        vref: -0.05,
        vc: 0.036,
        v_min: -0.12,
        v_max: 0.02,
        tau_ap_fixed: 0.26e-9,
        residual: 0.05,
    }
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) {
    let n = pixels.len() / (rows * cols);
    let mut f = File::create(path).unwrap();
    f.write_all(&0x0803u32.to_be_bytes()).unwrap();
    for d in [n, rows, cols] {
        f.write_all(&(d as u32).to_be_bytes()).unwrap();
    }
    f.write_all(pixels).unwrap();
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) {
    let mut f = File::create(path).unwrap();
    f.write_all(&0x0801u32.to_be_bytes()).unwrap();
    f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
    f.write_all(labels).unwrap();
}

/// Ten-class 8×8 images: class `c` lights pixels `6c..6c+6` plus a little
/// label-independent clutter.
pub fn synthetic_images(n: usize, salt: usize) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = vec![0u8; n * 64];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = (i * 7 + salt) % 10;
        labels.push(c as u8);
        let img = &mut pixels[i * 64..(i + 1) * 64];
        for p in img.iter_mut().skip(6 * c).take(6) {
            *p = 255;
        }
        img[60 + (i + salt) % 4] = 128;
    }
    (pixels, labels)
}

/// Writes a synthetic MNIST-layout directory and returns its path.
pub fn synthetic_mnist(dir: &Path, n_train: usize, n_test: usize) -> PathBuf {
    let root = dir.join("mnist");
    std::fs::create_dir_all(&root).unwrap();
    let (p, l) = synthetic_images(n_train, 0);
    write_idx_images(&root.join("train-images-idx3-ubyte"), 8, 8, &p);
    write_idx_labels(&root.join("train-labels-idx1-ubyte"), &l);
    let (p, l) = synthetic_images(n_test, 3);
    write_idx_images(&root.join("t10k-images-idx3-ubyte"), 8, 8, &p);
    write_idx_labels(&root.join("t10k-labels-idx1-ubyte"), &l);
    root
}
