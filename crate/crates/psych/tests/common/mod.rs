#![allow(dead_code)]

use std::path::Path;

use periph_core::stimulus::{ingest_stimulus_set, Family, StimulusSet};
use periph_core::{gaussian, BitDepth, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 64;

/// One-cycle plane wave plus smooth noise: strong coarse structure.
fn coarse_image(side: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let noise = gaussian::blur(&ImageBuffer::from_fn(side, side, |_, _| rng.random::<f64>()));
    let k = std::f64::consts::TAU / side as f64;
    ImageBuffer::from_fn(side, side, |x, y| {
        let u = x as f64 * theta.cos() + y as f64 * theta.sin();
        0.5 + 0.2 * (k * u + phase).sin() + 0.2 * (noise.at(x, y) - 0.5)
    })
}

fn fine_noise(side: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    ImageBuffer::from_fn(side, side, |_, _| 0.3 * (rng.random::<f64>() - 0.5))
}

/// Equal-energy block noise at block sizes 1 to 8, so blurring removes
/// it gradually, octave by octave.
fn multiscale_noise(side: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let mut out = ImageBuffer::zeros(side, side);
    for j in 0..4 {
        let b = 1 << j;
        let n = side / b;
        let coarse: Vec<f64> = (0..n * n).map(|_| 0.15 * (rng.random::<f64>() - 0.5)).collect();
        for y in 0..side {
            for x in 0..side {
                let v = out.at(x, y) + coarse[(y / b) * n + x / b];
                out.set(x, y, v);
            }
        }
    }
    out
}

fn add(a: &ImageBuffer, b: &ImageBuffer) -> ImageBuffer {
    ImageBuffer::gray(a.width(), a.height(), a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect())
}

/// A set of `images` 64x64 originals in one class with two seeds per family.
/// Texform files are the original plus independent noise at several fine
/// scales, so they match coarsely and differ in detail. Standard files share
/// the contrast-inverted original and differ in fine noise.
pub fn fixture_set(root: &Path, images: usize) -> StimulusSet {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..images {
        let dir = root.join("class0").join(format!("img{i:03}"));
        std::fs::create_dir_all(&dir).unwrap();
        let original = coarse_image(SIDE, &mut rng);
        original.save_png(dir.join("original.png"), BitDepth::Sixteen).unwrap();
        let standard_base = original.map(|v| 1.0 - v);
        for seed in 0..2 {
            let tex = add(&original, &multiscale_noise(SIDE, &mut rng));
            tex.save_png(dir.join(format!("texform_seed{seed}.png")), BitDepth::Sixteen).unwrap();
            let robust = original.map(|v| v + 0.02 * (seed as f64 + 1.0));
            robust.save_png(dir.join(format!("robust_seed{seed}.png")), BitDepth::Sixteen).unwrap();
            let standard = add(&standard_base, &fine_noise(SIDE, &mut rng));
            standard.save_png(dir.join(format!("standard_seed{seed}.png")), BitDepth::Sixteen).unwrap();
        }
    }
    let out = ingest_stimulus_set(root).unwrap();
    assert!(out.report.is_clean(), "{:?}", out.report);
    assert_eq!(out.counts.families, Family::ALL.len());
    out.set
}

/// Exact binomial pmf over 0..=n.
pub fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    let mut pmf = vec![0.0; n as usize + 1];
    let mut log_c = 0.0f64;
    for k in 0..=n {
        if k > 0 {
            log_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        pmf[k as usize] = (log_c + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
    }
    pmf
}

/// Smallest k with P(X <= k) >= q.
pub fn binomial_quantile(n: u64, p: f64, q: f64) -> u64 {
    let mut acc = 0.0;
    for (k, m) in binomial_pmf(n, p).iter().enumerate() {
        acc += m;
        if acc >= q - 1e-12 {
            return k as u64;
        }
    }
    n
}

/// Central 99% band of the proportion correct for `n` trials at rate `p`.
pub fn band99(n: u64, p: f64) -> (f64, f64) {
    (
        binomial_quantile(n, p, 0.005) as f64 / n as f64,
        binomial_quantile(n, p, 0.995) as f64 / n as f64,
    )
}
