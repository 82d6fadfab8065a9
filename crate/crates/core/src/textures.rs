//! Procedural stationary textures (band-limited, oriented noise with a
//! pointwise nonlinearity) used as synthesis targets and test corpora.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::fft;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    /// Peak radial frequency in cycles per pixel.
    pub frequency: f64,
    /// Radial bandwidth as a fraction of `frequency`.
    pub bandwidth: f64,
    /// Preferred orientation in radians.
    pub orientation: f64,
    /// Angular standard deviation in radians; `None` for isotropic noise.
    pub angular_sigma: Option<f64>,
    /// Exponent of the sign-preserving power applied after filtering.
    pub shape: f64,
    pub mean: f64,
    pub contrast: f64,
}

impl TextureSpec {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            frequency: rng.random_range(0.04..0.22),
            bandwidth: rng.random_range(0.15..0.5),
            orientation: rng.random_range(0.0..PI),
            angular_sigma: if rng.random_bool(0.75) {
                Some(rng.random_range(0.15..0.6))
            } else {
                None
            },
            shape: rng.random_range(0.5..2.0),
            mean: rng.random_range(0.35..0.65),
            contrast: rng.random_range(0.08..0.2),
        }
    }

    fn gain(&self, fx: f64, fy: f64) -> f64 {
        let r = fx.hypot(fy);
        if r == 0.0 {
            return 0.0;
        }
        let sr = self.bandwidth * self.frequency;
        let radial = (-(r - self.frequency).powi(2) / (2.0 * sr * sr)).exp();
        let angular = match self.angular_sigma {
            None => 1.0,
            Some(sa) => {
                // Orientation is axial, so compare modulo pi.
                let d = (fy.atan2(fx) - self.orientation).rem_euclid(PI);
                let d = d.min(PI - d);
                (-d * d / (2.0 * sa * sa)).exp()
            }
        };
        radial * angular
    }

    /// Periodic `width x height` sample driven by `seed`.
    pub fn render(&self, width: usize, height: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec: Vec<Complex64> = (0..width * height)
            .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
            .collect();
        fft::fft2(&mut spec, width, height);
        for y in 0..height {
            let fy = freq(y, height);
            for x in 0..width {
                spec[y * width + x] *= self.gain(freq(x, width), fy);
            }
        }
        fft::ifft2(&mut spec, width, height);
        let mut v: Vec<f64> = spec.iter().map(|c| c.re).collect();
        standardize(&mut v);
        for p in v.iter_mut() {
            *p = p.signum() * p.abs().powf(self.shape);
        }
        standardize(&mut v);
        ImageBuffer::gray(width, height, v.into_iter().map(|p| self.mean + self.contrast * p).collect())
    }
}

fn freq(k: usize, n: usize) -> f64 {
    let k = k as f64;
    let n = n as f64;
    if k < n / 2.0 {
        k / n
    } else {
        (k - n) / n
    }
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    for p in v.iter_mut() {
        *p = (*p - mean) / sd;
    }
}

/// `count` textures with randomly drawn parameters.
pub fn corpus(count: usize, side: usize, seed: u64) -> Vec<(TextureSpec, ImageBuffer)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let spec = TextureSpec::random(&mut rng);
            let img = spec.render(side, side, rng.random());
            (spec, img)
        })
        .collect()
}
