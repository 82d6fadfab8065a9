//! Frequency-domain steerable pyramid.
//!
//! Polar-separable filters: raised-cosine radial windows one octave wide and
//! `cos^(K-1)` angular windows for `K` orientations. All transforms are
//! unitary and the filter bank is a tight frame, so reconstruction is the
//! exact adjoint of decomposition. The same adjoint backpropagates gradients
//! for the texture statistics.
//!
//! Orientation `k` is centred on the frequency angle `pi * k / K`; band 0
//! responds to intensity that varies along the x axis.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::buffer::{prepare_square, ImageBuffer, ResizePolicy};
use crate::error::{Error, Result};
use crate::fft::{crop_spectrum, fft2, ifft2, pad_spectrum, signed_freq};

/// Smallest side of the final lowpass residual.
pub const MIN_RESIDUAL_SIDE: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SteerableConfig {
    pub scales: usize,
    pub orientations: usize,
    #[serde(default)]
    pub resize: ResizePolicy,
}

impl Default for SteerableConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            orientations: 4,
            resize: ResizePolicy::CenterCrop,
        }
    }
}

/// Check that a `size x size` image supports `scales` levels.
pub fn check_geometry(size: usize, scales: usize, orientations: usize) -> Result<()> {
    if scales == 0 || orientations == 0 {
        return Err(Error::Config("scales and orientations must be positive".into()));
    }
    if !size.is_power_of_two() {
        return Err(Error::Dimension(format!("side {size} is not a power of two")));
    }
    if size >> scales < MIN_RESIDUAL_SIDE {
        return Err(Error::Dimension(format!(
            "{scales} scales need a side of at least {}, got {size}",
            MIN_RESIDUAL_SIDE << scales
        )));
    }
    Ok(())
}

#[derive(Debug)]
struct LevelFilters {
    side: usize,
    lomask: Vec<f64>,
    /// Real (two-lobed) filters without the phase factor, one per orientation.
    real: Vec<Vec<f64>>,
    /// Analytic (one-lobed) filters without the phase factor.
    analytic: Vec<Vec<f64>>,
}

/// Precomputed filter bank for one `(side, scales, orientations)` triple.
#[derive(Debug)]
pub struct FilterBank {
    side: usize,
    scales: usize,
    orientations: usize,
    hi0: Vec<f64>,
    lo0: Vec<f64>,
    levels: Vec<LevelFilters>,
    /// `(-i)^(K-1)`, the phase that makes odd-order filters Hermitian.
    phase: Complex64,
}

/// High side of a one-octave raised-cosine transition ending at `edge`.
fn rcos_high(log_rad: f64, edge: f64) -> f64 {
    if log_rad <= edge - 1.0 {
        0.0
    } else if log_rad >= edge {
        1.0
    } else {
        (PI / 2.0 * (edge - log_rad)).cos()
    }
}

fn rcos_low(log_rad: f64, edge: f64) -> f64 {
    if log_rad <= edge - 1.0 {
        1.0
    } else if log_rad >= edge {
        0.0
    } else {
        (PI / 2.0 * (edge - log_rad)).sin()
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

impl FilterBank {
    /// Shared, lazily built bank for the given geometry.
    pub fn get(side: usize, scales: usize, orientations: usize) -> Result<Arc<FilterBank>> {
        check_geometry(side, scales, orientations)?;
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize, usize), Arc<FilterBank>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("filter cache poisoned");
        Ok(guard
            .entry((side, scales, orientations))
            .or_insert_with(|| Arc::new(Self::build(side, scales, orientations)))
            .clone())
    }

    fn build(side: usize, scales: usize, orientations: usize) -> Self {
        let order = orientations - 1;
        let norm = (2f64.powi(2 * order as i32) * factorial(order).powi(2)
            / (orientations as f64 * factorial(2 * order)))
        .sqrt();
        let polar = |n: usize| -> Vec<(f64, f64)> {
            let mut out = Vec::with_capacity(n * n);
            for y in 0..n {
                let fy = signed_freq(y, n);
                for x in 0..n {
                    let fx = signed_freq(x, n);
                    let r = (fx * fx + fy * fy).sqrt();
                    let log_rad = if r == 0.0 { f64::NEG_INFINITY } else { r.log2() };
                    out.push((log_rad, fy.atan2(fx)));
                }
            }
            out
        };

        let top = polar(side);
        let hi0 = top.iter().map(|&(lr, _)| rcos_high(lr, 0.0)).collect();
        let lo0 = top.iter().map(|&(lr, _)| rcos_low(lr, 0.0)).collect();

        let mut levels = Vec::with_capacity(scales);
        let mut n = side;
        for _ in 0..scales {
            let grid = polar(n);
            let himask: Vec<f64> = grid.iter().map(|&(lr, _)| rcos_high(lr, -1.0)).collect();
            let lomask = grid.iter().map(|&(lr, _)| rcos_low(lr, -1.0)).collect();
            let mut real = Vec::with_capacity(orientations);
            let mut analytic = Vec::with_capacity(orientations);
            for k in 0..orientations {
                let centre = PI * k as f64 / orientations as f64;
                let mut re = Vec::with_capacity(n * n);
                let mut an = Vec::with_capacity(n * n);
                for (i, &(_, theta)) in grid.iter().enumerate() {
                    let c = (theta - centre).cos();
                    let v = himask[i] * norm * c.powi(order as i32);
                    let lobe = if c.abs() < 1e-12 { 0.0 } else { c.signum() };
                    re.push(v);
                    an.push(v * (1.0 + lobe));
                }
                real.push(re);
                analytic.push(an);
            }
            levels.push(LevelFilters {
                side: n,
                lomask,
                real,
                analytic,
            });
            n /= 2;
        }
        let phase = Complex64::new(0.0, -1.0).powu(order as u32);
        Self {
            side,
            scales,
            orientations,
            hi0,
            lo0,
            levels,
            phase,
        }
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    /// Side of the grid at `scale` (`scale == scales` is the residual).
    pub fn level_side(&self, scale: usize) -> usize {
        self.side >> scale
    }

    /// Full forward transform of a real `side x side` image.
    pub fn analyze(&self, data: &[f64]) -> Analysis {
        let n = self.side;
        assert_eq!(data.len(), n * n, "image does not match filter bank");
        let mut spec: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2(&mut spec, n, n);

        let highpass = real_ifft(spec.iter().zip(&self.hi0).map(|(s, h)| s * h).collect(), n);
        let mut lo: Vec<Complex64> = spec.iter().zip(&self.lo0).map(|(s, m)| s * m).collect();

        let mut lowpasses = Vec::with_capacity(self.scales + 1);
        let mut bands = Vec::with_capacity(self.scales * self.orientations);
        let mut analytic = Vec::with_capacity(self.scales * self.orientations);
        for level in &self.levels {
            let m = level.side;
            lowpasses.push(real_ifft(lo.clone(), m));
            for k in 0..self.orientations {
                let b: Vec<Complex64> = lo
                    .iter()
                    .zip(&level.real[k])
                    .map(|(s, h)| s * self.phase * h)
                    .collect();
                bands.push(real_ifft(b, m));
                let mut c: Vec<Complex64> = lo
                    .iter()
                    .zip(&level.analytic[k])
                    .map(|(s, h)| s * self.phase * h)
                    .collect();
                ifft2(&mut c, m, m);
                analytic.push(c);
            }
            let masked: Vec<Complex64> = lo.iter().zip(&level.lomask).map(|(s, w)| s * w).collect();
            lo = crop_spectrum(&masked, m);
        }
        lowpasses.push(real_ifft(lo, self.level_side(self.scales)));
        Analysis {
            highpass,
            lowpasses,
            bands,
            analytic,
        }
    }

    /// Adjoint of [`FilterBank::analyze`]. Missing entries count as zero.
    pub fn adjoint(&self, grad: &AnalysisGrad) -> Vec<f64> {
        let s_max = self.scales;
        let k_max = self.orientations;
        let residual = self.level_side(s_max);
        let mut acc = match grad.lowpasses.get(s_max).and_then(|g| g.as_ref()) {
            Some(g) => real_fft(g),
            None => vec![Complex64::default(); residual * residual],
        };
        for (s, level) in self.levels.iter().enumerate().rev() {
            let m = level.side;
            let mut cur: Vec<Complex64> = pad_spectrum(&acc, m / 2)
                .into_iter()
                .zip(&level.lomask)
                .map(|(v, w)| v * w)
                .collect();
            let conj_phase = self.phase.conj();
            for k in 0..k_max {
                let idx = s * k_max + k;
                if let Some(Some(g)) = grad.bands.get(idx) {
                    for ((c, gv), h) in cur.iter_mut().zip(real_fft(g)).zip(&level.real[k]) {
                        *c += gv * conj_phase * h;
                    }
                }
                if let Some(Some(g)) = grad.analytic.get(idx) {
                    let mut gs = g.clone();
                    fft2(&mut gs, m, m);
                    for ((c, gv), h) in cur.iter_mut().zip(gs).zip(&level.analytic[k]) {
                        *c += gv * conj_phase * h;
                    }
                }
            }
            if let Some(Some(g)) = grad.lowpasses.get(s) {
                for (c, gv) in cur.iter_mut().zip(real_fft(g)) {
                    *c += gv;
                }
            }
            acc = cur;
        }
        let n = self.side;
        let mut top: Vec<Complex64> = acc.iter().zip(&self.lo0).map(|(v, w)| v * w).collect();
        if let Some(g) = &grad.highpass {
            for ((c, gv), h) in top.iter_mut().zip(real_fft(g)).zip(&self.hi0) {
                *c += gv * h;
            }
        }
        ifft2(&mut top, n, n);
        top.into_iter().map(|c| c.re).collect()
    }
}

fn real_fft(data: &[f64]) -> Vec<Complex64> {
    let n = (data.len() as f64).sqrt() as usize;
    let mut spec: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spec, n, n);
    spec
}

fn real_ifft(mut spec: Vec<Complex64>, n: usize) -> Vec<f64> {
    ifft2(&mut spec, n, n);
    spec.into_iter().map(|c| c.re).collect()
}

/// Every linear output of the transform, in spatial form.
#[derive(Clone, Debug)]
pub struct Analysis {
    pub highpass: Vec<f64>,
    /// Lowpass image entering each scale, then the final residual
    /// (`scales + 1` entries, unitary scaling).
    pub lowpasses: Vec<Vec<f64>>,
    /// Real bands, index `scale * K + orientation`.
    pub bands: Vec<Vec<f64>>,
    /// Analytic bands whose real part equals `bands`.
    pub analytic: Vec<Vec<Complex64>>,
}

/// Gradient with respect to the outputs of [`Analysis`]; for analytic bands
/// the value is `dL/dRe + i dL/dIm`.
#[derive(Clone, Debug, Default)]
pub struct AnalysisGrad {
    pub highpass: Option<Vec<f64>>,
    pub lowpasses: Vec<Option<Vec<f64>>>,
    pub bands: Vec<Option<Vec<f64>>>,
    pub analytic: Vec<Option<Vec<Complex64>>>,
}

impl AnalysisGrad {
    pub fn empty(scales: usize, orientations: usize) -> Self {
        Self {
            highpass: None,
            lowpasses: vec![None; scales + 1],
            bands: vec![None; scales * orientations],
            analytic: vec![None; scales * orientations],
        }
    }
}

/// Real steerable pyramid of a square power-of-two grayscale image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteerablePyramid {
    side: usize,
    scales: usize,
    orientations: usize,
    highpass: ImageBuffer,
    bands: Vec<ImageBuffer>,
    lowpass: ImageBuffer,
}

impl SteerablePyramid {
    pub fn decompose(img: &ImageBuffer, scales: usize, orientations: usize) -> Result<Self> {
        Self::decompose_with(
            img,
            &SteerableConfig {
                scales,
                orientations,
                resize: ResizePolicy::CenterCrop,
            },
        )
    }

    pub fn decompose_with(img: &ImageBuffer, cfg: &SteerableConfig) -> Result<Self> {
        let square = prepare_square(img, cfg.resize)?;
        let side = square.width();
        let bank = FilterBank::get(side, cfg.scales, cfg.orientations)?;
        let analysis = bank.analyze(square.data());
        let to_img = |v: Vec<f64>| {
            let n = (v.len() as f64).sqrt() as usize;
            ImageBuffer::gray(n, n, v)
        };
        let Analysis {
            highpass,
            mut lowpasses,
            bands,
            ..
        } = analysis;
        Ok(Self {
            side,
            scales: cfg.scales,
            orientations: cfg.orientations,
            highpass: to_img(highpass),
            bands: bands.into_iter().map(to_img).collect(),
            lowpass: to_img(lowpasses.pop().expect("residual")),
        })
    }

    pub fn reconstruct(&self) -> Result<ImageBuffer> {
        let bank = FilterBank::get(self.side, self.scales, self.orientations)?;
        if self.highpass.dims() != (self.side, self.side) {
            return Err(Error::Structure("highpass does not match pyramid side".into()));
        }
        if self.bands.len() != self.scales * self.orientations {
            return Err(Error::Structure(format!(
                "expected {} bands, found {}",
                self.scales * self.orientations,
                self.bands.len()
            )));
        }
        for (i, band) in self.bands.iter().enumerate() {
            let side = bank.level_side(i / self.orientations);
            if band.dims() != (side, side) {
                return Err(Error::Structure(format!(
                    "band {i} is {}x{}, expected {side}x{side}",
                    band.width(),
                    band.height()
                )));
            }
        }
        let residual = bank.level_side(self.scales);
        if self.lowpass.dims() != (residual, residual) {
            return Err(Error::Structure("lowpass residual has the wrong size".into()));
        }
        let mut grad = AnalysisGrad::empty(self.scales, self.orientations);
        grad.highpass = Some(self.highpass.data().to_vec());
        grad.bands = self.bands.iter().map(|b| Some(b.data().to_vec())).collect();
        grad.lowpasses[self.scales] = Some(self.lowpass.data().to_vec());
        Ok(ImageBuffer::gray(self.side, self.side, bank.adjoint(&grad)))
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn band(&self, scale: usize, orientation: usize) -> &ImageBuffer {
        &self.bands[scale * self.orientations + orientation]
    }

    pub fn band_mut(&mut self, scale: usize, orientation: usize) -> &mut ImageBuffer {
        &mut self.bands[scale * self.orientations + orientation]
    }

    pub fn bands(&self) -> &[ImageBuffer] {
        &self.bands
    }

    pub fn highpass(&self) -> &ImageBuffer {
        &self.highpass
    }

    pub fn highpass_mut(&mut self) -> &mut ImageBuffer {
        &mut self.highpass
    }

    pub fn lowpass(&self) -> &ImageBuffer {
        &self.lowpass
    }

    pub fn lowpass_mut(&mut self) -> &mut ImageBuffer {
        &mut self.lowpass
    }

    /// Mean intensity represented by the residual; the unitary scaling makes
    /// the residual `2^scales` times the image mean.
    pub fn lowpass_mean_intensity(&self) -> f64 {
        self.lowpass.mean() / (1u64 << self.scales) as f64
    }

    /// Sum of squares over every coefficient.
    pub fn energy(&self) -> f64 {
        let sq = |img: &ImageBuffer| img.data().iter().map(|v| v * v).sum::<f64>();
        sq(&self.highpass) + sq(&self.lowpass) + self.bands.iter().map(sq).sum::<f64>()
    }

    /// Energy of the oriented bands per orientation, summed over scales.
    pub fn orientation_energy(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.orientations];
        for (i, band) in self.bands.iter().enumerate() {
            out[i % self.orientations] += band.data().iter().map(|v| v * v).sum::<f64>();
        }
        out
    }

    /// Fraction of the radial-angular filter energy each orientation
    /// receives for a frequency at angle `theta`.
    pub fn angular_response(orientations: usize, theta: f64) -> Vec<f64> {
        let order = orientations - 1;
        let norm2 = 2f64.powi(2 * order as i32) * factorial(order).powi(2)
            / (orientations as f64 * factorial(2 * order));
        (0..orientations)
            .map(|k| norm2 * (theta - PI * k as f64 / orientations as f64).cos().powi(2 * order as i32))
            .collect()
    }
}
