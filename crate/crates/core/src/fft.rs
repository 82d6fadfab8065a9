//! Unitary 2-D DFT on row-major complex grids.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut cell = cell.borrow_mut();
        let (planner, cache) = &mut *cell;
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                planner.plan_fft(len, dir)
            })
            .clone()
    })
}

fn transform(data: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    debug_assert_eq!(data.len(), width * height);
    let row = plan(width, inverse);
    for chunk in data.chunks_exact_mut(width) {
        row.process(chunk);
    }
    let col = plan(height, inverse);
    let mut buf = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            buf[y] = data[y * width + x];
        }
        col.process(&mut buf);
        for y in 0..height {
            data[y * width + x] = buf[y];
        }
    }
    let scale = 1.0 / ((width * height) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
}

/// In-place unitary forward transform.
pub fn fft2(data: &mut [Complex64], width: usize, height: usize) {
    transform(data, width, height, false);
}

/// In-place unitary inverse transform.
pub fn ifft2(data: &mut [Complex64], width: usize, height: usize) {
    transform(data, width, height, true);
}

pub fn fft2_real(data: &[f64], width: usize, height: usize) -> Vec<Complex64> {
    let mut out: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut out, width, height);
    out
}

/// Signed frequency of DFT index `k` on an axis of length `n`, in cycles per
/// sample scaled so that Nyquist is 1.
#[inline]
pub fn signed_freq(k: usize, n: usize) -> f64 {
    let k = k as isize;
    let n = n as isize;
    let s = if k >= (n + 1) / 2 { k - n } else { k };
    2.0 * s as f64 / n as f64
}

/// Keep the central `n/2` frequencies of an `n x n` spectrum in DFT order.
pub fn crop_spectrum(spec: &[Complex64], n: usize) -> Vec<Complex64> {
    let m = n / 2;
    let mut out = vec![Complex64::default(); m * m];
    for y in 0..m {
        let sy = map_index(y, m, n);
        for x in 0..m {
            out[y * m + x] = spec[sy * n + map_index(x, m, n)];
        }
    }
    out
}

/// Adjoint of [`crop_spectrum`]: zero-pad an `m x m` spectrum into `2m x 2m`.
pub fn pad_spectrum(spec: &[Complex64], m: usize) -> Vec<Complex64> {
    let n = 2 * m;
    let mut out = vec![Complex64::default(); n * n];
    for y in 0..m {
        let sy = map_index(y, m, n);
        for x in 0..m {
            out[sy * n + map_index(x, m, n)] = spec[y * m + x];
        }
    }
    out
}

/// Position in the size-`n` DFT grid of index `k` from the size-`m` grid.
#[inline]
fn map_index(k: usize, m: usize, n: usize) -> usize {
    if k < m / 2 {
        k
    } else {
        k + (n - m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unitary_round_trip() {
        let data: Vec<f64> = (0..48).map(|i| ((i * 7) % 11) as f64 - 3.0).collect();
        let mut spec = fft2_real(&data, 8, 6);
        let energy_space: f64 = data.iter().map(|v| v * v).sum();
        let energy_freq: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
        assert!((energy_space - energy_freq).abs() < 1e-9);
        ifft2(&mut spec, 8, 6);
        for (a, b) in data.iter().zip(&spec) {
            assert!((a - b.re).abs() < 1e-12 && b.im.abs() < 1e-12);
        }
    }

    #[test]
    fn crop_pad_adjoint() {
        let a: Vec<Complex64> = (0..64).map(|i| Complex64::new(i as f64, -(i as f64) / 3.0)).collect();
        let b: Vec<Complex64> = (0..16).map(|i| Complex64::new(1.0 + i as f64, 0.5)).collect();
        let lhs: Complex64 = crop_spectrum(&a, 8).iter().zip(&b).map(|(x, y)| x * y.conj()).sum();
        let rhs: Complex64 = a.iter().zip(&pad_spectrum(&b, 4)).map(|(x, y)| x * y.conj()).sum();
        assert!((lhs - rhs).norm() < 1e-9);
    }

    #[test]
    fn frequency_layout() {
        assert_eq!(signed_freq(0, 8), 0.0);
        assert_eq!(signed_freq(3, 8), 0.75);
        assert_eq!(signed_freq(4, 8), -1.0);
        assert_eq!(signed_freq(7, 8), -0.25);
    }
}
