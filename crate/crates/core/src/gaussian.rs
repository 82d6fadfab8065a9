//! Gaussian (lowpass) pyramid: separable 5-tap binomial blur with
//! half-sample symmetric reflection, followed by 2x2 block averaging.
//!
//! Both stages conserve total mass in every row and column, so the mean
//! intensity is identical on every level of an even-sized image.

use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};

pub const BINOMIAL_5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Smallest side a pyramid level may have.
pub const MIN_LEVEL_SIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPyramid {
    levels: Vec<ImageBuffer>,
}

impl GaussianPyramid {
    pub fn new(img: &ImageBuffer, levels: usize) -> Result<Self> {
        check_levels(img.dims(), levels)?;
        let mut out = Vec::with_capacity(levels);
        out.push(img.clone());
        for _ in 1..levels {
            let next = reduce(out.last().expect("nonempty"));
            out.push(next);
        }
        Ok(Self { levels: out })
    }

    pub fn levels(&self) -> &[ImageBuffer] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> Option<&ImageBuffer> {
        self.levels.get(k)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Validate that `levels` fit into an image of the given size.
pub fn check_levels((w, h): (usize, usize), levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::Dimension("a pyramid needs at least one level".into()));
    }
    let side = w.min(h);
    if side == 0 || side >> (levels - 1) < MIN_LEVEL_SIDE {
        return Err(Error::Dimension(format!(
            "{levels} levels need min(width, height) >= {}, got {w}x{h}",
            MIN_LEVEL_SIDE << (levels - 1)
        )));
    }
    Ok(())
}

/// Largest level count an image of this size supports.
pub fn max_levels((w, h): (usize, usize)) -> usize {
    let mut levels = 0;
    while check_levels((w, h), levels + 1).is_ok() {
        levels += 1;
    }
    levels
}

/// Single level `k` of the pyramid without keeping the intermediates.
pub fn lowpass_level(img: &ImageBuffer, k: usize) -> Result<ImageBuffer> {
    check_levels(img.dims(), k + 1)?;
    let mut cur = img.clone();
    for _ in 0..k {
        cur = reduce(&cur);
    }
    Ok(cur)
}

/// Adjoint of [`lowpass_level`] applied to a gradient living on level `k`.
pub fn lowpass_level_adjoint(grad: &ImageBuffer, source_dims: (usize, usize), k: usize) -> ImageBuffer {
    let mut dims = vec![source_dims];
    for _ in 0..k {
        let (w, h) = *dims.last().expect("nonempty");
        dims.push((w.div_ceil(2), h.div_ceil(2)));
    }
    let mut g = grad.clone();
    for level in (0..k).rev() {
        g = reduce_adjoint(&g, dims[level]);
    }
    g
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Blur then 2x2-average one level; channels are processed independently.
pub fn reduce(img: &ImageBuffer) -> ImageBuffer {
    let planes: Vec<ImageBuffer> = (0..img.channels())
        .map(|c| downsample(&blur(&img.channel(c))))
        .collect();
    ImageBuffer::from_channels(&planes).expect("uniform planes")
}

/// Adjoint of [`reduce`] for a gradient on the reduced grid.
pub fn reduce_adjoint(grad: &ImageBuffer, source_dims: (usize, usize)) -> ImageBuffer {
    let planes: Vec<ImageBuffer> = (0..grad.channels())
        .map(|c| blur_adjoint(&downsample_adjoint(&grad.channel(c), source_dims)))
        .collect();
    ImageBuffer::from_channels(&planes).expect("uniform planes")
}

pub fn blur(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = img.dims();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = BINOMIAL_5
                .iter()
                .enumerate()
                .map(|(k, c)| c * img.at(reflect(x as isize + k as isize - 2, w), y))
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = BINOMIAL_5
                .iter()
                .enumerate()
                .map(|(k, c)| c * tmp[reflect(y as isize + k as isize - 2, h) * w + x])
                .sum();
        }
    }
    ImageBuffer::gray(w, h, out)
}

fn blur_adjoint(grad: &ImageBuffer) -> ImageBuffer {
    let (w, h) = grad.dims();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = grad.at(x, y);
            for (k, c) in BINOMIAL_5.iter().enumerate() {
                tmp[reflect(y as isize + k as isize - 2, h) * w + x] += c * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let g = tmp[y * w + x];
            for (k, c) in BINOMIAL_5.iter().enumerate() {
                out[y * w + reflect(x as isize + k as isize - 2, w)] += c * g;
            }
        }
    }
    ImageBuffer::gray(w, h, out)
}

fn downsample(img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = img.dims();
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    ImageBuffer::from_fn(ow, oh, |x, y| {
        let mut sum = 0.0;
        let mut count = 0;
        for yy in 2 * y..(2 * y + 2).min(h) {
            for xx in 2 * x..(2 * x + 2).min(w) {
                sum += img.at(xx, yy);
                count += 1;
            }
        }
        sum / count as f64
    })
}

fn downsample_adjoint(grad: &ImageBuffer, (w, h): (usize, usize)) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |x, y| {
        let (bx, by) = (x / 2, y / 2);
        let count = ((2 * bx + 2).min(w) - 2 * bx) * ((2 * by + 2).min(h) - 2 * by);
        grad.at(bx, by) / count as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    #[test]
    fn kernel_sums_to_one() {
        assert!((BINOMIAL_5.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = ImageBuffer::filled(64, 64, 0.5);
        let pyr = GaussianPyramid::new(&img, 4).unwrap();
        for level in pyr.levels() {
            assert!(level.data().iter().all(|v| (v - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn sizes_halve() {
        let pyr = GaussianPyramid::new(&ImageBuffer::zeros(256, 256), 4).unwrap();
        let sides: Vec<_> = pyr.levels().iter().map(|l| l.width()).collect();
        assert_eq!(sides, vec![256, 128, 64, 32]);
        let odd = GaussianPyramid::new(&ImageBuffer::zeros(37, 21), 3).unwrap();
        assert_eq!(odd.level(1).unwrap().dims(), (19, 11));
        assert_eq!(odd.level(2).unwrap().dims(), (10, 6));
    }

    #[test]
    fn too_many_levels() {
        assert!(matches!(
            GaussianPyramid::new(&ImageBuffer::zeros(32, 32), 5),
            Err(Error::Dimension(_))
        ));
        assert!(GaussianPyramid::new(&ImageBuffer::zeros(32, 32), 4).is_ok());
        assert!(GaussianPyramid::new(&ImageBuffer::zeros(32, 32), 0).is_err());
        assert_eq!(max_levels((256, 256)), 7);
    }

    #[test]
    fn impulse_mass_scales_with_area() {
        let mut img = ImageBuffer::zeros(64, 64);
        img.set(32, 32, 1.0);
        let pyr = GaussianPyramid::new(&img, 4).unwrap();
        for (k, level) in pyr.levels().iter().enumerate() {
            let mass: f64 = level.data().iter().sum::<f64>() * 4f64.powi(k as i32);
            assert!((mass - 1.0).abs() < 1e-9, "level {k}: {mass}");
        }
    }

    #[test]
    fn mean_preserved_on_noise() {
        let img = noise(64, 48, 3);
        let pyr = GaussianPyramid::new(&img, 4).unwrap();
        for level in pyr.levels() {
            assert!((level.mean() - img.mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity() {
        let x = noise(34, 17, 1);
        let g = noise(9, 5, 2);
        let fx = lowpass_level(&x, 2).unwrap();
        assert_eq!(fx.dims(), (9, 5));
        let lhs: f64 = fx.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let adj = lowpass_level_adjoint(&g, (34, 17), 2);
        let rhs: f64 = x.data().iter().zip(adj.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
