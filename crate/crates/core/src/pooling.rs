//! Log-polar pooling regions around a fixation point.
//!
//! Regions sit on a lattice that is uniform in log-eccentricity and polar
//! angle. Each window is the product of a radial and an angular
//! cosine-squared profile whose neighbours overlap by half, so the weights
//! of all regions sum to one at every pixel. Eccentricities below
//! `min_region_px / s` are pooled by a single foveal disc.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::texture::{support_box, Window};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    /// Region diameter divided by eccentricity.
    pub s: f64,
    /// Fixation point `(x, y)` in pixel coordinates; may lie outside the image.
    pub z: (f64, f64),
    pub min_region_px: f64,
    pub width: usize,
    pub height: usize,
}

impl PoolingConfig {
    /// Fixation `z_x` pixels from the left edge at mid-height.
    pub fn new(width: usize, height: usize, s: f64, z_x: f64) -> Self {
        Self {
            s,
            z: (z_x, height as f64 / 2.0),
            min_region_px: 16.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0) || !self.s.is_finite() {
            return Err(Error::Config(format!("scaling factor s must be > 0, got {}", self.s)));
        }
        if !(self.min_region_px >= 8.0) {
            return Err(Error::Config(format!(
                "min_region_px must be >= 8, got {}",
                self.min_region_px
            )));
        }
        if !self.z.0.is_finite() || !self.z.1.is_finite() {
            return Err(Error::Config("fixation must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Dimension("empty image".into()));
        }
        Ok(())
    }

    /// Nominal region diameter at an eccentricity.
    pub fn nominal_diameter(&self, ecc: f64) -> f64 {
        (self.s * ecc).max(self.min_region_px)
    }

    pub fn lattice(&self) -> Lattice {
        Lattice::new(self)
    }
}

/// Closed-form description of the log-polar lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Spacing in natural-log eccentricity.
    pub dt: f64,
    /// Log-eccentricity of the foveal disc edge (where ring 1 starts rising).
    pub t_fovea: f64,
    pub n_theta: usize,
    pub dtheta: f64,
}

impl Lattice {
    fn new(cfg: &PoolingConfig) -> Self {
        // Half-maximum width of a ring equals s * ecc radially and around
        // the circle.
        let dt = 2.0 * (cfg.s / 2.0).asinh();
        let n_theta = ((2.0 * PI / cfg.s).round() as usize).max(1);
        Self {
            dt,
            t_fovea: (cfg.min_region_px / cfg.s).ln(),
            n_theta,
            dtheta: 2.0 * PI / n_theta as f64,
        }
    }

    /// Log-eccentricity of ring `j >= 1`.
    pub fn ring_t(&self, j: usize) -> f64 {
        self.t_fovea + j as f64 * self.dt
    }

    /// Polar angle of sector `k`.
    pub fn sector_theta(&self, k: usize) -> f64 {
        -PI + k as f64 * self.dtheta
    }

    /// Weight of the foveal disc at log-eccentricity `t`.
    pub fn fovea_weight(&self, t: f64) -> f64 {
        if t <= self.t_fovea {
            1.0
        } else if t >= self.t_fovea + self.dt {
            0.0
        } else {
            (PI / 2.0 * (t - self.t_fovea) / self.dt).cos().powi(2)
        }
    }

    pub fn radial_weight(&self, j: usize, t: f64) -> f64 {
        let u = (t - self.ring_t(j)) / self.dt;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (PI / 2.0 * u).cos().powi(2)
        }
    }

    pub fn angular_weight(&self, k: usize, theta: f64) -> f64 {
        if self.n_theta == 1 {
            return 1.0;
        }
        let d = wrap_angle(theta - self.sector_theta(k));
        let u = d / self.dtheta;
        if u.abs() >= 1.0 {
            0.0
        } else {
            (PI / 2.0 * u).cos().powi(2)
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Euclidean distance from `px` to the fixation point.
pub fn eccentricity_of(px: (f64, f64), cfg: &PoolingConfig) -> f64 {
    (px.0 - cfg.z.0).hypot(px.1 - cfg.z.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RegionKind {
    /// Single region covering the whole image.
    Global,
    Fovea,
    Cell { ring: usize, sector: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolingRegion {
    pub kind: RegionKind,
    /// Lattice centre in pixel coordinates.
    pub center: (f64, f64),
    /// Lattice eccentricity of the centre.
    pub eccentricity: f64,
    /// Window-weighted mean eccentricity of the covered pixels.
    pub mean_eccentricity: f64,
    pub nominal_diameter: f64,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    #[serde(skip)]
    pub weights: Vec<f64>,
}

impl PoolingRegion {
    pub fn weight_at(&self, x: usize, y: usize) -> f64 {
        if x < self.x0 || y < self.y0 || x >= self.x0 + self.width || y >= self.y0 + self.height {
            0.0
        } else {
            self.weights[(y - self.y0) * self.width + (x - self.x0)]
        }
    }

    /// Statistic window for a square image of side `side`.
    pub fn window(&self, side: usize) -> Window {
        Window {
            side,
            x0: self.x0,
            y0: self.y0,
            width: self.width,
            height: self.height,
            weights: self.weights.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub config: PoolingConfig,
    pub lattice: Lattice,
    /// Set when the scaling is so coarse that one region covers the image.
    pub global_fallback: bool,
    pub regions: Vec<PoolingRegion>,
}

impl RegionSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Statistic windows, one per region; the image must be square.
    pub fn windows(&self) -> Result<Vec<Window>> {
        if self.config.width != self.config.height {
            return Err(Error::Dimension(format!(
                "pooled statistics need a square image, got {}x{}",
                self.config.width, self.config.height
            )));
        }
        Ok(self.regions.iter().map(|r| r.window(self.config.width)).collect())
    }

    pub fn weight_sum_at(&self, x: usize, y: usize) -> f64 {
        self.regions.iter().map(|r| r.weight_at(x, y)).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Smallest and largest pixel eccentricity inside the image.
fn eccentricity_range(cfg: &PoolingConfig) -> (f64, f64) {
    let (w, h) = (cfg.width as f64 - 1.0, cfg.height as f64 - 1.0);
    let nx = cfg.z.0.clamp(0.0, w);
    let ny = cfg.z.1.clamp(0.0, h);
    let near = eccentricity_of((nx, ny), cfg);
    let far = [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .iter()
        .map(|&c| eccentricity_of(c, cfg))
        .fold(0.0, f64::max);
    (near, far)
}

pub fn build_regions(cfg: &PoolingConfig) -> Result<RegionSet> {
    cfg.validate()?;
    let lattice = cfg.lattice();
    let (w, h) = (cfg.width, cfg.height);
    let diagonal = (w as f64).hypot(h as f64);
    let (near, far) = eccentricity_range(cfg);

    if cfg.nominal_diameter(near) >= diagonal {
        tracing::warn!(s = cfg.s, "pooling regions cover the whole image; using one global region");
        let mean_ecc = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| eccentricity_of((x as f64, y as f64), cfg))
            .sum::<f64>()
            / (w * h) as f64;
        let center = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let ecc = eccentricity_of(center, cfg);
        return Ok(RegionSet {
            config: *cfg,
            lattice,
            global_fallback: true,
            regions: vec![PoolingRegion {
                kind: RegionKind::Global,
                center,
                eccentricity: ecc,
                mean_eccentricity: mean_ecc,
                nominal_diameter: cfg.nominal_diameter(ecc),
                x0: 0,
                y0: 0,
                width: w,
                height: h,
                weights: vec![1.0; w * h],
            }],
        });
    }

    // Dense weight maps keyed by lattice cell; only touched cells are kept.
    let rings = (((far.max(1.0)).ln() - lattice.t_fovea) / lattice.dt).ceil().max(0.0) as usize + 1;
    let n_theta = lattice.n_theta;
    let mut fovea = vec![0.0; w * h];
    let mut cells: Vec<Option<Vec<f64>>> = vec![None; (rings + 1) * n_theta];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cfg.z.0, y as f64 - cfg.z.1);
            let ecc = dx.hypot(dy);
            let t = if ecc > 0.0 { ecc.ln() } else { f64::NEG_INFINITY };
            let theta = dy.atan2(dx);
            let i = y * w + x;
            fovea[i] = lattice.fovea_weight(t);
            if t <= lattice.t_fovea {
                continue;
            }
            let j_lo = ((t - lattice.t_fovea) / lattice.dt).floor() as usize;
            for j in j_lo.max(1)..=j_lo + 1 {
                let rw = lattice.radial_weight(j, t);
                if rw == 0.0 {
                    continue;
                }
                for k in 0..n_theta {
                    let aw = lattice.angular_weight(k, theta);
                    if aw == 0.0 {
                        continue;
                    }
                    cells[j * n_theta + k].get_or_insert_with(|| vec![0.0; w * h])[i] = rw * aw;
                }
            }
        }
    }

    let mut regions = Vec::new();
    let mut push = |kind: RegionKind, center: (f64, f64), dense: &[f64]| {
        let Some(win) = support_box(w, h, dense) else {
            return;
        };
        let (mut wsum, mut esum) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let wt = dense[y * w + x];
                wsum += wt;
                esum += wt * eccentricity_of((x as f64, y as f64), cfg);
            }
        }
        let ecc = eccentricity_of(center, cfg);
        regions.push(PoolingRegion {
            kind,
            center,
            eccentricity: ecc,
            mean_eccentricity: esum / wsum,
            nominal_diameter: cfg.nominal_diameter(ecc),
            x0: win.0,
            y0: win.1,
            width: win.2,
            height: win.3,
            weights: win.4,
        });
    };
    push(RegionKind::Fovea, cfg.z, &fovea);
    for j in 1..=rings {
        let e = lattice.ring_t(j).exp();
        for k in 0..n_theta {
            if let Some(dense) = &cells[j * n_theta + k] {
                let th = lattice.sector_theta(k);
                let center = (cfg.z.0 + e * th.cos(), cfg.z.1 + e * th.sin());
                push(RegionKind::Cell { ring: j, sector: k }, center, dense);
            }
        }
    }
    Ok(RegionSet {
        config: *cfg,
        lattice,
        global_fallback: false,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eccentricity_examples() {
        let cfg = PoolingConfig::new(256, 256, 0.5, 10.0);
        let z = cfg.z;
        assert_eq!(eccentricity_of(z, &cfg), 0.0);
        assert_eq!(eccentricity_of((z.0 + 3.0, z.1 + 4.0), &cfg), 5.0);
        assert_eq!(eccentricity_of((z.0 + 640.0, z.1), &cfg), 640.0);
    }

    #[test]
    fn validation() {
        let mut cfg = PoolingConfig::new(64, 64, 0.0, 0.0);
        assert!(build_regions(&cfg).is_err());
        cfg.s = 0.5;
        cfg.min_region_px = 4.0;
        assert!(build_regions(&cfg).is_err());
    }

    #[test]
    fn angular_weights_sum_to_one() {
        for s in [0.2, 0.5, 1.3, 2.5, 4.0, 7.0] {
            let cfg = PoolingConfig::new(64, 64, s, 0.0);
            let lat = cfg.lattice();
            for i in 0..50 {
                let th = -PI + i as f64 * 0.1257;
                let sum: f64 = (0..lat.n_theta).map(|k| lat.angular_weight(k, th)).sum();
                assert!((sum - 1.0).abs() < 1e-12, "s={s} th={th} sum={sum}");
            }
        }
    }

    #[test]
    fn wrap_is_in_range() {
        for a in [-7.0, -PI, 0.0, PI, 3.5, 12.0] {
            let r = wrap_angle(a);
            assert!(r > -PI - 1e-12 && r <= PI + 1e-12);
            assert!(((a - r) / (2.0 * PI)).fract().abs() < 1e-9 || ((a - r) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }
}
