//! Texture summary statistics over a steerable pyramid, their weighted
//! distance, and the analytic gradient of that distance.
//!
//! Statistic groups, in vector order, for `S` scales, `K` orientations and
//! an `m x m` autocorrelation window:
//!
//! | group                 | count               |
//! |-----------------------|---------------------|
//! | pixel marginals       | 6                   |
//! | highpass variance     | 1                   |
//! | lowpass autocorr.     | (S + 1)(m^2 + 1)/2  |
//! | magnitude means       | S K                 |
//! | magnitude covariances | S K (K + 1)/2       |
//! | cross-scale mag. cov. | (S - 1) K^2         |
//!
//! Marginals are mean, variance, skewness, excess kurtosis, min and max.
//! Every statistic is a window-weighted average, so the same code serves
//! global statistics (uniform window) and pooled statistics (one window per
//! pooling region). Lowpass images and band magnitudes at scale `s` are
//! rescaled by `2^-s` so a constant image has the same lowpass value at
//! every scale.

use std::sync::Arc;

use num_complex::Complex64;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};
use crate::steerable::{check_geometry, Analysis, AnalysisGrad, FilterBank};

/// Variance below which skewness and kurtosis are reported as zero.
pub const DEGENERATE_VARIANCE: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatGroup {
    Marginals,
    Highpass,
    Autocorrelation,
    MagnitudeMeans,
    MagnitudeCovariance,
    CrossScale,
}

impl StatGroup {
    pub const ALL: [StatGroup; 6] = [
        StatGroup::Marginals,
        StatGroup::Highpass,
        StatGroup::Autocorrelation,
        StatGroup::MagnitudeMeans,
        StatGroup::MagnitudeCovariance,
        StatGroup::CrossScale,
    ];
}

/// Per-group loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupWeights {
    pub marginals: f64,
    pub highpass: f64,
    pub autocorrelation: f64,
    pub magnitude_means: f64,
    pub magnitude_covariance: f64,
    pub cross_scale: f64,
}

impl GroupWeights {
    pub fn get(&self, group: StatGroup) -> f64 {
        match group {
            StatGroup::Marginals => self.marginals,
            StatGroup::Highpass => self.highpass,
            StatGroup::Autocorrelation => self.autocorrelation,
            StatGroup::MagnitudeMeans => self.magnitude_means,
            StatGroup::MagnitudeCovariance => self.magnitude_covariance,
            StatGroup::CrossScale => self.cross_scale,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            marginals: self.marginals * c,
            highpass: self.highpass * c,
            autocorrelation: self.autocorrelation * c,
            magnitude_means: self.magnitude_means * c,
            magnitude_covariance: self.magnitude_covariance * c,
            cross_scale: self.cross_scale * c,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatConfig {
    pub scales: usize,
    pub orientations: usize,
    /// Side of the square autocorrelation window (odd).
    pub autocorr_window: usize,
    /// `None` means inverse group cardinality.
    #[serde(default)]
    pub weights: Option<GroupWeights>,
    /// Intensity scale used to bring statistics of different units
    /// (intensity, intensity squared, dimensionless) onto a common footing
    /// in the distance.
    #[serde(default = "default_reference_contrast")]
    pub reference_contrast: f64,
}

fn default_reference_contrast() -> f64 {
    0.2
}

impl Default for StatConfig {
    fn default() -> Self {
        Self {
            scales: 4,
            orientations: 4,
            autocorr_window: 7,
            weights: None,
            reference_contrast: default_reference_contrast(),
        }
    }
}

impl StatConfig {
    pub fn new(scales: usize, orientations: usize, autocorr_window: usize) -> Self {
        Self {
            scales,
            orientations,
            autocorr_window,
            weights: None,
            reference_contrast: default_reference_contrast(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.orientations == 0 {
            return Err(Error::Config("scales * orientations must be >= 1".into()));
        }
        if self.autocorr_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "autocorrelation window {} must be odd",
                self.autocorr_window
            )));
        }
        if !(self.reference_contrast > 0.0) || !self.reference_contrast.is_finite() {
            return Err(Error::Config("reference contrast must be finite and > 0".into()));
        }
        if let Some(w) = &self.weights {
            if StatGroup::ALL.iter().any(|&g| !(w.get(g) >= 0.0) || !w.get(g).is_finite()) {
                return Err(Error::Config("group weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    /// Validate against an image side: the pyramid must fit and the coarsest
    /// lowpass must be at least as wide as the autocorrelation window.
    pub fn validate_for(&self, side: usize) -> Result<()> {
        self.validate()?;
        check_geometry(side, self.scales, self.orientations)?;
        let residual = side >> self.scales;
        if residual < self.autocorr_window {
            return Err(Error::Dimension(format!(
                "coarsest lowpass {residual}x{residual} is smaller than the {}x{} autocorrelation window",
                self.autocorr_window, self.autocorr_window
            )));
        }
        Ok(())
    }

    /// Largest-scale configuration (keeping orientations and window) that fits
    /// an image of side `side`, never exceeding `self.scales`.
    pub fn fit_to(&self, side: usize) -> Option<StatConfig> {
        (1..=self.scales).rev().find_map(|s| {
            let cfg = StatConfig { scales: s, ..*self };
            cfg.validate_for(side).ok().map(|_| cfg)
        })
    }

    pub fn group_len(&self, group: StatGroup) -> usize {
        let (s, k, m) = (self.scales, self.orientations, self.autocorr_window);
        match group {
            StatGroup::Marginals => 6,
            StatGroup::Highpass => 1,
            StatGroup::Autocorrelation => (s + 1) * (m * m + 1) / 2,
            StatGroup::MagnitudeMeans => s * k,
            StatGroup::MagnitudeCovariance => s * k * (k + 1) / 2,
            StatGroup::CrossScale => (s - 1) * k * k,
        }
    }

    /// Closed-form vector length (see the module table).
    pub fn stat_len(&self) -> usize {
        StatGroup::ALL.iter().map(|&g| self.group_len(g)).sum()
    }

    /// Weights actually applied: explicit, or inverse cardinality.
    pub fn group_weights(&self) -> GroupWeights {
        self.weights.unwrap_or_else(|| {
            let inv = |g| {
                let n = self.group_len(g);
                if n == 0 {
                    0.0
                } else {
                    1.0 / n as f64
                }
            };
            GroupWeights {
                marginals: inv(StatGroup::Marginals),
                highpass: inv(StatGroup::Highpass),
                autocorrelation: inv(StatGroup::Autocorrelation),
                magnitude_means: inv(StatGroup::MagnitudeMeans),
                magnitude_covariance: inv(StatGroup::MagnitudeCovariance),
                cross_scale: inv(StatGroup::CrossScale),
            }
        })
    }

    /// Power of intensity each entry is measured in.
    pub fn entry_units(&self) -> Vec<i32> {
        let mut units = vec![1, 2, 0, 0, 1, 1, 2];
        for g in &StatGroup::ALL[2..] {
            let u = if *g == StatGroup::MagnitudeMeans { 1 } else { 2 };
            units.extend(std::iter::repeat_n(u, self.group_len(*g)));
        }
        units
    }

    /// Weight of every vector entry: the group weight divided by the
    /// squared reference scale of the entry's unit.
    pub fn entry_weights(&self) -> Vec<f64> {
        let gw = self.group_weights();
        let units = self.entry_units();
        StatGroup::ALL
            .iter()
            .flat_map(|&g| std::iter::repeat_n(gw.get(g), self.group_len(g)))
            .zip(units)
            .map(|(w, u)| w * self.reference_contrast.powi(-2 * u))
            .collect()
    }

    /// Autocorrelation offsets `(dx, dy)`, one per symmetric pair.
    pub fn autocorr_offsets(&self) -> Vec<(isize, isize)> {
        let h = (self.autocorr_window / 2) as isize;
        let mut out = Vec::new();
        for dy in 0..=h {
            for dx in -h..=h {
                if dy > 0 || dx >= 0 {
                    out.push((dx, dy));
                }
            }
        }
        out
    }

    /// Stable names for every vector entry.
    pub fn stat_names(&self) -> Vec<String> {
        let (s_max, k_max) = (self.scales, self.orientations);
        let mut names: Vec<String> = ["mean", "variance", "skewness", "kurtosis", "min", "max"]
            .iter()
            .map(|n| format!("marginal.{n}"))
            .collect();
        names.push("highpass.variance".into());
        let offsets = self.autocorr_offsets();
        for s in 0..=s_max {
            for (dx, dy) in &offsets {
                names.push(format!("autocorr.s{s}.dx{dx}.dy{dy}"));
            }
        }
        for s in 0..s_max {
            for k in 0..k_max {
                names.push(format!("magnitude_mean.s{s}.o{k}"));
            }
        }
        for s in 0..s_max {
            for k in 0..k_max {
                for l in k..k_max {
                    names.push(format!("magnitude_cov.s{s}.o{k}.o{l}"));
                }
            }
        }
        for s in 0..s_max.saturating_sub(1) {
            for k in 0..k_max {
                for l in 0..k_max {
                    names.push(format!("cross_scale.s{s}.o{k}.s{}.o{l}", s + 1));
                }
            }
        }
        names
    }
}

/// A statistic vector together with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct StatVector {
    pub config: StatConfig,
    pub values: Vec<f64>,
    /// Set when the (windowed) pixel variance was below
    /// [`DEGENERATE_VARIANCE`] and skewness/kurtosis were defined as zero.
    pub degenerate: bool,
}

impl StatVector {
    pub fn group(&self, group: StatGroup) -> &[f64] {
        let mut start = 0;
        for &g in &StatGroup::ALL {
            let len = self.config.group_len(g);
            if g == group {
                return &self.values[start..start + len];
            }
            start += len;
        }
        unreachable!("all groups enumerated")
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.config
            .stat_names()
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    fn same_layout(&self, other: &StatVector) -> bool {
        self.config.scales == other.config.scales
            && self.config.orientations == other.config.orientations
            && self.config.autocorr_window == other.config.autocorr_window
            && self.config.group_weights() == other.config.group_weights()
            && self.config.reference_contrast == other.config.reference_contrast
            && self.values.len() == other.values.len()
    }
}

impl Serialize for StatVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Fields<'a>(&'a StatVector);
        impl Serialize for Fields<'_> {
            fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
                let names = self.0.config.stat_names();
                let mut map = serializer.serialize_map(Some(names.len()))?;
                for (n, v) in names.iter().zip(&self.0.values) {
                    map.serialize_entry(n, v)?;
                }
                map.end()
            }
        }
        let mut map = serializer.serialize_map(Some(3))?;
        map.serialize_entry("config", &self.config)?;
        map.serialize_entry("degenerate", &self.degenerate)?;
        map.serialize_entry("stats", &Fields(self))?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for StatVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            config: StatConfig,
            degenerate: bool,
            stats: std::collections::HashMap<String, f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let names = raw.config.stat_names();
        if raw.stats.len() != names.len() {
            return Err(D::Error::custom(format!(
                "expected {} statistics, found {}",
                names.len(),
                raw.stats.len()
            )));
        }
        let values = names
            .iter()
            .map(|n| {
                raw.stats
                    .get(n)
                    .copied()
                    .ok_or_else(|| D::Error::custom(format!("missing statistic {n}")))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(StatVector {
            config: raw.config,
            values,
            degenerate: raw.degenerate,
        })
    }
}

/// Weighted L2 distance over groups; errors when the vectors come from
/// different configurations.
pub fn stat_distance(a: &StatVector, b: &StatVector) -> Result<f64> {
    if !a.same_layout(b) {
        return Err(Error::Config("statistic vectors come from different configurations".into()));
    }
    Ok(weighted_sq_distance(&a.config.entry_weights(), &a.values, &b.values).sqrt())
}

pub(crate) fn weighted_sq_distance(weights: &[f64], a: &[f64], b: &[f64]) -> f64 {
    weights
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * (x - y) * (x - y))
        .sum()
}

/// A spatial weighting window on a square image, stored over its bounding
/// box. Weights are in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub side: usize,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f64>,
}

impl Window {
    pub fn uniform(side: usize) -> Self {
        Self {
            side,
            x0: 0,
            y0: 0,
            width: side,
            height: side,
            weights: vec![1.0; side * side],
        }
    }

    /// Window from a dense `side x side` map, trimmed to its support.
    pub fn from_dense(side: usize, dense: &[f64]) -> Option<Self> {
        assert_eq!(dense.len(), side * side);
        let (x0, y0, width, height, weights) = support_box(side, side, dense)?;
        Some(Self {
            side,
            x0,
            y0,
            width,
            height,
            weights,
        })
    }

    pub fn weight_at(&self, x: usize, y: usize) -> f64 {
        if x < self.x0 || y < self.y0 || x >= self.x0 + self.width || y >= self.y0 + self.height {
            0.0
        } else {
            self.weights[(y - self.y0) * self.width + (x - self.x0)]
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// 2x2 block average onto the next coarser grid.
    fn halve(&self) -> Self {
        let side = self.side / 2;
        let x0 = self.x0 / 2;
        let y0 = self.y0 / 2;
        let x1 = (self.x0 + self.width).div_ceil(2);
        let y1 = (self.y0 + self.height).div_ceil(2);
        let (width, height) = (x1 - x0, y1 - y0);
        let mut weights = Vec::with_capacity(width * height);
        for y in y0..y1 {
            for x in x0..x1 {
                let s = self.weight_at(2 * x, 2 * y)
                    + self.weight_at(2 * x + 1, 2 * y)
                    + self.weight_at(2 * x, 2 * y + 1)
                    + self.weight_at(2 * x + 1, 2 * y + 1);
                weights.push(s / 4.0);
            }
        }
        Self {
            side,
            x0,
            y0,
            width,
            height,
            weights,
        }
    }

    fn indices(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.height).flat_map(move |r| {
            (0..self.width).filter_map(move |c| {
                let w = self.weights[r * self.width + c];
                (w > 0.0).then(|| ((self.y0 + r) * self.side + self.x0 + c, w))
            })
        })
    }
}

/// Bounding box `(x0, y0, width, height, weights)` of the positive support
/// of a dense `w x h` map.
pub(crate) fn support_box(w: usize, h: usize, dense: &[f64]) -> Option<(usize, usize, usize, usize, Vec<f64>)> {
    let (mut x_lo, mut y_lo, mut x_hi, mut y_hi) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if dense[y * w + x] > 0.0 {
                x_lo = x_lo.min(x);
                y_lo = y_lo.min(y);
                x_hi = x_hi.max(x);
                y_hi = y_hi.max(y);
            }
        }
    }
    if x_lo == usize::MAX {
        return None;
    }
    let (bw, bh) = (x_hi - x_lo + 1, y_hi - y_lo + 1);
    let mut weights = Vec::with_capacity(bw * bh);
    for y in y_lo..=y_hi {
        weights.extend_from_slice(&dense[y * w + x_lo..=y * w + x_hi]);
    }
    Some((x_lo, y_lo, bw, bh, weights))
}

/// Windows for every pyramid level of one pooling region.
#[derive(Clone, Debug)]
struct WindowStack {
    levels: Vec<LevelWindow>,
}

#[derive(Clone, Debug)]
struct LevelWindow {
    side: usize,
    entries: Vec<(usize, f64)>,
    total: f64,
}

impl LevelWindow {
    fn new(w: &Window) -> Self {
        let entries: Vec<_> = w.indices().collect();
        let total = entries.iter().map(|(_, w)| w).sum();
        Self {
            side: w.side,
            entries,
            total,
        }
    }
}

impl WindowStack {
    fn new(window: &Window, scales: usize) -> Self {
        let mut levels = vec![LevelWindow::new(window)];
        let mut cur = window.clone();
        for _ in 0..scales {
            cur = cur.halve();
            levels.push(LevelWindow::new(&cur));
        }
        Self { levels }
    }
}

/// Per-image quantities shared by all windows.
struct Features {
    analysis: Analysis,
    /// Rescaled lowpass images, `scales + 1` entries.
    lowpasses: Vec<Vec<f64>>,
    /// Rescaled analytic-band magnitudes, index `scale * K + orientation`.
    mags: Vec<Vec<f64>>,
}

/// Gradient accumulators matching [`Features`].
struct Accum {
    pixels: Vec<f64>,
    highpass: Vec<f64>,
    lowpasses: Vec<Vec<f64>>,
    mags: Vec<Vec<f64>>,
}

fn level_scale(s: usize) -> f64 {
    1.0 / (1u64 << s) as f64
}

/// Weighted moments and their sensitivity to each entry.
struct Moments {
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

fn moments(values: &[f64], win: &LevelWindow) -> Moments {
    let mean = win.entries.iter().map(|&(i, w)| w * values[i]).sum::<f64>() / win.total;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &(i, w) in &win.entries {
        let d = values[i] - mean;
        let d2 = d * d;
        m2 += w * d2;
        m3 += w * d2 * d;
        m4 += w * d2 * d2;
    }
    Moments {
        mean,
        m2: m2 / win.total,
        m3: m3 / win.total,
        m4: m4 / win.total,
    }
}

fn weighted_mean(values: &[f64], win: &LevelWindow) -> f64 {
    win.entries.iter().map(|&(i, w)| w * values[i]).sum::<f64>() / win.total
}

fn weighted_cov(a: &[f64], b: &[f64], ma: f64, mb: f64, win: &LevelWindow) -> f64 {
    win.entries
        .iter()
        .map(|&(i, w)| w * (a[i] - ma) * (b[i] - mb))
        .sum::<f64>()
        / win.total
}

/// Indices with weight at least half the window maximum.
fn core_entries(win: &LevelWindow) -> impl Iterator<Item = usize> + '_ {
    let peak = win.entries.iter().map(|&(_, w)| w).fold(0.0, f64::max);
    win.entries
        .iter()
        .filter(move |&&(_, w)| w >= 0.5 * peak)
        .map(|&(i, _)| i)
}

fn arg_extreme(values: &[f64], win: &LevelWindow, max: bool) -> usize {
    let mut best: Option<usize> = None;
    for i in core_entries(win) {
        best = match best {
            None => Some(i),
            Some(b) if (max && values[i] > values[b]) || (!max && values[i] < values[b]) => Some(i),
            keep => keep,
        };
    }
    best.expect("window has support")
}

#[inline]
fn shifted(i: usize, side: usize, dx: isize, dy: isize) -> usize {
    let (x, y) = ((i % side) as isize, (i / side) as isize);
    let s = side as isize;
    let xx = (x + dx).rem_euclid(s);
    let yy = (y + dy).rem_euclid(s);
    (yy * s + xx) as usize
}

/// Downsample a `side x side` map by 2x2 block averaging.
fn block_average(values: &[f64], side: usize) -> Vec<f64> {
    let half = side / 2;
    let mut out = vec![0.0; half * half];
    for y in 0..half {
        for x in 0..half {
            out[y * half + x] = 0.25
                * (values[2 * y * side + 2 * x]
                    + values[2 * y * side + 2 * x + 1]
                    + values[(2 * y + 1) * side + 2 * x]
                    + values[(2 * y + 1) * side + 2 * x + 1]);
        }
    }
    out
}

/// Texture statistic extractor bound to one image side.
#[derive(Clone, Debug)]
pub struct TextureModel {
    cfg: StatConfig,
    side: usize,
    bank: Arc<FilterBank>,
    entry_weights: Vec<f64>,
    offsets: Vec<(isize, isize)>,
}

impl TextureModel {
    pub fn new(cfg: StatConfig, side: usize) -> Result<Self> {
        cfg.validate_for(side)?;
        Ok(Self {
            bank: FilterBank::get(side, cfg.scales, cfg.orientations)?,
            entry_weights: cfg.entry_weights(),
            offsets: cfg.autocorr_offsets(),
            cfg,
            side,
        })
    }

    pub fn config(&self) -> &StatConfig {
        &self.cfg
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn entry_weights(&self) -> &[f64] {
        &self.entry_weights
    }

    fn check_image(&self, img: &ImageBuffer) -> Result<()> {
        if img.channels() != 1 {
            return Err(Error::Invalid("texture statistics need a grayscale image".into()));
        }
        if img.dims() != (self.side, self.side) {
            return Err(Error::Dimension(format!(
                "image is {}x{}, model expects {}x{}",
                img.width(),
                img.height(),
                self.side,
                self.side
            )));
        }
        Ok(())
    }

    fn features(&self, img: &ImageBuffer) -> Features {
        let analysis = self.bank.analyze(img.data());
        let lowpasses = analysis
            .lowpasses
            .iter()
            .enumerate()
            .map(|(s, l)| l.iter().map(|v| v * level_scale(s)).collect())
            .collect();
        let k_max = self.cfg.orientations;
        let mags = analysis
            .analytic
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let scale = level_scale(i / k_max);
                c.iter().map(|z| z.norm() * scale).collect()
            })
            .collect();
        Features {
            analysis,
            lowpasses,
            mags,
        }
    }

    /// Global statistics (uniform window).
    pub fn stats(&self, img: &ImageBuffer) -> Result<StatVector> {
        self.check_image(img)?;
        let feats = self.features(img);
        let stack = WindowStack::new(&Window::uniform(self.side), self.cfg.scales);
        let (values, degenerate) = self.eval(&feats, img.data(), &stack);
        Ok(StatVector {
            config: self.cfg,
            values,
            degenerate,
        })
    }

    /// One statistic vector per window.
    pub fn pooled_stats(&self, img: &ImageBuffer, windows: &[Window]) -> Result<Vec<StatVector>> {
        self.check_image(img)?;
        let feats = self.features(img);
        windows
            .iter()
            .map(|w| {
                self.check_window(w)?;
                let stack = WindowStack::new(w, self.cfg.scales);
                let (values, degenerate) = self.eval(&feats, img.data(), &stack);
                Ok(StatVector {
                    config: self.cfg,
                    values,
                    degenerate,
                })
            })
            .collect()
    }

    fn check_window(&self, w: &Window) -> Result<()> {
        if w.side != self.side {
            return Err(Error::Dimension(format!(
                "window built for side {}, model side {}",
                w.side, self.side
            )));
        }
        if w.total() <= 0.0 {
            return Err(Error::Invalid("window has no support".into()));
        }
        Ok(())
    }

    /// `0.5 * sum_r ||stats_r(img) - target_r||^2_w` and its pixel gradient.
    /// A `None` window means the uniform global window.
    pub fn loss_and_gradient(
        &self,
        img: &ImageBuffer,
        targets: &[(Option<&Window>, &[f64])],
    ) -> Result<(f64, ImageBuffer)> {
        self.check_image(img)?;
        let feats = self.features(img);
        let s_max = self.cfg.scales;
        let mut acc = Accum {
            pixels: vec![0.0; self.side * self.side],
            highpass: vec![0.0; self.side * self.side],
            lowpasses: feats.lowpasses.iter().map(|l| vec![0.0; l.len()]).collect(),
            mags: feats.mags.iter().map(|m| vec![0.0; m.len()]).collect(),
        };
        let uniform = Window::uniform(self.side);
        let mut loss = 0.0;
        for (window, target) in targets {
            let window = window.unwrap_or(&uniform);
            self.check_window(window)?;
            if target.len() != self.cfg.stat_len() {
                return Err(Error::Config(format!(
                    "target has {} statistics, configuration produces {}",
                    target.len(),
                    self.cfg.stat_len()
                )));
            }
            let stack = WindowStack::new(window, s_max);
            let (values, _) = self.eval(&feats, img.data(), &stack);
            // A degenerate target has no defined skewness or kurtosis.
            let masked = target[1] < DEGENERATE_VARIANCE;
            let mut dv = vec![0.0; values.len()];
            for i in 0..values.len() {
                if masked && (i == 2 || i == 3) {
                    continue;
                }
                let diff = values[i] - target[i];
                loss += 0.5 * self.entry_weights[i] * diff * diff;
                dv[i] = self.entry_weights[i] * diff;
            }
            self.backprop(&feats, img.data(), &stack, &dv, &mut acc);
        }

        let k_max = self.cfg.orientations;
        let mut grad = AnalysisGrad::empty(s_max, k_max);
        grad.highpass = Some(acc.highpass);
        grad.lowpasses = acc
            .lowpasses
            .into_iter()
            .enumerate()
            .map(|(s, g)| Some(g.into_iter().map(|v| v * level_scale(s)).collect()))
            .collect();
        grad.analytic = acc
            .mags
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let scale = level_scale(i / k_max);
                let band = &feats.analysis.analytic[i];
                Some(
                    g.into_iter()
                        .zip(band)
                        .map(|(gm, z)| {
                            let n = z.norm();
                            if n > 0.0 {
                                z * (gm * scale / n)
                            } else {
                                Complex64::default()
                            }
                        })
                        .collect(),
                )
            })
            .collect();
        let mut pixels = self.bank.adjoint(&grad);
        for (p, d) in pixels.iter_mut().zip(&acc.pixels) {
            *p += d;
        }
        Ok((loss, ImageBuffer::gray(self.side, self.side, pixels)))
    }

    fn eval(&self, feats: &Features, pixels: &[f64], stack: &WindowStack) -> (Vec<f64>, bool) {
        let (s_max, k_max) = (self.cfg.scales, self.cfg.orientations);
        let mut out = Vec::with_capacity(self.cfg.stat_len());
        let top = &stack.levels[0];

        let mo = moments(pixels, top);
        let degenerate = mo.m2 < DEGENERATE_VARIANCE;
        let (skew, kurt) = if degenerate {
            (0.0, 0.0)
        } else {
            (mo.m3 / mo.m2.powf(1.5), mo.m4 / (mo.m2 * mo.m2) - 3.0)
        };
        out.extend([
            mo.mean,
            mo.m2,
            skew,
            kurt,
            pixels[arg_extreme(pixels, top, false)],
            pixels[arg_extreme(pixels, top, true)],
        ]);

        out.push(moments(&feats.analysis.highpass, top).m2);

        for s in 0..=s_max {
            let win = &stack.levels[s];
            let lp = &feats.lowpasses[s];
            let mean = weighted_mean(lp, win);
            for &(dx, dy) in &self.offsets {
                let c = win
                    .entries
                    .iter()
                    .map(|&(i, w)| w * (lp[i] - mean) * (lp[shifted(i, win.side, dx, dy)] - mean))
                    .sum::<f64>()
                    / win.total;
                out.push(c);
            }
        }

        let mag_means: Vec<f64> = (0..s_max * k_max)
            .map(|i| weighted_mean(&feats.mags[i], &stack.levels[i / k_max]))
            .collect();
        out.extend(&mag_means);

        for s in 0..s_max {
            let win = &stack.levels[s];
            for k in 0..k_max {
                for l in k..k_max {
                    let (a, b) = (s * k_max + k, s * k_max + l);
                    out.push(weighted_cov(&feats.mags[a], &feats.mags[b], mag_means[a], mag_means[b], win));
                }
            }
        }

        for s in 0..s_max.saturating_sub(1) {
            let win = &stack.levels[s + 1];
            let fine: Vec<Vec<f64>> = (0..k_max)
                .map(|k| block_average(&feats.mags[s * k_max + k], stack.levels[s].side))
                .collect();
            let fine_means: Vec<f64> = fine.iter().map(|f| weighted_mean(f, win)).collect();
            for k in 0..k_max {
                for l in 0..k_max {
                    let c = (s + 1) * k_max + l;
                    out.push(weighted_cov(&fine[k], &feats.mags[c], fine_means[k], mag_means[c], win));
                }
            }
        }
        debug_assert_eq!(out.len(), self.cfg.stat_len());
        (out, degenerate)
    }

    fn backprop(&self, feats: &Features, pixels: &[f64], stack: &WindowStack, dv: &[f64], acc: &mut Accum) {
        let (s_max, k_max) = (self.cfg.scales, self.cfg.orientations);
        let top = &stack.levels[0];
        let mut cursor = 0;
        let mut take = |n: usize| {
            let slice = &dv[cursor..cursor + n];
            cursor += n;
            slice
        };

        // Marginals.
        let g = take(6);
        let mo = moments(pixels, top);
        let degenerate = mo.m2 < DEGENERATE_VARIANCE;
        let (g_skew, g_kurt) = if degenerate { (0.0, 0.0) } else { (g[2], g[3]) };
        // d(stat)/dm2, d/dm3, d/dm4 collected first.
        let mut c2 = g[1];
        let mut c3 = 0.0;
        let mut c4 = 0.0;
        if !degenerate {
            c3 += g_skew * mo.m2.powf(-1.5);
            c2 += g_skew * (-1.5) * mo.m3 * mo.m2.powf(-2.5);
            c4 += g_kurt / (mo.m2 * mo.m2);
            c2 += g_kurt * (-2.0) * mo.m4 / (mo.m2 * mo.m2 * mo.m2);
        }
        for &(i, w) in &top.entries {
            let d = pixels[i] - mo.mean;
            let f = w / top.total;
            acc.pixels[i] += f
                * (g[0] + c2 * 2.0 * d + c3 * (3.0 * d * d - 3.0 * mo.m2) + c4 * (4.0 * d * d * d - 4.0 * mo.m3));
        }
        acc.pixels[arg_extreme(pixels, top, false)] += g[4];
        acc.pixels[arg_extreme(pixels, top, true)] += g[5];

        // Highpass variance.
        let g = take(1)[0];
        if g != 0.0 {
            let hp = &feats.analysis.highpass;
            let mean = weighted_mean(hp, top);
            for &(i, w) in &top.entries {
                acc.highpass[i] += g * 2.0 * w * (hp[i] - mean) / top.total;
            }
        }

        // Autocorrelation.
        for s in 0..=s_max {
            let g = take(self.offsets.len());
            let win = &stack.levels[s];
            let lp = &feats.lowpasses[s];
            let mean = weighted_mean(lp, win);
            let side = win.side;
            let mut local = vec![0.0; lp.len()];
            for (&(dx, dy), &gc) in self.offsets.iter().zip(g) {
                if gc == 0.0 {
                    continue;
                }
                let f = gc / win.total;
                for &(i, w) in &win.entries {
                    let j = shifted(i, side, dx, dy);
                    local[i] += f * w * (lp[j] - mean);
                    local[j] += f * w * (lp[i] - mean);
                }
            }
            // Undo the centring: subtract the weighted share of the total.
            let total: f64 = local.iter().sum();
            for &(i, w) in &win.entries {
                local[i] -= w / win.total * total;
            }
            for (a, l) in acc.lowpasses[s].iter_mut().zip(local) {
                *a += l;
            }
        }

        let mag_means: Vec<f64> = (0..s_max * k_max)
            .map(|i| weighted_mean(&feats.mags[i], &stack.levels[i / k_max]))
            .collect();

        // Magnitude means.
        let g = take(s_max * k_max);
        for (i, &gm) in g.iter().enumerate() {
            if gm == 0.0 {
                continue;
            }
            let win = &stack.levels[i / k_max];
            for &(p, w) in &win.entries {
                acc.mags[i][p] += gm * w / win.total;
            }
        }

        // Within-scale magnitude covariances.
        for s in 0..s_max {
            let g = take(k_max * (k_max + 1) / 2);
            let win = &stack.levels[s];
            let mut idx = 0;
            for k in 0..k_max {
                for l in k..k_max {
                    let gc = g[idx];
                    idx += 1;
                    if gc == 0.0 {
                        continue;
                    }
                    let (a, b) = (s * k_max + k, s * k_max + l);
                    for &(p, w) in &win.entries {
                        let f = gc * w / win.total;
                        let da = feats.mags[a][p] - mag_means[a];
                        let db = feats.mags[b][p] - mag_means[b];
                        acc.mags[a][p] += f * db;
                        acc.mags[b][p] += f * da;
                    }
                }
            }
        }

        // Cross-scale covariances.
        for s in 0..s_max.saturating_sub(1) {
            let g = take(k_max * k_max);
            let win = &stack.levels[s + 1];
            let fine_side = stack.levels[s].side;
            let coarse_side = win.side;
            let fine: Vec<Vec<f64>> = (0..k_max)
                .map(|k| block_average(&feats.mags[s * k_max + k], fine_side))
                .collect();
            let fine_means: Vec<f64> = fine.iter().map(|f| weighted_mean(f, win)).collect();
            let mut g_fine = vec![vec![0.0; coarse_side * coarse_side]; k_max];
            for k in 0..k_max {
                for l in 0..k_max {
                    let gc = g[k * k_max + l];
                    if gc == 0.0 {
                        continue;
                    }
                    let c = (s + 1) * k_max + l;
                    for &(p, w) in &win.entries {
                        let f = gc * w / win.total;
                        g_fine[k][p] += f * (feats.mags[c][p] - mag_means[c]);
                        acc.mags[c][p] += f * (fine[k][p] - fine_means[k]);
                    }
                }
            }
            for (k, gf) in g_fine.iter().enumerate() {
                let target = &mut acc.mags[s * k_max + k];
                for y in 0..fine_side {
                    for x in 0..fine_side {
                        target[y * fine_side + x] += 0.25 * gf[(y / 2) * coarse_side + x / 2];
                    }
                }
            }
        }
        debug_assert_eq!(cursor, dv.len());
    }
}

/// Global statistics of a grayscale square image.
pub fn compute_stats(img: &ImageBuffer, cfg: &StatConfig) -> Result<StatVector> {
    TextureModel::new(*cfg, img.width())?.stats(img)
}

/// Gradient of `0.5 * stat_distance(stats(img), target)^2` with respect to
/// the pixels of `img`.
pub fn stat_gradient(img: &ImageBuffer, target: &StatVector, cfg: &StatConfig) -> Result<ImageBuffer> {
    let model = TextureModel::new(*cfg, img.width())?;
    if target.config.stat_len() != cfg.stat_len() {
        return Err(Error::Config("target statistics come from a different configuration".into()));
    }
    Ok(model.loss_and_gradient(img, &[(None, &target.values)])?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(n, n, |_, _| rng.random::<f64>())
    }

    #[test]
    fn count_formula_matches_names() {
        for (s, k, m) in [(4, 4, 7), (2, 3, 3), (1, 1, 1), (3, 6, 5)] {
            let cfg = StatConfig::new(s, k, m);
            assert_eq!(cfg.stat_names().len(), cfg.stat_len());
            assert_eq!(cfg.autocorr_offsets().len(), (m * m).div_ceil(2));
        }
    }

    #[test]
    fn constant_image_is_degenerate() {
        let cfg = StatConfig::new(3, 4, 5);
        let st = compute_stats(&ImageBuffer::filled(64, 64, 0.3), &cfg).unwrap();
        assert!(st.degenerate);
        assert!((st.get("marginal.mean").unwrap() - 0.3).abs() < 1e-12);
        assert!(st.get("marginal.variance").unwrap() < 1e-20);
        assert_eq!(st.get("marginal.skewness").unwrap(), 0.0);
        assert_eq!(st.get("marginal.kurtosis").unwrap(), 0.0);
        assert!(st.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn config_validation() {
        assert!(StatConfig::new(2, 4, 4).validate().is_err());
        assert!(StatConfig::new(0, 4, 3).validate().is_err());
        assert!(StatConfig::new(4, 4, 7).validate_for(64).is_err());
        assert!(StatConfig::new(3, 4, 7).validate_for(64).is_ok());
        assert_eq!(StatConfig::new(4, 4, 7).fit_to(64).unwrap().scales, 3);
        assert!(StatConfig::new(4, 4, 7).fit_to(8).is_none());
    }

    #[test]
    fn distance_axioms_and_config_mismatch() {
        let cfg = StatConfig::new(2, 4, 3);
        let a = compute_stats(&noise(32, 1), &cfg).unwrap();
        let b = compute_stats(&noise(32, 2), &cfg).unwrap();
        assert_eq!(stat_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(stat_distance(&a, &b).unwrap(), stat_distance(&b, &a).unwrap());
        assert!(stat_distance(&a, &b).unwrap() > 0.0);
        let other = compute_stats(&noise(32, 2), &StatConfig::new(2, 3, 3)).unwrap();
        assert!(matches!(stat_distance(&a, &other), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip_is_flat_and_named() {
        let cfg = StatConfig::new(2, 2, 3);
        let st = compute_stats(&noise(16, 3), &cfg).unwrap();
        let json = serde_json::to_value(&st).unwrap();
        assert!(json["stats"]["marginal.kurtosis"].is_number());
        assert!(json["stats"]["cross_scale.s0.o1.s1.o0"].is_number());
        let back: StatVector = serde_json::from_value(json).unwrap();
        assert_eq!(back, st);
    }

    #[test]
    fn gradient_zero_at_target() {
        let cfg = StatConfig::new(2, 4, 3);
        let img = noise(16, 4);
        let st = compute_stats(&img, &cfg).unwrap();
        let g = stat_gradient(&img, &st, &cfg).unwrap();
        assert!(g.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn window_halving_keeps_mass_ratio() {
        let dense: Vec<f64> = (0..64).map(|i| if i % 8 < 4 { 1.0 } else { 0.0 }).collect();
        let w = Window::from_dense(8, &dense).unwrap();
        assert_eq!((w.x0, w.width, w.height), (0, 4, 8));
        let h = w.halve();
        assert_eq!(h.side, 4);
        assert!((h.total() * 4.0 - w.total()).abs() < 1e-12);
    }
}
