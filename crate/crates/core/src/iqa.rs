//! Image-quality metrics, per-level IQA reports and the grid search for
//! texform parameters.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};
use crate::gaussian;
use crate::pooling::PoolingConfig;
use crate::synthesis::{synthesize_texform, SynthesisConfig};
use crate::texture::{stat_distance, StatConfig, TextureModel};

/// Mean squared difference over every sample.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub trait PerceptualMetric: Send + Sync {
    fn id(&self) -> String;
    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Mse;

impl PerceptualMetric for Mse {
    fn id(&self) -> String {
        "mse".into()
    }

    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
        mse(a, b)
    }
}

/// Texture-tolerant distance:
/// `alpha * d_s / (d_s + m_s) + (1 - alpha) * d_l / (d_l + m_l)`, where
/// `d_s` is the statistic distance, `d_l` the RMS difference of a coarse
/// Gaussian-pyramid level, and `m_s`, `m_l` their medians on a calibration
/// corpus. Values lie in `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureMetric {
    pub stat_cfg: StatConfig,
    pub alpha: f64,
    pub stat_median: f64,
    pub structure_median: f64,
    /// Requested structural level; clamped to what each image supports.
    pub structure_level: usize,
}

impl TextureMetric {
    pub fn new(stat_cfg: StatConfig) -> Self {
        Self {
            stat_cfg,
            alpha: 0.5,
            stat_median: 1.0,
            structure_median: 1.0,
            structure_level: 3,
        }
    }

    fn prepare(img: &ImageBuffer) -> ImageBuffer {
        img.to_grayscale()
    }

    fn stat_config_for(&self, side: usize) -> Result<StatConfig> {
        self.stat_cfg.fit_to(side).ok_or_else(|| {
            Error::Dimension(format!("image side {side} is too small for texture statistics"))
        })
    }

    /// Raw `(stat distance, structure distance)`.
    pub fn components(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, f64)> {
        if a.dims() != b.dims() {
            return Err(Error::Dimension(format!("{:?} vs {:?}", a.dims(), b.dims())));
        }
        let (a, b) = (Self::prepare(a), Self::prepare(b));
        if a.width() != a.height() {
            return Err(Error::Dimension("texture metric needs square images".into()));
        }
        let model = TextureModel::new(self.stat_config_for(a.width())?, a.width())?;
        let ds = stat_distance(&model.stats(&a)?, &model.stats(&b)?)?;
        let level = self
            .structure_level
            .min(gaussian::max_levels(a.dims()).saturating_sub(1));
        let la = gaussian::lowpass_level(&a, level)?;
        let lb = gaussian::lowpass_level(&b, level)?;
        Ok((ds, mse(&la, &lb)?.sqrt()))
    }

    pub fn combine(&self, ds: f64, dl: f64) -> f64 {
        let norm = |d: f64, m: f64| if d == 0.0 { 0.0 } else { d / (d + m) };
        self.alpha * norm(ds, self.stat_median) + (1.0 - self.alpha) * norm(dl, self.structure_median)
    }

    /// Set both normalizers to the medians over `pairs`.
    pub fn calibrate(&mut self, pairs: &[(&ImageBuffer, &ImageBuffer)]) -> Result<()> {
        let comps = pairs
            .par_iter()
            .map(|(a, b)| self.components(a, b))
            .collect::<Result<Vec<_>>>()?;
        let med = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n == 0 {
                1.0
            } else if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        };
        let pos = |m: f64| if m > 0.0 { m } else { 1.0 };
        self.stat_median = pos(med(comps.iter().map(|c| c.0).collect()));
        self.structure_median = pos(med(comps.iter().map(|c| c.1).collect()));
        Ok(())
    }
}

impl PerceptualMetric for TextureMetric {
    fn id(&self) -> String {
        format!(
            "texture-a{}-s{}-k{}-m{}",
            self.alpha, self.stat_cfg.scales, self.stat_cfg.orientations, self.stat_cfg.autocorr_window
        )
    }

    fn distance(&self, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
        let (ds, dl) = self.components(a, b)?;
        Ok(self.combine(ds, dl))
    }
}

/// Texture metric with default normalizers.
pub fn perceptual_distance(a: &ImageBuffer, b: &ImageBuffer, cfg: &StatConfig) -> Result<f64> {
    TextureMetric::new(*cfg).distance(a, b)
}

#[derive(Clone, Debug)]
pub struct IqaPair {
    pub id: String,
    /// E.g. `original_vs_synth` or `synth_vs_synth`.
    pub condition: String,
    pub a: ImageBuffer,
    pub b: ImageBuffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqaScore {
    pub pair: String,
    pub condition: String,
    pub level: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IqaAggregate {
    pub condition: String,
    pub level: usize,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation / sqrt n).
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IqaReport {
    pub scores: Vec<IqaScore>,
    pub aggregates: Vec<IqaAggregate>,
    /// Pairs that could not be scored, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl IqaReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.scores {
            w.serialize(s).map_err(|e| Error::Invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Score every pair with every metric at every requested Gaussian-pyramid
/// level, then aggregate mean and two standard errors per
/// (condition, level, metric).
pub fn pyramid_iqa(pairs: &[IqaPair], metrics: &[&dyn PerceptualMetric], levels: &[usize]) -> IqaReport {
    let per_pair: Vec<std::result::Result<Vec<IqaScore>, (String, String)>> = pairs
        .par_iter()
        .map(|p| {
            if !p.a.same_shape(&p.b) {
                return Err((p.id.clone(), "images differ in shape".to_string()));
            }
            let mut out = Vec::new();
            for &level in levels {
                let la = gaussian::lowpass_level(&p.a, level).map_err(|e| (p.id.clone(), e.to_string()))?;
                let lb = gaussian::lowpass_level(&p.b, level).map_err(|e| (p.id.clone(), e.to_string()))?;
                for m in metrics {
                    let value = m.distance(&la, &lb).map_err(|e| (p.id.clone(), e.to_string()))?;
                    out.push(IqaScore {
                        pair: p.id.clone(),
                        condition: p.condition.clone(),
                        level,
                        metric: m.id(),
                        value,
                    });
                }
            }
            Ok(out)
        })
        .collect();

    let mut report = IqaReport::default();
    for r in per_pair {
        match r {
            Ok(scores) => report.scores.extend(scores),
            Err(skip) => report.skipped.push(skip),
        }
    }
    let mut groups: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for s in &report.scores {
        groups
            .entry((s.condition.clone(), s.level, s.metric.clone()))
            .or_default()
            .push(s.value);
    }
    report.aggregates = groups
        .into_iter()
        .map(|((condition, level, metric), v)| {
            let (mean, se) = mean_se(&v);
            IqaAggregate {
                condition,
                level,
                metric,
                n: v.len(),
                mean,
                se,
                lower: mean - 2.0 * se,
                upper: mean + 2.0 * se,
            }
        })
        .collect();
    report
}

/// A target with the seed used for its reference stimulus.
#[derive(Clone, Debug)]
pub struct OptTarget {
    pub id: String,
    pub seed: u64,
    pub image: ImageBuffer,
    /// Reference synthesis (e.g. a robust-model metamer) for the same target and seed.
    pub reference: ImageBuffer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSearch {
    pub s_grid: Vec<f64>,
    /// Horizontal fixation positions in pixels; fixation sits at mid-height.
    pub z_grid: Vec<f64>,
    pub min_region_px: f64,
    pub stat_cfg: StatConfig,
    pub synth: SynthesisConfig,
}

impl GridSearch {
    pub fn default_grid(stat_cfg: StatConfig, synth: SynthesisConfig) -> Self {
        Self {
            s_grid: vec![0.25, 0.4, 0.5, 0.6, 0.8],
            z_grid: vec![448.0, 640.0, 832.0],
            min_region_px: 16.0,
            stat_cfg,
            synth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub s: f64,
    pub z: f64,
    /// `|mean Q(x, texform) - mean Q(x, reference)|`; `None` if invalid.
    pub z_value: Option<f64>,
    pub q_texform: Vec<f64>,
    pub q_reference: Vec<f64>,
    pub error: Option<String>,
    pub cached: bool,
}

impl GridPoint {
    /// Recompute the dissimilarity from the stored per-pair values.
    pub fn recompute(&self) -> Option<f64> {
        if self.q_texform.is_empty() || self.error.is_some() {
            return None;
        }
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Some((m(&self.q_texform) - m(&self.q_reference)).abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub metric: String,
    pub points: Vec<GridPoint>,
    pub best: Option<(f64, f64)>,
    pub best_z_value: Option<f64>,
    /// Other grid points whose dissimilarity equals the minimum.
    pub ties: Vec<(f64, f64)>,
}

#[derive(Serialize)]
struct PointKey<'a> {
    s: f64,
    z: f64,
    min_region_px: f64,
    stat_cfg: &'a StatConfig,
    synth: &'a SynthesisConfig,
    metric: String,
    targets: Vec<(String, u64, String, String)>,
}

fn point_key(search: &GridSearch, s: f64, z: f64, metric: &dyn PerceptualMetric, targets: &[OptTarget]) -> String {
    let key = PointKey {
        s,
        z,
        min_region_px: search.min_region_px,
        stat_cfg: &search.stat_cfg,
        synth: &search.synth,
        metric: metric.id(),
        targets: targets
            .iter()
            .map(|t| (t.id.clone(), t.seed, t.image.content_hash(), t.reference.content_hash()))
            .collect(),
    };
    let json = serde_json::to_vec(&key).expect("key serializes");
    hex::encode(Sha256::digest(&json))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn evaluate_point(
    search: &GridSearch,
    s: f64,
    z: f64,
    metric: &dyn PerceptualMetric,
    targets: &[OptTarget],
) -> GridPoint {
    let mut point = GridPoint {
        s,
        z,
        z_value: None,
        q_texform: Vec::new(),
        q_reference: Vec::new(),
        error: None,
        cached: false,
    };
    let scored: Result<Vec<(f64, f64)>> = targets
        .iter()
        .map(|t| {
            let mut pooling = PoolingConfig::new(t.image.width(), t.image.height(), s, z);
            pooling.min_region_px = search.min_region_px;
            let synth = SynthesisConfig {
                seed: t.seed,
                ..search.synth
            };
            let tex = synthesize_texform(&t.image, &pooling, &search.stat_cfg, &synth)?;
            Ok((metric.distance(&t.image, &tex.image)?, metric.distance(&t.image, &t.reference)?))
        })
        .collect();
    match scored {
        Ok(v) => {
            point.q_texform = v.iter().map(|p| p.0).collect();
            point.q_reference = v.iter().map(|p| p.1).collect();
            point.z_value = point.recompute();
        }
        Err(e) => point.error = Some(e.to_string()),
    }
    point
}

/// Exhaustive search over `(s, z)`. Each grid point is cached in
/// `cache_dir` as `point-<hash>.json`, keyed by everything that determines
/// its value, so interrupted searches resume. Ties resolve to the smaller
/// `s`, then the smaller `z`.
pub fn optimize_texform_params(
    targets: &[OptTarget],
    search: &GridSearch,
    metric: &dyn PerceptualMetric,
    cache_dir: Option<&Path>,
) -> Result<OptimizationResult> {
    if search.s_grid.is_empty() || search.z_grid.is_empty() {
        return Err(Error::Config("grids must be nonempty".into()));
    }
    if targets.is_empty() {
        return Err(Error::Config("no targets".into()));
    }
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let grid: Vec<(f64, f64)> = search
        .s_grid
        .iter()
        .flat_map(|&s| search.z_grid.iter().map(move |&z| (s, z)))
        .collect();
    let points = grid
        .par_iter()
        .map(|&(s, z)| {
            let path: Option<PathBuf> =
                cache_dir.map(|d| d.join(format!("point-{}.json", point_key(search, s, z, metric, targets))));
            if let Some(p) = &path {
                if let Ok(text) = std::fs::read_to_string(p) {
                    if let Ok(mut cached) = serde_json::from_str::<GridPoint>(&text) {
                        cached.cached = true;
                        return Ok(cached);
                    }
                }
            }
            let point = evaluate_point(search, s, z, metric, targets);
            if let Some(p) = &path {
                write_atomic(p, &serde_json::to_vec_pretty(&point)?)?;
            }
            Ok(point)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<(f64, f64, f64)> = None;
    for p in &points {
        let Some(v) = p.z_value else { continue };
        let better = match best {
            None => true,
            Some((bs, bz, bv)) => v < bv || (v == bv && (p.s, p.z) < (bs, bz)),
        };
        if better {
            best = Some((p.s, p.z, v));
        }
    }
    let ties = best
        .map(|(bs, bz, bv)| {
            points
                .iter()
                .filter(|p| p.z_value == Some(bv) && (p.s, p.z) != (bs, bz))
                .map(|p| (p.s, p.z))
                .collect()
        })
        .unwrap_or_default();
    Ok(OptimizationResult {
        metric: metric.id(),
        best: best.map(|(s, z, _)| (s, z)),
        best_z_value: best.map(|b| b.2),
        ties,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let z = ImageBuffer::zeros(4, 4);
        let o = ImageBuffer::filled(4, 4, 1.0);
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &o).unwrap(), 1.0);
        let a = ImageBuffer::gray(2, 2, vec![0.0, 0.0, 0.0, 0.0]);
        let b = ImageBuffer::gray(2, 2, vec![0.0, 0.5, 1.0, 0.5]);
        assert_eq!(mse(&a, &b).unwrap(), 0.375);
        assert!(mse(&a, &z).is_err());
    }

    #[test]
    fn mean_se_basic() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (1.6666666666666667f64 / 4.0).sqrt()).abs() < 1e-12);
    }
}
