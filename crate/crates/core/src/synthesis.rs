//! Feature inversion from a noise pre-image, texform synthesis and
//! duplicate screening of synthesized outputs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::buffer::{BitDepth, ImageBuffer};
use crate::error::{Error, Result};
use crate::gaussian;
use crate::iqa::mse;
use crate::pooling::{build_regions, PoolingConfig};
use crate::texture::{StatConfig, TextureModel, Window};

/// A differentiable image-to-feature map.
pub trait FeatureExtractor: Send + Sync {
    fn id(&self) -> String;

    fn evaluate(&self, img: &ImageBuffer) -> Result<Vec<f64>>;

    /// `0.5 * ||g(img) - target||^2` (in the extractor's own weighting) and
    /// its gradient with respect to the pixels.
    fn objective(&self, img: &ImageBuffer, target: &[f64]) -> Result<(f64, ImageBuffer)>;
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Config(format!("target has {got} features, extractor produces {want}")));
    }
    Ok(())
}

/// Features are the pixels themselves.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn id(&self) -> String {
        "identity".into()
    }

    fn evaluate(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        Ok(img.data().to_vec())
    }

    fn objective(&self, img: &ImageBuffer, target: &[f64]) -> Result<(f64, ImageBuffer)> {
        check_len(target.len(), img.len())?;
        let mut grad = img.clone();
        let mut loss = 0.0;
        for (g, t) in grad.data_mut().iter_mut().zip(target) {
            *g -= t;
            loss += 0.5 * *g * *g;
        }
        Ok((loss, grad))
    }
}

/// Global texture statistics of a grayscale image.
#[derive(Clone, Debug)]
pub struct GlobalStatsExtractor {
    model: TextureModel,
}

impl GlobalStatsExtractor {
    pub fn new(cfg: StatConfig, side: usize) -> Result<Self> {
        Ok(Self {
            model: TextureModel::new(cfg, side)?,
        })
    }
}

impl FeatureExtractor for GlobalStatsExtractor {
    fn id(&self) -> String {
        let c = self.model.config();
        format!("global-stats-s{}-k{}-m{}", c.scales, c.orientations, c.autocorr_window)
    }

    fn evaluate(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        Ok(self.model.stats(img)?.values)
    }

    fn objective(&self, img: &ImageBuffer, target: &[f64]) -> Result<(f64, ImageBuffer)> {
        self.model.loss_and_gradient(img, &[(None, target)])
    }
}

/// Texture statistics pooled over spatial windows, concatenated.
#[derive(Clone, Debug)]
pub struct PooledStatsExtractor {
    model: TextureModel,
    windows: Vec<Window>,
}

impl PooledStatsExtractor {
    pub fn new(cfg: StatConfig, side: usize, windows: Vec<Window>) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Config("no pooling windows".into()));
        }
        Ok(Self {
            model: TextureModel::new(cfg, side)?,
            windows,
        })
    }

    pub fn from_pooling(cfg: StatConfig, pooling: &PoolingConfig) -> Result<Self> {
        let set = build_regions(pooling)?;
        Self::new(cfg, pooling.width, set.windows()?)
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn model(&self) -> &TextureModel {
        &self.model
    }

    fn stat_len(&self) -> usize {
        self.model.config().stat_len()
    }
}

impl FeatureExtractor for PooledStatsExtractor {
    fn id(&self) -> String {
        let c = self.model.config();
        format!(
            "pooled-stats-s{}-k{}-m{}-r{}",
            c.scales,
            c.orientations,
            c.autocorr_window,
            self.windows.len()
        )
    }

    fn evaluate(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        Ok(self
            .model
            .pooled_stats(img, &self.windows)?
            .into_iter()
            .flat_map(|v| v.values)
            .collect())
    }

    fn objective(&self, img: &ImageBuffer, target: &[f64]) -> Result<(f64, ImageBuffer)> {
        let n = self.stat_len();
        check_len(target.len(), n * self.windows.len())?;
        let targets: Vec<_> = self
            .windows
            .iter()
            .zip(target.chunks(n))
            .map(|(w, t)| (Some(w), t))
            .collect();
        self.model.loss_and_gradient(img, &targets)
    }
}

/// Pooled statistics plus a Gaussian-pyramid lowpass match:
/// `0.5 * sum_r d_r^2 + 0.5 * lambda * ||G_l(x) - G_l(t)||^2`.
#[derive(Clone, Debug)]
pub struct TexformExtractor {
    pooled: PooledStatsExtractor,
    lambda: f64,
    level: usize,
}

impl TexformExtractor {
    /// Structural prior at pyramid level 3, or the coarsest level that fits.
    pub fn new(pooled: PooledStatsExtractor, lambda: f64) -> Self {
        let side = pooled.model.side();
        let level = 3.min(gaussian::max_levels((side, side)).saturating_sub(1));
        Self { pooled, lambda, level }
    }

    pub fn prior_level(&self) -> usize {
        self.level
    }
}

impl FeatureExtractor for TexformExtractor {
    fn id(&self) -> String {
        format!("texform-{}-lambda{}-level{}", self.pooled.id(), self.lambda, self.level)
    }

    fn evaluate(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        let mut out = self.pooled.evaluate(img)?;
        out.extend_from_slice(gaussian::lowpass_level(img, self.level)?.data());
        Ok(out)
    }

    fn objective(&self, img: &ImageBuffer, target: &[f64]) -> Result<(f64, ImageBuffer)> {
        let n = self.pooled.stat_len() * self.pooled.windows.len();
        let low = gaussian::lowpass_level(img, self.level)?;
        check_len(target.len(), n + low.len())?;
        let (mut loss, mut grad) = self.pooled.objective(img, &target[..n])?;
        if self.lambda > 0.0 {
            let mut diff = low;
            for (d, t) in diff.data_mut().iter_mut().zip(&target[n..]) {
                *d -= t;
                loss += 0.5 * self.lambda * *d * *d;
                *d *= self.lambda;
            }
            let back = gaussian::lowpass_level_adjoint(&diff, img.dims(), self.level);
            for (g, b) in grad.data_mut().iter_mut().zip(back.data()) {
                *g += b;
            }
        }
        Ok((loss, grad))
    }
}

/// Three 3x3 convolution layers (zero padding) with tanh and 2x2 average
/// pooling after each; channel widths 8, 16, 16. Weights are drawn from
/// `N(0, 2 / fan_in)` with a fixed seed.
///
/// The features are the last layer's maps, or with [`Self::global`] their
/// spatial means, which discards layout entirely.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor {
    seed: u64,
    layers: Vec<ConvLayer>,
    global: bool,
}

#[derive(Clone, Debug)]
struct ConvLayer {
    cin: usize,
    cout: usize,
    /// `[cout][cin][3][3]`
    weights: Vec<f64>,
    bias: Vec<f64>,
}

pub const RANDOM_CONV_WIDTHS: [usize; 3] = [8, 16, 16];

impl RandomConvExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 1;
        let layers = RANDOM_CONV_WIDTHS
            .iter()
            .map(|&cout| {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let dist = Normal::new(0.0, std).expect("finite std");
                let layer = ConvLayer {
                    cin,
                    cout,
                    weights: (0..cout * cin * 9).map(|_| dist.sample(&mut rng)).collect(),
                    bias: (0..cout).map(|_| rng.random_range(-0.1..0.1)).collect(),
                };
                cin = cout;
                layer
            })
            .collect();
        Self {
            seed,
            layers,
            global: false,
        }
    }

    /// Same network, features averaged over all positions.
    pub fn global(seed: u64) -> Self {
        Self {
            global: true,
            ..Self::new(seed)
        }
    }

    /// Per-channel spatial means of the last layer when global.
    fn features(&self, last: &[f64]) -> Vec<f64> {
        if !self.global {
            return last.to_vec();
        }
        let c = RANDOM_CONV_WIDTHS[RANDOM_CONV_WIDTHS.len() - 1];
        let n = last.len() / c;
        last.chunks(n).map(|ch| ch.iter().sum::<f64>() / n as f64).collect()
    }

    fn check(&self, img: &ImageBuffer) -> Result<()> {
        let (w, h) = img.dims();
        if img.channels() != 1 || w % 8 != 0 || h % 8 != 0 || w == 0 || h == 0 {
            return Err(Error::Dimension(format!(
                "random conv features need a grayscale image with sides divisible by 8, got {w}x{h}x{}",
                img.channels()
            )));
        }
        Ok(())
    }

    /// Activations before pooling (after tanh) and pooled outputs per layer.
    fn forward(&self, img: &ImageBuffer) -> Vec<(Vec<f64>, Vec<f64>, usize, usize)> {
        let (mut w, mut h) = img.dims();
        let mut input: Vec<f64> = img.data().iter().map(|v| v - 0.5).collect();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut act = vec![0.0; layer.cout * w * h];
            for co in 0..layer.cout {
                let plane = &mut act[co * w * h..(co + 1) * w * h];
                plane.fill(layer.bias[co]);
                for ci in 0..layer.cin {
                    let src = &input[ci * w * h..(ci + 1) * w * h];
                    let k = &layer.weights[(co * layer.cin + ci) * 9..][..9];
                    conv_accumulate(src, plane, k, w, h);
                }
                for v in plane.iter_mut() {
                    *v = v.tanh();
                }
            }
            let (pw, ph) = (w / 2, h / 2);
            let mut pooled = vec![0.0; layer.cout * pw * ph];
            for c in 0..layer.cout {
                for y in 0..ph {
                    for x in 0..pw {
                        let a = &act[c * w * h..];
                        pooled[c * pw * ph + y * pw + x] = 0.25
                            * (a[2 * y * w + 2 * x]
                                + a[2 * y * w + 2 * x + 1]
                                + a[(2 * y + 1) * w + 2 * x]
                                + a[(2 * y + 1) * w + 2 * x + 1]);
                    }
                }
            }
            out.push((act, pooled.clone(), w, h));
            input = pooled;
            w = pw;
            h = ph;
        }
        out
    }
}

fn conv_accumulate(src: &[f64], dst: &mut [f64], k: &[f64], w: usize, h: usize) {
    for ky in 0..3 {
        for kx in 0..3 {
            let c = k[ky * 3 + kx];
            for y in 0..h {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let srow = &src[sy as usize * w..][..w];
                let drow = &mut dst[y * w..][..w];
                for x in 0..w {
                    let sx = x as isize + kx as isize - 1;
                    if sx >= 0 && sx < w as isize {
                        drow[x] += c * srow[sx as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv_accumulate`] with respect to `src`.
fn conv_adjoint(grad: &[f64], src_grad: &mut [f64], k: &[f64], w: usize, h: usize) {
    for ky in 0..3 {
        for kx in 0..3 {
            let c = k[ky * 3 + kx];
            for y in 0..h {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x as isize + kx as isize - 1;
                    if sx >= 0 && sx < w as isize {
                        src_grad[sy as usize * w + sx as usize] += c * grad[y * w + x];
                    }
                }
            }
        }
    }
}

impl FeatureExtractor for RandomConvExtractor {
    fn id(&self) -> String {
        let kind = if self.global { "random-conv-global" } else { "random-conv" };
        format!("{kind}-seed{}", self.seed)
    }

    fn evaluate(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        self.check(img)?;
        Ok(self.features(&self.forward(img).pop().expect("layers").1))
    }

    fn objective(&self, img: &ImageBuffer, target: &[f64]) -> Result<(f64, ImageBuffer)> {
        self.check(img)?;
        let acts = self.forward(img);
        let last = &acts.last().expect("layers").1;
        let feats = self.features(last);
        check_len(target.len(), feats.len())?;
        let diff: Vec<f64> = feats.iter().zip(target).map(|(f, t)| f - t).collect();
        let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
        let mut g = if self.global {
            let n = last.len() / diff.len();
            diff.iter().flat_map(|d| std::iter::repeat_n(d / n as f64, n)).collect()
        } else {
            diff
        };
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let (act, _, w, h) = &acts[li];
            let (w, h) = (*w, *h);
            let (pw, ph) = (w / 2, h / 2);
            // Through pooling and tanh.
            let mut ga = vec![0.0; layer.cout * w * h];
            for c in 0..layer.cout {
                for y in 0..h {
                    for x in 0..w {
                        let i = c * w * h + y * w + x;
                        let a = act[i];
                        ga[i] = 0.25 * g[c * pw * ph + (y / 2) * pw + x / 2] * (1.0 - a * a);
                    }
                }
            }
            let mut gin = vec![0.0; layer.cin * w * h];
            for co in 0..layer.cout {
                for ci in 0..layer.cin {
                    let k = &layer.weights[(co * layer.cin + ci) * 9..][..9];
                    conv_adjoint(
                        &ga[co * w * h..(co + 1) * w * h],
                        &mut gin[ci * w * h..(ci + 1) * w * h],
                        k,
                        w,
                        h,
                    );
                }
            }
            g = gin;
        }
        Ok((loss, ImageBuffer::gray(img.width(), img.height(), g)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    /// Gradient descent with Armijo backtracking; the trial step is the
    /// Barzilai-Borwein step from the last two iterates.
    LineSearch,
    Adam { learning_rate: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub seed: u64,
    pub max_steps: usize,
    /// Largest per-pixel change of the very first trial step.
    pub initial_step: f64,
    /// Converged once `loss < tolerance * initial_loss`.
    pub tolerance: f64,
    /// Weight of the structural prior (texforms only).
    pub lambda: f64,
    pub optimizer: Optimizer,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_steps: 4000,
            initial_step: 0.05,
            tolerance: 1e-3,
            lambda: 1.0,
            optimizer: Optimizer::LineSearch,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be > 0".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::Config("initial_step must be > 0".into()));
        }
        if let Optimizer::Adam { learning_rate } = self.optimizer {
            if !(learning_rate > 0.0) {
                return Err(Error::Config("learning rate must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthesisResult {
    #[serde(skip)]
    pub image: ImageBuffer,
    pub extractor: String,
    pub seed: u64,
    /// Content hash of the target image.
    pub target_hash: String,
    /// Loss before the first step and after every accepted step.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
    /// True when no step could decrease the loss any further.
    pub stalled: bool,
    pub final_loss: f64,
    /// `sqrt(2 * final_loss)`, the weighted feature distance.
    pub feature_distance: f64,
    pub pixel_mse: f64,
}

impl SynthesisResult {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn steps(&self) -> usize {
        self.loss_trace.len() - 1
    }

    /// PNG of the output plus a JSON sidecar (`<stem>.json`) holding the
    /// trace, seed and flags.
    pub fn save(&self, png: &Path, depth: BitDepth, config: &serde_json::Value) -> Result<()> {
        self.image.save_png(png, depth)?;
        let sidecar = png.with_extension("json");
        let doc = serde_json::json!({ "result": self, "config": config });
        let text = serde_json::to_string_pretty(&doc)?;
        std::fs::write(&sidecar, text).map_err(|e| Error::io(&sidecar, e))
    }
}

/// Uniform noise in `[0.4, 0.6]` shaped like `like`.
pub fn initial_image(like: &ImageBuffer, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..like.len()).map(|_| rng.random_range(0.4..0.6)).collect();
    ImageBuffer::new(like.width(), like.height(), like.channels(), data).expect("same layout")
}

struct Outcome {
    image: ImageBuffer,
    trace: Vec<f64>,
    stalled: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn line_search(
    f: &dyn Fn(&ImageBuffer) -> Result<(f64, ImageBuffer)>,
    x0: ImageBuffer,
    cfg: &SynthesisConfig,
) -> Result<Outcome> {
    let mut x = x0;
    let (mut loss, mut grad) = f(&x)?;
    let initial = loss;
    let mut trace = vec![loss];
    let gmax = grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = if gmax > 0.0 { cfg.initial_step / gmax } else { 0.0 };
    let mut prev: Option<(ImageBuffer, ImageBuffer)> = None;
    let mut stalled = false;
    for _ in 0..cfg.max_steps {
        if loss <= cfg.tolerance * initial {
            break;
        }
        let gg = dot(grad.data(), grad.data());
        if gg == 0.0 {
            stalled = true;
            break;
        }
        if let Some((px, pg)) = &prev {
            let s: Vec<f64> = x.data().iter().zip(px.data()).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad.data().iter().zip(pg.data()).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 {
                step = dot(&s, &s) / sy;
            }
        }
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = x.clone();
            for (c, g) in cand.data_mut().iter_mut().zip(grad.data()) {
                *c -= alpha * g;
            }
            let (lc, gc) = f(&cand)?;
            if lc.is_finite() && lc <= loss - 1e-4 * alpha * gg {
                accepted = Some((cand, lc, gc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, lc, gc)) = accepted else {
            stalled = true;
            break;
        };
        step = alpha;
        prev = Some((std::mem::replace(&mut x, cand), std::mem::replace(&mut grad, gc)));
        loss = lc;
        trace.push(loss);
    }
    Ok(Outcome {
        image: x,
        trace,
        stalled,
    })
}

fn adam(
    f: &dyn Fn(&ImageBuffer) -> Result<(f64, ImageBuffer)>,
    x0: ImageBuffer,
    cfg: &SynthesisConfig,
    lr: f64,
) -> Result<Outcome> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut x = x0;
    let mut m = vec![0.0; x.len()];
    let mut v = vec![0.0; x.len()];
    let (mut loss, mut grad) = f(&x)?;
    let initial = loss;
    let mut trace = vec![loss];
    let mut best = (loss, x.clone());
    for t in 1..=cfg.max_steps {
        if loss <= cfg.tolerance * initial {
            break;
        }
        let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
        for i in 0..x.len() {
            let g = grad.data()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            x.data_mut()[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
        (loss, grad) = f(&x)?;
        if !loss.is_finite() {
            break;
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, x.clone());
        }
    }
    // Report the best iterate; its loss closes the trace.
    if trace.last() != Some(&best.0) {
        trace.push(best.0);
    }
    Ok(Outcome {
        image: best.1,
        trace,
        stalled: false,
    })
}

fn run(
    extractor: &dyn FeatureExtractor,
    target: &ImageBuffer,
    target_features: &[f64],
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult> {
    cfg.validate()?;
    let f = |x: &ImageBuffer| extractor.objective(x, target_features);
    let x0 = initial_image(target, cfg.seed);
    let out = match cfg.optimizer {
        Optimizer::LineSearch => line_search(&f, x0, cfg)?,
        Optimizer::Adam { learning_rate } => adam(&f, x0, cfg, learning_rate)?,
    };
    let final_loss = *out.trace.last().expect("nonempty trace");
    let initial = out.trace[0];
    Ok(SynthesisResult {
        pixel_mse: mse(&out.image, target)?,
        image: out.image,
        extractor: extractor.id(),
        seed: cfg.seed,
        target_hash: target.content_hash(),
        converged: final_loss <= cfg.tolerance * initial,
        stalled: out.stalled,
        feature_distance: (2.0 * final_loss).sqrt(),
        final_loss,
        loss_trace: out.trace,
    })
}

/// Optimize a noise image until its features match the target's.
pub fn invert_features(
    extractor: &dyn FeatureExtractor,
    target: &ImageBuffer,
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult> {
    let t = extractor.evaluate(target)?;
    run(extractor, target, &t, cfg)
}

/// Texform of a grayscale square target: pooled statistics over the
/// log-polar regions of `pooling` plus the lowpass structural prior.
pub fn synthesize_texform(
    target: &ImageBuffer,
    pooling: &PoolingConfig,
    stat_cfg: &StatConfig,
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult> {
    if target.channels() != 1 {
        return Err(Error::Invalid("texform synthesis runs on one channel; split colour images first".into()));
    }
    if pooling.width != target.width() || pooling.height != target.height() {
        return Err(Error::Dimension(format!(
            "pooling built for {}x{}, target is {}x{}",
            pooling.width,
            pooling.height,
            target.width(),
            target.height()
        )));
    }
    let pooled = PooledStatsExtractor::from_pooling(*stat_cfg, pooling)?;
    let ex = TexformExtractor::new(pooled, cfg.lambda);
    invert_features(&ex, target, cfg)
}

/// Run `f` on every channel and merge the outputs.
pub fn per_channel(
    img: &ImageBuffer,
    mut f: impl FnMut(&ImageBuffer) -> Result<SynthesisResult>,
) -> Result<Vec<SynthesisResult>> {
    (0..img.channels()).map(|c| f(&img.channel(c))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuplicateReport {
    /// Index pairs into the input whose outputs are identical.
    pub flagged: Vec<(usize, usize)>,
    /// Pairs sharing a target but synthesized from different seeds.
    pub candidate_pairs: usize,
    pub rate: f64,
}

impl DuplicateReport {
    /// Rate as a whole percentage, e.g. `"2%"`.
    pub fn rate_percent(&self) -> String {
        format!("{:.0}%", self.rate * 100.0)
    }

    /// Indices to exclude: the second member of each flagged pair.
    pub fn excluded(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.flagged.iter().map(|p| p.1).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Flag outputs of the same target from different seeds that converged to
/// exactly the same image.
pub fn detect_duplicates(results: &[SynthesisResult]) -> DuplicateReport {
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        groups.entry((&r.target_hash, &r.extractor)).or_default().push(i);
    }
    let mut flagged = Vec::new();
    let mut candidates = 0;
    for idx in groups.values() {
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                if results[i].seed == results[j].seed {
                    continue;
                }
                candidates += 1;
                let (x, y) = (&results[i].image, &results[j].image);
                if x.same_shape(y) && x.data() == y.data() {
                    flagged.push((i, j));
                }
            }
        }
    }
    DuplicateReport {
        rate: if candidates == 0 {
            0.0
        } else {
            flagged.len() as f64 / candidates as f64
        },
        flagged,
        candidate_pairs: candidates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(n: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuffer::from_fn(n, n, |_, _| rng.random::<f64>())
    }

    #[test]
    fn identity_inversion_recovers_target() {
        let target = noise(16, 1);
        let res = invert_features(&IdentityExtractor, &target, &SynthesisConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.pixel_mse < 1e-6);
        assert!(res.final_loss < 1e-9);
    }

    #[test]
    fn initial_noise_range_and_determinism() {
        let like = ImageBuffer::zeros(8, 8);
        let a = initial_image(&like, 3);
        assert!(a.data().iter().all(|v| (0.4..0.6).contains(v)));
        assert_eq!(a, initial_image(&like, 3));
        assert_ne!(a, initial_image(&like, 4));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SynthesisConfig::default();
        cfg.max_steps = 0;
        assert!(cfg.validate().is_err());
        let cfg = SynthesisConfig {
            lambda: -1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn duplicate_pair_flagged() {
        let img = noise(8, 1);
        let mk = |seed, image: ImageBuffer| SynthesisResult {
            image,
            extractor: "x".into(),
            seed,
            target_hash: "t".into(),
            loss_trace: vec![1.0],
            converged: true,
            stalled: false,
            final_loss: 0.0,
            feature_distance: 0.0,
            pixel_mse: 0.1,
        };
        let rep = detect_duplicates(&[mk(0, img.clone()), mk(1, img.clone())]);
        assert_eq!(rep.flagged, vec![(0, 1)]);
        assert_eq!(rep.rate, 1.0);
        let mut other = img.clone();
        other.data_mut()[5] += 1e-3;
        let rep = detect_duplicates(&[mk(0, img), mk(1, other)]);
        assert!(rep.flagged.is_empty());
        assert_eq!(rep.candidate_pairs, 1);
    }
}
