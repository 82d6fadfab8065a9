//! `synth`: feature-inversion metamers for the standard and robust families.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use periph_core::stimulus::Family;
use periph_core::synthesis::{per_channel, GlobalStatsExtractor, IdentityExtractor, RandomConvExtractor};
use periph_core::{invert_features, FeatureExtractor, ImageBuffer, StatConfig, SynthesisConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{absolute_all, absolute_opt, bit_depth, merge_channels, synthesize_batch, targets};
use crate::command::{Batch, Report};
use crate::error::{CliError, Result};
use crate::manifest::OutDir;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorKind {
    /// Random three-layer convolutional features, spatially resolved.
    RandomConv,
    /// Random convolutional features averaged over space.
    RandomConvGlobal,
    /// Global texture statistics.
    GlobalStats,
    /// Raw pixels.
    Identity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub inputs: Vec<PathBuf>,
    pub set: Option<PathBuf>,
    pub extractor: ExtractorKind,
    pub family: Family,
    pub seeds: Vec<u32>,
    /// Seed of the random convolution weights.
    pub conv_seed: u64,
    pub scales: usize,
    pub orientations: usize,
    pub window: usize,
    pub steps: usize,
    pub tolerance: f64,
    pub initial_step: f64,
    pub bit_depth: u8,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let synth = SynthesisConfig::default();
        let stats = StatConfig::default();
        Self {
            inputs: Vec::new(),
            set: None,
            extractor: ExtractorKind::RandomConv,
            family: Family::Standard,
            seeds: vec![0, 1],
            conv_seed: 0,
            scales: stats.scales,
            orientations: stats.orientations,
            window: stats.autocorr_window,
            steps: synth.max_steps,
            tolerance: synth.tolerance,
            initial_step: synth.initial_step,
            bit_depth: 8,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// Input images; repeatable.
    #[arg(long = "in", value_name = "PNG")]
    #[serde(rename = "inputs", skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    /// Stimulus set whose originals are used as targets.
    #[arg(long)]
    pub set: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub extractor: Option<ExtractorKind>,
    /// Family name the outputs are filed under.
    #[arg(long)]
    pub family: Option<String>,
    /// Synthesis seeds, comma separated.
    #[arg(long = "seed", alias = "seeds", value_delimiter = ',')]
    pub seeds: Option<Vec<u32>>,
    #[arg(long)]
    pub conv_seed: Option<u64>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub orientations: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub initial_step: Option<f64>,
    #[arg(long)]
    pub bit_depth: Option<u8>,
}

pub struct Synth;

fn extractor(cfg: &SynthConfig, side: usize) -> Result<Box<dyn FeatureExtractor>> {
    Ok(match cfg.extractor {
        ExtractorKind::RandomConv => Box::new(RandomConvExtractor::new(cfg.conv_seed)),
        ExtractorKind::RandomConvGlobal => Box::new(RandomConvExtractor::global(cfg.conv_seed)),
        ExtractorKind::GlobalStats => Box::new(GlobalStatsExtractor::new(
            StatConfig::new(cfg.scales, cfg.orientations, cfg.window),
            side,
        )?),
        ExtractorKind::Identity => Box::new(IdentityExtractor),
    })
}

/// Colour is kept; non-square or non-power-of-two inputs are center-cropped.
fn square(img: ImageBuffer) -> ImageBuffer {
    if img.width() == img.height() && img.width().is_power_of_two() {
        img
    } else {
        img.center_crop_pow2()
    }
}

impl Batch for Synth {
    const NAME: &'static str = "synth";
    type Config = SynthConfig;

    fn defaults(_: &Value) -> Result<Value> {
        Ok(serde_json::to_value(SynthConfig::default())?)
    }

    fn normalize(cfg: &mut SynthConfig) -> Result<()> {
        absolute_all(&mut cfg.inputs)?;
        absolute_opt(&mut cfg.set)?;
        bit_depth(cfg.bit_depth)?;
        if cfg.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    fn inputs(cfg: &SynthConfig) -> Vec<PathBuf> {
        cfg.inputs.iter().chain(&cfg.set).cloned().collect()
    }

    fn execute(cfg: &SynthConfig, out: &OutDir) -> Result<Report> {
        let base = SynthesisConfig {
            max_steps: cfg.steps,
            tolerance: cfg.tolerance,
            initial_step: cfg.initial_step,
            ..SynthesisConfig::default()
        };
        base.validate()?;
        let targets = targets(&cfg.inputs, cfg.set.as_deref())?;
        let echoed = serde_json::to_value(cfg)?;
        synthesize_batch(
            &targets,
            &cfg.seeds,
            cfg.family,
            bit_depth(cfg.bit_depth)?,
            &echoed,
            out,
            |img, seed| {
                let img = square(img.clone());
                let ex = extractor(cfg, img.width())?;
                let run = SynthesisConfig { seed, ..base };
                let parts = per_channel(&img, |ch| invert_features(ex.as_ref(), ch, &run))?;
                merge_channels(parts, img.content_hash())
            },
        )
    }
}
