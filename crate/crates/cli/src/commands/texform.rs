//! `texform`: foveated texture-statistic syntheses of grayscale targets.

use std::path::PathBuf;

use clap::Args;
use periph_core::buffer::prepare_square;
use periph_core::stimulus::Family;
use periph_core::{synthesize_texform, PoolingConfig, ResizePolicy, StatConfig, SynthesisConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{absolute_all, absolute_opt, bit_depth, synthesize_batch, targets};
use crate::command::{Batch, Report};
use crate::error::{CliError, Result};
use crate::manifest::OutDir;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TexformConfig {
    pub inputs: Vec<PathBuf>,
    pub set: Option<PathBuf>,
    pub family: Family,
    pub seeds: Vec<u32>,
    /// Pooling region diameter over eccentricity.
    pub s: f64,
    /// Fixation, in pixels from the left edge.
    pub zx: f64,
    /// Fixation height; mid-height when absent.
    pub zy: Option<f64>,
    pub min_region_px: f64,
    pub scales: usize,
    pub orientations: usize,
    pub window: usize,
    pub steps: usize,
    pub lambda: f64,
    pub tolerance: f64,
    pub initial_step: f64,
    pub resize: ResizePolicy,
    pub bit_depth: u8,
}

impl Default for TexformConfig {
    fn default() -> Self {
        let synth = SynthesisConfig::default();
        let stats = StatConfig::default();
        Self {
            inputs: Vec::new(),
            set: None,
            family: Family::Texform,
            seeds: vec![0],
            s: 0.5,
            zx: 640.0,
            zy: None,
            min_region_px: 16.0,
            scales: stats.scales,
            orientations: stats.orientations,
            window: stats.autocorr_window,
            steps: synth.max_steps,
            lambda: synth.lambda,
            tolerance: synth.tolerance,
            initial_step: synth.initial_step,
            resize: ResizePolicy::CenterCrop,
            bit_depth: 8,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TexformArgs {
    /// Input images; repeatable.
    #[arg(long = "in", value_name = "PNG")]
    #[serde(rename = "inputs", skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub set: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<String>,
    /// Synthesis seeds, comma separated.
    #[arg(long = "seed", alias = "seeds", value_delimiter = ',')]
    pub seeds: Option<Vec<u32>>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub zx: Option<f64>,
    #[arg(long)]
    pub zy: Option<f64>,
    #[arg(long)]
    pub min_region_px: Option<f64>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub orientations: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub initial_step: Option<f64>,
    /// crop or reject inputs that are not power-of-two squares.
    #[arg(long)]
    pub resize: Option<String>,
    #[arg(long)]
    pub bit_depth: Option<u8>,
}

pub struct Texform;

impl Batch for Texform {
    const NAME: &'static str = "texform";
    type Config = TexformConfig;

    fn defaults(_: &Value) -> Result<Value> {
        Ok(serde_json::to_value(TexformConfig::default())?)
    }

    fn normalize(cfg: &mut TexformConfig) -> Result<()> {
        absolute_all(&mut cfg.inputs)?;
        absolute_opt(&mut cfg.set)?;
        bit_depth(cfg.bit_depth)?;
        if cfg.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        StatConfig::new(cfg.scales, cfg.orientations, cfg.window).validate()?;
        Ok(())
    }

    fn inputs(cfg: &TexformConfig) -> Vec<PathBuf> {
        cfg.inputs.iter().chain(&cfg.set).cloned().collect()
    }

    fn execute(cfg: &TexformConfig, out: &OutDir) -> Result<Report> {
        let base = SynthesisConfig {
            max_steps: cfg.steps,
            tolerance: cfg.tolerance,
            initial_step: cfg.initial_step,
            lambda: cfg.lambda,
            ..SynthesisConfig::default()
        };
        base.validate()?;
        let stats = StatConfig::new(cfg.scales, cfg.orientations, cfg.window);
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
                let img = prepare_square(img, cfg.resize)?;
                let side = img.width();
                let mut pooling = PoolingConfig::new(side, side, cfg.s, cfg.zx);
                if let Some(zy) = cfg.zy {
                    pooling.z.1 = zy;
                }
                pooling.min_region_px = cfg.min_region_px;
                let run = SynthesisConfig { seed, ..base };
                Ok(synthesize_texform(&img, &pooling, &stats, &run)?)
            },
        )
    }
}
