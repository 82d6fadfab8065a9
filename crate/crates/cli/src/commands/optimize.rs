//! `optimize`: grid search for the texform pooling parameters that best
//! match a reference family.

use std::path::PathBuf;

use clap::Args;
use periph_core::iqa::{optimize_texform_params, GridSearch, OptTarget};
use periph_core::stimulus::{ingest_stimulus_set, Family};
use periph_core::{ResizePolicy, StatConfig, SynthesisConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::csv_bytes;
use super::iqa::{build_metric, load_images, require_set, MetricKind};
use crate::command::{absolute, Batch, Report};
use crate::error::{CliError, ItemFailure, Result};
use crate::manifest::OutDir;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub set: Option<PathBuf>,
    pub reference_family: Family,
    /// Reference seeds; each (image, seed) is one target.
    pub seeds: Vec<u32>,
    /// Use at most this many targets, in set order.
    pub limit: Option<usize>,
    pub s_grid: Vec<f64>,
    pub z_grid: Vec<f64>,
    pub min_region_px: f64,
    pub scales: usize,
    pub orientations: usize,
    pub window: usize,
    pub steps: usize,
    pub lambda: f64,
    pub tolerance: f64,
    pub metric: MetricKind,
    pub resize: ResizePolicy,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        let grid = GridSearch::default_grid(StatConfig::default(), SynthesisConfig::default());
        Self {
            set: None,
            reference_family: Family::Robust,
            seeds: vec![0],
            limit: None,
            s_grid: grid.s_grid,
            z_grid: grid.z_grid,
            min_region_px: grid.min_region_px,
            scales: grid.stat_cfg.scales,
            orientations: grid.stat_cfg.orientations,
            window: grid.stat_cfg.autocorr_window,
            steps: grid.synth.max_steps,
            lambda: grid.synth.lambda,
            tolerance: grid.synth.tolerance,
            metric: MetricKind::Percep,
            resize: ResizePolicy::CenterCrop,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub set: Option<PathBuf>,
    #[arg(long)]
    pub reference_family: Option<String>,
    #[arg(long = "seed", alias = "seeds", value_delimiter = ',')]
    pub seeds: Option<Vec<u32>>,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub s_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub z_grid: Option<Vec<f64>>,
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
    #[arg(long, value_enum)]
    pub metric: Option<MetricKind>,
    #[arg(long)]
    pub resize: Option<String>,
}

pub struct Optimize;

impl Batch for Optimize {
    const NAME: &'static str = "optimize";
    type Config = OptimizeConfig;

    fn defaults(_: &Value) -> Result<Value> {
        Ok(serde_json::to_value(OptimizeConfig::default())?)
    }

    fn normalize(cfg: &mut OptimizeConfig) -> Result<()> {
        cfg.set = Some(absolute(require_set(&cfg.set)?)?);
        Ok(())
    }

    fn inputs(cfg: &OptimizeConfig) -> Vec<PathBuf> {
        cfg.set.iter().cloned().collect()
    }

    fn execute(cfg: &OptimizeConfig, out: &OutDir) -> Result<Report> {
        let set = ingest_stimulus_set(require_set(&cfg.set)?)?.set;
        let mut wanted = Vec::new();
        for (class, id, e) in set.entries() {
            let Some(o) = &e.original else { continue };
            for &seed in &cfg.seeds {
                if let Some(r) = e.get(cfg.reference_family, seed) {
                    wanted.push((format!("{class}/{id}"), seed, set.resolve(o), set.resolve(r)));
                }
            }
        }
        if let Some(n) = cfg.limit {
            wanted.truncate(n);
        }
        if wanted.is_empty() {
            return Err(CliError::Config(format!(
                "no image in the set has a {} reference for seeds {:?}",
                cfg.reference_family, cfg.seeds
            )));
        }
        let mut paths: Vec<PathBuf> = wanted.iter().flat_map(|w| [w.2.clone(), w.3.clone()]).collect();
        paths.sort();
        paths.dedup();
        let images = load_images(paths, cfg.resize);

        let mut report = Report::default();
        let mut targets = Vec::new();
        for (id, seed, o, r) in wanted {
            match (&images[&o], &images[&r]) {
                (Ok(a), Ok(b)) => targets.push(OptTarget {
                    id,
                    seed: u64::from(seed),
                    image: a.clone(),
                    reference: b.clone(),
                }),
                (Err(e), _) | (_, Err(e)) => report.failures.push(ItemFailure {
                    item: format!("{id} seed {seed}"),
                    error: e.clone(),
                }),
            }
        }
        if targets.is_empty() {
            return Ok(report);
        }

        let stats = StatConfig::new(cfg.scales, cfg.orientations, cfg.window);
        let search = GridSearch {
            s_grid: cfg.s_grid.clone(),
            z_grid: cfg.z_grid.clone(),
            min_region_px: cfg.min_region_px,
            stat_cfg: stats,
            synth: SynthesisConfig {
                max_steps: cfg.steps,
                lambda: cfg.lambda,
                tolerance: cfg.tolerance,
                ..SynthesisConfig::default()
            },
        };
        search.synth.validate()?;
        let calibration: Vec<_> = targets.iter().map(|t| (&t.image, &t.reference)).collect();
        let metric = build_metric(cfg.metric, stats, &calibration)?;
        let cache = out.root().join("cache");
        let result = optimize_texform_params(&targets, &search, metric.as_ref(), Some(&cache))?;
        out.record_dir("cache")?;
        report.total = targets.len() + report.failures.len();

        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["s", "z", "z_value", "q_texform_mean", "q_reference_mean", "error"])?;
        let mean = |v: &[f64]| if v.is_empty() { String::new() } else { (v.iter().sum::<f64>() / v.len() as f64).to_string() };
        for p in &result.points {
            w.write_record([
                p.s.to_string(),
                p.z.to_string(),
                p.z_value.map(|v| v.to_string()).unwrap_or_default(),
                mean(&p.q_texform),
                mean(&p.q_reference),
                p.error.clone().unwrap_or_default(),
            ])?;
            if let Some(e) = &p.error {
                report.warnings.push(format!("grid point s={} z={}: {e}", p.s, p.z));
            }
        }
        out.write_bytes("grid.csv", &csv_bytes(w)?)?;
        out.write_json("optimization.json", &result)?;
        if result.best.is_none() {
            report.failures.push(ItemFailure {
                item: "grid".into(),
                error: "no grid point could be evaluated".into(),
            });
        }
        Ok(report)
    }
}
