//! `iqa`: pair distances at several Gaussian-pyramid levels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use periph_core::buffer::prepare_square;
use periph_core::iqa::{pyramid_iqa, IqaPair, Mse, TextureMetric};
use periph_core::stimulus::{ingest_stimulus_set, Family, StimulusSet};
use periph_core::{ImageBuffer, PerceptualMetric, ResizePolicy, StatConfig};
use periph_psych::{Condition, Variant};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::command::{absolute, Batch, Report};
use crate::error::{CliError, ItemFailure, Result};
use crate::manifest::OutDir;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Mse,
    /// Texture-tolerant distance, calibrated on the pairs being scored.
    Percep,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IqaConfig {
    pub set: Option<PathBuf>,
    pub families: Vec<Family>,
    pub variants: Vec<Variant>,
    pub levels: Vec<usize>,
    pub metrics: Vec<MetricKind>,
    pub scales: usize,
    pub orientations: usize,
    pub window: usize,
    pub resize: ResizePolicy,
}

impl Default for IqaConfig {
    fn default() -> Self {
        let stats = StatConfig::default();
        Self {
            set: None,
            families: Family::ALL.to_vec(),
            variants: vec![Variant::OriginalVsSynth, Variant::SynthVsSynth],
            levels: vec![0, 3],
            metrics: vec![MetricKind::Mse, MetricKind::Percep],
            scales: stats.scales,
            orientations: stats.orientations,
            window: stats.autocorr_window,
            resize: ResizePolicy::CenterCrop,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct IqaArgs {
    #[arg(long)]
    pub set: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// original-vs-synth, synth-vs-synth
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub metrics: Option<Vec<MetricKind>>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub orientations: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub resize: Option<String>,
}

/// Grayscale square images keyed by path, loaded once each.
pub fn load_images(paths: Vec<PathBuf>, policy: ResizePolicy) -> BTreeMap<PathBuf, Result<ImageBuffer, String>> {
    paths
        .into_par_iter()
        .map(|p| {
            let img = ImageBuffer::load_png(&p)
                .and_then(|i| prepare_square(&i, policy))
                .map_err(|e| e.to_string());
            (p, img)
        })
        .collect()
}

struct PairSpec {
    id: String,
    condition: Condition,
    a: PathBuf,
    b: PathBuf,
}

fn pair_specs(set: &StimulusSet, families: &[Family], variants: &[Variant]) -> Vec<PairSpec> {
    let mut out = Vec::new();
    for (class, id, e) in set.entries() {
        for &family in families {
            let Some(seeds) = e.synth.get(&family) else { continue };
            let seeds: Vec<_> = seeds.iter().collect();
            for &variant in variants {
                let condition = Condition { family, variant };
                match variant {
                    Variant::OriginalVsSynth => {
                        let Some(o) = &e.original else { continue };
                        for (s, f) in &seeds {
                            out.push(PairSpec {
                                id: format!("{class}/{id}/{family}/original-seed{s}"),
                                condition,
                                a: set.resolve(o),
                                b: set.resolve(f),
                            });
                        }
                    }
                    Variant::SynthVsSynth => {
                        for w in seeds.windows(2) {
                            let ((sa, fa), (sb, fb)) = (w[0], w[1]);
                            out.push(PairSpec {
                                id: format!("{class}/{id}/{family}/seed{sa}-seed{sb}"),
                                condition,
                                a: set.resolve(fa),
                                b: set.resolve(fb),
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn build_metric(
    kind: MetricKind,
    stats: StatConfig,
    calibration: &[(&ImageBuffer, &ImageBuffer)],
) -> Result<Box<dyn PerceptualMetric>> {
    Ok(match kind {
        MetricKind::Mse => Box::new(Mse),
        MetricKind::Percep => {
            let mut m = TextureMetric::new(stats);
            m.calibrate(calibration)?;
            Box::new(m)
        }
    })
}

pub fn require_set(set: &Option<PathBuf>) -> Result<&Path> {
    set.as_deref()
        .ok_or_else(|| CliError::Config("a stimulus set is required (--set)".into()))
}

pub struct Iqa;

impl Batch for Iqa {
    const NAME: &'static str = "iqa";
    type Config = IqaConfig;

    fn defaults(_: &Value) -> Result<Value> {
        Ok(serde_json::to_value(IqaConfig::default())?)
    }

    fn normalize(cfg: &mut IqaConfig) -> Result<()> {
        cfg.set = Some(absolute(require_set(&cfg.set)?)?);
        if cfg.levels.is_empty() || cfg.metrics.is_empty() {
            return Err(CliError::Config("levels and metrics must be nonempty".into()));
        }
        Ok(())
    }

    fn inputs(cfg: &IqaConfig) -> Vec<PathBuf> {
        cfg.set.iter().cloned().collect()
    }

    fn execute(cfg: &IqaConfig, out: &OutDir) -> Result<Report> {
        let set = ingest_stimulus_set(require_set(&cfg.set)?)?.set;
        let specs = pair_specs(&set, &cfg.families, &cfg.variants);
        let mut paths: Vec<PathBuf> = specs.iter().flat_map(|p| [p.a.clone(), p.b.clone()]).collect();
        paths.sort();
        paths.dedup();
        let images = load_images(paths, cfg.resize);

        let mut report = Report {
            total: specs.len(),
            ..Report::default()
        };
        let mut pairs = Vec::new();
        for s in specs {
            match (&images[&s.a], &images[&s.b]) {
                (Ok(a), Ok(b)) => pairs.push(IqaPair {
                    id: s.id,
                    condition: s.condition.to_string(),
                    a: a.clone(),
                    b: b.clone(),
                }),
                (Err(e), _) | (_, Err(e)) => report.failures.push(ItemFailure {
                    item: s.id,
                    error: e.clone(),
                }),
            }
        }
        let stats = StatConfig::new(cfg.scales, cfg.orientations, cfg.window);
        let calibration: Vec<_> = pairs.iter().map(|p| (&p.a, &p.b)).collect();
        let metrics = cfg
            .metrics
            .iter()
            .map(|&k| build_metric(k, stats, &calibration))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&dyn PerceptualMetric> = metrics.iter().map(|m| m.as_ref()).collect();
        let result = pyramid_iqa(&pairs, &refs, &cfg.levels);
        report.failures.extend(
            result
                .skipped
                .iter()
                .map(|(item, error)| ItemFailure {
                    item: item.clone(),
                    error: error.clone(),
                }),
        );
        out.write_bytes("scores.csv", result.to_csv()?.as_bytes())?;
        out.write_json(
            "report.json",
            &json!({
                "metrics": refs.iter().map(|m| m.id()).collect::<Vec<_>>(),
                "pairs": pairs.len(),
                "aggregates": result.aggregates,
                "skipped": result.skipped,
            }),
        )?;
        Ok(report)
    }
}
