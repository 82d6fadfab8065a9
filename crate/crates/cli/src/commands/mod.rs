pub mod analyze;
pub mod iqa;
pub mod optimize;
pub mod synth;
pub mod texform;
pub mod trials;

use std::path::{Path, PathBuf};

use periph_core::stimulus::{ingest_stimulus_set, Family, StimulusSet};
use periph_core::{detect_duplicates, BitDepth, ImageBuffer, SynthesisResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::command::{absolute, Report};
use crate::error::{CliError, ItemFailure, Result};
use crate::manifest::OutDir;

/// An image to synthesize from, placed in the set layout as `class/id`.
#[derive(Clone, Debug)]
pub struct Target {
    pub class: String,
    pub id: String,
    pub path: PathBuf,
}

/// Loose files become class `inputs`; a set contributes its originals.
pub fn targets(inputs: &[PathBuf], set: Option<&Path>) -> Result<Vec<Target>> {
    let mut out = Vec::new();
    for p in inputs {
        let id = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Config(format!("input {} has no file name", p.display())))?;
        if out.iter().any(|t: &Target| t.id == id) {
            return Err(CliError::Config(format!("two inputs share the name {id:?}")));
        }
        out.push(Target {
            class: "inputs".into(),
            id,
            path: p.clone(),
        });
    }
    if let Some(root) = set {
        let set = ingest_stimulus_set(root)?.set;
        for (class, id, e) in set.entries() {
            if let Some(o) = &e.original {
                out.push(Target {
                    class: class.into(),
                    id: id.into(),
                    path: set.resolve(o),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no input images; pass --in or --set".into()));
    }
    Ok(out)
}

pub fn absolute_all(paths: &mut [PathBuf]) -> Result<()> {
    for p in paths.iter_mut() {
        *p = absolute(p)?;
    }
    Ok(())
}

pub fn absolute_opt(p: &mut Option<PathBuf>) -> Result<()> {
    if let Some(inner) = p {
        *inner = absolute(inner)?;
    }
    Ok(())
}

pub fn load_sets(roots: &[PathBuf]) -> Result<StimulusSet> {
    let sets = roots
        .iter()
        .map(|r| Ok(ingest_stimulus_set(r)?.set))
        .collect::<Result<Vec<_>>>()?;
    Ok(StimulusSet::merge(&sets))
}

pub fn csv_bytes(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))
}

pub fn bit_depth(bits: u8) -> Result<BitDepth> {
    match bits {
        8 => Ok(BitDepth::Eight),
        16 => Ok(BitDepth::Sixteen),
        b => Err(CliError::Config(format!("bit depth must be 8 or 16, got {b}"))),
    }
}

/// Merge single-channel runs of one colour image. Traces are summed
/// step by step, a finished channel contributing its last value.
pub fn merge_channels(mut parts: Vec<SynthesisResult>, target_hash: String) -> Result<SynthesisResult> {
    if parts.len() == 1 {
        let mut r = parts.pop().expect("one part");
        r.target_hash = target_hash;
        return Ok(r);
    }
    let image = ImageBuffer::from_channels(&parts.iter().map(|p| p.image.clone()).collect::<Vec<_>>())?;
    let len = parts.iter().map(|p| p.loss_trace.len()).max().unwrap_or(0);
    let loss_trace: Vec<f64> = (0..len)
        .map(|i| {
            parts
                .iter()
                .map(|p| p.loss_trace[i.min(p.loss_trace.len() - 1)])
                .sum()
        })
        .collect();
    let final_loss: f64 = parts.iter().map(|p| p.final_loss).sum();
    Ok(SynthesisResult {
        image,
        extractor: parts[0].extractor.clone(),
        seed: parts[0].seed,
        target_hash,
        loss_trace,
        converged: parts.iter().all(|p| p.converged),
        stalled: parts.iter().any(|p| p.stalled),
        final_loss,
        feature_distance: (2.0 * final_loss).sqrt(),
        pixel_mse: parts.iter().map(|p| p.pixel_mse).sum::<f64>() / parts.len() as f64,
    })
}

#[derive(Serialize, Deserialize)]
struct SummaryRow {
    class: String,
    image_id: String,
    family: String,
    seed: u32,
    extractor: String,
    steps: usize,
    converged: bool,
    stalled: bool,
    initial_loss: f64,
    final_loss: f64,
    pixel_mse: f64,
    file: String,
}

/// Synthesize every (target, seed) pair on the current pool, save each
/// output in the stimulus-set layout and write `summary.csv` and
/// `duplicates.json`. Failed items are reported, not fatal.
pub fn synthesize_batch(
    targets: &[Target],
    seeds: &[u32],
    family: Family,
    depth: BitDepth,
    config: &Value,
    out: &OutDir,
    synth: impl Fn(&ImageBuffer, u64) -> Result<SynthesisResult> + Sync,
) -> Result<Report> {
    let items: Vec<(&Target, u32)> = targets.iter().flat_map(|t| seeds.iter().map(move |&s| (t, s))).collect();
    let done: Vec<(String, std::result::Result<(String, SynthesisResult), String>)> = items
        .par_iter()
        .map(|&(t, seed)| {
            let name = format!("{}/{}/{}_seed{seed}", t.class, t.id, family);
            let run = || -> Result<(String, SynthesisResult)> {
                let img = ImageBuffer::load_png(&t.path)?;
                let r = synth(&img, u64::from(seed))?;
                let rel = format!("{name}.png");
                r.save(&out.path(&rel)?, depth, config)?;
                out.record(&rel);
                out.record(format!("{name}.json"));
                tracing::info!(item = %name, steps = r.steps(), converged = r.converged, "synthesized");
                Ok((rel, r))
            };
            let res = run().map_err(|e| e.to_string());
            (name, res)
        })
        .collect();

    let mut report = Report {
        total: items.len(),
        ..Report::default()
    };
    let mut files = Vec::new();
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for ((t, seed), (name, r)) in items.iter().zip(done) {
        match r {
            Ok((file, r)) => {
                rows.push(SummaryRow {
                    class: t.class.clone(),
                    image_id: t.id.clone(),
                    family: family.to_string(),
                    seed: *seed,
                    extractor: r.extractor.clone(),
                    steps: r.steps(),
                    converged: r.converged,
                    stalled: r.stalled,
                    initial_loss: r.initial_loss(),
                    final_loss: r.final_loss,
                    pixel_mse: r.pixel_mse,
                    file: file.clone(),
                });
                if !r.converged {
                    report.warnings.push(format!("{name} did not converge"));
                }
                files.push(file);
                results.push(r);
            }
            Err(error) => report.failures.push(ItemFailure { item: name, error }),
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    out.write_bytes("summary.csv", &csv_bytes(w)?)?;

    let dups = detect_duplicates(&results);
    let flagged: Vec<(&str, &str)> = dups
        .flagged
        .iter()
        .map(|&(a, b)| (files[a].as_str(), files[b].as_str()))
        .collect();
    let excluded: Vec<&str> = dups.excluded().into_iter().map(|i| files[i].as_str()).collect();
    out.write_json(
        "duplicates.json",
        &json!({
            "flagged": flagged,
            "excluded": excluded,
            "candidate_pairs": dups.candidate_pairs,
            "rate": dups.rate,
            "rate_percent": dups.rate_percent(),
        }),
    )?;
    if !dups.flagged.is_empty() {
        report.warnings.push(format!(
            "{} duplicate outputs ({}); see duplicates.json",
            dups.flagged.len(),
            dups.rate_percent()
        ));
    }
    Ok(report)
}
