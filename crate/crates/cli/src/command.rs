use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::commands::{analyze, iqa, optimize, synth, texform, trials};
use crate::error::{CliError, ItemFailure, Result};
use crate::manifest::{resolve, sha256_path, Manifest, OutDir};

pub struct Ctx {
    pub pool: rayon::ThreadPool,
    pub force: bool,
}

#[derive(Debug, Default)]
pub struct Report {
    pub total: usize,
    pub failures: Vec<ItemFailure>,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct Done {
    pub out: PathBuf,
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

/// A subcommand that turns a resolved config into files under `--out`.
pub trait Batch {
    const NAME: &'static str;
    type Config: Serialize + DeserializeOwned + Sync;

    /// Full default config. `user` holds the merged file and flag layers,
    /// for commands whose defaults depend on a user choice.
    fn defaults(user: &Value) -> Result<Value>;

    /// Make paths absolute and check cross-field constraints.
    fn normalize(_cfg: &mut Self::Config) -> Result<()> {
        Ok(())
    }

    fn inputs(cfg: &Self::Config) -> Vec<PathBuf>;

    fn execute(cfg: &Self::Config, out: &OutDir) -> Result<Report>;
}

pub fn run<B: Batch>(file: Option<&Path>, flags: Value, out: &Path, ctx: &Ctx) -> Result<Done> {
    let (mut cfg, _) = resolve::<B::Config>(B::defaults, file, flags)?;
    B::normalize(&mut cfg)?;
    run_config::<B>(cfg, out, ctx)
}

fn run_config<B: Batch>(cfg: B::Config, out: &Path, ctx: &Ctx) -> Result<Done> {
    let echoed = serde_json::to_value(&cfg)?;
    let dir = OutDir::prepare(out, ctx.force)?;
    let report = ctx.pool.install(|| B::execute(&cfg, &dir))?;
    for w in &report.warnings {
        tracing::warn!("{w}");
    }
    let manifest = dir.write_manifest(B::NAME, &echoed, &B::inputs(&cfg))?;
    if !report.failures.is_empty() {
        return Err(CliError::Batch {
            total: report.total,
            items: report.failures,
        });
    }
    Ok(Done {
        out: out.to_path_buf(),
        manifest,
        warnings: report.warnings,
    })
}

fn run_value<B: Batch>(config: Value, out: &Path, ctx: &Ctx) -> Result<Done> {
    let cfg: B::Config = serde_json::from_value(config).map_err(|e| CliError::Config(e.to_string()))?;
    run_config::<B>(cfg, out, ctx)
}

fn dispatch(command: &str, config: Value, out: &Path, ctx: &Ctx) -> Result<Done> {
    match command {
        synth::Synth::NAME => run_value::<synth::Synth>(config, out, ctx),
        texform::Texform::NAME => run_value::<texform::Texform>(config, out, ctx),
        optimize::Optimize::NAME => run_value::<optimize::Optimize>(config, out, ctx),
        iqa::Iqa::NAME => run_value::<iqa::Iqa>(config, out, ctx),
        trials::Ingest::NAME => run_value::<trials::Ingest>(config, out, ctx),
        trials::Trials::NAME => run_value::<trials::Trials>(config, out, ctx),
        trials::Simulate::NAME => run_value::<trials::Simulate>(config, out, ctx),
        analyze::Analyze::NAME => run_value::<analyze::Analyze>(config, out, ctx),
        analyze::Replay::NAME => run_value::<analyze::Replay>(config, out, ctx),
        other => Err(CliError::Config(format!("manifest names unknown command {other:?}"))),
    }
}

fn is_compared(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("json" | "csv" | "jsonl"))
}

/// Run a manifest's command again into `out` and compare every JSON and
/// CSV output byte for byte.
pub fn rerun(manifest_path: &Path, out: &Path, ctx: &Ctx) -> Result<Done> {
    let old = Manifest::load(manifest_path)?;
    let mut diffs = Vec::new();
    for input in &old.inputs {
        match sha256_path(&input.path) {
            Ok(h) if h == input.sha256 => {}
            Ok(_) => diffs.push(ItemFailure {
                item: input.path.display().to_string(),
                error: "input changed since the recorded run".into(),
            }),
            Err(e) => diffs.push(ItemFailure {
                item: input.path.display().to_string(),
                error: e.to_string(),
            }),
        }
    }
    if !diffs.is_empty() {
        return Err(CliError::Mismatch(diffs));
    }
    let done = dispatch(&old.command, old.config.clone(), out, ctx)?;
    let new: std::collections::BTreeMap<_, _> =
        done.manifest.outputs.iter().map(|f| (f.path.clone(), f.sha256.clone())).collect();
    let mut seen = std::collections::BTreeSet::new();
    for f in old.outputs.iter().filter(|f| is_compared(&f.path)) {
        seen.insert(f.path.clone());
        match new.get(&f.path) {
            Some(h) if *h == f.sha256 => {}
            Some(_) => diffs.push(ItemFailure {
                item: f.path.display().to_string(),
                error: "content differs".into(),
            }),
            None => diffs.push(ItemFailure {
                item: f.path.display().to_string(),
                error: "not produced by the rerun".into(),
            }),
        }
    }
    for p in new.keys().filter(|p| is_compared(p) && !seen.contains(*p)) {
        diffs.push(ItemFailure {
            item: p.display().to_string(),
            error: "not in the recorded run".into(),
        });
    }
    if !diffs.is_empty() {
        return Err(CliError::Mismatch(diffs));
    }
    Ok(done)
}

/// Absolute form of an input path, which must exist.
pub fn absolute(p: &Path) -> Result<PathBuf> {
    p.canonicalize()
        .map_err(|e| CliError::Config(format!("input {}: {e}", p.display())))
}
