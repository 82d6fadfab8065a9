//! `ingest`, `trials` and `simulate`: stimulus sets, schedules and
//! simulated observers.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use periph_core::stimulus::ingest_stimulus_set;
use periph_psych::{
    generate_trials, score_session, simulate_session, BlurObserver, Condition, ExperimentConfig, Observer,
    RandomObserver, ScoreTable, SetSource, Task, TrialSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{absolute_all, csv_bytes, load_sets};
use crate::command::{absolute, Batch, Report};
use crate::error::{CliError, ItemFailure, Result};
use crate::manifest::OutDir;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub set: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    /// Root of the stimulus tree.
    #[arg(long)]
    pub set: Option<PathBuf>,
}

pub struct Ingest;

impl Batch for Ingest {
    const NAME: &'static str = "ingest";
    type Config = IngestConfig;

    fn defaults(_: &Value) -> Result<Value> {
        Ok(serde_json::to_value(IngestConfig::default())?)
    }

    fn normalize(cfg: &mut IngestConfig) -> Result<()> {
        let set = cfg
            .set
            .as_deref()
            .ok_or_else(|| CliError::Config("a stimulus set is required (--set)".into()))?;
        cfg.set = Some(absolute(set)?);
        Ok(())
    }

    fn inputs(cfg: &IngestConfig) -> Vec<PathBuf> {
        cfg.set.iter().cloned().collect()
    }

    fn execute(cfg: &IngestConfig, out: &OutDir) -> Result<Report> {
        let outcome = ingest_stimulus_set(cfg.set.as_deref().expect("normalized"))?;
        out.write_json("ingest.json", &outcome)?;
        let r = &outcome.report;
        let finding = |kind: &str, item: &String| ItemFailure {
            item: item.clone(),
            error: kind.to_string(),
        };
        let mut failures: Vec<ItemFailure> = r
            .missing_originals
            .iter()
            .map(|i| finding("missing original", i))
            .chain(r.missing_synth.iter().map(|i| finding("missing synthesized file", i)))
            .chain(r.unrecognized.iter().map(|i| finding("unrecognized file", i)))
            .collect();
        failures.extend(r.duplicates.iter().map(|(a, b)| ItemFailure {
            item: a.clone(),
            error: format!("identical to {b}"),
        }));
        Ok(Report {
            total: outcome.counts.files,
            failures,
            warnings: Vec::new(),
        })
    }
}

/// Flags shared by `trials` and `simulate`, layered over the experiment
/// section of the config.
#[derive(Args, Debug)]
pub struct ExperimentFlags {
    /// Stimulus set roots; repeatable, merged in order.
    #[arg(long = "set", value_name = "DIR")]
    pub sets: Vec<PathBuf>,
    #[arg(long, value_parser = ["oddity", "match2afc"])]
    pub task: Option<String>,
    /// Degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub eccentricities: Option<Vec<f64>>,
    /// family/variant, comma separated, e.g. texform/original-vs-synth.
    #[arg(long, value_delimiter = ',')]
    pub conditions: Option<Vec<String>>,
    #[arg(long)]
    pub trials_per_cell: Option<usize>,
    #[arg(long)]
    pub stimulus_deg: Option<f64>,
    /// Schedule seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ExperimentFlags {
    fn to_value(&self) -> Result<Value> {
        let conditions = self
            .conditions
            .as_ref()
            .map(|cs| {
                cs.iter()
                    .map(|c| c.parse::<Condition>().map_err(|e| CliError::Usage(e.to_string())))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Ok(json!({
            "sets": (!self.sets.is_empty()).then_some(&self.sets),
            "experiment": {
                "task": self.task,
                "eccentricities": self.eccentricities,
                "conditions": conditions,
                "trials_per_cell": self.trials_per_cell,
                "stimulus_deg": self.stimulus_deg,
                "seed": self.seed,
            }
        }))
    }
}

fn experiment_defaults(user: &Value) -> Result<ExperimentConfig> {
    let task = match user.pointer("/experiment/task") {
        Some(t) => serde_json::from_value(t.clone()).map_err(|e| CliError::Config(format!("task: {e}")))?,
        None => Task::Oddity,
    };
    Ok(ExperimentConfig::new(task))
}

fn check_experiment(sets: &mut [PathBuf], exp: &ExperimentConfig) -> Result<()> {
    if sets.is_empty() {
        return Err(CliError::Config("at least one stimulus set is required (--set)".into()));
    }
    absolute_all(sets)?;
    exp.validate()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialsConfig {
    pub sets: Vec<PathBuf>,
    pub experiment: ExperimentConfig,
}

pub struct Trials;

#[derive(Serialize)]
struct TrialRow<'a> {
    id: &'a str,
    task: String,
    condition: String,
    eccentricity_deg: f64,
    correct: usize,
    stimuli: String,
}

fn trials_csv(specs: &[TrialSpec]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for t in specs {
        w.serialize(TrialRow {
            id: &t.id,
            task: serde_json::to_value(t.task)?.as_str().unwrap_or_default().to_string(),
            condition: t.condition.to_string(),
            eccentricity_deg: t.eccentricity_deg,
            correct: t.correct,
            stimuli: t.stimuli.iter().map(|s| s.hash.as_str()).collect::<Vec<_>>().join(";"),
        })?;
    }
    csv_bytes(w)
}

impl Batch for Trials {
    const NAME: &'static str = "trials";
    type Config = TrialsConfig;

    fn defaults(user: &Value) -> Result<Value> {
        Ok(json!({ "sets": [], "experiment": experiment_defaults(user)? }))
    }

    fn normalize(cfg: &mut TrialsConfig) -> Result<()> {
        check_experiment(&mut cfg.sets, &cfg.experiment)?;
        Ok(())
    }

    fn inputs(cfg: &TrialsConfig) -> Vec<PathBuf> {
        cfg.sets.clone()
    }

    fn execute(cfg: &TrialsConfig, out: &OutDir) -> Result<Report> {
        let set = load_sets(&cfg.sets)?;
        let specs = generate_trials(&cfg.experiment, &set)?;
        out.write_json("trials.json", &specs)?;
        out.write_bytes("trials.csv", &trials_csv(&specs)?)?;
        Ok(Report {
            total: specs.len(),
            warnings: cfg.experiment.validate()?,
            ..Report::default()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ObserverKind {
    /// Compares Gaussian-blurred stimuli, blurring more with eccentricity.
    Blur,
    /// Responds uniformly at random.
    Random,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub sets: Vec<PathBuf>,
    pub experiment: ExperimentConfig,
    pub observer: ObserverKind,
    pub noise_sd: f64,
    pub deg_per_level: f64,
    pub max_level: usize,
    /// Seed of the first simulated subject; the schedule seed when absent.
    pub observer_seed: Option<u64>,
    pub subjects: usize,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub experiment: ExperimentFlags,
    #[arg(long, value_enum)]
    pub observer: Option<ObserverKind>,
    /// Internal noise of the blur observer.
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub deg_per_level: Option<f64>,
    #[arg(long)]
    pub max_level: Option<usize>,
    #[arg(long)]
    pub observer_seed: Option<u64>,
    #[arg(long)]
    pub subjects: Option<usize>,
}

impl SimulateArgs {
    pub fn to_value(&self) -> Result<Value> {
        let mut v = self.experiment.to_value()?;
        crate::manifest::merge(
            &mut v,
            json!({
                "observer": self.observer,
                "noise_sd": self.noise_sd,
                "deg_per_level": self.deg_per_level,
                "max_level": self.max_level,
                "observer_seed": self.observer_seed,
                "subjects": self.subjects,
            }),
        );
        Ok(v)
    }
}

#[derive(Args, Debug)]
pub struct TrialsArgs {
    #[command(flatten)]
    pub experiment: ExperimentFlags,
}

impl TrialsArgs {
    pub fn to_value(&self) -> Result<Value> {
        self.experiment.to_value()
    }
}

pub struct Simulate;

impl SimulateConfig {
    fn observer(&self, subject: usize) -> Box<dyn Observer> {
        let seed = self.observer_seed.unwrap_or(self.experiment.seed) + subject as u64;
        match self.observer {
            ObserverKind::Random => Box::new(RandomObserver { seed }),
            ObserverKind::Blur => {
                let mut o = BlurObserver::new(self.noise_sd, seed);
                o.deg_per_level = self.deg_per_level;
                o.max_level = self.max_level;
                Box::new(o)
            }
        }
    }
}

/// Per-subject score tables as one CSV with a session column.
pub fn tables_csv(tables: &[(String, ScoreTable)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["session_id", "condition", "eccentricity_deg", "k", "n", "proportion"])?;
    for (session, t) in tables {
        for c in &t.cells {
            w.write_record([
                session.clone(),
                c.condition.to_string(),
                c.eccentricity_deg.to_string(),
                c.k.to_string(),
                c.n.to_string(),
                c.proportion.to_string(),
            ])?;
        }
    }
    csv_bytes(w)
}

impl Batch for Simulate {
    const NAME: &'static str = "simulate";
    type Config = SimulateConfig;

    fn defaults(user: &Value) -> Result<Value> {
        Ok(json!({
            "sets": [],
            "experiment": experiment_defaults(user)?,
            "observer": ObserverKind::Blur,
            "noise_sd": 0.05,
            "deg_per_level": 10.0,
            "max_level": 4,
            "observer_seed": null,
            "subjects": 1,
        }))
    }

    fn normalize(cfg: &mut SimulateConfig) -> Result<()> {
        check_experiment(&mut cfg.sets, &cfg.experiment)?;
        if cfg.subjects == 0 {
            return Err(CliError::Config("subjects must be >= 1".into()));
        }
        if !(cfg.noise_sd >= 0.0) || !(cfg.deg_per_level > 0.0) {
            return Err(CliError::Config("noise_sd must be >= 0 and deg_per_level > 0".into()));
        }
        Ok(())
    }

    fn inputs(cfg: &SimulateConfig) -> Vec<PathBuf> {
        cfg.sets.clone()
    }

    fn execute(cfg: &SimulateConfig, out: &OutDir) -> Result<Report> {
        let set = load_sets(&cfg.sets)?;
        let specs = generate_trials(&cfg.experiment, &set)?;
        let source = SetSource::new(&set);
        let timings = cfg.experiment.timings();
        let mut lines = String::new();
        let mut tables = Vec::new();
        for subject in 0..cfg.subjects {
            let session = format!("sim-{subject:03}");
            let observer = cfg.observer(subject);
            let records = simulate_session(&specs, observer.as_ref(), &source, timings, &session)?;
            for r in &records {
                lines.push_str(&serde_json::to_string(r)?);
                lines.push('\n');
            }
            tables.push((session, score_session(&records, &specs, false)?));
            tracing::info!(subject, observer = %observer.id(), "simulated");
        }
        out.write_json("trials.json", &specs)?;
        out.write_bytes("records.jsonl", lines.as_bytes())?;
        let scores: Vec<Value> = tables
            .iter()
            .map(|(s, t)| json!({ "session_id": s, "table": t }))
            .collect();
        out.write_json("scores.json", &scores)?;
        out.write_bytes("scores.csv", &tables_csv(&tables)?)?;
        Ok(Report {
            total: cfg.subjects,
            warnings: cfg.experiment.validate()?,
            ..Report::default()
        })
    }
}
