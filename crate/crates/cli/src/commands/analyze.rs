//! `analyze` and `replay`: psychometric curves from simulated runs or
//! stored sessions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use periph_psych::{
    build_curve, compare_curves, critical_eccentricity, fit_sigmoid, score_session, BootstrapConfig, Condition,
    PoolingMode, PsychometricCurve, ScoreTable, SigmoidFit, TrialRecord, TrialSpec,
};
use periph_service::store::{load_session, session_dirs, PLAN_FILE, RESPONSES_FILE};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::absolute_all;
use super::trials::tables_csv;
use crate::command::{absolute, Batch, Report};
use crate::error::{CliError, Result};
use crate::manifest::OutDir;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Simulation output directories, session directories or service data
    /// directories.
    pub inputs: Vec<PathBuf>,
    pub mode: PoolingMode,
    pub samples: usize,
    pub level: f64,
    pub seed: u64,
    /// Fraction of the way from ceiling down to chance that defines the
    /// critical eccentricity.
    pub threshold: f64,
    pub exclude_suspect: bool,
    /// Curve pairs to compare; by default every pair of families under the
    /// same variant.
    pub comparisons: Option<Vec<(Condition, Condition)>>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        let boot = BootstrapConfig::default();
        Self {
            inputs: Vec::new(),
            mode: PoolingMode::PooledTrials,
            samples: boot.samples,
            level: boot.level,
            seed: boot.seed,
            threshold: 0.5,
            exclude_suspect: false,
            comparisons: None,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct AnalyzeArgs {
    /// Input directories; repeatable.
    #[arg(long = "in", value_name = "DIR")]
    #[serde(rename = "inputs", skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<PathBuf>,
    /// pooled-trials or subject-mean
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub exclude_suspect: bool,
}

/// Trials and the records answering them.
struct Source {
    specs: Vec<TrialSpec>,
    records: Vec<TrialRecord>,
}

fn read_jsonl(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Config(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

fn load_sources(dir: &Path) -> Result<Vec<Source>> {
    if dir.join("trials.json").exists() && dir.join("records.jsonl").exists() {
        let bytes = fs::read(dir.join("trials.json")).map_err(|e| CliError::io(dir, e))?;
        return Ok(vec![Source {
            specs: serde_json::from_slice(&bytes)?,
            records: read_jsonl(&dir.join("records.jsonl"))?,
        }]);
    }
    if dir.join(PLAN_FILE).exists() && dir.join(RESPONSES_FILE).exists() {
        let s = load_session(dir, false)?;
        return Ok(vec![Source {
            specs: s.plan.trials,
            records: s.records,
        }]);
    }
    let sessions = session_dirs(dir)?;
    if sessions.is_empty() {
        return Err(CliError::Config(format!(
            "{} holds neither simulation output nor sessions",
            dir.display()
        )));
    }
    sessions.iter().map(|d| load_sources(d).map(|mut v| v.remove(0))).collect()
}

#[derive(Serialize)]
struct CurveReport {
    curve: PsychometricCurve,
    fit: Option<SigmoidFit>,
    fit_error: Option<String>,
    critical_eccentricity: Option<f64>,
    /// `decay`, `no-decay` or `unresolved`.
    verdict: &'static str,
}

pub struct Analyze;

impl Batch for Analyze {
    const NAME: &'static str = "analyze";
    type Config = AnalyzeConfig;

    fn defaults(_: &Value) -> Result<Value> {
        Ok(serde_json::to_value(AnalyzeConfig::default())?)
    }

    fn normalize(cfg: &mut AnalyzeConfig) -> Result<()> {
        if cfg.inputs.is_empty() {
            return Err(CliError::Config("no inputs; pass --in DIR".into()));
        }
        absolute_all(&mut cfg.inputs)?;
        if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
            return Err(CliError::Config("threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn inputs(cfg: &AnalyzeConfig) -> Vec<PathBuf> {
        cfg.inputs.clone()
    }

    fn execute(cfg: &AnalyzeConfig, out: &OutDir) -> Result<Report> {
        let boot = BootstrapConfig {
            samples: cfg.samples,
            level: cfg.level,
            seed: cfg.seed,
        };
        let mut sources = Vec::new();
        for dir in &cfg.inputs {
            sources.extend(load_sources(dir)?);
        }
        let tasks: BTreeSet<_> = sources.iter().flat_map(|s| s.specs.iter().map(|t| t.task)).collect();
        let task = match tasks.len() {
            1 => *tasks.iter().next().expect("one task"),
            0 => return Err(CliError::Config("inputs contain no trials".into())),
            _ => return Err(CliError::Config("inputs mix oddity and 2AFC trials".into())),
        };

        let mut sessions: BTreeMap<String, (usize, Vec<TrialRecord>)> = BTreeMap::new();
        for (i, s) in sources.iter().enumerate() {
            for r in &s.records {
                let slot = sessions.entry(r.session_id.clone()).or_insert((i, Vec::new()));
                if slot.0 != i {
                    return Err(CliError::Config(format!("session {} appears in two inputs", r.session_id)));
                }
                slot.1.push(r.clone());
            }
        }
        let tables: Vec<(String, ScoreTable)> = sessions
            .iter()
            .map(|(id, (i, records))| Ok((id.clone(), score_session(records, &sources[*i].specs, cfg.exclude_suspect)?)))
            .collect::<Result<_>>()?;
        let only_tables: Vec<ScoreTable> = tables.iter().map(|t| t.1.clone()).collect();

        let conditions: BTreeSet<Condition> = sources
            .iter()
            .flat_map(|s| s.specs.iter().map(|t| t.condition))
            .collect();
        let mut curves: BTreeMap<Condition, CurveReport> = BTreeMap::new();
        let mut report = Report::default();
        for &c in &conditions {
            let curve = match build_curve(&only_tables, c, task.chance(), cfg.mode, boot) {
                Ok(curve) => curve,
                Err(e) => {
                    report.warnings.push(format!("{c}: {e}"));
                    continue;
                }
            };
            let (fit, fit_error) = match fit_sigmoid(&curve) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let critical = fit.as_ref().and_then(|f| critical_eccentricity(f, cfg.threshold));
            let verdict = match (&fit, critical) {
                (Some(f), _) if f.no_decay => "no-decay",
                (Some(_), Some(_)) => "decay",
                _ => "unresolved",
            };
            curves.insert(
                c,
                CurveReport {
                    curve,
                    fit,
                    fit_error,
                    critical_eccentricity: critical,
                    verdict,
                },
            );
        }
        report.total = curves.len();

        let pairs: Vec<(Condition, Condition)> = match &cfg.comparisons {
            Some(p) => p.clone(),
            None => {
                let keys: Vec<_> = curves.keys().copied().collect();
                let mut v = Vec::new();
                for (i, a) in keys.iter().enumerate() {
                    for b in &keys[i + 1..] {
                        if a.variant == b.variant {
                            v.push((*a, *b));
                        }
                    }
                }
                v
            }
        };
        let mut comparisons = Vec::new();
        for (a, b) in pairs {
            match (curves.get(&a), curves.get(&b)) {
                (Some(ca), Some(cb)) => comparisons.push(compare_curves(&ca.curve, &cb.curve, boot)?),
                _ => report.warnings.push(format!("cannot compare {a} with {b}: missing curve")),
            }
        }

        let mut csv = String::new();
        for (i, r) in curves.values().enumerate() {
            let text = r.curve.to_csv()?;
            let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |x| x.1) };
            csv.push_str(body);
        }
        out.write_bytes("curves.csv", csv.as_bytes())?;
        out.write_bytes("scores.csv", &tables_csv(&tables)?)?;
        for (c, r) in &curves {
            let name = format!("curve-{}-{}.svg", c.family, c.variant);
            out.write_bytes(name, svg(&r.curve, r.fit.as_ref(), r.critical_eccentricity).as_bytes())?;
        }
        out.write_json(
            "analysis.json",
            &json!({
                "task": task,
                "chance": task.chance(),
                "mode": cfg.mode,
                "bootstrap": boot,
                "sessions": tables.iter().map(|t| &t.0).collect::<Vec<_>>(),
                "excluded": tables.iter().map(|t| t.1.excluded).sum::<usize>(),
                "curves": curves.values().collect::<Vec<_>>(),
                "comparisons": comparisons,
            }),
        )?;
        Ok(report)
    }
}

/// Points with interval bars, the fitted curve and the chance line.
pub fn svg(curve: &PsychometricCurve, fit: Option<&SigmoidFit>, critical: Option<f64>) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let x_max = curve.points.iter().map(|p| p.eccentricity_deg).fold(1.0, f64::max) * 1.1;
    let sx = |x: f64| m + x / x_max * (w - 2.0 * m);
    let sy = |y: f64| h - m - y * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, curve.condition);
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.1} {y0:.1} H{x1:.1} M{x0:.1} {y0:.1} V{y1:.1}" stroke="black" fill="none"/>"#,
        x0 = sx(0.0),
        y0 = sy(0.0),
        x1 = sx(x_max),
        y1 = sy(1.0)
    );
    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t}</text>"#,
            sx(0.0) - 4.0,
            sy(t) + 4.0
        );
    }
    for p in &curve.points {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(p.eccentricity_deg),
            sy(0.0) + 14.0,
            p.eccentricity_deg
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">eccentricity (deg)</text>"#,
        w / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#888" stroke-dasharray="4 3"/>"##,
        sx(0.0),
        sx(x_max),
        y = sy(curve.chance)
    );
    if let Some(f) = fit {
        let pts: Vec<String> = (0..=100)
            .map(|i| {
                let x = x_max * f64::from(i) / 100.0;
                format!("{:.1},{:.1}", sx(x), sy(f.predict(x)))
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" stroke="#1f77b4" fill="none"/>"##,
            pts.join(" ")
        );
    }
    if let Some(r) = critical {
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#d62728" stroke-dasharray="2 2"/>"##,
            sy(0.0),
            sy(1.0),
            x = sx(r)
        );
    }
    for p in &curve.points {
        let x = sx(p.eccentricity_deg);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            sy(p.ci_low),
            sy(p.ci_high)
        );
        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{:.1}" r="3"/>"#, sy(p.proportion));
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub session: Option<PathBuf>,
    pub exclude_suspect: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct ReplayArgs {
    /// Session directory under the service data directory.
    #[arg(long)]
    pub session: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub exclude_suspect: bool,
}

pub struct Replay;

impl Batch for Replay {
    const NAME: &'static str = "replay";
    type Config = ReplayConfig;

    fn defaults(_: &Value) -> Result<Value> {
        Ok(serde_json::to_value(ReplayConfig::default())?)
    }

    fn normalize(cfg: &mut ReplayConfig) -> Result<()> {
        let dir = cfg
            .session
            .as_deref()
            .ok_or_else(|| CliError::Config("a session directory is required (--session)".into()))?;
        cfg.session = Some(absolute(dir)?);
        Ok(())
    }

    fn inputs(cfg: &ReplayConfig) -> Vec<PathBuf> {
        cfg.session.iter().cloned().collect()
    }

    fn execute(cfg: &ReplayConfig, out: &OutDir) -> Result<Report> {
        let r = periph_service::replay(cfg.session.as_deref().expect("normalized"), cfg.exclude_suspect)?;
        out.write_bytes("table.csv", r.table.to_csv()?.as_bytes())?;
        out.write_json(
            "replay.json",
            &json!({
                "session": r.session,
                "records": r.records.len(),
                "trials": r.plan.trials.len(),
                "table": r.table,
            }),
        )?;
        Ok(Report {
            total: r.records.len(),
            ..Report::default()
        })
    }
}
