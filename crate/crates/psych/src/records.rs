//! Responses and their scoring.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::{Condition, Timings};
use crate::error::{Error, Result};
use crate::trials::TrialSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// What the browser measured while presenting a trial.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    /// Onset of each stimulus interval on the display clock, in ms.
    #[serde(default)]
    pub onsets_ms: Vec<f64>,
    /// Measured duration of each stimulus interval, in ms.
    #[serde(default)]
    pub durations_ms: Vec<f64>,
    #[serde(default)]
    pub refresh_hz: Option<f64>,
}

const DEFAULT_REFRESH_HZ: f64 = 60.0;

impl Telemetry {
    fn well_formed(&self, intervals: usize) -> bool {
        self.onsets_ms.len() == intervals
            && self.durations_ms.len() == intervals
            && self.onsets_ms.iter().chain(&self.durations_ms).all(|v| v.is_finite())
            && self.durations_ms.iter().all(|d| *d >= 0.0)
            && self.onsets_ms.windows(2).all(|w| w[1] > w[0])
            && self.refresh_hz.is_none_or(|r| r.is_finite() && r > 0.0)
    }

    /// Any interval off its nominal duration by more than one frame.
    fn off_budget(&self, nominal_ms: f64) -> bool {
        let frame = 1000.0 / self.refresh_hz.unwrap_or(DEFAULT_REFRESH_HZ);
        self.durations_ms.iter().any(|d| (d - nominal_ms).abs() > frame)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub session_id: String,
    pub trial_id: String,
    pub response: usize,
    pub correct: bool,
    pub response_time_ms: f64,
    /// Stimulus onsets, strictly increasing; empty when telemetry was unusable.
    pub timestamps_ms: Vec<f64>,
    pub durations_ms: Vec<f64>,
    pub telemetry_valid: bool,
    pub timing_suspect: bool,
}

impl TrialRecord {
    pub fn score(
        spec: &TrialSpec,
        session_id: &str,
        response: usize,
        response_time_ms: f64,
        telemetry: &Telemetry,
        timings: Timings,
    ) -> Result<Self> {
        if response >= spec.responses() {
            return Err(Error::Invalid(format!(
                "response {response} out of range for a {}-alternative trial",
                spec.responses()
            )));
        }
        let valid = telemetry.well_formed(spec.intervals.len());
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.to_string(),
            trial_id: spec.id.clone(),
            response,
            correct: response == spec.correct,
            response_time_ms,
            timestamps_ms: if valid { telemetry.onsets_ms.clone() } else { Vec::new() },
            durations_ms: if valid { telemetry.durations_ms.clone() } else { Vec::new() },
            telemetry_valid: valid,
            timing_suspect: valid && telemetry.off_budget(timings.stimulus_ms),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub condition: Condition,
    pub eccentricity_deg: f64,
    pub k: u64,
    pub n: u64,
    pub proportion: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub cells: Vec<CellScore>,
    /// Records left out because of suspect or invalid timing.
    pub excluded: usize,
}

impl ScoreTable {
    pub fn condition(&self, c: Condition) -> Vec<&CellScore> {
        self.cells.iter().filter(|s| s.condition == c).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["condition", "eccentricity_deg", "k", "n", "proportion"])?;
        for c in &self.cells {
            w.write_record([
                c.condition.to_string(),
                c.eccentricity_deg.to_string(),
                c.k.to_string(),
                c.n.to_string(),
                c.proportion.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Proportion correct per (condition, eccentricity).
pub fn score_session(records: &[TrialRecord], specs: &[TrialSpec], exclude_suspect: bool) -> Result<ScoreTable> {
    let by_id: HashMap<&str, &TrialSpec> = specs.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut seen = HashMap::new();
    let mut cells: BTreeMap<(Condition, u64), (f64, u64, u64)> = BTreeMap::new();
    let mut excluded = 0;
    for r in records {
        let spec = by_id
            .get(r.trial_id.as_str())
            .ok_or_else(|| Error::UnknownTrial(r.trial_id.clone()))?;
        if seen.insert(r.trial_id.as_str(), ()).is_some() {
            return Err(Error::Invalid(format!("trial {} answered twice", r.trial_id)));
        }
        if r.correct != (r.response == spec.correct) {
            return Err(Error::Invalid(format!("trial {} has an inconsistent correct flag", r.trial_id)));
        }
        if exclude_suspect && (r.timing_suspect || !r.telemetry_valid) {
            excluded += 1;
            continue;
        }
        // Eccentricities are nonnegative, so their bit patterns sort numerically.
        let cell = cells
            .entry((spec.condition, spec.eccentricity_deg.to_bits()))
            .or_insert((spec.eccentricity_deg, 0, 0));
        cell.1 += u64::from(r.correct);
        cell.2 += 1;
    }
    Ok(ScoreTable {
        cells: cells
            .into_iter()
            .map(|((condition, _), (ecc, k, n))| CellScore {
                condition,
                eccentricity_deg: ecc,
                k,
                n,
                proportion: k as f64 / n as f64,
            })
            .collect(),
        excluded,
    })
}
