//! Experiment definitions.

use std::fmt;
use std::str::FromStr;

use periph_core::stimulus::Family;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::DisplayGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Three sequential intervals; report the one that differs.
    Oddity,
    /// Foveal template, then a left/right peripheral pair; report the match.
    Match2afc,
}

impl Task {
    pub fn positions(self) -> usize {
        match self {
            Task::Oddity => 3,
            Task::Match2afc => 2,
        }
    }

    pub fn chance(self) -> f64 {
        1.0 / self.positions() as f64
    }

    pub fn default_timings(self) -> Timings {
        Timings {
            stimulus_ms: 100.0,
            mask_ms: match self {
                Task::Oddity => 500.0,
                Task::Match2afc => 1000.0,
            },
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Oddity => "oddity",
            Task::Match2afc => "match2afc",
        })
    }
}

/// Which pair of stimuli a trial contrasts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    OriginalVsSynth,
    SynthVsSynth,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::OriginalVsSynth => "original-vs-synth",
            Variant::SynthVsSynth => "synth-vs-synth",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub family: Family,
    pub variant: Variant,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.family, self.variant)
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (fam, var) = s
            .split_once('/')
            .ok_or_else(|| Error::Invalid(format!("condition {s:?} is not family/variant")))?;
        let variant = match var {
            "original-vs-synth" => Variant::OriginalVsSynth,
            "synth-vs-synth" => Variant::SynthVsSynth,
            other => return Err(Error::Invalid(format!("unknown variant {other:?}"))),
        };
        Ok(Condition {
            family: fam.parse()?,
            variant,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stimulus_ms: f64,
    pub mask_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub eccentricities: Vec<f64>,
    pub conditions: Vec<Condition>,
    pub trials_per_cell: usize,
    #[serde(default)]
    pub timings: Option<Timings>,
    /// Stimulus side length in degrees.
    #[serde(default = "default_stimulus_deg")]
    pub stimulus_deg: f64,
    #[serde(default)]
    pub geometry: DisplayGeometry,
    #[serde(default)]
    pub seed: u64,
}

fn default_stimulus_deg() -> f64 {
    6.67
}

/// Placeholder sweep in degrees.
pub const DEFAULT_ECCENTRICITIES: [f64; 5] = [5.0, 10.0, 20.0, 30.0, 40.0];

impl ExperimentConfig {
    /// All three families under both variants, 72 oddity or 80 2AFC trials
    /// per cell, over the default sweep.
    pub fn new(task: Task) -> Self {
        let conditions = Family::ALL
            .iter()
            .flat_map(|&family| {
                [Variant::OriginalVsSynth, Variant::SynthVsSynth]
                    .map(|variant| Condition { family, variant })
            })
            .collect();
        Self {
            task,
            eccentricities: DEFAULT_ECCENTRICITIES.to_vec(),
            conditions,
            trials_per_cell: match task {
                Task::Oddity => 72,
                Task::Match2afc => 80,
            },
            timings: None,
            stimulus_deg: default_stimulus_deg(),
            geometry: DisplayGeometry::default(),
            seed: 0,
        }
    }

    pub fn timings(&self) -> Timings {
        self.timings.unwrap_or_else(|| self.task.default_timings())
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        let mut problems = Vec::new();
        if self.trials_per_cell == 0 {
            problems.push("trials_per_cell must be > 0".to_string());
        }
        if self.eccentricities.is_empty() {
            problems.push("no eccentricities".to_string());
        }
        if self.eccentricities.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            problems.push("eccentricities must be finite and >= 0".to_string());
        }
        let mut eccs = self.eccentricities.clone();
        eccs.sort_by(f64::total_cmp);
        if eccs.windows(2).any(|w| w[0] == w[1]) {
            problems.push("duplicate eccentricity".to_string());
        }
        if self.conditions.is_empty() {
            problems.push("no conditions".to_string());
        }
        let mut conds = self.conditions.clone();
        conds.sort();
        if conds.windows(2).any(|w| w[0] == w[1]) {
            problems.push("duplicate condition".to_string());
        }
        let t = self.timings();
        if !(t.stimulus_ms > 0.0 && t.mask_ms >= 0.0) {
            problems.push("stimulus_ms must be > 0 and mask_ms >= 0".to_string());
        }
        if !(self.stimulus_deg > 0.0) {
            problems.push("stimulus_deg must be > 0".to_string());
        }
        let warnings = match self.geometry.validate() {
            Ok(w) => w,
            Err(e) => {
                problems.push(e.to_string());
                Vec::new()
            }
        };
        if problems.is_empty() {
            Ok(warnings)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// sha256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_timings_per_task() {
        let o = ExperimentConfig::new(Task::Oddity).timings();
        let m = ExperimentConfig::new(Task::Match2afc).timings();
        assert_eq!((o.stimulus_ms, o.mask_ms), (100.0, 500.0));
        assert_eq!((m.stimulus_ms, m.mask_ms), (100.0, 1000.0));
    }

    #[test]
    fn validation_and_round_trip() {
        let mut cfg = ExperimentConfig::new(Task::Oddity);
        assert!(cfg.validate().is_ok());
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        cfg.trials_per_cell = 0;
        cfg.eccentricities.push(5.0);
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("trials_per_cell") && err.contains("duplicate eccentricity"), "{err}");
    }

    #[test]
    fn condition_parsing() {
        let c: Condition = "texform/synth-vs-synth".parse().unwrap();
        assert_eq!(c.to_string(), "texform/synth-vs-synth");
        assert!("texform".parse::<Condition>().is_err());
        assert!("blob/synth-vs-synth".parse::<Condition>().is_err());
    }
}
