//! Simulated observers used to exercise the pipeline without people.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use periph_core::stimulus::StimulusSet;
use periph_core::{gaussian, mse, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Timings;
use crate::error::Result;
use crate::records::{Telemetry, TrialRecord};
use crate::trials::{StimulusRef, TrialSpec};

pub trait StimulusSource: Sync {
    fn load(&self, r: &StimulusRef) -> Result<Arc<ImageBuffer>>;

    /// Gaussian-pyramid level `level`, clamped to what the image supports.
    fn load_level(&self, r: &StimulusRef, level: usize) -> Result<Arc<ImageBuffer>> {
        let img = self.load(r)?;
        let level = level.min(gaussian::max_levels(img.dims()).saturating_sub(1));
        Ok(Arc::new(gaussian::lowpass_level(&img, level)?))
    }
}

/// Reads stimuli from an ingested set, keeping decoded images in memory.
pub struct SetSource<'a> {
    set: &'a StimulusSet,
    cache: Mutex<HashMap<(String, Option<usize>), Arc<ImageBuffer>>>,
}

impl<'a> SetSource<'a> {
    pub fn new(set: &'a StimulusSet) -> Self {
        Self {
            set,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl StimulusSource for SetSource<'_> {
    fn load(&self, r: &StimulusRef) -> Result<Arc<ImageBuffer>> {
        let key = (r.hash.clone(), None);
        if let Some(img) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(img.clone());
        }
        let img = Arc::new(ImageBuffer::load_png(self.set.root.join(&r.path))?.to_grayscale());
        self.cache.lock().expect("cache lock").insert(key, img.clone());
        Ok(img)
    }

    fn load_level(&self, r: &StimulusRef, level: usize) -> Result<Arc<ImageBuffer>> {
        let key = (r.hash.clone(), Some(level));
        if let Some(img) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(img.clone());
        }
        let img = self.load(r)?;
        let clamped = level.min(gaussian::max_levels(img.dims()).saturating_sub(1));
        let out = Arc::new(gaussian::lowpass_level(&img, clamped)?);
        self.cache.lock().expect("cache lock").insert(key, out.clone());
        Ok(out)
    }
}

pub trait Observer {
    fn id(&self) -> String;
    fn respond(&self, spec: &TrialSpec, source: &dyn StimulusSource) -> Result<usize>;
}

/// Per-trial generator: the same (seed, trial) always gives the same draws.
fn trial_rng(seed: u64, trial: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(trial.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")));
    rng
}

/// Answers uniformly at random.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomObserver {
    pub seed: u64,
}

impl Observer for RandomObserver {
    fn id(&self) -> String {
        format!("random-{}", self.seed)
    }

    fn respond(&self, spec: &TrialSpec, _: &dyn StimulusSource) -> Result<usize> {
        Ok(trial_rng(self.seed, &spec.id).random_range(0..spec.responses()))
    }
}

/// Blurs every stimulus to a Gaussian-pyramid level set by eccentricity,
/// adds Gaussian noise to pixel distances and picks the oddball (largest
/// summed distance) or the candidate closest to the template.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurObserver {
    /// Noise standard deviation in RMS-distance units; infinite means
    /// random responding.
    pub noise_sd: f64,
    pub seed: u64,
    /// Degrees of eccentricity per pyramid level.
    pub deg_per_level: f64,
    pub max_level: usize,
}

impl BlurObserver {
    pub fn new(noise_sd: f64, seed: u64) -> Self {
        Self {
            noise_sd,
            seed,
            deg_per_level: 10.0,
            max_level: 4,
        }
    }

    /// `clamp(round(ecc / deg_per_level), 0, max_level)`.
    pub fn level(&self, eccentricity_deg: f64) -> usize {
        ((eccentricity_deg / self.deg_per_level).round().max(0.0) as usize).min(self.max_level)
    }
}

impl Observer for BlurObserver {
    fn id(&self) -> String {
        format!("blur-sd{}-seed{}", self.noise_sd, self.seed)
    }

    fn respond(&self, spec: &TrialSpec, source: &dyn StimulusSource) -> Result<usize> {
        let mut rng = trial_rng(self.seed, &spec.id);
        if !self.noise_sd.is_finite() {
            return Ok(rng.random_range(0..spec.responses()));
        }
        let level = self.level(spec.eccentricity_deg);
        let blurred = spec
            .stimuli
            .iter()
            .map(|r| source.load_level(r, level))
            .collect::<Result<Vec<_>>>()?;
        let dist = |i: usize, j: usize| mse(&blurred[i], &blurred[j]).map(f64::sqrt);
        let mut noisy = |d: f64| d + self.noise_sd * rng.sample::<f64, _>(StandardNormal);
        let scores: Vec<f64> = match spec.task {
            crate::config::Task::Oddity => {
                let (d01, d02, d12) = (dist(0, 1)?, dist(0, 2)?, dist(1, 2)?);
                vec![noisy(d01 + d02), noisy(d01 + d12), noisy(d02 + d12)]
            }
            // Closeness to the template, so larger is better.
            crate::config::Task::Match2afc => vec![-noisy(dist(0, 1)?), -noisy(dist(0, 2)?)],
        };
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Run `observer` through every trial, producing records with nominal timing.
pub fn simulate_session(
    specs: &[TrialSpec],
    observer: &dyn Observer,
    source: &dyn StimulusSource,
    timings: Timings,
    session_id: &str,
) -> Result<Vec<TrialRecord>> {
    let mut t = 0.0;
    specs
        .iter()
        .map(|spec| {
            let telemetry = Telemetry {
                onsets_ms: spec
                    .intervals
                    .iter()
                    .map(|_| {
                        t += timings.stimulus_ms + timings.mask_ms;
                        t
                    })
                    .collect(),
                durations_ms: vec![timings.stimulus_ms; spec.intervals.len()],
                refresh_hz: None,
            };
            let response = observer.respond(spec, source)?;
            TrialRecord::score(spec, session_id, response, 0.0, &telemetry, timings)
        })
        .collect()
}
