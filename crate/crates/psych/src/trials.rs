//! Trial schedules for the oddity and 2AFC tasks.

use std::fmt;
use std::path::PathBuf;

use periph_core::stimulus::{Family, StimulusEntry, StimulusFile, StimulusSet};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Condition, ExperimentConfig, Task, Variant};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusRef {
    pub class: String,
    pub image_id: String,
    /// `None` for the original.
    pub family: Option<Family>,
    pub seed: Option<u32>,
    pub hash: String,
    /// Relative to the stimulus set root.
    pub path: PathBuf,
}

/// Stimulus centre and side length in screen pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub x: f64,
    pub y: f64,
    pub size: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub id: String,
    pub task: Task,
    pub condition: Condition,
    pub eccentricity_deg: f64,
    /// Oddity: the three intervals in order. 2AFC: template, left, right.
    pub stimuli: Vec<StimulusRef>,
    /// Correct response: the oddball interval, or 0 = left / 1 = right.
    pub correct: usize,
    /// Stimulus indices shown together, interval by interval.
    pub intervals: Vec<Vec<usize>>,
    pub placements: Vec<Placement>,
    /// Hemifield of the peripheral oddity stimuli; 2AFC uses both.
    pub side: Side,
}

impl TrialSpec {
    pub fn responses(&self) -> usize {
        self.task.positions()
    }

    pub fn correct_side(&self) -> Option<Side> {
        match self.task {
            Task::Oddity => None,
            Task::Match2afc => Some(if self.correct == 0 { Side::Left } else { Side::Right }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub condition: Condition,
    pub eccentricity_deg: f64,
    pub needed: usize,
    pub available: usize,
}

impl fmt::Display for Shortfall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at {} deg needs {} images, {} usable",
            self.condition, self.eccentricity_deg, self.needed, self.available
        )
    }
}

struct Candidate<'a> {
    class: &'a str,
    image_id: &'a str,
    entry: &'a StimulusEntry,
    seeds: Vec<u32>,
}

impl Candidate<'_> {
    fn make_ref(&self, family: Option<Family>, seed: Option<u32>, file: &StimulusFile) -> StimulusRef {
        StimulusRef {
            class: self.class.to_string(),
            image_id: self.image_id.to_string(),
            family,
            seed,
            hash: file.hash.clone(),
            path: file.path.clone(),
        }
    }

    fn original(&self) -> StimulusRef {
        self.make_ref(None, None, self.entry.original.as_ref().expect("candidates have originals"))
    }

    fn synth(&self, family: Family, seed: u32) -> StimulusRef {
        self.make_ref(Some(family), Some(seed), self.entry.get(family, seed).expect("seed listed"))
    }
}

/// Images usable for `family`: an original plus at least two seeds.
fn candidates(set: &StimulusSet, family: Family) -> Vec<Candidate<'_>> {
    set.entries()
        .filter(|(_, _, e)| e.original.is_some())
        .filter_map(|(class, image_id, entry)| {
            let seeds: Vec<u32> = entry.synth.get(&family)?.keys().copied().collect();
            (seeds.len() >= 2).then_some(Candidate {
                class,
                image_id,
                entry,
                seeds,
            })
        })
        .collect()
}

/// Correct positions for one cell: exact thirds (or halves), with the
/// remainder assigned to distinct positions by seeded draw, then shuffled.
fn balanced_positions(n: usize, positions: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out: Vec<usize> = (0..positions).flat_map(|p| std::iter::repeat_n(p, n / positions)).collect();
    out.extend(sample(rng, positions, n % positions).iter());
    out.shuffle(rng);
    out
}

fn two_seeds(seeds: &[u32], rng: &mut ChaCha8Rng) -> (u32, u32) {
    let pick = sample(rng, seeds.len(), 2);
    (seeds[pick.index(0)], seeds[pick.index(1)])
}

/// Build the full schedule. Every (condition, eccentricity) cell gets
/// exactly `trials_per_cell` trials drawn from distinct images; cells are
/// interleaved by a seeded shuffle.
pub fn generate_trials(cfg: &ExperimentConfig, set: &StimulusSet) -> Result<Vec<TrialSpec>> {
    cfg.validate()?;
    let n = cfg.trials_per_cell;
    let positions = cfg.task.positions();
    let center = cfg.geometry.center_px();
    let size = cfg.geometry.deg_to_px(cfg.stimulus_deg);

    let mut shortfalls = Vec::new();
    let mut trials = Vec::new();
    let mut cell_index = 0u64;
    for &condition in &cfg.conditions {
        let pool = candidates(set, condition.family);
        // Synth-vs-synth oddity needs a second image for the oddball.
        let min_pool = if cfg.task == Task::Oddity && condition.variant == Variant::SynthVsSynth {
            n + 1
        } else {
            n
        };
        for &ecc in &cfg.eccentricities {
            cell_index += 1;
            if pool.len() < min_pool {
                shortfalls.push(Shortfall {
                    condition,
                    eccentricity_deg: ecc,
                    needed: min_pool,
                    available: pool.len(),
                });
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(cell_index);
            let chosen = sample(&mut rng, pool.len(), n).into_vec();
            let correct = balanced_positions(n, positions, &mut rng);
            let offset = cfg.geometry.deg_to_px(ecc);
            for (&img, &pos) in chosen.iter().zip(&correct) {
                let c = &pool[img];
                let (sa, sb) = two_seeds(&c.seeds, &mut rng);
                let side = if rng.random_bool(0.5) { Side::Left } else { Side::Right };
                let fam = condition.family;
                let (stimuli, intervals, placements) = match cfg.task {
                    Task::Oddity => {
                        let (odd, same) = match condition.variant {
                            Variant::OriginalVsSynth => (c.original(), [c.synth(fam, sa), c.synth(fam, sb)]),
                            Variant::SynthVsSynth => {
                                let foil = foil_image(&pool, img, &mut rng);
                                let fs = foil.seeds[rng.random_range(0..foil.seeds.len())];
                                (foil.synth(fam, fs), [c.synth(fam, sa), c.synth(fam, sb)])
                            }
                        };
                        let mut same = same.into_iter();
                        let stimuli: Vec<StimulusRef> = (0..3)
                            .map(|i| if i == pos { odd.clone() } else { same.next().unwrap() })
                            .collect();
                        let x = match side {
                            Side::Left => center.0 - offset,
                            Side::Right => center.0 + offset,
                        };
                        let p = Placement { x, y: center.1, size };
                        (stimuli, vec![vec![0], vec![1], vec![2]], vec![p; 3])
                    }
                    Task::Match2afc => {
                        let (template, foil) = match condition.variant {
                            Variant::OriginalVsSynth => (c.original(), c.synth(fam, sa)),
                            Variant::SynthVsSynth => (c.synth(fam, sa), c.synth(fam, sb)),
                        };
                        let pair = if pos == 0 {
                            [template.clone(), foil]
                        } else {
                            [foil, template.clone()]
                        };
                        let [left, right] = pair;
                        let placements = vec![
                            Placement {
                                x: center.0,
                                y: center.1,
                                size,
                            },
                            Placement {
                                x: center.0 - offset,
                                y: center.1,
                                size,
                            },
                            Placement {
                                x: center.0 + offset,
                                y: center.1,
                                size,
                            },
                        ];
                        (vec![template, left, right], vec![vec![0], vec![1, 2]], placements)
                    }
                };
                trials.push(TrialSpec {
                    id: String::new(),
                    task: cfg.task,
                    condition,
                    eccentricity_deg: ecc,
                    stimuli,
                    correct: pos,
                    intervals,
                    placements,
                    side,
                });
            }
        }
    }
    if !shortfalls.is_empty() {
        return Err(Error::Shortfall(shortfalls));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    trials.shuffle(&mut rng);
    let width = trials.len().to_string().len().max(4);
    for (i, t) in trials.iter_mut().enumerate() {
        t.id = format!("t{i:0width$}");
    }
    Ok(trials)
}

/// Another image for a synth-vs-synth oddball, from the same class when
/// one exists.
fn foil_image<'a>(pool: &'a [Candidate<'a>], img: usize, rng: &mut ChaCha8Rng) -> &'a Candidate<'a> {
    let same: Vec<usize> = (0..pool.len())
        .filter(|&j| j != img && pool[j].class == pool[img].class)
        .collect();
    let any: Vec<usize> = (0..pool.len()).filter(|&j| j != img).collect();
    let from = if same.is_empty() { &any } else { &same };
    &pool[from[rng.random_range(0..from.len())]]
}
