//! Psychometric curves, bootstrap intervals, logistic-decay fits and curve
//! comparison.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::config::Condition;
use crate::error::{Error, Result};
use crate::records::ScoreTable;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub samples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            level: 0.95,
            seed: 0,
        }
    }
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Linear-interpolation quantile (the usual "type 7") of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn percentile_interval(mut values: Vec<f64>, level: f64) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile(&values, tail), quantile(&values, 1.0 - tail))
}

fn check_bootstrap(samples: usize, level: f64) -> Result<()> {
    if samples < 2 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "bootstrap needs >= 2 samples and a level in (0, 1), got {samples} and {level}"
        )));
    }
    Ok(())
}

/// Resampled proportions of `k` successes in `n` trials. Resampling the
/// trials with replacement makes the success count Binomial(n, k/n).
fn resample(k: u64, n: u64, samples: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dist = Binomial::new(n, k as f64 / n as f64).expect("0 <= k/n <= 1");
    (0..samples).map(|_| dist.sample(rng) as f64 / n as f64).collect()
}

/// Percentile bootstrap interval for a proportion.
pub fn bootstrap_ci(k: u64, n: u64, samples: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    check_bootstrap(samples, level)?;
    if n == 0 || k > n {
        return Err(Error::Invalid(format!("need 0 <= k <= n and n >= 1, got k={k} n={n}")));
    }
    let values = resample(k, n, samples, &mut substream(seed, 0));
    Ok(percentile_interval(values, level))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoolingMode {
    /// Sum successes and trials over subjects.
    #[default]
    PooledTrials,
    /// Average subject proportions.
    SubjectMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub eccentricity_deg: f64,
    pub proportion: f64,
    pub k: u64,
    pub n: u64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsychometricCurve {
    pub condition: String,
    pub chance: f64,
    pub mode: PoolingMode,
    pub subjects: usize,
    pub points: Vec<CurvePoint>,
}

impl PsychometricCurve {
    pub fn eccentricities(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.eccentricity_deg).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["condition", "mode", "eccentricity_deg", "proportion", "k", "n", "ci_low", "ci_high"])?;
        let mode = match self.mode {
            PoolingMode::PooledTrials => "pooled-trials",
            PoolingMode::SubjectMean => "subject-mean",
        };
        for p in &self.points {
            w.write_record([
                self.condition.clone(),
                mode.to_string(),
                p.eccentricity_deg.to_string(),
                p.proportion.to_string(),
                p.k.to_string(),
                p.n.to_string(),
                p.ci_low.to_string(),
                p.ci_high.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// One point per eccentricity for `condition`, from one score table per
/// subject.
pub fn build_curve(
    subjects: &[ScoreTable],
    condition: Condition,
    chance: f64,
    mode: PoolingMode,
    boot: BootstrapConfig,
) -> Result<PsychometricCurve> {
    check_bootstrap(boot.samples, boot.level)?;
    let mut eccs: Vec<f64> = subjects
        .iter()
        .flat_map(|t| t.condition(condition))
        .map(|c| c.eccentricity_deg)
        .collect();
    eccs.sort_by(f64::total_cmp);
    eccs.dedup();
    if eccs.is_empty() {
        return Err(Error::Invalid(format!("no data for condition {condition}")));
    }
    let points = eccs
        .iter()
        .enumerate()
        .map(|(i, &ecc)| {
            let cells: Vec<(u64, u64)> = subjects
                .iter()
                .flat_map(|t| t.condition(condition))
                .filter(|c| c.eccentricity_deg == ecc && c.n > 0)
                .map(|c| (c.k, c.n))
                .collect();
            let k: u64 = cells.iter().map(|c| c.0).sum();
            let n: u64 = cells.iter().map(|c| c.1).sum();
            let mut rng = substream(boot.seed, i as u64);
            let (proportion, values) = match mode {
                PoolingMode::PooledTrials => (k as f64 / n as f64, resample(k, n, boot.samples, &mut rng)),
                PoolingMode::SubjectMean => {
                    let m = cells.len() as f64;
                    let mut acc = vec![0.0; boot.samples];
                    for &(ks, ns) in &cells {
                        for (a, v) in acc.iter_mut().zip(resample(ks, ns, boot.samples, &mut rng)) {
                            *a += v / m;
                        }
                    }
                    (cells.iter().map(|&(ks, ns)| ks as f64 / ns as f64).sum::<f64>() / m, acc)
                }
            };
            let (lo, hi) = percentile_interval(values, boot.level);
            CurvePoint {
                eccentricity_deg: ecc,
                proportion,
                k,
                n,
                ci_low: lo.min(proportion),
                ci_high: hi.max(proportion),
            }
        })
        .collect();
    Ok(PsychometricCurve {
        condition: condition.to_string(),
        chance,
        mode,
        subjects: subjects.len(),
        points,
    })
}

/// `p(r) = chance + (ceiling - chance) / (1 + exp(slope * (r - midpoint)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmoidFit {
    pub condition: String,
    pub chance: f64,
    pub ceiling: f64,
    pub midpoint: f64,
    pub slope: f64,
    pub log_likelihood: f64,
    /// Smallest and largest eccentricity in the data.
    pub tested_range: (f64, f64),
    /// The decay does not fit better than a flat line, or its midpoint lies
    /// beyond the tested range.
    pub no_decay: bool,
    /// The fit does not beat chance-level responding.
    pub degenerate: bool,
}

impl SigmoidFit {
    pub fn predict(&self, r: f64) -> f64 {
        logistic_decay(self.chance, self.ceiling, self.midpoint, self.slope, r)
    }
}

fn logistic_decay(chance: f64, ceiling: f64, midpoint: f64, slope: f64, r: f64) -> f64 {
    chance + (ceiling - chance) / (1.0 + (slope * (r - midpoint)).exp())
}

fn binomial_ll(k: u64, n: u64, p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Negative log-likelihood over unconstrained parameters
/// `[ceiling logit, midpoint logit, log slope]`.
struct DecayNll<'a> {
    points: &'a [CurvePoint],
    chance: f64,
    bounds: (f64, f64),
}

impl DecayNll<'_> {
    fn params(&self, x: &[f64]) -> (f64, f64, f64) {
        let ceiling = self.chance + (1.0 - self.chance) * sigmoid(x[0]);
        let midpoint = self.bounds.0 + (self.bounds.1 - self.bounds.0) * sigmoid(x[1]);
        (ceiling, midpoint, x[2].exp())
    }
}

impl CostFunction for DecayNll<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let (c, m, s) = self.params(x);
        Ok(-self
            .points
            .iter()
            .map(|p| binomial_ll(p.k, p.n, logistic_decay(self.chance, c, m, s, p.eccentricity_deg)))
            .sum::<f64>())
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

/// 95% points of the chi-square distribution with 2 and 3 degrees of freedom.
const CHI2_95_DF2: f64 = 5.991;
const CHI2_95_DF3: f64 = 7.815;

/// Maximum-likelihood logistic decay with the floor fixed at chance,
/// multistarted from a grid of midpoints and slopes.
pub fn fit_sigmoid(curve: &PsychometricCurve) -> Result<SigmoidFit> {
    if curve.points.len() < 3 {
        return Err(Error::Invalid(format!(
            "fit needs at least 3 eccentricities, {} has {}",
            curve.condition,
            curve.points.len()
        )));
    }
    if curve.points.iter().any(|p| p.n == 0) {
        return Err(Error::Invalid("fit needs trials at every point".into()));
    }
    let chance = curve.chance;
    let eccs = curve.eccentricities();
    let (lo, hi) = (eccs[0], eccs[eccs.len() - 1]);
    let range = (hi - lo).max(1.0);
    let problem = DecayNll {
        points: &curve.points,
        chance,
        bounds: (lo - range, hi + 3.0 * range),
    };
    let top = curve.points.iter().map(|p| p.proportion).fold(chance, f64::max);
    let c0 = logit(((top - chance) / (1.0 - chance)).clamp(0.02, 0.98));

    let mut best: Option<(Vec<f64>, f64)> = None;
    for frac in [0.1, 0.35, 0.6, 0.9, 1.5] {
        for slope in [0.03, 0.1, 0.3, 1.0] {
            let m = lo + frac * range;
            let m0 = logit((m - problem.bounds.0) / (problem.bounds.1 - problem.bounds.0));
            let x0 = vec![c0, m0, f64::ln(slope / range * 30.0)];
            let simplex = vec![
                x0.clone(),
                vec![x0[0] + 0.5, x0[1], x0[2]],
                vec![x0[0], x0[1] + 0.5, x0[2]],
                vec![x0[0], x0[1], x0[2] + 0.5],
            ];
            let solver = NelderMead::new(simplex)
                .with_sd_tolerance(1e-12)
                .map_err(|e| Error::Invalid(e.to_string()))?;
            let res = Executor::new(
                DecayNll {
                    points: problem.points,
                    chance,
                    bounds: problem.bounds,
                },
                solver,
            )
            .configure(|s| s.max_iters(2000))
            .run()
            .map_err(|e| Error::Invalid(e.to_string()))?;
            let state = res.state();
            let (Some(x), cost) = (state.get_best_param(), state.get_best_cost()) else {
                continue;
            };
            if cost.is_finite() && best.as_ref().is_none_or(|b| cost < b.1) {
                best = Some((x.clone(), cost));
            }
        }
    }
    let (x, nll) = best.ok_or_else(|| Error::Invalid("sigmoid fit failed from every start".into()))?;
    let (ceiling, midpoint, slope) = problem.params(&x);
    let ll = -nll;
    let k: u64 = curve.points.iter().map(|p| p.k).sum();
    let n: u64 = curve.points.iter().map(|p| p.n).sum();
    let flat = k as f64 / n as f64;
    let ll_flat: f64 = curve.points.iter().map(|p| binomial_ll(p.k, p.n, flat)).sum();
    let ll_chance: f64 = curve.points.iter().map(|p| binomial_ll(p.k, p.n, chance)).sum();
    Ok(SigmoidFit {
        condition: curve.condition.clone(),
        chance,
        ceiling,
        midpoint,
        slope,
        log_likelihood: ll,
        tested_range: (lo, hi),
        no_decay: 2.0 * (ll - ll_flat) < CHI2_95_DF2 || midpoint > hi,
        degenerate: 2.0 * (ll - ll_chance) < CHI2_95_DF3,
    })
}

/// Where performance has fallen to `chance + threshold * (ceiling - chance)`;
/// `None` when there is no decay or the crossing lies outside the tested range.
pub fn critical_eccentricity(fit: &SigmoidFit, threshold: f64) -> Option<f64> {
    if fit.no_decay || fit.degenerate || !(threshold > 0.0 && threshold < 1.0) {
        return None;
    }
    let r = fit.midpoint + (1.0 / threshold - 1.0).ln() / fit.slope;
    (r >= fit.tested_range.0 && r <= fit.tested_range.1).then_some(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferencePoint {
    pub eccentricity_deg: f64,
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub a: String,
    pub b: String,
    pub points: Vec<DifferencePoint>,
    pub max_abs_difference: f64,
    /// Per-point interval level after splitting the error rate over points.
    pub point_level: f64,
    /// Every difference interval covers zero.
    pub equal: bool,
}

/// Pointwise differences `a - b` with bootstrap intervals. The interval
/// level is Bonferroni-adjusted over points so the overall verdict has the
/// requested error rate.
pub fn compare_curves(a: &PsychometricCurve, b: &PsychometricCurve, boot: BootstrapConfig) -> Result<CurveComparison> {
    check_bootstrap(boot.samples, boot.level)?;
    if a.eccentricities() != b.eccentricities() {
        return Err(Error::GridMismatch(a.eccentricities(), b.eccentricities()));
    }
    if a.points.iter().chain(&b.points).any(|p| p.n == 0) {
        return Err(Error::Invalid("comparison needs trials at every point".into()));
    }
    let point_level = 1.0 - (1.0 - boot.level) / a.points.len() as f64;
    let points: Vec<DifferencePoint> = a
        .points
        .iter()
        .zip(&b.points)
        .enumerate()
        .map(|(i, (pa, pb))| {
            let mut rng = substream(boot.seed, i as u64);
            let ra = resample(pa.k, pa.n, boot.samples, &mut rng);
            let rb = resample(pb.k, pb.n, boot.samples, &mut rng);
            let diffs = ra.iter().zip(&rb).map(|(x, y)| x - y).collect();
            let (lo, hi) = percentile_interval(diffs, point_level);
            DifferencePoint {
                eccentricity_deg: pa.eccentricity_deg,
                difference: pa.proportion - pb.proportion,
                ci_low: lo,
                ci_high: hi,
            }
        })
        .collect();
    Ok(CurveComparison {
        a: a.condition.clone(),
        b: b.condition.clone(),
        max_abs_difference: points.iter().map(|p| p.difference.abs()).fold(0.0, f64::max),
        equal: points.iter().all(|p| p.ci_low <= 0.0 && p.ci_high >= 0.0),
        point_level,
        points,
    })
}
