mod common;

use periph_core::stimulus::Family;
use periph_psych::config::{Condition, ExperimentConfig, Task, Variant};
use periph_psych::{
    build_curve, compare_curves, generate_trials, score_session, simulate_session, BlurObserver, BootstrapConfig,
    PoolingMode, SetSource,
};

fn cfg(task: Task, family: Family, variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        conditions: vec![Condition { family, variant }],
        eccentricities: vec![0.0, 10.0, 20.0, 30.0, 40.0],
        ..ExperimentConfig::new(task)
    }
}

#[test]
fn blur_schedule() {
    let o = BlurObserver::new(0.0, 0);
    let levels: Vec<usize> = [0.0, 4.9, 5.0, 14.0, 26.0, 31.0, 80.0].iter().map(|&e| o.level(e)).collect();
    assert_eq!(levels, vec![0, 0, 1, 1, 3, 3, 4]);
}

#[test]
fn noiseless_observer_separates_standard_stimuli_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let set = common::fixture_set(dir.path(), 80);
    let source = SetSource::new(&set);
    for task in [Task::Oddity, Task::Match2afc] {
        let c = cfg(task, Family::Standard, Variant::OriginalVsSynth);
        let trials = generate_trials(&c, &set).unwrap();
        let recs = simulate_session(&trials, &BlurObserver::new(0.0, 1), &source, c.timings(), "s").unwrap();
        let table = score_session(&recs, &trials, false).unwrap();
        assert!(table.cells.iter().all(|cell| cell.proportion == 1.0), "{task}: {:?}", table.cells);
    }
}

#[test]
fn infinite_noise_is_chance() {
    let dir = tempfile::tempdir().unwrap();
    let set = common::fixture_set(dir.path(), 80);
    let source = SetSource::new(&set);
    for task in [Task::Oddity, Task::Match2afc] {
        let c = cfg(task, Family::Standard, Variant::OriginalVsSynth);
        let trials = generate_trials(&c, &set).unwrap();
        let obs = BlurObserver::new(f64::INFINITY, 5);
        let recs = simulate_session(&trials, &obs, &source, c.timings(), "s").unwrap();
        let table = score_session(&recs, &trials, false).unwrap();
        let n = c.trials_per_cell as u64;
        let (lo, hi) = common::band99(n, task.chance());
        for cell in &table.cells {
            assert!(cell.proportion >= lo && cell.proportion <= hi, "{task}: {cell:?}");
        }
        // Same seed, same answers.
        assert_eq!(recs, simulate_session(&trials, &obs, &source, c.timings(), "s").unwrap());
    }
}

#[test]
fn texform_accuracy_falls_with_eccentricity() {
    let dir = tempfile::tempdir().unwrap();
    let set = common::fixture_set(dir.path(), 200);
    let source = SetSource::new(&set);
    let c = ExperimentConfig {
        trials_per_cell: 200,
        ..cfg(Task::Match2afc, Family::Texform, Variant::OriginalVsSynth)
    };
    let trials = generate_trials(&c, &set).unwrap();
    let recs = simulate_session(&trials, &BlurObserver::new(0.03, 2), &source, c.timings(), "s").unwrap();
    let table = score_session(&recs, &trials, false).unwrap();
    let p: Vec<f64> = table.cells.iter().map(|c| c.proportion).collect();
    assert!(p[0] > 0.9, "{p:?}");
    // Nonincreasing up to one standard error of a difference at n = 200.
    let se = (2.0 * 0.25 / 200.0f64).sqrt();
    assert!(p.windows(2).all(|w| w[1] <= w[0] + se), "{p:?}");
    // Most of the way back to chance at the largest eccentricity.
    assert!(p[4] - 0.5 < 0.25 * (p[0] - 0.5), "{p:?}");
}

#[test]
fn independent_runs_of_one_condition_agree() {
    let dir = tempfile::tempdir().unwrap();
    let set = common::fixture_set(dir.path(), 80);
    let source = SetSource::new(&set);
    let c = cfg(Task::Match2afc, Family::Texform, Variant::OriginalVsSynth);
    let trials = generate_trials(&c, &set).unwrap();
    let boot = BootstrapConfig {
        samples: 2000,
        ..Default::default()
    };
    let curve = |seed| {
        let recs = simulate_session(&trials, &BlurObserver::new(0.03, seed), &source, c.timings(), "s").unwrap();
        let table = score_session(&recs, &trials, false).unwrap();
        build_curve(&[table], c.conditions[0], 0.5, PoolingMode::PooledTrials, boot).unwrap()
    };
    let equal = (0..100u64)
        .filter(|r| compare_curves(&curve(1000 + 2 * r), &curve(1001 + 2 * r), boot).unwrap().equal)
        .count();
    assert!(equal >= 90, "{equal}/100");
}
