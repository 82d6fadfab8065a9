//! Experiment definitions, trial schedules, simulated observers and the
//! psychometric analysis for peripheral discrimination experiments.

pub mod analysis;
pub mod config;
pub mod error;
pub mod geometry;
pub mod observer;
pub mod records;
pub mod trials;

pub use analysis::{
    bootstrap_ci, build_curve, compare_curves, critical_eccentricity, fit_sigmoid, BootstrapConfig, CurveComparison,
    PoolingMode, PsychometricCurve, SigmoidFit,
};
pub use config::{Condition, ExperimentConfig, Task, Timings, Variant};
pub use error::{Error, Result};
pub use geometry::DisplayGeometry;
pub use observer::{simulate_session, BlurObserver, Observer, RandomObserver, SetSource, StimulusSource};
pub use records::{score_session, ScoreTable, Telemetry, TrialRecord};
pub use trials::{generate_trials, StimulusRef, TrialSpec};
