//! Core numerics for foveated texture-metamer experiments: image pyramids,
//! texture summary statistics with analytic gradients, log-polar pooling
//! geometry, feature inversion, texform synthesis and image-quality tooling.

pub mod buffer;
pub mod error;
pub mod fft;
pub mod gaussian;
pub mod iqa;
pub mod pooling;
pub mod steerable;
pub mod stimulus;
pub mod synthesis;
pub mod texture;
pub mod textures;

pub use buffer::{BitDepth, ImageBuffer, ResizePolicy};
pub use error::{Error, Result};
pub use gaussian::GaussianPyramid;
pub use iqa::{mse, perceptual_distance, PerceptualMetric};
pub use pooling::{build_regions, eccentricity_of, PoolingConfig, PoolingRegion, RegionSet};
pub use steerable::{SteerableConfig, SteerablePyramid};
pub use texture::{compute_stats, stat_distance, stat_gradient, StatConfig, StatVector, TextureModel, Window};
pub use synthesis::{detect_duplicates, invert_features, synthesize_texform, FeatureExtractor, SynthesisConfig, SynthesisResult};
