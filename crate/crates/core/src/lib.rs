//! Controlled distribution shifts in a generator's latent space.
//!
//! The crate builds training and shifted latent distributions (extend,
//! overlap and truncation families), measures how far apart their supports
//! are, computes exact 1-NN distances between sample sets, and fits
//! robustness slopes of classifier accuracy against shift strength. A small
//! injective toy decoder and a logistic-regression classifier let the whole
//! pipeline run without an external generative model.

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod format;
pub mod intensity;
pub mod latent;
pub mod manifest;
pub mod nn;
pub mod rng;
pub mod robustness;
pub mod shift;
pub mod special;
pub mod toy;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use experiment::{run_experiment, run_experiment_with, ExperimentConfig, ExperimentReport};
pub use intensity::{cap_fraction, intensity_analytic, intensity_mc, IntensityReport};
pub use latent::{angle_between, sample_prior, slerp, LabelRule, LatentBatch, LatentCode};
pub use nn::{one_nn_distance, one_nn_distance_naive, Metric, NnResult};
pub use robustness::{delta_accuracy, fit_robustness_slope, EvalPoint, SlopeFit, XAxis};
pub use shift::{
    apply_shift, derive_targets, in_support, sample_shifted_batch, Family, ShiftSpec, ShiftedBatch,
    TargetPair,
};
