//! End-to-end toy pipeline: shifted latents → toy images → classifier →
//! Δ-accuracy and 1-NN distance per shift level → robustness slopes.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::intensity::intensity_analytic;
use crate::latent::LabelRule;
use crate::manifest::RunManifest;
use crate::nn::{one_nn_distance, Metric};
use crate::robustness::{fit_robustness_slope, pearson, EvalPoint, SlopeFit, Weighting, XAxis};
use crate::shift::{
    derive_targets, sample_shifted_batch, Family, ShiftSpec, RADIUS_GRID, THETA_GRID,
    TRUNCATION_TRAIN_RADIUS,
};
use crate::toy::{decode_batch, train_classifier, ToyDecoderConfig, TrainParams};

/// Stream ids inside one experiment's latent seed.
pub const TRAIN_STREAM: u64 = 0;
pub const TEST_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Family of the evaluation grid.
    pub family: Family,
    /// Family of the training distribution; defaults to `family`.
    /// `prior` trains on the full support.
    pub train_family: Option<Family>,
    /// θ or R of the training distribution; 0 for extend / overlap and
    /// 0.8 for truncation when absent.
    pub train_param: Option<f64>,
    pub grid: Option<Vec<f64>>,
    pub n_train: usize,
    pub n_test: usize,
    pub latent_seed: u64,
    pub target_seed: u64,
    pub train: TrainParams,
    pub metric: Metric,
    pub weighting: Weighting,
    pub decoder: ToyDecoderConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: Family::Overlap,
            train_family: None,
            train_param: None,
            grid: None,
            n_train: 5000,
            n_test: 1000,
            latent_seed: 0,
            target_seed: 0,
            train: TrainParams::default(),
            metric: Metric::Euclidean,
            weighting: Weighting::Unweighted,
            decoder: ToyDecoderConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn grid_values(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| match self.family {
            Family::Truncation => RADIUS_GRID.to_vec(),
            _ => THETA_GRID.to_vec(),
        })
    }

    pub fn train_family(&self) -> Family {
        self.train_family.unwrap_or(self.family)
    }

    pub fn train_param(&self) -> f64 {
        self.train_param.unwrap_or(match self.train_family() {
            Family::Truncation => TRUNCATION_TRAIN_RADIUS,
            _ => 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        if self.family == Family::Prior {
            return Err(invalid("the evaluation grid needs a shift family, not prior"));
        }
        if self.train_family() != Family::Prior && self.train_family() != self.family {
            return Err(invalid("training family must be prior or match the grid family"));
        }
        if self.n_train < 2 || self.n_test < 1 {
            return Err(invalid("need n_train >= 2 and n_test >= 1"));
        }
        if self.grid_values().len() < 2 {
            return Err(invalid("the grid needs at least two shift levels"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub train_spec: ShiftSpec,
    pub train_accuracy: f64,
    /// Accuracy on fresh test samples from the training distribution.
    pub baseline_accuracy: f64,
    pub points: Vec<EvalPoint>,
    /// Analytic intensity of each grid level relative to the training
    /// support, when the pair is comparable.
    pub intensities: Vec<Option<f64>>,
    pub fit_shift_param: SlopeFit,
    pub fit_nn_distance: SlopeFit,
    /// Pearson correlation of Δ-accuracy with 1-NN distance.
    pub pearson_delta_nn: Option<f64>,
    pub manifest: RunManifest,
}

impl ExperimentReport {
    pub fn delta_accuracies(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| p.accuracy - self.baseline_accuracy)
            .collect()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, &mut |_, _| Ok(()))
}

/// Runs the experiment, handing each generated image set to `sink` as
/// `("train" | "baseline" | "grid_<i>", images)`.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    sink: &mut dyn FnMut(&str, &Dataset) -> Result<()>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dim = cfg.decoder.latent_dim;
    let classes = cfg.decoder.classes.len();
    let labels = LabelRule::RoundRobin {
        classes: classes as u16,
    };
    let targets = derive_targets(cfg.target_seed, dim)?;
    let train_spec = ShiftSpec::from_family(cfg.train_family(), cfg.train_param(), dim, Some(&targets))?;

    let latents = sample_shifted_batch(&train_spec, cfg.n_train, cfg.latent_seed, TRAIN_STREAM, labels)?;
    let train_images = decode_batch(&latents.batch, &cfg.decoder)?;
    sink("train", &train_images)?;
    let model = train_classifier(&train_images, classes, &cfg.train)?;
    let train_accuracy = model.accuracy(&train_images)?;

    let test = |spec: &ShiftSpec| -> Result<Dataset> {
        let b = sample_shifted_batch(spec, cfg.n_test, cfg.latent_seed, TEST_STREAM, labels)?;
        decode_batch(&b.batch, &cfg.decoder)
    };
    let baseline_images = test(&train_spec)?;
    sink("baseline", &baseline_images)?;
    let baseline_accuracy = model.accuracy(&baseline_images)?;

    let train_images = train_images.with_norms();
    let grid = cfg.grid_values();
    let mut points = Vec::with_capacity(grid.len());
    let mut intensities = Vec::with_capacity(grid.len());
    for (i, &param) in grid.iter().enumerate() {
        let spec = ShiftSpec::from_family(cfg.family, param, dim, Some(&targets))?;
        let images = test(&spec)?;
        sink(&format!("grid_{i}"), &images)?;
        points.push(EvalPoint {
            shift_param: param,
            nn_distance: one_nn_distance(&train_images, &images, cfg.metric)?.mean_distance,
            accuracy: model.accuracy(&images)?,
            n_test: cfg.n_test,
        });
        intensities.push(intensity_analytic(&train_spec, &spec).ok());
    }

    let fit = |axis| fit_robustness_slope(&points, axis, Some(baseline_accuracy), cfg.weighting);
    let fit_shift_param = fit(XAxis::ShiftParam)?;
    let fit_nn_distance = fit(XAxis::NnDistance)?;
    let deltas: Vec<f64> = points.iter().map(|p| p.accuracy - baseline_accuracy).collect();
    let distances: Vec<f64> = points.iter().map(|p| p.nn_distance).collect();

    let mut manifest = RunManifest::new(
        "toy-run",
        serde_json::to_value(cfg).map_err(|e| crate::Error::Config(e.to_string()))?,
    )
    .seed("latent_seed", cfg.latent_seed)
    .seed("target_seed", cfg.target_seed)
    .seed("classifier_seed", cfg.train.seed)
    .seed("train_stream", TRAIN_STREAM)
    .seed("test_stream", TEST_STREAM);
    manifest.grid = grid;
    manifest.metric = Some(cfg.metric.to_string());

    Ok(ExperimentReport {
        config: cfg.clone(),
        train_spec,
        train_accuracy,
        baseline_accuracy,
        pearson_delta_nn: pearson(&distances, &deltas).ok(),
        points,
        intensities,
        fit_shift_param,
        fit_nn_distance,
        manifest,
    })
}
