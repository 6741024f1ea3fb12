//! Desk-scale stand-ins for the generator and the classifier: an injective
//! analytic renderer from 6 latent factors to 16×16×3 images, and
//! multinomial logistic regression trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Result};
use crate::latent::{Label, LatentBatch};
use crate::rng::{fill_normal, Domain, StreamKey};

/// Logistic squash, `0 ↦ 0.5`.
pub fn squash(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Shape renderers available to the decoder, indexed by class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Blob,
    Ring,
    /// Two blobs side by side.
    Pair,
    Cross,
}

impl Archetype {
    /// Unnormalized intensity at offset `(dx, dy)` from the center.
    fn falloff(self, dx: f64, dy: f64, scale: f64) -> f64 {
        match self {
            Archetype::Blob => {
                let sigma = 0.5 * scale;
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            }
            Archetype::Ring => {
                let width = 0.25 * scale;
                let rho = (dx * dx + dy * dy).sqrt();
                (-(rho - scale).powi(2) / (2.0 * width * width)).exp()
            }
            Archetype::Pair => {
                let sigma = 0.3 * scale;
                let g = |x: f64| (-(x * x + dy * dy) / (2.0 * sigma * sigma)).exp();
                g(dx - scale).max(g(dx + scale))
            }
            Archetype::Cross => {
                let width = 0.2 * scale;
                let arm = |along: f64, across: f64| {
                    (-(across * across) / (2.0 * width * width)).exp()
                        * (-(along * along) / (2.0 * scale * scale)).exp()
                };
                arm(dx, dy).max(arm(dy, dx))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDecoderConfig {
    pub latent_dim: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: Vec<Archetype>,
}

impl Default for ToyDecoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 6,
            height: 16,
            width: 16,
            channels: 3,
            classes: vec![Archetype::Blob, Archetype::Ring],
        }
    }
}

impl ToyDecoderConfig {
    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.height, self.width, self.channels]
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim != 6 || self.channels != 3 {
            return Err(invalid("the toy decoder renders 6 latent factors into 3 channels"));
        }
        if self.height == 0 || self.width == 0 || self.classes.is_empty() {
            return Err(invalid("decoder needs a positive image size and at least one class"));
        }
        Ok(())
    }
}

/// Renders class `label` from latent factors `z` into `out` (HWC).
///
/// Factors map to center x, center y, red, green, blue and scale through the
/// logistic squash, so distinct latents give distinct images.
pub fn decode_into(z: &[f64], label: Label, cfg: &ToyDecoderConfig, out: &mut [f32]) -> Result<()> {
    if z.len() != cfg.latent_dim {
        return Err(invalid(format!(
            "toy decoder expects {} latent factors, got {}",
            cfg.latent_dim,
            z.len()
        )));
    }
    let shape = *cfg
        .classes
        .get(label as usize)
        .ok_or_else(|| invalid(format!("class {label} out of range for {} classes", cfg.classes.len())))?;
    if out.len() != cfg.pixels() {
        return Err(invalid("output buffer has the wrong size"));
    }
    let (cx, cy) = (squash(z[0]), squash(z[1]));
    let color = [squash(z[2]), squash(z[3]), squash(z[4])];
    let scale = 0.1 + 0.2 * squash(z[5]);
    for r in 0..cfg.height {
        let py = (r as f64 + 0.5) / cfg.height as f64;
        for c in 0..cfg.width {
            let px = (c as f64 + 0.5) / cfg.width as f64;
            let a = shape.falloff(px - cx, py - cy, scale);
            let base = (r * cfg.width + c) * 3;
            for k in 0..3 {
                out[base + k] = (color[k] * a) as f32;
            }
        }
    }
    Ok(())
}

pub fn toy_decode(z: &[f64], label: Label, cfg: &ToyDecoderConfig) -> Result<Vec<f32>> {
    let mut out = vec![0.0; cfg.pixels()];
    decode_into(z, label, cfg, &mut out)?;
    Ok(out)
}

/// Decodes a whole batch into an image dataset.
pub fn decode_batch(batch: &LatentBatch, cfg: &ToyDecoderConfig) -> Result<Dataset> {
    cfg.validate()?;
    let p = cfg.pixels();
    let mut data = vec![0.0f32; p * batch.len()];
    for ((z, label), out) in batch.rows().zip(&batch.labels).zip(data.chunks_exact_mut(p)) {
        decode_into(z, *label, cfg, out)?;
    }
    Dataset::new(cfg.shape(), data, batch.labels.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    /// Step size; `None` picks `1 / L` from a power-iteration estimate of the
    /// loss curvature, which makes every step a descent step.
    pub learning_rate: Option<f64>,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Center and scale each pixel with training-set statistics before the
    /// linear layer. The model class is unchanged; gradient descent is
    /// better conditioned.
    pub standardize: bool,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            learning_rate: None,
            epochs: 300,
            l2: 1e-4,
            seed: 0,
            standardize: true,
        }
    }
}

/// Linear softmax classifier over flattened pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClassifier {
    pub classes: usize,
    pub features: usize,
    /// `classes × features`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Per-feature `(mean, scale)` applied before the linear layer.
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub params: TrainParams,
    pub learning_rate: f64,
    /// Loss before each epoch's update, then the final loss.
    pub loss_history: Vec<f64>,
}

fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ac = a.chunks_exact(4);
    let mut bc = b.chunks_exact(4);
    for (x, y) in (&mut ac).zip(&mut bc) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ac.remainder().iter().zip(bc.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Design matrix in `f64` plus one-hot targets.
pub struct Problem {
    pub x: Vec<f64>,
    pub labels: Vec<usize>,
    pub n: usize,
    pub features: usize,
    pub classes: usize,
}

impl Problem {
    pub fn new(data: &Dataset, classes: usize) -> Result<Self> {
        let d = data.row_len();
        Self::with_transform(data, classes, &vec![0.0; d], &vec![1.0; d])
    }

    /// Builds the problem on `(x − mean) / scale`.
    pub fn with_transform(data: &Dataset, classes: usize, mean: &[f64], scale: &[f64]) -> Result<Self> {
        let labels: Vec<usize> = data.labels().iter().map(|l| *l as usize).collect();
        if let Some(l) = labels.iter().find(|l| **l >= classes) {
            return Err(invalid(format!("label {l} out of range for {classes} classes")));
        }
        let x = data
            .rows()
            .flat_map(|r| {
                r.iter()
                    .zip(mean.iter().zip(scale))
                    .map(|(v, (m, s))| (*v as f64 - m) / s)
            })
            .collect();
        Ok(Self {
            x,
            labels,
            n: data.len(),
            features: data.row_len(),
            classes,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    /// Mean cross-entropy plus `l2/2 ‖W‖²`, and its gradient with respect to
    /// `(weights, bias)`.
    pub fn loss_and_grad(&self, weights: &[f64], bias: &[f64], l2: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let (c, d) = (self.classes, self.features);
        let mut gw = vec![0.0; c * d];
        let mut gb = vec![0.0; c];
        let mut loss = 0.0;
        let mut logits = vec![0.0; c];
        for i in 0..self.n {
            let x = self.row(i);
            for k in 0..c {
                logits[k] = dot4(&weights[k * d..(k + 1) * d], x) + bias[k];
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|z| (z - m).exp()).sum();
            let lse = m + sum.ln();
            loss += lse - logits[self.labels[i]];
            for k in 0..c {
                let p = (logits[k] - lse).exp();
                let r = p - (k == self.labels[i]) as u8 as f64;
                gb[k] += r;
                for (g, xv) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *g += r * xv;
                }
            }
        }
        let inv = 1.0 / self.n as f64;
        loss *= inv;
        loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in gw.iter_mut().zip(weights) {
            *g = *g * inv + l2 * w;
        }
        gb.iter_mut().for_each(|g| *g *= inv);
        (loss, gw, gb)
    }

    /// Power-iteration estimate of the top eigenvalue of `X̃ᵀX̃ / n`, where
    /// `X̃` is the design matrix with a bias column.
    fn gram_top_eigenvalue(&self, iters: usize) -> f64 {
        let d = self.features + 1;
        let mut v = vec![1.0 / (d as f64).sqrt(); d];
        let mut lambda = 0.0;
        for _ in 0..iters {
            let mut w = vec![0.0; d];
            for i in 0..self.n {
                let x = self.row(i);
                let s = dot4(&v[..d - 1], x) + v[d - 1];
                for (wj, xj) in w[..d - 1].iter_mut().zip(x) {
                    *wj += s * xj;
                }
                w[d - 1] += s;
            }
            let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt() / self.n as f64;
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            let scale = 1.0 / (norm * self.n as f64);
            v = w.iter().map(|a| a * scale).collect();
        }
        lambda
    }
}

/// Per-feature mean and standard deviation; near-constant features keep
/// scale 1.
fn feature_stats(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let d = data.row_len();
    let n = data.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for r in data.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in data.rows() {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (*v as f64 - m).powi(2);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-6 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Trains multinomial logistic regression by full-batch gradient descent.
pub fn train_classifier(train: &Dataset, classes: usize, params: &TrainParams) -> Result<ToyClassifier> {
    let (feature_mean, feature_scale) = if params.standardize {
        feature_stats(train)
    } else {
        (vec![0.0; train.row_len()], vec![1.0; train.row_len()])
    };
    let problem = Problem::with_transform(train, classes, &feature_mean, &feature_scale)?;
    let mut present = vec![false; classes];
    for l in &problem.labels {
        present[*l] = true;
    }
    if present.iter().filter(|p| **p).count() < 2 {
        return Err(invalid("training data must contain at least two classes"));
    }
    let (c, d) = (classes, problem.features);
    let mut weights = vec![0.0; c * d];
    fill_normal(&mut StreamKey::new(params.seed, 0, Domain::ClassifierInit).item(0), &mut weights);
    weights.iter_mut().for_each(|w| *w *= 1e-3);
    let mut bias = vec![0.0; c];

    let learning_rate = match params.learning_rate {
        Some(lr) if lr > 0.0 && lr.is_finite() => lr,
        Some(lr) => return Err(invalid(format!("learning rate must be positive, got {lr}"))),
        None => {
            // softmax cross-entropy Hessian is bounded by ½ X̃ᵀX̃/n
            let curvature = 0.5 * problem.gram_top_eigenvalue(30) * 1.1 + params.l2;
            1.0 / curvature
        }
    };

    let mut loss_history = Vec::with_capacity(params.epochs + 1);
    for _ in 0..params.epochs {
        let (loss, gw, gb) = problem.loss_and_grad(&weights, &bias, params.l2);
        loss_history.push(loss);
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= learning_rate * g;
        }
        for (b, g) in bias.iter_mut().zip(&gb) {
            *b -= learning_rate * g;
        }
    }
    loss_history.push(problem.loss_and_grad(&weights, &bias, params.l2).0);
    Ok(ToyClassifier {
        classes,
        features: d,
        weights,
        bias,
        feature_mean,
        feature_scale,
        params: params.clone(),
        learning_rate,
        loss_history,
    })
}

impl ToyClassifier {
    pub fn predict(&self, x: &[f32]) -> Label {
        let x: Vec<f64> = x
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(v, (m, s))| (*v as f64 - m) / s)
            .collect();
        let d = self.features;
        (0..self.classes)
            .map(|k| dot4(&self.weights[k * d..(k + 1) * d], &x) + self.bias[k])
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k as Label)
            .unwrap_or(0)
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.row_len() != self.features {
            return Err(crate::error::Error::ShapeMismatch(format!(
                "classifier expects {} features, data has {}",
                self.features,
                data.row_len()
            )));
        }
        if data.is_empty() {
            return Err(invalid("accuracy of an empty dataset"));
        }
        let correct = data
            .rows()
            .zip(data.labels())
            .filter(|(x, y)| self.predict(x) == **y)
            .count();
        Ok(correct as f64 / data.len() as f64)
    }
}
