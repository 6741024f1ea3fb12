//! Latent-space primitives: seeded Gaussian prior draws, angles and slerp.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::rng::{fill_normal, Domain, StreamKey};

pub type Label = u16;

/// Tolerance used when a code is required to lie on the unit sphere.
pub const UNIT_TOL: f64 = 1e-9;

/// Below this angle slerp falls back to normalized linear interpolation.
pub const SLERP_SMALL_ANGLE: f64 = 1e-7;

/// Pairs closer than this to antipodal have no well-defined great circle.
pub const ANTIPODAL_MARGIN: f64 = 1e-6;

/// One point of the latent space with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub values: Vec<f64>,
    pub label: Label,
}

impl LatentCode {
    pub fn new(values: Vec<f64>, label: Label) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid(format!(
                "latent dimension must be at least 2, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        Ok(Self { values, label })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_unit(&self) -> bool {
        (norm(&self.values) - 1.0).abs() <= UNIT_TOL
    }
}

/// How class labels are attached to prior draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelRule {
    /// Code `i` gets label `i mod classes`.
    RoundRobin { classes: u16 },
    Fixed(Label),
}

impl LabelRule {
    pub fn label(&self, index: usize) -> Label {
        match *self {
            LabelRule::RoundRobin { classes } => (index % classes.max(1) as usize) as Label,
            LabelRule::Fixed(l) => l,
        }
    }
}

/// `n` latent codes of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub dim: usize,
    pub values: Vec<f64>,
    pub labels: Vec<Label>,
    pub seed: u64,
    pub stream_id: u64,
}

impl LatentBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn code(&self, i: usize) -> LatentCode {
        LatentCode {
            values: self.row(i).to_vec(),
            label: self.labels[i],
        }
    }
}

/// Draws code `index` of the `(seed, stream_id)` prior stream into `out`.
pub fn prior_draw(seed: u64, stream_id: u64, index: u64, out: &mut [f64]) {
    let mut rng = StreamKey::new(seed, stream_id, Domain::Prior).item(index);
    fill_normal(&mut rng, out);
}

/// `n` i.i.d. draws from N(0, I_d). Code `i` depends only on
/// `(seed, stream_id, i)`.
pub fn sample_prior(
    dim: usize,
    n: usize,
    seed: u64,
    stream_id: u64,
    labels: LabelRule,
) -> Result<LatentBatch> {
    if dim < 2 {
        return Err(invalid(format!("dimension must be at least 2, got {dim}")));
    }
    if n == 0 {
        return Err(invalid("count must be at least 1"));
    }
    if let LabelRule::RoundRobin { classes: 0 } = labels {
        return Err(invalid("round-robin labels need at least one class"));
    }
    let mut values = vec![0.0; dim * n];
    values
        .par_chunks_mut(dim)
        .enumerate()
        .for_each(|(i, row)| prior_draw(seed, stream_id, i as u64, row));
    Ok(LatentBatch {
        dim,
        values,
        labels: (0..n).map(|i| labels.label(i)).collect(),
        seed,
        stream_id,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit vector in the direction of `a`.
pub fn normalize(a: &[f64]) -> Result<Vec<f64>> {
    let n = norm(a);
    if !n.is_finite() {
        return Err(Error::NonFinite("vector norm".into()));
    }
    if n == 0.0 {
        return Err(invalid("cannot normalize the zero vector"));
    }
    Ok(a.iter().map(|v| v / n).collect())
}

/// Angle in `[0, π]` between two nonzero vectors.
pub fn angle_between(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "angle between dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(invalid("angle with the zero vector is undefined"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0).acos())
}

/// Angle between unit vectors as `2·atan2(‖a − b‖, ‖a + b‖)`. Slerp weights
/// divide by `sin Ω`, so near π the `acos` form loses the unit-norm
/// guarantee; this form stays accurate at both ends.
fn unit_angle(a: &[f64], b: &[f64]) -> f64 {
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
        sum += (x + y) * (x + y);
    }
    2.0 * diff.sqrt().atan2(sum.sqrt())
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(invalid(format!("{what} must be unit-norm, got norm {n}")));
    }
    Ok(())
}

/// Spherical linear interpolation between unit vectors `a` and `b`.
///
/// The result sits at angle `tau * Ω` from `a` along the great circle
/// through `a` and `b`, where `Ω` is the angle between them. Nearly
/// antipodal inputs are rejected because the great circle is not unique.
pub fn slerp(a: &[f64], b: &[f64], tau: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "slerp between dimension {} and {}",
            a.len(),
            b.len()
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid(format!("slerp parameter {tau} outside [0, 1]")));
    }
    check_unit(a, "slerp start")?;
    check_unit(b, "slerp end")?;

    let omega = unit_angle(a, b);
    if omega > std::f64::consts::PI - ANTIPODAL_MARGIN {
        return Err(Error::DegenerateGeometry(format!(
            "slerp endpoints are antipodal (angle {omega})"
        )));
    }
    if omega < SLERP_SMALL_ANGLE {
        let lerp: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(x, y)| (1.0 - tau) * x + tau * y)
            .collect();
        return normalize(&lerp);
    }
    let s = omega.sin();
    let wa = ((1.0 - tau) * omega).sin() / s;
    let wb = (tau * omega).sin() / s;
    Ok(a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect())
}
