//! Shift intensity: the fraction of the shifted support that lies outside
//! the training support, computed from cap / lune / ball geometry and
//! estimated independently by Monte Carlo.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::latent::{dot, slerp};
use crate::rng::{fill_normal, Domain, StreamKey};
use crate::shift::{ShiftKind, ShiftSpec};
use crate::special::{ball99, beta_reg};

/// Rejection samplers below this acceptance rate are refused.
pub const ACCEPTANCE_FLOOR: f64 = 1e-4;

/// Samples drawn per Monte Carlo shard. Shards are fixed so the estimate
/// does not depend on the thread count.
pub const MC_SHARD: usize = 8192;

const PILOT_PROPOSALS: usize = 200_000;

/// Normalized surface measure of the cap of angular radius `alpha` on the
/// unit sphere in R^d.
pub fn cap_fraction(alpha: f64, dim: usize) -> Result<f64> {
    if dim < 2 {
        return Err(invalid(format!("cap measure needs dimension at least 2, got {dim}")));
    }
    if !(0.0..=PI).contains(&alpha) {
        return Err(invalid(format!("cap angle {alpha} outside [0, π]")));
    }
    if alpha > FRAC_PI_2 {
        return Ok(1.0 - cap_fraction(PI - alpha, dim)?);
    }
    let s = alpha.sin();
    Ok(0.5 * beta_reg((dim as f64 - 1.0) / 2.0, 0.5, (s * s).min(1.0))?)
}

/// Support geometry of one spec, as needed by the intensity calculus.
#[derive(Debug, Clone)]
enum Support {
    /// Spherical cap `{x : x·axis >= cos(angle)}` on the unit sphere.
    Cap { axis: Vec<f64>, angle: f64 },
    /// Centered ball.
    Ball { radius: f64 },
}

fn support_of(spec: &ShiftSpec) -> Result<Support> {
    spec.validate()?;
    Ok(match &spec.kind {
        ShiftKind::Prior => Support::Ball {
            radius: ball99(spec.dim)?,
        },
        ShiftKind::Truncation { radius } => Support::Ball {
            radius: radius * ball99(spec.dim)?,
        },
        ShiftKind::Extend { theta, targets, tau } => Support::Cap {
            axis: targets.t1.clone(),
            angle: tau.cap_angle(*theta),
        },
        ShiftKind::Overlap { theta, targets } => Support::Cap {
            axis: slerp(&targets.t1, &targets.t2, 2.0 * theta / PI)?,
            angle: FRAC_PI_2,
        },
    })
}

fn check_comparable(train: &ShiftSpec, shift: &ShiftSpec) -> Result<()> {
    if train.family() != shift.family() {
        return Err(invalid(format!(
            "cannot compare {} training support with {} shifted support",
            train.family(),
            shift.family()
        )));
    }
    if train.dim != shift.dim {
        return Err(invalid(format!(
            "dimension mismatch: {} vs {}",
            train.dim, shift.dim
        )));
    }
    match (&train.kind, &shift.kind) {
        (
            ShiftKind::Extend { targets: a, tau: ta, .. },
            ShiftKind::Extend { targets: b, tau: tb, .. },
        ) => {
            if a != b || ta != tb {
                return Err(invalid("extend specs use different targets or τ conventions"));
            }
        }
        (ShiftKind::Overlap { targets: a, .. }, ShiftKind::Overlap { targets: b, .. }) => {
            if a != b {
                return Err(invalid("overlap specs use different targets"));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Closed-form intensity `1 − |S_train ∩ S_shift| / |S_shift|`.
///
/// Extend uses nested caps around `t1`, overlap the lune between two
/// hemispheres, truncation nested balls.
pub fn intensity_analytic(train: &ShiftSpec, shift: &ShiftSpec) -> Result<f64> {
    check_comparable(train, shift)?;
    let value = match (&train.kind, &shift.kind) {
        (ShiftKind::Prior, ShiftKind::Prior) => 0.0,
        (ShiftKind::Extend { theta: a, tau, .. }, ShiftKind::Extend { theta: b, .. }) => {
            let train_angle = tau.cap_angle(*a);
            let shift_angle = tau.cap_angle(*b);
            let shift_measure = cap_fraction(shift_angle, shift.dim)?;
            1.0 - cap_fraction(train_angle.min(shift_angle), shift.dim)? / shift_measure
        }
        (
            ShiftKind::Overlap { theta: a, targets },
            ShiftKind::Overlap { theta: b, .. },
        ) => {
            let gamma = (b - a).abs() * 2.0 / PI * targets.angle();
            gamma / PI
        }
        (ShiftKind::Truncation { radius: a }, ShiftKind::Truncation { radius: b }) => {
            if b <= a {
                0.0
            } else {
                1.0 - (a / b).powi(shift.dim as i32)
            }
        }
        _ => unreachable!("families checked above"),
    };
    Ok(value.max(0.0))
}

/// Analytic and Monte Carlo intensity for one pair of specs.
#[derive(Debug, Clone, Serialize)]
pub struct IntensityReport {
    pub analytic: Option<f64>,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub mc_samples: usize,
    pub spec_train: ShiftSpec,
    pub spec_shift: ShiftSpec,
}

impl IntensityReport {
    /// `|analytic − mc| ≤ 4·stderr + 1e-3`; vacuously true without an
    /// analytic value.
    pub fn is_consistent(&self) -> bool {
        self.analytic
            .is_none_or(|a| (a - self.mc_estimate).abs() <= 4.0 * self.mc_stderr + 1e-3)
    }
}

/// Unit vector drawn uniformly from the sphere in R^d, written into `out`.
pub fn uniform_on_sphere<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        fill_normal(rng, out);
        let n = dot(out, out).sqrt();
        if n > 0.0 {
            out.iter_mut().for_each(|v| *v /= n);
            return;
        }
    }
}

/// Uniform draw from the cap `{x : angle(x, axis) <= angle}` by rejection
/// from the sphere. Returns the number of proposals used, or `None` after
/// `max_proposals` rejections.
pub fn uniform_in_cap<R: Rng + ?Sized>(
    rng: &mut R,
    axis: &[f64],
    angle: f64,
    max_proposals: usize,
    out: &mut [f64],
) -> Option<usize> {
    let cos = angle.cos();
    for k in 1..=max_proposals {
        uniform_on_sphere(rng, out);
        if angle >= PI || dot(out, axis) >= cos {
            return Some(k);
        }
    }
    None
}

/// Uniform draw from the centered ball of the given radius. Returns the
/// radius of the drawn point.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64, out: &mut [f64]) -> f64 {
    uniform_on_sphere_any(rng, out);
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / out.len() as f64);
    out.iter_mut().for_each(|v| *v *= r);
    r
}

// The 1-dimensional "sphere" is {−1, +1}.
fn uniform_on_sphere_any<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    } else {
        uniform_on_sphere(rng, out);
    }
}

/// Monte Carlo intensity: `n` uniform draws from the shifted support, the
/// estimate being the fraction that falls outside the training support.
pub fn intensity_mc(train: &ShiftSpec, shift: &ShiftSpec, n: usize, seed: u64) -> Result<IntensityReport> {
    check_comparable(train, shift)?;
    if n == 0 {
        return Err(invalid("Monte Carlo sample count must be positive"));
    }
    let train_support = support_of(train)?;
    let shift_support = support_of(shift)?;
    let dim = shift.dim;
    let key = StreamKey::new(seed, 0, Domain::MonteCarlo);

    if let Support::Cap { axis, angle } = &shift_support {
        if dim < 2 {
            return Err(invalid("sphere supports need dimension at least 2"));
        }
        let mut rng = StreamKey::new(seed, 1, Domain::MonteCarlo).item(0);
        let cos = angle.cos();
        let mut buf = vec![0.0; dim];
        let mut accepted = 0usize;
        for _ in 0..PILOT_PROPOSALS {
            uniform_on_sphere(&mut rng, &mut buf);
            if dot(&buf, axis) >= cos {
                accepted += 1;
            }
        }
        let rate = accepted as f64 / PILOT_PROPOSALS as f64;
        if rate < ACCEPTANCE_FLOOR {
            return Err(Error::InfeasibleGeometry(format!(
                "cap of angle {angle} in dimension {dim}: pilot acceptance {rate:.3e} below floor {ACCEPTANCE_FLOOR:e}"
            )));
        }
    }

    let shards = n.div_ceil(MC_SHARD);
    let max_proposals = (100.0 / ACCEPTANCE_FLOOR) as usize;
    let hits: Result<usize> = (0..shards)
        .into_par_iter()
        .map(|shard| -> Result<usize> {
            let count = MC_SHARD.min(n - shard * MC_SHARD);
            let mut rng = key.item(shard as u64);
            let mut buf = vec![0.0; dim];
            let mut hits = 0usize;
            for _ in 0..count {
                let inside = match (&shift_support, &train_support) {
                    (Support::Cap { axis, angle }, Support::Cap { axis: ta, angle: tang }) => {
                        uniform_in_cap(&mut rng, axis, *angle, max_proposals, &mut buf)
                            .ok_or_else(|| {
                                Error::InfeasibleGeometry(format!(
                                    "cap sampler exceeded {max_proposals} proposals"
                                ))
                            })?;
                        dot(&buf, ta) >= tang.cos()
                    }
                    (Support::Ball { radius }, Support::Ball { radius: tr }) => {
                        uniform_in_ball(&mut rng, *radius, &mut buf) <= *tr
                    }
                    _ => unreachable!("families checked above"),
                };
                hits += inside as usize;
            }
            Ok(hits)
        })
        .sum();
    let hits = hits?;
    let inside = hits as f64 / n as f64;
    Ok(IntensityReport {
        analytic: intensity_analytic(train, shift).ok(),
        mc_estimate: 1.0 - inside,
        mc_stderr: (inside * (1.0 - inside) / n as f64).sqrt(),
        mc_samples: n,
        spec_train: train.clone(),
        spec_shift: shift.clone(),
    })
}
