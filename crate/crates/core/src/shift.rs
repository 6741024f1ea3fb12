//! Latent shift families: extend, overlap and truncation, plus the prior
//! baseline. Each family is a deterministic transform of prior draws and
//! carries a support predicate for the set it maps onto.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::latent::{self, angle_between, dot, norm, normalize, slerp, LabelRule, LatentBatch};
use crate::rng::{fill_normal, Domain, StreamKey};
use crate::special::ball99;

/// Default sweep for extend and overlap angles.
pub const THETA_GRID: [f64; 7] = [
    0.0,
    PI / 12.0,
    PI / 6.0,
    PI / 4.0,
    PI / 3.0,
    5.0 * PI / 12.0,
    PI / 2.0,
];

/// Default sweep for truncation radii.
pub const RADIUS_GRID: [f64; 7] = [0.8, 0.85, 0.9, 0.95, 1.0, 1.05, 1.1];

/// Truncation radius used for the training distribution.
pub const TRUNCATION_TRAIN_RADIUS: f64 = 0.8;

/// Tolerance on the unit norm for sphere-supported families.
pub const SPHERE_TOL: f64 = 1e-6;
/// Slack on the angular / half-space support boundaries.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Prior,
    Extend,
    Overlap,
    Truncation,
}

impl Family {
    /// Family byte used by the latent file format.
    pub fn code(self) -> u8 {
        match self {
            Family::Prior => 0,
            Family::Extend => 1,
            Family::Overlap => 2,
            Family::Truncation => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Family::Prior),
            1 => Some(Family::Extend),
            2 => Some(Family::Overlap),
            3 => Some(Family::Truncation),
            _ => None,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Prior => "prior",
            Family::Extend => "extend",
            Family::Overlap => "overlap",
            Family::Truncation => "truncation",
        })
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prior" => Ok(Family::Prior),
            "extend" => Ok(Family::Extend),
            "overlap" => Ok(Family::Overlap),
            "truncation" => Ok(Family::Truncation),
            other => Err(invalid(format!("unknown shift family '{other}'"))),
        }
    }
}

/// Which interpolation parameter the extend family uses.
///
/// `Corrected` uses `τ(θ) = (π/2 − θ)/π`: θ = 0 gives the hemisphere around
/// `t1` and θ = π/2 gives the whole sphere. `Printed` uses
/// `τ(θ) = (θ + π/2)/π`, whose support shrinks toward `t1` as θ grows; it is
/// kept only for compatibility with datasets built that way.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtendTau {
    #[default]
    Corrected,
    Printed,
}

impl ExtendTau {
    pub fn tau(self, theta: f64) -> f64 {
        match self {
            ExtendTau::Corrected => (FRAC_PI_2 - theta) / PI,
            ExtendTau::Printed => (theta + FRAC_PI_2) / PI,
        }
    }

    /// Angular radius around `t1` of the extend support.
    pub fn cap_angle(self, theta: f64) -> f64 {
        match self {
            ExtendTau::Corrected => FRAC_PI_2 + theta,
            ExtendTau::Printed => FRAC_PI_2 - theta,
        }
    }
}

/// Two fixed unit target codes shared by every extend / overlap spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPair {
    #[serde(skip)]
    pub t1: Vec<f64>,
    #[serde(skip)]
    pub t2: Vec<f64>,
    pub seed: u64,
}

impl TargetPair {
    pub fn dim(&self) -> usize {
        self.t1.len()
    }

    /// Angle between `t1` and `t2`.
    pub fn angle(&self) -> f64 {
        angle_between(&self.t1, &self.t2).unwrap_or(0.0)
    }
}

/// Two independent N(0, I_d) draws from the seeded target stream, normalized.
pub fn derive_targets(seed: u64, dim: usize) -> Result<TargetPair> {
    if dim < 2 {
        return Err(invalid(format!("dimension must be at least 2, got {dim}")));
    }
    let key = StreamKey::new(seed, 0, Domain::Targets);
    let draw = |i| {
        let mut v = vec![0.0; dim];
        fill_normal(&mut key.item(i), &mut v);
        normalize(&v)
    };
    let pair = TargetPair {
        t1: draw(0)?,
        t2: draw(1)?,
        seed,
    };
    let angle = pair.angle();
    if !(angle > 0.0 && angle < PI - latent::ANTIPODAL_MARGIN) {
        return Err(Error::DegenerateGeometry(format!(
            "target seed {seed} gives degenerate pair (angle {angle})"
        )));
    }
    Ok(pair)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ShiftKind {
    Prior,
    Extend {
        theta: f64,
        targets: TargetPair,
        #[serde(default)]
        tau: ExtendTau,
    },
    Overlap {
        theta: f64,
        targets: TargetPair,
    },
    Truncation {
        radius: f64,
    },
}

/// One member of a shift family in a latent space of dimension `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: ShiftKind,
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=FRAC_PI_2).contains(&theta) {
        return Err(invalid(format!("shift angle {theta} outside [0, π/2]")));
    }
    Ok(())
}

fn check_targets(targets: &TargetPair, dim: usize) -> Result<()> {
    if targets.t1.len() != dim || targets.t2.len() != dim {
        return Err(invalid(format!(
            "targets have dimension {} but spec has {dim}",
            targets.dim()
        )));
    }
    Ok(())
}

impl ShiftSpec {
    pub fn prior(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid(format!("dimension must be at least 2, got {dim}")));
        }
        Ok(Self {
            dim,
            kind: ShiftKind::Prior,
        })
    }

    pub fn extend(theta: f64, targets: TargetPair) -> Result<Self> {
        Self::extend_with(theta, targets, ExtendTau::Corrected)
    }

    pub fn extend_with(theta: f64, targets: TargetPair, tau: ExtendTau) -> Result<Self> {
        check_theta(theta)?;
        Ok(Self {
            dim: targets.dim(),
            kind: ShiftKind::Extend {
                theta,
                targets,
                tau,
            },
        })
    }

    pub fn overlap(theta: f64, targets: TargetPair) -> Result<Self> {
        check_theta(theta)?;
        Ok(Self {
            dim: targets.dim(),
            kind: ShiftKind::Overlap { theta, targets },
        })
    }

    /// Truncation specs accept `dim >= 1`: intensity is defined for any
    /// dimension even though latent codes need at least two.
    pub fn truncation(radius: f64, dim: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid(format!("truncation radius must be positive, got {radius}")));
        }
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        Ok(Self {
            dim,
            kind: ShiftKind::Truncation { radius },
        })
    }

    /// Builds a spec of `family` with the given parameter (θ or R).
    pub fn from_family(
        family: Family,
        param: f64,
        dim: usize,
        targets: Option<&TargetPair>,
    ) -> Result<Self> {
        let need_targets = || {
            targets
                .cloned()
                .ok_or_else(|| invalid(format!("{family} shift needs a target pair")))
        };
        match family {
            Family::Prior => Self::prior(dim),
            Family::Extend => {
                let t = need_targets()?;
                check_targets(&t, dim)?;
                Self::extend(param, t)
            }
            Family::Overlap => {
                let t = need_targets()?;
                check_targets(&t, dim)?;
                Self::overlap(param, t)
            }
            Family::Truncation => Self::truncation(param, dim),
        }
    }

    pub fn family(&self) -> Family {
        match self.kind {
            ShiftKind::Prior => Family::Prior,
            ShiftKind::Extend { .. } => Family::Extend,
            ShiftKind::Overlap { .. } => Family::Overlap,
            ShiftKind::Truncation { .. } => Family::Truncation,
        }
    }

    /// θ for extend / overlap, R for truncation, 0 for the prior.
    pub fn param(&self) -> f64 {
        match self.kind {
            ShiftKind::Prior => 0.0,
            ShiftKind::Extend { theta, .. } | ShiftKind::Overlap { theta, .. } => theta,
            ShiftKind::Truncation { radius } => radius,
        }
    }

    pub fn targets(&self) -> Option<&TargetPair> {
        match &self.kind {
            ShiftKind::Extend { targets, .. } | ShiftKind::Overlap { targets, .. } => Some(targets),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ShiftKind::Prior => {
                if self.dim < 2 {
                    return Err(invalid("prior needs dimension at least 2"));
                }
            }
            ShiftKind::Extend { theta, targets, .. } | ShiftKind::Overlap { theta, targets } => {
                check_theta(*theta)?;
                check_targets(targets, self.dim)?;
            }
            ShiftKind::Truncation { radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(invalid(format!("truncation radius must be positive, got {radius}")));
                }
            }
        }
        Ok(())
    }

    /// Axis of the overlap hemisphere: `t1` rotated toward `t2` by the
    /// fraction `2θ/π` of their angle.
    pub fn overlap_axis(&self) -> Option<Result<Vec<f64>>> {
        match &self.kind {
            ShiftKind::Overlap { theta, targets } => {
                Some(slerp(&targets.t1, &targets.t2, 2.0 * theta / PI))
            }
            _ => None,
        }
    }

    /// Prepares the transform and support predicate for repeated use.
    pub fn prepare(&self) -> Result<PreparedShift<'_>> {
        self.validate()?;
        let detail = match &self.kind {
            ShiftKind::Prior => Prepared::Prior,
            ShiftKind::Extend { theta, targets, tau } => Prepared::Extend {
                t1: &targets.t1,
                tau: tau.tau(*theta),
                cap: tau.cap_angle(*theta),
            },
            ShiftKind::Overlap { theta, targets } => Prepared::Overlap {
                axis: slerp(&targets.t1, &targets.t2, 2.0 * theta / PI)?,
            },
            ShiftKind::Truncation { radius } => Prepared::Truncation {
                radius: *radius,
                base: ball99(self.dim)?,
            },
        };
        Ok(PreparedShift { spec: self, detail })
    }
}

#[derive(Debug, Clone)]
enum Prepared<'a> {
    Prior,
    Extend { t1: &'a [f64], tau: f64, cap: f64 },
    Overlap { axis: Vec<f64> },
    Truncation { radius: f64, base: f64 },
}

/// A validated spec with its derived geometry cached.
#[derive(Debug, Clone)]
pub struct PreparedShift<'a> {
    spec: &'a ShiftSpec,
    detail: Prepared<'a>,
}

impl PreparedShift<'_> {
    pub fn spec(&self) -> &ShiftSpec {
        self.spec
    }

    /// Norm bound of the truncation support, `R · ball99(d)`.
    pub fn support_radius(&self) -> Option<f64> {
        match self.detail {
            Prepared::Truncation { radius, base } => Some(radius * base),
            _ => None,
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.spec.dim {
            return Err(Error::ShapeMismatch(format!(
                "code of dimension {} for spec of dimension {}",
                z.len(),
                self.spec.dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent code".into()));
        }
        match &self.detail {
            Prepared::Prior => Ok(z.to_vec()),
            Prepared::Truncation { radius, .. } => Ok(z.iter().map(|v| radius * v).collect()),
            Prepared::Extend { t1, tau, .. } => slerp(&normalize(z)?, t1, *tau),
            Prepared::Overlap { axis } => slerp(&normalize(z)?, axis, 0.5),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.spec.dim {
            return false;
        }
        match &self.detail {
            Prepared::Prior => true,
            Prepared::Truncation { radius, base } => norm(x) <= radius * base * (1.0 + 1e-12),
            Prepared::Extend { t1, cap, .. } => {
                on_sphere(x) && angle_between(x, t1).is_ok_and(|a| a <= cap + BOUNDARY_TOL)
            }
            Prepared::Overlap { axis } => on_sphere(x) && dot(x, axis) >= -BOUNDARY_TOL,
        }
    }
}

fn on_sphere(x: &[f64]) -> bool {
    (norm(x) - 1.0).abs() <= SPHERE_TOL
}

/// Maps a prior draw onto the shifted distribution.
pub fn apply_shift(z: &[f64], spec: &ShiftSpec) -> Result<Vec<f64>> {
    spec.prepare()?.apply(z)
}

/// Membership in the support of `spec`'s distribution.
pub fn in_support(x: &[f64], spec: &ShiftSpec) -> bool {
    spec.prepare().is_ok_and(|p| p.contains(x))
}

/// Latent codes pushed through one shift transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedBatch {
    pub spec: ShiftSpec,
    pub batch: LatentBatch,
    pub source_seed: u64,
}

/// Prior draws mapped through `spec`.
///
/// Truncation draws are conditioned on the 99%-mass ball before scaling, so
/// every code lands inside the truncation support; draws are repeated from
/// the code's own stream until one is accepted.
pub fn sample_shifted_batch(
    spec: &ShiftSpec,
    n: usize,
    seed: u64,
    stream_id: u64,
    labels: LabelRule,
) -> Result<ShiftedBatch> {
    let prepared = spec.prepare()?;
    if spec.dim < 2 {
        return Err(invalid(format!("latent codes need dimension at least 2, got {}", spec.dim)));
    }
    let mut batch = latent::sample_prior(spec.dim, n, seed, stream_id, labels)?;
    let dim = spec.dim;
    let bound = if spec.family() == Family::Truncation {
        Some(ball99(dim)?)
    } else {
        None
    };
    batch
        .values
        .par_chunks_mut(dim)
        .enumerate()
        .try_for_each(|(i, row)| -> Result<()> {
            if let Some(bound) = bound {
                if norm(row) > bound {
                    let mut rng = StreamKey::new(seed, stream_id, Domain::Prior).item(i as u64);
                    // replay the rejected draw, then continue the same stream
                    fill_normal(&mut rng, row);
                    loop {
                        fill_normal(&mut rng, row);
                        if norm(row) <= bound {
                            break;
                        }
                    }
                }
            }
            let shifted = prepared.apply(row)?;
            row.copy_from_slice(&shifted);
            Ok(())
        })?;
    Ok(ShiftedBatch {
        spec: spec.clone(),
        batch,
        source_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::sample_prior;

    fn axis_targets() -> TargetPair {
        TargetPair {
            t1: vec![1.0, 0.0, 0.0],
            t2: vec![0.0, 0.0, 1.0],
            seed: 0,
        }
    }

    #[test]
    fn targets_are_deterministic_unit_and_seeded() {
        let a = derive_targets(0, 3).unwrap();
        let b = derive_targets(0, 3).unwrap();
        let c = derive_targets(1, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.t1, c.t1);
        for t in [&a.t1, &a.t2, &c.t1, &c.t2] {
            assert!((norm(t) - 1.0).abs() < 1e-9);
        }
        assert!(derive_targets(0, 1).is_err());
    }

    #[test]
    fn truncation_unit_radius_is_identity() {
        let spec = ShiftSpec::truncation(1.0, 3).unwrap();
        let z = [0.3, -2.0, 1.5];
        assert_eq!(apply_shift(&z, &spec).unwrap(), z.to_vec());
    }

    #[test]
    fn extend_full_angle_returns_normalized_code() {
        let spec = ShiftSpec::extend(FRAC_PI_2, axis_targets()).unwrap();
        let out = apply_shift(&[0.0, 1.0, 0.0], &spec).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn overlap_zero_lands_at_quarter_turn() {
        let spec = ShiftSpec::overlap(0.0, axis_targets()).unwrap();
        let out = apply_shift(&[0.0, 2.0, 0.0], &spec).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out[0] - h).abs() < 1e-15 && (out[1] - h).abs() < 1e-15);
        assert!((angle_between(&out, &[1.0, 0.0, 0.0]).unwrap() - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn extend_rejects_antipodal_code() {
        let spec = ShiftSpec::extend(0.0, axis_targets()).unwrap();
        assert!(matches!(
            apply_shift(&[-1.0, 0.0, 0.0], &spec),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn parameter_validation() {
        assert!(ShiftSpec::extend(2.0, axis_targets()).is_err());
        assert!(ShiftSpec::overlap(-0.1, axis_targets()).is_err());
        assert!(ShiftSpec::truncation(0.0, 3).is_err());
        assert!(ShiftSpec::truncation(-1.0, 3).is_err());
    }

    #[test]
    fn support_examples() {
        let t = axis_targets();
        let ext = ShiftSpec::extend(0.0, t.clone()).unwrap();
        assert!(in_support(&t.t1, &ext));
        let anti: Vec<f64> = t.t1.iter().map(|v| -v).collect();
        assert!(!in_support(&anti, &ext));

        // pick R so that the support radius is 0.4
        let r = 0.4 / ball99(3).unwrap();
        let trunc = ShiftSpec::truncation(r, 3).unwrap();
        assert!(!in_support(&[0.5, 0.0, 0.0], &trunc));
        assert!(in_support(&[0.3, 0.0, 0.0], &trunc));
        assert!(in_support(&[100.0, 0.0, 0.0], &ShiftSpec::prior(3).unwrap()));
    }

    #[test]
    fn batch_samples_stay_in_support() {
        let t = derive_targets(3, 3).unwrap();
        let ext = ShiftSpec::extend(0.0, t.clone()).unwrap();
        let b = sample_shifted_batch(&ext, 10_000, 5, 0, LabelRule::Fixed(0)).unwrap();
        for row in b.batch.rows() {
            assert!(angle_between(row, &t.t1).unwrap() <= FRAC_PI_2 + 1e-9);
        }

        let trunc = ShiftSpec::truncation(0.8, 3).unwrap();
        let b = sample_shifted_batch(&trunc, 10_000, 5, 0, LabelRule::Fixed(0)).unwrap();
        let bound = 0.8 * ball99(3).unwrap();
        let max = b.batch.rows().map(norm).fold(0.0, f64::max);
        assert!(max <= bound, "{max} > {bound}");
    }

    #[test]
    fn prior_batch_matches_sample_prior() {
        let spec = ShiftSpec::prior(4).unwrap();
        let rule = LabelRule::RoundRobin { classes: 3 };
        let shifted = sample_shifted_batch(&spec, 5, 9, 2, rule).unwrap();
        assert_eq!(shifted.batch, sample_prior(4, 5, 9, 2, rule).unwrap());
    }

    #[test]
    fn printed_tau_shrinks_toward_t1() {
        let t = axis_targets();
        let spec = ShiftSpec::extend_with(FRAC_PI_2, t.clone(), ExtendTau::Printed).unwrap();
        // τ = 1 sends every code to t1
        assert_eq!(apply_shift(&[0.0, 1.0, 0.0], &spec).unwrap(), t.t1);
    }

    #[test]
    fn family_codes_round_trip() {
        for f in [Family::Prior, Family::Extend, Family::Overlap, Family::Truncation] {
            assert_eq!(Family::from_code(f.code()), Some(f));
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
        assert_eq!(Family::from_code(4), None);
    }
}
