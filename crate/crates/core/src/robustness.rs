//! Δ-accuracy and robustness-slope fitting.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Accuracy of one model on one shifted test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// θ or R of the shifted test distribution.
    pub shift_param: f64,
    pub nn_distance: f64,
    pub accuracy: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XAxis {
    ShiftParam,
    NnDistance,
}

impl std::str::FromStr for XAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shift_param" | "shift-param" => Ok(XAxis::ShiftParam),
            "nn_distance" | "nn-distance" => Ok(XAxis::NnDistance),
            other => Err(invalid(format!("unknown x axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Unweighted,
    /// Weights `n_test / (p(1−p) + 1/n_test)`, the inverse binomial variance
    /// with a floor for accuracies at 0 or 1.
    InverseVariance,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unweighted" => Ok(Weighting::Unweighted),
            "inverse_variance" | "inverse-variance" => Ok(Weighting::InverseVariance),
            other => Err(invalid(format!("unknown weighting '{other}'"))),
        }
    }
}

/// Least-squares line of Δ-accuracy against one x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub stderr_slope: f64,
    pub x_axis: XAxis,
    pub n_points: usize,
}

fn check_accuracy(a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&a) {
        return Err(invalid(format!("accuracy {a} outside [0, 1]")));
    }
    Ok(())
}

/// `acc_shift − acc_train`; negative when the shift hurts.
pub fn delta_accuracy(acc_shift: f64, acc_train: f64) -> Result<f64> {
    check_accuracy(acc_shift)?;
    check_accuracy(acc_train)?;
    Ok(acc_shift - acc_train)
}

/// Coefficients of a (weighted) least-squares line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub stderr_slope: f64,
}

/// Centered least squares `y = intercept + slope·x`. R² is 1 when `y` is
/// constant; the slope standard error is 0 with only two points.
pub fn ols(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<Line> {
    let n = xs.len();
    if n != ys.len() || weights.is_some_and(|w| w.len() != n) {
        return Err(invalid("x, y and weight lengths differ"));
    }
    if n < 2 {
        return Err(Error::DegenerateFit(format!("need at least 2 points, got {n}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression input".into()));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(w).sum();
    if !(sw > 0.0) {
        return Err(invalid("weights must have a positive sum"));
    }
    let xbar = (0..n).map(|i| w(i) * xs[i]).sum::<f64>() / sw;
    let ybar = (0..n).map(|i| w(i) * ys[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w(i) * (xs[i] - xbar).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| w(i) * (xs[i] - xbar) * (ys[i] - ybar)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all x values are identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = (0..n)
        .map(|i| w(i) * (ys[i] - intercept - slope * xs[i]).powi(2))
        .sum();
    let ss_tot: f64 = (0..n).map(|i| w(i) * (ys[i] - ybar).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    let stderr_slope = if n > 2 {
        (ss_res / (n - 2) as f64 / sxx).sqrt()
    } else {
        0.0
    };
    Ok(Line {
        slope,
        intercept,
        r_squared,
        stderr_slope,
    })
}

/// Fits Δ-accuracy against `x_axis`.
///
/// Δ-accuracy is taken relative to `baseline`; without one, the accuracy
/// of the point with the smallest shift parameter is used.
pub fn fit_robustness_slope(
    points: &[EvalPoint],
    x_axis: XAxis,
    baseline: Option<f64>,
    weighting: Weighting,
) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    for p in points {
        check_accuracy(p.accuracy)?;
    }
    let baseline = match baseline {
        Some(b) => {
            check_accuracy(b)?;
            b
        }
        None => {
            points
                .iter()
                .min_by(|a, b| a.shift_param.total_cmp(&b.shift_param))
                .expect("nonempty")
                .accuracy
        }
    };
    let xs: Vec<f64> = points
        .iter()
        .map(|p| match x_axis {
            XAxis::ShiftParam => p.shift_param,
            XAxis::NnDistance => p.nn_distance,
        })
        .collect();
    let ys: Vec<f64> = points
        .iter()
        .map(|p| delta_accuracy(p.accuracy, baseline))
        .collect::<Result<_>>()?;
    let weights: Option<Vec<f64>> = match weighting {
        Weighting::Unweighted => None,
        Weighting::InverseVariance => Some(
            points
                .iter()
                .map(|p| {
                    let n = p.n_test.max(1) as f64;
                    n / (p.accuracy * (1.0 - p.accuracy) + 1.0 / n)
                })
                .collect(),
        ),
    };
    let line = ols(&xs, &ys, weights.as_deref())?;
    Ok(SlopeFit {
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        stderr_slope: line.stderr_slope,
        x_axis,
        n_points: points.len(),
    })
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(invalid("pearson needs two equal-length series of at least 2 values"));
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateFit("pearson of a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(x: f64, acc: f64) -> EvalPoint {
        EvalPoint {
            shift_param: x,
            nn_distance: 2.0 * x,
            accuracy: acc,
            n_test: 1000,
        }
    }

    #[test]
    fn delta_examples() {
        assert!((delta_accuracy(0.85, 0.92).unwrap() + 0.07).abs() < 1e-15);
        assert_eq!(delta_accuracy(0.4, 0.4).unwrap(), 0.0);
        assert_eq!(delta_accuracy(0.0, 1.0).unwrap(), -1.0);
        assert!(delta_accuracy(1.2, 0.5).is_err());
        assert!(delta_accuracy(0.5, -0.1).is_err());
    }

    #[test]
    fn hand_ols() {
        let line = ols(&[0.0, 1.0, 2.0], &[0.0, -0.1, -0.2], None).unwrap();
        assert!((line.slope + 0.1).abs() < 1e-12);
        assert!(line.intercept.abs() < 1e-12);
        assert!((line.r_squared - 1.0).abs() < 1e-12);

        let fit = fit_robustness_slope(
            &[pt(0.0, 0.9), pt(1.0, 0.8), pt(2.0, 0.7)],
            XAxis::ShiftParam,
            None,
            Weighting::Unweighted,
        )
        .unwrap();
        assert!((fit.slope + 0.1).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        let by_dist = fit_robustness_slope(
            &[pt(0.0, 0.9), pt(1.0, 0.8), pt(2.0, 0.7)],
            XAxis::NnDistance,
            None,
            Weighting::Unweighted,
        )
        .unwrap();
        assert!((by_dist.slope + 0.05).abs() < 1e-12);
    }

    #[test]
    fn constant_accuracy_is_perfectly_robust() {
        let pts: Vec<_> = (0..5).map(|i| pt(i as f64, 0.8)).collect();
        let fit = fit_robustness_slope(&pts, XAxis::ShiftParam, None, Weighting::Unweighted).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        let pts = [pt(1.0, 0.8), pt(1.0, 0.7)];
        assert!(matches!(
            fit_robustness_slope(&pts, XAxis::ShiftParam, None, Weighting::Unweighted),
            Err(Error::DegenerateFit(_))
        ));
        assert!(fit_robustness_slope(&pts[..1], XAxis::ShiftParam, None, Weighting::Unweighted).is_err());
    }

    #[test]
    fn synthetic_slope_recovery() {
        use rand::Rng;
        use rand_distr::{Distribution, Normal};
        let mut rng = crate::rng::StreamKey::new(5, 0, crate::rng::Domain::Test).item(0);
        // ε ~ N(0, 1e-4): standard deviation 1e-2
        let noise = Normal::new(0.0, 1e-2).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 + rng.random::<f64>() * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -0.05 * x + noise.sample(&mut rng)).collect();
        let line = ols(&xs, &ys, None).unwrap();
        assert!((line.slope + 0.05).abs() <= 3.0 * line.stderr_slope, "{line:?}");
    }

    #[test]
    fn inverse_variance_weighting_runs() {
        let pts = [pt(0.0, 1.0), pt(1.0, 0.9), pt(2.0, 0.75), pt(3.0, 0.7)];
        let fit = fit_robustness_slope(&pts, XAxis::ShiftParam, None, Weighting::InverseVariance).unwrap();
        assert!(fit.slope < 0.0);
    }

    #[test]
    fn pearson_of_line() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 1.0, -1.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn residuals_are_orthogonal(
            pts in prop::collection::vec((-10.0f64..10.0, -1.0f64..1.0), 3..40)
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-3));
            let line = ols(&xs, &ys, None).unwrap();
            let res: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - line.intercept - line.slope * x).collect();
            let s: f64 = res.iter().sum();
            let sx: f64 = res.iter().zip(&xs).map(|(r, x)| r * x).sum();
            prop_assert!(s.abs() < 1e-9);
            prop_assert!(sx.abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&line.r_squared));
        }

        #[test]
        fn fit_ignores_point_order(
            pts in prop::collection::vec((0.0f64..3.0, 0.0f64..1.0), 3..20),
            rot in 0usize..20,
        ) {
            prop_assume!(pts.iter().any(|p| (p.0 - pts[0].0).abs() > 1e-3));
            let eval: Vec<EvalPoint> = pts.iter().map(|p| pt(p.0, p.1)).collect();
            let mut rotated = eval.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            let a = fit_robustness_slope(&eval, XAxis::ShiftParam, Some(0.5), Weighting::Unweighted).unwrap();
            let b = fit_robustness_slope(&rotated, XAxis::ShiftParam, Some(0.5), Weighting::Unweighted).unwrap();
            prop_assert!((a.slope - b.slope).abs() < 1e-9);
            prop_assert!((a.intercept - b.intercept).abs() < 1e-9);
        }
    }
}
