//! Power-law fits of optimal hyperparameters against compute, and prediction for a
//! checkpoint through its loss-equivalent compute.

use serde::{Deserialize, Serialize};

use crate::{invalid, Result};

/// `value = coefficient · x^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub coefficient: f64,
    pub exponent: f64,
    /// RMS residual of the fit in log space.
    pub residual: f64,
}

impl PowerLaw {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficient * x.powf(self.exponent)
    }

    /// The `x` at which the law takes `value`.
    pub fn invert(&self, value: f64) -> f64 {
        (value / self.coefficient).powf(1.0 / self.exponent)
    }
}

/// Least squares on `(ln x, ln y)`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLaw> {
    if points.len() < 2 {
        return invalid("a power-law fit needs at least 2 points");
    }
    if points.iter().any(|&(x, y)| !(x.is_finite() && y.is_finite() && x > 0.0 && y > 0.0)) {
        return invalid("power-law points must be positive and finite");
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("power-law points need at least two distinct x values");
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let sse: f64 = logs.iter().map(|p| (p.1 - intercept - exponent * p.0).powi(2)).sum();
    Ok(PowerLaw { coefficient: intercept.exp(), exponent, residual: (sse / n).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HparamPoint {
    pub compute: f64,
    pub batch_size: f64,
    pub learning_rate: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HparamLaws {
    pub loss: PowerLaw,
    pub batch_size: PowerLaw,
    pub learning_rate: PowerLaw,
    /// Smallest and largest loss among the fitted points.
    pub loss_range: (f64, f64),
}

pub fn fit_hparam_laws(points: &[HparamPoint]) -> Result<HparamLaws> {
    let law = |f: fn(&HparamPoint) -> f64| fit_power_law(&points.iter().map(|p| (p.compute, f(p))).collect::<Vec<_>>());
    let loss = law(|p| p.loss)?;
    if loss.exponent == 0.0 {
        return invalid("loss does not vary with compute, so it cannot be inverted");
    }
    let lo = points.iter().map(|p| p.loss).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.loss).fold(f64::NEG_INFINITY, f64::max);
    Ok(HparamLaws {
        loss,
        batch_size: law(|p| p.batch_size)?,
        learning_rate: law(|p| p.learning_rate)?,
        loss_range: (lo, hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HparamPrediction {
    /// Compute at which the fitted loss law reaches the checkpoint's loss.
    pub equivalent_compute: f64,
    pub actual_compute: f64,
    pub batch_size: f64,
    pub learning_rate: f64,
    /// The loss lies outside the fitted range.
    pub extrapolated: bool,
}

/// Inverts the loss law at `checkpoint_loss` and evaluates the batch-size and
/// learning-rate laws at that equivalent compute.
pub fn predict_optimal_hparams(
    checkpoint_loss: f64,
    actual_compute: f64,
    laws: &HparamLaws,
) -> Result<HparamPrediction> {
    if !(checkpoint_loss.is_finite() && checkpoint_loss > 0.0) {
        return invalid(format!("checkpoint loss must be positive, got {checkpoint_loss}"));
    }
    if !(actual_compute.is_finite() && actual_compute > 0.0) {
        return invalid(format!("actual compute must be positive, got {actual_compute}"));
    }
    let c = laws.loss.invert(checkpoint_loss);
    let (lo, hi) = laws.loss_range;
    Ok(HparamPrediction {
        equivalent_compute: c,
        actual_compute,
        batch_size: laws.batch_size.eval(c),
        learning_rate: laws.learning_rate.eval(c),
        extrapolated: !(lo..=hi).contains(&checkpoint_loss),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    fn synthetic() -> Vec<HparamPoint> {
        [1e18, 1e19, 1e20, 1e21]
            .iter()
            .map(|&c: &f64| HparamPoint {
                compute: c,
                batch_size: 0.3 * c.powf(0.25),
                learning_rate: 50.0 * c.powf(-0.2),
                loss: 40.0 * c.powf(-0.05),
            })
            .collect()
    }

    #[test]
    fn exact_fit() {
        let pts: Vec<(f64, f64)> = (1..=10).map(|i| f64::from(i) * 3.0).map(|x| (x, 2.0 * x.sqrt())).collect();
        let f = fit_power_law(&pts).unwrap();
        assert!(close(f.coefficient, 2.0) && close(f.exponent, 0.5), "{f:?}");
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn two_points_interpolate() {
        let f = fit_power_law(&[(2.0, 3.0), (8.0, 12.0)]).unwrap();
        assert!(close(f.eval(2.0), 3.0) && close(f.eval(8.0), 12.0));
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn rejects_bad_points() {
        assert!(fit_power_law(&[(1.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn fitted_point_maps_to_its_hparams() {
        let pts = synthetic();
        let laws = fit_hparam_laws(&pts).unwrap();
        let p = pts[2];
        let got = predict_optimal_hparams(p.loss, 5e19, &laws).unwrap();
        assert!(close(got.equivalent_compute, p.compute), "{got:?}");
        assert!(close(got.batch_size, p.batch_size) && close(got.learning_rate, p.learning_rate));
        assert!(!got.extrapolated);
        assert_eq!(got.actual_compute, 5e19);
    }

    #[test]
    fn closed_form_prediction() {
        let laws = fit_hparam_laws(&synthetic()).unwrap();
        let loss = 4.0;
        let c = (loss / 40.0f64).powf(1.0 / -0.05);
        let got = predict_optimal_hparams(loss, 1e19, &laws).unwrap();
        assert!(close(got.equivalent_compute, c));
        assert!(close(got.batch_size, 0.3 * c.powf(0.25)));
        assert!(close(got.learning_rate, 50.0 * c.powf(-0.2)));
    }

    #[test]
    fn out_of_range_loss_is_flagged() {
        let laws = fit_hparam_laws(&synthetic()).unwrap();
        assert!(predict_optimal_hparams(laws.loss_range.0 * 0.9, 1e21, &laws).unwrap().extrapolated);
        assert!(predict_optimal_hparams(laws.loss_range.1 * 1.1, 1e17, &laws).unwrap().extrapolated);
        assert!(predict_optimal_hparams(-1.0, 1e17, &laws).is_err());
    }
}
