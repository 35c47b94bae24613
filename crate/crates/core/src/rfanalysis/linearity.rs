use serde::Serialize;

use super::RfError;

/// Two fits of output power against input power, both in dB:
/// an unconstrained least-squares line and a unit-slope line whose offset is
/// the mean attenuation `mean(input - output)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearityFit {
    pub slope: f64,
    pub intercept_db: f64,
    pub residuals_db: Vec<f64>,
    pub offset_db: f64,
    pub unit_slope_residuals_db: Vec<f64>,
}

pub fn fit_power_linearity(points: &[(f64, f64)]) -> Result<LinearityFit, RfError> {
    if points.len() < 2 {
        return Err(RfError::Degenerate(format!("need at least 2 points, got {}", points.len())));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(RfError::Parameter("points must be finite".into()));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(RfError::Degenerate("all input powers are equal".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept_db = mean_y - slope * mean_x;
    let offset_db = points.iter().map(|p| p.0 - p.1).sum::<f64>() / n;
    Ok(LinearityFit {
        slope,
        intercept_db,
        residuals_db: points.iter().map(|p| p.1 - (slope * p.0 + intercept_db)).collect(),
        offset_db,
        unit_slope_residuals_db: points.iter().map(|p| p.1 - (p.0 - offset_db)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_attenuation() {
        let pts: Vec<_> = (0..5).map(|i| (i as f64 * 5.0 - 10.0, i as f64 * 5.0 - 20.0)).collect();
        let fit = fit_power_linearity(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.offset_db - 10.0).abs() < 1e-12);
        assert!((fit.intercept_db + 10.0).abs() < 1e-12);
        assert!(fit.residuals_db.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn alternating_noise() {
        // x = 0,5,10,15,20 and e = +.1,-.1,+.1,-.1,+.1:
        // sum (x - mean) e = 0 so the OLS slope is exactly 1,
        // intercept = mean(e) - 10 = -9.98, offset = 10 - mean(e) = 9.98
        let noise = [0.1, -0.1, 0.1, -0.1, 0.1];
        let pts: Vec<_> = (0..5).map(|i| (i as f64 * 5.0, i as f64 * 5.0 - 10.0 + noise[i])).collect();
        let fit = fit_power_linearity(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.intercept_db + 9.98).abs() < 1e-12);
        assert!((fit.offset_db - 9.98).abs() < 1e-12);
        assert!((fit.slope - 1.0).abs() <= 0.02 && (fit.offset_db - 10.0).abs() <= 0.1);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_power_linearity(&[(1.0, 0.0), (1.0, 2.0)]), Err(RfError::Degenerate(_))));
        assert!(matches!(fit_power_linearity(&[(1.0, 0.0)]), Err(RfError::Degenerate(_))));
    }
}
