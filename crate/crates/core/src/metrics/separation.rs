use crate::error::{Error, Result};

/// Lower and upper bound of the common scale used before comparing
/// correct and incorrect metric values.
pub const SCALE_LOW: f64 = 1.0;
pub const SCALE_HIGH: f64 = 20.0;

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Domain(format!("{name} is empty")));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{name} contains {bad}")));
    }
    Ok(())
}

/// Jointly maps both series affinely onto `[1, 20]` using their pooled
/// minimum and maximum.
pub fn scale_to_range(x: &[f64], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_finite("first series", x)?;
    check_finite("second series", y)?;
    let lo = x.iter().chain(y).copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().chain(y).copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::DegenerateRange(lo));
    }
    let map = |v: &f64| (SCALE_HIGH - SCALE_LOW) * (v - lo) / range + SCALE_LOW;
    Ok((x.iter().map(map).collect(), y.iter().map(map).collect()))
}

/// Mean of `(x_i - y_j) / (x_i + y_j)` over all pairs `(i, j)`.
///
/// All values must be strictly positive; apply [`scale_to_range`] first.
pub fn separation_degree(x: &[f64], y: &[f64]) -> Result<f64> {
    check_finite("first series", x)?;
    check_finite("second series", y)?;
    if let Some(bad) = x.iter().chain(y).find(|v| **v <= 0.0) {
        return Err(Error::Domain(format!(
            "separation degree needs positive values, got {bad}"
        )));
    }
    let total: f64 = x.iter().map(|a| y.iter().map(|b| (a - b) / (a + b)).sum::<f64>()).sum();
    Ok(total / (x.len() * y.len()) as f64)
}

/// Scales both series jointly and returns the separation degree with the
/// patient series first, so larger metric values for incorrect
/// repetitions give a positive result.
pub fn scaled_separation(reference: &[f64], patient: &[f64]) -> Result<f64> {
    let (r, p) = scale_to_range(reference, patient)?;
    separation_degree(&p, &r)
}
