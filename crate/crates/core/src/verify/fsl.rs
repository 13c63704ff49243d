//! Analytic visibility from temperature, dew point and relative humidity:
//! `VIS = 1.609 · 6000 · (T − Td) / rh^1.75` km.

use crate::error::{Error, Result};

pub const DEFAULT_CAP_KM: f64 = 100.0;

/// `t` and `td` in °C (or both in K), `rh` in percent.
pub fn fsl_visibility(t: f64, td: f64, rh: f64, cap_km: f64) -> Result<f64> {
    if !(t.is_finite() && td.is_finite() && rh.is_finite()) {
        return Err(Error::Input("FSL inputs must be finite".into()));
    }
    if rh <= 0.0 {
        return Err(Error::Input(format!("relative humidity must be > 0, got {rh}")));
    }
    let depression = (t - td).max(0.0);
    Ok((1.609 * 6000.0 * depression / rh.powf(1.75)).min(cap_km))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert!((fsl_visibility(12.0, 10.0, 95.0, DEFAULT_CAP_KM).unwrap() - 6.68).abs() < 0.01);
        assert_eq!(fsl_visibility(10.0, 10.0, 80.0, DEFAULT_CAP_KM).unwrap(), 0.0);
        assert_eq!(fsl_visibility(10.0, 11.0, 80.0, DEFAULT_CAP_KM).unwrap(), 0.0);
        let d = 10f64.powf(3.5) / 9654.0;
        assert!((fsl_visibility(d, 0.0, 100.0, DEFAULT_CAP_KM).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fsl_visibility(40.0, 0.0, 5.0, DEFAULT_CAP_KM).unwrap(), DEFAULT_CAP_KM);
        assert!(fsl_visibility(1.0, 0.0, 0.0, DEFAULT_CAP_KM).is_err());
    }
}
