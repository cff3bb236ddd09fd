//! Closed-form source and channel relations.

use crate::math::{check_range, DomainError, Probability};

/// Planck constant, J s (exact SI value).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Speed of light in vacuum, m/s (exact SI value).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Mean photon number per pulse of an attenuated pulsed laser:
/// `mu = P_avg * lambda * 10^-OD / (rep_rate * h * c)`.
pub fn mean_photon_number(avg_power_w: f64, wavelength_m: f64, optical_density: f64, rep_rate_hz: f64) -> Result<f64, DomainError> {
    check_range("avg_power_w", avg_power_w, f64::MIN_POSITIVE, f64::MAX)?;
    check_range("wavelength_m", wavelength_m, f64::MIN_POSITIVE, f64::MAX)?;
    check_range("optical_density", optical_density, 0.0, f64::MAX)?;
    check_range("rep_rate_hz", rep_rate_hz, f64::MIN_POSITIVE, f64::MAX)?;
    Ok(avg_power_w * wavelength_m * 10f64.powf(-optical_density) / (rep_rate_hz * PLANCK * SPEED_OF_LIGHT))
}

/// Atmospheric transmission `S_C * exp(-gamma * L)`.
pub fn channel_transmission(scaling: f64, extinction_per_m: f64, length_m: f64) -> Result<Probability, DomainError> {
    if !(scaling > 0.0 && scaling <= 1.0) {
        return Err(DomainError::OutOfRange { name: "scaling", value: scaling, low: 0.0, high: 1.0 });
    }
    check_range("extinction_per_m", extinction_per_m, 0.0, f64::MAX)?;
    check_range("length_m", length_m, 0.0, f64::MAX)?;
    Probability::new(scaling * (-extinction_per_m * length_m).exp())
}
