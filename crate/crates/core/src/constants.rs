//! Physical constants (CODATA 2018, exact where defined) and unit helpers.

use std::f64::consts::PI;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Torr in pascal.
pub const TORR: f64 = 101_325.0 / 760.0;
/// 0 degrees Celsius in kelvin.
pub const ZERO_CELSIUS: f64 = 273.15;

/// Ordinary frequency in MHz to angular frequency in rad/s.
pub fn mhz_to_rad(mhz: f64) -> f64 {
    2.0 * PI * mhz * 1e6
}

/// Angular frequency in rad/s to ordinary frequency in MHz.
pub fn rad_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

/// Rounds to 12 significant digits, hiding the last-bit noise of unit
/// conversions (0.2e-6 * 1e6 = 0.19999999999999998) in exported tables.
pub fn trim_digits(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Vacuum wavelength (m) of an angular frequency (rad/s).
pub fn wavelength(omega: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / omega
}

/// Angular frequency (rad/s) of a vacuum wavelength (m).
pub fn angular_frequency(wavelength: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / wavelength
}

pub fn celsius(t: f64) -> f64 {
    t + ZERO_CELSIUS
}
