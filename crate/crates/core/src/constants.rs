//! Physical constants (CODATA 2018 exact or recommended values).

/// Reduced Planck constant, J·s (1.05457182e-34 to 9 significant digits).
pub const HBAR: f64 = 1.054_571_817e-34;

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Picoseconds per second.
pub const PS_PER_S: f64 = 1e12;

/// Seconds per hour.
pub const S_PER_HOUR: f64 = 3600.0;

/// Photon energy `ħω = 2πħc/λ` in joules.
pub fn photon_energy(wavelength: f64) -> f64 {
    2.0 * std::f64::consts::PI * HBAR * SPEED_OF_LIGHT / wavelength
}
