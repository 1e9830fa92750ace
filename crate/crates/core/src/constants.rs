//! Physical constants (CODATA 2018) and unit conversions.

use std::f64::consts::TAU;

/// Vacuum permeability, N/A².
pub const MU_0: f64 = 1.256_637_062_12e-6;
/// Bohr magneton, J/T.
pub const MU_B: f64 = 9.274_010_078_3e-24;
/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Free-electron g-factor magnitude.
pub const G_FREE: f64 = 2.002_319_304_36;
/// g-factor used for g ≈ 2 bath defects; gives γe/2π = 2.8024 MHz/G.
pub const G_DEFECT: f64 = 2.0023;

/// Carbon site density of diamond, m⁻³.
pub const CARBON_DENSITY: f64 = 1.76e29;
/// Number density corresponding to 1 ppm of carbon sites, m⁻³.
pub const PPM: f64 = CARBON_DENSITY * 1e-6;

pub const GAUSS: f64 = 1e-4;

/// ¹H gyromagnetic ratio, rad/(s·T).
pub const GAMMA_1H: f64 = TAU * 42.577_478e6;
/// ¹⁴N gyromagnetic ratio, rad/(s·T).
pub const GAMMA_14N: f64 = TAU * 3.077_706e6;
/// ¹⁵N gyromagnetic ratio, rad/(s·T) (negative).
pub const GAMMA_15N: f64 = TAU * -4.316_4e6;

/// Electron gyromagnetic ratio for g-factor `g`, rad/(s·T).
pub fn electron_gyromagnetic(g: f64) -> f64 {
    g * MU_B / HBAR
}

/// Gyromagnetic ratio of the NV centre / g ≈ 2 bath spins, rad/(s·T).
pub fn gamma_e() -> f64 {
    electron_gyromagnetic(G_DEFECT)
}

#[inline]
pub fn mhz_to_angular(mhz: f64) -> f64 {
    TAU * mhz * 1e6
}

#[inline]
pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (TAU * 1e6)
}

#[inline]
pub fn ppm_to_density(ppm: f64) -> f64 {
    ppm * PPM
}

#[inline]
pub fn density_to_ppm(n: f64) -> f64 {
    n / PPM
}

/// Secular dipolar prefactor J0 = μ0 (g μB)² / (4π ħ), rad·m³/s, for two
/// g-factor `g` electron spins. About (2π) 52 MHz·nm³ for g ≈ 2.
pub fn dipolar_prefactor(g: f64) -> f64 {
    MU_0 * (g * MU_B).powi(2) / (2.0 * TAU * HBAR)
}
