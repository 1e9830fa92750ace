//! Allowed-transition line lists and Lorentzian-broadened spectra.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;

use crate::constants::angular_to_mhz;
use crate::spinmodel::{solve, DefectSpinModel, EigenSystem, MagneticField};
use crate::{Error, Result};

/// Lines weaker than this fraction of the strongest line are dropped.
pub const PRUNE_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLine {
    /// Transition frequency, MHz.
    pub frequency: f64,
    /// Normalised weight; a species' lines sum to one.
    pub intensity: f64,
    /// (lower, upper) eigenstate indices within the orientation block.
    pub level_pair: (usize, usize),
    pub jt_index: usize,
    pub species_name: String,
    /// True when the electron spin projection along the field changes by
    /// at least 1/2 (always true at zero field).
    pub electron_flip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Ascending frequencies, MHz.
    pub freq_grid: Vec<f64>,
    pub amplitude: Vec<f64>,
    /// Dephasing linewidth Γd, rad/s.
    pub gamma_d: f64,
}

/// Unit vector perpendicular to `b`, chosen deterministically.
pub fn drive_direction(b: &Vector3<f64>) -> Vector3<f64> {
    let b = b.normalize();
    let t = if b.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    (t - b * t.dot(&b)).normalize()
}

fn project(ops: &[DMatrix<Complex64>; 3], v: &Vector3<f64>) -> DMatrix<Complex64> {
    &ops[0] * Complex64::from(v.x) + &ops[1] * Complex64::from(v.y) + &ops[2] * Complex64::from(v.z)
}

/// Transition lines of `model` from its per-orientation eigen-systems.
///
/// Every eigenstate is equally populated (fully mixed), orientations are
/// weighted by their populations, and the drive is linear along an axis
/// perpendicular to the field.
pub fn transition_lines(
    eigs: &[EigenSystem],
    model: &DefectSpinModel,
    field: &MagneticField,
) -> Result<Vec<TransitionLine>> {
    let s_ops = model.electron_operators();
    let drive = project(&s_ops, &drive_direction(&field.direction));
    let along = project(&s_ops, &field.direction);
    let dim = model.dimension();
    let mut lines = Vec::new();
    for eig in eigs {
        let pop = model
            .orientations
            .get(eig.jt_index)
            .ok_or_else(|| Error::invalid(format!("orientation index {} out of range", eig.jt_index)))?
            .population;
        if eig.states.nrows() != dim {
            return Err(Error::invalid("eigen-system dimension does not match the model"));
        }
        let v = &eig.states;
        let m = v.adjoint() * &drive * v;
        let sb = v.adjoint() * &along * v;
        let range = eig.energies[dim - 1] - eig.energies[0];
        for i in 0..dim {
            for j in i + 1..dim {
                let omega = eig.energies[j] - eig.energies[i];
                if omega <= 1e-12 * range {
                    continue;
                }
                let w = pop / dim as f64 * m[(j, i)].norm_sqr();
                let flip = field.magnitude == 0.0 || (sb[(j, j)].re - sb[(i, i)].re).abs() >= 0.5;
                lines.push(TransitionLine {
                    frequency: angular_to_mhz(omega),
                    intensity: w,
                    level_pair: (i, j),
                    jt_index: eig.jt_index,
                    species_name: model.name.clone(),
                    electron_flip: flip,
                });
            }
        }
    }
    let max = lines.iter().map(|l| l.intensity).fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::NoTransitions(model.name.clone()));
    }
    lines.retain(|l| l.intensity >= PRUNE_FRACTION * max);
    let total: f64 = lines.iter().map(|l| l.intensity).sum();
    for l in &mut lines {
        l.intensity /= total;
    }
    Ok(lines)
}

/// Diagonalise every orientation of `model` and return its line list.
pub fn species_lines(model: &DefectSpinModel, field: &MagneticField) -> Result<Vec<TransitionLine>> {
    let eigs = (0..model.orientations.len())
        .map(|k| solve(model, field, k))
        .collect::<Result<Vec<_>>>()?;
    transition_lines(&eigs, model, field)
}

/// Unit-peak Lorentzian with half width `hwhm` (same units as `x`).
#[inline]
pub fn lorentzian(x: f64, hwhm: f64) -> f64 {
    let u = x / hwhm;
    1.0 / (1.0 + u * u)
}

fn check_grid(grid: &[f64], gamma_d: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("frequency grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("frequency grid must be strictly ascending"));
    }
    if !(gamma_d > 0.0 && gamma_d.is_finite()) {
        return Err(Error::invalid(format!("linewidth Γd must be positive, got {gamma_d}")));
    }
    Ok(())
}

/// Σ intensity · L(f − f_line) with HWHM = Γd/2π (MHz).
pub fn synthesize_spectrum(lines: &[TransitionLine], grid: &[f64], gamma_d: f64) -> Result<Spectrum> {
    check_grid(grid, gamma_d)?;
    let hwhm = angular_to_mhz(gamma_d);
    let amplitude = grid
        .iter()
        .map(|&f| {
            lines
                .iter()
                .map(|l| l.intensity * lorentzian(f - l.frequency, hwhm))
                .sum()
        })
        .collect();
    Ok(Spectrum {
        freq_grid: grid.to_vec(),
        amplitude,
        gamma_d,
    })
}

/// Density-weighted sum of single-species spectra.
pub fn synthesize_mixture(
    species: &[(Vec<TransitionLine>, f64)],
    grid: &[f64],
    gamma_d: f64,
) -> Result<Spectrum> {
    check_grid(grid, gamma_d)?;
    let mut amplitude = vec![0.0; grid.len()];
    for (lines, density) in species {
        if !(*density >= 0.0) {
            return Err(Error::invalid("species density must be non-negative"));
        }
        let s = synthesize_spectrum(lines, grid, gamma_d)?;
        for (a, x) in amplitude.iter_mut().zip(&s.amplitude) {
            *a += density * x;
        }
    }
    Ok(Spectrum {
        freq_grid: grid.to_vec(),
        amplitude,
        gamma_d,
    })
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(stop > start) {
        return Err(Error::invalid("grid needs ≥ 2 points and stop > start"));
    }
    let step = (stop - start) / (points - 1) as f64;
    Ok((0..points).map(|i| start + step * i as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::mhz_to_angular;

    fn line(f: f64, w: f64) -> TransitionLine {
        TransitionLine {
            frequency: f,
            intensity: w,
            level_pair: (0, 1),
            jt_index: 0,
            species_name: "t".into(),
            electron_flip: true,
        }
    }

    #[test]
    fn unit_peak_and_linearity() {
        let g = mhz_to_angular(1.0);
        let s = synthesize_spectrum(&[line(669.0, 0.7)], &[669.0], g).unwrap();
        assert_eq!(s.amplitude[0], 0.7);
        let s2 = synthesize_spectrum(&[line(669.0, 0.7), line(669.0, 0.7)], &[669.0], g).unwrap();
        assert_eq!(s2.amplitude[0], 1.4);
        let half = synthesize_spectrum(&[line(669.0, 1.0)], &[670.0], g).unwrap();
        assert!((half.amplitude[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grid_errors() {
        let g = mhz_to_angular(1.0);
        assert!(synthesize_spectrum(&[], &[], g).is_err());
        assert!(synthesize_spectrum(&[], &[1.0], 0.0).is_err());
        assert!(synthesize_spectrum(&[], &[2.0, 1.0], g).is_err());
    }

    #[test]
    fn drive_is_perpendicular() {
        for b in [Vector3::x(), Vector3::new(1.0, 1.0, 1.0), Vector3::z()] {
            let d = drive_direction(&b);
            assert!(d.dot(&b).abs() < 1e-15 && (d.norm() - 1.0).abs() < 1e-15);
        }
    }
}
