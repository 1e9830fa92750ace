//! Flip-flop suppression factors and the bath correlation time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::constants::{dipolar_prefactor, mhz_to_angular, CARBON_DENSITY, G_DEFECT};
use crate::spectra::{species_lines, TransitionLine};
use crate::spinmodel::{DefectSpinModel, MagneticField};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BathEntry {
    pub model: DefectSpinModel,
    pub density_ppm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathComposition {
    pub entries: Vec<BathEntry>,
    /// Dephasing linewidth Γd, rad/s.
    pub gamma_d: f64,
    /// Lattice site density used for ppm conversion, m⁻³.
    pub lattice_density: f64,
}

impl BathComposition {
    pub fn new(entries: Vec<BathEntry>, gamma_d: f64) -> Self {
        Self {
            entries,
            gamma_d,
            lattice_density: CARBON_DENSITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_d > 0.0 && self.gamma_d.is_finite()) {
            return Err(Error::invalid("bath linewidth Γd must be positive"));
        }
        if !(self.lattice_density > 0.0) {
            return Err(Error::invalid("lattice density must be positive"));
        }
        for e in &self.entries {
            if !(e.density_ppm >= 0.0 && e.density_ppm.is_finite()) {
                return Err(Error::invalid(format!("{}: density must be ≥ 0", e.model.name)));
            }
        }
        Ok(())
    }

    pub fn total_ppm(&self) -> f64 {
        self.entries.iter().map(|e| e.density_ppm).sum()
    }

    /// Number density of entry `k`, m⁻³.
    pub fn number_density(&self, k: usize) -> f64 {
        self.entries[k].density_ppm * 1e-6 * self.lattice_density
    }
}

/// One pair of flip transitions on two bath spins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipFlopChannel {
    pub line_a: usize,
    pub line_b: usize,
    /// |f_a − f_b| in rad/s.
    pub detuning: f64,
    pub weight: f64,
}

fn flip_lines(lines: &[TransitionLine]) -> Vec<(f64, f64)> {
    let sel: Vec<_> = lines
        .iter()
        .filter(|l| l.electron_flip)
        .map(|l| (l.frequency, l.intensity))
        .collect();
    let total: f64 = sel.iter().map(|x| x.1).sum();
    sel.into_iter().map(|(f, w)| (f, w / total)).collect()
}

/// All channels between the electron-flip lines of two line lists.
pub fn channels(a: &[TransitionLine], b: &[TransitionLine]) -> Vec<FlipFlopChannel> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for (i, la) in a.iter().enumerate().filter(|(_, l)| l.electron_flip) {
        for (j, lb) in b.iter().enumerate().filter(|(_, l)| l.electron_flip) {
            out.push(FlipFlopChannel {
                line_a: i,
                line_b: j,
                detuning: mhz_to_angular((la.frequency - lb.frequency).abs()),
                weight: la.intensity * lb.intensity,
            });
        }
    }
    out
}

/// Σ w_a w_b Γd²/(Γd² + δ²) over electron-flip lines of two species, with
/// each species' weights renormalised to one.
pub fn alpha_between(a: &[TransitionLine], b: &[TransitionLine], gamma_d: f64) -> Result<f64> {
    if !(gamma_d > 0.0) {
        return Err(Error::invalid("Γd must be positive"));
    }
    let fa = flip_lines(a);
    let fb = flip_lines(b);
    for (f, l) in [(&fa, a), (&fb, b)] {
        if f.is_empty() {
            let name = l.first().map(|l| l.species_name.clone()).unwrap_or_default();
            return Err(Error::NoTransitions(name));
        }
    }
    let g2 = gamma_d * gamma_d;
    let mut sum = 0.0;
    for &(f1, w1) in &fa {
        for &(f2, w2) in &fb {
            let d = mhz_to_angular(f1 - f2);
            sum += w1 * w2 * g2 / (g2 + d * d);
        }
    }
    Ok(sum)
}

/// Suppression factor from an explicit line list.
pub fn alpha_from_lines(lines: &[TransitionLine], gamma_d: f64) -> Result<f64> {
    alpha_between(lines, lines, gamma_d)
}

/// Suppression factor by exact diagonalization of every orientation.
pub fn alpha_exact(model: &DefectSpinModel, field: &MagneticField, gamma_d: f64) -> Result<f64> {
    alpha_from_lines(&species_lines(model, field)?, gamma_d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Intensity-weighted centre, MHz.
    pub center: f64,
    pub intensity: f64,
}

/// Single-linkage clustering of lines whose neighbouring frequencies differ
/// by at most `tolerance` MHz. Peaks are returned in ascending frequency.
pub fn cluster_peaks(lines: &[TransitionLine], tolerance: f64) -> Result<Vec<Peak>> {
    if !(tolerance > 0.0) {
        return Err(Error::invalid("cluster tolerance must be positive"));
    }
    let mut sorted: Vec<(f64, f64)> = lines.iter().map(|l| (l.frequency, l.intensity)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut peaks: Vec<Peak> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for (f, w) in sorted {
        match peaks.last_mut() {
            Some(p) if f - last <= tolerance => {
                p.center += f * w;
                p.intensity += w;
            }
            _ => peaks.push(Peak {
                center: f * w,
                intensity: w,
            }),
        }
        last = f;
    }
    for p in &mut peaks {
        if p.intensity > 0.0 {
            p.center /= p.intensity;
        }
    }
    Ok(peaks)
}

/// Σ_k p_k² over peaks built by [`cluster_peaks`]; intensities are
/// normalised first.
pub fn alpha_peaks(lines: &[TransitionLine], cluster_tolerance: f64) -> Result<f64> {
    let peaks = cluster_peaks(lines, cluster_tolerance)?;
    let total: f64 = peaks.iter().map(|p| p.intensity).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("line list has no intensity"));
    }
    Ok(peaks.iter().map(|p| (p.intensity / total).powi(2)).sum())
}

/// Hand estimate for a spin-1/2, I = 1 defect with four equally populated
/// orientations of which one is aligned with the field. Pairs in the same
/// orientation class flip-flop when the nuclear projections agree (3 of 9
/// combinations); one extra aligned/misaligned combination is accidentally
/// degenerate. State mixing is ignored.
pub fn alpha_closed_form_jt() -> f64 {
    let aligned = 1.0 / 4.0;
    let misaligned = 3.0 / 4.0;
    3.0 / 9.0 * (aligned * aligned + misaligned * misaligned) + 1.0 / 9.0 * (2.0 * aligned * misaligned)
}

/// R = C⊥² Γd / (Γd² + δ²).
pub fn pair_flipflop_rate(c_perp: f64, delta: f64, gamma_d: f64) -> f64 {
    c_perp * c_perp * gamma_d / (gamma_d * gamma_d + delta * delta)
}

/// Suppression factors α_ab between all bath species pairs.
pub fn alpha_matrix(bath: &BathComposition, field: &MagneticField) -> Result<Vec<Vec<f64>>> {
    let lines = bath
        .entries
        .iter()
        .map(|e| species_lines(&e.model, field))
        .collect::<Result<Vec<_>>>()?;
    lines
        .iter()
        .map(|a| lines.iter().map(|b| alpha_between(a, b, bath.gamma_d)).collect())
        .collect()
}

/// Expected number of partner spins explicitly placed around the probe.
pub const MC_NEIGHBOURS: f64 = 64.0;
/// Samples per group in the median-of-means estimator.
pub const MC_GROUP: usize = 8;
const MC_SHARD: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationTime {
    /// τc, s; +∞ for an empty bath.
    pub tau_c: f64,
    pub tau_c_std_error: f64,
    /// 1/τc, s⁻¹.
    pub rate: f64,
    pub rate_std_error: f64,
    pub samples: usize,
}

impl CorrelationTime {
    pub fn is_infinite(&self) -> bool {
        self.tau_c.is_infinite()
    }
}

/// Monte-Carlo estimate of 1/τc = Σ_j α R_ff(j) around a bath spin.
///
/// Partners of each species are Poisson-placed in a sphere that holds
/// [`MC_NEIGHBOURS`] spins on average, with C⊥ = J0 (3cos²θ − 1)/(4r³) and θ
/// the angle to the field; the mean contribution from outside the sphere is
/// added analytically. Probe species, orientation and nuclear sublevels
/// enter through the population-averaged α matrix, so each sample is a sum
/// of ᾱ_b C⊥²/Γd. The estimate is the median of group means; each shard of
/// samples draws from its own ChaCha stream so the result does not depend
/// on thread count.
pub fn bath_correlation_time(
    bath: &BathComposition,
    field: &MagneticField,
    sample_count: usize,
    seed: u64,
) -> Result<CorrelationTime> {
    bath.validate()?;
    if sample_count < 1000 {
        return Err(Error::invalid("sample_count must be at least 1000"));
    }
    let densities: Vec<f64> = (0..bath.entries.len()).map(|k| bath.number_density(k)).collect();
    let total: f64 = densities.iter().sum();
    if total <= 0.0 {
        return Ok(CorrelationTime {
            tau_c: f64::INFINITY,
            tau_c_std_error: 0.0,
            rate: 0.0,
            rate_std_error: 0.0,
            samples: 0,
        });
    }
    let alpha = alpha_matrix(bath, field)?;
    let weights: Vec<f64> = (0..densities.len())
        .map(|b| (0..densities.len()).map(|s| densities[s] / total * alpha[s][b]).sum())
        .collect();
    correlation_time_from_weights(&densities, &weights, bath.gamma_d, sample_count, seed)
}

/// Monte-Carlo core: per-species number densities (m⁻³) and effective
/// suppression weights ᾱ_b.
pub fn correlation_time_from_weights(
    densities: &[f64],
    weights: &[f64],
    gamma_d: f64,
    sample_count: usize,
    seed: u64,
) -> Result<CorrelationTime> {
    let total: f64 = densities.iter().sum();
    let j0 = dipolar_prefactor(G_DEFECT);
    let radius = (3.0 * MC_NEIGHBOURS / (4.0 * PI * total)).cbrt();
    let volume = 4.0 / 3.0 * PI * radius.powi(3);
    // ⟨(3cos²θ − 1)²⟩ = 4/5 over the sphere; ∫_R^∞ 4πr² dr / (16 r⁶).
    let tails: Vec<f64> = densities
        .iter()
        .map(|n| n * PI * j0 * j0 / (15.0 * radius.powi(3)))
        .collect();
    let poissons: Vec<Option<Poisson<f64>>> = densities
        .iter()
        .map(|&n| (n * volume > 0.0).then(|| Poisson::new(n * volume).unwrap()))
        .collect();

    let groups = sample_count.div_ceil(MC_GROUP);
    let samples = groups * MC_GROUP;
    let shards = samples.div_ceil(MC_SHARD);
    let mut means: Vec<f64> = (0..shards)
        .into_par_iter()
        .flat_map_iter(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard as u64);
            let n = MC_SHARD.min(samples - shard * MC_SHARD);
            let mut out = Vec::with_capacity(n / MC_GROUP);
            let mut acc = 0.0;
            for i in 0..n {
                let mut rate = 0.0;
                for (b, p) in poissons.iter().enumerate() {
                    let mut s = tails[b];
                    if let Some(p) = p {
                        let count = p.sample(&mut rng) as usize;
                        for _ in 0..count {
                            let r = radius * rng.random::<f64>().cbrt();
                            let c: f64 = rng.random_range(-1.0..1.0);
                            let cp = j0 * (3.0 * c * c - 1.0) / (4.0 * r * r * r);
                            s += cp * cp;
                        }
                    }
                    rate += weights[b] * s;
                }
                acc += rate / gamma_d;
                if (i + 1) % MC_GROUP == 0 {
                    out.push(acc / MC_GROUP as f64);
                    acc = 0.0;
                }
            }
            out
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let g = means.len();
    let median = if g % 2 == 1 {
        means[g / 2]
    } else {
        0.5 * (means[g / 2 - 1] + means[g / 2])
    };
    // Distribution-free interval for the median: order statistics g/2 ± √g/2.
    let half = (g as f64).sqrt() / 2.0;
    let lo = ((g as f64 / 2.0 - half).floor().max(0.0)) as usize;
    let hi = ((g as f64 / 2.0 + half).ceil() as usize).min(g - 1);
    let rate_se = 0.5 * (means[hi] - means[lo]);
    Ok(CorrelationTime {
        tau_c: 1.0 / median,
        tau_c_std_error: rate_se / (median * median),
        rate: median,
        rate_std_error: rate_se,
        samples,
    })
}
