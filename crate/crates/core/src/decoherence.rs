//! Central-spin decoherence under Ramsey, echo and DEER sequences.

use std::f64::consts::{SQRT_2, TAU};

use crate::constants::{gamma_e, HBAR, MU_0, MU_B, PPM};
use crate::flipflop::{bath_correlation_time, BathComposition, CorrelationTime};
use crate::quadrature::integrate;
use crate::spinmodel::MagneticField;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// ⟨B1²⟩, T².
    pub b1_rms_sq: f64,
    /// Correlation time τc, s.
    pub tau_c: f64,
    /// Centre of the noise spectrum ω_L, rad/s.
    pub larmor_omega: f64,
    /// Gyromagnetic ratio of the probe, rad/(s·T).
    pub gyro_e: f64,
}

impl NoiseModel {
    pub fn new(b1_rms_sq: f64, tau_c: f64) -> Self {
        Self {
            b1_rms_sq,
            tau_c,
            larmor_omega: 0.0,
            gyro_e: gamma_e(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.b1_rms_sq >= 0.0 && self.tau_c > 0.0 && self.gyro_e >= 0.0 && self.larmor_omega.is_finite()) {
            return Err(Error::invalid("noise model needs ⟨B1²⟩ ≥ 0, τc > 0, γ ≥ 0"));
        }
        Ok(())
    }

    /// γ²⟨B1²⟩, rad²/s².
    pub fn strength(&self) -> f64 {
        self.gyro_e * self.gyro_e * self.b1_rms_sq
    }

    /// Two-sided spectrum S(ω) = γ²⟨B1²⟩τc [L(ω − ω_L) + L(ω + ω_L)] with
    /// L(x) = 1/(1 + x²τc²).
    pub fn spectrum(&self, omega: f64) -> f64 {
        let t = self.tau_c;
        let l = |x: f64| 1.0 / (1.0 + (x * t).powi(2));
        self.strength() * t * (l(omega - self.larmor_omega) + l(omega + self.larmor_omega))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    Ramsey,
    Echo,
    /// Echo on the probe plus an inversion pulse on one bath species; the
    /// probe itself sees the echo filter.
    Deer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub kind: SequenceKind,
    /// Recoupled species and its resonance (MHz); required for DEER.
    pub recoupled: Option<(String, f64)>,
    /// P_s, the probability that the bath pulse inverts a recoupled spin.
    pub inversion_probability: f64,
    pub total_time: f64,
}

impl PulseSequence {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.inversion_probability) {
            return Err(Error::invalid("inversion probability must lie in [0, 1]"));
        }
        if self.kind == SequenceKind::Deer && self.recoupled.is_none() {
            return Err(Error::invalid("DEER needs a recoupled species"));
        }
        if !(self.total_time > 0.0) {
            return Err(Error::invalid("sequence time must be positive"));
        }
        Ok(())
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// |F(ω)|²: Ramsey 4 sin²(ωT/2)/ω², echo (and DEER probe) 16 sin⁴(ωT/4)/ω².
pub fn filter_function(kind: SequenceKind, omega: f64, t: f64) -> f64 {
    match kind {
        SequenceKind::Ramsey => {
            let s = sinc(omega * t / 2.0);
            t * t * s * s
        }
        SequenceKind::Echo | SequenceKind::Deer => {
            let u = omega * t / 4.0;
            let s = sinc(u) * u.sin();
            t * t * s * s
        }
    }
}

/// Relative accuracy requested from [`chi_numeric`].
pub const CHI_REL_TOL: f64 = 1e-6;

/// χ(T) = (1/2π) ∫₀^∞ S(ω) |F(ω)|² dω by adaptive quadrature.
///
/// The half-line is cut into panels one filter period wide (with extra
/// breakpoints around the Lorentzian features) until the remaining tail,
/// added in closed form from the ω⁻⁴ asymptote with the filter replaced by
/// its period average, falls well below the tolerance.
pub fn chi_numeric(noise: &NoiseModel, kind: SequenceKind, t: f64) -> Result<f64> {
    noise.validate()?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid("sequence time must be positive"));
    }
    if noise.strength() == 0.0 {
        return Ok(0.0);
    }
    let tau = noise.tau_c;
    let wl = noise.larmor_omega.abs();
    let (period, mean_filter) = match kind {
        SequenceKind::Ramsey => (TAU / t, 4.0 * 0.5),
        SequenceKind::Echo | SequenceKind::Deer => (2.0 * TAU / t, 16.0 * 3.0 / 8.0),
    };
    let integrand = |w: f64| noise.spectrum(w) * filter_function(kind, w, t);

    let mut breaks: Vec<f64> = [0.01, 0.1, 1.0, 10.0]
        .iter()
        .flat_map(|k| [k / tau, wl - k / tau, wl + k / tau])
        .chain(std::iter::once(wl))
        .filter(|&w| w > 0.0)
        .collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let strength = noise.strength();
    let tail = |w: f64| mean_filter * 2.0 * strength / (3.0 * tau * w.powi(3)) / TAU;
    let mut total: f64 = 0.0;
    let mut err = 0.0;
    let mut lo = 0.0;
    let mut next_break = 0;
    loop {
        let mut hi = lo + period;
        while next_break < breaks.len() && breaks[next_break] <= lo {
            next_break += 1;
        }
        if next_break < breaks.len() && breaks[next_break] < hi {
            hi = breaks[next_break];
        }
        let q = integrate(integrand, lo, hi, 1e-10, 1e-12 * total, 2000)?;
        total += q.value / TAU;
        err += q.error / TAU;
        lo = hi;
        let beyond = lo > 10.0 * (1.0 / tau + wl) && lo > 4.0 * period;
        if beyond {
            let tl = tail(lo);
            let tail_err = tl * (period / lo + ((wl * wl) + 1.0 / (tau * tau)) * 3.0 / (lo * lo));
            if tail_err < 0.05 * CHI_REL_TOL * total {
                total += tl;
                err += tail_err;
                break;
            }
        }
        if lo > 1e9 * period {
            return Err(Error::Quadrature {
                estimate: total,
                achieved: err + tail(lo),
            });
        }
    }
    if err > CHI_REL_TOL * total.abs() {
        return Err(Error::Quadrature {
            estimate: total,
            achieved: err,
        });
    }
    Ok(total)
}

/// x − 1 + e^{−x}, accurate for small x.
fn ramsey_shape(x: f64) -> f64 {
    if x < 0.1 {
        let (mut term, mut sum) = (1.0, 0.0);
        for k in 1..30 {
            term *= -x / k as f64;
            if k >= 2 {
                sum += term;
            }
        }
        sum
    } else {
        x + (-x).exp_m1()
    }
}

/// x − 3 − e^{−x} + 4e^{−x/2}, accurate for small x.
fn echo_shape(x: f64) -> f64 {
    if x < 1.0 {
        // Σ_{k≥3} (−1)^k (4·2^{−k} − 1) x^k / k!
        let mut sum = 0.0;
        let mut pow_fact = x * x / 2.0;
        for k in 3..40 {
            pow_fact *= x / k as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (4.0 * 0.5f64.powi(k) - 1.0) * pow_fact;
        }
        sum
    } else {
        x - 3.0 - (-x).exp() + 4.0 * (-x / 2.0).exp()
    }
}

/// χ_R = γ²⟨B1²⟩τc² [T/τc − 1 + e^{−T/τc}] (valid for ω_L = 0).
pub fn chi_closed_ramsey(noise: &NoiseModel, t: f64) -> f64 {
    noise.strength() * noise.tau_c.powi(2) * ramsey_shape(t / noise.tau_c)
}

/// χ_E = γ²⟨B1²⟩τc² [T/τc − 3 − e^{−T/τc} + 4e^{−T/2τc}] (valid for ω_L = 0).
pub fn chi_closed_echo(noise: &NoiseModel, t: f64) -> f64 {
    noise.strength() * noise.tau_c.powi(2) * echo_shape(t / noise.tau_c)
}

/// ∂χ_R/∂T = γ²⟨B1²⟩τc (1 − e^{−T/τc}).
pub fn chi_closed_ramsey_dt(noise: &NoiseModel, t: f64) -> f64 {
    -noise.strength() * noise.tau_c * (-t / noise.tau_c).exp_m1()
}

/// ∂χ_E/∂T = γ²⟨B1²⟩τc (1 + e^{−T/τc} − 2e^{−T/2τc}).
pub fn chi_closed_echo_dt(noise: &NoiseModel, t: f64) -> f64 {
    let h = (-t / (2.0 * noise.tau_c)).exp_m1();
    noise.strength() * noise.tau_c * h * h
}

/// T2* = √2 / (γ √⟨B1²⟩); +∞ without noise.
pub fn t2_star(b1_rms_sq: f64, gyro: f64) -> f64 {
    if b1_rms_sq <= 0.0 {
        return f64::INFINITY;
    }
    SQRT_2 / (gyro * b1_rms_sq.sqrt())
}

/// T2 = (12 τc / (γ²⟨B1²⟩))^{1/3}; +∞ without noise.
pub fn t2(b1_rms_sq: f64, tau_c: f64, gyro: f64) -> f64 {
    if b1_rms_sq <= 0.0 {
        return f64::INFINITY;
    }
    (12.0 * tau_c / (gyro * gyro * b1_rms_sq)).cbrt()
}

/// Dipolar dephasing prefactor 2π μ0 μB² g_A g_s |σ| / (9√3 ħ), m³/s.
pub fn dephasing_coefficient(g_a: f64, g_s: f64, sigma: f64) -> f64 {
    TAU * MU_0 * MU_B * MU_B * g_a * g_s * sigma.abs() / (9.0 * 3f64.sqrt() * HBAR)
}

/// Dephasing rate per ppm of recoupled spins, μs⁻¹/ppm (g = 2, |σ| = 1/2,
/// 1 ppm = 1.76e23 m⁻³). About 0.1455.
pub fn dephasing_constant() -> f64 {
    dephasing_coefficient(2.0, 2.0, 0.5) * PPM * 1e-6
}

/// 1/Ts* = K·P_s·n_s in μs⁻¹.
pub fn density_to_dephasing(n_s_ppm: f64, p_s: f64) -> f64 {
    dephasing_constant() * p_s * n_s_ppm
}

/// Inverse of [`density_to_dephasing`]; ppm.
pub fn dephasing_to_density(rate_per_us: f64, p_s: f64) -> f64 {
    rate_per_us / (dephasing_constant() * p_s)
}

/// S(T) = c0 + (c/2) e^{−T(1/T2 + 1/Ts*)} cos(dω T + φ0).
pub fn deer_signal(t: f64, ts_star: f64, t2: f64, c0: f64, c: f64, d_omega: f64, phi0: f64) -> f64 {
    deer_signal_rate(t, 1.0 / t2 + 1.0 / ts_star, c0, c, d_omega, phi0)
}

/// [`deer_signal`] with the combined decay rate.
pub fn deer_signal_rate(t: f64, rate: f64, c0: f64, c: f64, d_omega: f64, phi0: f64) -> f64 {
    c0 + 0.5 * c * (-t * rate).exp() * (d_omega * t + phi0).cos()
}

/// Default DEER detuning dω = (2π) 1 MHz.
pub const DEER_D_OMEGA: f64 = TAU * 1e6;

/// ⟨B1²⟩ produced by `total_ppm` of g ≈ 2 spins: the rms field is set so
/// that γ√⟨B1²⟩ equals the full width 2K·n of the dilute dipolar line.
pub fn b1_rms_sq_from_density(total_ppm: f64) -> f64 {
    let width = 2.0 * dephasing_constant() * 1e6 * total_ppm;
    (width / gamma_e()).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherencePrediction {
    pub t2_star: f64,
    pub t2: f64,
    pub tau_c: CorrelationTime,
    pub b1_rms_sq: f64,
    pub gamma_d: f64,
    /// (species, Ts*) for every bath species, s.
    pub ts_star: Vec<(String, f64)>,
}

impl CoherencePrediction {
    /// DEER trace recoupling species `k` (no oscillation offset).
    pub fn deer_curve(&self, k: usize, times: &[f64], c0: f64, c: f64, d_omega: f64, phi0: f64) -> Vec<f64> {
        let ts = self.ts_star[k].1;
        times
            .iter()
            .map(|&t| deer_signal(t, ts, self.t2, c0, c, d_omega, phi0))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinewidthScaling {
    /// Γd of the "after" bath scales with its total density.
    Density,
    /// Both baths keep their own Γd.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioOptions {
    pub samples: usize,
    pub seed: u64,
    pub inversion_probability: f64,
    pub linewidth_scaling: LinewidthScaling,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self {
            samples: 20_000,
            seed: 0,
            inversion_probability: 1.0,
            linewidth_scaling: LinewidthScaling::Density,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPrediction {
    pub before: CoherencePrediction,
    pub after: CoherencePrediction,
}

impl ScenarioPrediction {
    /// (after − before)/before for T2*.
    pub fn t2_star_change(&self) -> f64 {
        self.after.t2_star / self.before.t2_star - 1.0
    }

    pub fn t2_change(&self) -> f64 {
        self.after.t2 / self.before.t2 - 1.0
    }
}

/// Coherence times of the probe in one bath.
pub fn predict(bath: &BathComposition, field: &MagneticField, opts: &ScenarioOptions) -> Result<CoherencePrediction> {
    let total = bath.total_ppm();
    let b1 = b1_rms_sq_from_density(total);
    let tau_c = bath_correlation_time(bath, field, opts.samples, opts.seed)?;
    let g = gamma_e();
    let ts_star = bath
        .entries
        .iter()
        .map(|e| {
            let rate = density_to_dephasing(e.density_ppm, opts.inversion_probability) * 1e6;
            (e.model.name.clone(), if rate > 0.0 { 1.0 / rate } else { f64::INFINITY })
        })
        .collect();
    Ok(CoherencePrediction {
        t2_star: t2_star(b1, g),
        t2: t2(b1, tau_c.tau_c, g),
        tau_c,
        b1_rms_sq: b1,
        gamma_d: bath.gamma_d,
        ts_star,
    })
}

/// Before/after coherence prediction for a density redistribution.
///
/// With [`LinewidthScaling::Density`] the after-bath Γd is the before-bath
/// Γd times the ratio of total densities.
pub fn predict_scenario(
    before: &BathComposition,
    after: &BathComposition,
    field: &MagneticField,
    opts: &ScenarioOptions,
) -> Result<ScenarioPrediction> {
    before.validate()?;
    after.validate()?;
    let mut after = after.clone();
    if opts.linewidth_scaling == LinewidthScaling::Density {
        let (nb, na) = (before.total_ppm(), after.total_ppm());
        if nb > 0.0 && na > 0.0 {
            after.gamma_d = before.gamma_d * na / nb;
        }
    }
    Ok(ScenarioPrediction {
        before: predict(before, field, opts)?,
        after: predict(&after, field, opts)?,
    })
}
