//! Inverse problems: decay and multi-Lorentzian fits, density extraction
//! and pixel-grouped maps.

mod decay;
mod frames;
mod lorentz;
mod maps;

pub use decay::{fit_decay, DecayFitOptions, DecayTrace};
pub use frames::{
    group_counts, group_pixels, read_frames, synthesize_frames, write_frames_binary, write_frames_text,
    Grouping, PixelFrameSet, Tile,
};
pub use lorentz::{auto_peak_guesses, fit_lorentzians, PeakGuess};
pub use maps::{build_maps, MapConfig, MapInputs, Maps};

use crate::decoherence::dephasing_constant;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum FitFlag {
    /// Iteration limit reached or no further progress without meeting the
    /// gradient test; parameters are the best found.
    NotConverged,
    /// Oscillation amplitude indistinguishable from zero; the decay rate is
    /// meaningless.
    RateUnidentifiable,
    /// The trace covers less than one fitted decay constant.
    ShortSpan,
    /// Two peak centres closer than 0.1 HWHM (indices into sorted peaks).
    PeakCollapse(usize, usize),
    /// Peak height indistinguishable from zero.
    PeakUnidentifiable(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub residual_norm: f64,
    /// Largest Jacobian-column/residual cosine at the solution.
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub flags: Vec<FitFlag>,
    /// Cost after each accepted iteration.
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.values[k])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|k| self.std_errors[k])
    }

    pub fn has_flag(&self, f: &FitFlag) -> bool {
        self.flags.contains(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimate {
    pub ppm: f64,
    /// Set when the fitted rate does not exceed the reference 1/T2.
    pub below_reference: bool,
}

/// n_s = (rate − 1/T2_ref) / (K·P_s) with the rate taken from a decay fit
/// (parameter `rate`, s⁻¹).
pub fn extract_density(fit: &FitResult, t2_reference: f64, p_s: f64) -> Result<DensityEstimate> {
    let rate = fit
        .get("rate")
        .ok_or_else(|| Error::invalid("fit result has no `rate` parameter"))?;
    density_from_rate(rate, t2_reference, p_s)
}

/// [`extract_density`] on a bare rate (s⁻¹).
pub fn density_from_rate(rate: f64, t2_reference: f64, p_s: f64) -> Result<DensityEstimate> {
    if !(t2_reference > 0.0) || !(p_s > 0.0 && p_s <= 1.0) {
        return Err(Error::invalid("need T2_ref > 0 and P_s in (0, 1]"));
    }
    let excess = (rate - 1.0 / t2_reference) * 1e-6;
    if !(excess > 0.0) {
        return Ok(DensityEstimate {
            ppm: 0.0,
            below_reference: true,
        });
    }
    Ok(DensityEstimate {
        ppm: excess / (dephasing_constant() * p_s),
        below_reference: false,
    })
}
