use super::{density_from_rate, fit_decay, group_pixels, DecayFitOptions, FitFlag, FitResult, Grouping, PixelFrameSet};
use crate::decoherence::DEER_D_OMEGA;
use crate::Result;

/// Frame sets for one field of view. Any may be absent; the matching maps
/// are then fully masked.
#[derive(Debug, Clone, Copy, Default)]
pub struct MapInputs<'a> {
    pub deer: Option<&'a PixelFrameSet>,
    pub echo: Option<&'a PixelFrameSet>,
    pub ramsey: Option<&'a PixelFrameSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapConfig {
    pub d_omega: f64,
    pub pin_d_omega: bool,
    /// Reference echo time used where no echo fit is available, s.
    pub t2_reference: f64,
    pub inversion_probability: f64,
    /// Contrast of an unperturbed reference; the contrast map is c / c_ref.
    pub contrast_reference: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            d_omega: DEER_D_OMEGA,
            pin_d_omega: false,
            t2_reference: 10e-6,
            inversion_probability: 1.0,
            contrast_reference: 1.0,
        }
    }
}

/// Row-major maps over the tile grid; `None` marks a masked cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Maps {
    pub shape: (usize, usize),
    /// Recoupled-species density, ppm.
    pub density: Vec<Option<f64>>,
    /// s.
    pub t2_star: Vec<Option<f64>>,
    /// s.
    pub t2: Vec<Option<f64>>,
    /// DEER contrast relative to the reference.
    pub contrast: Vec<Option<f64>>,
}

fn usable(fit: &FitResult) -> Option<&FitResult> {
    let bad = fit
        .flags
        .iter()
        .any(|f| matches!(f, FitFlag::NotConverged | FitFlag::RateUnidentifiable));
    (!bad && fit.get("rate").is_some_and(|r| r > 0.0)).then_some(fit)
}

fn fit_all(frames: Option<&PixelFrameSet>, grouping: &Grouping, cfg: &MapConfig) -> Result<Vec<Option<FitResult>>> {
    let n = grouping.tiles.len();
    let Some(frames) = frames else {
        return Ok(vec![None; n]);
    };
    let opts = DecayFitOptions {
        pin_d_omega: cfg.pin_d_omega,
        ..DecayFitOptions::default()
    };
    Ok(group_pixels(frames, grouping, cfg.d_omega)?
        .iter()
        .map(|t| fit_decay(t, &opts).ok().and_then(|f| usable(&f).cloned()))
        .collect())
}

/// Fit every pixel group and assemble density, T2*, T2 and contrast maps.
///
/// A cell is masked when its fit fails, does not converge, or cannot
/// identify a decay rate. Density uses the cell's own echo T2 when
/// available and `t2_reference` otherwise.
pub fn build_maps(inputs: &MapInputs, grouping: &Grouping, cfg: &MapConfig) -> Result<Maps> {
    let deer = fit_all(inputs.deer, grouping, cfg)?;
    let echo = fit_all(inputs.echo, grouping, cfg)?;
    let ramsey = fit_all(inputs.ramsey, grouping, cfg)?;
    let inv_rate = |f: &Option<FitResult>| f.as_ref().and_then(|f| f.get("rate")).map(|r| 1.0 / r);
    let t2: Vec<Option<f64>> = echo.iter().map(inv_rate).collect();
    let t2_star = ramsey.iter().map(inv_rate).collect();
    let density = deer
        .iter()
        .zip(&t2)
        .map(|(d, t2)| {
            let rate = d.as_ref()?.get("rate")?;
            let est = density_from_rate(rate, t2.unwrap_or(cfg.t2_reference), cfg.inversion_probability).ok()?;
            Some(est.ppm)
        })
        .collect();
    let contrast = deer
        .iter()
        .map(|d| d.as_ref().and_then(|f| f.get("c")).map(|c| c / cfg.contrast_reference))
        .collect();
    Ok(Maps {
        shape: grouping.shape,
        density,
        t2_star,
        t2,
        contrast,
    })
}
