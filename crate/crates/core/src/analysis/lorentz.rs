use nalgebra::{DMatrix, DVector};

use super::{FitFlag, FitResult};
use crate::lsq::{levenberg_marquardt, LsqOptions};
use crate::spectra::Spectrum;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakGuess {
    /// MHz.
    pub center: f64,
    /// MHz.
    pub hwhm: f64,
    pub height: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Local maxima standing more than three noise widths above the baseline,
/// tallest first. Baseline is the median amplitude; noise is the MAD of
/// successive differences.
pub fn auto_peak_guesses(freq: &[f64], amp: &[f64], n_peaks: usize) -> Vec<PeakGuess> {
    let n = amp.len();
    if n < 3 {
        return Vec::new();
    }
    let base = median(amp.to_vec());
    let diffs: Vec<f64> = amp.windows(2).map(|w| w[1] - w[0]).collect();
    let dmed = median(diffs.clone());
    let noise = 1.4826 * median(diffs.iter().map(|d| (d - dmed).abs()).collect()) / 2f64.sqrt();
    let top = amp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = (3.0 * noise).max(1e-6 * (top - base).abs());
    let mut found: Vec<PeakGuess> = (1..n - 1)
        .filter(|&i| amp[i] > amp[i - 1] && amp[i] >= amp[i + 1] && amp[i] - base > threshold)
        .map(|i| {
            let h = amp[i] - base;
            let half = base + 0.5 * h;
            let mut l = i;
            while l > 0 && amp[l] > half {
                l -= 1;
            }
            let mut r = i;
            while r < n - 1 && amp[r] > half {
                r += 1;
            }
            let step = (freq[(i + 1).min(n - 1)] - freq[i.saturating_sub(1)]) / 2.0;
            PeakGuess {
                center: freq[i],
                hwhm: (0.5 * (freq[r] - freq[l])).max(step),
                height: h,
            }
        })
        .collect();
    found.sort_by(|a, b| b.height.total_cmp(&a.height));
    found.truncate(n_peaks);
    found
}

fn peak_terms(f: f64, c: f64, w: f64, h: f64) -> (f64, [f64; 3]) {
    let u = (f - c) / w;
    let l = 1.0 / (1.0 + u * u);
    let dl = 2.0 * u * l * l / w;
    (h * l, [h * dl, h * dl * u, l])
}

/// Fit `n_peaks` Lorentzians plus a constant baseline.
///
/// Parameters are named `center_k`, `hwhm_k`, `height_k` (MHz, MHz,
/// amplitude units) for peaks sorted by centre, then `baseline`. Missing
/// guesses are filled from [`auto_peak_guesses`]; when the data offer fewer
/// peaks than requested the remainder start at zero height mid-grid.
pub fn fit_lorentzians(spectrum: &Spectrum, n_peaks: usize, init: Option<&[PeakGuess]>) -> Result<FitResult> {
    let f = &spectrum.freq_grid;
    let y = &spectrum.amplitude;
    let m = f.len();
    if n_peaks == 0 {
        return Err(Error::invalid("n_peaks must be at least 1"));
    }
    if m != y.len() || m < 3 * n_peaks + 2 {
        return Err(Error::invalid("spectrum too short for the requested number of peaks"));
    }
    let (fmin, fmax) = (f[0], f[m - 1]);
    let mut guesses: Vec<PeakGuess> = match init {
        Some(g) => {
            if g.len() != n_peaks {
                return Err(Error::invalid("number of peak guesses differs from n_peaks"));
            }
            if let Some(bad) = g.iter().find(|p| p.center < fmin || p.center > fmax || !(p.hwhm > 0.0)) {
                return Err(Error::invalid(format!(
                    "peak guess at {} MHz lies outside the grid or has non-positive width",
                    bad.center
                )));
            }
            g.to_vec()
        }
        None => auto_peak_guesses(f, y, n_peaks),
    };
    let step = (fmax - fmin) / (m - 1) as f64;
    while guesses.len() < n_peaks {
        guesses.push(PeakGuess {
            center: 0.5 * (fmin + fmax),
            hwhm: 5.0 * step,
            height: 0.0,
        });
    }
    let base0 = median(y.to_vec());
    let mut x0 = Vec::with_capacity(3 * n_peaks + 1);
    for g in &guesses {
        x0.extend([g.center, g.hwhm, g.height]);
    }
    x0.push(if init.is_some() { 0.0 } else { base0 });
    let np = x0.len();

    let eval = |p: &DVector<f64>, fi: f64| -> f64 {
        let mut s = p[np - 1];
        for k in 0..n_peaks {
            s += peak_terms(fi, p[3 * k], p[3 * k + 1], p[3 * k + 2]).0;
        }
        s
    };
    let residual = |p: &DVector<f64>| DVector::from_iterator(m, f.iter().zip(y).map(|(&fi, &yi)| eval(p, fi) - yi));
    let jacobian = |p: &DVector<f64>| {
        let mut j = DMatrix::zeros(m, np);
        for (i, &fi) in f.iter().enumerate() {
            for k in 0..n_peaks {
                let d = peak_terms(fi, p[3 * k], p[3 * k + 1], p[3 * k + 2]).1;
                j[(i, 3 * k)] = d[0];
                j[(i, 3 * k + 1)] = d[1];
                j[(i, 3 * k + 2)] = d[2];
            }
            j[(i, np - 1)] = 1.0;
        }
        j
    };
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let out = levenberg_marquardt(
        residual,
        jacobian,
        DVector::from_vec(x0),
        &LsqOptions {
            max_iterations: 500,
            residual_floor: 1e-13 * y_norm.max(f64::MIN_POSITIVE),
            ..LsqOptions::default()
        },
    );

    let p = &out.params;
    let se = &out.std_errors;
    let mut order: Vec<usize> = (0..n_peaks).collect();
    order.sort_by(|&a, &b| p[3 * a].total_cmp(&p[3 * b]));
    let mut names = Vec::with_capacity(np);
    let mut values = Vec::with_capacity(np);
    let mut errors = Vec::with_capacity(np);
    for (slot, &k) in order.iter().enumerate() {
        for (j, label) in ["center", "hwhm", "height"].iter().enumerate() {
            names.push(format!("{label}_{slot}"));
            let v = p[3 * k + j];
            values.push(if j == 1 { v.abs() } else { v });
            errors.push(se[3 * k + j]);
        }
    }
    names.push("baseline".into());
    values.push(p[np - 1]);
    errors.push(se[np - 1]);

    let mut flags = Vec::new();
    if !out.converged {
        flags.push(FitFlag::NotConverged);
    }
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for s in 0..n_peaks {
        let (h, eh) = (values[3 * s + 2], errors[3 * s + 2]);
        if h.abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE) || !(h.abs() > 3.0 * eh) {
            flags.push(FitFlag::PeakUnidentifiable(s));
        }
    }
    for a in 0..n_peaks {
        for b in a + 1..n_peaks {
            let w = values[3 * a + 1].min(values[3 * b + 1]);
            if (values[3 * a] - values[3 * b]).abs() < 0.1 * w {
                flags.push(FitFlag::PeakCollapse(a, b));
            }
        }
    }
    Ok(FitResult {
        names,
        values,
        std_errors: errors,
        residual_norm: out.residual_norm,
        gradient_norm: out.gradient_norm,
        converged: out.converged,
        iterations: out.iterations,
        flags,
        cost_history: out.cost_history,
    })
}
