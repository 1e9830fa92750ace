use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{FitFlag, FitResult};
use crate::lsq::{levenberg_marquardt, LsqOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DecayTrace {
    /// Ascending sample times, s.
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Programmed detuning dω, rad/s.
    pub d_omega: f64,
    pub metadata: String,
}

impl DecayTrace {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::invalid("trace times and values differ in length"));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("trace times must be strictly ascending"));
        }
        if self.values.iter().chain(&self.times).any(|v| !v.is_finite()) {
            return Err(Error::invalid("trace contains non-finite values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFitOptions {
    /// Hold dω at the trace's programmed value.
    pub pin_d_omega: bool,
    pub max_iterations: usize,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        Self {
            pin_d_omega: false,
            max_iterations: 200,
        }
    }
}

const NAMES: [&str; 5] = ["c0", "c", "rate", "d_omega", "phi0"];

fn model(p: &DVector<f64>, u: f64) -> (f64, [f64; 5]) {
    let (c0, c, k, w, phi) = (p[0], p[1], p[2], p[3], p[4]);
    let e = (-k * u).exp();
    let (s, co) = (w * u + phi).sin_cos();
    let y = c0 + 0.5 * c * e * co;
    let d = [
        1.0,
        0.5 * e * co,
        -u * 0.5 * c * e * co,
        -u * 0.5 * c * e * s,
        -0.5 * c * e * s,
    ];
    (y, d)
}

/// Linear least squares for (c0, a, b) in c0 + e^{−ku}(a cos wu + b sin wu).
fn project(u: &[f64], y: &[f64], k: f64, w: f64) -> Option<(Vector3<f64>, f64)> {
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for (&ui, &yi) in u.iter().zip(y) {
        let e = (-k * ui).exp();
        let (s, c) = (w * ui).sin_cos();
        let row = Vector3::new(1.0, e * c, e * s);
        ata += row * row.transpose();
        aty += row * yi;
    }
    let sol = ata.cholesky()?.solve(&aty);
    let rss = u
        .iter()
        .zip(y)
        .map(|(&ui, &yi)| {
            let e = (-k * ui).exp();
            let (s, c) = (w * ui).sin_cos();
            let r = yi - sol[0] - sol[1] * e * c - sol[2] * e * s;
            r * r
        })
        .sum();
    Some((sol, rss))
}

/// Fit S(t) = c0 + (c/2) e^{−rate·t} cos(dω t + φ0).
///
/// The rate is seeded by scanning a logarithmic grid and solving the
/// remaining linear parameters exactly at each grid point; phase and
/// amplitude follow from the projected cosine/sine coefficients. Times are
/// rescaled by the trace span internally.
pub fn fit_decay(trace: &DecayTrace, opts: &DecayFitOptions) -> Result<FitResult> {
    trace.validate()?;
    let m = trace.times.len();
    if m < 8 {
        return Err(Error::invalid(format!("decay fit needs at least 8 samples, got {m}")));
    }
    let scale = trace.times[m - 1].abs().max(trace.times[0].abs());
    if !(scale > 0.0) {
        return Err(Error::invalid("trace times span zero"));
    }
    let u: Vec<f64> = trace.times.iter().map(|t| t / scale).collect();
    let y = &trace.values;
    let w0 = trace.d_omega * scale;
    let mean = y.iter().sum::<f64>() / m as f64;
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();

    if y.iter().all(|&v| v == y[0]) {
        return Ok(FitResult {
            names: NAMES.iter().map(|s| s.to_string()).collect(),
            values: vec![y[0], 0.0, 0.0, trace.d_omega, 0.0],
            std_errors: vec![0.0, 0.0, f64::INFINITY, 0.0, f64::INFINITY],
            residual_norm: 0.0,
            gradient_norm: 0.0,
            converged: true,
            iterations: 0,
            flags: vec![FitFlag::RateUnidentifiable],
            cost_history: vec![0.0],
        });
    }

    let mut best: Option<(f64, f64, Vector3<f64>)> = None;
    for i in 0..=240 {
        let k = 1e-2 * 10f64.powf(4.0 * i as f64 / 240.0);
        if let Some((sol, rss)) = project(&u, y, k, w0) {
            if best.as_ref().is_none_or(|b| rss < b.0) {
                best = Some((rss, k, sol));
            }
        }
    }
    let (_, k0, sol) = best.ok_or_else(|| Error::invalid("degenerate trace: projection failed"))?;
    let amp = (sol[1] * sol[1] + sol[2] * sol[2]).sqrt();
    let phi0 = (-sol[2]).atan2(sol[1]);
    let x0 = DVector::from_vec(vec![sol[0], 2.0 * amp, k0, w0, phi0]);

    let residual = |p: &DVector<f64>| DVector::from_iterator(m, u.iter().zip(y).map(|(&ui, &yi)| model(p, ui).0 - yi));
    let jacobian = |p: &DVector<f64>| {
        let mut j = DMatrix::zeros(m, 5);
        for (i, &ui) in u.iter().enumerate() {
            let d = model(p, ui).1;
            for c in 0..5 {
                j[(i, c)] = d[c];
            }
        }
        j
    };
    let lsq = LsqOptions {
        max_iterations: opts.max_iterations,
        residual_floor: 1e-13 * y_norm.max(f64::MIN_POSITIVE),
        free: opts.pin_d_omega.then(|| vec![true, true, true, false, true]),
        ..LsqOptions::default()
    };
    let out = levenberg_marquardt(residual, jacobian, x0, &lsq);

    let mut p = out.params.clone();
    let mut se = out.std_errors.clone();
    if p[1] < 0.0 {
        p[1] = -p[1];
        p[4] += std::f64::consts::PI;
    }
    p[4] = (p[4] + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    p[2] /= scale;
    p[3] /= scale;
    se[2] /= scale;
    se[3] /= scale;

    let mut flags = Vec::new();
    if !out.converged {
        flags.push(FitFlag::NotConverged);
    }
    let c_tiny = p[1] <= 1e-9 * mean.abs().max(y_norm / (m as f64).sqrt());
    if c_tiny || !(p[1] > 3.0 * se[1]) && se[1] > 0.0 {
        flags.push(FitFlag::RateUnidentifiable);
    } else if p[2] * (trace.times[m - 1] - trace.times[0]) < 1.0 {
        flags.push(FitFlag::ShortSpan);
    }
    Ok(FitResult {
        names: NAMES.iter().map(|s| s.to_string()).collect(),
        values: p.iter().copied().collect(),
        std_errors: se.iter().copied().collect(),
        residual_norm: out.residual_norm,
        gradient_norm: out.gradient_norm,
        converged: out.converged,
        iterations: out.iterations,
        flags,
        cost_history: out.cost_history,
    })
}
