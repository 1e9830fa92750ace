//! Photo-induced charge generation, radial carrier diffusion and capture by
//! charge traps.
//!
//! Every defect species is modelled as a trap with two charge states: the
//! electron-occupied state (NV⁻, Ns⁰, X⁻) and the vacant state one unit more
//! positive (NV⁰, Ns⁺, X⁰). Free electrons and holes diffuse on a 1-D
//! cylindrical grid with the depth direction integrated out, so spatial totals
//! are per unit length.
//!
//! A step splits diffusion (explicit Euler, conservative finite-volume form of
//! the cylindrical Laplacian) from the local trap kinetics (classical RK4 per
//! node).

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::constants::{density_to_ppm, ppm_to_density};
use crate::{Error, Result};

/// Largest dt·D/Δr² the explicit diffusion update accepts. The axis cell of
/// the cylindrical stencil has coefficient 4D/Δr², so 1/4 keeps every update
/// weight non-negative.
pub const DIFFUSION_NUMBER_LIMIT: f64 = 0.25;
/// Largest dt times the fastest local relaxation rate accepted by RK4.
pub const REACTION_NUMBER_LIMIT: f64 = 2.5;
/// Densities below this (m⁻³) are set to zero, which keeps decaying
/// populations out of the slow subnormal range. The removed amount is counted
/// as clipped.
pub const DENSITY_FLOOR: f64 = 1e-200;

/// Photo-ionisation rate of Ns⁰ → Ns⁺ at the reference intensity, s⁻¹.
/// Calibrated so the default pump drives the centre Ns⁰ density from 2 to
/// 4.0 ppm at the end of a 10 ms exposure.
pub const CALIBRATED_NS_PHOTO_RATE: f64 = 2.1728e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Zero flux at r_max.
    Neumann,
    /// Carrier densities at r_max held at their dark values.
    Absorbing,
}

/// A photo-induced transition rate, linear or quadratic in intensity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotoRate {
    /// Rate at the reference intensity, s⁻¹.
    pub rate: f64,
    #[serde(default)]
    pub two_photon: bool,
}

impl PhotoRate {
    pub fn one_photon(rate: f64) -> Self {
        Self { rate, two_photon: false }
    }

    pub fn two_photon(rate: f64) -> Self {
        Self { rate, two_photon: true }
    }

    /// Rate at relative intensity `s` = I / I_ref.
    #[inline]
    pub fn at(&self, s: f64) -> f64 {
        if self.two_photon {
            self.rate * s * s
        } else {
            self.rate * s
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapRates {
    pub name: String,
    pub total_ppm: f64,
    /// Occupied-state density in the dark, ppm.
    pub dark_occupied_ppm: f64,
    /// Charge of the occupied state in units of e.
    pub occupied_charge: i32,
    /// Electron capture coefficient by the vacant state, m³/s.
    pub electron_capture: f64,
    /// Hole capture coefficient by the occupied state, m³/s.
    pub hole_capture: f64,
    /// Electron emission from the occupied state.
    #[serde(default)]
    pub photo_electron: PhotoRate,
    /// Hole emission from the vacant state.
    #[serde(default)]
    pub photo_hole: PhotoRate,
}

/// Kinetic and transport constants of the whole medium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeRateSet {
    /// Intensity at which photo rates are quoted, W/m².
    pub reference_intensity: f64,
    /// Free-electron density in the dark, ppm.
    pub dark_carrier_ppm: f64,
    /// Electron diffusion constant, m²/s.
    pub diffusion_n: f64,
    /// Hole diffusion constant, m²/s.
    pub diffusion_p: f64,
    pub traps: Vec<TrapRates>,
}

impl ChargeRateSet {
    /// NV, Ns and X traps with rates that give sub-0.05 ms generation and
    /// tens-of-ms recovery under the default pump.
    pub fn calibrated_default() -> Self {
        Self {
            reference_intensity: BeamProfile::default_pump().center_intensity(),
            dark_carrier_ppm: 3e-4,
            diffusion_n: 2e-8,
            diffusion_p: 1e-8,
            traps: vec![
                TrapRates {
                    name: "NV".into(),
                    total_ppm: 2.0,
                    dark_occupied_ppm: 2.0,
                    occupied_charge: -1,
                    electron_capture: 2e-19,
                    hole_capture: 2e-19,
                    photo_electron: PhotoRate::two_photon(2e5),
                    photo_hole: PhotoRate::two_photon(2e5),
                },
                TrapRates {
                    name: "Ns".into(),
                    total_ppm: 10.0,
                    dark_occupied_ppm: 2.0,
                    occupied_charge: 0,
                    electron_capture: 2e-19,
                    hole_capture: 1e-19,
                    photo_electron: PhotoRate::one_photon(CALIBRATED_NS_PHOTO_RATE),
                    photo_hole: PhotoRate::default(),
                },
                TrapRates {
                    name: "X".into(),
                    total_ppm: 2.5,
                    dark_occupied_ppm: 2.5,
                    occupied_charge: -1,
                    electron_capture: 2e-19,
                    hole_capture: 1e-19,
                    photo_electron: PhotoRate::default(),
                    photo_hole: PhotoRate::default(),
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !positive(self.reference_intensity) {
            return Err(Error::invalid("reference intensity must be > 0"));
        }
        if !non_negative(self.dark_carrier_ppm) {
            return Err(Error::invalid("dark carrier density must be ≥ 0"));
        }
        if !non_negative(self.diffusion_n) || !non_negative(self.diffusion_p) {
            return Err(Error::invalid("diffusion constants must be ≥ 0"));
        }
        for (i, t) in self.traps.iter().enumerate() {
            if self.traps[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::invalid(format!("duplicate trap name `{}`", t.name)));
            }
            let coeffs = [
                t.total_ppm,
                t.dark_occupied_ppm,
                t.electron_capture,
                t.hole_capture,
                t.photo_electron.rate,
                t.photo_hole.rate,
            ];
            if !coeffs.iter().all(|&v| non_negative(v)) {
                return Err(Error::invalid(format!(
                    "trap `{}`: densities and rate coefficients must be finite and ≥ 0",
                    t.name
                )));
            }
            if t.dark_occupied_ppm > t.total_ppm {
                return Err(Error::invalid(format!(
                    "trap `{}`: dark occupied density exceeds the total",
                    t.name
                )));
            }
        }
        Ok(())
    }

    pub fn trap_index(&self, name: &str) -> Option<usize> {
        self.traps.iter().position(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn dark_carrier_density(&self) -> f64 {
        ppm_to_density(self.dark_carrier_ppm)
    }

    /// Thermal electron emission rate of trap `k`, s⁻¹, fixed by requiring
    /// the dark state to be stationary.
    pub fn thermal_emission(&self, k: usize) -> f64 {
        let t = &self.traps[k];
        if t.dark_occupied_ppm <= 0.0 {
            return 0.0;
        }
        let vacant = t.total_ppm - t.dark_occupied_ppm;
        t.electron_capture * self.dark_carrier_density() * vacant / t.dark_occupied_ppm
    }

    /// Total electron release rate of trap `k` at relative intensity `s`.
    pub fn release_rate(&self, k: usize, s: f64) -> f64 {
        self.traps[k].photo_electron.at(s) + self.thermal_emission(k)
    }

    /// Largest carrier diffusion constant.
    pub fn max_diffusion(&self) -> f64 {
        self.diffusion_n.max(self.diffusion_p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamKind {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamProfile {
    #[serde(default)]
    pub kind: BeamKind,
    /// 1/e² diameter, m.
    pub diameter: f64,
    /// Power, W.
    pub power: f64,
}

impl BeamProfile {
    pub fn gaussian(diameter: f64, power: f64) -> Self {
        Self { kind: BeamKind::Gaussian, diameter, power }
    }

    /// Narrow pump: 32 μm, 0.5 W.
    pub fn default_pump() -> Self {
        Self::gaussian(32e-6, 0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.diameter.is_finite() && self.diameter > 0.0) {
            return Err(Error::invalid("beam diameter must be > 0"));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::invalid("beam power must be > 0"));
        }
        Ok(())
    }

    fn waist(&self) -> f64 {
        0.5 * self.diameter
    }

    /// Peak intensity 2P/(πw²), W/m².
    pub fn center_intensity(&self) -> f64 {
        let w = self.waist();
        2.0 * self.power / (PI * w * w)
    }

    pub fn intensity(&self, r: f64) -> f64 {
        let w = self.waist();
        self.center_intensity() * (-2.0 * r * r / (w * w)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialGrid {
    /// Outer radius, m.
    pub r_max: f64,
    /// Node count including r = 0 and r = r_max.
    pub nodes: usize,
    pub boundary: Boundary,
}

impl RadialGrid {
    pub fn new(r_max: f64, nodes: usize, boundary: Boundary) -> Result<Self> {
        let g = Self { r_max, nodes, boundary };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            return Err(Error::invalid("grid radius must be > 0"));
        }
        if self.nodes < 3 {
            return Err(Error::invalid("radial grid needs at least 3 nodes"));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.r_max / (self.nodes - 1) as f64
    }

    pub fn positions(&self) -> Vec<f64> {
        let dr = self.spacing();
        (0..self.nodes).map(|i| i as f64 * dr).collect()
    }

    /// Largest stable explicit step for diffusion constant `d`.
    pub fn stable_dt(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return f64::INFINITY;
        }
        DIFFUSION_NUMBER_LIMIT * self.spacing().powi(2) / d
    }
}

/// Reaction-diffusion state. Densities in m⁻³.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportState {
    pub radial_grid: Vec<f64>,
    pub boundary: Boundary,
    pub n: Vec<f64>,
    pub p: Vec<f64>,
    pub trap_names: Vec<String>,
    pub occupied_charge: Vec<i32>,
    pub occupied: Vec<Vec<f64>>,
    pub vacant: Vec<Vec<f64>>,
    /// s.
    pub time: f64,
    /// Cumulative magnitude removed or added by non-negativity clipping, m⁻¹.
    pub clipped: f64,
    /// Cumulative net negative charge that left through r_max, m⁻¹.
    pub boundary_exchange: f64,
    /// Carrier densities imposed at r_max by the absorbing boundary.
    pub reservoir: (f64, f64),
}

impl TransportState {
    /// Uniform dark equilibrium.
    pub fn dark(grid: &RadialGrid, rates: &ChargeRateSet) -> Result<Self> {
        grid.validate()?;
        rates.validate()?;
        let m = grid.nodes;
        let nd = rates.dark_carrier_density();
        Ok(Self {
            radial_grid: grid.positions(),
            boundary: grid.boundary,
            n: vec![nd; m],
            p: vec![0.0; m],
            trap_names: rates.traps.iter().map(|t| t.name.clone()).collect(),
            occupied_charge: rates.traps.iter().map(|t| t.occupied_charge).collect(),
            occupied: rates
                .traps
                .iter()
                .map(|t| vec![ppm_to_density(t.dark_occupied_ppm); m])
                .collect(),
            vacant: rates
                .traps
                .iter()
                .map(|t| vec![ppm_to_density(t.total_ppm - t.dark_occupied_ppm); m])
                .collect(),
            time: 0.0,
            clipped: 0.0,
            boundary_exchange: 0.0,
            reservoir: (nd, 0.0),
        })
    }

    pub fn nodes(&self) -> usize {
        self.radial_grid.len()
    }

    pub fn spacing(&self) -> f64 {
        self.radial_grid[1] - self.radial_grid[0]
    }

    /// Annular control-volume areas; they tile the disc of radius r_max.
    pub fn cell_areas(&self) -> Vec<f64> {
        let m = self.nodes();
        let dr = self.spacing();
        let r_max = self.radial_grid[m - 1];
        (0..m)
            .map(|i| {
                let r = self.radial_grid[i];
                let lo = if i == 0 { 0.0 } else { r - 0.5 * dr };
                let hi = if i == m - 1 { r_max } else { r + 0.5 * dr };
                PI * (hi * hi - lo * lo)
            })
            .collect()
    }

    /// ∫ f 2πr dr over the grid, per unit length.
    pub fn integrate(&self, field: &[f64]) -> f64 {
        self.cell_areas().iter().zip(field).map(|(a, v)| a * v).sum()
    }

    /// Net negative charge per unit length: electrons and negative defects
    /// minus holes and positive defects.
    pub fn net_negative_charge(&self) -> f64 {
        let areas = self.cell_areas();
        let mut total = 0.0;
        for i in 0..self.nodes() {
            let mut q = self.n[i] - self.p[i];
            for k in 0..self.trap_names.len() {
                let qo = self.occupied_charge[k] as f64;
                q -= qo * self.occupied[k][i] + (qo + 1.0) * self.vacant[k][i];
            }
            total += areas[i] * q;
        }
        total
    }

    pub fn trap_index(&self, name: &str) -> Option<usize> {
        self.trap_names.iter().position(|t| t.eq_ignore_ascii_case(name))
    }

    /// Occupied density of trap `k` at node `i`, ppm.
    pub fn occupied_ppm(&self, k: usize, i: usize) -> f64 {
        density_to_ppm(self.occupied[k][i])
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.nodes();
        if m < 3 {
            return Err(Error::invalid("radial grid needs at least 3 nodes"));
        }
        let dr = self.spacing();
        if !(dr > 0.0) || self.radial_grid[0] != 0.0 {
            return Err(Error::invalid("radial grid must start at 0 and ascend"));
        }
        for w in self.radial_grid.windows(2) {
            if ((w[1] - w[0]) - dr).abs() > 1e-9 * dr {
                return Err(Error::invalid("radial grid must be uniformly spaced"));
            }
        }
        let k = self.trap_names.len();
        if self.occupied.len() != k || self.vacant.len() != k || self.occupied_charge.len() != k {
            return Err(Error::invalid("per-trap arrays do not match the trap list"));
        }
        self.check_finite()?;
        let arrays = [&self.n, &self.p]
            .into_iter()
            .chain(self.occupied.iter())
            .chain(self.vacant.iter());
        for a in arrays {
            if a.len() != m {
                return Err(Error::invalid("density array length differs from the grid"));
            }
            if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid("densities must be finite and ≥ 0"));
            }
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        let named = [("n", &self.n), ("p", &self.p)];
        for (field, a) in named {
            if let Some(node) = a.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { field: field.into(), node, time: self.time });
            }
        }
        for (k, name) in self.trap_names.iter().enumerate() {
            for (label, a) in [("occupied", &self.occupied[k]), ("vacant", &self.vacant[k])] {
                if let Some(node) = a.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        field: format!("{name} {label}"),
                        node,
                        time: self.time,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Relative illumination s(r) = Σ I_b(r) / I_ref at every node.
pub fn relative_intensity(grid: &[f64], beams: &[BeamProfile], reference: f64) -> Vec<f64> {
    grid.iter()
        .map(|&r| beams.iter().map(|b| b.intensity(r)).sum::<f64>() / reference)
        .collect()
}

/// Advances `state` by one step of length `dt`.
pub fn step(
    state: &TransportState,
    rates: &ChargeRateSet,
    beams: &[BeamProfile],
    dt: f64,
) -> Result<TransportState> {
    rates.validate()?;
    for b in beams {
        b.validate()?;
    }
    check_compatible(state, rates)?;
    let light = relative_intensity(&state.radial_grid, beams, rates.reference_intensity);
    let mut next = state.clone();
    let mut stepper = Stepper::new(rates, &next);
    stepper.advance(&mut next, &light, dt)?;
    Ok(next)
}

fn check_compatible(state: &TransportState, rates: &ChargeRateSet) -> Result<()> {
    state.validate()?;
    if state.trap_names.len() != rates.traps.len()
        || state.trap_names.iter().zip(&rates.traps).any(|(a, t)| *a != t.name)
    {
        return Err(Error::invalid("state traps do not match the rate set"));
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct NodeRates {
    emit_e: f64,
    emit_h: f64,
    cap_e: f64,
    cap_h: f64,
}

/// Reusable buffers for repeated steps with one rate set.
struct Stepper<'a> {
    rates: &'a ChargeRateSet,
    areas: Vec<f64>,
    face_coeff: Vec<f64>,
    scratch: Vec<f64>,
    thermal: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(rates: &'a ChargeRateSet, state: &TransportState) -> Self {
        let dr = state.spacing();
        // 2π r_face / Δr, multiplied by D later.
        let face_coeff = (0..state.nodes() - 1)
            .map(|i| 2.0 * PI * (state.radial_grid[i] + 0.5 * dr) / dr)
            .collect();
        Self {
            rates,
            areas: state.cell_areas(),
            face_coeff,
            scratch: vec![0.0; state.nodes()],
            thermal: (0..rates.traps.len()).map(|k| rates.thermal_emission(k)).collect(),
        }
    }

    fn advance(&mut self, state: &mut TransportState, light: &[f64], dt: f64) -> Result<()> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("time step must be > 0"));
        }
        let dr = state.spacing();
        let d_max = self.rates.max_diffusion();
        if d_max > 0.0 {
            let bound = DIFFUSION_NUMBER_LIMIT * dr * dr / d_max;
            if dt > bound {
                return Err(Error::Stability { dt, bound, reason: "explicit radial diffusion" });
            }
        }

        self.diffuse(&mut state.n, self.rates.diffusion_n, dt);
        self.diffuse(&mut state.p, self.rates.diffusion_p, dt);
        self.react(state, light, dt)?;

        if state.boundary == Boundary::Absorbing {
            let last = state.nodes() - 1;
            let (n0, p0) = state.reservoir;
            let excess = (state.n[last] - n0) - (state.p[last] - p0);
            state.boundary_exchange += excess * self.areas[last];
            state.n[last] = n0;
            state.p[last] = p0;
        }

        state.time += dt;
        state.check_finite()
    }

    fn diffuse(&mut self, u: &mut [f64], d: f64, dt: f64) {
        if d == 0.0 {
            return;
        }
        let m = u.len();
        let du = &mut self.scratch;
        du.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..m - 1 {
            let flux = d * self.face_coeff[i] * (u[i + 1] - u[i]);
            du[i] += flux;
            du[i + 1] -= flux;
        }
        for i in 0..m {
            u[i] += dt * du[i] / self.areas[i];
        }
    }

    fn react(&self, state: &mut TransportState, light: &[f64], dt: f64) -> Result<()> {
        let kt = self.rates.traps.len();
        let dim = 2 + 2 * kt;
        let mut coeffs = vec![
            NodeRates { emit_e: 0.0, emit_h: 0.0, cap_e: 0.0, cap_h: 0.0 };
            kt
        ];
        let mut y = vec![0.0; dim];
        let mut stages = vec![0.0; 5 * dim];
        let mut clipped = 0.0;

        for i in 0..state.nodes() {
            let s = light[i];
            y[0] = state.n[i];
            y[1] = state.p[i];
            // Electron and hole capture rates plus the fastest single-trap
            // relaxation bound the spectral radius of the local Jacobian.
            let (mut electron_rate, mut hole_rate, mut trap_rate) = (0.0f64, 0.0f64, 0.0f64);
            for (k, t) in self.rates.traps.iter().enumerate() {
                let c = NodeRates {
                    emit_e: t.photo_electron.at(s) + self.thermal[k],
                    emit_h: t.photo_hole.at(s),
                    cap_e: t.electron_capture,
                    cap_h: t.hole_capture,
                };
                coeffs[k] = c;
                y[2 + 2 * k] = state.occupied[k][i];
                y[3 + 2 * k] = state.vacant[k][i];
                electron_rate += c.cap_e * y[3 + 2 * k];
                hole_rate += c.cap_h * y[2 + 2 * k];
                trap_rate = trap_rate.max(c.emit_e + c.emit_h + c.cap_e * y[0] + c.cap_h * y[1]);
            }
            let fastest = electron_rate + hole_rate + trap_rate;
            if dt * fastest > REACTION_NUMBER_LIMIT {
                return Err(Error::Stability {
                    dt,
                    bound: REACTION_NUMBER_LIMIT / fastest,
                    reason: "local trap kinetics",
                });
            }

            rk4(&coeffs, &mut y, dt, &mut stages);

            for v in y[..2].iter_mut() {
                if *v < DENSITY_FLOOR {
                    clipped += v.abs() * self.areas[i];
                    *v = 0.0;
                }
            }
            for k in 0..kt {
                let (o, v) = (y[2 + 2 * k], y[3 + 2 * k]);
                let (o, v) = if o < DENSITY_FLOOR {
                    clipped += o.abs() * self.areas[i];
                    (0.0, v + o)
                } else if v < DENSITY_FLOOR {
                    clipped += v.abs() * self.areas[i];
                    (o + v, 0.0)
                } else {
                    (o, v)
                };
                state.occupied[k][i] = o;
                state.vacant[k][i] = v;
            }
            state.n[i] = y[0];
            state.p[i] = y[1];
        }
        state.clipped += clipped;
        Ok(())
    }
}

/// dy/dt for y = [n, p, occ₀, vac₀, occ₁, vac₁, …].
fn kinetics(coeffs: &[NodeRates], y: &[f64], dy: &mut [f64]) {
    let (n, p) = (y[0], y[1]);
    dy[0] = 0.0;
    dy[1] = 0.0;
    for (k, c) in coeffs.iter().enumerate() {
        let occ = y[2 + 2 * k];
        let vac = y[3 + 2 * k];
        let emit_e = c.emit_e * occ;
        let emit_h = c.emit_h * vac;
        let cap_e = c.cap_e * n * vac;
        let cap_h = c.cap_h * p * occ;
        let d_occ = cap_e - emit_e + emit_h - cap_h;
        dy[2 + 2 * k] = d_occ;
        dy[3 + 2 * k] = -d_occ;
        dy[0] += emit_e - cap_e;
        dy[1] += emit_h - cap_h;
    }
}

fn rk4(coeffs: &[NodeRates], y: &mut [f64], dt: f64, buf: &mut [f64]) {
    let dim = y.len();
    let (k1, rest) = buf.split_at_mut(dim);
    let (k2, rest) = rest.split_at_mut(dim);
    let (k3, rest) = rest.split_at_mut(dim);
    let (k4, rest) = rest.split_at_mut(dim);
    let tmp = &mut rest[..dim];

    kinetics(coeffs, y, k1);
    for j in 0..dim {
        tmp[j] = y[j] + 0.5 * dt * k1[j];
    }
    kinetics(coeffs, tmp, k2);
    for j in 0..dim {
        tmp[j] = y[j] + 0.5 * dt * k2[j];
    }
    kinetics(coeffs, tmp, k3);
    for j in 0..dim {
        tmp[j] = y[j] + dt * k3[j];
    }
    kinetics(coeffs, tmp, k4);
    for j in 0..dim {
        y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub ppm: f64,
    /// Set when every rate vanishes and the input is returned unchanged.
    pub no_dynamics: bool,
}

/// Quasi-static Ns⁰ density n[Ns]·γn n / (γn n + γp p + k_N).
///
/// `k_n` is the total one-way release rate of Ns⁰ (photo-ionisation plus any
/// thermal emission), s⁻¹.
pub fn steady_state_ns0(
    total_ppm: f64,
    n: f64,
    p: f64,
    gamma_n: f64,
    gamma_p: f64,
    k_n: f64,
) -> SteadyState {
    let capture = gamma_n * n;
    let denom = capture + gamma_p * p + k_n;
    if denom == 0.0 {
        return SteadyState { ppm: total_ppm, no_dynamics: true };
    }
    SteadyState { ppm: total_ppm * capture / denom, no_dynamics: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    /// s.
    pub duration: f64,
    #[serde(default)]
    pub pump: bool,
    #[serde(default)]
    pub probe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpProbeConfig {
    pub grid: RadialGrid,
    /// Largest time step, s. Each phase is split into equal steps no longer
    /// than this.
    pub dt: f64,
    pub rates: ChargeRateSet,
    pub pump: BeamProfile,
    #[serde(default)]
    pub probe: Option<BeamProfile>,
    pub schedule: Vec<Phase>,
    /// Times at which full radial snapshots are taken, s.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

impl PumpProbeConfig {
    /// 10 ms pump followed by 60 ms of darkness on a 100 μm, 256-node grid.
    pub fn calibrated_default() -> Self {
        Self {
            grid: RadialGrid { r_max: 100e-6, nodes: 256, boundary: Boundary::Neumann },
            dt: 1e-6,
            rates: ChargeRateSet::calibrated_default(),
            pump: BeamProfile::default_pump(),
            probe: None,
            schedule: vec![
                Phase { duration: 10e-3, pump: true, probe: false },
                Phase { duration: 60e-3, pump: false, probe: false },
            ],
            snapshot_times: vec![0.0, 10e-3, 20e-3, 40e-3, 70e-3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.rates.validate()?;
        self.pump.validate()?;
        if let Some(b) = &self.probe {
            b.validate()?;
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("time step must be > 0"));
        }
        let bound = self.grid.stable_dt(self.rates.max_diffusion());
        if self.dt > bound {
            return Err(Error::Stability {
                dt: self.dt,
                bound,
                reason: "explicit radial diffusion",
            });
        }
        if self.schedule.is_empty() {
            return Err(Error::invalid("schedule has no phases"));
        }
        for ph in &self.schedule {
            if !(ph.duration.is_finite() && ph.duration > 0.0) {
                return Err(Error::invalid("phase durations must be > 0"));
            }
            if ph.probe && self.probe.is_none() {
                return Err(Error::invalid("phase enables the probe but no probe beam is set"));
            }
        }
        if self.snapshot_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::invalid("snapshot times must be ≥ 0"));
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.schedule.iter().map(|p| p.duration).sum()
    }
}

/// Centre-node values after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSample {
    pub time: f64,
    pub n: f64,
    pub p: f64,
    pub occupied: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PumpProbeRun {
    pub snapshots: Vec<TransportState>,
    /// Centre trace including t = 0.
    pub center: Vec<CenterSample>,
    /// Start and end time of every phase.
    pub phases: Vec<(f64, f64)>,
    pub final_state: TransportState,
}

fn center_sample(s: &TransportState) -> CenterSample {
    CenterSample {
        time: s.time,
        n: s.n[0],
        p: s.p[0],
        occupied: s.occupied.iter().map(|o| o[0]).collect(),
    }
}

/// Runs the illumination schedule from the dark equilibrium.
pub fn run_pump_probe(config: &PumpProbeConfig) -> Result<PumpProbeRun> {
    config.validate()?;
    let mut state = TransportState::dark(&config.grid, &config.rates)?;
    let mut stepper = Stepper::new(&config.rates, &state);

    let mut snap_times = config.snapshot_times.clone();
    snap_times.sort_by(f64::total_cmp);
    let mut next_snap = 0;
    let mut snapshots = Vec::with_capacity(snap_times.len());
    let mut center = vec![center_sample(&state)];
    let mut phases = Vec::with_capacity(config.schedule.len());
    let eps = 1e-9 * config.dt;

    while next_snap < snap_times.len() && snap_times[next_snap] <= eps {
        snapshots.push(state.clone());
        next_snap += 1;
    }

    let mut t_start = 0.0;
    for ph in &config.schedule {
        let mut beams = Vec::with_capacity(2);
        if ph.pump {
            beams.push(config.pump);
        }
        if ph.probe {
            beams.extend(config.probe);
        }
        let light =
            relative_intensity(&state.radial_grid, &beams, config.rates.reference_intensity);
        let steps = (ph.duration / config.dt - 1e-9).ceil().max(1.0) as usize;
        let h = ph.duration / steps as f64;
        for j in 1..=steps {
            stepper.advance(&mut state, &light, h)?;
            // Keep phase boundaries exact rather than accumulating rounding.
            state.time = t_start + j as f64 * h;
            center.push(center_sample(&state));
            while next_snap < snap_times.len() && snap_times[next_snap] <= state.time + eps {
                snapshots.push(state.clone());
                next_snap += 1;
            }
        }
        let t_end = t_start + ph.duration;
        state.time = t_end;
        phases.push((t_start, t_end));
        t_start = t_end;
    }

    Ok(PumpProbeRun { snapshots, center, phases, final_state: state })
}

/// Rise and recovery of one trap's centre occupation around a pump phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeTiming {
    pub dark_ppm: f64,
    pub pumped_ppm: f64,
    /// Time after pump onset to cover 1 − 1/e of the change, s.
    pub generation_time: f64,
    /// Time after pump end for the excess to fall to 1/e, s; `None` when the
    /// run ends first.
    pub recovery_time: Option<f64>,
    /// Dark time simulated after the pump, s.
    pub observed_recovery: f64,
}

/// Extracts [`ChargeTiming`] for trap `trap` and the pump phase `phase`.
pub fn charge_timing(run: &PumpProbeRun, trap: usize, phase: usize) -> Result<ChargeTiming> {
    let &(t0, t1) = run
        .phases
        .get(phase)
        .ok_or_else(|| Error::invalid(format!("no phase {phase}")))?;
    if run.center.first().is_none_or(|c| trap >= c.occupied.len()) {
        return Err(Error::invalid(format!("no trap {trap}")));
    }
    let tol = 1e-9 * (t1 - t0);
    let value = |c: &CenterSample| density_to_ppm(c.occupied[trap]);
    let at = |t: f64| {
        run.center
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .map(value)
            .unwrap_or(f64::NAN)
    };
    let dark = at(t0);
    let pumped = at(t1);
    let change = pumped - dark;
    if change == 0.0 {
        return Err(Error::invalid("pump does not change the trap occupation"));
    }

    let crossing = |from: f64, to: f64, target: f64, rising: bool| -> Option<f64> {
        let pts: Vec<(f64, f64)> = run
            .center
            .iter()
            .filter(|c| c.time >= from - tol && c.time <= to + tol)
            .map(|c| (c.time, value(c)))
            .collect();
        let hit = |v: f64| if rising { v >= target } else { v <= target };
        let j = pts.iter().position(|&(_, v)| hit(v))?;
        if j == 0 {
            return Some(pts[0].0);
        }
        let (ta, va) = pts[j - 1];
        let (tb, vb) = pts[j];
        Some(ta + (target - va) / (vb - va) * (tb - ta))
    };

    let rise_target = dark + (1.0 - (-1.0f64).exp()) * change;
    let generation = crossing(t0, t1, rise_target, change > 0.0)
        .ok_or_else(|| Error::invalid("pump phase never reaches the rise threshold"))?
        - t0;
    let t_last = run.center.last().map_or(t1, |c| c.time);
    let recovery_target = dark + change / std::f64::consts::E;
    let recovery = crossing(t1, t_last, recovery_target, change < 0.0).map(|t| t - t1);

    Ok(ChargeTiming {
        dark_ppm: dark,
        pumped_ppm: pumped,
        generation_time: generation,
        recovery_time: recovery,
        observed_recovery: t_last - t1,
    })
}

/// Finds the one-photon electron-emission rate of trap `trap` for which the
/// centre occupation equals `target_ppm` at the end of a single pump phase of
/// length `pump_duration`, by bisection in log-rate on `[lo, hi]`.
pub fn calibrate_photo_rate(
    config: &PumpProbeConfig,
    trap: usize,
    pump_duration: f64,
    target_ppm: f64,
    (lo, hi): (f64, f64),
) -> Result<f64> {
    if trap >= config.rates.traps.len() {
        return Err(Error::invalid(format!("no trap {trap}")));
    }
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::invalid("calibration bracket must satisfy 0 < lo < hi"));
    }
    let mut cfg = config.clone();
    cfg.schedule = vec![Phase { duration: pump_duration, pump: true, probe: false }];
    cfg.snapshot_times.clear();
    let mut miss = |rate: f64| -> Result<f64> {
        cfg.rates.traps[trap].photo_electron.rate = rate;
        let run = run_pump_probe(&cfg)?;
        Ok(run.final_state.occupied_ppm(trap, 0) - target_ppm)
    };
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let fa = miss(lo)?;
    let fb = miss(hi)?;
    if fa.signum() == fb.signum() {
        return Err(Error::invalid(format!(
            "target {target_ppm} ppm not bracketed (misses {fa:.3}, {fb:.3} ppm)"
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (a + b);
        let fm = miss(mid.exp())?;
        if fm.signum() == fa.signum() {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-6 {
            break;
        }
    }
    Ok((0.5 * (a + b)).exp())
}

/// Writes a radial profile as whitespace-separated columns: r (m), n and p
/// (m⁻³), then occupied and vacant density of every trap (ppm).
pub fn write_profile<W: Write>(state: &TransportState, delimiter: &str, out: &mut W) -> Result<()> {
    let mut header = vec!["r_m".to_string(), "n_m-3".into(), "p_m-3".into()];
    for name in &state.trap_names {
        header.push(format!("{name}_occupied_ppm"));
        header.push(format!("{name}_vacant_ppm"));
    }
    writeln!(out, "# t_s = {:.9e}", state.time)?;
    writeln!(out, "# {}", header.join(delimiter))?;
    for i in 0..state.nodes() {
        let mut row = vec![
            format!("{:.9e}", state.radial_grid[i]),
            format!("{:.9e}", state.n[i]),
            format!("{:.9e}", state.p[i]),
        ];
        for k in 0..state.trap_names.len() {
            row.push(format!("{:.9e}", density_to_ppm(state.occupied[k][i])));
            row.push(format!("{:.9e}", density_to_ppm(state.vacant[k][i])));
        }
        writeln!(out, "{}", row.join(delimiter))?;
    }
    Ok(())
}
