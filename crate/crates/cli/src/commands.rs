//! Subcommand implementations. Each validates everything it needs before
//! starting any computation.

use std::path::{Path, PathBuf};

use spinbath::analysis::{
    build_maps, extract_density, fit_decay, fit_lorentzians, read_frames, DecayFitOptions, DecayTrace,
    FitResult, Grouping, MapConfig, MapInputs,
};
use spinbath::constants::{angular_to_mhz, density_to_ppm, mhz_to_angular};
use spinbath::decoherence::{predict_scenario, ScenarioOptions, DEER_D_OMEGA};
use spinbath::flipflop::{alpha_closed_form_jt, alpha_exact, alpha_peaks, cluster_peaks};
use spinbath::spectra::{linear_grid, species_lines, synthesize_mixture, Spectrum};
use spinbath::transport::{
    charge_timing, relative_intensity, run_pump_probe, steady_state_ns0, PumpProbeConfig, TransportState,
};

use crate::output::{num, opt, read_numeric, write_table, Format, Provenance, Table};
use crate::scenario::{FitKind, Scenario, ValidationError};

#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or input; exit code 1.
    Validation(String),
    /// A computation failed; exit code 2.
    Numerical(String),
}

impl From<ValidationError> for Failure {
    fn from(e: ValidationError) -> Self {
        Failure::Validation(e.0)
    }
}

impl From<spinbath::Error> for Failure {
    fn from(e: spinbath::Error) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(format!("writing output: {e}"))
    }
}

pub type Outcome = Result<Vec<PathBuf>, Failure>;

pub struct Run<'a> {
    pub scenario: &'a Scenario,
    pub seed: u64,
    pub out: &'a Path,
    pub format: Format,
}

impl Run<'_> {
    fn provenance(&self, command: &'static str) -> Provenance {
        Provenance { command, scenario_hash: self.scenario.hash.clone(), seed: self.seed }
    }

    fn write(&self, command: &'static str, name: &str, table: &Table) -> std::io::Result<PathBuf> {
        write_table(self.out, name, table, self.format, &self.provenance(command))
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

pub fn spectrum(run: &Run) -> Outcome {
    let sc = run.scenario;
    let (field, gd) = sc.require_field()?;
    let settings = sc.spectrum.as_ref().ok_or_else(|| invalid("scenario has no [spectrum] table"))?;
    let entries = if settings.use_after { &sc.after } else { &sc.before };

    let grid = linear_grid(settings.start_mhz, settings.stop_mhz, settings.points)?;
    let mut mixture = Vec::with_capacity(entries.len());
    let mut lines_table = Table::new(&["species", "density_ppm", "frequency_mhz", "intensity", "jt_index", "electron_flip"]);
    for &(k, density) in entries {
        let model = &sc.species[k];
        let lines = species_lines(model, &field)?;
        for l in &lines {
            lines_table.row(vec![
                model.name.clone(),
                num(density),
                num(l.frequency),
                num(l.intensity),
                l.jt_index.to_string(),
                l.electron_flip.to_string(),
            ]);
        }
        mixture.push((lines, density));
    }
    let spec = synthesize_mixture(&mixture, &grid, gd)?;

    let mut table = Table::new(&["frequency_mhz", "amplitude"]);
    table
        .note(format!("field_gauss {}", num(field.magnitude / spinbath::constants::GAUSS)))
        .note(format!("gamma_d_mhz {}", num(angular_to_mhz(gd))))
        .note(format!("bath {}", if settings.use_after { "after" } else { "before" }));
    for (f, a) in spec.freq_grid.iter().zip(&spec.amplitude) {
        table.row(vec![num(*f), num(*a)]);
    }
    Ok(vec![run.write("spectrum", "spectrum", &table)?, run.write("spectrum", "lines", &lines_table)?])
}

pub fn alpha(run: &Run) -> Outcome {
    let sc = run.scenario;
    let (field, gd) = sc.require_field()?;
    if sc.species.is_empty() {
        return Err(invalid("scenario defines no species"));
    }
    let mut table = Table::new(&["species", "alpha_exact", "alpha_peaks", "peaks"]);
    table
        .note(format!("gamma_d_mhz {}", num(angular_to_mhz(gd))))
        .note(format!("cluster_tolerance_mhz {}", num(sc.cluster_tolerance)))
        .note(format!(
            "hand_estimate_alpha {} (spin 1/2, I = 1, four orientations, one aligned, no state mixing)",
            num(alpha_closed_form_jt())
        ));
    for model in &sc.species {
        let lines = species_lines(model, &field)?;
        let exact = alpha_exact(model, &field, gd)?;
        let peaks = alpha_peaks(&lines, sc.cluster_tolerance)?;
        let count = cluster_peaks(&lines, sc.cluster_tolerance)?.len();
        table.row(vec![model.name.clone(), num(exact), num(peaks), count.to_string()]);
    }
    Ok(vec![run.write("alpha", "alpha", &table)?])
}

pub fn coherence(run: &Run) -> Outcome {
    let sc = run.scenario;
    let (field, _) = sc.require_field()?;
    let before = sc.bath(false)?;
    let after = sc.bath(true)?;
    before.validate()?;
    after.validate()?;
    let c = &sc.coherence;
    let opts = ScenarioOptions {
        samples: c.samples,
        seed: run.seed,
        inversion_probability: c.inversion_probability,
        linewidth_scaling: c.linewidth_scaling,
    };
    let times = linear_grid(0.0, c.deer_stop, c.deer_points)?;

    let pred = predict_scenario(&before, &after, &field, &opts)?;
    let change = |a: f64, b: f64| if a.is_finite() && b.is_finite() && a != 0.0 { b / a - 1.0 } else { f64::NAN };
    let mut table = Table::new(&["quantity", "before", "after", "fractional_change"]);
    table.note(format!("samples {}", c.samples));
    let (b, a) = (&pred.before, &pred.after);
    let rows: [(&str, f64, f64); 7] = [
        ("total_ppm", before.total_ppm(), after.total_ppm()),
        ("t2_star_s", b.t2_star, a.t2_star),
        ("t2_s", b.t2, a.t2),
        ("tau_c_s", b.tau_c.tau_c, a.tau_c.tau_c),
        ("tau_c_std_error_s", b.tau_c.tau_c_std_error, a.tau_c.tau_c_std_error),
        ("b1_rms_sq_t2", b.b1_rms_sq, a.b1_rms_sq),
        ("gamma_d_mhz", angular_to_mhz(b.gamma_d), angular_to_mhz(a.gamma_d)),
    ];
    for (name, x, y) in rows {
        table.row(vec![name.into(), num(x), num(y), num(change(x, y))]);
    }

    let mut names: Vec<String> = b.ts_star.iter().chain(&a.ts_star).map(|(n, _)| n.clone()).collect();
    names.sort();
    names.dedup();
    let ts = |list: &[(String, f64)], n: &str| list.iter().find(|(m, _)| m == n).map_or(f64::INFINITY, |e| e.1);
    for n in &names {
        let (x, y) = (ts(&b.ts_star, n), ts(&a.ts_star, n));
        table.row(vec![format!("ts_star_s[{n}]"), num(x), num(y), num(change(x, y))]);
    }

    let mut cols = vec!["time_s".to_string()];
    for n in &names {
        cols.push(format!("{n}_before"));
        cols.push(format!("{n}_after"));
    }
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut deer = Table::new(&col_refs);
    deer.note("signal = 0.5 exp(-t/Ts* - t/T2) cos(d_omega t), d_omega = 2pi x 1 MHz");
    let curve = |p: &spinbath::decoherence::CoherencePrediction, n: &str| -> Vec<f64> {
        match p.ts_star.iter().position(|(m, _)| m == n) {
            Some(k) => p.deer_curve(k, &times, 0.0, 1.0, DEER_D_OMEGA, 0.0),
            None => vec![f64::NAN; times.len()],
        }
    };
    let curves: Vec<(Vec<f64>, Vec<f64>)> = names.iter().map(|n| (curve(b, n), curve(a, n))).collect();
    for (i, t) in times.iter().enumerate() {
        let mut row = vec![num(*t)];
        for (cb, ca) in &curves {
            row.push(num(cb[i]));
            row.push(num(ca[i]));
        }
        deer.row(row);
    }
    Ok(vec![run.write("coherence", "coherence", &table)?, run.write("coherence", "deer", &deer)?])
}

fn profile_table(state: &TransportState) -> Table {
    let mut cols = vec!["r_m".to_string(), "n_m-3".into(), "p_m-3".into()];
    for name in &state.trap_names {
        cols.push(format!("{name}_occupied_ppm"));
        cols.push(format!("{name}_vacant_ppm"));
    }
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new(&refs);
    t.note(format!("time_s {}", num(state.time)));
    for i in 0..state.nodes() {
        let mut row = vec![num(state.radial_grid[i]), num(state.n[i]), num(state.p[i])];
        for k in 0..state.trap_names.len() {
            row.push(num(density_to_ppm(state.occupied[k][i])));
            row.push(num(density_to_ppm(state.vacant[k][i])));
        }
        t.row(row);
    }
    t
}

/// Largest centre-trace length written; longer traces are strided.
const MAX_TRACE_ROWS: usize = 2000;

pub fn transport(run: &Run) -> Outcome {
    let cfg = run.scenario.transport.clone().unwrap_or_else(PumpProbeConfig::calibrated_default);
    cfg.validate().map_err(|e| invalid(format!("transport: {e}")))?;
    let result = run_pump_probe(&cfg)?;
    let mut written = Vec::new();

    let names: Vec<String> = cfg.rates.traps.iter().map(|t| t.name.clone()).collect();
    let mut cols = vec!["time_s".to_string(), "n_m-3".into(), "p_m-3".into()];
    cols.extend(names.iter().map(|n| format!("{n}_occupied_ppm")));
    let refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut trace = Table::new(&refs);
    let stride = result.center.len().div_ceil(MAX_TRACE_ROWS).max(1);
    let last = result.center.len() - 1;
    for (i, c) in result.center.iter().enumerate() {
        if i % stride != 0 && i != last {
            continue;
        }
        let mut row = vec![num(c.time), num(c.n), num(c.p)];
        row.extend(c.occupied.iter().map(|&o| num(density_to_ppm(o))));
        trace.row(row);
    }
    written.push(run.write("transport", "transport_center", &trace)?);

    for (i, snap) in result.snapshots.iter().enumerate() {
        written.push(run.write("transport", &format!("transport_snapshot_{i:03}"), &profile_table(snap))?);
    }

    // Conservation report over all snapshots and the final state.
    let dark = TransportState::dark(&cfg.grid, &cfg.rates)?;
    let q0 = dark.net_negative_charge();
    let area = std::f64::consts::PI * cfg.grid.r_max * cfg.grid.r_max;
    let charge_scale: f64 =
        cfg.rates.traps.iter().map(|t| spinbath::constants::ppm_to_density(t.total_ppm)).sum::<f64>() * area;
    let mut max_sum_dev: f64 = 0.0;
    let mut max_neutral_dev: f64 = 0.0;
    for s in result.snapshots.iter().chain(std::iter::once(&result.final_state)) {
        for (k, t) in cfg.rates.traps.iter().enumerate() {
            let total = spinbath::constants::ppm_to_density(t.total_ppm);
            if total > 0.0 {
                for i in 0..s.nodes() {
                    let dev = ((s.occupied[k][i] + s.vacant[k][i]) - total).abs() / total;
                    max_sum_dev = max_sum_dev.max(dev);
                }
            }
        }
        let drift = (s.net_negative_charge() + s.boundary_exchange - q0).abs() / charge_scale;
        max_neutral_dev = max_neutral_dev.max(drift);
    }
    let mut summary = Table::new(&["metric", "value"]);
    summary
        .note(format!("nodes {} r_max_m {} dt_s {}", cfg.grid.nodes, num(cfg.grid.r_max), num(cfg.dt)))
        .row(vec!["max_relative_charge_state_sum_deviation".into(), num(max_sum_dev)])
        .row(vec!["max_relative_neutrality_drift".into(), num(max_neutral_dev)])
        .row(vec!["clipped_per_m".into(), num(result.final_state.clipped)])
        .row(vec!["boundary_exchange_per_m".into(), num(result.final_state.boundary_exchange)]);

    let pump_phase = cfg.schedule.iter().position(|p| p.pump);
    if let (Some(ns), Some(ph)) = (cfg.rates.trap_index("Ns"), pump_phase) {
        if let Ok(t) = charge_timing(&result, ns, ph) {
            summary
                .row(vec!["ns0_center_dark_ppm".into(), num(t.dark_ppm)])
                .row(vec!["ns0_center_pumped_ppm".into(), num(t.pumped_ppm)])
                .row(vec!["generation_time_s".into(), num(t.generation_time)])
                .row(vec!["recovery_time_s".into(), t.recovery_time.map_or_else(|| "not_reached".into(), num)])
                .row(vec!["observed_recovery_s".into(), num(t.observed_recovery)]);
        }

        // Quasi-static Ns0 from the local carrier densities at the end of the
        // first pump phase.
        let t_end = result.phases[ph].1;
        if let Some(snap) = result.snapshots.iter().find(|s| (s.time - t_end).abs() <= 1e-9 * t_end) {
            let mut beams = vec![cfg.pump];
            if cfg.schedule[ph].probe {
                beams.extend(cfg.probe);
            }
            let light = relative_intensity(&snap.radial_grid, &beams, cfg.rates.reference_intensity);
            let trap = &cfg.rates.traps[ns];
            let mut map = Table::new(&["r_m", "ns0_simulated_ppm", "ns0_steady_state_ppm"]);
            map.note(format!("time_s {}", num(snap.time)));
            for i in 0..snap.nodes() {
                let ss = steady_state_ns0(
                    trap.total_ppm,
                    snap.n[i],
                    snap.p[i],
                    trap.electron_capture,
                    trap.hole_capture,
                    cfg.rates.release_rate(ns, light[i]),
                );
                map.row(vec![num(snap.radial_grid[i]), num(snap.occupied_ppm(ns, i)), num(ss.ppm)]);
            }
            written.push(run.write("transport", "transport_steady_state", &map)?);
        }
    }
    written.insert(0, run.write("transport", "transport_summary", &summary)?);
    Ok(written)
}

/// Fit inputs resolved from the scenario and command-line overrides.
pub struct FitRequest {
    pub kind: FitKind,
    pub input: PathBuf,
    pub peaks: usize,
    pub tile: (usize, usize),
}

fn params_table(fit: &FitResult) -> Table {
    let mut t = Table::new(&["parameter", "value", "std_error"]);
    t.note(format!("converged {}", fit.converged))
        .note(format!("iterations {}", fit.iterations))
        .note(format!("residual_norm {}", num(fit.residual_norm)))
        .note(format!("flags {:?}", fit.flags));
    for (i, n) in fit.names.iter().enumerate() {
        t.row(vec![n.clone(), num(fit.values[i]), num(fit.std_errors[i])]);
    }
    t
}

fn read_columns(path: &Path, min_cols: usize) -> Result<Vec<Vec<f64>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let rows = read_numeric(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(invalid(format!("{}: no numeric rows", path.display())));
    }
    if let Some(i) = rows.iter().position(|r| r.len() < min_cols) {
        return Err(invalid(format!("{}: data row {} has fewer than {min_cols} columns", path.display(), i + 1)));
    }
    Ok(rows)
}

pub fn fit(run: &Run, req: &FitRequest) -> Outcome {
    let sc = run.scenario;
    let settings = &sc.fit;
    match req.kind {
        FitKind::Spectrum => {
            let rows = read_columns(&req.input, 2)?;
            let gamma_d = sc.gamma_d.unwrap_or(mhz_to_angular(1.0));
            let spec = Spectrum {
                freq_grid: rows.iter().map(|r| r[0]).collect(),
                amplitude: rows.iter().map(|r| r[1]).collect(),
                gamma_d,
            };
            if spec.freq_grid.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(invalid(format!("{}: frequencies must ascend", req.input.display())));
            }
            let fit = fit_lorentzians(&spec, req.peaks, None)?;
            let mut peaks = Table::new(&["center_mhz", "hwhm_mhz", "height", "area_fraction"]);
            let n = req.peaks;
            let get = |name: &str, k: usize| fit.get(&format!("{name}_{k}")).unwrap_or(f64::NAN);
            let areas: Vec<f64> = (0..n).map(|k| get("height", k) * get("hwhm", k)).collect();
            let total: f64 = areas.iter().sum();
            for k in 0..n {
                peaks.row(vec![num(get("center", k)), num(get("hwhm", k)), num(get("height", k)), num(areas[k] / total)]);
            }
            Ok(vec![
                run.write("fit", "fit_spectrum", &params_table(&fit))?,
                run.write("fit", "fit_peaks", &peaks)?,
            ])
        }
        FitKind::Decay => {
            let rows = read_columns(&req.input, 2)?;
            let trace = DecayTrace {
                times: rows.iter().map(|r| r[0]).collect(),
                values: rows.iter().map(|r| r[1]).collect(),
                d_omega: settings.d_omega,
                metadata: req.input.display().to_string(),
            };
            trace.validate().map_err(|e| invalid(format!("{}: {e}", req.input.display())))?;
            let opts = DecayFitOptions { pin_d_omega: settings.pin_d_omega, ..DecayFitOptions::default() };
            let fit = fit_decay(&trace, &opts)?;
            let mut t = params_table(&fit);
            if let Ok(d) = extract_density(&fit, settings.t2_reference, sc.coherence.inversion_probability) {
                t.note(format!("density_ppm {} below_reference {}", num(d.ppm), d.below_reference));
            }
            Ok(vec![run.write("fit", "fit_decay", &t)?])
        }
        FitKind::Frames => {
            let file = std::fs::File::open(&req.input).map_err(|e| invalid(format!("{}: {e}", req.input.display())))?;
            let frames = read_frames(std::io::BufReader::new(file))
                .map_err(|e| invalid(format!("{}: {e}", req.input.display())))?;
            let (th, tw) = req.tile;
            let grouping = Grouping::regular(frames.rows, frames.cols, th, tw)
                .map_err(|e| invalid(format!("tile: {e}")))?;
            let cfg = MapConfig {
                d_omega: settings.d_omega,
                pin_d_omega: settings.pin_d_omega,
                t2_reference: settings.t2_reference,
                inversion_probability: sc.coherence.inversion_probability,
                ..MapConfig::default()
            };
            let maps = build_maps(&MapInputs { deer: Some(&frames), ..MapInputs::default() }, &grouping, &cfg)?;
            let mut t = Table::new(&["row", "col", "density_ppm", "contrast"]);
            t.note(format!("tile {th}x{tw} map_shape {}x{}", maps.shape.0, maps.shape.1));
            for (i, (d, c)) in maps.density.iter().zip(&maps.contrast).enumerate() {
                let (r, col) = (i / maps.shape.1, i % maps.shape.1);
                t.row(vec![r.to_string(), col.to_string(), opt(*d), opt(*c)]);
            }
            Ok(vec![run.write("fit", "fit_maps", &t)?])
        }
    }
}
