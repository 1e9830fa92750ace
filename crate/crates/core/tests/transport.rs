use proptest::prelude::*;
use spinbath::constants::{density_to_ppm, ppm_to_density};
use spinbath::transport::*;
use spinbath::Error;

fn trapless(dn: f64, dp: f64) -> ChargeRateSet {
    ChargeRateSet {
        reference_intensity: 1.0,
        dark_carrier_ppm: 0.0,
        diffusion_n: dn,
        diffusion_p: dp,
        traps: vec![],
    }
}

fn gaussian_electrons(grid: &RadialGrid, width: f64) -> TransportState {
    let rates = trapless(1.0, 1.0);
    let mut s = TransportState::dark(grid, &rates).unwrap();
    for (i, r) in s.radial_grid.clone().iter().enumerate() {
        s.n[i] = 1e22 * (-(r * r) / (width * width)).exp();
    }
    s
}

/// Independent 0-D integrator: classical RK4 on the same kinetics, written
/// out per trap with 64 substeps per outer step.
fn ode_oracle(rates: &ChargeRateSet, s: f64, y0: &[f64], t: f64, steps: usize) -> Vec<f64> {
    let nd = ppm_to_density(rates.dark_carrier_ppm);
    let rhs = |y: &[f64]| -> Vec<f64> {
        let mut d = vec![0.0; y.len()];
        for (k, tr) in rates.traps.iter().enumerate() {
            let occ = y[2 + 2 * k];
            let vac = y[3 + 2 * k];
            let eth = if tr.dark_occupied_ppm > 0.0 {
                tr.electron_capture * nd * (tr.total_ppm - tr.dark_occupied_ppm)
                    / tr.dark_occupied_ppm
            } else {
                0.0
            };
            let pe = if tr.photo_electron.two_photon { s * s } else { s } * tr.photo_electron.rate;
            let ph = if tr.photo_hole.two_photon { s * s } else { s } * tr.photo_hole.rate;
            let release_e = (pe + eth) * occ;
            let release_h = ph * vac;
            let capture_e = tr.electron_capture * y[0] * vac;
            let capture_h = tr.hole_capture * y[1] * occ;
            d[0] += release_e - capture_e;
            d[1] += release_h - capture_h;
            d[2 + 2 * k] = capture_e - release_e + release_h - capture_h;
            d[3 + 2 * k] = -d[2 + 2 * k];
        }
        d
    };
    let h = t / steps as f64;
    let mut y = y0.to_vec();
    let axpy = |y: &[f64], k: &[f64], a: f64| -> Vec<f64> {
        y.iter().zip(k).map(|(u, v)| u + a * v).collect()
    };
    for _ in 0..steps {
        let k1 = rhs(&y);
        let k2 = rhs(&axpy(&y, &k1, h / 2.0));
        let k3 = rhs(&axpy(&y, &k2, h / 2.0));
        let k4 = rhs(&axpy(&y, &k3, h));
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

fn center_vector(s: &TransportState) -> Vec<f64> {
    let mut y = vec![s.n[0], s.p[0]];
    for k in 0..s.trap_names.len() {
        y.push(s.occupied[k][0]);
        y.push(s.vacant[k][0]);
    }
    y
}

#[test]
fn pure_diffusion_conserves_particles_each_step() {
    let grid = RadialGrid::new(50e-6, 128, Boundary::Neumann).unwrap();
    let rates = trapless(2e-8, 1e-8);
    let mut s = gaussian_electrons(&grid, 5e-6);
    let dt = 0.9 * grid.stable_dt(rates.max_diffusion());
    let mut total = s.integrate(&s.n);
    for _ in 0..500 {
        s = step(&s, &rates, &[], dt).unwrap();
        let next = s.integrate(&s.n);
        assert!(((next - total) / total).abs() < 1e-6, "{total} -> {next}");
        total = next;
    }
    // The peak spread outwards and stayed non-negative.
    assert!(s.n[0] < 1e22 && s.n.iter().all(|&v| v >= 0.0));
    assert_eq!(s.clipped, 0.0);
}

#[test]
fn absorbing_boundary_accounts_for_outflow() {
    let grid = RadialGrid::new(20e-6, 64, Boundary::Absorbing).unwrap();
    let rates = trapless(2e-8, 1e-8);
    let mut s = gaussian_electrons(&grid, 6e-6);
    let dt = 0.9 * grid.stable_dt(rates.max_diffusion());
    let start = s.integrate(&s.n);
    for _ in 0..3000 {
        s = step(&s, &rates, &[], dt).unwrap();
    }
    let left = s.integrate(&s.n);
    assert!(left < 0.9 * start, "carriers should leave through r_max");
    let books = left + s.boundary_exchange;
    assert!(((books - start) / start).abs() < 1e-9, "{books} vs {start}");
}

#[test]
fn diffusion_matches_radial_heat_kernel() {
    // A 2-D Gaussian of variance σ² stays Gaussian with σ² + 2Dt.
    let grid = RadialGrid::new(60e-6, 400, Boundary::Neumann).unwrap();
    let d = 2e-8;
    let rates = trapless(d, d);
    let sigma0 = 4e-6;
    let rates_one = rates.clone();
    let mut s = TransportState::dark(&grid, &rates_one).unwrap();
    for (i, r) in s.radial_grid.clone().iter().enumerate() {
        s.n[i] = (-(r * r) / (2.0 * sigma0 * sigma0)).exp();
    }
    let dt = 0.5 * grid.stable_dt(d);
    let steps = 2000;
    for _ in 0..steps {
        s = step(&s, &rates, &[], dt).unwrap();
    }
    let var = sigma0 * sigma0 + 2.0 * d * dt * steps as f64;
    let peak = sigma0 * sigma0 / var;
    for (i, r) in s.radial_grid.iter().enumerate().step_by(20) {
        let exact = peak * (-(r * r) / (2.0 * var)).exp();
        assert!((s.n[i] - exact).abs() < 2e-3 * peak, "r = {r}: {} vs {exact}", s.n[i]);
    }
}

#[test]
fn photo_cycling_matches_closed_form() {
    // dQ-/dt = -k- Q- + k0 Q0 with no capture and no transport.
    let (k_minus, k_zero) = (3.0e4, 1.2e4);
    let rates = ChargeRateSet {
        reference_intensity: BeamProfile::default_pump().center_intensity(),
        dark_carrier_ppm: 0.0,
        diffusion_n: 0.0,
        diffusion_p: 0.0,
        traps: vec![TrapRates {
            name: "NV".into(),
            total_ppm: 2.0,
            dark_occupied_ppm: 2.0,
            occupied_charge: -1,
            electron_capture: 0.0,
            hole_capture: 0.0,
            photo_electron: PhotoRate::two_photon(k_minus),
            photo_hole: PhotoRate::two_photon(k_zero),
        }],
    };
    let grid = RadialGrid::new(40e-6, 32, Boundary::Neumann).unwrap();
    let beams = [BeamProfile::default_pump()];
    let light = relative_intensity(&grid.positions(), &beams, rates.reference_intensity);
    let mut s = TransportState::dark(&grid, &rates).unwrap();
    let dt = 1e-6;
    for _ in 0..1000 {
        s = step(&s, &rates, &beams, dt).unwrap();
    }
    let total = ppm_to_density(2.0);
    for (i, &x) in light.iter().enumerate() {
        let (km, k0) = (k_minus * x * x, k_zero * x * x);
        let rate = km + k0;
        let eq = if rate > 0.0 { k0 / rate * total } else { total };
        let exact = eq + (total - eq) * (-rate * s.time).exp();
        let got = s.occupied[0][i];
        assert!(((got - exact) / exact).abs() < 1e-6, "node {i}: {got} vs {exact}");
    }
}

#[test]
fn zero_dimensional_kinetics_match_ode_oracle() {
    let mut rates = ChargeRateSet::calibrated_default();
    rates.diffusion_n = 0.0;
    rates.diffusion_p = 0.0;
    let grid = RadialGrid::new(100e-6, 16, Boundary::Neumann).unwrap();
    let beams = [BeamProfile::default_pump()];
    let mut s = TransportState::dark(&grid, &rates).unwrap();
    let y0 = center_vector(&s);
    let dt = 1e-6;
    for _ in 0..1000 {
        s = step(&s, &rates, &beams, dt).unwrap();
    }
    let oracle = ode_oracle(&rates, 1.0, &y0, 1000.0 * dt, 64_000);
    let got = center_vector(&s);
    for (j, (a, b)) in got.iter().zip(&oracle).enumerate() {
        let scale = b.abs().max(ppm_to_density(1e-3));
        assert!(((a - b) / scale).abs() < 1e-6, "component {j}: {a} vs {b}");
    }
    // The pump moved the state well away from the dark start.
    assert!(density_to_ppm(got[4]) > 3.0);
}

#[test]
fn dark_state_is_stationary() {
    let cfg = PumpProbeConfig {
        schedule: vec![Phase { duration: 2e-3, pump: false, probe: false }],
        grid: RadialGrid { r_max: 100e-6, nodes: 64, boundary: Boundary::Neumann },
        snapshot_times: vec![0.0, 2e-3],
        ..PumpProbeConfig::calibrated_default()
    };
    let run = run_pump_probe(&cfg).unwrap();
    let (first, last) = (&run.snapshots[0], &run.snapshots[1]);
    for k in 0..first.trap_names.len() {
        for i in 0..first.nodes() {
            let (a, b) = (first.occupied[k][i], last.occupied[k][i]);
            assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{} node {i}", first.trap_names[k]);
        }
    }
    assert!(last.n.iter().all(|&v| (v - first.n[0]).abs() <= 1e-12 * first.n[0]));
}

#[test]
fn steady_state_limits() {
    let s = steady_state_ns0(10.0, 1e20, 0.0, 2e-19, 1e-19, 0.0);
    assert_eq!(s.ppm, 10.0);
    assert!(!s.no_dynamics);

    // γn n = γp p + kN.
    let (gn, gp, n, p) = (2e-19, 1e-19, 3e20, 2e20);
    let kn = gn * n - gp * p;
    let s = steady_state_ns0(10.0, n, p, gn, gp, kn);
    assert!((s.ppm - 5.0).abs() < 1e-12);

    assert_eq!(steady_state_ns0(10.0, 0.0, 1e20, 2e-19, 1e-19, 10.0).ppm, 0.0);
    assert_eq!(steady_state_ns0(10.0, 0.0, 1e20, 2e-19, 0.0, 10.0).ppm, 0.0);

    let s = steady_state_ns0(7.5, 0.0, 0.0, 2e-19, 1e-19, 0.0);
    assert!(s.no_dynamics);
    assert_eq!(s.ppm, 7.5);
}

#[test]
fn dark_occupation_matches_steady_state_formula() {
    let rates = ChargeRateSet::calibrated_default();
    let k = rates.trap_index("Ns").unwrap();
    let t = &rates.traps[k];
    let s = steady_state_ns0(
        t.total_ppm,
        rates.dark_carrier_density(),
        0.0,
        t.electron_capture,
        t.hole_capture,
        rates.release_rate(k, 0.0),
    );
    assert!((s.ppm - t.dark_occupied_ppm).abs() < 1e-12);
}

#[test]
fn uniform_illumination_relaxes_to_steady_state() {
    // A beam much wider than the grid makes the illumination uniform, so no
    // diffusion current flows.
    let rates = ChargeRateSet::calibrated_default();
    let power = 0.25 * rates.reference_intensity * std::f64::consts::PI * 0.25 / 2.0;
    let broad = BeamProfile::gaussian(1.0, power);
    let grid = RadialGrid::new(20e-6, 8, Boundary::Neumann).unwrap();
    let s_rel = relative_intensity(&[0.0], &[broad], rates.reference_intensity)[0];
    assert!((s_rel - 0.25).abs() < 1e-9, "{s_rel}");

    let mut s = TransportState::dark(&grid, &rates).unwrap();
    for _ in 0..40_000 {
        s = step(&s, &rates, &[broad], 1e-6).unwrap();
    }
    let k = rates.trap_index("Ns").unwrap();
    let t = &rates.traps[k];
    let predicted = steady_state_ns0(
        t.total_ppm,
        s.n[0],
        s.p[0],
        t.electron_capture,
        t.hole_capture,
        rates.release_rate(k, s_rel),
    );
    let got = s.occupied_ppm(k, 0);
    assert!(((got - predicted.ppm) / predicted.ppm).abs() < 0.01, "{got} vs {}", predicted.ppm);
    assert!((got - 2.0).abs() > 0.1, "illumination should move Ns0: {got}");
}

#[test]
fn pumped_run_conserves_charge() {
    let cfg = PumpProbeConfig {
        grid: RadialGrid { r_max: 80e-6, nodes: 128, boundary: Boundary::Neumann },
        schedule: vec![
            Phase { duration: 0.2e-3, pump: true, probe: false },
            Phase { duration: 0.3e-3, pump: false, probe: false },
        ],
        snapshot_times: vec![0.0, 0.1e-3, 0.2e-3, 0.5e-3],
        ..PumpProbeConfig::calibrated_default()
    };
    let run = run_pump_probe(&cfg).unwrap();
    let dark = &run.snapshots[0];
    let q0 = dark.net_negative_charge();
    for snap in &run.snapshots {
        for (k, t) in cfg.rates.traps.iter().enumerate() {
            let total = ppm_to_density(t.total_ppm);
            for i in 0..snap.nodes() {
                let sum = snap.occupied[k][i] + snap.vacant[k][i];
                assert!(((sum - total) / total).abs() < 1e-9, "{} node {i}", t.name);
            }
        }
        let q = snap.net_negative_charge();
        let scale = dark.integrate(&vec![ppm_to_density(1.0); dark.nodes()]);
        assert!((q - q0).abs() <= snap.clipped + 1e-12 * scale, "{q} vs {q0}");
    }
}

#[test]
fn calibrated_pump_doubles_center_ns0() {
    let start = std::time::Instant::now();
    let cfg = PumpProbeConfig::calibrated_default();
    let run = run_pump_probe(&cfg).unwrap();
    let ns = cfg.rates.trap_index("Ns").unwrap();
    let timing = charge_timing(&run, ns, 0).unwrap();
    assert!((timing.dark_ppm - 2.0).abs() < 1e-9);
    assert!((timing.pumped_ppm - 4.0).abs() < 0.02, "{timing:?}");
    assert!(timing.generation_time < 0.05e-3, "{timing:?}");
    assert!(timing.recovery_time.is_some_and(|t| t > 10e-3), "{timing:?}");
    assert!(start.elapsed().as_secs() < 120);

    // Enhancement is confined to a few beam radii.
    let pumped = &run.snapshots[1];
    assert!((pumped.time - 10e-3).abs() < 1e-12);
    let excess = |i: usize| pumped.occupied_ppm(ns, i) - 2.0;
    let far = pumped.radial_grid.iter().position(|&r| r >= 48e-6).unwrap();
    assert!(excess(far).abs() < 0.05 * excess(0), "{} vs {}", excess(far), excess(0));
    let half = pumped.radial_grid.iter().position(|&r| r >= 16e-6).unwrap();
    assert!(excess(half) < excess(0) && excess(far) < excess(half));

    // Recovery snapshots approach the dark value monotonically.
    let centre: Vec<f64> = run.snapshots[1..].iter().map(|s| s.occupied_ppm(ns, 0)).collect();
    assert!(centre.windows(2).all(|w| w[1] < w[0]), "{centre:?}");
    assert!(centre.last().unwrap() - 2.0 > 0.0);
}

#[test]
fn short_pump_rises_then_relaxes_slowly() {
    let cfg = PumpProbeConfig {
        grid: RadialGrid { r_max: 100e-6, nodes: 128, boundary: Boundary::Neumann },
        schedule: vec![
            Phase { duration: 0.04e-3, pump: true, probe: false },
            Phase { duration: 15e-3, pump: false, probe: false },
        ],
        snapshot_times: vec![],
        ..PumpProbeConfig::calibrated_default()
    };
    let run = run_pump_probe(&cfg).unwrap();
    let ns = cfg.rates.trap_index("Ns").unwrap();
    let timing = charge_timing(&run, ns, 0).unwrap();
    assert!(timing.pumped_ppm > 3.0, "{timing:?}");
    assert!(timing.generation_time < 0.04e-3);
    assert!(timing.recovery_time.is_none_or(|t| t > 10e-3), "{timing:?}");
}

#[test]
fn grid_refinement_changes_center_below_two_percent() {
    let pump_only = |nodes: usize, dt: f64| {
        let cfg = PumpProbeConfig {
            grid: RadialGrid { r_max: 100e-6, nodes, boundary: Boundary::Neumann },
            dt,
            schedule: vec![Phase { duration: 10e-3, pump: true, probe: false }],
            snapshot_times: vec![],
            ..PumpProbeConfig::calibrated_default()
        };
        let run = run_pump_probe(&cfg).unwrap();
        let ns = cfg.rates.trap_index("Ns").unwrap();
        run.final_state.occupied_ppm(ns, 0)
    };
    let coarse = pump_only(256, 1e-6);
    // Halving Δr forces dt down by four under the explicit bound.
    let fine = pump_only(511, 0.25e-6);
    assert!(((coarse - fine) / fine).abs() < 0.02, "{coarse} vs {fine}");
}

#[test]
fn unstable_step_is_rejected() {
    let grid = RadialGrid::new(10e-6, 101, Boundary::Neumann).unwrap();
    let rates = trapless(2e-8, 1e-8);
    let s = gaussian_electrons(&grid, 2e-6);
    let bound = grid.stable_dt(2e-8);
    match step(&s, &rates, &[], 1.01 * bound) {
        Err(Error::Stability { bound: b, .. }) => assert!((b - bound).abs() < 1e-12 * bound),
        other => panic!("expected stability error, got {other:?}"),
    }
    assert!(step(&s, &rates, &[], bound).is_ok());

    let mut cfg = PumpProbeConfig::calibrated_default();
    cfg.dt = 1e-4;
    assert!(matches!(run_pump_probe(&cfg), Err(Error::Stability { .. })));
}

#[test]
fn fast_kinetics_rejected() {
    let mut rates = ChargeRateSet::calibrated_default();
    rates.traps[0].photo_electron.rate = 1e9;
    let grid = RadialGrid::new(100e-6, 16, Boundary::Neumann).unwrap();
    let s = TransportState::dark(&grid, &rates).unwrap();
    let err = step(&s, &rates, &[BeamProfile::default_pump()], 1e-6).unwrap_err();
    assert!(matches!(err, Error::Stability { reason: "local trap kinetics", .. }), "{err}");
}

#[test]
fn non_finite_state_reports_location() {
    let grid = RadialGrid::new(10e-6, 11, Boundary::Neumann).unwrap();
    let rates = ChargeRateSet::calibrated_default();
    let mut s = TransportState::dark(&grid, &rates).unwrap();
    s.occupied[1][4] = f64::NAN;
    match step(&s, &rates, &[], 1e-9) {
        Err(Error::NonFinite { field, node, .. }) => {
            assert_eq!(field, "Ns occupied");
            assert_eq!(node, 4);
        }
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn invalid_inputs_rejected() {
    assert!(RadialGrid::new(0.0, 10, Boundary::Neumann).is_err());
    assert!(RadialGrid::new(1e-5, 2, Boundary::Neumann).is_err());
    assert!(BeamProfile::gaussian(0.0, 1.0).validate().is_err());
    assert!(BeamProfile::gaussian(1e-5, 0.0).validate().is_err());
    let mut rates = ChargeRateSet::calibrated_default();
    rates.traps[2].hole_capture = -1.0;
    assert!(rates.validate().is_err());
    let mut rates = ChargeRateSet::calibrated_default();
    rates.traps[1].dark_occupied_ppm = 11.0;
    assert!(rates.validate().is_err());
    let mut cfg = PumpProbeConfig::calibrated_default();
    cfg.schedule[0].probe = true;
    assert!(run_pump_probe(&cfg).is_err());
}

#[test]
fn beam_power_integrates_to_input() {
    let b = BeamProfile::gaussian(32e-6, 0.5);
    let grid = RadialGrid::new(80e-6, 2001, Boundary::Neumann).unwrap();
    let s = TransportState::dark(&grid, &trapless(0.0, 0.0)).unwrap();
    let profile: Vec<f64> = s.radial_grid.iter().map(|&r| b.intensity(r)).collect();
    let power = s.integrate(&profile);
    assert!((power - 0.5).abs() < 1e-5, "{power}");
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = PumpProbeConfig::calibrated_default();
    let text = toml::to_string(&cfg).unwrap();
    let back: PumpProbeConfig = toml::from_str(&text).unwrap();
    assert_eq!(cfg, back);
    let bad = text.replace("r_max", "radius");
    assert!(toml::from_str::<PumpProbeConfig>(&bad).is_err());
}

#[test]
fn profile_output_has_header_and_rows() {
    let grid = RadialGrid::new(10e-6, 5, Boundary::Neumann).unwrap();
    let s = TransportState::dark(&grid, &ChargeRateSet::calibrated_default()).unwrap();
    let mut out = Vec::new();
    write_profile(&s, ",", &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2 + 5);
    assert!(lines[1].contains("Ns_occupied_ppm"));
    assert_eq!(lines[2].split(',').count(), 3 + 2 * 3);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]
    #[test]
    fn random_runs_keep_trap_totals_and_signs(
        width in 2e-6f64..20e-6,
        amp in 0.0f64..5.0,
        cap in 1e-20f64..5e-19,
        photo in 0.0f64..5e4,
        nodes in 16usize..64,
    ) {
        let mut rates = ChargeRateSet::calibrated_default();
        for t in &mut rates.traps {
            t.electron_capture = cap;
            t.hole_capture = 0.5 * cap;
        }
        rates.traps[1].photo_electron.rate = photo;
        let grid = RadialGrid::new(60e-6, nodes, Boundary::Neumann).unwrap();
        let mut s = TransportState::dark(&grid, &rates).unwrap();
        for (i, r) in s.radial_grid.clone().iter().enumerate() {
            s.n[i] += ppm_to_density(amp) * (-(r * r) / (width * width)).exp();
        }
        let totals: Vec<f64> = (0..3).map(|k| s.occupied[k][0] + s.vacant[k][0]).collect();
        let dt = 1e-6f64.min(grid.stable_dt(rates.max_diffusion()));
        let beams = [BeamProfile::gaussian(2.0 * width, 0.5 * (width / 16e-6).powi(2))];
        for _ in 0..50 {
            s = step(&s, &rates, &beams, dt).unwrap();
        }
        for k in 0..3 {
            for i in 0..s.nodes() {
                let sum = s.occupied[k][i] + s.vacant[k][i];
                prop_assert!(((sum - totals[k]) / totals[k]).abs() < 1e-9);
                prop_assert!(s.occupied[k][i] >= 0.0 && s.vacant[k][i] >= 0.0);
            }
        }
        prop_assert!(s.n.iter().chain(&s.p).all(|&v| v >= 0.0));
    }
}
