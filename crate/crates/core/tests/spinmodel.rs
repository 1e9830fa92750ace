mod common;

use common::{jacobi_eigenvalues, perturbative_lines};
use nalgebra::{Rotation3, Vector3};
use num_complex::Complex64;
use proptest::prelude::*;
use spinbath::constants::{angular_to_mhz, electron_gyromagnetic, mhz_to_angular};
use spinbath::spectra::species_lines;
use spinbath::spinmodel::*;

fn field_111() -> MagneticField {
    MagneticField::from_gauss(238.8, Vector3::new(1.0, 1.0, 1.0)).unwrap()
}

fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let range = a.last().unwrap() - a.first().unwrap();
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / range
}

#[test]
fn hamiltonians_are_hermitian() {
    for name in preset_names() {
        let m = preset(name).unwrap();
        for k in 0..m.orientations.len() {
            let h = build_hamiltonian(&m, &field_111(), k).unwrap();
            let norm = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(hermiticity_deviation(&h) < 1e-12 * norm, "{name}");
        }
    }
}

#[test]
fn p1_zero_field_is_traceless_hyperfine() {
    let m = Preset::P1.model();
    let h = build_hamiltonian(&m, &MagneticField::zero(), 2).unwrap();
    let tr: Complex64 = h.diagonal().iter().sum();
    assert!(tr.norm() < 1e-6, "{tr}");
    // Hyperfine-only levels for S = 1/2, I = 1 with axial A: an isolated
    // doublet pair at Azz/2 and mixed levels from the transverse part.
    let e = diagonalize(&h, 2).unwrap().energies;
    let azz = mhz_to_angular(114.0);
    let axx = mhz_to_angular(-82.0);
    // F = 3/2 stretched states |+1/2, +1⟩, |−1/2, −1⟩ have energy Azz/2.
    assert!(e.iter().filter(|&&x| (x - azz / 2.0).abs() < 1e-6 * azz).count() == 2);
    // Remaining 2×2 blocks: −Azz/4 ± √(Azz²/16 + Axx²/2) in each (mI sum ±1/2) sector.
    let root = (azz * azz / 16.0 + axx * axx / 2.0).sqrt();
    for target in [-azz / 4.0 + root, -azz / 4.0 - root] {
        assert_eq!(e.iter().filter(|&&x| (x - target).abs() < 1e-6 * azz).count(), 2);
    }
}

#[test]
fn eigen_system_invariants() {
    for name in preset_names() {
        let m = preset(name).unwrap();
        let h = build_hamiltonian(&m, &field_111(), 0).unwrap();
        let e = diagonalize(&h, 0).unwrap();
        let n = e.energies.len();
        assert!(e.energies.windows(2).all(|w| w[0] <= w[1]));
        let u = e.states.adjoint() * &e.states;
        let id = nalgebra::DMatrix::<Complex64>::identity(n, n);
        assert!((u - id).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-10);
        let range = e.energies[n - 1] - e.energies[0];
        for (k, &en) in e.energies.iter().enumerate() {
            let v = e.states.column(k);
            let res = &h * v - v * Complex64::from(en);
            assert!(res.norm() < 1e-9 * range, "{name}");
        }
    }
}

#[test]
fn p1_eigenvalues_match_jacobi_oracle() {
    let m = Preset::P1.model();
    for k in 0..4 {
        let h = build_hamiltonian(&m, &field_111(), k).unwrap();
        let e = diagonalize(&h, k).unwrap().energies;
        let j: Vec<f64> = jacobi_eigenvalues(&h).into_iter().step_by(2).collect();
        assert_eq!(e.len(), 6);
        assert!(rel_dev(&e, &j) < 1e-9, "orientation {k}");
    }
    // Larger composite space: NVH⁻ (12 states).
    let m = Preset::NvhMinus.model();
    let h = build_hamiltonian(&m, &field_111(), 1).unwrap();
    let e = diagonalize(&h, 1).unwrap().energies;
    let j: Vec<f64> = jacobi_eigenvalues(&h).into_iter().step_by(2).collect();
    assert!(rel_dev(&e, &j) < 1e-9);
}

#[test]
fn p1_aligned_lines_match_perturbation_theory() {
    let m = Preset::P1.model();
    let f = field_111();
    let zeeman = angular_to_mhz(electron_gyromagnetic(m.g_factor) * f.magnitude);
    assert!((zeeman - 669.2).abs() < 0.5, "{zeeman}");

    let oracle = perturbative_lines(&m, &f, 0);
    let mut exact: Vec<f64> = species_lines(&m, &f)
        .unwrap()
        .into_iter()
        .filter(|l| l.jt_index == 0 && l.electron_flip && l.intensity > 0.01)
        .map(|l| l.frequency)
        .collect();
    exact.sort_by(f64::total_cmp);
    assert_eq!(exact.len(), 3);
    for (e, o) in exact.iter().zip(&oracle) {
        // Third-order terms are O(A⊥³/ν²) ≈ 1 MHz.
        assert!((e - o).abs() < 1.5, "exact {e} vs perturbative {o}");
    }
    // Split by ≈ Azz around the Zeeman frequency.
    assert!(((exact[2] - exact[0]) / 2.0 - 114.0).abs() < 2.0);
    let cog: f64 = exact.iter().sum::<f64>() / 3.0;
    let oracle_cog: f64 = oracle.iter().sum::<f64>() / 3.0;
    assert!((cog - oracle_cog).abs() < 1.5);
    // The centre of gravity carries the second-order shift (2/3)A⊥²/ν_e above γeB.
    let shift = 2.0 / 3.0 * 82.0 * 82.0 / zeeman;
    assert!((cog - zeeman - shift).abs() < 1.5, "cog {cog}");
}

#[test]
fn zeeman_limit_first_order() {
    let m = Preset::P1.model();
    let f = MagneticField::new(1.0, Vector3::new(1.0, 1.0, 1.0)).unwrap();
    let nu = angular_to_mhz(electron_gyromagnetic(m.g_factor));
    let mut exact: Vec<f64> = species_lines(&m, &f)
        .unwrap()
        .into_iter()
        .filter(|l| l.jt_index == 0 && l.intensity > 0.01)
        .map(|l| l.frequency)
        .collect();
    exact.sort_by(f64::total_cmp);
    for (e, mi) in exact.iter().zip([-1.0, 0.0, 1.0]) {
        let first = nu + 114.0 * mi;
        assert!(((e - first) / first).abs() < 1e-3);
    }
}

#[test]
fn nvh0_zero_field_splitting() {
    let m = Preset::Nvh0.model();
    let e = solve(&m, &MagneticField::zero(), 0).unwrap().energies;
    let gap = angular_to_mhz(e[2] - e[0]);
    assert!((gap - 2290.0).abs() < 1e-6, "{gap}");
    assert!((e[2] - e[1]).abs() < 1e-9 * e[2].abs());
}

#[test]
fn basis_labels_cover_product_space() {
    let m = Preset::NvhMinus.model();
    let labels = m.basis_labels();
    assert_eq!(labels.len(), 12);
    assert_eq!(labels[0], vec![0.5, 0.5, 1.0]);
    assert_eq!(labels[11], vec![-0.5, -0.5, -1.0]);
    assert_eq!(solve(&m, &field_111(), 0).unwrap().basis_labels, labels);
}

#[test]
fn permuting_orientations_permutes_results() {
    let m = Preset::P1.model();
    let mut p = m.clone();
    p.orientations.reverse();
    let f = MagneticField::from_gauss(100.0, Vector3::new(0.3, -0.2, 0.9)).unwrap();
    for k in 0..4 {
        let a = solve(&m, &f, k).unwrap().energies;
        let b = solve(&p, &f, 3 - k).unwrap().energies;
        assert_eq!(a, b);
    }
}

#[test]
fn invalid_inputs_rejected() {
    let m = Preset::P1.model();
    assert!(build_hamiltonian(&m, &field_111(), 4).is_err());
    assert!(MagneticField::from_gauss(-1.0, Vector3::z()).is_err());
    let mut bad = m.clone();
    bad.nuclei[0].principal_axis = Vector3::new(0.0, 0.0, 1.1);
    assert!(build_hamiltonian(&bad, &field_111(), 0).is_err());
    let mut bad = m;
    bad.orientations[0].population = 0.3;
    assert!(bad.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rotational_covariance(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
                             angle in 0.0f64..6.2, gauss in 0.0f64..2000.0,
                             bx in -1.0f64..1.0, by in -1.0f64..1.0, bz in -1.0f64..1.0) {
        prop_assume!(bx * bx + by * by + bz * bz > 0.01);
        let q = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(ax, ay, az)), angle);
        for p in [Preset::P1, Preset::NvhMinus, Preset::Nvh0] {
            let m = p.model();
            let mut rm = m.clone();
            for o in &mut rm.orientations {
                o.axis = q * o.axis;
            }
            let dir = Vector3::new(bx, by, bz);
            let f = MagneticField::from_gauss(gauss, dir).unwrap();
            let rf = MagneticField::from_gauss(gauss, q * dir).unwrap();
            for k in 0..m.orientations.len() {
                let a = solve(&m, &f, k).unwrap().energies;
                let b = solve(&rm, &rf, k).unwrap().energies;
                let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-9 * scale);
                }
            }
        }
    }
}
