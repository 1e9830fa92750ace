use nalgebra::Vector3;
use proptest::prelude::*;
use spinbath::constants::{mhz_to_angular, PPM};
use spinbath::flipflop::*;
use spinbath::spectra::{species_lines, TransitionLine};
use spinbath::spinmodel::*;

fn field_111() -> MagneticField {
    MagneticField::from_gauss(238.8, Vector3::new(1.0, 1.0, 1.0)).unwrap()
}

fn gd() -> f64 {
    mhz_to_angular(1.0)
}

fn line(f: f64, w: f64) -> TransitionLine {
    TransitionLine {
        frequency: f,
        intensity: w,
        level_pair: (0, 1),
        jt_index: 0,
        species_name: "x".into(),
        electron_flip: true,
    }
}

fn six_peak() -> Vec<TransitionLine> {
    [(560.0, 1.0 / 12.0), (590.0, 0.25), (679.0, 1.0 / 12.0), (683.0, 0.25), (762.0, 0.25), (787.0, 1.0 / 12.0)]
        .into_iter()
        .map(|(f, w)| line(f, w))
        .collect()
}

#[test]
fn peak_method_gives_five_24ths() {
    let a = alpha_peaks(&six_peak(), 1.0).unwrap();
    assert!((a - 5.0 / 24.0).abs() <= 1e-15, "{a}");
    assert_eq!(alpha_peaks(&[line(669.0, 0.3), line(669.5, 0.7)], 1.0).unwrap(), 1.0);
    assert!(alpha_peaks(&six_peak(), 0.0).is_err());
}

#[test]
fn exact_converges_to_peaks_in_degenerate_limit() {
    // Within-peak detunings 0, between-peak detunings 10⁴ Γd.
    let sep = 1e4;
    let mut lines = Vec::new();
    for (k, w) in [1.0 / 12.0, 0.25, 1.0 / 12.0, 0.25, 0.25, 1.0 / 12.0].into_iter().enumerate() {
        lines.push(line(1000.0 + sep * k as f64, w / 2.0));
        lines.push(line(1000.0 + sep * k as f64, w / 2.0));
    }
    let exact = alpha_from_lines(&lines, gd()).unwrap();
    let peaks = alpha_peaks(&lines, 1.0).unwrap();
    assert!((exact - peaks).abs() < 1e-3);
}

#[test]
fn suppression_factor_reference_values() {
    let f = field_111();
    assert_eq!(alpha_exact(&Preset::FreeElectron.model(), &f, gd()).unwrap(), 1.0);
    let p1 = alpha_exact(&Preset::P1.model(), &f, gd()).unwrap();
    assert!((p1 - 0.208).abs() < 0.005, "{p1}");
    let vh0 = alpha_exact(&Preset::Vh0.model(), &f, gd()).unwrap();
    assert!((vh0 - 0.973).abs() < 0.01, "{vh0}");
    assert!(p1 < alpha_closed_form_jt() && (alpha_closed_form_jt() - 0.208).abs() < 0.05);
}

#[test]
fn alpha_monotone_in_linewidth() {
    let m = Preset::P1.model();
    let f = field_111();
    let mut last = 0.0;
    for k in 0..=20 {
        let g = mhz_to_angular(0.1 * 100f64.powf(k as f64 / 20.0));
        let a = alpha_exact(&m, &f, g).unwrap();
        assert!(a >= last && a > 0.0 && a <= 1.0);
        last = a;
    }
}

#[test]
fn channels_are_symmetric_pairs() {
    let lines = species_lines(&Preset::P1.model(), &field_111()).unwrap();
    let ch = channels(&lines, &lines);
    let flips = lines.iter().filter(|l| l.electron_flip).count();
    assert_eq!(ch.len(), flips * flips);
    assert!(ch.iter().all(|c| c.weight >= 0.0 && c.detuning >= 0.0));
    let num: f64 = ch.iter().map(|c| c.weight * gd().powi(2) / (gd().powi(2) + c.detuning.powi(2))).sum();
    let den: f64 = ch.iter().map(|c| c.weight).sum();
    let a = alpha_from_lines(&lines, gd()).unwrap();
    assert!((num / den - a).abs() < 1e-12);
}

fn bath(entries: &[(Preset, f64)]) -> BathComposition {
    BathComposition::new(
        entries
            .iter()
            .map(|&(p, d)| BathEntry {
                model: p.model(),
                density_ppm: d,
            })
            .collect(),
        gd(),
    )
}

#[test]
fn correlation_time_is_deterministic_and_thread_independent() {
    let b = bath(&[(Preset::P1, 2.0), (Preset::FreeElectron, 1.0)]);
    let f = field_111();
    let a = bath_correlation_time(&b, &f, 4000, 11).unwrap();
    let c = bath_correlation_time(&b, &f, 4000, 11).unwrap();
    assert_eq!(a, c);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let d = single.install(|| bath_correlation_time(&b, &f, 4000, 11).unwrap());
    assert_eq!(a, d);
    let e = bath_correlation_time(&b, &f, 4000, 12).unwrap();
    assert_ne!(a.tau_c, e.tau_c);
}

#[test]
fn rate_scales_with_density_squared() {
    let f = field_111();
    let xs: Vec<f64> = (0..5).map(|k| 10f64.powf(k as f64 / 4.0)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&n| bath_correlation_time(&bath(&[(Preset::FreeElectron, n)]), &f, 2000, 3).unwrap().rate)
        .collect();
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / 5.0;
    let my = ly.iter().sum::<f64>() / 5.0;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope - 2.0).abs() < 0.1, "{slope}");
}

#[test]
fn free_versus_p1_ratio_is_alpha() {
    let f = field_111();
    let free = bath_correlation_time(&bath(&[(Preset::FreeElectron, 3.0)]), &f, 4000, 5).unwrap();
    let p1 = bath_correlation_time(&bath(&[(Preset::P1, 3.0)]), &f, 4000, 5).unwrap();
    let alpha = alpha_exact(&Preset::P1.model(), &f, gd()).unwrap();
    assert!((p1.rate / free.rate / alpha - 1.0).abs() < 0.05);
    assert!((p1.rate / free.rate / 0.208 - 1.0).abs() < 0.05);
}

#[test]
fn resonant_only_channels_scale_unsuppressed_rate() {
    let n = [2.0 * PPM];
    let full = correlation_time_from_weights(&n, &[1.0], gd(), 4000, 9).unwrap();
    let sup = correlation_time_from_weights(&n, &[0.3], gd(), 4000, 9).unwrap();
    assert!((sup.rate / full.rate - 0.3).abs() < 1e-12);
}

#[test]
fn standard_error_shrinks_with_samples() {
    let b = bath(&[(Preset::P1, 2.0)]);
    let f = field_111();
    let ratios: Vec<f64> = (0..4)
        .map(|s| {
            let a = bath_correlation_time(&b, &f, 32_000, s).unwrap();
            let c = bath_correlation_time(&b, &f, 64_000, s + 100).unwrap();
            a.rate_std_error / c.rate_std_error
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean / 2f64.sqrt() - 1.0).abs() < 0.2, "{ratios:?}");
}

#[test]
fn zero_density_gives_infinite_tau() {
    let r = bath_correlation_time(&bath(&[(Preset::P1, 0.0)]), &field_111(), 1000, 0).unwrap();
    assert!(r.is_infinite());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn alpha_invariant_under_rescaling(scale in 1e-3f64..1e3, g in 0.1f64..10.0) {
        let lines = six_peak();
        let scaled: Vec<_> = lines.iter().map(|l| line(l.frequency, l.intensity * scale)).collect();
        let a = alpha_from_lines(&lines, mhz_to_angular(g)).unwrap();
        let b = alpha_from_lines(&scaled, mhz_to_angular(g)).unwrap();
        prop_assert!((a - b).abs() < 1e-12 && a > 0.0 && a <= 1.0 + 1e-12);
        prop_assert!((alpha_peaks(&scaled, 1.0).unwrap() - 5.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_peaks_invariant_under_within_peak_reshuffle(split in 0.01f64..0.99, jitter in 0.0f64..0.5) {
        let mut lines = Vec::new();
        for l in six_peak() {
            lines.push(line(l.frequency - jitter, l.intensity * split));
            lines.push(line(l.frequency + jitter, l.intensity * (1.0 - split)));
        }
        prop_assert!((alpha_peaks(&lines, 1.5).unwrap() - 5.0 / 24.0).abs() < 1e-12);
    }
}
