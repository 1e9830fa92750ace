#![allow(dead_code)]

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use num_complex::Complex64;
use spinbath::constants::{angular_to_mhz, electron_gyromagnetic};
use spinbath::spinmodel::{rotation_from_z, spin_operators, DefectSpinModel, MagneticField};

/// Eigenvalues of a Hermitian matrix by cyclic Jacobi rotations on its real
/// 2n×2n embedding [[Re, −Im], [Im, Re]]; every eigenvalue appears twice.
pub fn jacobi_eigenvalues(h: &DMatrix<Complex64>) -> Vec<f64> {
    let n = h.nrows();
    let m = 2 * n;
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            a[i][j] = z.re;
            a[i + n][j + n] = z.re;
            a[i][j + n] = -z.im;
            a[i + n][j] = z.im;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..m)
            .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 * (0..m).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300) {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..m {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut e: Vec<f64> = (0..m).map(|i| a[i][i]).collect();
    e.sort_by(f64::total_cmp);
    e
}

fn hermitian_eigenvalues(h: &DMatrix<Complex64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(h.clone()).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Electron transition frequencies (MHz) of a spin-1/2 defect in
/// orientation `jt` from second-order perturbation theory in the hyperfine
/// coupling. Returns (frequency, m_I-like label order) for every pair of
/// effective nuclear levels (upper manifold k, lower manifold l) that
/// conserves the dominant nuclear projection.
pub fn perturbative_lines(model: &DefectSpinModel, field: &MagneticField, jt: usize) -> Vec<f64> {
    assert_eq!(model.spin_s, 0.5);
    assert_eq!(model.nuclei.len(), 1);
    let nuc = &model.nuclei[0];
    let r = rotation_from_z(&model.orientations[jt].axis);
    let a: Matrix3<f64> = r * nuc.local_tensor() * r.transpose();
    let b = field.direction;
    let nu_e = electron_gyromagnetic(model.g_factor) * field.magnitude;
    let e1 = {
        let t = if b.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        (t - b * t.dot(&b)).normalize()
    };
    let e2 = b.cross(&e1);
    let i_ops = spin_operators(nuc.spin_i);
    let comb = |v: Vector3<f64>| -> DMatrix<Complex64> {
        let w = a.transpose() * v; // v·A·I = Σ_c (vᵀA)_c I_c
        &i_ops[0] * Complex64::from(w.x) + &i_ops[1] * Complex64::from(w.y) + &i_ops[2] * Complex64::from(w.z)
    };
    let ab = comb(b);
    let x1 = comb(e1);
    let x2 = comb(e2);
    let i = Complex64::new(0.0, 1.0);
    let xp = &x1 + &x2 * i;
    let xm = &x1 - &x2 * i;
    let nz = {
        let w = b * nuc.gamma_n * field.magnitude;
        &i_ops[0] * Complex64::from(w.x) + &i_ops[1] * Complex64::from(w.y) + &i_ops[2] * Complex64::from(w.z)
    };
    let q = Complex64::from(1.0 / (4.0 * nu_e));
    let up = &ab * Complex64::from(0.5) - &nz + (&xm * &xp) * q;
    let dn = &ab * Complex64::from(-0.5) - &nz - (&xp * &xm) * q;
    let eu = hermitian_eigenvalues(&up);
    let ed = hermitian_eigenvalues(&dn);
    // Levels are ordered by ⟨b·A·I⟩ sign in each manifold; pair level k of
    // the upper manifold with the mirrored level of the lower one.
    let d = eu.len();
    (0..d)
        .map(|k| angular_to_mhz(nu_e + eu[k] - ed[d - 1 - k]))
        .collect()
}
