//! Single-defect spin Hamiltonians and their exact diagonalization.
//!
//! The Hamiltonian of one defect in Jahn-Teller orientation `k` is
//!
//! ```text
//! H = γ_e B·S + S·D_k·S + Σ_j S·A_jk·I_j − Σ_j γ_n,j B·I_j
//! ```
//!
//! with every tensor given in the defect's local frame (local ẑ = the
//! orientation axis) and rotated into the crystal frame. All entries are in
//! rad/s.

mod config;
mod presets;

pub use config::{NucleusConfig, OrientationSpec, SpeciesConfig};
pub use presets::{preset, preset_names, Preset};

use nalgebra::{DMatrix, Matrix3, Rotation3, Unit, Vector3};
use num_complex::Complex64;

use crate::constants::{electron_gyromagnetic, GAUSS};
use crate::{Error, Result};

/// Largest composite Hilbert-space dimension accepted by [`build_hamiltonian`].
pub const MAX_DIMENSION: usize = 64;

const UNIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NuclearCoupling {
    pub isotope_label: String,
    pub spin_i: f64,
    /// Principal hyperfine values (Azz, Axx, Ayy), rad/s.
    pub hyperfine_principal: [f64; 3],
    /// Principal z axis of the hyperfine tensor in the defect local frame.
    pub principal_axis: Vector3<f64>,
    /// Nuclear gyromagnetic ratio, rad/(s·T).
    pub gamma_n: f64,
}

impl NuclearCoupling {
    /// Axially symmetric coupling along the local ẑ axis.
    pub fn axial(label: &str, spin_i: f64, azz: f64, axx: f64, gamma_n: f64) -> Self {
        Self {
            isotope_label: label.to_string(),
            spin_i,
            hyperfine_principal: [azz, axx, axx],
            principal_axis: Vector3::z(),
            gamma_n,
        }
    }

    fn validate(&self) -> Result<()> {
        if ![0.5, 1.0, 1.5].contains(&self.spin_i) {
            return Err(Error::invalid(format!(
                "nucleus {}: spin I = {} not in {{1/2, 1, 3/2}}",
                self.isotope_label, self.spin_i
            )));
        }
        check_unit(&self.principal_axis, &self.isotope_label)?;
        if self.hyperfine_principal.iter().any(|a| !a.is_finite()) || !self.gamma_n.is_finite() {
            return Err(Error::invalid(format!(
                "nucleus {}: non-finite coupling",
                self.isotope_label
            )));
        }
        Ok(())
    }

    /// Hyperfine tensor in the defect local frame.
    pub fn local_tensor(&self) -> Matrix3<f64> {
        let [azz, axx, ayy] = self.hyperfine_principal;
        let r = rotation_from_z(&self.principal_axis);
        r * Matrix3::from_diagonal(&Vector3::new(axx, ayy, azz)) * r.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JahnTellerOrientation {
    pub axis: Vector3<f64>,
    pub population: f64,
}

impl JahnTellerOrientation {
    /// The four ⟨111⟩ directions of the diamond lattice with equal weights.
    pub fn tetrahedral() -> Vec<Self> {
        [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)]
            .into_iter()
            .map(|(x, y, z)| Self {
                axis: Vector3::new(x, y, z).normalize(),
                population: 0.25,
            })
            .collect()
    }

    /// One orientation whose local frame coincides with the crystal frame.
    pub fn single() -> Vec<Self> {
        vec![Self {
            axis: Vector3::z(),
            population: 1.0,
        }]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefectSpinModel {
    pub name: String,
    pub spin_s: f64,
    pub g_factor: f64,
    /// Zero-field splitting tensor in the local frame, rad/s.
    pub zfs: Matrix3<f64>,
    pub nuclei: Vec<NuclearCoupling>,
    pub orientations: Vec<JahnTellerOrientation>,
}

impl DefectSpinModel {
    pub fn dimension(&self) -> usize {
        self.dims().iter().product()
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![multiplicity(self.spin_s)];
        d.extend(self.nuclei.iter().map(|n| multiplicity(n.spin_i)));
        d
    }

    pub fn validate(&self) -> Result<()> {
        if ![0.5, 1.0, 1.5].contains(&self.spin_s) {
            return Err(Error::invalid(format!(
                "{}: electron spin S = {} not in {{1/2, 1, 3/2}}",
                self.name, self.spin_s
            )));
        }
        if !(self.g_factor.is_finite() && self.g_factor > 0.0) {
            return Err(Error::invalid(format!("{}: g-factor must be positive", self.name)));
        }
        for n in &self.nuclei {
            n.validate()?;
        }
        let scale = self.zfs.abs().max().max(f64::MIN_POSITIVE);
        if (self.zfs - self.zfs.transpose()).abs().max() > 1e-9 * scale {
            return Err(Error::invalid(format!("{}: ZFS tensor not symmetric", self.name)));
        }
        if self.zfs.trace().abs() > 1e-6 * scale {
            return Err(Error::invalid(format!("{}: ZFS tensor not traceless", self.name)));
        }
        if self.orientations.is_empty() {
            return Err(Error::invalid(format!("{}: no orientations", self.name)));
        }
        for o in &self.orientations {
            check_unit(&o.axis, &self.name)?;
            if !(o.population >= 0.0) {
                return Err(Error::invalid(format!("{}: negative population", self.name)));
            }
        }
        let total: f64 = self.orientations.iter().map(|o| o.population).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "{}: orientation populations sum to {total}, expected 1",
                self.name
            )));
        }
        let dim = self.dimension();
        if dim > MAX_DIMENSION {
            return Err(Error::DimensionOverflow {
                dim,
                limit: MAX_DIMENSION,
            });
        }
        Ok(())
    }

    /// Product-basis labels (m_S, m_I1, …), electron index slowest.
    pub fn basis_labels(&self) -> Vec<Vec<f64>> {
        let mut spins = vec![self.spin_s];
        spins.extend(self.nuclei.iter().map(|n| n.spin_i));
        let mut labels: Vec<Vec<f64>> = vec![vec![]];
        for s in spins {
            let ms = projections(s);
            labels = labels
                .into_iter()
                .flat_map(|l| {
                    ms.iter().map(move |&m| {
                        let mut l = l.clone();
                        l.push(m);
                        l
                    })
                })
                .collect();
        }
        labels
    }

    /// Crystal-frame rotation for orientation `jt_index`.
    pub fn orientation_rotation(&self, jt_index: usize) -> Result<Matrix3<f64>> {
        let o = self.orientations.get(jt_index).ok_or_else(|| {
            Error::invalid(format!(
                "{}: orientation index {jt_index} out of range ({} orientations)",
                self.name,
                self.orientations.len()
            ))
        })?;
        Ok(rotation_from_z(&o.axis))
    }

    /// Electron spin operators (Sx, Sy, Sz) embedded in the composite space.
    pub fn electron_operators(&self) -> [DMatrix<Complex64>; 3] {
        let dims = self.dims();
        spin_operators(self.spin_s).map(|op| embed(&op, 0, &dims))
    }

    fn nuclear_operators(&self, k: usize) -> [DMatrix<Complex64>; 3] {
        let dims = self.dims();
        spin_operators(self.nuclei[k].spin_i).map(|op| embed(&op, k + 1, &dims))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagneticField {
    /// Magnitude, tesla.
    pub magnitude: f64,
    /// Unit direction in the crystal frame.
    pub direction: Vector3<f64>,
}

impl MagneticField {
    pub fn new(tesla: f64, direction: Vector3<f64>) -> Result<Self> {
        if !(tesla >= 0.0 && tesla.is_finite()) {
            return Err(Error::invalid(format!("negative or non-finite field magnitude {tesla}")));
        }
        let norm = direction.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::invalid("field direction must be a non-zero vector"));
        }
        Ok(Self {
            magnitude: tesla,
            direction: direction / norm,
        })
    }

    pub fn from_gauss(gauss: f64, direction: Vector3<f64>) -> Result<Self> {
        Self::new(gauss * GAUSS, direction)
    }

    pub fn zero() -> Self {
        Self {
            magnitude: 0.0,
            direction: Vector3::z(),
        }
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.direction * self.magnitude
    }

    fn validate(&self) -> Result<()> {
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::invalid(format!(
                "negative or non-finite field magnitude {}",
                self.magnitude
            )));
        }
        check_unit(&self.direction, "field direction")
    }
}

#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Ascending eigen-energies, rad/s.
    pub energies: Vec<f64>,
    /// Column `i` is the eigenvector of `energies[i]` in the product basis.
    pub states: DMatrix<Complex64>,
    /// Product-basis labels; empty when produced by bare [`diagonalize`].
    pub basis_labels: Vec<Vec<f64>>,
    pub jt_index: usize,
}

/// Build the Hamiltonian of `model` in orientation `jt_index`.
pub fn build_hamiltonian(
    model: &DefectSpinModel,
    field: &MagneticField,
    jt_index: usize,
) -> Result<DMatrix<Complex64>> {
    model.validate()?;
    field.validate()?;
    let r = model.orientation_rotation(jt_index)?;
    let dim = model.dimension();
    let s = model.electron_operators();
    let b = field.vector();
    let mut h = DMatrix::<Complex64>::zeros(dim, dim);

    let gamma_e = electron_gyromagnetic(model.g_factor);
    for a in 0..3 {
        if b[a] != 0.0 {
            h += &s[a] * Complex64::from(gamma_e * b[a]);
        }
    }

    let d = r * model.zfs * r.transpose();
    add_bilinear(&mut h, &d, &s, &s);

    for (k, nuc) in model.nuclei.iter().enumerate() {
        let i_ops = model.nuclear_operators(k);
        let a = r * nuc.local_tensor() * r.transpose();
        add_bilinear(&mut h, &a, &s, &i_ops);
        for c in 0..3 {
            if b[c] != 0.0 {
                h -= &i_ops[c] * Complex64::from(nuc.gamma_n * b[c]);
            }
        }
    }
    // Remove rounding-level anti-Hermitian residue.
    let h = (&h + h.adjoint()) * Complex64::from(0.5);
    Ok(h)
}

/// Largest |H_ij − conj(H_ji)|.
pub fn hermiticity_deviation(h: &DMatrix<Complex64>) -> f64 {
    (h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Exact diagonalization of a Hermitian matrix.
///
/// Eigenvalues are sorted ascending; ties (within 1e-12 of the spectral
/// range) are ordered by the product-basis index of each vector's largest
/// component. Each eigenvector is phased so that its largest component is
/// real and positive.
pub fn diagonalize(h: &DMatrix<Complex64>, jt_index: usize) -> Result<EigenSystem> {
    if h.nrows() != h.ncols() || h.nrows() == 0 {
        return Err(Error::invalid("Hamiltonian must be a non-empty square matrix"));
    }
    let scale = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let deviation = hermiticity_deviation(h);
    let tolerance = 1e-10 * scale.max(f64::MIN_POSITIVE);
    if deviation > tolerance {
        return Err(Error::NotHermitian { deviation, tolerance });
    }
    let n = h.nrows();
    let eig = h.clone().symmetric_eigen();

    let dominant: Vec<usize> = (0..n)
        .map(|c| {
            let col = eig.eigenvectors.column(c);
            (0..n)
                .max_by(|&a, &b| col[a].norm().total_cmp(&col[b].norm()).then(b.cmp(&a)))
                .unwrap()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let range = eig.eigenvalues.max() - eig.eigenvalues.min();
    let tie = 1e-12 * range.max(f64::MIN_POSITIVE);
    // Stable reorder of near-degenerate runs by dominant basis index.
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && eig.eigenvalues[order[end]] - eig.eigenvalues[order[end - 1]] <= tie {
            end += 1;
        }
        order[start..end].sort_by_key(|&c| dominant[c]);
        start = end;
    }

    let mut states = DMatrix::<Complex64>::zeros(n, n);
    let mut energies = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        energies.push(eig.eigenvalues[src]);
        let col = eig.eigenvectors.column(src);
        let pivot = col[dominant[src]];
        let phase = pivot.conj() / pivot.norm();
        for r in 0..n {
            states[(r, dst)] = col[r] * phase;
        }
    }
    Ok(EigenSystem {
        energies,
        states,
        basis_labels: Vec::new(),
        jt_index,
    })
}

/// Build and diagonalize in one call, attaching basis labels.
pub fn solve(model: &DefectSpinModel, field: &MagneticField, jt_index: usize) -> Result<EigenSystem> {
    let h = build_hamiltonian(model, field, jt_index)?;
    let mut eig = diagonalize(&h, jt_index)?;
    eig.basis_labels = model.basis_labels();
    Ok(eig)
}

/// Rotation taking ẑ onto `axis` about ẑ × axis (identity for axis = ẑ).
pub fn rotation_from_z(axis: &Vector3<f64>) -> Matrix3<f64> {
    let a = axis.normalize();
    let z = Vector3::z();
    let c = z.dot(&a);
    let v = z.cross(&a);
    if v.norm() < 1e-14 {
        return if c > 0.0 {
            Matrix3::identity()
        } else {
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
        };
    }
    Rotation3::from_axis_angle(&Unit::new_normalize(v), c.clamp(-1.0, 1.0).acos()).into_inner()
}

/// Spin matrices (Sx, Sy, Sz) for spin `s`, basis ordered m = s, s−1, …, −s.
pub fn spin_operators(s: f64) -> [DMatrix<Complex64>; 3] {
    let ms = projections(s);
    let d = ms.len();
    let mut sp = DMatrix::<Complex64>::zeros(d, d);
    for i in 1..d {
        let m = ms[i];
        sp[(i - 1, i)] = Complex64::from((s * (s + 1.0) - m * (m + 1.0)).sqrt());
    }
    let sm = sp.adjoint();
    let sx = (&sp + &sm) * Complex64::from(0.5);
    let sy = (&sp - &sm) * Complex64::new(0.0, -0.5);
    let sz = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        ms.iter().map(|&m| Complex64::from(m)),
    ));
    [sx, sy, sz]
}

fn projections(s: f64) -> Vec<f64> {
    let d = multiplicity(s);
    (0..d).map(|k| s - k as f64).collect()
}

fn multiplicity(s: f64) -> usize {
    (2.0 * s).round() as usize + 1
}

fn embed(op: &DMatrix<Complex64>, slot: usize, dims: &[usize]) -> DMatrix<Complex64> {
    let mut out = DMatrix::<Complex64>::identity(1, 1);
    for (k, &d) in dims.iter().enumerate() {
        let factor = if k == slot {
            op.clone()
        } else {
            DMatrix::<Complex64>::identity(d, d)
        };
        out = out.kronecker(&factor);
    }
    out
}

fn add_bilinear(
    h: &mut DMatrix<Complex64>,
    t: &Matrix3<f64>,
    left: &[DMatrix<Complex64>; 3],
    right: &[DMatrix<Complex64>; 3],
) {
    for a in 0..3 {
        for c in 0..3 {
            if t[(a, c)] != 0.0 {
                *h += (&left[a] * &right[c]) * Complex64::from(t[(a, c)]);
            }
        }
    }
}

fn check_unit(v: &Vector3<f64>, what: &str) -> Result<()> {
    if (v.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!(
            "{what}: axis {:?} is not a unit vector (norm {})",
            v.as_slice(),
            v.norm()
        )));
    }
    Ok(())
}
