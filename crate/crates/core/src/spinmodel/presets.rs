//! Built-in species.

use nalgebra::Matrix3;

use super::{DefectSpinModel, JahnTellerOrientation, NuclearCoupling};
use crate::constants::{mhz_to_angular, G_DEFECT, GAMMA_14N, GAMMA_1H};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    FreeElectron,
    /// Neutral substitutional nitrogen (Ns⁰), ¹⁴N hyperfine, four JT axes.
    P1,
    /// NVH⁻, ¹H and ¹⁴N hyperfine along the C3v axis.
    NvhMinus,
    /// Placeholder H1 centre. Parameters are not verified.
    H1,
    /// VH⁰ with a single isotropic ¹H coupling calibrated to α = 0.973 at
    /// 238.8 G, Γd = (2π) 1 MHz.
    Vh0,
    /// NVH⁰ (S = 1), DFT zero-field splitting.
    Nvh0,
    /// VH2⁰ (S = 1), DFT zero-field splitting in the cubic frame.
    Vh20,
}

/// Isotropic ¹H hyperfine of the VH⁰ preset, MHz (calibrated).
pub const VH0_PROTON_MHZ: f64 = 0.2388;

const ALL: [(Preset, &str); 7] = [
    (Preset::FreeElectron, "free_electron"),
    (Preset::P1, "P1"),
    (Preset::NvhMinus, "NVH-"),
    (Preset::H1, "H1"),
    (Preset::Vh0, "VH0"),
    (Preset::Nvh0, "NVH0"),
    (Preset::Vh20, "VH20"),
];

pub fn preset_names() -> Vec<&'static str> {
    ALL.iter().map(|(_, n)| *n).collect()
}

/// Look up a preset by name (case-insensitive).
pub fn preset(name: &str) -> Result<DefectSpinModel> {
    ALL.iter()
        .find(|(_, n)| n.eq_ignore_ascii_case(name))
        .map(|(p, _)| p.model())
        .ok_or_else(|| {
            Error::invalid(format!(
                "unknown species preset `{name}` (known: {})",
                preset_names().join(", ")
            ))
        })
}

fn mhz(x: f64) -> f64 {
    mhz_to_angular(x)
}

fn ghz_tensor(rows: [[f64; 3]; 3]) -> Matrix3<f64> {
    let m = Matrix3::from_fn(|i, j| mhz(rows[i][j] * 1e3));
    // DFT tensors are printed with a small trace; keep the traceless part.
    m - Matrix3::identity() * (m.trace() / 3.0)
}

impl Preset {
    pub fn name(self) -> &'static str {
        ALL.iter().find(|(p, _)| *p == self).unwrap().1
    }

    /// False for presets whose parameters are placeholders.
    pub fn verified(self) -> bool {
        !matches!(self, Preset::H1)
    }

    pub fn model(self) -> DefectSpinModel {
        let base = |spin_s: f64, nuclei: Vec<NuclearCoupling>, orientations| DefectSpinModel {
            name: self.name().to_string(),
            spin_s,
            g_factor: G_DEFECT,
            zfs: Matrix3::zeros(),
            nuclei,
            orientations,
        };
        let tetra = JahnTellerOrientation::tetrahedral;
        match self {
            Preset::FreeElectron => base(0.5, vec![], JahnTellerOrientation::single()),
            Preset::P1 => base(
                0.5,
                vec![NuclearCoupling::axial("14N", 1.0, mhz(114.0), mhz(-82.0), GAMMA_14N)],
                tetra(),
            ),
            Preset::NvhMinus => base(
                0.5,
                vec![
                    NuclearCoupling::axial("1H", 0.5, mhz(13.69), mhz(-9.05), GAMMA_1H),
                    NuclearCoupling::axial("14N", 1.0, mhz(2.1), mhz(-2.2), GAMMA_14N),
                ],
                tetra(),
            ),
            Preset::H1 => base(
                0.5,
                vec![NuclearCoupling::axial("1H", 0.5, mhz(6.0), mhz(-3.0), GAMMA_1H)],
                tetra(),
            ),
            Preset::Vh0 => base(
                0.5,
                vec![NuclearCoupling::axial(
                    "1H",
                    0.5,
                    mhz(VH0_PROTON_MHZ),
                    mhz(VH0_PROTON_MHZ),
                    GAMMA_1H,
                )],
                tetra(),
            ),
            Preset::Nvh0 => {
                let mut m = base(1.0, vec![], tetra());
                m.zfs = ghz_tensor([[-0.76, 0.0, 0.0], [0.0, -0.76, 0.0], [0.0, 0.0, 1.53]]);
                m
            }
            Preset::Vh20 => {
                let mut m = base(1.0, vec![], JahnTellerOrientation::single());
                m.zfs = ghz_tensor([[-0.40, 0.0, 2.21], [0.0, 0.79, 0.0], [2.21, 0.0, -0.40]]);
                m
            }
        }
    }
}
