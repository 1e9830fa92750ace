//! Species definitions read from TOML.
//!
//! ```toml
//! preset = "P1"          # optional starting point
//! name = "P1-strained"
//! g_factor = 2.0023
//! orientations = "tetrahedral"   # or "single", or [{ axis = [..], population = .. }]
//!
//! [[nuclei]]
//! label = "14N"
//! spin_i = 1.0
//! a_mhz = [114.0, -82.0]        # [Azz, Axx] (axial) or [Azz, Axx, Ayy]
//! gamma_mhz_per_t = 3.0777
//! ```

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{preset, DefectSpinModel, JahnTellerOrientation, NuclearCoupling};
use crate::constants::{mhz_to_angular, G_DEFECT};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub spin_s: Option<f64>,
    pub g_factor: Option<f64>,
    /// Local-frame zero-field splitting, MHz.
    pub zfs_mhz: Option<[[f64; 3]; 3]>,
    pub nuclei: Option<Vec<NucleusConfig>>,
    pub orientations: Option<OrientationSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NucleusConfig {
    pub label: String,
    pub spin_i: f64,
    pub a_mhz: Vec<f64>,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    #[serde(default)]
    pub gamma_mhz_per_t: f64,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrientationSpec {
    Named(String),
    List(Vec<OrientationEntry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrientationEntry {
    pub axis: [f64; 3],
    pub population: f64,
}

fn unit(v: [f64; 3], what: &str) -> Result<Vector3<f64>> {
    let v = Vector3::from(v);
    let n = v.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Config(format!("{what}: axis must be a non-zero finite vector")));
    }
    Ok(v / n)
}

impl SpeciesConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolve into a validated model. Axes are normalised on input.
    pub fn to_model(&self) -> Result<DefectSpinModel> {
        let mut m = match &self.preset {
            Some(p) => preset(p)?,
            None => DefectSpinModel {
                name: String::new(),
                spin_s: self
                    .spin_s
                    .ok_or_else(|| Error::Config("spin_s is required without a preset".into()))?,
                g_factor: G_DEFECT,
                zfs: Matrix3::zeros(),
                nuclei: vec![],
                orientations: JahnTellerOrientation::single(),
            },
        };
        if let Some(n) = &self.name {
            m.name = n.clone();
        }
        if m.name.is_empty() {
            return Err(Error::Config("species needs a name or a preset".into()));
        }
        if let Some(s) = self.spin_s {
            m.spin_s = s;
        }
        if let Some(g) = self.g_factor {
            m.g_factor = g;
        }
        if let Some(z) = self.zfs_mhz {
            m.zfs = Matrix3::from_fn(|i, j| mhz_to_angular(z[i][j]));
        }
        if let Some(nuclei) = &self.nuclei {
            m.nuclei = nuclei
                .iter()
                .map(|n| {
                    let [azz, axx, ayy] = match n.a_mhz[..] {
                        [azz, axx] => [azz, axx, axx],
                        [azz, axx, ayy] => [azz, axx, ayy],
                        _ => {
                            return Err(Error::Config(format!(
                                "nucleus {}: a_mhz needs 2 or 3 values",
                                n.label
                            )))
                        }
                    };
                    Ok(NuclearCoupling {
                        isotope_label: n.label.clone(),
                        spin_i: n.spin_i,
                        hyperfine_principal: [azz, axx, ayy].map(mhz_to_angular),
                        principal_axis: unit(n.axis, &n.label)?,
                        gamma_n: mhz_to_angular(n.gamma_mhz_per_t),
                    })
                })
                .collect::<Result<_>>()?;
        }
        match &self.orientations {
            None => {}
            Some(OrientationSpec::Named(s)) => {
                m.orientations = match s.as_str() {
                    "tetrahedral" => JahnTellerOrientation::tetrahedral(),
                    "single" => JahnTellerOrientation::single(),
                    other => {
                        return Err(Error::Config(format!(
                            "orientations: unknown set `{other}` (use tetrahedral, single or a list)"
                        )))
                    }
                }
            }
            Some(OrientationSpec::List(list)) => {
                m.orientations = list
                    .iter()
                    .map(|o| {
                        Ok(JahnTellerOrientation {
                            axis: unit(o.axis, "orientation")?,
                            population: o.population,
                        })
                    })
                    .collect::<Result<_>>()?;
            }
        }
        m.validate()?;
        Ok(m)
    }
}
