//! Scenario documents: parsing, validation and resolution into model objects.
//!
//! Every validation message carries the line of the offending value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::Spanned;

use spinbath::constants::mhz_to_angular;
use spinbath::decoherence::LinewidthScaling;
use spinbath::flipflop::{BathComposition, BathEntry};
use spinbath::spinmodel::SpeciesConfig;
use spinbath::spinmodel::{DefectSpinModel, MagneticField};
use spinbath::transport::{BeamProfile, Boundary, ChargeRateSet, Phase, PumpProbeConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

type VResult<T> = std::result::Result<T, ValidationError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    seed: Option<Spanned<i64>>,
    field: Option<Spanned<RawField>>,
    #[serde(default)]
    species: Vec<Spanned<SpeciesConfig>>,
    #[serde(default)]
    bath: RawBath,
    spectrum: Option<Spanned<RawSpectrum>>,
    alpha: Option<Spanned<RawAlpha>>,
    coherence: Option<Spanned<RawCoherence>>,
    transport: Option<Spanned<RawTransport>>,
    fit: Option<Spanned<RawFit>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    gauss: Spanned<f64>,
    #[serde(default = "default_direction")]
    direction: Spanned<[f64; 3]>,
    gamma_d_mhz: Spanned<f64>,
}

fn default_direction() -> Spanned<[f64; 3]> {
    Spanned::new(0..0, [0.0, 0.0, 1.0])
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBath {
    #[serde(default)]
    before: BTreeMap<String, Spanned<f64>>,
    #[serde(default)]
    after: BTreeMap<String, Spanned<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpectrum {
    start_mhz: Spanned<f64>,
    stop_mhz: Spanned<f64>,
    points: Spanned<i64>,
    #[serde(default)]
    bath: Option<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAlpha {
    #[serde(default)]
    cluster_tolerance_mhz: Option<Spanned<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoherence {
    #[serde(default)]
    samples: Option<Spanned<i64>>,
    #[serde(default)]
    inversion_probability: Option<Spanned<f64>>,
    #[serde(default)]
    linewidth_scaling: Option<Spanned<String>>,
    #[serde(default)]
    deer_stop_us: Option<Spanned<f64>>,
    #[serde(default)]
    deer_points: Option<Spanned<i64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    duration_ms: f64,
    #[serde(default)]
    pump: bool,
    #[serde(default)]
    probe: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBeam {
    diameter_um: f64,
    power_w: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransport {
    r_max_um: Option<f64>,
    nodes: Option<usize>,
    boundary: Option<Boundary>,
    dt_us: Option<f64>,
    pump: Option<RawBeam>,
    probe: Option<RawBeam>,
    schedule: Option<Vec<RawPhase>>,
    snapshot_ms: Option<Vec<f64>>,
    rates: Option<ChargeRateSet>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    kind: Option<Spanned<String>>,
    input: Option<Spanned<String>>,
    peaks: Option<Spanned<i64>>,
    pin_d_omega: Option<bool>,
    d_omega_mhz: Option<Spanned<f64>>,
    tile: Option<Spanned<[i64; 2]>>,
    t2_reference_us: Option<Spanned<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    Spectrum,
    Decay,
    Frames,
}

impl FitKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spectrum" => Some(Self::Spectrum),
            "decay" => Some(Self::Decay),
            "frames" => Some(Self::Frames),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumSettings {
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub points: usize,
    pub use_after: bool,
}

#[derive(Debug, Clone)]
pub struct CoherenceSettings {
    pub samples: usize,
    pub inversion_probability: f64,
    pub linewidth_scaling: LinewidthScaling,
    pub deer_stop: f64,
    pub deer_points: usize,
}

#[derive(Debug, Clone)]
pub struct FitSettings {
    pub kind: Option<FitKind>,
    pub input: Option<PathBuf>,
    pub peaks: usize,
    pub pin_d_omega: bool,
    pub d_omega: f64,
    pub tile: (usize, usize),
    pub t2_reference: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            kind: None,
            input: None,
            peaks: 1,
            pin_d_omega: false,
            d_omega: spinbath::decoherence::DEER_D_OMEGA,
            tile: (1, 1),
            t2_reference: 10e-6,
        }
    }
}

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub hash: String,
    pub seed: u64,
    pub field: Option<MagneticField>,
    pub gamma_d: Option<f64>,
    pub species: Vec<DefectSpinModel>,
    pub before: Vec<(usize, f64)>,
    pub after: Vec<(usize, f64)>,
    pub spectrum: Option<SpectrumSettings>,
    pub cluster_tolerance: f64,
    pub coherence: CoherenceSettings,
    pub transport: Option<PumpProbeConfig>,
    pub fit: FitSettings,
}

/// 1-based line of byte offset `pos`.
fn line_of(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err<T>(&self, span: std::ops::Range<usize>, msg: impl std::fmt::Display) -> VResult<T> {
        Err(ValidationError(format!("line {}: {msg}", line_of(self.text, span.start))))
    }

    fn positive(&self, v: &Spanned<f64>, what: &str) -> VResult<f64> {
        let x = *v.get_ref();
        if !(x.is_finite() && x > 0.0) {
            return self.err(v.span(), format!("{what} must be a positive number, got {x}"));
        }
        Ok(x)
    }

    fn count(&self, v: &Spanned<i64>, min: i64, what: &str) -> VResult<usize> {
        let x = *v.get_ref();
        if x < min {
            return self.err(v.span(), format!("{what} must be at least {min}, got {x}"));
        }
        Ok(x as usize)
    }
}

/// Hex SHA-256 of the raw scenario bytes.
pub fn scenario_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn load(path: &Path) -> VResult<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ValidationError(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, base).map_err(|e| ValidationError(format!("{}: {}", path.display(), e.0)))
}

pub fn parse(text: &str, base: &Path) -> VResult<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
        ValidationError(format!("line {line}: {}", e.message()))
    })?;
    let cx = Ctx { text };

    let seed = match &raw.seed {
        None => 0,
        Some(s) if *s.get_ref() < 0 => return cx.err(s.span(), "seed must be ≥ 0"),
        Some(s) => *s.get_ref() as u64,
    };

    let (field, gamma_d) = match &raw.field {
        None => (None, None),
        Some(f) => {
            let inner = f.get_ref();
            let gauss = *inner.gauss.get_ref();
            if !(gauss.is_finite() && gauss >= 0.0) {
                return cx.err(inner.gauss.span(), format!("field must be ≥ 0 G, got {gauss}"));
            }
            let dir = Vector3::from(*inner.direction.get_ref());
            let field = MagneticField::from_gauss(gauss, dir).or_else(|e| {
                let span = if inner.direction.span().is_empty() { f.span() } else { inner.direction.span() };
                cx.err(span, e)
            })?;
            let gd = cx.positive(&inner.gamma_d_mhz, "gamma_d_mhz")?;
            (Some(field), Some(mhz_to_angular(gd)))
        }
    };

    let mut species = Vec::with_capacity(raw.species.len());
    for s in &raw.species {
        let model = s.get_ref().to_model().or_else(|e| cx.err(s.span(), e))?;
        model.validate().or_else(|e| cx.err(s.span(), e))?;
        if species.iter().any(|m: &DefectSpinModel| m.name == model.name) {
            return cx.err(s.span(), format!("duplicate species name `{}`", model.name));
        }
        species.push(model);
    }

    let resolve = |map: &BTreeMap<String, Spanned<f64>>| -> VResult<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for (name, v) in map {
            let Some(k) = species.iter().position(|m| &m.name == name) else {
                return cx.err(v.span(), format!("bath refers to undefined species `{name}`"));
            };
            let x = *v.get_ref();
            if !(x.is_finite() && x >= 0.0) {
                return cx.err(v.span(), format!("density of `{name}` must be ≥ 0 ppm, got {x}"));
            }
            out.push((k, x));
        }
        out.sort_by_key(|e| e.0);
        Ok(out)
    };
    let before = resolve(&raw.bath.before)?;
    let after = resolve(&raw.bath.after)?;

    let spectrum = match &raw.spectrum {
        None => None,
        Some(s) => {
            let r = s.get_ref();
            let start = *r.start_mhz.get_ref();
            if !start.is_finite() {
                return cx.err(r.start_mhz.span(), "start_mhz must be finite");
            }
            let stop = *r.stop_mhz.get_ref();
            if !(stop.is_finite() && stop > start) {
                return cx.err(r.stop_mhz.span(), "stop_mhz must exceed start_mhz");
            }
            let points = cx.count(&r.points, 2, "points")?;
            let use_after = match &r.bath {
                None => false,
                Some(b) => match b.get_ref().as_str() {
                    "before" => false,
                    "after" => true,
                    other => return cx.err(b.span(), format!("bath must be \"before\" or \"after\", got `{other}`")),
                },
            };
            Some(SpectrumSettings { start_mhz: start, stop_mhz: stop, points, use_after })
        }
    };

    let cluster_tolerance = match raw.alpha.as_ref().and_then(|a| a.get_ref().cluster_tolerance_mhz.as_ref()) {
        None => 2.0,
        Some(t) => cx.positive(t, "cluster_tolerance_mhz")?,
    };

    let mut coherence = CoherenceSettings {
        samples: 20_000,
        inversion_probability: 1.0,
        linewidth_scaling: LinewidthScaling::Density,
        deer_stop: 10e-6,
        deer_points: 201,
    };
    if let Some(c) = &raw.coherence {
        let r = c.get_ref();
        if let Some(s) = &r.samples {
            coherence.samples = cx.count(s, 1000, "samples")?;
        }
        if let Some(p) = &r.inversion_probability {
            let x = *p.get_ref();
            if !(x > 0.0 && x <= 1.0) {
                return cx.err(p.span(), format!("inversion_probability must lie in (0, 1], got {x}"));
            }
            coherence.inversion_probability = x;
        }
        if let Some(l) = &r.linewidth_scaling {
            coherence.linewidth_scaling = match l.get_ref().as_str() {
                "density" => LinewidthScaling::Density,
                "fixed" => LinewidthScaling::Fixed,
                other => return cx.err(l.span(), format!("linewidth_scaling must be \"density\" or \"fixed\", got `{other}`")),
            };
        }
        if let Some(t) = &r.deer_stop_us {
            coherence.deer_stop = cx.positive(t, "deer_stop_us")? * 1e-6;
        }
        if let Some(n) = &r.deer_points {
            coherence.deer_points = cx.count(n, 2, "deer_points")?;
        }
    }

    let transport = match &raw.transport {
        None => None,
        Some(t) => {
            let cfg = transport_config(t.get_ref());
            cfg.validate().or_else(|e| cx.err(t.span(), format!("transport: {e}")))?;
            Some(cfg)
        }
    };

    let mut fit = FitSettings::default();
    if let Some(f) = &raw.fit {
        let r = f.get_ref();
        if let Some(k) = &r.kind {
            fit.kind = Some(FitKind::parse(k.get_ref()).map_or_else(
                || cx.err(k.span(), format!("fit kind must be spectrum, decay or frames, got `{}`", k.get_ref())),
                Ok,
            )?);
        }
        if let Some(i) = &r.input {
            fit.input = Some(base.join(i.get_ref()));
        }
        if let Some(p) = &r.peaks {
            fit.peaks = cx.count(p, 1, "peaks")?;
        }
        if let Some(p) = r.pin_d_omega {
            fit.pin_d_omega = p;
        }
        if let Some(d) = &r.d_omega_mhz {
            fit.d_omega = mhz_to_angular(cx.positive(d, "d_omega_mhz")?);
        }
        if let Some(t) = &r.tile {
            let [h, w] = *t.get_ref();
            if h < 1 || w < 1 {
                return cx.err(t.span(), "tile dimensions must be ≥ 1");
            }
            fit.tile = (h as usize, w as usize);
        }
        if let Some(t) = &r.t2_reference_us {
            fit.t2_reference = cx.positive(t, "t2_reference_us")? * 1e-6;
        }
    }

    Ok(Scenario {
        hash: scenario_hash(text),
        seed,
        field,
        gamma_d,
        species,
        before,
        after,
        spectrum,
        cluster_tolerance,
        coherence,
        transport,
        fit,
    })
}

fn transport_config(raw: &RawTransport) -> PumpProbeConfig {
    let mut cfg = PumpProbeConfig::calibrated_default();
    if let Some(r) = raw.r_max_um {
        cfg.grid.r_max = r * 1e-6;
    }
    if let Some(n) = raw.nodes {
        cfg.grid.nodes = n;
    }
    if let Some(b) = raw.boundary {
        cfg.grid.boundary = b;
    }
    if let Some(dt) = raw.dt_us {
        cfg.dt = dt * 1e-6;
    }
    let beam = |b: &RawBeam| BeamProfile::gaussian(b.diameter_um * 1e-6, b.power_w);
    if let Some(b) = &raw.pump {
        cfg.pump = beam(b);
    }
    cfg.probe = raw.probe.as_ref().map(beam);
    if let Some(s) = &raw.schedule {
        cfg.schedule = s
            .iter()
            .map(|p| Phase { duration: p.duration_ms * 1e-3, pump: p.pump, probe: p.probe })
            .collect();
    }
    if let Some(s) = &raw.snapshot_ms {
        cfg.snapshot_times = s.iter().map(|t| t * 1e-3).collect();
    }
    if let Some(r) = &raw.rates {
        cfg.rates = r.clone();
    }
    cfg
}

impl Scenario {
    pub fn require_field(&self) -> VResult<(MagneticField, f64)> {
        match (self.field, self.gamma_d) {
            (Some(f), Some(g)) => Ok((f, g)),
            _ => Err(ValidationError("scenario has no [field] table".into())),
        }
    }

    pub fn bath(&self, after: bool) -> VResult<BathComposition> {
        let (_, gd) = self.require_field()?;
        let entries = if after { &self.after } else { &self.before };
        Ok(BathComposition::new(
            entries
                .iter()
                .map(|&(k, d)| BathEntry { model: self.species[k].clone(), density_ppm: d })
                .collect(),
            gd,
        ))
    }
}
