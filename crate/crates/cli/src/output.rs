//! Plain-text tables with a provenance header.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;

use spinbath::constants::{gamma_e, CARBON_DENSITY, G_DEFECT, HBAR, MU_0, MU_B, PPM};
use spinbath::decoherence::dephasing_constant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Space-aligned columns.
    Columnar,
    /// Comma-separated values.
    Delimited,
}

#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: &'static str,
    pub scenario_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# spinbath {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "# command {}", self.command);
        let _ = writeln!(s, "# scenario_sha256 {}", self.scenario_hash);
        let _ = writeln!(s, "# seed {}", self.seed);
        for (name, value, unit) in constants() {
            let _ = writeln!(s, "# constant {name} = {value:.10e} {unit}");
        }
        s
    }
}

fn constants() -> [(&'static str, f64, &'static str); 8] {
    [
        ("mu_0", MU_0, "N/A^2"),
        ("mu_B", MU_B, "J/T"),
        ("hbar", HBAR, "J*s"),
        ("g_defect", G_DEFECT, ""),
        ("gamma_e", gamma_e(), "rad/(s*T)"),
        ("carbon_density", CARBON_DENSITY, "m^-3"),
        ("ppm_density", PPM, "m^-3"),
        ("dephasing_per_ppm", dephasing_constant(), "us^-1/ppm"),
    ]
}

/// Formats a float for output: fixed 10 significant digits in exponent form.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.9e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "masked".into(), num)
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub notes: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            notes: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, s: impl Into<String>) -> &mut Self {
        self.notes.push(s.into());
        self
    }

    pub fn row(&mut self, cells: Vec<String>) -> &mut Self {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
        self
    }

    pub fn render(&self, format: Format, prov: &Provenance) -> String {
        let mut out = prov.header();
        for n in &self.notes {
            let _ = writeln!(out, "# {n}");
        }
        match format {
            Format::Delimited => {
                let _ = writeln!(out, "{}", self.columns.join(","));
                for r in &self.rows {
                    let _ = writeln!(out, "{}", r.join(","));
                }
            }
            Format::Columnar => {
                let mut width: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
                for r in &self.rows {
                    for (w, c) in width.iter_mut().zip(r) {
                        *w = (*w).max(c.chars().count());
                    }
                }
                let line = |cells: &[String]| {
                    cells
                        .iter()
                        .zip(&width)
                        .map(|(c, w)| format!("{c:>w$}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                };
                let _ = writeln!(out, "{}", line(&self.columns));
                for r in &self.rows {
                    let _ = writeln!(out, "{}", line(r));
                }
            }
        }
        out
    }
}

/// Writes `table` to `dir/name.{txt,csv}` and returns the path.
pub fn write_table(
    dir: &Path,
    name: &str,
    table: &Table,
    format: Format,
    prov: &Provenance,
) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let ext = match format {
        Format::Columnar => "txt",
        Format::Delimited => "csv",
    };
    let path = dir.join(format!("{name}.{ext}"));
    std::fs::write(&path, table.render(format, prov))?;
    Ok(path)
}

/// Reads the numeric rows of a table written by [`write_table`] (or any
/// whitespace/comma separated numeric file with `#` comments). Non-numeric
/// rows such as the column header are skipped.
pub fn read_numeric(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|c| !c.is_empty())
            .collect();
        let parsed: Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if rows.is_empty() => continue,
            Err(_) => return Err(format!("line {}: expected numeric columns", i + 1)),
        }
    }
    Ok(rows)
}
