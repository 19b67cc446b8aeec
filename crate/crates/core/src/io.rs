//! File formats: site and data CSVs, fit reports, sampled points and χ_u
//! tables. Every file written here starts with a provenance block.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::angular::{AngularModel, ExceedAngle};
use crate::error::{GeomxError, Result};
use crate::gauge::Family;
use crate::margins::{DataMatrix, MarginMethod};
use crate::radial::{RadialFit, ThresholdModel};
use crate::spatial::{Metric, Site};
use crate::tail::{ChiRow, ExtremeSampleSet};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where an output came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub version: String,
    pub invocation: String,
    pub seed: Option<u64>,
    /// Settings given both in the config file and as flags; the flag won.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overridden: Vec<String>,
    /// Seconds of wall time; only recorded when asked for, since it breaks
    /// byte-identical reruns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl Provenance {
    pub fn new(invocation: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            version: VERSION.to_string(),
            invocation: invocation.into(),
            seed,
            overridden: vec![],
            wall_time: None,
        }
    }

    /// `# key: value` lines for the top of a CSV file.
    pub fn csv_header(&self) -> String {
        let mut s = format!("# geomx {}\n# invocation: {}\n", self.version, self.invocation);
        if let Some(seed) = self.seed {
            s += &format!("# seed: {seed}\n");
        }
        if !self.overridden.is_empty() {
            s += &format!("# flags overriding config: {}\n", self.overridden.join(","));
        }
        if let Some(t) = self.wall_time {
            s += &format!("# wall_time_s: {t:.3}\n");
        }
        s
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GeomxError {
    GeomxError::Io(format!("{}: {e}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| GeomxError::Io(format!("cannot parse {what} '{s}' as a number")))
}

/// Sites CSV with header `id,lat_or_x,lon_or_y`.
pub fn read_sites(path: &Path) -> Result<Vec<Site>> {
    let mut rdr = reader(path)?;
    let mut sites = vec![];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        if rec.len() != 3 {
            return Err(io_err(path, format!("expected 3 columns, found {}", rec.len())));
        }
        sites.push(Site::new(&rec[0], parse_f64(&rec[1], "coordinate")?, parse_f64(&rec[2], "coordinate")?));
    }
    Ok(sites)
}

pub fn sites_csv(sites: &[Site], prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s += "id,lat_or_x,lon_or_y\n";
    for site in sites {
        s += &format!("{},{},{}\n", site.id, site.coord[0], site.coord[1]);
    }
    s
}

pub fn write_sites(path: &Path, sites: &[Site], prov: &Provenance) -> Result<()> {
    write_text(path, &sites_csv(sites, prov))
}

/// Data CSV: header of site ids, `NA` for missing cells.
pub fn read_data(path: &Path) -> Result<DataMatrix> {
    let mut rdr = reader(path)?;
    let ids: Vec<String> = rdr
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = vec![];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let row = rec
            .iter()
            .map(|c| match c {
                "NA" | "" => Ok(None),
                v => parse_f64(v, "cell").map(Some),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    DataMatrix::new(ids, rows)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

pub fn data_csv(data: &DataMatrix, prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s += &data.site_ids.join(",");
    s.push('\n');
    for row in &data.rows {
        s += &row.iter().map(|c| cell(*c)).collect::<Vec<_>>().join(",");
        s.push('\n');
    }
    s
}

pub fn write_data(path: &Path, data: &DataMatrix, prov: &Provenance) -> Result<()> {
    write_text(path, &data_csv(data, prov))
}

/// Exceedance angles: `pattern` as `;`-separated site indices, then `w`.
pub fn angles_csv(angles: &[ExceedAngle], prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s += "pattern,w\n";
    for a in angles {
        let p: Vec<String> = a.pattern.iter().map(|x| x.to_string()).collect();
        let w: Vec<String> = a.w.iter().map(|x| format!("{x}")).collect();
        s += &format!("{},{}\n", p.join(";"), w.join(";"));
    }
    s
}

pub fn write_angles(path: &Path, angles: &[ExceedAngle], prov: &Provenance) -> Result<()> {
    write_text(path, &angles_csv(angles, prov))
}

pub fn read_angles(path: &Path) -> Result<Vec<ExceedAngle>> {
    let mut rdr = reader(path)?;
    let mut out = vec![];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let pattern = rec[0]
            .split(';')
            .map(|t| t.parse::<usize>().map_err(|_| io_err(path, format!("bad site index '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        let w = rec[1].split(';').map(|t| parse_f64(t, "angle")).collect::<Result<Vec<_>>>()?;
        if w.len() != pattern.len() {
            return Err(io_err(path, "angle and pattern lengths differ"));
        }
        out.push(ExceedAngle { w, pattern });
    }
    Ok(out)
}

/// Simulated extremes, one column per site; sites outside a draw's
/// pattern are `NA`.
pub fn samples_csv(set: &ExtremeSampleSet, site_ids: &[String], prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s += &format!("# k: {}\n", set.k);
    s += &site_ids.join(",");
    s.push('\n');
    for (x, p) in set.samples.iter().zip(&set.patterns) {
        let mut row = vec![None; site_ids.len()];
        for (v, &j) in x.iter().zip(p) {
            row[j] = Some(*v);
        }
        s += &row.into_iter().map(cell).collect::<Vec<_>>().join(",");
        s.push('\n');
    }
    s
}

pub fn chi_csv(rows: &[ChiRow], prov: &Provenance) -> String {
    let mut s = prov.csv_header();
    s += "site_l,site_m,distance,u,k,chi_hat,method\n";
    for r in rows {
        s += &format!("{},{},{},{},{},{},{}\n", r.site_l, r.site_m, r.distance, r.u, r.k, r.chi_hat, r.method);
    }
    s
}

/// One family's fit attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<RadialFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub provenance: Provenance,
    pub metric: Metric,
    pub margins: MarginMethod,
    pub n: usize,
    pub dropped: usize,
    pub n_exceed: usize,
    pub threshold: ThresholdModel,
    pub families: Vec<FamilyResult>,
    pub selected: Family,
}

impl FitReport {
    pub fn selected_fit(&self) -> Result<&RadialFit> {
        self.families
            .iter()
            .find(|f| f.family == self.selected)
            .and_then(|f| f.fit.as_ref())
            .ok_or(GeomxError::NoViableModel)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| GeomxError::Io(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| GeomxError::Io(format!("fit report: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularReport {
    pub provenance: Provenance,
    pub model: AngularModel,
    /// Angles left out of a gauge-based fit.
    #[serde(default)]
    pub dropped: usize,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| GeomxError::Io(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

/// `x` to three significant figures, without exponent notation for
/// moderate magnitudes.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{x:.2e}");
    }
    let decimals = (2 - mag).max(0) as usize;
    let scale = 10f64.powi(mag - 2);
    let rounded = (x / scale).round() * scale;
    format!("{rounded:.decimals$}")
}

/// Human-readable parameter table, parameters at three significant figures
/// and AIC rounded to an integer.
pub fn render_report(report: &FitReport) -> String {
    let mut s = format!(
        "n = {}, dropped = {}, exceedances = {}, tau = {}\n",
        report.n, report.dropped, report.n_exceed, report.threshold.tau
    );
    s += "family   alpha   lambda   kappa   nu      zeta    loglik      AIC\n";
    for f in &report.families {
        match &f.fit {
            Some(fit) => {
                let opt = |v: Option<f64>| v.map_or("-".to_string(), sig3);
                s += &format!(
                    "{:<8} {:<7} {:<8} {:<7} {:<7} {:<7} {:<11} {:.0}{}\n",
                    f.family.name(),
                    sig3(fit.alpha),
                    sig3(fit.spec.corr.lambda),
                    sig3(fit.spec.corr.kappa),
                    opt(fit.spec.nu),
                    opt(fit.spec.zeta),
                    format!("{:.1}", fit.loglik),
                    fit.aic,
                    if f.family == report.selected { "  *" } else { "" }
                );
            }
            None => {
                s += &format!("{:<8} failed: {}\n", f.family.name(), f.error.as_deref().unwrap_or("unknown"));
            }
        }
    }
    s
}
