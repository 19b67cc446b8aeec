//! Command settings from flags and an optional TOML file. Each subcommand
//! reads its own table (`[fit]`, `[chi]`, …); a flag always beats the file
//! and the names of overridden settings are kept for the output metadata.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::angular::AngularKind;
use crate::error::{GeomxError, Result};
use crate::gauge::Family;

macro_rules! options {
    ($(#[$m:meta])* $name:ident { $( $(#[$fm:meta])* $field:ident : $ty:ty ),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Default, PartialEq, clap::Args, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct $name {
            $( $(#[$fm])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            /// Flag values win over file values.
            pub fn merge(self, file: Self) -> (Self, Vec<String>) {
                let mut overridden = vec![];
                let merged = Self {
                    $( $field: {
                        if self.$field.is_some() && file.$field.is_some() {
                            overridden.push(stringify!($field).replace('_', "-"));
                        }
                        self.$field.or(file.$field)
                    }, )*
                };
                (merged, overridden)
            }
        }
    };
}

options!(SimulateOpts {
    /// gaussian, laplace or hw
    kind: String,
    lambda: f64,
    kappa: f64,
    /// HW mixing parameter in [0, 1]
    delta: f64,
    /// Number of replicates (rows)
    n: usize,
    seed: u64,
    /// Sites CSV; without it sites are generated
    sites: PathBuf,
    /// Number of generated sites (the five demo sites when absent)
    d: usize,
    metric: String,
    out: PathBuf,
    /// Where to write generated sites
    sites_out: PathBuf,
});

options!(FitOpts {
    data: PathBuf,
    sites: PathBuf,
    metric: String,
    /// known_gaussian, rank or identity
    margins: String,
    tau: f64,
    /// Comma-separated families, e.g. G,L,GG,HWG,HWGG
    families: String,
    seed: u64,
    out: PathBuf,
    /// Exceedance angles CSV for `geomx angular`
    exceed_out: PathBuf,
});

options!(AngularOpts {
    /// empirical, process or gauge
    fit: String,
    /// Exceedance angles CSV written by `geomx fit --exceed-out`
    exceed: PathBuf,
    sites: PathBuf,
    metric: String,
    seed: u64,
    out: PathBuf,
    /// Optional CSV of angles sampled from the fitted model
    samples_out: PathBuf,
    /// Number of angles for --samples-out
    m: usize,
});

options!(SampleOpts {
    /// Fit report JSON
    fit: PathBuf,
    /// Angular model JSON
    angular: PathBuf,
    sites: PathBuf,
    metric: String,
    k: f64,
    m: usize,
    seed: u64,
    out: PathBuf,
});

options!(ChiOpts {
    fit: PathBuf,
    angular: PathBuf,
    data: PathBuf,
    sites: PathBuf,
    metric: String,
    /// Comma-separated levels in (0,1)
    u: String,
    /// `all` or comma-separated `id:id` pairs
    pairs: String,
    m: usize,
    k_max: f64,
    seed: u64,
    out: PathBuf,
});

options!(StudyOpts {
    kind: String,
    lambda: f64,
    kappa: f64,
    delta: f64,
    d: usize,
    n: usize,
    replicates: usize,
    tau: f64,
    families: String,
    /// Comma-separated χ_u levels; empty skips the χ_u step
    u: String,
    /// Comma-separated angular models
    angular: String,
    m: usize,
    k_max: f64,
    seed: u64,
    sites: PathBuf,
    metric: String,
    /// Output directory
    out: PathBuf,
});

options!(DiagnoseOpts {
    fit: PathBuf,
    data: PathBuf,
    sites: PathBuf,
    metric: String,
    out: PathBuf,
});

/// The TOML config file: one optional table per subcommand.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub simulate: SimulateOpts,
    pub fit: FitOpts,
    pub angular: AngularOpts,
    pub sample: SampleOpts,
    pub chi: ChiOpts,
    pub study: StudyOpts,
    pub diagnose: DiagnoseOpts,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GeomxError::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GeomxError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Errors naming every missing required setting.
pub fn require(command: &str, present: &[(&str, bool)]) -> Result<()> {
    let missing: Vec<String> = present
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| format!("--{name}"))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(GeomxError::Config(format!(
            "`{command}` is missing required settings: {} (give them as flags or in the [{command}] table of --config)",
            missing.join(", ")
        )))
    }
}

pub fn check_open_unit(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(GeomxError::Config(format!("--{name} must lie in (0,1), got {v}")))
    }
}

pub fn check_positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(GeomxError::Config(format!("--{name} must be > 0, got {v}")))
    }
}

pub fn check_kappa(v: f64) -> Result<f64> {
    if v > 0.0 && v <= 2.0 {
        Ok(v)
    } else {
        Err(GeomxError::Config(format!("--kappa must lie in (0,2], got {v}")))
    }
}

pub fn check_delta(v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(GeomxError::Config(format!("--delta must lie in [0,1], got {v}")))
    }
}

pub fn check_k(name: &str, v: f64) -> Result<f64> {
    if v >= 1.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(GeomxError::Config(format!("--{name} must be >= 1, got {v}")))
    }
}

pub fn check_count(name: &str, v: usize, min: usize) -> Result<usize> {
    if v >= min {
        Ok(v)
    } else {
        Err(GeomxError::Config(format!("--{name} must be >= {min}, got {v}")))
    }
}

pub fn parse_families(s: &str) -> Result<Vec<Family>> {
    let fams = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<Family>().map_err(|_| GeomxError::Config(format!("--families: unknown family '{t}'"))))
        .collect::<Result<Vec<_>>>()?;
    if fams.is_empty() {
        return Err(GeomxError::Config("--families is empty".into()));
    }
    Ok(fams)
}

pub fn parse_u_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let v = t
                .parse::<f64>()
                .map_err(|_| GeomxError::Config(format!("--u: cannot parse '{t}'")))?;
            check_open_unit("u", v)
        })
        .collect()
}

pub fn parse_angular_kinds(s: &str) -> Result<Vec<AngularKind>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect()
}

/// `all`, or comma-separated `id:id` pairs resolved against `ids`.
pub fn parse_pairs(s: &str, ids: &[String]) -> Result<Vec<(usize, usize)>> {
    if s.trim() == "all" {
        let d = ids.len();
        return Ok((0..d).flat_map(|j| (j + 1..d).map(move |k| (j, k))).collect());
    }
    let find = |id: &str| {
        ids.iter()
            .position(|x| x == id)
            .ok_or_else(|| GeomxError::Config(format!("--pairs: unknown site '{id}'")))
    };
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (a, b) = t
                .split_once(':')
                .ok_or_else(|| GeomxError::Config(format!("--pairs: expected id:id, got '{t}'")))?;
            let (j, k) = (find(a.trim())?, find(b.trim())?);
            if j == k {
                return Err(GeomxError::Config(format!("--pairs: '{t}' pairs a site with itself")));
            }
            Ok((j.min(k), j.max(k)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_and_is_recorded() {
        let file = ConfigFile::parse("[fit]\ntau = 0.8\nseed = 3\n").unwrap();
        let flags = FitOpts {
            tau: Some(0.7),
            ..Default::default()
        };
        let (merged, over) = flags.merge(file.fit);
        assert_eq!(merged.tau, Some(0.7));
        assert_eq!(merged.seed, Some(3));
        assert_eq!(over, vec!["tau".to_string()]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ConfigFile::parse("[fit]\ntaus = 0.8\n").is_err());
        assert!(ConfigFile::parse("[fitt]\ntau = 0.8\n").is_err());
    }

    #[test]
    fn domain_errors_name_the_flag() {
        let e = check_open_unit("tau", 1.2).unwrap_err().to_string();
        assert!(e.contains("--tau") && e.contains("(0,1)"), "{e}");
        let e = require("fit", &[("data", false), ("sites", true)]).unwrap_err().to_string();
        assert!(e.contains("--data") && !e.contains("--sites"), "{e}");
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_families("G, GG,HWG").unwrap(), vec![Family::G, Family::GG, Family::HwG]);
        assert!(parse_families("G,X").is_err());
        assert_eq!(parse_u_list("0.9,0.95").unwrap(), vec![0.9, 0.95]);
        assert!(parse_u_list("0.9,1").is_err());
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(parse_pairs("all", &ids).unwrap().len(), 3);
        assert_eq!(parse_pairs("c:a", &ids).unwrap(), vec![(0, 2)]);
        assert!(parse_pairs("a:a", &ids).is_err());
    }
}
