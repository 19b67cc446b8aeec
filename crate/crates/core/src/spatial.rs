//! Site geometry, distance matrices and powered-exponential correlation.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeomxError, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    /// Great-circle distance in km; coordinates are `(lat°, lon°)`.
    Haversine,
}

impl std::str::FromStr for Metric {
    type Err = GeomxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "haversine" | "haversine-km" => Ok(Metric::Haversine),
            _ => Err(GeomxError::Config(format!(
                "--metric must be euclidean or haversine, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: String,
    pub coord: [f64; 2],
}

impl Site {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self {
            id: id.into(),
            coord: [x, y],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpatialDomain {
    pub sites: Vec<Site>,
    pub metric: Metric,
    /// Pairwise distances.
    pub h: DMatrix<f64>,
}

impl SpatialDomain {
    pub fn new(sites: Vec<Site>, metric: Metric) -> Result<Self> {
        let h = distance_matrix(&sites, metric)?;
        Ok(Self { sites, metric, h })
    }

    pub fn dim(&self) -> usize {
        self.sites.len()
    }

    pub fn distance(&self, j: usize, k: usize) -> f64 {
        self.h[(j, k)]
    }

    /// Distance matrix restricted to the sites in `pattern`.
    pub fn sub_distances(&self, pattern: &[usize]) -> DMatrix<f64> {
        let n = pattern.len();
        DMatrix::from_fn(n, n, |a, b| self.h[(pattern[a], pattern[b])])
    }

    /// Median and maximum of the off-diagonal distances.
    pub fn distance_summary(&self) -> (f64, f64) {
        let d = self.dim();
        let mut v: Vec<f64> = (0..d)
            .flat_map(|j| ((j + 1)..d).map(move |k| (j, k)))
            .map(|(j, k)| self.h[(j, k)])
            .collect();
        v.sort_by(f64::total_cmp);
        let med = if v.len() % 2 == 1 {
            v[v.len() / 2]
        } else {
            0.5 * (v[v.len() / 2 - 1] + v[v.len() / 2])
        };
        (med, *v.last().unwrap_or(&0.0))
    }

    /// All unordered site pairs `(j, k)` with `j < k`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let d = self.dim();
        (0..d)
            .flat_map(|j| ((j + 1)..d).map(move |k| (j, k)))
            .collect()
    }
}

/// The five-site layout on `[0, 10]²` used for the d = 5 reproductions;
/// sites 2 and 3 are 5.78 apart.
pub fn demo_sites_d5() -> Vec<Site> {
    vec![
        Site::new("s1", 1.2, 8.1),
        Site::new("s2", 2.0, 2.5),
        Site::new("s3", 7.78, 2.5),
        Site::new("s4", 5.5, 7.0),
        Site::new("s5", 8.9, 8.6),
    ]
}

/// `d` sites uniform on `[0, 10]²`, reproducible from `seed`.
pub fn random_sites(d: usize, seed: u64) -> Vec<Site> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d)
        .map(|i| {
            let x: f64 = rng.random_range(0.0..10.0);
            let y: f64 = rng.random_range(0.0..10.0);
            Site::new(format!("s{}", i + 1), x, y)
        })
        .collect()
}

pub fn haversine_km(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (lat1, lon1) = (a[0].to_radians(), a[1].to_radians());
    let (lat2, lon2) = (b[0].to_radians(), b[1].to_radians());
    let s1 = ((lat2 - lat1) / 2.0).sin();
    let s2 = ((lon2 - lon1) / 2.0).sin();
    let h = (s1 * s1 + lat1.cos() * lat2.cos() * s2 * s2).clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_KM * h.sqrt().asin()
}

pub fn distance_matrix(sites: &[Site], metric: Metric) -> Result<DMatrix<f64>> {
    let d = sites.len();
    if d < 2 {
        return Err(GeomxError::DegenerateGeometry(format!(
            "need at least 2 sites, got {d}"
        )));
    }
    for s in sites {
        if !s.coord.iter().all(|c| c.is_finite()) {
            return Err(GeomxError::InvalidCoordinate(format!("site {}: non-finite", s.id)));
        }
        if metric == Metric::Haversine && (s.coord[0].abs() > 90.0 || s.coord[1].abs() > 360.0) {
            return Err(GeomxError::InvalidCoordinate(format!(
                "site {}: latitude {} / longitude {} out of range",
                s.id, s.coord[0], s.coord[1]
            )));
        }
    }
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        for k in (j + 1)..d {
            let (a, b) = (sites[j].coord, sites[k].coord);
            let dist = match metric {
                Metric::Euclidean => (a[0] - b[0]).hypot(a[1] - b[1]),
                Metric::Haversine => haversine_km(a, b),
            };
            if dist <= 0.0 {
                return Err(GeomxError::DegenerateGeometry(format!(
                    "sites {} and {} coincide",
                    sites[j].id, sites[k].id
                )));
            }
            h[(j, k)] = dist;
            h[(k, j)] = dist;
        }
    }
    Ok(h)
}

/// Range `λ > 0` and smoothness `κ ∈ (0, 2]` of the powered exponential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub lambda: f64,
    pub kappa: f64,
}

impl CorrelationSpec {
    pub fn new(lambda: f64, kappa: f64) -> Result<Self> {
        let s = Self { lambda, kappa };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(GeomxError::InvalidParameter(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.kappa > 0.0 && self.kappa <= 2.0) {
            return Err(GeomxError::InvalidParameter(format!(
                "kappa must lie in (0, 2], got {}",
                self.kappa
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn rho(&self, h: f64) -> f64 {
        (-(h / self.lambda).powf(self.kappa)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct CorrMatrix {
    pub sigma: DMatrix<f64>,
    pub chol: DMatrix<f64>,
    pub inv: DMatrix<f64>,
    pub ln_det: f64,
}

/// Leading minor at which an unpivoted Cholesky of `m` breaks down.
fn failing_minor(m: &DMatrix<f64>) -> usize {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut s = m[(j, j)];
        for p in 0..j {
            s -= l[(j, p)] * l[(j, p)];
        }
        if s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return j;
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut t = m[(i, j)];
            for p in 0..j {
                t -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = t / ljj;
        }
    }
    n.saturating_sub(1)
}

/// Factorises a correlation matrix, retrying once with diagonal jitter.
pub fn factorize(sigma: DMatrix<f64>) -> Result<CorrMatrix> {
    let n = sigma.nrows();
    // a unit off-diagonal correlation is exactly singular; jitter must not mask it
    for k in 1..n {
        for j in 0..k {
            if sigma[(j, k)].abs() >= 1.0 {
                return Err(GeomxError::NotPositiveDefinite { minor: k });
            }
        }
    }
    let chol = match Cholesky::new(sigma.clone()) {
        Some(c) => c,
        None => {
            let jittered = &sigma + DMatrix::<f64>::identity(n, n) * 1e-10;
            match Cholesky::new(jittered.clone()) {
                Some(c) => c,
                None => {
                    return Err(GeomxError::NotPositiveDefinite {
                        minor: failing_minor(&jittered),
                    })
                }
            }
        }
    };
    let l = chol.l();
    let mut ln_det = 0.0;
    for j in 0..n {
        let v = l[(j, j)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(GeomxError::NotPositiveDefinite { minor: j });
        }
        ln_det += 2.0 * v.ln();
    }
    let inv = chol.inverse();
    Ok(CorrMatrix {
        sigma,
        chol: l,
        inv,
        ln_det,
    })
}

pub fn corr_entries(h: &DMatrix<f64>, spec: &CorrelationSpec) -> DMatrix<f64> {
    let n = h.nrows();
    DMatrix::from_fn(n, n, |j, k| if j == k { 1.0 } else { spec.rho(h[(j, k)]) })
}

pub fn powered_exp_corr(h: &DMatrix<f64>, spec: &CorrelationSpec) -> Result<CorrMatrix> {
    spec.validate()?;
    factorize(corr_entries(h, spec))
}
