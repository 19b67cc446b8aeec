//! Marginal standardisation and the radial–angular decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{GeomxError, Result};
use crate::special::gaussian_to_exponential;

/// Smallest value an exponential-margin cell may take before decomposition.
pub const ZERO_FLOOR: f64 = 1e-12;

/// Rows of observations, one column per site; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub site_ids: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl DataMatrix {
    pub fn new(site_ids: Vec<String>, rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let d = site_ids.len();
        if let Some(i) = rows.iter().position(|r| r.len() != d) {
            return Err(GeomxError::InvalidParameter(format!(
                "row {i} has {} cells, expected {d}",
                rows[i].len()
            )));
        }
        Ok(Self { site_ids, rows })
    }

    /// Builds a complete matrix from dense rows.
    pub fn from_dense(site_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            site_ids,
            rows.into_iter()
                .map(|r| r.into_iter().map(Some).collect())
                .collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn d(&self) -> usize {
        self.site_ids.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        self.rows.iter().map(move |r| r[j])
    }

    pub fn has_missing(&self) -> bool {
        self.rows.iter().any(|r| r.iter().any(|c| c.is_none()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarginMethod {
    /// Columns are standard Gaussian: `x = −log(1 − Φ(z))`.
    KnownGaussian,
    /// Empirical probability integral transform with mid-ranks.
    #[default]
    Rank,
    /// Data already on exponential margins.
    Identity,
}

impl std::str::FromStr for MarginMethod {
    type Err = GeomxError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "known_gaussian" => Ok(MarginMethod::KnownGaussian),
            "rank" => Ok(MarginMethod::Rank),
            "identity" => Ok(MarginMethod::Identity),
            _ => Err(GeomxError::Config(format!(
                "--margins must be known_gaussian, rank or identity, got {s:?}"
            ))),
        }
    }
}

/// Minimum non-missing count per column for the rank transform.
pub const RANK_MIN: usize = 50;

/// Mid-ranks (1-based) of `values`, ties sharing the average rank.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = 0.5 * ((i + 1) + (j + 1)) as f64;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// `−log(1 − rank/(n+1))` for each value, with mid-ranks.
pub fn rank_to_exponential(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    mid_ranks(values)
        .into_iter()
        .map(|r| -(1.0 - r / (n + 1.0)).ln())
        .collect()
}

pub fn to_exponential(raw: &DataMatrix, method: MarginMethod) -> Result<DataMatrix> {
    let mut out = raw.clone();
    for j in 0..raw.d() {
        match method {
            MarginMethod::KnownGaussian => {
                for row in out.rows.iter_mut() {
                    if let Some(z) = row[j] {
                        if !z.is_finite() {
                            return Err(GeomxError::DomainError(format!(
                                "non-finite value in column {}",
                                raw.site_ids[j]
                            )));
                        }
                        row[j] = Some(gaussian_to_exponential(z));
                    }
                }
            }
            MarginMethod::Rank => {
                let (rows, vals): (Vec<usize>, Vec<f64>) = raw
                    .rows
                    .iter()
                    .enumerate()
                    .filter_map(|(i, r)| r[j].map(|v| (i, v)))
                    .unzip();
                if vals.len() < RANK_MIN {
                    return Err(GeomxError::InsufficientData(format!(
                        "column {} has {} observed values; the rank transform needs {RANK_MIN}",
                        raw.site_ids[j],
                        vals.len()
                    )));
                }
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(GeomxError::DomainError(format!(
                        "non-finite value in column {}",
                        raw.site_ids[j]
                    )));
                }
                for (i, x) in rows.into_iter().zip(rank_to_exponential(&vals)) {
                    out.rows[i][j] = Some(x);
                }
            }
            MarginMethod::Identity => {
                for (i, row) in raw.rows.iter().enumerate() {
                    if let Some(v) = row[j] {
                        if !(v >= 0.0) || !v.is_finite() {
                            return Err(GeomxError::DomainError(format!(
                                "row {i}, column {}: {v} is not a valid exponential-margin value",
                                raw.site_ids[j]
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One observation in radial–angular form.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSample {
    /// ℓ₁ radius of the observed components.
    pub r: f64,
    /// Angle on the simplex over the observed sites.
    pub w: Vec<f64>,
    /// Sorted indices of the observed sites.
    pub pattern: Vec<usize>,
    /// Row index in the source matrix.
    pub row: usize,
}

impl PolarSample {
    pub fn dim(&self) -> usize {
        self.pattern.len()
    }

    /// `r · w`, the observed components.
    pub fn point(&self) -> Vec<f64> {
        self.w.iter().map(|w| w * self.r).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PolarDataset {
    pub samples: Vec<PolarSample>,
    /// Rows with at most one observed value.
    pub dropped: usize,
    /// Total number of sites.
    pub d: usize,
}

impl PolarDataset {
    pub fn n_total(&self) -> usize {
        self.samples.len() + self.dropped
    }

    pub fn is_complete(&self) -> bool {
        self.samples.iter().all(|s| s.dim() == self.d)
    }
}

pub fn decompose(data: &DataMatrix) -> PolarDataset {
    let mut samples = Vec::with_capacity(data.n());
    let mut dropped = 0;
    for (i, row) in data.rows.iter().enumerate() {
        let mut pattern = Vec::with_capacity(row.len());
        let mut x = Vec::with_capacity(row.len());
        for (j, c) in row.iter().enumerate() {
            if let Some(v) = c {
                pattern.push(j);
                x.push(v.max(ZERO_FLOOR));
            }
        }
        if pattern.len() <= 1 {
            dropped += 1;
            continue;
        }
        let r: f64 = x.iter().sum();
        let w = x.iter().map(|v| v / r).collect();
        samples.push(PolarSample {
            r,
            w,
            pattern,
            row: i,
        });
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with fewer than two observed values");
    }
    PolarDataset {
        samples,
        dropped,
        d: data.d(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(d: usize) -> Vec<String> {
        (0..d).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn gaussian_zero_maps_to_ln2() {
        let m = DataMatrix::from_dense(ids(2), vec![vec![0.0, 0.0]]).unwrap();
        let e = to_exponential(&m, MarginMethod::KnownGaussian).unwrap();
        assert!((e.rows[0][0].unwrap() - 0.693_147_180_559_945_3).abs() < 1e-12);
    }

    #[test]
    fn rank_of_maximum() {
        let rows: Vec<Vec<f64>> = (0..99).map(|i| vec![i as f64, (98 - i) as f64]).collect();
        let m = DataMatrix::from_dense(ids(2), rows).unwrap();
        let e = to_exponential(&m, MarginMethod::Rank).unwrap();
        assert!((e.rows[98][0].unwrap() - 100f64.ln()).abs() < 1e-12);
        assert!((e.rows[0][1].unwrap() - 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rank_needs_fifty() {
        let rows: Vec<Vec<f64>> = (0..49).map(|i| vec![i as f64, 1.0]).collect();
        let m = DataMatrix::from_dense(ids(2), rows).unwrap();
        assert!(matches!(
            to_exponential(&m, MarginMethod::Rank),
            Err(GeomxError::InsufficientData(_))
        ));
    }

    #[test]
    fn ties_share_mid_rank() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identity_rejects_negative() {
        let m = DataMatrix::from_dense(ids(2), vec![vec![1.0, -0.5]]).unwrap();
        assert!(to_exponential(&m, MarginMethod::Identity).is_err());
    }

    #[test]
    fn decompose_examples() {
        let m = DataMatrix::new(
            ids(3),
            vec![
                vec![Some(1.0), Some(1.0), Some(2.0)],
                vec![Some(3.0), None, Some(1.0)],
                vec![None, None, Some(1.0)],
            ],
        )
        .unwrap();
        let p = decompose(&m);
        assert_eq!(p.samples.len(), 2);
        assert_eq!(p.dropped, 1);
        assert_eq!(p.samples[0].r, 4.0);
        assert_eq!(p.samples[0].w, vec![0.25, 0.25, 0.5]);
        assert_eq!(p.samples[1].r, 4.0);
        assert_eq!(p.samples[1].w, vec![0.75, 0.25]);
        assert_eq!(p.samples[1].dim(), 2);
        assert_eq!(p.samples[1].pattern, vec![0, 2]);
        assert_eq!(p.n_total(), 3);
    }

    proptest! {
        #[test]
        fn decompose_recomposes(rows in proptest::collection::vec(
            proptest::collection::vec(proptest::option::weighted(0.8, 1e-3f64..20.0), 4), 1..40)) {
            let m = DataMatrix::new(ids(4), rows.clone()).unwrap();
            let p = decompose(&m);
            prop_assert_eq!(p.samples.len() + p.dropped, rows.len());
            for s in &p.samples {
                let sum: f64 = s.w.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                for (x, &j) in s.point().iter().zip(&s.pattern) {
                    let orig = rows[s.row][j].unwrap();
                    prop_assert!((x - orig).abs() < 1e-12 * orig.max(1.0));
                }
            }
        }
    }
}
