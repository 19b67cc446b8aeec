//! Radial threshold `r₀(w) = C_{τ,d} / g_G(w; λ_pw, κ_pw)`.
//!
//! The Gaussian gauge in the threshold comes from a pairwise composite
//! likelihood; the constant is then calibrated per dimension stratum.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomxError, Result};
use crate::gauge::{g_gauss_2d, generalised, PatternCache};
use crate::margins::{DataMatrix, PolarDataset};
use crate::optim::{latin_hypercube, transform, NelderMead};
use crate::spatial::{CorrelationSpec, SpatialDomain};
use crate::special::{gamma_ln_pdf, ln_gamma_pq};

/// Minimum pair sample size for the moving-window threshold.
pub const PAIR_MIN_POINTS: usize = 200;
/// Fraction of points in each moving window, and its floor.
pub const WINDOW_FRACTION: f64 = 0.2;
pub const WINDOW_MIN: usize = 50;
/// Strata smaller than this are merged into the nearest dimension.
pub const STRATUM_MIN: usize = 20;

/// Number of exceedances `round((1−τ)·m)` implied by level `tau`.
pub fn exceedance_count(m: usize, tau: f64) -> usize {
    (((1.0 - tau) * m as f64).round() as usize).min(m)
}

/// Empirical `τ`-quantile: the order statistic with exactly
/// `round((1−τ)·m)` values strictly above it (absent ties). Returns 0 when
/// every value is to exceed.
pub fn empirical_quantile(values: &mut [f64], tau: f64) -> f64 {
    let m = values.len();
    let k = exceedance_count(m, tau);
    if k >= m {
        return 0.0;
    }
    let idx = m - k - 1;
    let (_, v, _) = values.select_nth_unstable_by(idx, f64::total_cmp);
    *v
}

/// Moving-window `τ`-quantile of `r` against the first angle component.
///
/// Each window holds the nearest 20% of points by `|w₁ − w₁'|` (at least
/// 50), extended to include ties at the window edge.
pub fn pairwise_threshold(r: &[f64], w1: &[f64], tau: f64) -> Result<Vec<f64>> {
    let m = r.len();
    if m != w1.len() {
        return Err(GeomxError::InvalidParameter(format!(
            "{} radii but {} angles",
            m,
            w1.len()
        )));
    }
    if m < PAIR_MIN_POINTS {
        return Err(GeomxError::InsufficientData(format!(
            "pairwise threshold needs {PAIR_MIN_POINTS} points, got {m}"
        )));
    }
    let window = ((WINDOW_FRACTION * m as f64).ceil() as usize).max(WINDOW_MIN).min(m);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| w1[a].total_cmp(&w1[b]));
    let ws: Vec<f64> = order.iter().map(|&i| w1[i]).collect();
    let rs: Vec<f64> = order.iter().map(|&i| r[i]).collect();

    let mut out = vec![0.0; m];
    let mut lo = 0usize;
    let mut buf = Vec::with_capacity(m);
    for p in 0..m {
        let c = ws[p];
        while lo + window < m && c - ws[lo] > ws[lo + window] - c {
            lo += 1;
        }
        let mut a = lo;
        let mut b = lo + window; // exclusive
        let reach = (c - ws[a]).max(ws[b - 1] - c);
        while a > 0 && c - ws[a - 1] <= reach {
            a -= 1;
        }
        while b < m && ws[b] - c <= reach {
            b += 1;
        }
        buf.clear();
        buf.extend_from_slice(&rs[a..b]);
        out[order[p]] = empirical_quantile(&mut buf, tau);
    }
    Ok(out)
}

/// Bivariate radii and angles for sites `(j, k)` over rows observing both.
#[derive(Debug, Clone)]
pub struct PairData {
    pub j: usize,
    pub k: usize,
    pub h: f64,
    pub r: Vec<f64>,
    pub w1: Vec<f64>,
}

pub fn pair_data(data: &DataMatrix, domain: &SpatialDomain, j: usize, k: usize) -> PairData {
    let mut r = Vec::with_capacity(data.n());
    let mut w1 = Vec::with_capacity(data.n());
    for row in &data.rows {
        if let (Some(a), Some(b)) = (row[j], row[k]) {
            let (a, b) = (a.max(crate::margins::ZERO_FLOOR), b.max(crate::margins::ZERO_FLOOR));
            r.push(a + b);
            w1.push(a / (a + b));
        }
    }
    PairData {
        j,
        k,
        h: domain.distance(j, k),
        r,
        w1,
    }
}

/// Pairwise exceedances above the moving-window threshold.
#[derive(Debug, Clone)]
pub struct PairExceedances {
    pub j: usize,
    pub k: usize,
    pub h: f64,
    pub r: Vec<f64>,
    pub w1: Vec<f64>,
    pub r0: Vec<f64>,
}

pub fn pair_exceedances(pair: &PairData, tau: f64) -> Result<PairExceedances> {
    let thr = pairwise_threshold(&pair.r, &pair.w1, tau)?;
    let mut ex = PairExceedances {
        j: pair.j,
        k: pair.k,
        h: pair.h,
        r: vec![],
        w1: vec![],
        r0: vec![],
    };
    for i in 0..pair.r.len() {
        if pair.r[i] > thr[i] {
            ex.r.push(pair.r[i]);
            ex.w1.push(pair.w1[i]);
            ex.r0.push(thr[i]);
        }
    }
    Ok(ex)
}

/// Pairs entering the composite likelihood. Up to 12 sites every pair is
/// used; beyond that, all pairs within the nearest 40% of distances plus a
/// seeded random 30% of the rest.
pub fn select_pairs(domain: &SpatialDomain, seed: u64) -> Vec<(usize, usize)> {
    let mut pairs = domain.pairs();
    if domain.dim() <= 12 {
        return pairs;
    }
    pairs.sort_by(|a, b| {
        domain
            .distance(a.0, a.1)
            .total_cmp(&domain.distance(b.0, b.1))
            .then(a.cmp(b))
    });
    let near = (0.4 * pairs.len() as f64).ceil() as usize;
    let mut rest = pairs.split_off(near);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a1f_5eed);
    rest.shuffle(&mut rng);
    let take = (0.3 * rest.len() as f64).round() as usize;
    pairs.extend_from_slice(&rest[..take]);
    pairs.sort();
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeFit {
    pub corr: CorrelationSpec,
    pub alpha: f64,
    pub loglik: f64,
    pub evaluations: usize,
}

/// Composite log-likelihood of the pairwise truncated-gamma model.
pub fn composite_loglik(pairs: &[PairExceedances], corr: &CorrelationSpec, alpha: f64) -> f64 {
    let a = 2.0 * alpha;
    let per_pair: Vec<f64> = pairs
        .par_iter()
        .map(|p| {
            let rho = corr.rho(p.h);
            if !(rho < 1.0) {
                return f64::NEG_INFINITY;
            }
            let mut s = 0.0;
            for i in 0..p.r.len() {
                let g = g_gauss_2d(p.w1[i], 1.0 - p.w1[i], rho);
                s += gamma_ln_pdf(p.r[i], a, g) - ln_gamma_pq(a, g * p.r0[i]).1;
            }
            s
        })
        .collect();
    per_pair.iter().sum()
}

/// Maximises the pairwise composite likelihood over `(λ, κ, α)` by
/// Nelder–Mead from `starts` Latin-hypercube points.
pub fn fit_composite_gaussian(
    pairs: &[PairExceedances],
    distance_range: (f64, f64),
    starts: usize,
    seed: u64,
) -> Result<CompositeFit> {
    if pairs.is_empty() {
        return Err(GeomxError::InvalidParameter("no pairs for the composite likelihood".into()));
    }
    if let Some(p) = pairs.iter().find(|p| !(p.h > 0.0)) {
        return Err(GeomxError::NotPositiveDefinite {
            minor: p.k.max(1),
        });
    }
    let total: usize = pairs.iter().map(|p| p.r.len()).sum();
    if total == 0 {
        return Err(GeomxError::InsufficientData("no pairwise exceedances".into()));
    }
    let (med, max) = distance_range;
    let objective = |t: &[f64]| {
        let corr = CorrelationSpec {
            lambda: t[0].exp(),
            kappa: transform::kappa_from(t[1]),
        };
        -composite_loglik(pairs, &corr, t[2].exp())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lhs = latin_hypercube(starts.max(1), 3, &mut rng);
    let (llo, lhi) = ((0.1 * med).ln(), (10.0 * max).ln());
    let start_pts: Vec<Vec<f64>> = lhs
        .iter()
        .map(|u| {
            vec![
                llo + u[0] * (lhi - llo),
                transform::kappa_to(0.2 + 1.8 * u[1]),
                (0.2f64.ln()) + u[2] * (10f64.ln()),
            ]
        })
        .collect();
    let nm = NelderMead::default();
    let best = nm
        .minimize_multistart(objective, &start_pts)
        .ok_or_else(|| GeomxError::OptimizationFailed(format!(
            "composite likelihood: all {} starts returned non-finite values",
            start_pts.len()
        )))?;
    Ok(CompositeFit {
        corr: CorrelationSpec {
            lambda: best.x[0].exp(),
            kappa: transform::kappa_from(best.x[1]),
        },
        alpha: best.x[2].exp(),
        loglik: -best.value,
        evaluations: best.evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub corr_pw: CorrelationSpec,
    pub alpha_pw: f64,
    pub tau: f64,
    /// `C_{τ,d}` for each observed row dimension `d`.
    pub c_tau: BTreeMap<usize, f64>,
}

impl ThresholdModel {
    /// Constant for dimension `d`, falling back to the nearest calibrated
    /// dimension.
    pub fn c_for_dim(&self, d: usize) -> f64 {
        if let Some(c) = self.c_tau.get(&d) {
            return *c;
        }
        self.c_tau
            .iter()
            .min_by_key(|(k, _)| (k.abs_diff(d), std::cmp::Reverse(**k)))
            .map(|(_, c)| *c)
            .unwrap_or(0.0)
    }

    /// `r₀(w) = C/g_G(w)` given the threshold-gauge value at `w`.
    pub fn r0_from_gauge(&self, d: usize, g_w: f64) -> f64 {
        self.c_for_dim(d) / g_w
    }
}

/// `g_G(x_i)` under the threshold gauge for every sample, in order.
pub fn threshold_scores(
    polar: &PolarDataset,
    corr: &CorrelationSpec,
    domain: &SpatialDomain,
) -> Result<Vec<f64>> {
    let mut cache = PatternCache::default();
    let mut out = Vec::with_capacity(polar.samples.len());
    for s in &polar.samples {
        let inv = cache.get(domain, corr, &s.pattern)?;
        out.push(s.r * generalised(&inv, &s.w, 2.0));
    }
    Ok(out)
}

/// Threshold-gauge values `g_G(w_i)` at the sample angles.
pub fn threshold_gauge_at_angles(
    polar: &PolarDataset,
    corr: &CorrelationSpec,
    domain: &SpatialDomain,
) -> Result<Vec<f64>> {
    let mut cache = PatternCache::default();
    polar
        .samples
        .iter()
        .map(|s| {
            let inv = cache.get(domain, corr, &s.pattern)?;
            Ok(generalised(&inv, &s.w, 2.0))
        })
        .collect()
}

/// Groups row dimensions into strata, merging any with fewer than
/// [`STRATUM_MIN`] rows into the nearest well-populated dimension.
fn strata(counts: &BTreeMap<usize, usize>) -> BTreeMap<usize, usize> {
    let big: Vec<usize> = counts
        .iter()
        .filter(|(_, &c)| c >= STRATUM_MIN)
        .map(|(&d, _)| d)
        .collect();
    let mut map = BTreeMap::new();
    for (&d, &c) in counts {
        let target = if c >= STRATUM_MIN || big.is_empty() {
            if big.is_empty() {
                *counts.keys().next_back().unwrap_or(&d)
            } else {
                d
            }
        } else {
            *big.iter()
                .min_by_key(|&&b| (b.abs_diff(d), std::cmp::Reverse(b)))
                .unwrap_or(&d)
        };
        if target != d {
            log::warn!(
                "dimension stratum {d} has {c} rows (< {STRATUM_MIN}); merged into stratum {target}"
            );
        }
        map.insert(d, target);
    }
    map
}

/// Calibrates `C_{τ,d}` so that exactly `round((1−τ)·m)` rows exceed
/// overall, apportioned across strata by largest remainder.
pub fn calibrate_ctau(
    polar: &PolarDataset,
    corr_pw: CorrelationSpec,
    alpha_pw: f64,
    tau: f64,
    domain: &SpatialDomain,
) -> Result<ThresholdModel> {
    if !(0.0..1.0).contains(&tau) {
        return Err(GeomxError::InvalidParameter(format!("tau must lie in [0, 1), got {tau}")));
    }
    let scores = threshold_scores(polar, &corr_pw, domain)?;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &polar.samples {
        *counts.entry(s.dim()).or_default() += 1;
    }
    let assign = strata(&counts);
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (s, &score) in polar.samples.iter().zip(&scores) {
        groups.entry(assign[&s.dim()]).or_default().push(score);
    }

    let m = polar.samples.len();
    let total = exceedance_count(m, tau);
    let mut alloc: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rema: Vec<(f64, usize)> = Vec::new();
    let mut used = 0usize;
    for (&g, v) in &groups {
        let target = (1.0 - tau) * v.len() as f64;
        let fl = (target.floor() as usize).min(v.len());
        alloc.insert(g, fl);
        used += fl;
        rema.push((target - fl as f64, g));
    }
    rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, g) in rema.iter().take(total.saturating_sub(used)) {
        *alloc.get_mut(g).unwrap() += 1;
    }

    let mut c_group = BTreeMap::new();
    for (g, v) in groups.iter_mut() {
        let k = alloc[g].min(v.len());
        let c = if k >= v.len() {
            0.0
        } else {
            let idx = v.len() - k - 1;
            let (_, c, _) = v.select_nth_unstable_by(idx, f64::total_cmp);
            *c
        };
        c_group.insert(*g, c);
    }
    let c_tau = assign.iter().map(|(&d, g)| (d, c_group[g])).collect();
    Ok(ThresholdModel {
        corr_pw,
        alpha_pw,
        tau,
        c_tau,
    })
}

/// Full threshold pipeline: pairwise thresholds, composite fit, calibration.
pub fn build_threshold(
    data: &DataMatrix,
    polar: &PolarDataset,
    domain: &SpatialDomain,
    tau: f64,
    seed: u64,
) -> Result<ThresholdModel> {
    let pairs = select_pairs(domain, seed);
    let ex: Vec<PairExceedances> = pairs
        .par_iter()
        .map(|&(j, k)| pair_exceedances(&pair_data(data, domain, j, k), tau))
        .collect::<Result<_>>()?;
    let fit = fit_composite_gaussian(&ex, domain.distance_summary(), 5, seed)?;
    log::info!(
        "pairwise threshold gauge: lambda={:.4} kappa={:.4} alpha={:.4}",
        fit.corr.lambda,
        fit.corr.kappa,
        fit.alpha
    );
    calibrate_ctau(polar, fit.corr, fit.alpha, tau, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::{decompose, DataMatrix};
    use crate::spatial::{demo_sites_d5, random_sites, Metric};
    use rand::Rng;

    #[test]
    fn quantile_definition() {
        let mut v: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&mut v, 0.7), 7.0);
        assert_eq!(empirical_quantile(&mut v, 0.0), 0.0);
    }

    #[test]
    fn identical_angles_give_plain_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..10.0)).collect();
        let w = vec![0.4; 500];
        let thr = pairwise_threshold(&r, &w, 0.8).unwrap();
        let mut all = r.clone();
        let q = empirical_quantile(&mut all, 0.8);
        assert!(thr.iter().all(|&t| t == q));
    }

    #[test]
    fn too_few_pair_points() {
        assert!(matches!(
            pairwise_threshold(&[1.0; 50], &[0.5; 50], 0.7),
            Err(GeomxError::InsufficientData(_))
        ));
    }

    #[test]
    fn pairwise_exceedance_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 5000;
        let r: Vec<f64> = (0..m).map(|_| -rng.random::<f64>().ln() * 3.0).collect();
        let w: Vec<f64> = (0..m).map(|_| rng.random()).collect();
        let thr = pairwise_threshold(&r, &w, 0.7).unwrap();
        let exc = r.iter().zip(&thr).filter(|(a, b)| a > b).count() as f64 / m as f64;
        assert!((exc - 0.3).abs() < 1.0 / (m as f64).sqrt());
    }

    #[test]
    fn pair_subsampling_beyond_twelve_sites() {
        let dom = SpatialDomain::new(random_sites(20, 3), Metric::Euclidean).unwrap();
        let a = select_pairs(&dom, 5);
        let b = select_pairs(&dom, 5);
        assert_eq!(a, b);
        assert!(a.len() < 190 && a.len() >= 76);
        let small = SpatialDomain::new(demo_sites_d5(), Metric::Euclidean).unwrap();
        assert_eq!(select_pairs(&small, 0).len(), 10);
    }

    #[test]
    fn calibration_with_equal_angles() {
        let dom = SpatialDomain::new(demo_sites_d5(), Metric::Euclidean).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = [0.1, 0.3, 0.2, 0.25, 0.15];
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| {
                let r: f64 = rng.random_range(1.0..10.0);
                w0.iter().map(|w| w * r).collect()
            })
            .collect();
        let ids = (0..5).map(|i| format!("s{i}")).collect();
        let polar = decompose(&DataMatrix::from_dense(ids, rows).unwrap());
        let corr = CorrelationSpec::new(10.0, 1.0).unwrap();
        let t = calibrate_ctau(&polar, corr, 1.0, 0.7, &dom).unwrap();
        let g0 = threshold_gauge_at_angles(&polar, &corr, &dom).unwrap()[0];
        let mut rs: Vec<f64> = polar.samples.iter().map(|s| s.r).collect();
        let q = empirical_quantile(&mut rs, 0.7);
        assert!((t.c_for_dim(5) - g0 * q).abs() < 1e-9 * g0 * q);
        let t0 = calibrate_ctau(&polar, corr, 1.0, 0.0, &dom).unwrap();
        assert_eq!(t0.c_for_dim(5), 0.0);
    }
}
