//! Simulation of `X | R′ > k`, extreme-set probabilities and pairwise χ_u.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::{sample_angles, AngularModel, ExceedAngle};
use crate::error::{GeomxError, Result};
use crate::gauge::{bivariate_gaussian, generalised, GaugeContext, PatternCache};
use crate::margins::DataMatrix;
use crate::process::replicate_rng;
use crate::radial::{Exceedance, RadialFit, ThresholdModel};
use crate::spatial::SpatialDomain;
use crate::truncgamma;

/// Default number of simulated extremes per level `k`.
pub const DEFAULT_DRAWS: usize = 50_000;
/// Step of the extrapolation-level grid.
pub const K_STEP: f64 = 0.1;

/// `R ~ Gamma(a, rate) | R > lower`.
pub fn truncated_gamma_sample<R: Rng + ?Sized>(a: f64, rate: f64, lower: f64, rng: &mut R) -> Result<f64> {
    truncgamma::sample(a, rate, lower, rng)
}

/// Simulated draws of `X | R′ > k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeSampleSet {
    /// Points on the sites of `patterns[i]`.
    pub samples: Vec<Vec<f64>>,
    pub patterns: Vec<Vec<usize>>,
    /// Threshold radius `r₀(w)` of each draw (before scaling by `k`).
    pub r0: Vec<f64>,
    pub k: f64,
    pub tau: f64,
}

impl ExtremeSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Radial and threshold gauges evaluated at sampled angles.
struct AngleGauges {
    g_radial: Vec<f64>,
    r0: Vec<f64>,
}

fn angle_gauges(
    angles: &[ExceedAngle],
    radial: &RadialFit,
    threshold: &ThresholdModel,
    domain: &SpatialDomain,
) -> Result<AngleGauges> {
    let (mut rc, mut tc) = (PatternCache::default(), PatternCache::default());
    let mut g_radial = Vec::with_capacity(angles.len());
    let mut r0 = Vec::with_capacity(angles.len());
    for a in angles {
        let inv = rc.get(domain, &radial.spec.corr, &a.pattern)?;
        g_radial.push(GaugeContext::new(radial.spec, inv).eval_unchecked(&a.w)?);
        let tinv = tc.get(domain, &threshold.corr_pw, &a.pattern)?;
        r0.push(threshold.r0_from_gauge(a.pattern.len(), generalised(&tinv, &a.w, 2.0)));
    }
    Ok(AngleGauges { g_radial, r0 })
}

/// Radii for fixed angles at level `k`. Draw `i` uses its own stream, so
/// the same `(angles, seed)` at different `k` gives coupled samples.
pub fn extremes_from_angles(
    angles: &[ExceedAngle],
    radial: &RadialFit,
    threshold: &ThresholdModel,
    domain: &SpatialDomain,
    k: f64,
    seed: u64,
) -> Result<ExtremeSampleSet> {
    if !(k >= 1.0) {
        return Err(GeomxError::InvalidParameter(format!("k must be >= 1, got {k}")));
    }
    let gauges = angle_gauges(angles, radial, threshold, domain)?;
    let radii: Vec<Result<f64>> = (0..angles.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let a = radial.alpha * angles[i].w.len() as f64;
            truncated_gamma_sample(a, gauges.g_radial[i], k * gauges.r0[i], &mut rng)
        })
        .collect();
    let mut samples = Vec::with_capacity(angles.len());
    for (a, r) in angles.iter().zip(radii) {
        let r = r?;
        samples.push(a.w.iter().map(|w| r * w).collect());
    }
    Ok(ExtremeSampleSet {
        samples,
        patterns: angles.iter().map(|a| a.pattern.clone()).collect(),
        r0: gauges.r0,
        k,
        tau: threshold.tau,
    })
}

fn radius_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_4E5B
}

/// Draws `m` points from `X | R′ > k`: angles from the angular model, then
/// truncated-gamma radii above `k·r₀(w)`.
pub fn sample_extremes(
    radial: &RadialFit,
    angular: &AngularModel,
    threshold: &ThresholdModel,
    domain: &SpatialDomain,
    k: f64,
    m: usize,
    seed: u64,
) -> Result<ExtremeSampleSet> {
    let angles = sample_angles(angular, m, None, domain, seed)?;
    extremes_from_angles(&angles, radial, threshold, domain, k, radius_seed(seed))
}

/// `B = Π_j (lower_j, ∞)` over all sites; `lower_j = 0` leaves site `j` free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub lower: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>) -> Result<Self> {
        if lower.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(GeomxError::InvalidParameter("box bounds must be finite and >= 0".into()));
        }
        if lower.iter().all(|&v| v == 0.0) {
            return Err(GeomxError::InvalidParameter("a box needs at least one positive bound".into()));
        }
        Ok(Self { lower })
    }

    /// The χ_u box for sites `l` and `m`.
    pub fn chi(d: usize, l: usize, m: usize, u: f64) -> Result<Self> {
        let q = -(-u).ln_1p();
        let mut lower = vec![0.0; d];
        lower[l] = q;
        lower[m] = q;
        Self::new(lower)
    }

    pub fn constrained(&self) -> Vec<usize> {
        (0..self.lower.len()).filter(|&j| self.lower[j] > 0.0).collect()
    }

    /// Membership of a point observed on `pattern`: `None` if a constrained
    /// site is unobserved.
    pub fn contains(&self, x: &[f64], pattern: &[usize]) -> Option<bool> {
        let mut inside = true;
        for j in self.constrained() {
            let pos = pattern.iter().position(|&p| p == j)?;
            inside &= x[pos] > self.lower[j];
        }
        Some(inside)
    }
}

/// χ_u-check: `−2 ln(1−u) > k·C_τ / g_G((½,½); λ_pw, κ_pw, H^{lm})`.
/// `C_τ` is the largest calibrated constant, which is the safe choice
/// when samples span several row dimensions.
pub fn chi_check(u: f64, k: f64, threshold: &ThresholdModel, pair: (usize, usize), domain: &SpatialDomain) -> bool {
    let Some(c) = threshold.c_tau.values().cloned().reduce(f64::max) else {
        return false;
    };
    let h = domain.distance(pair.0, pair.1);
    let Ok(ctx) = bivariate_gaussian(threshold.corr_pw, h) else {
        return false;
    };
    let Ok(g_half) = ctx.eval_unchecked(&[0.5, 0.5]) else {
        return false;
    };
    -2.0 * (-u).ln_1p() > k * c / g_half
}

/// Grid `1, 1.1, …` up to `k_max`.
pub fn k_grid(k_max: f64) -> Vec<f64> {
    let n = ((k_max - 1.0) / K_STEP + 1e-9).floor().max(0.0) as usize;
    (0..=n).map(|i| (10 + i) as f64 / 10.0).collect()
}

/// Largest grid `k` passing the χ_u-check; 1 when none does.
pub fn select_k(u: f64, threshold: &ThresholdModel, pair: (usize, usize), domain: &SpatialDomain, k_max: f64) -> f64 {
    k_grid(k_max)
        .into_iter()
        .filter(|&k| chi_check(u, k, threshold, pair, domain))
        .last()
        .unwrap_or(1.0)
}

/// `min g_G(x)` over `x ≥ lower` for the threshold gauge on all sites.
/// With `y = √x` this is the box-constrained quadratic program
/// `min yᵀ Σ⁻¹ y, y ≥ √lower`, solved by projected coordinate descent.
pub fn threshold_gauge_min_on_box(b: &BoxSet, threshold: &ThresholdModel, domain: &SpatialDomain) -> Result<f64> {
    let d = domain.dim();
    let full: Vec<usize> = (0..d).collect();
    let s = PatternCache::with_capacity(1).get(domain, &threshold.corr_pw, &full)?;
    let lo: Vec<f64> = b.lower.iter().map(|v| v.sqrt()).collect();
    let mut y = lo.clone();
    for _ in 0..10_000 {
        let mut change = 0.0f64;
        for j in 0..d {
            let off: f64 = (0..d).filter(|&k| k != j).map(|k| s[(j, k)] * y[k]).sum();
            let new = (-off / s[(j, j)]).max(lo[j]);
            change = change.max((new - y[j]).abs());
            y[j] = new;
        }
        if change < 1e-14 {
            break;
        }
    }
    let x: Vec<f64> = y.iter().map(|v| v * v).collect();
    Ok(generalised(&s, &x, 2.0))
}

/// Whether `B ⊂ 𝔹_k` for the full-dimension threshold surface.
pub fn box_in_exceedance_region(b: &BoxSet, k: f64, threshold: &ThresholdModel, domain: &SpatialDomain) -> Result<bool> {
    let c = threshold.c_tau.values().cloned().fold(0.0, f64::max);
    Ok(threshold_gauge_min_on_box(b, threshold, domain)? > k * c)
}

/// `P(R′ > k | R′ > 1)` averaged over the empirical exceedance angles under
/// the fitted truncated-gamma model.
pub fn tail_factor(radial: &RadialFit, exceedances: &[Exceedance], domain: &SpatialDomain, k: f64) -> Result<f64> {
    if k == 1.0 {
        return Ok(1.0);
    }
    if exceedances.is_empty() {
        return Err(GeomxError::InsufficientData("no exceedances for the tail factor".into()));
    }
    let mut cache = PatternCache::default();
    let mut total = 0.0;
    for e in exceedances {
        let inv = cache.get(domain, &radial.spec.corr, &e.pattern)?;
        let g = GaugeContext::new(radial.spec, inv).eval_unchecked(&e.w)?;
        total += truncgamma::ln_survival_ratio(radial.alpha * e.dim() as f64, g, e.r0, k).exp();
    }
    Ok(total / exceedances.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    /// Simulated extremes only.
    Above,
    /// Data below the threshold plus simulated extremes above it.
    Mixed,
}

impl std::fmt::Display for EstimateMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Above => "above",
            Self::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub p: f64,
    pub method: EstimateMethod,
    pub sim_hits: usize,
    pub sim_eligible: usize,
    pub data_hits: usize,
    pub zero_count: bool,
}

/// Observed data needed by the mixed estimator.
pub struct ObservedTail<'a> {
    /// Data on exponential margins.
    pub data: &'a DataMatrix,
    /// Row indices of threshold exceedances.
    pub exceed_rows: HashSet<usize>,
}

impl<'a> ObservedTail<'a> {
    pub fn new(data: &'a DataMatrix, exceedances: &[Exceedance]) -> Self {
        Self {
            data,
            exceed_rows: exceedances.iter().map(|e| e.row).collect(),
        }
    }

    /// Rows in `B` that are not threshold exceedances.
    fn below_hits(&self, b: &BoxSet) -> usize {
        let cons = b.constrained();
        self.data
            .rows
            .iter()
            .enumerate()
            .filter(|(i, row)| {
                !self.exceed_rows.contains(i)
                    && cons.iter().all(|&j| row[j].is_some_and(|v| v > b.lower[j]))
            })
            .count()
    }
}

fn sim_fraction(b: &BoxSet, samples: &ExtremeSampleSet) -> (usize, usize) {
    let mut hits = 0;
    let mut eligible = 0;
    for (x, p) in samples.samples.iter().zip(&samples.patterns) {
        if let Some(inside) = b.contains(x, p) {
            eligible += 1;
            hits += inside as usize;
        }
    }
    (hits, eligible)
}

/// `P(X ∈ B | 𝔹_k)·P(𝔹_k)` from simulated extremes at level `k`, with
/// `P(𝔹_k) = (1−τ)·tail_factor`.
pub fn estimate_above(b: &BoxSet, samples: &ExtremeSampleSet, tail_factor: f64) -> ProbabilityEstimate {
    let (hits, eligible) = sim_fraction(b, samples);
    let frac = if eligible == 0 { 0.0 } else { hits as f64 / eligible as f64 };
    let est = ProbabilityEstimate {
        p: frac * (1.0 - samples.tau) * tail_factor,
        method: EstimateMethod::Above,
        sim_hits: hits,
        sim_eligible: eligible,
        data_hits: 0,
        zero_count: hits == 0,
    };
    if est.zero_count {
        log::warn!("no simulated extremes fall in the set; estimate is 0");
    }
    est
}

/// `#{data in B ∩ 𝔹₁ᶜ}/n + P(X ∈ B | 𝔹₁)(1−τ)` with samples at `k = 1`.
pub fn estimate_mixed(b: &BoxSet, observed: &ObservedTail, samples: &ExtremeSampleSet) -> Result<ProbabilityEstimate> {
    if samples.k != 1.0 {
        return Err(GeomxError::InvalidParameter("the mixed estimator needs samples at k = 1".into()));
    }
    let (hits, eligible) = sim_fraction(b, samples);
    let data_hits = observed.below_hits(b);
    let n = observed.data.n() as f64;
    let frac = if eligible == 0 { 0.0 } else { hits as f64 / eligible as f64 };
    let est = ProbabilityEstimate {
        p: data_hits as f64 / n + frac * (1.0 - samples.tau),
        method: EstimateMethod::Mixed,
        sim_hits: hits,
        sim_eligible: eligible,
        data_hits,
        zero_count: hits == 0 && data_hits == 0,
    };
    if est.zero_count {
        log::warn!("neither data nor simulated extremes fall in the set; estimate is 0");
    }
    Ok(est)
}

/// Probability of a general box: the simulated-only estimator when the box
/// lies inside `𝔹_k` for the level of `samples`, otherwise the mixed one.
/// `at_one` must hold samples at `k = 1`.
pub fn estimate_probability(
    b: &BoxSet,
    observed: &ObservedTail,
    samples: &ExtremeSampleSet,
    at_one: &ExtremeSampleSet,
    threshold: &ThresholdModel,
    domain: &SpatialDomain,
    tail_factor: f64,
) -> Result<ProbabilityEstimate> {
    if box_in_exceedance_region(b, samples.k, threshold, domain)? {
        Ok(estimate_above(b, samples, tail_factor))
    } else {
        estimate_mixed(b, observed, at_one)
    }
}

/// Everything needed to estimate χ_u from a fitted model.
pub struct TailModel<'a> {
    pub domain: &'a SpatialDomain,
    pub threshold: &'a ThresholdModel,
    pub radial: &'a RadialFit,
    pub angular: &'a AngularModel,
    pub exceedances: &'a [Exceedance],
    pub data: &'a DataMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiRow {
    pub site_l: String,
    pub site_m: String,
    pub distance: f64,
    pub u: f64,
    pub k: f64,
    pub chi_hat: f64,
    pub method: EstimateMethod,
}

#[derive(Debug, Clone)]
pub struct ChiOptions {
    pub m: usize,
    pub k_max: f64,
    pub seed: u64,
}

impl Default for ChiOptions {
    fn default() -> Self {
        Self {
            m: DEFAULT_DRAWS,
            k_max: 10.0,
            seed: 0,
        }
    }
}

/// χ̂_u for every pair and level. Angles are drawn once; radii are drawn
/// for each distinct `k` from the same per-draw streams.
pub fn chi_u_pairs(model: &TailModel, u_list: &[f64], pairs: &[(usize, usize)], opts: &ChiOptions) -> Result<Vec<ChiRow>> {
    for &u in u_list {
        if !(u > 0.0 && u < 1.0) {
            return Err(GeomxError::InvalidParameter(format!("u must lie in (0,1), got {u}")));
        }
    }
    let d = model.domain.dim();
    let plan: Vec<((usize, usize), f64, f64)> = pairs
        .iter()
        .flat_map(|&p| {
            u_list
                .iter()
                .map(move |&u| (p, u, select_k(u, model.threshold, p, model.domain, opts.k_max)))
        })
        .collect();
    let mut ks: Vec<f64> = plan.iter().map(|x| x.2).collect();
    ks.push(1.0);
    ks.sort_by(f64::total_cmp);
    ks.dedup();

    let angles = sample_angles(model.angular, opts.m, None, model.domain, opts.seed)?;
    let rseed = radius_seed(opts.seed);
    let sets: BTreeMap<u64, ExtremeSampleSet> = ks
        .iter()
        .map(|&k| {
            let s = extremes_from_angles(&angles, model.radial, model.threshold, model.domain, k, rseed)?;
            Ok(((k * 10.0).round() as u64, s))
        })
        .collect::<Result<_>>()?;
    let factors: BTreeMap<u64, f64> = ks
        .iter()
        .map(|&k| Ok(((k * 10.0).round() as u64, tail_factor(model.radial, model.exceedances, model.domain, k)?)))
        .collect::<Result<_>>()?;
    let observed = ObservedTail::new(model.data, model.exceedances);
    let at_one = &sets[&10];

    plan.into_iter()
        .map(|((l, m), u, k)| {
            let b = BoxSet::chi(d, l, m, u)?;
            let key = (k * 10.0).round() as u64;
            let est = if chi_check(u, k, model.threshold, (l, m), model.domain) {
                estimate_above(&b, &sets[&key], factors[&key])
            } else {
                estimate_mixed(&b, &observed, at_one)?
            };
            Ok(ChiRow {
                site_l: model.domain.sites[l].id.clone(),
                site_m: model.domain.sites[m].id.clone(),
                distance: model.domain.distance(l, m),
                u,
                k,
                chi_hat: est.p / (1.0 - u),
                method: est.method,
            })
        })
        .collect()
}
