//! Angular models for `W | R′ > 1`: empirical resampling, the marginal
//! angle density of a Gaussian process, and a gauge-based density fitted by
//! score matching and sampled by MCMC.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomxError, Result};
use crate::gauge::{generalised, score_terms_into, Family, GaugeSpec};
use crate::optim::{brent_minimize, latin_hypercube, transform, NelderMead};
use crate::process::replicate_rng;
use crate::quadrature::GaussLegendre;
use crate::radial::Exceedance;
use crate::spatial::{corr_entries, factorize, CorrelationSpec, SpatialDomain};
use crate::special::{exponential_to_gaussian, gaussian_to_exponential};

pub const ANGLE_FLOOR: f64 = 1e-12;
/// Gauge-based fitting drops angles with a component below this.
pub const SCORE_MIN_COMPONENT: f64 = 1e-6;
pub const MIN_PROCESS_ANGLES: usize = 100;

/// Additive log-ratio coordinates `v_k = ln(w_k / w_d)`, `k < d`.
pub fn alr(w: &[f64]) -> Vec<f64> {
    let last = w[w.len() - 1].max(ANGLE_FLOOR).ln();
    w[..w.len() - 1]
        .iter()
        .map(|&x| x.max(ANGLE_FLOOR).ln() - last)
        .collect()
}

pub fn alr_inv(v: &[f64]) -> Vec<f64> {
    let vmax = v.iter().cloned().fold(0.0f64, f64::max);
    let mut w: Vec<f64> = v.iter().map(|&x| (x - vmax).exp()).collect();
    w.push((-vmax).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// A simplex angle together with the sites it is observed at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedAngle {
    pub w: Vec<f64>,
    pub pattern: Vec<usize>,
}

impl From<&Exceedance> for ExceedAngle {
    fn from(e: &Exceedance) -> Self {
        Self {
            w: e.w.clone(),
            pattern: e.pattern.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularKind {
    Empirical,
    ProcessBased,
    GaugeBased,
}

impl std::str::FromStr for AngularKind {
    type Err = GeomxError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "empirical" => Ok(Self::Empirical),
            "process" | "process_based" => Ok(Self::ProcessBased),
            "gauge" | "gauge_based" => Ok(Self::GaugeBased),
            _ => Err(GeomxError::Config(format!("unknown angular model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularModel {
    Empirical { angles: Vec<ExceedAngle> },
    ProcessBased { corr: CorrelationSpec },
    GaugeBased { spec: GaugeSpec },
}

impl AngularModel {
    pub fn kind(&self) -> AngularKind {
        match self {
            Self::Empirical { .. } => AngularKind::Empirical,
            Self::ProcessBased { .. } => AngularKind::ProcessBased,
            Self::GaugeBased { .. } => AngularKind::GaugeBased,
        }
    }
}

fn group_by_pattern(angles: &[ExceedAngle]) -> BTreeMap<Vec<usize>, Vec<usize>> {
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (i, a) in angles.iter().enumerate() {
        groups.entry(a.pattern.clone()).or_default().push(i);
    }
    groups
}

// ---------------------------------------------------------------------------
// process-based model

/// `ln f_X(x)` for a Gaussian copula on standard exponential margins.
fn ln_gauss_copula_exp(x: &[f64], inv: &DMatrix<f64>, ln_det: f64, z: &mut [f64]) -> f64 {
    let d = x.len();
    for j in 0..d {
        z[j] = exponential_to_gaussian(x[j]);
    }
    let mut q = 0.0;
    for k in 0..d {
        let col = inv.column(k);
        let mut c = 0.0;
        for j in 0..d {
            c += col[j] * z[j];
        }
        q += z[k] * (c - z[k]);
    }
    -0.5 * ln_det - 0.5 * q - x.iter().sum::<f64>()
}

/// Quadrature settings for the radial integral of the process-based model.
#[derive(Debug, Clone)]
pub struct ProcessQuadrature {
    /// Rule applied on each side of the integrand's mode.
    half: GaussLegendre,
    /// Relative tail mass allowed outside the integration range.
    pub tail_tol: f64,
}

impl ProcessQuadrature {
    pub fn new(nodes: usize) -> Self {
        Self {
            half: GaussLegendre::new(nodes / 2),
            tail_tol: 1e-10,
        }
    }
}

impl Default for ProcessQuadrature {
    fn default() -> Self {
        Self::new(64)
    }
}

const MAX_EXPANSIONS: usize = 3;

/// `ln f_W(w)` under the Gaussian-process angular model with `Σ⁻¹ = inv`.
/// The radial integral runs over `t = ln r`.
pub fn process_ln_density(w: &[f64], inv: &DMatrix<f64>, ln_det: f64, quad: &ProcessQuadrature) -> Result<f64> {
    let d = w.len();
    let df = d as f64;
    let buf = std::cell::RefCell::new((vec![0.0; d], vec![0.0; d]));
    let l = |t: f64| {
        let r = t.exp();
        let (x, z) = &mut *buf.borrow_mut();
        for j in 0..d {
            x[j] = r * w[j];
        }
        df * t + ln_gauss_copula_exp(x, inv, ln_det, z)
    };

    let mode = brent_minimize(|t| -l(t), -40.0, 12.0, 1e-8, 200);
    let (tm, lmax) = (mode.x, -mode.value);
    if !lmax.is_finite() {
        return Err(GeomxError::IntegrationFailure(format!("integrand not finite at its mode for w={w:?}")));
    }
    // step out until the integrand is negligible relative to its peak
    let cut = lmax - 30.0;
    let mut lo = tm - 0.5;
    let mut steps = 0;
    while l(lo) > cut && steps < 400 {
        lo -= 0.5;
        steps += 1;
    }
    let mut hi = tm + 0.5;
    steps = 0;
    while l(hi) > cut && steps < 400 {
        hi += 0.5;
        steps += 1;
    }

    for _ in 0..=MAX_EXPANSIONS {
        // two panels split at the mode so nodes cluster on both flanks of the peak
        let mut sum = 0.0;
        for (a, b) in [(lo, tm), (tm, hi)] {
            sum += quad.half.integrate(|t| (l(t) - lmax).exp(), a, b);
        }
        // geometric tail estimates from the local log-slope at each end
        let tail = |t: f64, dir: f64| {
            let h = 1e-3;
            let slope = (l(t) - l(t - dir * h)) / h * -1.0;
            if slope <= 0.0 {
                f64::INFINITY
            } else {
                (l(t) - lmax).exp() / slope
            }
        };
        let tail_mass = tail(lo, -1.0) + tail(hi, 1.0);
        if sum > 0.0 && tail_mass <= quad.tail_tol * sum {
            return Ok(lmax + sum.ln());
        }
        let width = hi - lo;
        lo -= 0.5 * width;
        hi += 0.5 * width;
    }
    Err(GeomxError::IntegrationFailure(format!(
        "radial integral tail mass above {:e} after {MAX_EXPANSIONS} expansions for w={w:?}",
        quad.tail_tol
    )))
}

struct PatternFactor {
    inv: DMatrix<f64>,
    ln_det: f64,
}

fn pattern_factors(
    groups: &BTreeMap<Vec<usize>, Vec<usize>>,
    domain: &SpatialDomain,
    corr: &CorrelationSpec,
) -> Result<BTreeMap<Vec<usize>, PatternFactor>> {
    groups
        .keys()
        .map(|p| {
            let c = factorize(corr_entries(&domain.sub_distances(p), corr))?;
            Ok((p.clone(), PatternFactor { inv: c.inv, ln_det: c.ln_det }))
        })
        .collect()
}

/// Log-likelihood of exceedance angles under the process-based model.
pub fn process_loglik(
    angles: &[ExceedAngle],
    domain: &SpatialDomain,
    corr: &CorrelationSpec,
    quad: &ProcessQuadrature,
) -> Result<f64> {
    corr.validate()?;
    let groups = group_by_pattern(angles);
    let factors = pattern_factors(&groups, domain, corr)?;
    let terms: Vec<Result<f64>> = angles
        .par_iter()
        .map(|a| {
            let f = &factors[&a.pattern];
            process_ln_density(&a.w, &f.inv, f.ln_det, quad)
        })
        .collect();
    let mut total = 0.0;
    for (i, t) in terms.into_iter().enumerate() {
        let t = t?;
        if !t.is_finite() {
            return Err(GeomxError::NonFiniteLikelihood { index: i });
        }
        total += t;
    }
    Ok(total)
}

fn check_positive(angles: &[ExceedAngle]) -> Result<()> {
    for (i, a) in angles.iter().enumerate() {
        if a.w.iter().any(|&x| !(x > 0.0)) {
            return Err(GeomxError::DomainError(format!(
                "angle {i} has a non-positive component"
            )));
        }
        if a.w.len() != a.pattern.len() || a.w.len() < 2 {
            return Err(GeomxError::DomainError(format!(
                "angle {i} has {} components for a pattern of {} sites",
                a.w.len(),
                a.pattern.len()
            )));
        }
    }
    Ok(())
}

fn corr_starts(n: usize, distance_range: (f64, f64), extra: usize, seed: u64) -> Vec<Vec<f64>> {
    let (med, max) = distance_range;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    latin_hypercube(n, 2 + extra, &mut rng)
        .into_iter()
        .map(|u| {
            let (llo, lhi) = ((0.1 * med).ln(), (10.0 * max).ln());
            let mut v = vec![llo + u[0] * (lhi - llo), transform::kappa_to(0.2 + 1.8 * u[1])];
            if extra == 1 {
                v.push(0.3f64.ln() + u[2] * (4.0f64 / 0.3).ln());
            }
            v
        })
        .collect()
}

pub fn fit_process_angular(
    angles: &[ExceedAngle],
    domain: &SpatialDomain,
    seed: u64,
) -> Result<CorrelationSpec> {
    if angles.len() < MIN_PROCESS_ANGLES {
        return Err(GeomxError::InsufficientData(format!(
            "{} angles; the process-based model needs at least {MIN_PROCESS_ANGLES}",
            angles.len()
        )));
    }
    check_positive(angles)?;
    let quad = ProcessQuadrature::default();
    let starts = corr_starts(5, domain.distance_summary(), 0, seed);
    let objective = |t: &[f64]| {
        let corr = CorrelationSpec {
            lambda: t[0].exp(),
            kappa: transform::kappa_from(t[1]),
        };
        process_loglik(angles, domain, &corr, &quad).map_or(f64::INFINITY, |l| -l)
    };
    let best = NelderMead::default()
        .minimize_multistart(objective, &starts)
        .ok_or_else(|| GeomxError::OptimizationFailed("process-based angular model: no finite start".into()))?;
    Ok(CorrelationSpec {
        lambda: best.x[0].exp(),
        kappa: transform::kappa_from(best.x[1]),
    })
}

// ---------------------------------------------------------------------------
// gauge-based model

/// ALR data grouped by pattern, ready for the Hyvärinen objective.
pub struct ScoreData {
    groups: Vec<(Vec<usize>, Vec<Vec<f64>>)>,
    terms: usize,
    pub dropped: usize,
}

impl ScoreData {
    pub fn new(angles: &[ExceedAngle]) -> Result<Self> {
        let mut dropped = 0;
        let mut map: BTreeMap<Vec<usize>, Vec<Vec<f64>>> = BTreeMap::new();
        for a in angles {
            if a.w.len() < 2 {
                return Err(GeomxError::DomainError("score matching needs d >= 2".into()));
            }
            if a.w.iter().any(|&x| !(x >= SCORE_MIN_COMPONENT)) {
                dropped += 1;
                continue;
            }
            map.entry(a.pattern.clone()).or_default().push(alr(&a.w));
        }
        if dropped > 0 {
            log::info!("score matching: dropped {dropped} angles with a component below {SCORE_MIN_COMPONENT:e}");
        }
        let terms = map.values().map(|v| v.len() * v[0].len()).sum();
        Ok(Self {
            groups: map.into_iter().collect(),
            terms,
            dropped,
        })
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.1.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.terms == 0
    }
}

/// Empirical Hyvärinen score: mean over observations and ALR coordinates of
/// `∂²log p + ½(∂log p)²`.
pub fn hyvarinen_objective(data: &ScoreData, domain: &SpatialDomain, spec: &GaugeSpec) -> Result<f64> {
    if spec.family != Family::GG {
        return Err(GeomxError::Unsupported("the gauge-based angular model uses the GG family".into()));
    }
    spec.validate()?;
    let nu = spec.inner_nu();
    let mut total = 0.0;
    for (pattern, vs) in &data.groups {
        let s = factorize(corr_entries(&domain.sub_distances(pattern), &spec.corr))?.inv;
        let parts: Vec<f64> = vs
            .par_chunks(256)
            .map(|chunk| {
                let m = chunk[0].len();
                let (mut g, mut h) = (vec![0.0; m], vec![0.0; m]);
                let mut acc = 0.0;
                for v in chunk {
                    score_terms_into(&s, nu, v, &mut g, &mut h);
                    for j in 0..m {
                        acc += h[j] + 0.5 * g[j] * g[j];
                    }
                }
                acc
            })
            .collect();
        total += parts.iter().sum::<f64>();
    }
    Ok(total / data.terms as f64)
}

/// Search box of the score-matching fit. Towards small `ν` or a
/// near-singular `Σ` the log-density develops ridges whose second
/// derivatives are huge and negative, and the empirical objective then
/// runs off to −∞ on a handful of angles.
pub const SCORE_NU_MIN: f64 = 0.25;
/// Upper bound on `λ` as a multiple of the largest site distance.
pub const SCORE_LAMBDA_MAX: f64 = 10.0;

pub fn fit_gauge_angular(angles: &[ExceedAngle], domain: &SpatialDomain, seed: u64) -> Result<GaugeSpec> {
    let data = ScoreData::new(angles)?;
    if data.is_empty() {
        return Err(GeomxError::InsufficientData("no angles left for score matching".into()));
    }
    let starts = corr_starts(5, domain.distance_summary(), 1, seed);
    let lambda_max = SCORE_LAMBDA_MAX * domain.distance_summary().1;
    let objective = |t: &[f64]| {
        let spec = GaugeSpec::from_unconstrained(Family::GG, t);
        if spec.inner_nu() < SCORE_NU_MIN || spec.corr.lambda > lambda_max {
            return f64::INFINITY;
        }
        hyvarinen_objective(&data, domain, &spec).unwrap_or(f64::INFINITY)
    };
    let best = NelderMead::default()
        .minimize_multistart(objective, &starts)
        .ok_or_else(|| GeomxError::OptimizationFailed("gauge-based angular model: no finite start".into()))?;
    Ok(GaugeSpec::from_unconstrained(Family::GG, &best.x))
}

// ---------------------------------------------------------------------------
// MCMC for exp(−g(x)) on the positive orthant

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Independence,
    RandomWalk,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub thin: usize,
    /// Independent chains; draws are concatenated in chain order.
    pub chains: usize,
    pub target_accept: f64,
    /// Dimensions up to this use the independence sampler.
    pub independence_max_dim: usize,
    /// Accepted range of the post-burn-in acceptance rate.
    pub accept_band: (f64, f64),
    /// Number of transitions per chain kept for inspection.
    pub trace_len: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            burn_in: 5000,
            thin: 20,
            chains: 4,
            target_accept: 0.25,
            independence_max_dim: 5,
            accept_band: (0.05, 0.7),
            trace_len: 0,
        }
    }
}

/// One logged transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub current: Vec<f64>,
    pub proposal: Vec<f64>,
    pub ln_ratio: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct McmcOutput {
    /// Thinned draws on the positive orthant.
    pub draws: Vec<Vec<f64>>,
    pub sampler: SamplerKind,
    pub acceptance: f64,
    /// Independence-proposal rate, when used.
    pub proposal_rate: Option<f64>,
    pub trace: Vec<Transition>,
}

/// GG gauge on a fixed pattern.
#[derive(Debug, Clone)]
pub struct GaugeTarget {
    pub s: Arc<DMatrix<f64>>,
    pub nu: f64,
}

impl GaugeTarget {
    pub fn new(spec: &GaugeSpec, domain: &SpatialDomain, pattern: &[usize]) -> Result<Self> {
        if spec.family != Family::GG {
            return Err(GeomxError::Unsupported("gauge-based sampling uses the GG family".into()));
        }
        let s = factorize(corr_entries(&domain.sub_distances(pattern), &spec.corr))?.inv;
        Ok(Self {
            s: Arc::new(s),
            nu: spec.inner_nu(),
        })
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn g(&self, x: &[f64]) -> f64 {
        generalised(&self.s, x, self.nu)
    }

    /// `ln` of the un-normalised target density.
    pub fn ln_target(&self, x: &[f64]) -> f64 {
        if x.iter().any(|&v| v < 0.0) {
            return f64::NEG_INFINITY;
        }
        -self.g(x)
    }

    /// Smallest value of the gauge on the unit simplex, by Nelder–Mead in
    /// ALR coordinates from the centroid and near each vertex.
    pub fn simplex_min(&self) -> f64 {
        let d = self.dim();
        let mut best = f64::INFINITY;
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            best = best.min(self.g(&e));
        }
        let f = |v: &[f64]| self.g(&alr_inv(v));
        let mut starts = vec![vec![0.0; d - 1]];
        for j in 0..d {
            let mut w = vec![0.1 / (d - 1).max(1) as f64; d];
            w[j] = 0.9;
            starts.push(alr(&w));
        }
        let nm = NelderMead {
            max_evals: 400 * d,
            ..Default::default()
        };
        if let Some(m) = nm.minimize_multistart(f, &starts) {
            best = best.min(m.value);
        }
        best
    }
}

/// Proposal for the independence sampler: iid `Exp(β)` components.
pub fn independence_ln_proposal(x: &[f64], beta: f64) -> f64 {
    x.len() as f64 * beta.ln() - beta * x.iter().sum::<f64>()
}

pub fn sample_gauge_orthant(target: &GaugeTarget, m: usize, cfg: &McmcConfig, seed: u64) -> Result<McmcOutput> {
    let (lo, hi) = cfg.accept_band;
    if target.dim() <= cfg.independence_max_dim {
        let beta = 0.9 * target.simplex_min();
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(GeomxError::NumericalError(format!("independence proposal rate {beta} is not positive")));
        }
        let out = run_chains(target, m, cfg, seed, Some(beta))?;
        // a high acceptance rate only signals a poor random walk; for an
        // independence proposal that dominates the target it is expected
        if out.acceptance >= lo {
            return Ok(out);
        }
        log::warn!(
            "independence sampler acceptance {:.3} below {lo}; switching to the random-walk sampler",
            out.acceptance
        );
    }
    let out = run_chains(target, m, cfg, seed, None)?;
    if out.acceptance < lo || out.acceptance > hi {
        return Err(GeomxError::McmcDiagnosticFailure(format!(
            "random-walk sampler acceptance {:.3} outside [{lo}, {hi}]",
            out.acceptance
        )));
    }
    Ok(out)
}

fn run_chains(target: &GaugeTarget, m: usize, cfg: &McmcConfig, seed: u64, beta: Option<f64>) -> Result<McmcOutput> {
    let chains = cfg.chains.max(1);
    let per_chain = m.div_ceil(chains);
    let results: Vec<Result<ChainOut>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = replicate_rng(seed, c as u64);
            match beta {
                Some(b) => independence_chain(target, b, per_chain, cfg, &mut rng),
                None => random_walk_chain(target, per_chain, cfg, &mut rng),
            }
        })
        .collect();
    let mut draws = Vec::with_capacity(per_chain * chains);
    let (mut acc, mut tot) = (0usize, 0usize);
    let mut trace = vec![];
    for r in results {
        let (dr, a, t, tr) = r?;
        draws.extend(dr);
        acc += a;
        tot += t;
        trace.extend(tr);
    }
    draws.truncate(m);
    Ok(McmcOutput {
        draws,
        sampler: if beta.is_some() { SamplerKind::Independence } else { SamplerKind::RandomWalk },
        acceptance: acc as f64 / tot.max(1) as f64,
        proposal_rate: beta,
        trace,
    })
}

fn start_point(target: &GaugeTarget) -> Vec<f64> {
    let d = target.dim();
    let w = vec![1.0 / d as f64; d];
    let r = d as f64 / target.g(&w);
    w.iter().map(|x| x * r).collect()
}

type ChainOut = (Vec<Vec<f64>>, usize, usize, Vec<Transition>);

fn independence_chain(target: &GaugeTarget, beta: f64, n: usize, cfg: &McmcConfig, rng: &mut ChaCha8Rng) -> Result<ChainOut> {
    let d = target.dim();
    let exp = Exp::new(beta).map_err(|e| GeomxError::NumericalError(e.to_string()))?;
    let mut x = start_point(target);
    let mut lx = target.ln_target(&x) - independence_ln_proposal(&x, beta);
    let mut out = Vec::with_capacity(n);
    let (mut acc, mut tot) = (0, 0);
    let mut trace = vec![];
    let total = cfg.burn_in + n * cfg.thin;
    for it in 1..=total {
        let y: Vec<f64> = (0..d).map(|_| exp.sample(rng)).collect();
        let ly = target.ln_target(&y) - independence_ln_proposal(&y, beta);
        let ln_ratio = ly - lx;
        let u: f64 = rng.random();
        let accepted = u.ln() < ln_ratio;
        if trace.len() < cfg.trace_len {
            trace.push(Transition {
                current: x.clone(),
                proposal: y.clone(),
                ln_ratio,
                accepted,
            });
        }
        if accepted {
            x = y;
            lx = ly;
        }
        if it > cfg.burn_in {
            tot += 1;
            acc += accepted as usize;
            if (it - cfg.burn_in) % cfg.thin == 0 {
                out.push(x.clone());
            }
        }
    }
    Ok((out, acc, tot, trace))
}

fn random_walk_chain(target: &GaugeTarget, n: usize, cfg: &McmcConfig, rng: &mut ChaCha8Rng) -> Result<ChainOut> {
    let d = target.dim();
    // state in log coordinates; target density there is exp(−g(e^y) + Σy)
    let mut y: Vec<f64> = start_point(target).iter().map(|v| v.ln()).collect();
    let ln_pi = |y: &[f64]| {
        let x: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        -target.g(&x) + y.iter().sum::<f64>()
    };
    let mut ly = ln_pi(&y);
    let mut ln_step = vec![(0.5f64).ln(); d];
    let mut batch_acc = vec![0usize; d];
    const BATCH: usize = 50;
    let mut out = Vec::with_capacity(n);
    let (mut acc, mut tot) = (0, 0);
    let mut trace = vec![];
    let total = cfg.burn_in + n * cfg.thin;
    for it in 1..=total {
        for j in 0..d {
            let old = y[j];
            let z: f64 = StandardNormal.sample(rng);
            y[j] = old + ln_step[j].exp() * z;
            let lnew = ln_pi(&y);
            let ln_ratio = lnew - ly;
            let u: f64 = rng.random();
            let accepted = u.ln() < ln_ratio;
            if trace.len() < cfg.trace_len {
                let mut cur = y.clone();
                cur[j] = old;
                trace.push(Transition {
                    current: cur.iter().map(|v| v.exp()).collect(),
                    proposal: y.iter().map(|v| v.exp()).collect(),
                    ln_ratio,
                    accepted,
                });
            }
            if accepted {
                ly = lnew;
            } else {
                y[j] = old;
            }
            if it <= cfg.burn_in {
                batch_acc[j] += accepted as usize;
            } else {
                tot += 1;
                acc += accepted as usize;
            }
        }
        if it <= cfg.burn_in && it % BATCH == 0 {
            let gain = (10.0 / ((it / BATCH) as f64).sqrt()).min(1.0);
            for j in 0..d {
                let rate = batch_acc[j] as f64 / BATCH as f64;
                ln_step[j] += gain * (rate - cfg.target_accept);
                batch_acc[j] = 0;
            }
        }
        if it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            out.push(y.iter().map(|v| v.exp()).collect());
        }
    }
    Ok((out, acc, tot, trace))
}

// ---------------------------------------------------------------------------
// sampling

/// Draws `m` angles from a fitted model. `pattern` restricts the sites;
/// `None` means all sites for the parametric models and the stored patterns
/// for the empirical one.
pub fn sample_angles(
    model: &AngularModel,
    m: usize,
    pattern: Option<&[usize]>,
    domain: &SpatialDomain,
    seed: u64,
) -> Result<Vec<ExceedAngle>> {
    let full: Vec<usize> = (0..domain.dim()).collect();
    match model {
        AngularModel::Empirical { angles } => {
            let pool: Vec<&ExceedAngle> = match pattern {
                Some(p) => angles.iter().filter(|a| a.pattern == p).collect(),
                None => angles.iter().collect(),
            };
            if pool.is_empty() {
                return Err(GeomxError::InsufficientData("no stored angles for the requested pattern".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..m).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect())
        }
        AngularModel::ProcessBased { corr } => {
            let p = pattern.unwrap_or(&full);
            let chol = factorize(corr_entries(&domain.sub_distances(p), corr))?.chol;
            let k = p.len();
            Ok((0..m)
                .into_par_iter()
                .map(|i| {
                    let mut rng = replicate_rng(seed, i as u64);
                    let e: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let x: Vec<f64> = (0..k)
                        .map(|a| {
                            let z: f64 = (0..=a).map(|b| chol[(a, b)] * e[b]).sum();
                            gaussian_to_exponential(z)
                        })
                        .collect();
                    let s: f64 = x.iter().sum();
                    ExceedAngle {
                        w: x.iter().map(|v| v / s).collect(),
                        pattern: p.to_vec(),
                    }
                })
                .collect())
        }
        AngularModel::GaugeBased { spec } => {
            let p = pattern.unwrap_or(&full);
            let target = GaugeTarget::new(spec, domain, p)?;
            let out = sample_gauge_orthant(&target, m, &McmcConfig::default(), seed)?;
            Ok(out
                .draws
                .into_iter()
                .map(|x| {
                    let s: f64 = x.iter().sum();
                    ExceedAngle {
                        w: x.iter().map(|v| v / s).collect(),
                        pattern: p.to_vec(),
                    }
                })
                .collect())
        }
    }
}

pub fn fit_angular(
    kind: AngularKind,
    angles: &[ExceedAngle],
    domain: &SpatialDomain,
    seed: u64,
) -> Result<AngularModel> {
    Ok(match kind {
        AngularKind::Empirical => {
            if angles.is_empty() {
                return Err(GeomxError::InsufficientData("no exceedance angles".into()));
            }
            AngularModel::Empirical { angles: angles.to_vec() }
        }
        AngularKind::ProcessBased => AngularModel::ProcessBased {
            corr: fit_process_angular(angles, domain, seed)?,
        },
        AngularKind::GaugeBased => AngularModel::GaugeBased {
            spec: fit_gauge_angular(angles, domain, seed)?,
        },
    })
}

// ---------------------------------------------------------------------------
// diagnostics

/// Integrated autocorrelation time by Geyer's initial positive sequence.
pub fn integrated_autocorrelation(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return f64::NAN;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 1.0;
    }
    let rho = |k: usize| {
        (0..n - k).map(|i| (x[i] - mean) * (x[i + k] - mean)).sum::<f64>() / (n as f64 * c0)
    };
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = rho(2 * k) + rho(2 * k + 1);
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        k += 1;
    }
    tau
}

/// Standardised mean difference `(mean(w_j) − mean(w_k)) / se` for every
/// pair of components of equal-pattern angles.
pub fn pairwise_asymmetry(angles: &[ExceedAngle]) -> Vec<((usize, usize), f64)> {
    let Some(first) = angles.first() else {
        return vec![];
    };
    let d = first.w.len();
    let n = angles.len() as f64;
    let mut out = vec![];
    for j in 0..d {
        for k in j + 1..d {
            let diffs: Vec<f64> = angles.iter().map(|a| a.w[j] - a.w[k]).collect();
            let m = diffs.iter().sum::<f64>() / n;
            let v = diffs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let se = (v / n).sqrt();
            out.push(((first.pattern[j], first.pattern[k]), if se > 0.0 { m / se } else { 0.0 }));
        }
    }
    out
}
