//! Truncated-gamma model for radial threshold exceedances.

pub mod threshold;

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeomxError, Result};
use crate::gauge::{Family, GaugeContext, GaugeSpec, PatternCache};
use crate::margins::PolarDataset;
use crate::optim::{latin_hypercube, transform, NelderMead};
use crate::spatial::{corr_entries, factorize, SpatialDomain};
use crate::special::{gamma_ln_pdf, ln_gamma_pq};
use crate::truncgamma;

pub use threshold::{
    build_threshold, calibrate_ctau, fit_composite_gaussian, pairwise_threshold, ThresholdModel,
};

/// Minimum number of exceedances for a radial fit.
pub const MIN_EXCEEDANCES: usize = 50;

/// One radial exceedance with its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Exceedance {
    pub r: f64,
    pub w: Vec<f64>,
    pub pattern: Vec<usize>,
    pub r0: f64,
    /// Row index in the source data.
    pub row: usize,
}

impl Exceedance {
    pub fn dim(&self) -> usize {
        self.pattern.len()
    }
}

/// Rows with `g_G(x_i) > C_{τ,d_i}` under the threshold gauge.
pub fn exceedances(
    polar: &PolarDataset,
    threshold: &ThresholdModel,
    domain: &SpatialDomain,
) -> Result<Vec<Exceedance>> {
    let gw = threshold::threshold_gauge_at_angles(polar, &threshold.corr_pw, domain)?;
    Ok(polar
        .samples
        .iter()
        .zip(gw)
        .filter_map(|(s, g)| {
            let c = threshold.c_for_dim(s.dim());
            (s.r * g > c).then(|| Exceedance {
                r: s.r,
                w: s.w.clone(),
                pattern: s.pattern.clone(),
                r0: c / g,
                row: s.row,
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialFit {
    pub spec: GaugeSpec,
    /// Shape multiplier: the gamma shape for a row of dimension `d` is `α·d`.
    pub alpha: f64,
    pub loglik: f64,
    pub aic: f64,
    pub n_exceed: usize,
}

impl RadialFit {
    pub fn param_count(&self) -> usize {
        self.spec.family.param_count() + 1
    }
}

pub fn aic(family: Family, loglik: f64) -> f64 {
    2.0 * (family.param_count() + 1) as f64 - 2.0 * loglik
}

/// How `Σ⁻¹` is obtained across observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LikelihoodPath {
    /// Fixed path when every row is complete, varying otherwise.
    #[default]
    Auto,
    /// One `Σ⁻¹` for all rows; requires complete rows.
    Fixed,
    /// Per-pattern `Σ⁻¹` through the pattern cache.
    Varying,
}

/// Per-observation `Σ⁻¹`, in observation order.
fn inverses(
    spec: &GaugeSpec,
    ex: &[Exceedance],
    domain: &SpatialDomain,
    path: LikelihoodPath,
) -> Result<Vec<Arc<DMatrix<f64>>>> {
    let complete = ex.iter().all(|e| e.dim() == domain.dim());
    let fixed = match path {
        LikelihoodPath::Auto => complete,
        LikelihoodPath::Fixed => {
            if !complete {
                return Err(GeomxError::InvalidParameter(
                    "the fixed-dimension likelihood needs complete rows".into(),
                ));
            }
            true
        }
        LikelihoodPath::Varying => false,
    };
    if fixed {
        let inv = Arc::new(factorize(corr_entries(&domain.h, &spec.corr))?.inv);
        Ok(vec![inv; ex.len()])
    } else {
        let mut cache = PatternCache::default();
        ex.iter()
            .map(|e| cache.get(domain, &spec.corr, &e.pattern))
            .collect()
    }
}

/// Log-likelihood of the truncated-gamma exceedance model.
pub fn radial_loglik(
    spec: &GaugeSpec,
    alpha: f64,
    ex: &[Exceedance],
    domain: &SpatialDomain,
    path: LikelihoodPath,
) -> Result<f64> {
    spec.validate()?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(GeomxError::InvalidParameter(format!("alpha must be > 0, got {alpha}")));
    }
    let invs = inverses(spec, ex, domain, path)?;
    let terms: Vec<Result<f64>> = ex
        .par_iter()
        .zip(invs.par_iter())
        .map(|(e, inv)| {
            let ctx = GaugeContext::new(*spec, inv.clone());
            let g = ctx.eval_unchecked(&e.w)?;
            let a = alpha * e.dim() as f64;
            Ok(gamma_ln_pdf(e.r, a, g) - ln_gamma_pq(a, g * e.r0).1)
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

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub path: LikelihoodPath,
    /// Extra starting points `(spec, α)`; they replace Latin-hypercube starts.
    pub warm_starts: Vec<(GaugeSpec, f64)>,
    pub optimizer: NelderMead,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            seed: 0,
            path: LikelihoodPath::Auto,
            warm_starts: vec![],
            optimizer: NelderMead::default(),
        }
    }
}

fn unconstrained(spec: &GaugeSpec, alpha: f64) -> Vec<f64> {
    let mut v = spec.to_unconstrained();
    v.push(alpha.ln());
    v
}

fn constrained(family: Family, t: &[f64]) -> (GaugeSpec, f64) {
    let n = t.len();
    (GaugeSpec::from_unconstrained(family, &t[..n - 1]), t[n - 1].exp())
}

/// Latin-hypercube starts over the plausible parameter ranges.
pub fn lhs_starts(family: Family, n: usize, distance_range: (f64, f64), seed: u64) -> Vec<Vec<f64>> {
    let (med, max) = distance_range;
    let dims = family.param_count() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    latin_hypercube(n, dims, &mut rng)
        .into_iter()
        .map(|u| {
            let (llo, lhi) = ((0.1 * med).ln(), (10.0 * max).ln());
            let mut v = vec![llo + u[0] * (lhi - llo), transform::kappa_to(0.2 + 1.8 * u[1])];
            let mut i = 2;
            if family.has_nu() {
                v.push((0.3f64.ln()) + u[i] * (4.0f64 / 0.3).ln());
                i += 1;
            }
            if family.is_hw() {
                v.push(transform::softplus_inv(3.0 * u[i]));
                i += 1;
            }
            v.push(0.2f64.ln() + u[i] * 10f64.ln());
            v
        })
        .collect()
}

pub fn fit_radial_exceedances(
    ex: &[Exceedance],
    domain: &SpatialDomain,
    family: Family,
    opts: &FitOptions,
) -> Result<RadialFit> {
    if ex.len() < MIN_EXCEEDANCES {
        return Err(GeomxError::InsufficientData(format!(
            "{} exceedances; the radial fit needs at least {MIN_EXCEEDANCES}",
            ex.len()
        )));
    }
    let n_lhs = opts.starts.saturating_sub(opts.warm_starts.len());
    let mut starts: Vec<Vec<f64>> = opts
        .warm_starts
        .iter()
        .filter(|(s, _)| s.family == family)
        .map(|(s, a)| unconstrained(s, *a))
        .collect();
    let seed = opts.seed ^ ((family as u64 + 1) << 40);
    starts.extend(lhs_starts(family, n_lhs.max(starts.is_empty() as usize), domain.distance_summary(), seed));

    let objective = |t: &[f64]| {
        let (spec, alpha) = constrained(family, t);
        match radial_loglik(&spec, alpha, ex, domain, opts.path) {
            Ok(l) => -l,
            Err(_) => f64::INFINITY,
        }
    };
    let best = opts
        .optimizer
        .minimize_multistart(objective, &starts)
        .ok_or_else(|| {
            GeomxError::OptimizationFailed(format!(
                "{family}: all {} starts returned non-finite likelihoods",
                starts.len()
            ))
        })?;
    let (spec, alpha) = constrained(family, &best.x);
    let loglik = radial_loglik(&spec, alpha, ex, domain, opts.path)?;
    if family.is_hw() && spec.zeta_value() > 1e3 {
        log::warn!("{family}: fitted zeta = {:.3e} is beyond 1e3", spec.zeta_value());
    }
    Ok(RadialFit {
        spec,
        alpha,
        loglik,
        aic: aic(family, loglik),
        n_exceed: ex.len(),
    })
}

/// Fits one family to the exceedances of `threshold`.
pub fn fit_radial(
    polar: &PolarDataset,
    threshold: &ThresholdModel,
    domain: &SpatialDomain,
    family: Family,
    opts: &FitOptions,
) -> Result<RadialFit> {
    let ex = exceedances(polar, threshold, domain)?;
    fit_radial_exceedances(&ex, domain, family, opts)
}

/// Fits several families, seeding richer families from the optima of the
/// families they nest (G, L ⊂ GG; G ⊂ HW_G; HW_G, GG ⊂ HW_GG).
pub fn fit_families(
    ex: &[Exceedance],
    domain: &SpatialDomain,
    families: &[Family],
    opts: &FitOptions,
) -> Vec<(Family, Result<RadialFit>)> {
    let fit_one = |family: Family, warm: Vec<(GaugeSpec, f64)>| {
        let o = FitOptions {
            warm_starts: warm,
            ..opts.clone()
        };
        fit_radial_exceedances(ex, domain, family, &o)
    };
    let want = |f: Family| families.contains(&f);
    let need = |f: Family| {
        want(f)
            || match f {
                Family::G => want(Family::GG) || want(Family::HwG) || want(Family::HwGG),
                Family::L => want(Family::GG) || want(Family::HwGG),
                Family::GG | Family::HwG => want(Family::HwGG),
                Family::HwGG => false,
            }
    };

    let (g, l) = rayon::join(
        || need(Family::G).then(|| fit_one(Family::G, vec![])),
        || need(Family::L).then(|| fit_one(Family::L, vec![])),
    );
    let ok = |r: &Option<Result<RadialFit>>| r.as_ref().and_then(|r| r.as_ref().ok()).cloned();
    let (g_ok, l_ok) = (ok(&g), ok(&l));

    let mut gg_warm = vec![];
    if let Some(f) = &g_ok {
        gg_warm.push((GaugeSpec::generalised(f.spec.corr.lambda, f.spec.corr.kappa, 2.0), f.alpha));
    }
    if let Some(f) = &l_ok {
        gg_warm.push((GaugeSpec::generalised(f.spec.corr.lambda, f.spec.corr.kappa, 1.0), f.alpha));
    }
    let mut hwg_warm = vec![];
    if let Some(f) = &g_ok {
        hwg_warm.push((GaugeSpec::hw_gaussian(f.spec.corr.lambda, f.spec.corr.kappa, 0.0), f.alpha));
    }
    let (gg, hwg) = rayon::join(
        || need(Family::GG).then(|| fit_one(Family::GG, gg_warm)),
        || need(Family::HwG).then(|| fit_one(Family::HwG, hwg_warm)),
    );

    let hwgg = need(Family::HwGG).then(|| {
        let mut warm = vec![];
        if let Some(f) = ok(&hwg) {
            warm.push((
                GaugeSpec::hw_generalised(f.spec.corr.lambda, f.spec.corr.kappa, 2.0, f.spec.zeta_value()),
                f.alpha,
            ));
        }
        if let Some(f) = ok(&gg) {
            warm.push((
                GaugeSpec::hw_generalised(f.spec.corr.lambda, f.spec.corr.kappa, f.spec.inner_nu(), 0.0),
                f.alpha,
            ));
        }
        fit_one(Family::HwGG, warm)
    });

    let mut out = vec![];
    for (fam, r) in [
        (Family::G, g),
        (Family::L, l),
        (Family::GG, gg),
        (Family::HwG, hwg),
        (Family::HwGG, hwgg),
    ] {
        if want(fam) {
            if let Some(r) = r {
                out.push((fam, r));
            }
        }
    }
    out
}

/// Minimum-AIC fit; ties go to fewer parameters, then family order.
pub fn select_model(fits: &[RadialFit]) -> Result<RadialFit> {
    fits.iter()
        .filter(|f| f.aic.is_finite())
        .min_by(|a, b| {
            a.aic
                .total_cmp(&b.aic)
                .then(a.param_count().cmp(&b.param_count()))
                .then(a.spec.family.cmp(&b.spec.family))
        })
        .cloned()
        .ok_or(GeomxError::NoViableModel)
}

/// P–P pairs `(i/(m+1), model probability)` sorted by model probability,
/// where the model probability is the truncated-gamma CDF at each exceedance.
pub fn pp_diagnostic(fit: &RadialFit, ex: &[Exceedance], domain: &SpatialDomain) -> Result<Vec<(f64, f64)>> {
    let invs = inverses(&fit.spec, ex, domain, LikelihoodPath::Auto)?;
    let mut p: Vec<f64> = ex
        .iter()
        .zip(&invs)
        .map(|(e, inv)| {
            let g = GaugeContext::new(fit.spec, inv.clone()).eval_unchecked(&e.w)?;
            Ok(truncgamma::cdf(e.r, fit.alpha * e.dim() as f64, g, e.r0))
        })
        .collect::<Result<_>>()?;
    p.sort_by(f64::total_cmp);
    let m = p.len() as f64;
    Ok(p.into_iter()
        .enumerate()
        .map(|(i, q)| ((i + 1) as f64 / (m + 1.0), q))
        .collect())
}

/// Differences `model − empirical` for the rescaled P–P plot.
pub fn pp_differences(pp: &[(f64, f64)]) -> Vec<f64> {
    pp.iter().map(|(e, m)| m - e).collect()
}
