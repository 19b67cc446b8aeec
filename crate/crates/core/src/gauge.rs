//! Spatially parameterised gauge functions.
//!
//! All five families are built on a correlation matrix `Σ` with the
//! powered-exponential structure, and evaluated through a precomputed `Σ⁻¹`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GeomxError, Result};
use crate::optim::{brent_minimize, transform};
use crate::spatial::{corr_entries, factorize, CorrelationSpec, SpatialDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    G,
    L,
    GG,
    #[serde(rename = "HW_G")]
    HwG,
    #[serde(rename = "HW_GG")]
    HwGG,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::G, Family::L, Family::GG, Family::HwG, Family::HwGG];

    /// Number of gauge parameters (excluding the radial shape multiplier).
    pub fn param_count(self) -> usize {
        match self {
            Family::G | Family::L => 2,
            Family::GG | Family::HwG => 3,
            Family::HwGG => 4,
        }
    }

    pub fn has_nu(self) -> bool {
        matches!(self, Family::GG | Family::HwGG)
    }

    pub fn is_hw(self) -> bool {
        matches!(self, Family::HwG | Family::HwGG)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::G => "G",
            Family::L => "L",
            Family::GG => "GG",
            Family::HwG => "HW_G",
            Family::HwGG => "HW_GG",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = GeomxError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('_', "").as_str() {
            "G" => Ok(Family::G),
            "L" => Ok(Family::L),
            "GG" => Ok(Family::GG),
            "HWG" => Ok(Family::HwG),
            "HWGG" => Ok(Family::HwGG),
            _ => Err(GeomxError::Config(format!(
                "unknown gauge family {s:?} (expected G, L, GG, HWG or HWGG)"
            ))),
        }
    }
}

/// A gauge family together with its parameters.
///
/// `nu` is only read by `GG` and `HW_GG`; `zeta = δ/(1−δ)` only by the HW
/// families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeSpec {
    pub family: Family,
    pub corr: CorrelationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
}

impl GaugeSpec {
    pub fn gaussian(lambda: f64, kappa: f64) -> Self {
        Self {
            family: Family::G,
            corr: CorrelationSpec { lambda, kappa },
            nu: None,
            zeta: None,
        }
    }

    pub fn laplace(lambda: f64, kappa: f64) -> Self {
        Self {
            family: Family::L,
            ..Self::gaussian(lambda, kappa)
        }
    }

    pub fn generalised(lambda: f64, kappa: f64, nu: f64) -> Self {
        Self {
            family: Family::GG,
            nu: Some(nu),
            ..Self::gaussian(lambda, kappa)
        }
    }

    pub fn hw_gaussian(lambda: f64, kappa: f64, zeta: f64) -> Self {
        Self {
            family: Family::HwG,
            zeta: Some(zeta),
            ..Self::gaussian(lambda, kappa)
        }
    }

    pub fn hw_generalised(lambda: f64, kappa: f64, nu: f64, zeta: f64) -> Self {
        Self {
            family: Family::HwGG,
            nu: Some(nu),
            zeta: Some(zeta),
            ..Self::gaussian(lambda, kappa)
        }
    }

    /// Exponent `ν` of the inner (G/GG) gauge.
    pub fn inner_nu(&self) -> f64 {
        match self.family {
            Family::G | Family::HwG => 2.0,
            Family::L => 1.0,
            Family::GG | Family::HwGG => self.nu.unwrap_or(2.0),
        }
    }

    pub fn zeta_value(&self) -> f64 {
        if self.family.is_hw() {
            self.zeta.unwrap_or(0.0)
        } else {
            0.0
        }
    }

    /// `δ = ζ/(1+ζ)` for the HW families.
    pub fn delta(&self) -> Option<f64> {
        self.family
            .is_hw()
            .then(|| self.zeta_value() / (1.0 + self.zeta_value()))
    }

    pub fn validate(&self) -> Result<()> {
        self.corr.validate()?;
        if self.family.has_nu() {
            match self.nu {
                Some(nu) if nu > 0.0 && nu.is_finite() => {}
                other => {
                    return Err(GeomxError::InvalidParameter(format!(
                        "{} gauge needs nu > 0, got {other:?}",
                        self.family
                    )))
                }
            }
        }
        if self.family.is_hw() {
            match self.zeta {
                Some(z) if z >= 0.0 && z.is_finite() => {}
                other => {
                    return Err(GeomxError::InvalidParameter(format!(
                        "{} gauge needs zeta >= 0, got {other:?}",
                        self.family
                    )))
                }
            }
        }
        Ok(())
    }

    /// Unconstrained optimiser coordinates: `log λ`, logit of `κ/2`, then
    /// `log ν` and softplus⁻¹ of `ζ` where present.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut v = vec![self.corr.lambda.ln(), transform::kappa_to(self.corr.kappa)];
        if self.family.has_nu() {
            v.push(self.nu.unwrap_or(2.0).ln());
        }
        if self.family.is_hw() {
            v.push(transform::softplus_inv(self.zeta_value()));
        }
        v
    }

    pub fn from_unconstrained(family: Family, t: &[f64]) -> Self {
        let mut spec = GaugeSpec {
            family,
            corr: CorrelationSpec {
                lambda: t[0].exp(),
                kappa: transform::kappa_from(t[1]),
            },
            nu: None,
            zeta: None,
        };
        let mut i = 2;
        if family.has_nu() {
            spec.nu = Some(t[i].exp());
            i += 1;
        }
        if family.is_hw() {
            spec.zeta = Some(transform::softplus(t[i]).max(0.0));
        }
        spec
    }
}

/// A gauge ready for evaluation on one set of sites.
#[derive(Debug, Clone)]
pub struct GaugeContext {
    pub spec: GaugeSpec,
    /// `Σ⁻¹` for the active sites.
    pub sigma_inv: Arc<DMatrix<f64>>,
}

const HW_TOL: f64 = 1e-8;
const HW_MAX_ITER: usize = 200;

impl GaugeContext {
    pub fn new(spec: GaugeSpec, sigma_inv: Arc<DMatrix<f64>>) -> Self {
        Self { spec, sigma_inv }
    }

    /// Builds `Σ⁻¹` from a distance matrix.
    pub fn from_distances(spec: GaugeSpec, h: &DMatrix<f64>) -> Result<Self> {
        spec.validate()?;
        let c = factorize(corr_entries(h, &spec.corr))?;
        Ok(Self::new(spec, Arc::new(c.inv)))
    }

    pub fn for_domain(spec: GaugeSpec, domain: &SpatialDomain) -> Result<Self> {
        Self::from_distances(spec, &domain.h)
    }

    pub fn dim(&self) -> usize {
        self.sigma_inv.nrows()
    }

    /// Evaluates `g(x)`; components must be nonnegative.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(GeomxError::DomainError(format!(
                "gauge of dimension {} evaluated at a {}-vector",
                self.dim(),
                x.len()
            )));
        }
        if let Some(j) = x.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(GeomxError::DomainError(format!(
                "gauge argument component {j} = {} is not a nonnegative number",
                x[j]
            )));
        }
        self.eval_unchecked(x)
    }

    /// As [`GaugeContext::eval`] without argument validation.
    pub fn eval_unchecked(&self, x: &[f64]) -> Result<f64> {
        let nu = self.spec.inner_nu();
        match self.spec.family {
            Family::G | Family::L | Family::GG => Ok(generalised(&self.sigma_inv, x, nu)),
            Family::HwG | Family::HwGG => hw(&self.sigma_inv, x, nu, self.spec.zeta_value()),
        }
    }
}

/// `((x^{1/ν})ᵀ S x^{1/ν})^{ν/2}`.
pub fn generalised(s: &DMatrix<f64>, x: &[f64], nu: f64) -> f64 {
    generalised_map(s, x.len(), nu, |j| x[j])
}

/// [`generalised`] at the point whose `j`-th component is `xj(j)`.
pub fn generalised_map<F: Fn(usize) -> f64>(s: &DMatrix<f64>, d: usize, nu: f64, xj: F) -> f64 {
    let mut buf = [0.0f64; 32];
    let mut heap;
    let y: &mut [f64] = if d <= 32 {
        &mut buf[..d]
    } else {
        heap = vec![0.0; d];
        &mut heap
    };
    if nu == 2.0 {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = xj(j).sqrt();
        }
    } else if nu == 1.0 {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = xj(j);
        }
    } else {
        let p = 1.0 / nu;
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = xj(j).powf(p);
        }
    }
    let q = quad_form(s, y).max(0.0);
    if nu == 2.0 {
        q
    } else if nu == 1.0 {
        q.sqrt()
    } else {
        q.powf(0.5 * nu)
    }
}

#[inline]
pub fn quad_form(s: &DMatrix<f64>, y: &[f64]) -> f64 {
    let d = y.len();
    let data = s.as_slice();
    let mut total = 0.0;
    for k in 0..d {
        let col = &data[k * d..(k + 1) * d];
        let mut c = 0.0;
        for j in 0..d {
            c += col[j] * y[j];
        }
        total += c * y[k];
    }
    total
}

fn hw(s: &DMatrix<f64>, x: &[f64], nu: f64, zeta: f64) -> Result<f64> {
    if zeta == 0.0 {
        return Ok(generalised(s, x, nu));
    }
    let d = x.len();
    let min_x = x.iter().cloned().fold(f64::INFINITY, f64::min);
    // clamping guards the ends of the s-interval against round-off
    let objective = |sv: f64| {
        if zeta <= 1.0 {
            sv + generalised_map(s, d, nu, |j| (x[j] - zeta * sv).max(0.0))
        } else {
            sv + generalised_map(s, d, nu, |j| (zeta * (x[j] - sv)).max(0.0))
        }
    };
    let upper = if zeta <= 1.0 { min_x / zeta } else { min_x };
    let m = brent_minimize(objective, 0.0, upper, HW_TOL, HW_MAX_ITER);
    if !m.converged {
        return Err(GeomxError::NumericalError(format!(
            "HW inner minimisation did not converge in {HW_MAX_ITER} iterations"
        )));
    }
    Ok(m.value)
}

/// Gradient and diagonal Hessian of the un-normalised angular log-density
/// `log p(v) = −d log g_GG(e^v) + Σ_{j<d} v_j` in additive log-ratio
/// coordinates (`v_d = 0`).
pub fn gauge_score_terms(ctx: &GaugeContext, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if ctx.spec.family != Family::GG {
        return Err(GeomxError::Unsupported(format!(
            "score terms are only available for GG, got {}",
            ctx.spec.family
        )));
    }
    let d = ctx.dim();
    if v.len() + 1 != d {
        return Err(GeomxError::DomainError(format!(
            "expected {} ALR coordinates, got {}",
            d - 1,
            v.len()
        )));
    }
    if v.iter().any(|t| !t.is_finite()) {
        return Err(GeomxError::DomainError("non-finite ALR coordinate".into()));
    }
    let nu = ctx.spec.inner_nu();
    let mut grad = vec![0.0; d - 1];
    let mut hess = vec![0.0; d - 1];
    score_terms_into(&ctx.sigma_inv, nu, v, &mut grad, &mut hess);
    Ok((grad, hess))
}

/// Allocation-light kernel behind [`gauge_score_terms`].
pub fn score_terms_into(s: &DMatrix<f64>, nu: f64, v: &[f64], grad: &mut [f64], hess: &mut [f64]) {
    let d = v.len() + 1;
    let df = d as f64;
    // shift by the max for overflow safety; the terms below are scale-free in a
    let vmax = v.iter().cloned().fold(0.0f64, f64::max);
    let mut a = vec![0.0; d];
    for j in 0..d - 1 {
        a[j] = ((v[j] - vmax) / nu).exp();
    }
    a[d - 1] = (-vmax / nu).exp();
    let data = s.as_slice();
    let mut b = vec![0.0; d];
    for (k, &ak) in a.iter().enumerate() {
        let col = &data[k * d..(k + 1) * d];
        for j in 0..d {
            b[j] += col[j] * ak;
        }
    }
    let q: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    for j in 0..d - 1 {
        let t = a[j] * b[j] / q;
        grad[j] = -df * t + 1.0;
        hess[j] = -(df / nu) * (a[j] * b[j] + data[j * d + j] * a[j] * a[j]) / q
            + (2.0 * df / nu) * t * t;
    }
}

/// The 2-site Gaussian gauge for the pair `(j, k)` with the same range and
/// smoothness.
pub fn bivariate_gauge_projection(ctx: &GaugeContext, h_jk: f64) -> Result<GaugeContext> {
    if ctx.spec.family != Family::G {
        return Err(GeomxError::Unsupported(format!(
            "bivariate projection needs the G family, got {}",
            ctx.spec.family
        )));
    }
    bivariate_gaussian(ctx.spec.corr, h_jk)
}

pub fn bivariate_gaussian(corr: CorrelationSpec, h: f64) -> Result<GaugeContext> {
    let hm = DMatrix::from_row_slice(2, 2, &[0.0, h, h, 0.0]);
    GaugeContext::from_distances(GaugeSpec::gaussian(corr.lambda, corr.kappa), &hm)
}

/// Closed form of the 2-d Gaussian gauge with correlation `ρ`.
#[inline]
pub fn g_gauss_2d(w1: f64, w2: f64, rho: f64) -> f64 {
    (w1 + w2 - 2.0 * rho * (w1 * w2).sqrt()) / (1.0 - rho * rho)
}

/// Least-recently-used cache of `Σ⁻¹` keyed by the sorted site subset.
#[derive(Debug)]
pub struct PatternCache {
    capacity: usize,
    tick: u64,
    map: HashMap<Vec<usize>, (Arc<DMatrix<f64>>, u64)>,
}

impl Default for PatternCache {
    fn default() -> Self {
        Self::with_capacity(4096)
    }
}

impl PatternCache {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            tick: 0,
            map: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&mut self) {
        self.map.clear();
    }

    /// `Σ⁻¹` for `pattern` under `corr`. The cache does not key on `corr`;
    /// callers clear it when the correlation parameters change.
    pub fn get(
        &mut self,
        domain: &SpatialDomain,
        corr: &CorrelationSpec,
        pattern: &[usize],
    ) -> Result<Arc<DMatrix<f64>>> {
        self.tick += 1;
        if let Some(entry) = self.map.get_mut(pattern) {
            entry.1 = self.tick;
            return Ok(entry.0.clone());
        }
        let h = domain.sub_distances(pattern);
        let inv = Arc::new(factorize(corr_entries(&h, corr))?.inv);
        if self.map.len() >= self.capacity {
            if let Some(oldest) = self
                .map
                .iter()
                .min_by_key(|(_, (_, t))| *t)
                .map(|(k, _)| k.clone())
            {
                self.map.remove(&oldest);
            }
        }
        self.map.insert(pattern.to_vec(), (inv.clone(), self.tick));
        Ok(inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{random_sites, Metric};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ctx(spec: GaugeSpec, d: usize, seed: u64) -> GaugeContext {
        let dom = SpatialDomain::new(random_sites(d, seed), Metric::Euclidean).unwrap();
        GaugeContext::for_domain(spec, &dom).unwrap()
    }

    fn identity_ctx(spec: GaugeSpec, d: usize) -> GaugeContext {
        GaugeContext::new(spec, Arc::new(DMatrix::identity(d, d)))
    }

    #[test]
    fn identity_gaussian_is_sum() {
        let c = identity_ctx(GaugeSpec::gaussian(1.0, 1.0), 2);
        assert!((c.eval(&[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn laplace_hand_value() {
        let rho: f64 = 0.5;
        let s = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]) * (4.0 / 3.0);
        let c = GaugeContext::new(GaugeSpec::laplace(1.0, 1.0), Arc::new(s));
        let _ = rho;
        assert!((c.eval(&[1.0, 2.0]).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hw_zero_zeta_is_inner() {
        let g = ctx(GaugeSpec::gaussian(10.0, 1.0), 5, 1);
        let h = ctx(GaugeSpec::hw_gaussian(10.0, 1.0, 0.0), 5, 1);
        let x = [0.3, 1.2, 2.0, 0.1, 0.7];
        assert_eq!(g.eval(&x).unwrap(), h.eval(&x).unwrap());
    }

    #[test]
    fn negative_argument_rejected() {
        let g = identity_ctx(GaugeSpec::gaussian(1.0, 1.0), 2);
        assert!(matches!(g.eval(&[-1.0, 1.0]), Err(GeomxError::DomainError(_))));
    }

    #[test]
    fn zero_component_is_continuous() {
        let g = ctx(GaugeSpec::generalised(5.0, 1.0, 1.5), 3, 2);
        let a = g.eval(&[0.0, 1.0, 2.0]).unwrap();
        let b = g.eval(&[1e-14, 1.0, 2.0]).unwrap();
        assert!((a - b).abs() < 1e-6);
        let hw = ctx(GaugeSpec::hw_gaussian(5.0, 1.0, 0.5), 3, 2);
        assert!(hw.eval(&[0.0, 1.0, 2.0]).unwrap() > 0.0);
    }

    #[test]
    fn projection_at_half() {
        let h = 5.78;
        let corr = CorrelationSpec::new(10.0, 1.0).unwrap();
        let c = ctx(GaugeSpec::gaussian(10.0, 1.0), 4, 9);
        let p = bivariate_gauge_projection(&c, h).unwrap();
        let rho = corr.rho(h);
        // direct 2x2 inverse: [[1,-ρ],[-ρ,1]]/(1-ρ²)
        let det = 1.0 - rho * rho;
        let brute = (0.5 + 0.5 - 2.0 * rho * 0.5) / det;
        let v = p.eval(&[0.5, 0.5]).unwrap();
        assert!((v - brute).abs() < 1e-12);
        assert!((v - 1.0 / (1.0 + rho)).abs() < 1e-12);
        assert!((g_gauss_2d(0.5, 0.5, rho) - v).abs() < 1e-12);
        let gg = ctx(GaugeSpec::generalised(10.0, 1.0, 1.0), 4, 9);
        assert!(matches!(
            bivariate_gauge_projection(&gg, h),
            Err(GeomxError::Unsupported(_))
        ));
    }

    #[test]
    fn coincident_projection_not_pd() {
        let c = ctx(GaugeSpec::gaussian(10.0, 1.0), 3, 9);
        assert!(matches!(
            bivariate_gauge_projection(&c, 0.0),
            Err(GeomxError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn score_terms_closed_form_d2() {
        let c = identity_ctx(GaugeSpec::generalised(1.0, 1.0, 1.0), 2);
        let (g, _) = gauge_score_terms(&c, &[0.0]).unwrap();
        assert!(g[0].abs() < 1e-14);
        let v1: f64 = 0.4;
        let (g, _) = gauge_score_terms(&c, &[v1]).unwrap();
        let e = (2.0 * v1).exp();
        assert!((g[0] - (-2.0 * e / (e + 1.0) + 1.0)).abs() < 1e-13);
    }

    fn log_p(c: &GaugeContext, v: &[f64]) -> f64 {
        let d = v.len() + 1;
        let mut x: Vec<f64> = v.iter().map(|t| t.exp()).collect();
        x.push(1.0);
        -(d as f64) * c.eval(&x).unwrap().ln() + v.iter().sum::<f64>()
    }

    #[test]
    fn score_terms_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..50 {
            let d = [3, 5, 10][trial % 3];
            let spec = GaugeSpec::generalised(
                rng.random_range(1.0..30.0),
                rng.random_range(0.3..2.0),
                rng.random_range(0.5..3.0),
            );
            let c = ctx(spec, d, trial as u64);
            let v: Vec<f64> = (0..d - 1).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (g, hd) = gauge_score_terms(&c, &v).unwrap();
            let h = 1e-5;
            for j in 0..d - 1 {
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[j] += h;
                vm[j] -= h;
                let fd = (log_p(&c, &vp) - log_p(&c, &vm)) / (2.0 * h);
                assert!((g[j] - fd).abs() < 1e-5 * (1.0 + g[j].abs()), "grad {j}: {} vs {fd}", g[j]);
                let (gp, _) = gauge_score_terms(&c, &vp).unwrap();
                let (gm, _) = gauge_score_terms(&c, &vm).unwrap();
                let fd2 = (gp[j] - gm[j]) / (2.0 * h);
                assert!((hd[j] - fd2).abs() < 1e-5 * (1.0 + hd[j].abs()), "hess {j}: {} vs {fd2}", hd[j]);
            }
        }
    }

    #[test]
    fn pattern_cache_evicts_least_recent() {
        let dom = SpatialDomain::new(random_sites(5, 3), Metric::Euclidean).unwrap();
        let corr = CorrelationSpec::new(5.0, 1.0).unwrap();
        let mut cache = PatternCache::with_capacity(2);
        let a = cache.get(&dom, &corr, &[0, 1]).unwrap();
        cache.get(&dom, &corr, &[0, 2]).unwrap();
        let a2 = cache.get(&dom, &corr, &[0, 1]).unwrap();
        assert!(Arc::ptr_eq(&a, &a2));
        cache.get(&dom, &corr, &[1, 2]).unwrap();
        assert_eq!(cache.len(), 2);
        // [0,1] was touched most recently before the insert, so it survives
        let a3 = cache.get(&dom, &corr, &[0, 1]).unwrap();
        assert!(Arc::ptr_eq(&a, &a3));
    }

    #[test]
    fn unconstrained_round_trip() {
        let s = GaugeSpec::hw_generalised(12.0, 0.8, 1.3, 0.7);
        let back = GaugeSpec::from_unconstrained(Family::HwGG, &s.to_unconstrained());
        assert!((back.corr.lambda - 12.0).abs() < 1e-12);
        assert!((back.corr.kappa - 0.8).abs() < 1e-12);
        assert!((back.nu.unwrap() - 1.3).abs() < 1e-12);
        assert!((back.zeta.unwrap() - 0.7).abs() < 1e-12);
    }

    fn random_x(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random_range(1e-3..10.0)).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn one_homogeneous(seed in 0u64..10_000, di in 0usize..4, t in 0.1f64..10.0, fam in 0usize..5) {
            let d = [2, 5, 10, 20][di];
            let spec = match fam {
                0 => GaugeSpec::gaussian(8.0, 1.0),
                1 => GaugeSpec::laplace(8.0, 1.5),
                2 => GaugeSpec::generalised(8.0, 0.7, 1.4),
                3 => GaugeSpec::hw_gaussian(8.0, 1.0, 0.6),
                _ => GaugeSpec::hw_generalised(8.0, 1.0, 1.2, 2.5),
            };
            let c = ctx(spec, d, seed % 50);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_x(&mut rng, d);
            let tx: Vec<f64> = x.iter().map(|v| v * t).collect();
            let a = c.eval(&tx).unwrap();
            let b = t * c.eval(&x).unwrap();
            prop_assert!(a > 0.0);
            prop_assert!((a - b).abs() <= 1e-8 * b.abs());
        }

        #[test]
        fn family_nesting(seed in 0u64..10_000, d in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_x(&mut rng, d);
            let g = ctx(GaugeSpec::gaussian(6.0, 0.9), d, seed % 30).eval(&x).unwrap();
            let gg2 = ctx(GaugeSpec::generalised(6.0, 0.9, 2.0), d, seed % 30).eval(&x).unwrap();
            let l = ctx(GaugeSpec::laplace(6.0, 0.9), d, seed % 30).eval(&x).unwrap();
            let gg1 = ctx(GaugeSpec::generalised(6.0, 0.9, 1.0), d, seed % 30).eval(&x).unwrap();
            prop_assert!((g - gg2).abs() <= 1e-12 * g);
            prop_assert!((l - gg1).abs() <= 1e-12 * l);
            let hwgg = ctx(GaugeSpec::hw_generalised(6.0, 0.9, 1.3, 0.0), d, seed % 30).eval(&x).unwrap();
            let gg = ctx(GaugeSpec::generalised(6.0, 0.9, 1.3), d, seed % 30).eval(&x).unwrap();
            prop_assert!((hwgg - gg).abs() <= 1e-8 * gg);
        }
    }
}
