use geomx::gauge::g_gauss_2d;
use geomx::process::replicate_rng;
use geomx::radial::fit_composite_gaussian;
use geomx::radial::threshold::{composite_loglik, PairExceedances};
use geomx::spatial::{demo_sites_d5, CorrelationSpec, Metric, SpatialDomain};
use geomx::truncgamma;
use rand::Rng;

/// Pairwise exceedances drawn exactly from the composite model: uniform
/// angles, threshold `r0 = c/g(w)`, radii truncated Gamma(2α, g(w)).
fn model_pairs(dom: &SpatialDomain, corr: CorrelationSpec, alpha: f64, per_pair: usize, seed: u64) -> Vec<PairExceedances> {
    dom.pairs()
        .into_iter()
        .enumerate()
        .map(|(p, (j, k))| {
            let h = dom.distance(j, k);
            let rho = corr.rho(h);
            let mut rng = replicate_rng(seed, p as u64);
            let mut ex = PairExceedances { j, k, h, r: vec![], w1: vec![], r0: vec![] };
            for _ in 0..per_pair {
                let w: f64 = rng.random_range(0.02..0.98);
                let g = g_gauss_2d(w, 1.0 - w, rho);
                let r0 = 3.0 / g;
                ex.r.push(truncgamma::sample(2.0 * alpha, g, r0, &mut rng).unwrap());
                ex.w1.push(w);
                ex.r0.push(r0);
            }
            ex
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

#[test]
fn pairwise_parameters_recovered_from_model_data() {
    let dom = SpatialDomain::new(demo_sites_d5(), Metric::Euclidean).unwrap();
    let truth = CorrelationSpec { lambda: 10.0, kappa: 1.0 };
    let fits: Vec<_> = (0..20)
        .map(|s| fit_composite_gaussian(&model_pairs(&dom, truth, 1.0, 300, s), dom.distance_summary(), 5, s).unwrap())
        .collect();
    let lam = median(fits.iter().map(|f| f.corr.lambda).collect());
    let kap = median(fits.iter().map(|f| f.corr.kappa).collect());
    let alpha = median(fits.iter().map(|f| f.alpha).collect());
    assert!((lam - 10.0).abs() < 1.5, "lambda {lam}");
    assert!((kap - 1.0).abs() < 0.1, "kappa {kap}");
    assert!((alpha - 1.0).abs() < 0.1, "alpha {alpha}");
}

/// The pairwise gauge has no free scale, so doubling radii and thresholds
/// is not a symmetry of the fit: the shape takes up most of it and the
/// correlation parameters move a little.
#[test]
fn doubling_radii_is_mostly_absorbed_by_the_shape() {
    let dom = SpatialDomain::new(demo_sites_d5(), Metric::Euclidean).unwrap();
    let truth = CorrelationSpec { lambda: 10.0, kappa: 1.0 };
    let pairs = model_pairs(&dom, truth, 1.0, 300, 1);
    let doubled: Vec<PairExceedances> = pairs
        .iter()
        .map(|p| PairExceedances {
            r: p.r.iter().map(|v| 2.0 * v).collect(),
            r0: p.r0.iter().map(|v| 2.0 * v).collect(),
            ..p.clone()
        })
        .collect();
    let a = fit_composite_gaussian(&pairs, dom.distance_summary(), 5, 1).unwrap();
    let b = fit_composite_gaussian(&doubled, dom.distance_summary(), 5, 1).unwrap();
    assert!(b.alpha > 2.0 * a.alpha, "{a:?} {b:?}");
    assert!((b.corr.lambda / a.corr.lambda - 1.0).abs() < 0.1, "{a:?} {b:?}");
    assert!((b.corr.kappa - a.corr.kappa).abs() < 0.15, "{a:?} {b:?}");
    assert!(composite_loglik(&doubled, &b.corr, b.alpha) >= composite_loglik(&doubled, &a.corr, a.alpha));
}
