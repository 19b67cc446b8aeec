use geomx::angular::*;
use geomx::gauge::GaugeSpec;
use geomx::margins::decompose;
use geomx::process::{simulate, ProcessSpec};
use geomx::spatial::{demo_sites_d5, Metric, SpatialDomain};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

#[test]
fn process_model_recovers_field_correlation() {
    let dom = SpatialDomain::new(demo_sites_d5(), Metric::Euclidean).unwrap();
    let fits: Vec<_> = (0..10u64)
        .map(|seed| {
            let data = simulate(&ProcessSpec::gaussian(10.0, 1.0, 1500, 100 + seed), &dom).unwrap();
            let angles: Vec<ExceedAngle> = decompose(&data)
                .samples
                .into_iter()
                .map(|s| ExceedAngle { w: s.w, pattern: s.pattern })
                .collect();
            fit_process_angular(&angles, &dom, seed).unwrap()
        })
        .collect();
    let lam = median(fits.iter().map(|c| c.lambda).collect());
    let kap = median(fits.iter().map(|c| c.kappa).collect());
    assert!((lam / 10.0 - 1.0).abs() < 0.25, "lambda {lam}");
    assert!((kap - 1.0).abs() < 0.15, "kappa {kap}");
}

#[test]
fn score_matching_recovers_nu_through_the_sampler() {
    let dom = SpatialDomain::new(demo_sites_d5()[..3].to_vec(), Metric::Euclidean).unwrap();
    let model = AngularModel::GaugeBased {
        spec: GaugeSpec::generalised(10.0, 1.0, 2.0),
    };
    let nus: Vec<f64> = (0..10u64)
        .map(|seed| {
            let draws = sample_angles(&model, 3000, None, &dom, seed).unwrap();
            fit_gauge_angular(&draws, &dom, seed).unwrap().inner_nu()
        })
        .collect();
    let nu = median(nus.clone());
    assert!((nu - 2.0).abs() < 0.3, "nu {nu} from {nus:?}");
}
