//! The fitting pipeline and the replicated simulation study built on it.

use std::collections::BTreeMap;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::{fit_angular, AngularKind, ExceedAngle};
use crate::error::{GeomxError, Result};
use crate::gauge::Family;
use crate::io::{sig3, FamilyResult};
use crate::margins::{decompose, DataMatrix, PolarDataset};
use crate::process::{replicate_rng, simulate, true_chi_u_gaussian, ProcessKind, ProcessSpec};
use crate::radial::{
    build_threshold, exceedances, fit_families, pp_diagnostic, select_model, Exceedance, FitOptions, RadialFit,
    ThresholdModel,
};
use crate::spatial::{CorrelationSpec, SpatialDomain};
use crate::tail::{chi_u_pairs, ChiOptions, TailModel};

/// Everything produced by one pass of threshold → exceedances → radial fits.
#[derive(Debug, Clone)]
pub struct PipelineFit {
    pub polar: PolarDataset,
    pub threshold: ThresholdModel,
    pub exceedances: Vec<Exceedance>,
    pub families: Vec<FamilyResult>,
    pub selected: RadialFit,
}

/// Fits every requested family to data on exponential margins and selects
/// by AIC. When every family fails for the same reason that error is
/// returned instead of a bare "no viable model".
pub fn fit_pipeline(data: &DataMatrix, domain: &SpatialDomain, tau: f64, families: &[Family], seed: u64) -> Result<PipelineFit> {
    let polar = decompose(data);
    let threshold = build_threshold(data, &polar, domain, tau, seed)?;
    let ex = exceedances(&polar, &threshold, domain)?;
    let opts = FitOptions { seed, ..Default::default() };
    let mut results = vec![];
    let mut ok = vec![];
    let mut first_err = None;
    for (family, r) in fit_families(&ex, domain, families, &opts) {
        match r {
            Ok(f) => {
                ok.push(f.clone());
                results.push(FamilyResult { family, fit: Some(f), error: None });
            }
            Err(e) => {
                log::warn!("{family}: {e}");
                results.push(FamilyResult { family, fit: None, error: Some(e.to_string()) });
                first_err.get_or_insert(e);
            }
        }
    }
    let selected = match select_model(&ok) {
        Ok(s) => s,
        Err(e) => return Err(first_err.unwrap_or(e)),
    };
    Ok(PipelineFit {
        polar,
        threshold,
        exceedances: ex,
        families: results,
        selected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub process: ProcessKind,
    pub corr: CorrelationSpec,
    pub delta: f64,
    pub n: usize,
    pub replicates: usize,
    pub tau: f64,
    pub families: Vec<Family>,
    /// χ_u levels; empty skips the angular and χ_u steps.
    pub u: Vec<f64>,
    pub angular: Vec<AngularKind>,
    pub m: usize,
    pub k_max: f64,
    pub seed: u64,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_rate: f64,
}

impl StudyConfig {
    pub fn new(process: ProcessKind, corr: CorrelationSpec, delta: f64) -> Self {
        Self {
            process,
            corr,
            delta,
            n: 5000,
            replicates: 20,
            tau: 0.7,
            families: Family::ALL.to_vec(),
            u: vec![],
            angular: vec![AngularKind::Empirical],
            m: 50_000,
            k_max: 10.0,
            seed: 0,
            max_failure_rate: 0.2,
        }
    }
}

/// Seed of replicate `index` under a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    replicate_rng(master, index).next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiEntry {
    pub angular: AngularKind,
    pub site_l: String,
    pub site_m: String,
    pub distance: f64,
    pub u: f64,
    pub k: f64,
    pub chi_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub selected: Family,
    pub fits: Vec<FamilyResult>,
    pub n_exceed: usize,
    /// Largest |model − empirical| on the P–P plot of the selected fit.
    pub pp_max_diff: f64,
    pub chi: Vec<ChiEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSummary {
    pub angular: AngularKind,
    pub site_l: String,
    pub site_m: String,
    pub distance: f64,
    pub u: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    /// Known value for Gaussian data.
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutput {
    pub replicates: Vec<ReplicateResult>,
    pub failures: Vec<(usize, String)>,
    /// Percentage of successful replicates selecting each family.
    pub selection: BTreeMap<Family, f64>,
    pub chi_summary: Vec<ChiSummary>,
}

fn run_replicate(cfg: &StudyConfig, domain: &SpatialDomain, index: usize) -> Result<ReplicateResult> {
    let seed = derive_seed(cfg.seed, index as u64);
    let spec = ProcessSpec {
        kind: cfg.process,
        corr: cfg.corr,
        delta: cfg.delta,
        seed,
        n: cfg.n,
    };
    let data = simulate(&spec, domain)?;
    let fit = fit_pipeline(&data, domain, cfg.tau, &cfg.families, seed)?;
    let pp = pp_diagnostic(&fit.selected, &fit.exceedances, domain)?;
    let pp_max_diff = pp.iter().map(|(e, m)| (m - e).abs()).fold(0.0, f64::max);

    let mut chi = vec![];
    if !cfg.u.is_empty() {
        let angles: Vec<ExceedAngle> = fit.exceedances.iter().map(ExceedAngle::from).collect();
        let pairs = domain.pairs();
        for &kind in &cfg.angular {
            let model = fit_angular(kind, &angles, domain, seed)?;
            let tm = TailModel {
                domain,
                threshold: &fit.threshold,
                radial: &fit.selected,
                angular: &model,
                exceedances: &fit.exceedances,
                data: &data,
            };
            let opts = ChiOptions { m: cfg.m, k_max: cfg.k_max, seed };
            for r in chi_u_pairs(&tm, &cfg.u, &pairs, &opts)? {
                chi.push(ChiEntry {
                    angular: kind,
                    site_l: r.site_l,
                    site_m: r.site_m,
                    distance: r.distance,
                    u: r.u,
                    k: r.k,
                    chi_hat: r.chi_hat,
                });
            }
        }
    }
    Ok(ReplicateResult {
        index,
        seed,
        selected: fit.selected.spec.family,
        n_exceed: fit.exceedances.len(),
        fits: fit.families,
        pp_max_diff,
        chi,
    })
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Runs the replicated study. Replicates are independent given their
/// derived seeds and are aggregated in index order.
pub fn run_study(cfg: &StudyConfig, domain: &SpatialDomain) -> Result<StudyOutput> {
    if cfg.replicates == 0 {
        return Err(GeomxError::Config("--replicates must be >= 1".into()));
    }
    let outcomes: Vec<Result<ReplicateResult>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|i| run_replicate(cfg, domain, i))
        .collect();
    let mut replicates = vec![];
    let mut failures = vec![];
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => replicates.push(r),
            Err(e) => {
                log::warn!("replicate {i} failed: {e}");
                failures.push((i, e.to_string()));
            }
        }
    }
    let rate = failures.len() as f64 / cfg.replicates as f64;
    if rate > cfg.max_failure_rate {
        let summary: Vec<String> = failures.iter().map(|(i, e)| format!("#{i}: {e}")).collect();
        return Err(GeomxError::NumericalError(format!(
            "{} of {} replicates failed: {}",
            failures.len(),
            cfg.replicates,
            summary.join("; ")
        )));
    }

    let mut selection: BTreeMap<Family, f64> = cfg.families.iter().map(|f| (*f, 0.0)).collect();
    for r in &replicates {
        *selection.entry(r.selected).or_default() += 100.0 / replicates.len() as f64;
    }

    let mut groups: BTreeMap<(AngularKind, String, String, u64), (f64, f64, Vec<f64>)> = BTreeMap::new();
    for r in &replicates {
        for c in &r.chi {
            groups
                .entry((c.angular, c.site_l.clone(), c.site_m.clone(), c.u.to_bits()))
                .or_insert_with(|| (c.distance, c.u, vec![]))
                .2
                .push(c.chi_hat);
        }
    }
    let chi_summary = groups
        .into_iter()
        .map(|((angular, site_l, site_m, _), (distance, u, mut v))| {
            v.sort_by(f64::total_cmp);
            let truth = (cfg.process == ProcessKind::Gaussian).then(|| true_chi_u_gaussian(cfg.corr.rho(distance), u));
            ChiSummary {
                angular,
                site_l,
                site_m,
                distance,
                u,
                median: quantile_sorted(&v, 0.5),
                q05: quantile_sorted(&v, 0.05),
                q95: quantile_sorted(&v, 0.95),
                truth,
            }
        })
        .collect();
    Ok(StudyOutput {
        replicates,
        failures,
        selection,
        chi_summary,
    })
}

pub fn selection_csv(out: &StudyOutput) -> String {
    let mut s = String::from("family,percent\n");
    for (f, p) in &out.selection {
        s += &format!("{},{}\n", f.name(), p);
    }
    s
}

/// Per-replicate χ̂_u values, shaped for boxplots over `u`.
pub fn chi_table_csv(out: &StudyOutput) -> String {
    let mut s = String::from("replicate,angular,site_l,site_m,distance,u,k,chi_hat\n");
    for r in &out.replicates {
        for c in &r.chi {
            s += &format!(
                "{},{},{},{},{},{},{},{}\n",
                r.index,
                angular_name(c.angular),
                c.site_l,
                c.site_m,
                c.distance,
                c.u,
                c.k,
                c.chi_hat
            );
        }
    }
    s
}

pub fn chi_summary_csv(out: &StudyOutput) -> String {
    let mut s = String::from("angular,site_l,site_m,distance,u,median,q05,q95,truth\n");
    for c in &out.chi_summary {
        s += &format!(
            "{},{},{},{},{},{},{},{},{}\n",
            angular_name(c.angular),
            c.site_l,
            c.site_m,
            c.distance,
            c.u,
            c.median,
            c.q05,
            c.q95,
            c.truth.map_or("NA".into(), |t| t.to_string())
        );
    }
    s
}

pub fn replicates_csv(out: &StudyOutput) -> String {
    let mut s = String::from("replicate,seed,selected,n_exceed,pp_max_diff\n");
    for r in &out.replicates {
        s += &format!("{},{},{},{},{}\n", r.index, r.seed, r.selected.name(), r.n_exceed, r.pp_max_diff);
    }
    s
}

fn angular_name(k: AngularKind) -> &'static str {
    match k {
        AngularKind::Empirical => "empirical",
        AngularKind::ProcessBased => "process",
        AngularKind::GaugeBased => "gauge",
    }
}

/// Selection table: share of replicates per family, three significant
/// figures.
pub fn render_selection(out: &StudyOutput) -> String {
    let mut s = String::new();
    for (f, p) in &out.selection {
        s += &format!("{:<6} {:>5}%\n", f.name(), sig3(*p));
    }
    if !out.failures.is_empty() {
        s += &format!("failed replicates: {}\n", out.failures.len());
    }
    s
}
