//! The `geomx` command line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::angular::{fit_angular, sample_angles, AngularKind, ExceedAngle, ScoreData};
use crate::config::*;
use crate::error::{GeomxError, Result};
use crate::io::{self, AngularReport, FitReport, Provenance};
use crate::margins::{decompose, to_exponential, DataMatrix, MarginMethod};
use crate::process::{simulate, ProcessKind, ProcessSpec};
use crate::radial::{exceedances, pp_diagnostic};
use crate::spatial::{demo_sites_d5, random_sites, CorrelationSpec, Metric, Site, SpatialDomain};
use crate::study::{self, fit_pipeline, StudyConfig};
use crate::tail::{chi_u_pairs, sample_extremes, ChiOptions, TailModel, DEFAULT_DRAWS};

#[derive(Debug, Parser)]
#[command(name = "geomx", version, about = "Geometric modelling of spatial extremes")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Record wall time in outputs (makes reruns differ)
    #[arg(long, global = true)]
    pub wall_time: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a spatial field on exponential margins
    Simulate(SimulateOpts),
    /// Calibrate the threshold and fit radial models
    Fit(FitOpts),
    /// Fit an angular model to exceedance angles
    Angular(AngularOpts),
    /// Simulate extreme events X | R' > k
    Sample(SampleOpts),
    /// Estimate pairwise chi_u
    Chi(ChiOpts),
    /// Replicated simulation study
    Study(StudyOpts),
    /// P-P diagnostic of a radial fit
    Diagnose(DiagnoseOpts),
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let mut shown = vec!["geomx".to_string()];
    shown.extend(args.iter().skip(1).cloned());
    match execute(cli, shown.join(" ")) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("GEOMX_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| GeomxError::Config(format!("GEOMX_THREADS must be a positive integer, got {v:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

struct Ctx {
    invocation: String,
    wall_time: bool,
    start: Instant,
    overridden: Vec<String>,
}

impl Ctx {
    fn provenance(&self, seed: Option<u64>) -> Provenance {
        let mut p = Provenance::new(&self.invocation, seed);
        p.overridden = self.overridden.clone();
        if self.wall_time {
            p.wall_time = Some(self.start.elapsed().as_secs_f64());
        }
        p
    }
}

fn execute(cli: Cli, invocation: String) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut ctx = Ctx {
        invocation,
        wall_time: cli.wall_time,
        start: Instant::now(),
        overridden: vec![],
    };
    macro_rules! merged {
        ($opts:expr, $section:ident) => {{
            let (o, over) = $opts.merge(file.$section.clone());
            ctx.overridden = over;
            o
        }};
    }
    match cli.command {
        Command::Simulate(o) => cmd_simulate(merged!(o, simulate), &ctx),
        Command::Fit(o) => cmd_fit(merged!(o, fit), &ctx),
        Command::Angular(o) => cmd_angular(merged!(o, angular), &ctx),
        Command::Sample(o) => cmd_sample(merged!(o, sample), &ctx),
        Command::Chi(o) => cmd_chi(merged!(o, chi), &ctx),
        Command::Study(o) => cmd_study(merged!(o, study), &ctx),
        Command::Diagnose(o) => cmd_diagnose(merged!(o, diagnose), &ctx),
    }
}

fn metric(s: &Option<String>) -> Result<Metric> {
    s.as_deref()
        .map_or(Ok(Metric::Euclidean), |m| m.parse().map_err(|_| GeomxError::Config(format!("--metric: unknown metric '{m}'"))))
}

fn domain_from(path: &Path, m: &Option<String>) -> Result<SpatialDomain> {
    SpatialDomain::new(io::read_sites(path)?, metric(m)?)
}

/// Reorders data columns to the site order.
fn align(data: DataMatrix, domain: &SpatialDomain) -> Result<DataMatrix> {
    let ids: Vec<String> = domain.sites.iter().map(|s| s.id.clone()).collect();
    if data.site_ids == ids {
        return Ok(data);
    }
    let idx = ids
        .iter()
        .map(|id| {
            data.site_ids
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| GeomxError::Config(format!("site '{id}' has no data column")))
        })
        .collect::<Result<Vec<_>>>()?;
    if data.d() != ids.len() {
        return Err(GeomxError::Config(format!(
            "data has {} columns but there are {} sites",
            data.d(),
            ids.len()
        )));
    }
    let rows = data.rows.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect();
    DataMatrix::new(ids, rows)
}

fn process_kind(s: &str) -> Result<ProcessKind> {
    s.parse()
}

fn margins(s: &Option<String>) -> Result<MarginMethod> {
    s.as_deref().map_or(Ok(MarginMethod::Rank), |m| {
        m.parse().map_err(|_| GeomxError::Config(format!("--margins: unknown method '{m}'")))
    })
}

fn generated_sites(sites: &Option<PathBuf>, d: Option<usize>, seed: u64) -> Result<Vec<Site>> {
    match (sites, d) {
        (Some(p), _) => io::read_sites(p),
        (None, None) | (None, Some(5)) => Ok(demo_sites_d5()),
        (None, Some(d)) => Ok(random_sites(check_count("d", d, 2)?, seed)),
    }
}

fn cmd_simulate(o: SimulateOpts, ctx: &Ctx) -> Result<()> {
    require(
        "simulate",
        &[
            ("kind", o.kind.is_some()),
            ("lambda", o.lambda.is_some()),
            ("kappa", o.kappa.is_some()),
            ("n", o.n.is_some()),
            ("out", o.out.is_some()),
        ],
    )?;
    let kind = process_kind(o.kind.as_deref().unwrap())?;
    let lambda = check_positive("lambda", o.lambda.unwrap())?;
    let kappa = check_kappa(o.kappa.unwrap())?;
    let n = check_count("n", o.n.unwrap(), 1)?;
    let seed = o.seed.unwrap_or(0);
    let delta = match kind {
        ProcessKind::Hw => {
            require("simulate", &[("delta", o.delta.is_some())])?;
            check_delta(o.delta.unwrap())?
        }
        _ => 0.0,
    };
    let sites = generated_sites(&o.sites, o.d, seed)?;
    let domain = SpatialDomain::new(sites, metric(&o.metric)?)?;
    let spec = ProcessSpec {
        kind,
        corr: CorrelationSpec { lambda, kappa },
        delta,
        seed,
        n,
    };
    let data = simulate(&spec, &domain)?;
    let prov = ctx.provenance(Some(seed));
    io::write_data(o.out.as_ref().unwrap(), &data, &prov)?;
    if let Some(p) = &o.sites_out {
        io::write_sites(p, &domain.sites, &prov)?;
    }
    Ok(())
}

fn cmd_fit(o: FitOpts, ctx: &Ctx) -> Result<()> {
    require(
        "fit",
        &[("data", o.data.is_some()), ("sites", o.sites.is_some()), ("out", o.out.is_some())],
    )?;
    let tau = check_open_unit("tau", o.tau.unwrap_or(0.7))?;
    let families = parse_families(o.families.as_deref().unwrap_or("G,L,GG,HWG,HWGG"))?;
    let method = margins(&o.margins)?;
    let seed = o.seed.unwrap_or(0);
    let met = metric(&o.metric)?;
    let domain = SpatialDomain::new(io::read_sites(o.sites.as_ref().unwrap())?, met)?;
    let raw = align(io::read_data(o.data.as_ref().unwrap())?, &domain)?;
    let data = to_exponential(&raw, method)?;
    let fit = fit_pipeline(&data, &domain, tau, &families, seed)?;
    let report = FitReport {
        provenance: ctx.provenance(Some(seed)),
        metric: met,
        margins: method,
        n: data.n(),
        dropped: fit.polar.dropped,
        n_exceed: fit.exceedances.len(),
        threshold: fit.threshold.clone(),
        families: fit.families.clone(),
        selected: fit.selected.spec.family,
    };
    io::write_json(o.out.as_ref().unwrap(), &report)?;
    if let Some(p) = &o.exceed_out {
        let angles: Vec<ExceedAngle> = fit.exceedances.iter().map(ExceedAngle::from).collect();
        io::write_angles(p, &angles, &report.provenance)?;
    }
    print!("{}", io::render_report(&report));
    Ok(())
}

fn cmd_angular(o: AngularOpts, ctx: &Ctx) -> Result<()> {
    require(
        "angular",
        &[
            ("fit", o.fit.is_some()),
            ("exceed", o.exceed.is_some()),
            ("sites", o.sites.is_some()),
            ("out", o.out.is_some()),
        ],
    )?;
    let kind: AngularKind = o.fit.as_deref().unwrap().parse()?;
    let seed = o.seed.unwrap_or(0);
    let domain = domain_from(o.sites.as_ref().unwrap(), &o.metric)?;
    let angles = io::read_angles(o.exceed.as_ref().unwrap())?;
    let model = fit_angular(kind, &angles, &domain, seed)?;
    let dropped = if kind == AngularKind::GaugeBased {
        ScoreData::new(&angles)?.dropped
    } else {
        0
    };
    let report = AngularReport {
        provenance: ctx.provenance(Some(seed)),
        model,
        dropped,
    };
    io::write_json(o.out.as_ref().unwrap(), &report)?;
    if let Some(p) = &o.samples_out {
        let m = check_count("m", o.m.unwrap_or(10_000), 1)?;
        let draws = sample_angles(&report.model, m, None, &domain, seed)?;
        io::write_angles(p, &draws, &report.provenance)?;
    }
    Ok(())
}

fn cmd_sample(o: SampleOpts, ctx: &Ctx) -> Result<()> {
    require(
        "sample",
        &[
            ("fit", o.fit.is_some()),
            ("angular", o.angular.is_some()),
            ("sites", o.sites.is_some()),
            ("out", o.out.is_some()),
        ],
    )?;
    let k = check_k("k", o.k.unwrap_or(1.0))?;
    let m = check_count("m", o.m.unwrap_or(DEFAULT_DRAWS), 1)?;
    let seed = o.seed.unwrap_or(0);
    let report: FitReport = io::read_json(o.fit.as_ref().unwrap())?;
    let ang: AngularReport = io::read_json(o.angular.as_ref().unwrap())?;
    let domain = SpatialDomain::new(io::read_sites(o.sites.as_ref().unwrap())?, report.metric)?;
    let set = sample_extremes(report.selected_fit()?, &ang.model, &report.threshold, &domain, k, m, seed)?;
    let ids: Vec<String> = domain.sites.iter().map(|s| s.id.clone()).collect();
    io::write_string(o.out.as_ref().unwrap(), &io::samples_csv(&set, &ids, &ctx.provenance(Some(seed))))
}

fn cmd_chi(o: ChiOpts, ctx: &Ctx) -> Result<()> {
    require(
        "chi",
        &[
            ("fit", o.fit.is_some()),
            ("angular", o.angular.is_some()),
            ("data", o.data.is_some()),
            ("sites", o.sites.is_some()),
            ("out", o.out.is_some()),
        ],
    )?;
    let u = parse_u_list(o.u.as_deref().unwrap_or("0.9,0.95,0.98,0.999"))?;
    let m = check_count("m", o.m.unwrap_or(DEFAULT_DRAWS), 1)?;
    let k_max = check_k("k-max", o.k_max.unwrap_or(10.0))?;
    let seed = o.seed.unwrap_or(0);
    let report: FitReport = io::read_json(o.fit.as_ref().unwrap())?;
    let ang: AngularReport = io::read_json(o.angular.as_ref().unwrap())?;
    let domain = SpatialDomain::new(io::read_sites(o.sites.as_ref().unwrap())?, report.metric)?;
    let ids: Vec<String> = domain.sites.iter().map(|s| s.id.clone()).collect();
    let pairs = parse_pairs(o.pairs.as_deref().unwrap_or("all"), &ids)?;
    let raw = align(io::read_data(o.data.as_ref().unwrap())?, &domain)?;
    let data = to_exponential(&raw, report.margins)?;
    let polar = decompose(&data);
    let ex = exceedances(&polar, &report.threshold, &domain)?;
    let tm = TailModel {
        domain: &domain,
        threshold: &report.threshold,
        radial: report.selected_fit()?,
        angular: &ang.model,
        exceedances: &ex,
        data: &data,
    };
    let rows = chi_u_pairs(&tm, &u, &pairs, &ChiOptions { m, k_max, seed })?;
    io::write_string(o.out.as_ref().unwrap(), &io::chi_csv(&rows, &ctx.provenance(Some(seed))))
}

fn cmd_study(o: StudyOpts, ctx: &Ctx) -> Result<()> {
    require(
        "study",
        &[
            ("kind", o.kind.is_some()),
            ("lambda", o.lambda.is_some()),
            ("kappa", o.kappa.is_some()),
            ("out", o.out.is_some()),
        ],
    )?;
    let kind = process_kind(o.kind.as_deref().unwrap())?;
    let corr = CorrelationSpec {
        lambda: check_positive("lambda", o.lambda.unwrap())?,
        kappa: check_kappa(o.kappa.unwrap())?,
    };
    let delta = match kind {
        ProcessKind::Hw => {
            require("study", &[("delta", o.delta.is_some())])?;
            check_delta(o.delta.unwrap())?
        }
        _ => 0.0,
    };
    let seed = o.seed.unwrap_or(0);
    let mut cfg = StudyConfig::new(kind, corr, delta);
    cfg.n = check_count("n", o.n.unwrap_or(5000), 1)?;
    cfg.replicates = check_count("replicates", o.replicates.unwrap_or(20), 1)?;
    cfg.tau = check_open_unit("tau", o.tau.unwrap_or(0.7))?;
    cfg.families = parse_families(o.families.as_deref().unwrap_or("G,L,GG,HWG,HWGG"))?;
    cfg.u = parse_u_list(o.u.as_deref().unwrap_or("0.9,0.95,0.98,0.999"))?;
    cfg.angular = parse_angular_kinds(o.angular.as_deref().unwrap_or("empirical"))?;
    cfg.m = check_count("m", o.m.unwrap_or(DEFAULT_DRAWS), 1)?;
    cfg.k_max = check_k("k-max", o.k_max.unwrap_or(10.0))?;
    cfg.seed = seed;
    let sites = generated_sites(&o.sites, o.d, seed)?;
    let domain = SpatialDomain::new(sites, metric(&o.metric)?)?;

    let out = study::run_study(&cfg, &domain)?;
    let dir = o.out.as_ref().unwrap();
    let prov = ctx.provenance(Some(seed));
    let head = prov.csv_header();
    io::write_string(&dir.join("selection.csv"), &(head.clone() + &study::selection_csv(&out)))?;
    io::write_string(&dir.join("replicates.csv"), &(head.clone() + &study::replicates_csv(&out)))?;
    if !cfg.u.is_empty() {
        io::write_string(&dir.join("chi.csv"), &(head.clone() + &study::chi_table_csv(&out)))?;
        io::write_string(&dir.join("chi_summary.csv"), &(head + &study::chi_summary_csv(&out)))?;
    }
    io::write_json(&dir.join("sites.json"), &domain.sites)?;
    print!("{}", study::render_selection(&out));
    Ok(())
}

fn cmd_diagnose(o: DiagnoseOpts, ctx: &Ctx) -> Result<()> {
    require(
        "diagnose",
        &[("fit", o.fit.is_some()), ("data", o.data.is_some()), ("sites", o.sites.is_some())],
    )?;
    let report: FitReport = io::read_json(o.fit.as_ref().unwrap())?;
    let domain = SpatialDomain::new(io::read_sites(o.sites.as_ref().unwrap())?, report.metric)?;
    let raw = align(io::read_data(o.data.as_ref().unwrap())?, &domain)?;
    let data = to_exponential(&raw, report.margins)?;
    let ex = exceedances(&decompose(&data), &report.threshold, &domain)?;
    let pp = pp_diagnostic(report.selected_fit()?, &ex, &domain)?;
    let max_diff = pp.iter().map(|(e, m)| (m - e).abs()).fold(0.0, f64::max);
    let band = 1.36 / (pp.len() as f64).sqrt();
    println!(
        "{}: {} exceedances, max |model - empirical| = {:.4}, 95% KS band = {:.4}",
        report.selected.name(),
        pp.len(),
        max_diff,
        band
    );
    if let Some(p) = &o.out {
        let mut s = ctx.provenance(report.provenance.seed).csv_header();
        s += "empirical,model,difference\n";
        for (e, m) in &pp {
            s += &format!("{e},{m},{}\n", m - e);
        }
        io::write_string(p, &s)?;
    }
    Ok(())
}
