//! Batch command-line front end.
//!
//! Every command reads one TOML experiment file (see [`crate::config`]);
//! `--seed` and `--threads` override the file. Data goes to stdout unless
//! `--out` is given: a file for `map-info`, `spectrum`, `boxdim` and
//! `oscillation`, a directory for `irregular`. Diagnostics go to stderr.
//!
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 invalid input,
//! 3 optimizer failure (the partial CSV is still written), 4 harvest or
//! budget failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{task_seed, ExperimentConfig, IrregularSection};
use crate::dimension::{
    attractor_sample, box_counting, default_scales, geometric_scales, DimensionEstimate,
};
use crate::error::{invalid, Error, Result};
use crate::interval_maps::ParabolicHull;
use crate::moran::{
    build_schedule, write_points_csv, write_profiles_csv, ConcatenatedMeasure, HarvestOptions,
};
use crate::spectrum::{
    hyperbolic_dimension, moran_root, SpectrumConfig, SpectrumPoint, SpectrumSolver,
};

/// Seed offsets for [`task_seed`].
const TASK_SPECTRUM: u64 = 0;
const TASK_HARVEST: u64 = 1;
const TASK_LOCAL: u64 = 2;
const TASK_CLOUD: u64 = 3;
const TASK_PROFILE: u64 = 4;

/// Words listed per family in `schedule.json`.
const SUMMARY_WORDS: usize = 8;

#[derive(Debug, Parser)]
#[command(
    name = "multifractal",
    version,
    about = "Birkhoff spectra and irregular sets of expanding interval maps"
)]
pub struct Cli {
    /// Experiment file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output file (directory for `irregular`); stdout when absent.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Branch table, fixed points, parabolic set and hull.
    MapInfo,
    /// Dimension spectrum over the configured α grid.
    Spectrum,
    /// Moran construction of an irregular set, with diagnostics.
    Irregular,
    /// Box-counting dimension of the attractor.
    Boxdim,
    /// Boundary-average profiles of generated points.
    Oscillation,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::Unsupported(_) => 2,
        Error::Optimizer(_) | Error::NonConvergence { .. } => 3,
        Error::Harvest { .. } | Error::Budget(_) => 4,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Runs a parsed command; `Ok` carries a non-error exit code (0, or 3 for a
/// spectrum with failed grid points).
pub fn run(cli: &Cli) -> Result<i32> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| invalid("--config is required"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let threads = cli.threads.or(cfg.threads).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let out = cli.out.as_deref();
    pool.install(|| match cli.command {
        Command::MapInfo => map_info(&cfg, out).map(|_| 0),
        Command::Spectrum => spectrum(&cfg, out),
        Command::Irregular => irregular(&cfg, out).map(|_| 0),
        Command::Boxdim => boxdim(&cfg, out).map(|_| 0),
        Command::Oscillation => oscillation(&cfg, out).map(|_| 0),
    })
}

/// Writes to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            write(&mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Serialize)]
struct BranchInfo {
    index: usize,
    /// Digit of the branch in words.
    symbol: usize,
    domain: [f64; 2],
    increasing: bool,
    fixed_point: f64,
    parabolic: bool,
    /// `[min, max]` of `ln|T'|` on the domain; `null` where unbounded.
    log_derivative: [Option<f64>; 2],
}

#[derive(Debug, Serialize)]
struct MapInfo {
    map: String,
    affine: bool,
    branches: Vec<BranchInfo>,
    fixed_points: Vec<f64>,
    parabolic_set: Vec<usize>,
    sup_log_derivative: Option<f64>,
    caveat: Option<String>,
    parabolic_hull: Option<ParabolicHull>,
}

fn map_info_report(cfg: &ExperimentConfig) -> Result<MapInfo> {
    let map = cfg.build_map()?;
    let branches = (0..map.branch_count())
        .map(|i| {
            let d = map.domain(i);
            let (lo, hi) = map.log_derivative_range(i, d.lo, d.hi);
            BranchInfo {
                index: i,
                symbol: i + 1,
                domain: [d.lo, d.hi],
                increasing: map.is_increasing(i),
                fixed_point: map.fixed_points()[i],
                parabolic: map.parabolic_set().contains(&i),
                log_derivative: [finite(lo), finite(hi)],
            }
        })
        .collect();
    let parabolic_hull = match cfg.build_potential(&map)? {
        Some(pot) => Some(
            SpectrumSolver::new(&map, &pot, SpectrumConfig::default())?
                .parabolic_hull()
                .clone(),
        ),
        None => None,
    };
    Ok(MapInfo {
        map: map.name(),
        affine: map.is_affine(),
        branches,
        fixed_points: map.fixed_points().to_vec(),
        parabolic_set: map.parabolic_set().to_vec(),
        sup_log_derivative: finite(map.sup_log_derivative()),
        caveat: map.caveat().map(str::to_owned),
        parabolic_hull,
    })
}

fn map_info(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let report = map_info_report(cfg)?;
    if let Some(c) = &report.caveat {
        eprintln!("warning: {c}");
    }
    emit(out, |w| write_json(w, &report))
}

fn spectrum(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<i32> {
    let section = cfg.spectrum.clone().unwrap_or_default();
    let mut solver_cfg = section.solver.clone();
    solver_cfg.seed = task_seed(cfg.require_seed()?, TASK_SPECTRUM, 0);
    let map = cfg.build_map()?;
    if section.sup {
        let point = match cfg.build_potential(&map)? {
            Some(pot) => SpectrumSolver::new(&map, &pot, solver_cfg)?.hyperbolic_dimension()?,
            None => hyperbolic_dimension(&map, solver_cfg)?,
        };
        return emit(out, |w| write_sup_csv(w, &point)).map(|_| 0);
    }
    let alphas = section.alpha_values();
    if alphas.is_empty() {
        return Err(invalid("the α grid is empty"));
    }
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(invalid("α values must be finite"));
    }
    let pot = cfg.require_potential(&map)?;
    let curve = SpectrumSolver::new(&map, &pot, solver_cfg)?.spectrum_curve(&alphas)?;
    emit(out, |w| curve.write_csv(w))?;
    for a in &curve.concavity_flags {
        eprintln!("warning: concavity violated near α = {a}");
    }
    let failed: Vec<_> = curve
        .points
        .iter()
        .filter_map(|p| p.result.as_ref().err().map(|e| (p.alpha, e)))
        .collect();
    for (a, e) in &failed {
        eprintln!("error: α = {a}: {e}");
    }
    Ok(if failed.is_empty() { 0 } else { 3 })
}

fn write_sup_csv(out: &mut dyn Write, p: &SpectrumPoint) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dim", "witness", "h", "lambda"])?;
    let witness = p
        .witness_kernel
        .iter()
        .map(|x| format!("{x:.9}"))
        .collect::<Vec<_>>()
        .join(" ");
    w.write_record([
        format!("{:.9}", p.dim_value),
        witness,
        format!("{:.9}", p.h),
        format!("{:.9}", p.lambda),
    ])?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct BoxdimReport {
    map: String,
    depth: usize,
    points: usize,
    /// Root of the Moran equation, for affine maps.
    similarity_dimension: Option<f64>,
    estimate: DimensionEstimate,
}

fn boxdim(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let section = cfg.boxdim.clone().unwrap_or_default();
    if section.depth == 0 {
        return Err(invalid("depth must be positive"));
    }
    let map = cfg.build_map()?;
    let points = attractor_sample(&map, section.depth, section.budget)?;
    let scales = match section.scales {
        Some(s) => geometric_scales(s.start, s.ratio, s.count),
        None => default_scales(),
    };
    let estimate = box_counting(&points, &scales)?;
    let report = BoxdimReport {
        map: map.name(),
        depth: section.depth,
        points: points.len(),
        similarity_dimension: if map.is_affine() {
            Some(moran_root(&map)?)
        } else {
            None
        },
        estimate,
    };
    emit(out, |w| write_json(w, &report))
}

fn construct(
    cfg: &ExperimentConfig,
    irr: &IrregularSection,
    seed: u64,
) -> Result<ConcatenatedMeasure> {
    let map = cfg.build_map()?;
    let pot = cfg.require_potential(&map)?;
    let mu = irr.mu.build()?;
    let nu = irr.nu.build()?;
    let schedule = build_schedule(irr.stages, irr.base_length, irr.growth, irr.eps0, irr.delta)?;
    let options = HarvestOptions {
        seed: task_seed(seed, TASK_HARVEST, 0),
        budget: irr.harvest_budget,
    };
    let cm = ConcatenatedMeasure::build(&map, &pot, &mu, &nu, schedule, options)?;
    eprintln!(
        "harvested {} stages, total length {}",
        cm.schedule().stages(),
        cm.schedule().total_length()
    );
    Ok(cm)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// The warning for phases whose targets the construction cannot separate.
fn irregularity_warning(cm: &ConcatenatedMeasure) -> Option<String> {
    let [mu, nu] = cm.phases();
    let gap = distance(&mu.phi_star, &nu.phi_star);
    (gap <= 2.0 * cm.schedule().final_epsilon()).then(|| {
        format!("not irregular: the phase targets differ by {gap:.3e}, within the final tolerance")
    })
}

fn profiles(
    cm: &ConcatenatedMeasure,
    seed: u64,
    count: usize,
) -> Result<Vec<crate::moran::OscillationProfile>> {
    let total = cm.schedule().total_length();
    (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let w = cm.generate_point(task_seed(seed, TASK_PROFILE, k), total)?;
            cm.oscillation_profile(w.symbols())
        })
        .collect()
}

fn oscillation(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let irr = cfg.require_irregular()?;
    let cm = construct(cfg, irr, seed)?;
    if let Some(w) = irregularity_warning(&cm) {
        eprintln!("warning: {w}");
    }
    let profiles = profiles(&cm, seed, irr.profiles)?;
    emit(out, |w| write_profiles_csv(w, &profiles))
}

#[derive(Debug, Serialize)]
struct LocalSummary {
    points: usize,
    min: f64,
    median: f64,
    max: f64,
    /// Fraction of slopes within 0.05 of the dimension floor (capped at 1).
    at_floor: f64,
    max_cylinders: usize,
}

#[derive(Debug, Serialize)]
struct IrregularReport {
    seed: u64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    irregular: bool,
    dimension_floor: f64,
    total_length: usize,
    boundaries: Vec<usize>,
    oscillation_min: f64,
    oscillation_required: f64,
    within_budget: bool,
    local_dimension: Option<LocalSummary>,
    box_dimension: f64,
    box_stderr: f64,
    warnings: Vec<String>,
}

#[derive(Debug, Serialize)]
struct LocalCsvRow {
    point: usize,
    seed: u64,
    slope: f64,
    stderr: f64,
    r_squared: f64,
    max_cylinders: usize,
}

fn irregular(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let irr = cfg.require_irregular()?;
    if irr.cloud_depth == 0 {
        return Err(invalid("cloud_depth must be positive"));
    }
    let cm = construct(cfg, irr, seed)?;
    let mut warnings: Vec<String> = irregularity_warning(&cm).into_iter().collect();
    let total = cm.schedule().total_length();
    let floor = cm.dimension_floor();

    let profiles = profiles(&cm, seed, irr.profiles)?;
    let oscillation_min = profiles
        .iter()
        .map(|p| p.oscillation())
        .fold(f64::INFINITY, f64::min);
    let oscillation_required = profiles
        .first()
        .map_or(0.0, |p| p.required_oscillation(0.05));
    let within_budget = profiles.iter().all(|p| p.within_budget());

    let local: Result<Vec<LocalCsvRow>> = (0..irr.points)
        .into_par_iter()
        .map(|k| {
            let s = task_seed(seed, TASK_LOCAL, k as u64);
            let w = cm.generate_point(s, total)?;
            let est = cm.local_dimension(w.symbols(), None)?;
            Ok(LocalCsvRow {
                point: k,
                seed: s,
                slope: est.estimate.slope,
                stderr: est.estimate.stderr,
                r_squared: est.estimate.r_squared,
                max_cylinders: est.max_cylinders,
            })
        })
        .collect();
    let local = match local {
        Ok(rows) => rows,
        Err(Error::Unsupported(msg)) => {
            warnings.push(format!("local dimensions skipped: {msg}"));
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    let local_summary = (!local.is_empty()).then(|| {
        let mut slopes: Vec<f64> = local.iter().map(|r| r.slope).collect();
        slopes.sort_by(f64::total_cmp);
        let threshold = floor.min(1.0) - 0.05;
        LocalSummary {
            points: slopes.len(),
            min: slopes[0],
            median: slopes[slopes.len() / 2],
            max: slopes[slopes.len() - 1],
            at_floor: slopes.iter().filter(|&&s| s >= threshold).count() as f64
                / slopes.len() as f64,
            max_cylinders: local.iter().map(|r| r.max_cylinders).max().unwrap_or(0),
        }
    });

    let cloud: Vec<(crate::symbolic::Word, f64)> = (0..irr.cloud as u64)
        .into_par_iter()
        .map(|k| {
            let w =
                cm.generate_point(task_seed(seed, TASK_CLOUD, k), irr.cloud_depth.min(total))?;
            let x = cm.coordinate(&w)?;
            Ok((w, x))
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = cloud.iter().map(|p| p.1).collect();
    let boxes = box_counting(&xs, &default_scales())?;

    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let [mu, nu] = cm.phases();
    let report = IrregularReport {
        seed,
        alpha: mu.phi_star.clone(),
        beta: nu.phi_star.clone(),
        irregular: irregularity_warning(&cm).is_none(),
        dimension_floor: floor,
        total_length: total,
        boundaries: cm.schedule().boundaries(),
        oscillation_min,
        oscillation_required,
        within_budget,
        local_dimension: local_summary,
        box_dimension: boxes.slope,
        box_stderr: boxes.stderr,
        warnings,
    };

    let Some(dir) = out else {
        return emit(None, |w| write_json(w, &report));
    };
    std::fs::create_dir_all(dir)?;
    emit(Some(&dir.join("summary.json")), |w| write_json(w, &report))?;
    emit(Some(&dir.join("schedule.json")), |w| {
        write_json(w, &cm.summary(SUMMARY_WORDS))
    })?;
    emit(Some(&dir.join("oscillation.csv")), |w| {
        write_profiles_csv(w, &profiles)
    })?;
    emit(Some(&dir.join("local_dimension.csv")), |w| {
        let mut csv = csv::Writer::from_writer(w);
        for row in &local {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    emit(Some(&dir.join("points.csv")), |w| {
        write_points_csv(w, &cloud)
    })?;
    emit(Some(&dir.join("boxdim.csv")), |w| boxes.write_csv(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&invalid("x")), 2);
        assert_eq!(exit_code(&Error::Optimizer("x".into())), 3);
        assert_eq!(
            exit_code(&Error::Harvest {
                stage: 1,
                achieved: 0.0,
                required: 0.9
            }),
            4
        );
        assert_eq!(exit_code(&Error::Budget("x".into())), 4);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 1);
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "multifractal",
            "boxdim",
            "--config",
            "a.toml",
            "--seed",
            "3",
        ])
        .unwrap();
        assert_eq!(cli.command, Command::Boxdim);
        assert_eq!(cli.seed, Some(3));
        assert!(Cli::try_parse_from(["multifractal", "bogus"]).is_err());
    }

    #[test]
    fn map_info_for_doubling_and_pomeau() {
        let doubling = ExperimentConfig::from_toml(
            "map = { kind = \"linear\", domains = [[0.0, 0.5], [0.5, 1.0]] }\n\
             potential = { kind = \"indicator\", prefix = \"1\" }",
        )
        .unwrap();
        let r = map_info_report(&doubling).unwrap();
        assert!(r.parabolic_set.is_empty());
        assert!(r.parabolic_hull.unwrap().is_empty());

        let mp = ExperimentConfig::from_toml(
            "map = { kind = \"manneville_pomeau\", s = 1.0 }\n\
             potential = { kind = \"indicator\", prefix = \"1\" }",
        )
        .unwrap();
        let r = map_info_report(&mp).unwrap();
        assert_eq!(r.parabolic_set, vec![0]);
        assert_eq!(r.fixed_points[0], 0.0);
        assert_eq!(r.parabolic_hull.unwrap().interval(), Some((1.0, 1.0)));
    }
}
