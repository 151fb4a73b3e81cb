//! Subcommand implementations.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, SecondsFormat, Utc};
use gp3::dynamics::{
    flow_map, integrate, HarmonicOscillator, LinearDecay, OdeSystem, Smib, SmibParams, ZeroField,
};
use gp3::gp::HyperparameterSearch;
use gp3::recipes::{
    run_lipschitz_recipe, run_roa_recipe, BaselineConfig, KernelSetting, LipschitzRecipeConfig, RoaRecipeConfig,
};
use gp3::verify::{
    run_analysis, CellStatus, Exclusion, Observable, ProblemSpec, StateMap, TargetBound, VerificationReport,
};
use gp3::{GpModel, KernelFamily, Workers};
use serde::Serialize;

use crate::config::{Config, FChoice, GChoice, KernelConfig, LoadedConfig};
use crate::io::{self, CellRecord, GridTable};
use crate::{CliError, Cli, Command};

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Lipschitz {
            config,
            kernel,
            budget,
            output_dir,
        } => cmd_lipschitz(cli.workers, config, kernel.as_deref(), *budget, output_dir.as_deref()),
        Command::Verify { config, output_dir } => cmd_verify(cli.workers, config, output_dir.as_deref()),
        Command::Roa {
            config,
            skip_baseline,
            m1,
            output_dir,
        } => cmd_roa(cli.workers, config, *skip_baseline, *m1, output_dir.as_deref()),
        Command::Simulate {
            system,
            x0,
            steps,
            dt,
            m1,
        } => cmd_simulate(system, x0, *steps, *dt, *m1),
    }
}

/// Worker count: flag, then `GP3_WORKERS`, then the config, then all cores.
pub fn resolve_workers(flag: Option<usize>, config: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    if let Ok(v) = std::env::var("GP3_WORKERS") {
        return v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("GP3_WORKERS must be a non-negative integer, got {v:?}")));
    }
    Ok(config.unwrap_or(0))
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a Config,
    started: String,
    finished: String,
    wall_time: f64,
    workers: usize,
    outputs: Vec<String>,
}

/// Collects output files and writes them, followed by the manifest, only
/// once the whole analysis has succeeded.
struct Run {
    command: &'static str,
    started: DateTime<Utc>,
    clock: Instant,
    workers: usize,
    files: Vec<(String, String)>,
}

impl Run {
    fn new(command: &'static str, workers: usize) -> Self {
        Self {
            command,
            started: Utc::now(),
            clock: Instant::now(),
            workers,
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    fn finish(self, dir: &Path, config: &Config) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for (name, contents) in &self.files {
            io::write_atomic(&dir.join(name), contents.as_bytes())?;
        }
        let manifest = RunManifest {
            tool: "gp3",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config,
            started: self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            wall_time: self.clock.elapsed().as_secs_f64(),
            workers: self.workers,
            outputs: self.files.iter().map(|(n, _)| n.clone()).collect(),
        };
        io::write_atomic(&dir.join("manifest.json"), io::to_json(&manifest).as_bytes())
    }
}

fn parse_family(name: &str) -> Result<KernelFamily, CliError> {
    KernelFamily::parse(name).ok_or_else(|| CliError::Config(format!("unknown kernel family {name:?}")))
}

#[derive(Debug, Serialize)]
struct LipschitzSummary {
    kernel: KernelConfig,
    naive: f64,
    lipschitz: f64,
    cells: usize,
    wall_time: f64,
}

fn cmd_lipschitz(
    workers_flag: Option<usize>,
    path: &Path,
    kernel: Option<&str>,
    budget: Option<usize>,
    out_flag: Option<&Path>,
) -> Result<(), CliError> {
    let loaded = LoadedConfig::load(path)?;
    let cfg = &loaded.config;
    let workers = resolve_workers(workers_flag, cfg.workers)?;
    let section = cfg.lipschitz.clone().unwrap_or_default();
    let mut recipe = LipschitzRecipeConfig::default();
    if let Some(d) = &cfg.domain {
        recipe.domain = d.rect()?;
    }
    if let Some(n) = section.samples {
        recipe.samples = n;
    }
    if let Some(s) = section.target_noise {
        recipe.target_noise = s;
    }
    if let Some(s) = section.seed {
        recipe.seed = s;
    }
    if let Some(p) = &cfg.data {
        recipe.data = Some(io::read_training_csv(&loaded.resolve(p))?);
    }
    let mut kernels: Vec<KernelSetting> = if !section.kernels.is_empty() {
        section.kernels.iter().map(KernelConfig::setting).collect::<Result<_, _>>()?
    } else if let Some(k) = &cfg.kernel {
        vec![k.setting()?]
    } else {
        recipe.kernels.clone()
    };
    if let Some(name) = kernel {
        let fam = parse_family(name)?;
        kernels.retain(|k| k.spec.family() == fam);
        if kernels.is_empty() {
            kernels.push(KernelSetting::reference(fam));
        }
    }
    recipe.kernels = kernels;
    recipe.cell_budget = budget.or(section.cell_budget).unwrap_or(recipe.cell_budget);
    if recipe.cell_budget == 0 {
        return Err(CliError::Config("cell budget must be positive".into()));
    }
    if section.optimize {
        recipe.optimize = Some(HyperparameterSearch::default());
    }

    let mut run = Run::new("lipschitz", workers);
    let result = run_lipschitz_recipe(&recipe, &Workers::new(workers))?;
    let mut summary = Vec::new();
    for c in &result.curves {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["cells", "L"]).expect("in-memory write");
        for (n, l) in &c.envelope.curve {
            w.write_record([n.to_string(), l.to_string()]).expect("in-memory write");
        }
        let short = c.setting.spec.family().short_name();
        run.add(
            &format!("lipschitz_{short}.csv"),
            String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8"),
        );
        let cells = c.envelope.curve.last().map_or(0, |p| p.0);
        println!("{short}\tnaive={}\tL={}\tcells={cells}", c.naive(), c.envelope.global);
        summary.push(LipschitzSummary {
            kernel: KernelConfig::from_setting(&c.setting),
            naive: c.naive(),
            lipschitz: c.envelope.global,
            cells,
            wall_time: c.wall_time,
        });
    }
    run.add("lipschitz_summary.json", io::to_json(&summary));
    run.finish(&loaded.output_dir(out_flag), cfg)
}

#[derive(Debug, Serialize)]
struct ReportSummary {
    total_cells_evaluated: usize,
    cells: usize,
    max_depth: u32,
    wall_time: f64,
    satisfied: usize,
    min_size_reached: usize,
    assumed_verified: usize,
    violated: usize,
    unresolved: usize,
    eps1: Option<f64>,
    eps2: Option<f64>,
    depth_cap_hit: bool,
    budget_exhausted: bool,
}

impl ReportSummary {
    fn new(r: &VerificationReport) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            total_cells_evaluated: r.total_cells_evaluated,
            cells: r.cells.len(),
            max_depth: r.max_depth,
            wall_time: r.wall_time,
            satisfied: r.count(CellStatus::Satisfied),
            min_size_reached: r.count(CellStatus::MinSizeReached),
            assumed_verified: r.count(CellStatus::AssumedVerified),
            violated: r.count(CellStatus::Violated),
            unresolved: r.count(CellStatus::Unresolved),
            eps1: finite(r.eps1()),
            eps2: finite(r.eps2()),
            depth_cap_hit: r.depth_cap_hit,
            budget_exhausted: r.budget_exhausted,
        }
    }

    fn print(&self) {
        println!(
            "cells={} evaluated={} satisfied={} min_size={} violated={} assumed={} unresolved={} eps1={} eps2={}",
            self.cells,
            self.total_cells_evaluated,
            self.satisfied,
            self.min_size_reached,
            self.violated,
            self.assumed_verified,
            self.unresolved,
            fmt_opt(self.eps1),
            fmt_opt(self.eps2),
        );
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |v| v.to_string())
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a Config,
    summary: &'a ReportSummary,
    cells: Vec<CellRecord>,
}

fn require<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config(format!("missing `{key}`")))
}

fn check_exclusions(exclusions: &[Exclusion], d: usize) -> Result<(), CliError> {
    for e in exclusions {
        let ok = match e {
            Exclusion::Ball { center, radius } => center.len() == d && *radius >= 0.0,
            Exclusion::Box { lower, upper } => {
                lower.len() == d && upper.len() == d && lower.iter().zip(upper).all(|(l, u)| l <= u)
            }
        };
        if !ok {
            return Err(CliError::Config(format!("invalid exclusion {e:?} for dimension {d}")));
        }
    }
    Ok(())
}

fn cmd_verify(workers_flag: Option<usize>, path: &Path, out_flag: Option<&Path>) -> Result<(), CliError> {
    let loaded = LoadedConfig::load(path)?;
    let cfg = &loaded.config;
    let workers = resolve_workers(workers_flag, cfg.workers)?;
    let data = io::read_training_csv(&loaded.resolve(require(&cfg.data, "data")?))?;
    let setting = require(&cfg.kernel, "kernel")?.setting()?;
    let domain = require(&cfg.domain, "domain")?.rect()?;
    let p = require(&cfg.problem, "problem")?;
    let d = domain.dim();
    if data.dim() != d {
        return Err(CliError::Config(format!(
            "training data has {} inputs but the domain has {d}",
            data.dim()
        )));
    }
    if setting.spec.dim() != d {
        return Err(CliError::Config(format!(
            "kernel has {} length scales but the domain has {d}",
            setting.spec.dim()
        )));
    }
    check_exclusions(&cfg.exclusions, d)?;
    let l_g = || {
        p.l_g
            .filter(|v| *v >= 0.0)
            .ok_or_else(|| CliError::Config("problem.L_g (non-negative) is required for this g".into()))
    };
    let g = match p.g {
        GChoice::Mean => Observable::Mean,
        GChoice::Table => {
            let (rows, vals) = io::read_table(&loaded.resolve(require(&p.g_table, "problem.g_table")?), "g")?;
            let table = GridTable::from_rows(&rows, &vals)?;
            if table.dim() != d {
                return Err(CliError::Config("g table dimension differs from the domain".into()));
            }
            Observable::Function {
                eval: Arc::new(move |x: &[f64]| table.eval(x)),
                lipschitz: l_g()?,
            }
        }
        GChoice::LipschitzTarget => {
            if d != 2 {
                return Err(CliError::Config("lipschitz_target is two-dimensional".into()));
            }
            Observable::Function {
                eval: Arc::new(gp3::recipes::lipschitz_target),
                lipschitz: l_g()?,
            }
        }
    };
    let f = match p.f {
        FChoice::Identity => StateMap::Identity,
        FChoice::NearestGrid => StateMap::NearestGrid {
            origin: p.grid_origin.clone().unwrap_or_else(|| domain.lower()),
            spacing: require(&p.grid_spacing, "problem.grid_spacing")?.clone(),
        },
        FChoice::FlowMap => {
            if d != 2 {
                return Err(CliError::Config("flow_map uses the two-dimensional machine model".into()));
            }
            let dynamics = cfg.dynamics.clone().unwrap_or_default();
            let system: Arc<dyn OdeSystem> = Arc::new(Smib::new(dynamics.smib())?);
            StateMap::Lipschitz {
                eval: flow_map(system, dynamics.dt, dynamics.integrator())?,
                lipschitz: require(&p.l_f, "problem.L_f")?.to_owned(),
            }
        }
    };
    let bound = |v: Option<f64>| TargetBound::Constant(v.unwrap_or(f64::INFINITY));
    let mut problem = ProblemSpec::new(domain, p.b_min)
        .with_g(g)
        .with_f(f)
        .with_targets(bound(p.eps1_bar), bound(p.eps2_bar))
        .with_initial_cells(p.initial_cells);
    if let Some(m) = p.max_depth {
        problem = problem.with_max_depth(m);
    }
    if let Some(m) = p.max_evaluations {
        problem = problem.with_max_evaluations(m);
    }
    if let Some(prune) = p.prune {
        problem = problem.with_pruning(prune);
    }

    let mut run = Run::new("verify", workers);
    let model = GpModel::fit(data, setting.spec, setting.noise_variance)?;
    let report = run_analysis(&problem, &model, &cfg.exclusions, &Workers::new(workers))?;
    let summary = ReportSummary::new(&report);
    summary.print();
    let records: Vec<CellRecord> = report.cells.iter().map(CellRecord::from).collect();
    run.add("cells.csv", io::cells_csv(d, &records));
    run.add(
        "report.json",
        io::to_json(&ReportFile {
            tool: "gp3",
            version: env!("CARGO_PKG_VERSION"),
            config: cfg,
            summary: &summary,
            cells: records,
        }),
    );
    run.finish(&loaded.output_dir(out_flag), cfg)
}

#[derive(Debug, Serialize)]
struct RoaSummary {
    kernel: KernelConfig,
    c_star: Option<f64>,
    decrease_cells: usize,
    decrease_volume: f64,
    level_set_cells: usize,
    level_set_volume: f64,
    baseline_converged: Option<usize>,
    baseline_points: Option<usize>,
    analysis: ReportSummary,
    warnings: Vec<String>,
}

fn cmd_roa(
    workers_flag: Option<usize>,
    path: &Path,
    skip_baseline: bool,
    m1: Option<f64>,
    out_flag: Option<&Path>,
) -> Result<(), CliError> {
    let loaded = LoadedConfig::load(path)?;
    let mut cfg = loaded.config.clone();
    if let Some(m1) = m1 {
        cfg.dynamics.get_or_insert_with(Default::default).m1 = m1;
    }
    let workers = resolve_workers(workers_flag, cfg.workers)?;
    let dynamics = cfg.dynamics.clone().unwrap_or_default();
    let section = cfg.roa.clone().unwrap_or_default();
    let mut recipe = RoaRecipeConfig {
        system: dynamics.smib(),
        horizon: dynamics.k,
        dt: dynamics.dt,
        integrator: dynamics.integrator(),
        ..Default::default()
    };
    if let Some(d) = &cfg.domain {
        recipe.domain = d.rect()?;
    }
    if recipe.domain.dim() != 2 {
        return Err(CliError::Config("the machine model has a two-dimensional state".into()));
    }
    if let Some(k) = &cfg.kernel {
        recipe.kernel = k.setting()?;
        if recipe.kernel.spec.dim() != 2 {
            return Err(CliError::Config("kernel needs two length scales".into()));
        }
    }
    if let Some(n) = section.samples {
        recipe.samples = n;
    }
    if section.optimize {
        recipe.optimize = Some(HyperparameterSearch::default());
    }
    if let Some(p) = &cfg.problem {
        if p.g != GChoice::Mean || p.f != FChoice::FlowMap && p.f != FChoice::Identity {
            return Err(CliError::Config("roa analyses g = mean along the flow map".into()));
        }
        recipe.b_min = p.b_min;
        recipe.initial_cells = p.initial_cells;
        if let Some(l) = p.l_f {
            recipe.l_f = l;
        }
        if let Some(m) = p.max_depth {
            recipe.max_depth = m;
        }
        recipe.max_evaluations = p.max_evaluations;
    }
    match cfg.exclusions.as_slice() {
        [] => {}
        [Exclusion::Ball { center, radius }] if center.iter().all(|c| *c == 0.0) && center.len() == 2 => {
            recipe.exclusion_radius = *radius;
        }
        _ => return Err(CliError::Config("roa accepts one ball exclusion centred at the origin".into())),
    }
    recipe.baseline = if skip_baseline {
        None
    } else {
        let d = BaselineConfig::default();
        Some(BaselineConfig {
            grid: section.baseline_grid.unwrap_or(d.grid),
            steps: section.baseline_steps.unwrap_or(d.steps),
            radius: section.baseline_radius.unwrap_or(d.radius),
        })
    };

    let mut run = Run::new("roa", workers);
    let r = run_roa_recipe(&recipe, &Workers::new(workers))?;
    for w in &r.warnings {
        log::warn!("{w}");
    }
    let volume = |cells: &[gp3::verify::CellResult]| cells.iter().map(|c| c.cell.volume()).sum::<f64>();
    let summary = RoaSummary {
        kernel: KernelConfig::from_setting(&r.kernel),
        c_star: r.c_star.is_finite().then_some(r.c_star),
        decrease_cells: r.decrease.len(),
        decrease_volume: volume(&r.decrease),
        level_set_cells: r.level_set.len(),
        level_set_volume: volume(&r.level_set),
        baseline_converged: r.baseline.as_ref().map(|b| b.converged.iter().filter(|c| **c).count()),
        baseline_points: r.baseline.as_ref().map(|b| b.points.len()),
        analysis: ReportSummary::new(&r.report),
        warnings: r.warnings.clone(),
    };
    println!(
        "W: {} cells (area {:.4})  V: {} cells (area {:.4})  c*={}",
        summary.decrease_cells,
        summary.decrease_volume,
        summary.level_set_cells,
        summary.level_set_volume,
        fmt_opt(summary.c_star)
    );
    let recs = |cells: &[gp3::verify::CellResult]| cells.iter().map(CellRecord::from).collect::<Vec<_>>();
    run.add("decrease_cells.csv", io::cells_csv(2, &recs(&r.decrease)));
    run.add("level_set_cells.csv", io::cells_csv(2, &recs(&r.level_set)));
    run.add("cells.csv", io::cells_csv(2, &recs(&r.report.cells)));
    run.add("training.csv", io::training_csv(&r.dataset.to_training_set()?));
    if let Some(b) = &r.baseline {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x1", "x2", "converged"]).expect("in-memory write");
        for (p, c) in b.points.iter().zip(&b.converged) {
            w.write_record([p[0].to_string(), p[1].to_string(), u8::from(*c).to_string()])
                .expect("in-memory write");
        }
        run.add(
            "baseline.csv",
            String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8"),
        );
    }
    run.add("roa_summary.json", io::to_json(&summary));
    run.finish(&loaded.output_dir(out_flag), &cfg)
}

fn cmd_simulate(system: &str, x0: &[f64], steps: usize, dt: f64, m1: Option<f64>) -> Result<(), CliError> {
    if x0.is_empty() {
        return Err(CliError::Config("--x0 is required".into()));
    }
    if !(dt > 0.0) {
        return Err(CliError::Config("--dt must be positive".into()));
    }
    let sys: Box<dyn OdeSystem> = match system {
        "smib" => {
            let mut p = SmibParams::default();
            if let Some(m) = m1 {
                p.m1 = m;
            }
            Box::new(Smib::new(p)?)
        }
        "decay" => Box::new(LinearDecay {
            dim: x0.len(),
            rate: 1.0,
        }),
        "oscillator" => Box::new(HarmonicOscillator),
        "zero" => Box::new(ZeroField(x0.len())),
        other => return Err(CliError::Config(format!("unknown system {other:?}"))),
    };
    if sys.dim() != x0.len() {
        return Err(CliError::Config(format!(
            "system {system} has dimension {}, got {} initial values",
            sys.dim(),
            x0.len()
        )));
    }
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let states = integrate(sys.as_ref(), x0, &times, &Default::default())?;
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=x0.len()).map(|k| format!("x{k}")))
        .collect();
    let werr = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(&header).map_err(werr)?;
    for (t, x) in times.iter().zip(&states) {
        w.write_record(std::iter::once(t).chain(x).map(|v| v.to_string()))
            .map_err(werr)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}
