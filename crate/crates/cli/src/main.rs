//! `macrsv` command-line front end.
//!
//! Exit status: 0 on success, 1 when a check or an analysis point fails,
//! 2 on configuration errors.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use macrsv::analysis;
use macrsv::engine::{self, EngineError, Protocol, RunOutput};
use macrsv::rsv::GrantPolicy;
use macrsv::scenario::{AnalysisSection, ScenarioFile};
use macrsv::trace;
use macrsv::validation::{self, ValidateOptions};

#[derive(Parser, Debug)]
#[command(name = "macrsv", version, about = "Reservation TDMA MAC simulator and throughput analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(clap::Args, Debug, Clone, Default)]
struct Opts {
    /// Scenario file or bundled scenario name.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Parameter sweep, e.g. `offered_load_bps=4e6,8e6`.
    #[arg(long, global = true)]
    sweep: Option<String>,
    /// Comma-separated seeds; defaults to the scenario seed.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    grant_policy: Option<Grant>,
    #[arg(long, global = true)]
    paranoid_ncts: bool,
    #[arg(long, global = true)]
    rb_ablation: bool,
    /// Event trace of a single simulation run.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Analysis only: long-format stationary and reserved-slot distributions.
    #[arg(long, global = true)]
    dist: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the simulator over sweep values and seeds.
    Simulate,
    /// Evaluate the contender-count chain over a load grid.
    Analyze,
    /// Run the oracle checks and print a JSON-lines report.
    Validate,
    /// Run MAC-RSV and the per-slot contention baseline side by side.
    Compare,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Grant {
    Partial,
    All,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Failed(String),
}

impl From<macrsv::scenario::ConfigError> for CliError {
    fn from(e: macrsv::scenario::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate => simulate(&cli.opts, false),
        Command::Compare => simulate(&cli.opts, true),
        Command::Analyze => analyze(&cli.opts),
        Command::Validate => validate(&cli.opts),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Failed(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
    }
}

struct Sweep {
    name: String,
    values: Vec<String>,
}

fn parse_sweep(opts: &Opts) -> Result<Option<Sweep>, CliError> {
    let Some(text) = &opts.sweep else { return Ok(None) };
    let (name, values) =
        text.split_once('=').ok_or_else(|| CliError::Config(format!("--sweep {text:?}: expected NAME=v1,v2,...")))?;
    let values: Vec<String> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(String::from).collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("--sweep {text:?}: no values")));
    }
    Ok(Some(Sweep { name: name.trim().to_string(), values }))
}

fn load_scenario(opts: &Opts, fallback: Option<&str>) -> Result<ScenarioFile, CliError> {
    let name = opts
        .scenario
        .as_deref()
        .or(fallback)
        .ok_or_else(|| CliError::Config("--scenario is required".into()))?;
    let mut s = ScenarioFile::resolve(name)?;
    if let Some(g) = opts.grant_policy {
        s.mac.grant_policy = match g {
            Grant::Partial => GrantPolicy::Partial,
            Grant::All => GrantPolicy::AllOrNothing,
        };
    }
    s.mac.paranoid_ncts |= opts.paranoid_ncts;
    s.mac.rb_ablation |= opts.rb_ablation;
    Ok(s)
}

fn emit(opts: &Opts, text: &str) -> Result<(), CliError> {
    match &opts.out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

struct Job {
    value: Option<String>,
    scenario: engine::Scenario,
}

fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

fn numeric(out: &RunOutput) -> [f64; 5] {
    let m = &out.metrics;
    [
        out.offered_load_bps,
        m.aggregate_throughput_bps,
        m.mean_delay_s,
        m.data_collisions as f64,
        m.deadlock_deferrals as f64,
    ]
}

/// Shared by `simulate` and `compare`: one row per run, then mean and sample
/// standard deviation rows per protocol and sweep value.
fn simulate(opts: &Opts, compare: bool) -> Result<bool, CliError> {
    let base = load_scenario(opts, None)?;
    let sweep = parse_sweep(opts)?;
    let seeds = if opts.seeds.is_empty() { vec![base.seed] } else { opts.seeds.clone() };
    let values: Vec<Option<String>> = match &sweep {
        Some(s) => s.values.iter().cloned().map(Some).collect(),
        None => vec![None],
    };
    let protocols: Vec<Option<&str>> = if compare { vec![Some("mac-rsv"), Some("cata")] } else { vec![None] };

    let mut jobs = Vec::new();
    for value in &values {
        for protocol in &protocols {
            for &seed in &seeds {
                let mut file = base.clone();
                if let (Some(s), Some(v)) = (&sweep, value) {
                    file.set_param(&s.name, v)?;
                }
                if let Some(p) = protocol {
                    file.set_param("protocol", p)?;
                }
                file.seed = seed;
                let mut scenario = file.to_engine()?;
                scenario.record_trace = opts.trace.is_some();
                jobs.push(Job { value: value.clone(), scenario });
            }
        }
    }
    if opts.trace.is_some() && jobs.len() != 1 {
        return Err(CliError::Config("--trace needs a single run (one sweep value, one seed, simulate only)".into()));
    }

    let outputs: Vec<RunOutput> =
        jobs.par_iter().map(|j| engine::run(&j.scenario)).collect::<Result<_, _>>()?;
    if let Some(path) = &opts.trace {
        std::fs::write(path, trace::to_text(&outputs[0].trace))?;
    }

    let sweep_name = sweep.as_ref().map_or("", |s| s.name.as_str());
    let mut csv = format!("row,sweep,sweep_value,{}\n", engine::CSV_HEADER);
    for (job, out) in jobs.iter().zip(&outputs) {
        let value = job.value.as_deref().unwrap_or("");
        csv += &format!("run,{sweep_name},{value},{}\n", engine::csv_row(&job.scenario, out));
    }
    let per_group = seeds.len();
    let mut means = Vec::new();
    for (chunk_jobs, chunk_out) in jobs.chunks(per_group).zip(outputs.chunks(per_group)) {
        let first = &chunk_jobs[0];
        let value = first.value.as_deref().unwrap_or("");
        let cols: Vec<Vec<f64>> = (0..5).map(|i| chunk_out.iter().map(|o| numeric(o)[i]).collect()).collect();
        let stats: Vec<(f64, Option<f64>)> = cols.iter().map(|c| mean_std(c)).collect();
        let prefix = format!("{sweep_name},{value},{},{},", first.scenario.name, first.scenario.protocol.label());
        let mean: Vec<String> = stats.iter().map(|(m, _)| m.to_string()).collect();
        let std: Vec<String> = stats.iter().map(|(_, s)| s.map_or(String::new(), |s| s.to_string())).collect();
        csv += &format!("mean,{prefix},{}\n", mean.join(","));
        csv += &format!("std,{prefix},{}\n", std.join(","));
        means.push((value.to_string(), first.scenario.protocol, stats[1].0));
    }
    if compare {
        for pair in means.chunks(2) {
            if let [(value, Protocol::MacRsv, rsv), (_, Protocol::Cata, cata)] = pair {
                csv += &format!("ratio,{sweep_name},{value},{},mac-rsv/cata,,,{},,,\n", base.name, rsv / cata);
            }
        }
    }
    emit(opts, &csv)?;
    Ok(true)
}

fn analysis_grid(opts: &Opts) -> Result<(AnalysisSection, Vec<f64>, Option<Sweep>), CliError> {
    let file = load_scenario(opts, Some("analysis_smoke"))?;
    let grid = file
        .analysis
        .ok_or_else(|| CliError::Config(format!("scenario {:?} has no [analysis] table", file.name)))?;
    let sweep = parse_sweep(opts)?;
    let loads = match &sweep {
        Some(s) if s.name == "load" => {
            s.values.iter().map(|v| v.parse().map_err(|_| CliError::Config(format!("load: cannot parse {v:?}")))).collect::<Result<_, _>>()?
        }
        _ => grid.loads.clone(),
    };
    let sweep = sweep.filter(|s| s.name != "load");
    Ok((grid, loads, sweep))
}

fn env_n_max() -> Result<Option<usize>, CliError> {
    match std::env::var("MACRSV_NMAX") {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| CliError::Config(format!("MACRSV_NMAX: cannot parse {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn apply_analysis_param(grid: &mut AnalysisSection, name: &str, value: &str) -> Result<(), CliError> {
    fn num<T: std::str::FromStr>(name: &str, v: &str) -> Result<T, CliError> {
        v.parse().map_err(|_| CliError::Config(format!("{name}: cannot parse {v:?}")))
    }
    match name {
        "q" => grid.q = num(name, value)?,
        "p" | "persistence" => grid.p = num(name, value)?,
        "triples" => grid.triples = num(name, value)?,
        "data_slots" => grid.data_slots = num(name, value)?,
        "n_max" => grid.n_max = Some(num(name, value)?),
        _ => return Err(CliError::Config(format!("{name}: not an analysis parameter (load, q, p, triples, data_slots, n_max)"))),
    }
    Ok(())
}

fn analyze(opts: &Opts) -> Result<bool, CliError> {
    let (grid, loads, sweep) = analysis_grid(opts)?;
    let n_max = env_n_max()?;
    let mut points: Vec<(AnalysisSection, f64)> = Vec::new();
    let grids = match &sweep {
        Some(s) => s
            .values
            .iter()
            .map(|v| {
                let mut g = grid.clone();
                apply_analysis_param(&mut g, &s.name, v).map(|_| g)
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![grid],
    };
    for g in grids {
        for &load in &loads {
            let mut g = g.clone();
            if n_max.is_some() {
                g.n_max = n_max;
            }
            points.push((g, load));
        }
    }
    for (g, load) in &points {
        g.params(*load).validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let results: Vec<_> = points.par_iter().map(|(g, load)| analysis::utilization(&g.params(*load))).collect();

    let mut csv = String::from(
        "load,triples,data_slots,q,p,n_max,utilization,truncation_mass,residual,iterations,status,message\n",
    );
    let mut dist = String::from("load,triples,data_slots,q,p,quantity,index,probability\n");
    let mut all_ok = true;
    for ((g, load), result) in points.iter().zip(&results) {
        let head = format!("{load},{},{},{},{}", g.triples, g.data_slots, g.q, g.p);
        match result {
            Ok((model, u)) => {
                csv += &format!(
                    "{head},{},{},{:e},{:e},{},ok,\n",
                    model.n_max, u.expected, model.truncation_mass, model.residual, model.iterations
                );
                for (i, p) in model.stationary.iter().enumerate() {
                    dist += &format!("{head},contenders,{i},{p}\n");
                }
                for (i, p) in u.reserved_pmf.iter().enumerate() {
                    dist += &format!("{head},reserved,{i},{p}\n");
                }
            }
            Err(e) => {
                all_ok = false;
                let n = g.n_max.unwrap_or_else(|| g.params(*load).default_n_max());
                csv += &format!("{head},{n},,,,,error,\"{}\"\n", e.to_string().replace('"', "'"));
                eprintln!("load {load}: {e}");
            }
        }
    }
    emit(opts, &csv)?;
    if let Some(path) = &opts.dist {
        std::fs::write(path, dist)?;
    }
    Ok(all_ok)
}

fn validate(opts: &Opts) -> Result<bool, CliError> {
    let (grid, loads, sweep) = match (&opts.scenario, &opts.sweep) {
        (None, None) => {
            let d = ValidateOptions::default();
            (d.analysis, d.loads, None)
        }
        _ => {
            let (grid, loads, sweep) = analysis_grid(opts)?;
            let loads = if opts.sweep.is_some() && sweep.is_none() { loads } else { vec![0.5] };
            (grid, loads, sweep)
        }
    };
    if let Some(s) = sweep {
        return Err(CliError::Config(format!("validate sweeps only `load`, not {:?}", s.name)));
    }
    let mut grid = grid;
    if let Some(n) = env_n_max()? {
        grid.n_max = Some(n);
    }
    let options = ValidateOptions {
        mc_frames: grid.mc_frames.unwrap_or(100_000),
        analysis: grid,
        loads,
        rb_ablation: opts.rb_ablation,
    };
    let checks = validation::run_checks(&options);
    let mut text = String::new();
    for c in &checks {
        text += &serde_json::to_string(c).map_err(|e| CliError::Failed(e.to_string()))?;
        text.push('\n');
    }
    emit(opts, &text)?;
    Ok(checks.iter().all(|c| c.pass))
}
