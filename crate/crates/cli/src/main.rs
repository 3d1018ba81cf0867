use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use magnifier_core::bench::{self, ResultRow};
use magnifier_core::scenario::{parse_scenario_str, ModeChoice};
use magnifier_core::{parse_scenario, planner, Cell, MagnifierReport, Mode, ScenarioConfig, ScenarioError, Verdict};

const EXAMPLE1: &str = include_str!("../../core/fixtures/example1.json");

#[derive(Parser)]
#[command(name = "magnifier", version, about = "Plan generation and compositional verification of track-based traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded batch of conflict-free flight plans as JSON.
    GenPlans(GenArgs),
    /// Verify one scenario. Exit code: 0 compatible, 2 deadlock, 3 timeout, 4 disaster.
    Verify(VerifyArgs),
    /// Run a scenario (or a sweep of it) and write result rows as CSV.
    Bench(BenchArgs),
    /// Replay the two-component storm example and print the adaptation.
    ReplayExample1(ReplayArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Compositional,
    Monolithic,
    Both,
}

impl From<ModeArg> for ModeChoice {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Compositional => ModeChoice::Compositional,
            ModeArg::Monolithic => ModeChoice::Monolithic,
            ModeArg::Both => ModeChoice::Both,
        }
    }
}

fn parse_cell(s: &str) -> Result<Cell, String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let num = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("{v:?}: {e}"));
    Ok(Cell::new(num(x)?, num(y)?))
}

/// Scenario source plus per-field overrides.
#[derive(Args, Default)]
struct ScenarioArgs {
    /// Scenario JSON file; flags below override its fields.
    scenario: Option<PathBuf>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    region_size: Option<u32>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    fuel: Option<i64>,
    /// Storm cell as x,y (defaults to the middle of the mesh).
    #[arg(long, value_parser = parse_cell)]
    storm_cell: Option<Cell>,
    #[arg(long)]
    storm_tick: Option<i64>,
    #[arg(long)]
    storm_end_tick: Option<i64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    time_limit_ms: Option<u64>,
    #[arg(long)]
    max_states: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Expand states on all cores.
    #[arg(long)]
    parallel: bool,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig, ScenarioError> {
        let mut cfg = match &self.scenario {
            Some(p) => parse_scenario(p)?,
            None => ScenarioConfig::new("cli", 9, 3, 10, 10, 0),
        };
        if let Some(n) = self.n {
            cfg.n = n;
            cfg.width = None;
            cfg.height = None;
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $(if let Some(v) = self.$flag { cfg.$field = v; })* };
        }
        set!(region_size => region_size, m => m, lambda => lambda_param, fuel => fuel, storm_tick => storm_tick, seed => seed, time_limit_ms => time_limit_millis);
        if self.storm_cell.is_some() {
            cfg.storm_cell = self.storm_cell;
        }
        if self.storm_end_tick.is_some() {
            cfg.storm_end_tick = self.storm_end_tick;
        }
        if self.max_states.is_some() {
            cfg.max_states = self.max_states;
        }
        if let Some(m) = self.mode {
            cfg.mode = m.into();
        }
        cfg.parallel |= self.parallel;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 9)]
    n: u32,
    #[arg(long, default_value_t = 3)]
    region_size: u32,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 1)]
    fd: i64,
    #[arg(long, default_value_t = 325)]
    fuel: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Storm-time sweep, e.g. 5,10,20.
    #[arg(long, value_delimiter = ',')]
    storm_ticks: Vec<i64>,
    /// Departure-rate sweep, e.g. 0.5,0.25,0.125.
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    /// Aircraft-count sweep step; runs each mode until it times out.
    #[arg(long)]
    scale_step: Option<usize>,
    #[arg(long, default_value_t = 500)]
    scale_max: usize,
    /// Run independent scenarios of a sweep concurrently.
    #[arg(long)]
    jobs: bool,
    /// Leave out every batch with a non-compatible run in any mode or storm time.
    #[arg(long)]
    exclude_unclean: bool,
    /// Write CSV to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Use this scenario file instead of the built-in one.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

/// Anything that stops a command before it reaches a verdict; exits with 1.
struct Failure(String);

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure(e.to_string())
    }
}

fn io_fail(e: impl std::fmt::Display) -> Failure {
    Failure(e.to_string())
}

fn write_out(out: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(io_fail),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(io_fail),
    }
}

fn gen_plans(a: &GenArgs) -> Result<u8, Failure> {
    let topo = magnifier_core::Topology::mesh(a.n, a.region_size).map_err(io_fail)?;
    let batch = planner::generate_flight_plans(a.m, a.lambda, a.fd, &topo, a.seed, a.fuel).map_err(io_fail)?;
    let mut text = serde_json::to_string_pretty(&batch).map_err(io_fail)?;
    text.push('\n');
    write_out(a.out.as_ref(), &text)?;
    Ok(0)
}

fn describe(r: &MagnifierReport) {
    println!("mode: {}", r.mode.name());
    match &r.verdict {
        Verdict::Deadlock { diagnosis } => println!("verdict: deadlock ({diagnosis})"),
        Verdict::Disaster { object, tick } => println!("verdict: disaster (aircraft {object} out of fuel at tick {tick})"),
        v => println!("verdict: {}", v.name()),
    }
    let scope: Vec<String> = r.final_scope.iter().map(|c| c.to_string()).collect();
    println!("iterations: {}", r.iteration_count());
    println!("final scope: {}", scope.join(" "));
    println!("states: {} total, {} timed, {} ms", r.stats.total_states, r.stats.timed_states, r.stats.wall_millis);
}

fn verify(a: &VerifyArgs) -> Result<u8, Failure> {
    let cfg = a.scenario.load()?;
    let mut code = None;
    for &mode in bench::modes_of(cfg.mode) {
        let r = bench::run_mode(&cfg, mode)?;
        if a.json {
            println!("{}", serde_json::to_string_pretty(&r).map_err(io_fail)?);
        } else {
            describe(&r);
        }
        // the first mode decides the exit status
        code.get_or_insert(r.verdict.exit_code() as u8);
    }
    Ok(code.unwrap_or(0))
}

fn run_bench(a: &BenchArgs) -> Result<u8, Failure> {
    let cfg = a.scenario.load()?;
    let rows: Vec<ResultRow> = if let Some(step) = a.scale_step {
        bench::scale_sweep(&cfg, step, a.scale_max)?.rows
    } else {
        let mut cfgs = vec![cfg.clone()];
        if !a.storm_ticks.is_empty() {
            cfgs = bench::storm_time_sweep(&cfg, &a.storm_ticks);
        }
        if !a.lambdas.is_empty() {
            cfgs = cfgs.iter().flat_map(|c| bench::distribution_sweep(c, &a.lambdas)).collect();
        }
        for c in &cfgs {
            c.validate()?;
        }
        bench::run_all(&cfgs, a.reps, a.jobs)?
    };
    let rows = if a.exclude_unclean {
        let (kept, dropped) = bench::exclude_unclean_batches(&rows);
        for b in dropped {
            eprintln!("excluded batch {b}");
        }
        kept
    } else {
        rows
    };
    write_out(a.out.as_ref(), &bench::csv_string(&rows))?;
    Ok(0)
}

fn subtrack(c: Cell, width: u32) -> u32 {
    c.y * width + c.x + 1
}

fn replay(a: &ReplayArgs) -> Result<u8, Failure> {
    let cfg = match &a.scenario {
        Some(p) => parse_scenario(p)?,
        None => parse_scenario_str(EXAMPLE1)?,
    };
    let r = bench::run_mode(&cfg, Mode::Compositional)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r).map_err(io_fail)?);
        return Ok(r.verdict.exit_code() as u8);
    }
    describe(&r);
    let w = cfg.width();
    for p in &r.adapted_plans {
        let entries: Vec<String> = p.entries.iter().map(|e| format!("({},{})", e.tick, subtrack(e.cell, w))).collect();
        println!("aircraft {} adapted: {{{}}}", p.id, entries.join(","));
    }
    for c in &r.off_schedule {
        let planned = c.planned.map_or("unplanned".to_string(), |t| format!("planned {t}"));
        println!("aircraft {} crosses {} -> {} at tick {} ({planned})", c.object, c.from, c.to, c.tick);
    }
    Ok(r.verdict.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::GenPlans(a) => gen_plans(a),
        Command::Verify(a) => verify(a),
        Command::Bench(a) => run_bench(a),
        Command::ReplayExample1(a) => replay(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
