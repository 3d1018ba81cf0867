//! Experiment harness: runs scenarios in one or both modes and writes CSV rows.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::magnifier::{self, MagnifierReport, Mode, RunOptions};
use crate::scenario::{ModeChoice, ScenarioConfig, ScenarioError};
use crate::statespace;
use crate::topology::Tick;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResultRow {
    pub scenario_id: String,
    pub mode: String,
    pub verdict: String,
    pub iterations: usize,
    pub final_scope_size: usize,
    pub total_states: u64,
    pub timed_states: u64,
    pub wall_millis: u64,
    pub peak_resident_bytes: u64,
}

impl ResultRow {
    pub fn from_report(id: &str, r: &MagnifierReport) -> Self {
        ResultRow {
            scenario_id: id.into(),
            mode: r.mode.name().into(),
            verdict: r.verdict.name().into(),
            iterations: r.iteration_count(),
            final_scope_size: r.final_scope.len(),
            total_states: r.stats.total_states,
            timed_states: r.stats.timed_states,
            wall_millis: r.stats.wall_millis,
            peak_resident_bytes: r.stats.peak_resident_bytes,
        }
    }

    /// The row with machine-dependent columns zeroed.
    pub fn without_timing(&self) -> Self {
        ResultRow { wall_millis: 0, peak_resident_bytes: 0, ..self.clone() }
    }
}

pub fn modes_of(choice: ModeChoice) -> &'static [Mode] {
    match choice {
        ModeChoice::Compositional => &[Mode::Compositional],
        ModeChoice::Monolithic => &[Mode::Monolithic],
        ModeChoice::Both => &[Mode::Compositional, Mode::Monolithic],
    }
}

pub fn options(cfg: &ScenarioConfig) -> RunOptions {
    RunOptions {
        time_limit: Some(cfg.time_limit()),
        max_states: cfg.max_states,
        parallel: cfg.parallel,
        check_invariants: false,
    }
}

/// One scenario in one mode.
pub fn run_mode(cfg: &ScenarioConfig, mode: Mode) -> Result<MagnifierReport, ScenarioError> {
    let engine = cfg.engine()?;
    statespace::reset_peak_resident();
    let opts = options(cfg);
    let r = match mode {
        Mode::Compositional => magnifier::run_magnifier(&engine, &opts),
        Mode::Monolithic => magnifier::run_monolithic(&engine, &opts),
    };
    r.map_err(|e| ScenarioError::Invalid(vec![e.to_string()]))
}

/// `repetitions` runs of the scenario, seeds counting up from the configured one,
/// each in every mode the scenario asks for.
pub fn run_experiment(cfg: &ScenarioConfig, repetitions: usize) -> Result<Vec<ResultRow>, ScenarioError> {
    let mut rows = Vec::new();
    for rep in 0..repetitions {
        let mut c = cfg.clone();
        c.seed = cfg.seed + rep as u64;
        if repetitions > 1 {
            c.scenario_id = format!("{}#{rep}", cfg.scenario_id);
        }
        for &mode in modes_of(cfg.mode) {
            rows.push(ResultRow::from_report(&c.scenario_id, &run_mode(&c, mode)?));
        }
    }
    Ok(rows)
}

/// Several independent scenarios, optionally on the rayon pool. Row order follows `cfgs`.
pub fn run_all(cfgs: &[ScenarioConfig], repetitions: usize, parallel: bool) -> Result<Vec<ResultRow>, ScenarioError> {
    let per: Vec<Result<Vec<ResultRow>, ScenarioError>> = if parallel {
        cfgs.par_iter().map(|c| run_experiment(c, repetitions)).collect()
    } else {
        cfgs.iter().map(|c| run_experiment(c, repetitions)).collect()
    };
    let mut rows = Vec::new();
    for r in per {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Storm-time sweep: the same traffic with the storm hitting at each tick.
pub fn storm_time_sweep(base: &ScenarioConfig, ticks: &[Tick]) -> Vec<ScenarioConfig> {
    ticks
        .iter()
        .map(|&t| {
            let mut c = base.clone();
            c.storm_tick = t;
            c.scenario_id = format!("{}-storm{t}", base.scenario_id);
            c
        })
        .collect()
}

/// Departure-rate sweep: one scenario per exponential rate.
pub fn distribution_sweep(base: &ScenarioConfig, lambdas: &[f64]) -> Vec<ScenarioConfig> {
    lambdas
        .iter()
        .map(|&l| {
            let mut c = base.clone();
            c.lambda_param = l;
            c.scenario_id = format!("{}-lambda{l}", base.scenario_id);
            c
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ScaleResult {
    pub rows: Vec<ResultRow>,
    /// Largest aircraft count each mode finished within budget (0 if none).
    pub max_compositional: usize,
    pub max_monolithic: usize,
}

/// Raise the aircraft count by `step` until each mode stops finishing in time
/// (or `max_m` is reached). A mode that timed out is not run on larger counts.
pub fn scale_sweep(base: &ScenarioConfig, step: usize, max_m: usize) -> Result<ScaleResult, ScenarioError> {
    let mut out = ScaleResult::default();
    let mut live = vec![Mode::Compositional, Mode::Monolithic];
    let mut m = step;
    while !live.is_empty() && m <= max_m && step > 0 {
        let mut c = base.clone();
        c.m = m;
        c.scenario_id = format!("{}-m{m}", base.scenario_id);
        for mode in live.clone() {
            let r = run_mode(&c, mode)?;
            out.rows.push(ResultRow::from_report(&c.scenario_id, &r));
            if r.verdict == statespace::Verdict::Timeout {
                live.retain(|&x| x != mode);
            } else if mode == Mode::Compositional {
                out.max_compositional = m;
            } else {
                out.max_monolithic = m;
            }
        }
        m += step;
    }
    Ok(out)
}

/// Batch a row belongs to: its scenario id with any `-storm<t>` part removed,
/// so one batch groups the same traffic under every storm time.
fn batch_of(id: &str) -> String {
    let mut out = String::new();
    let mut rest = id;
    while let Some(i) = rest.find("-storm") {
        out.push_str(&rest[..i]);
        let tail = &rest[i + "-storm".len()..];
        let digits = tail.bytes().take_while(|b| b.is_ascii_digit()).count();
        if digits == 0 {
            out.push_str("-storm");
        }
        rest = &tail[digits..];
    }
    out.push_str(rest);
    out
}

/// Drop every batch in which some run, in either mode, did not end compatible.
/// Returns the kept rows and the excluded batch ids.
pub fn exclude_unclean_batches(rows: &[ResultRow]) -> (Vec<ResultRow>, Vec<String>) {
    let mut bad: Vec<String> = rows.iter().filter(|r| r.verdict != "compatible").map(|r| batch_of(&r.scenario_id)).collect();
    bad.sort();
    bad.dedup();
    let kept = rows.iter().filter(|r| bad.binary_search(&batch_of(&r.scenario_id)).is_err()).cloned().collect();
    (kept, bad)
}

pub fn write_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record([
        "scenarioId",
        "mode",
        "verdict",
        "iterations",
        "finalScopeSize",
        "totalStates",
        "timedStates",
        "wallMillis",
        "peakResidentBytes",
    ])?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<(), csv::Error> {
    write_csv(rows, std::fs::File::create(path)?)
}

pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("in-memory csv");
    String::from_utf8(buf).expect("csv is utf-8")
}
