//! `jumpscope` — simulate dispersive-readout IQ traces of a three-level
//! system and benchmark jump-detection filters on them.
//!
//! Subcommands:
//!
//! * `simulate` — sample the hidden jump process and write traces;
//! * `filter`   — run the Bayesian or latching filter over a trace;
//! * `sweep`    — full simulate/filter/statistics pipeline over a
//!   `tau` or `nbar` grid.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O error,
//! 3 numerical/statistics failure.  `JUMPSCOPE_THREADS` caps the worker
//! pool (default: hardware parallelism).

mod manifest;
mod pool;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jumpscope::analysis::{
    StatsOptions, SweepAxis, SweepResult, annotate_events, sweep_point,
};
use jumpscope::config::Config;
use jumpscope::error::Error;
use jumpscope::filters::{FilterRun, JumpEvent, Predictor, run_bayes, run_latching};
use jumpscope::model::{PointerModel, StateLabel, derive_params};
use jumpscope::sim::{InitialState, NoiseMode, TrajectorySpec, simulate};
use jumpscope::trace_io;

use manifest::Manifest;

const USAGE: &str = "\
usage: jumpscope <command> [flags]

commands:
  simulate --config PATH --duration S --seed N --out DIR [--count K] [--format bin|csv]
  filter   --trace PATH --filter bayes|latch --config PATH --out DIR [--predictor phase|complex]
  sweep    --axis tau|nbar --values V1,V2,... --per-point K --config PATH --out DIR [--seed N]
";

fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(run(&args));
}

fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("jumpscope: {msg}");
            eprint!("{USAGE}");
            1
        }
        Err(CliError::Tool(err)) => {
            eprintln!("jumpscope: {err}");
            match err {
                Error::Config(_) | Error::Domain(_) | Error::Format(_) => 1,
                Error::Io(_) => 2,
                Error::Stats(_) => 3,
            }
        }
    }
}

enum CliError {
    Usage(String),
    Tool(Error),
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError::Tool(err)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let command = args.get(1).ok_or_else(|| usage("missing command"))?;
    let flags = parse_flags(&args[2..])?;
    match command.as_str() {
        "simulate" => cmd_simulate(args, flags),
        "filter" => cmd_filter(args, flags),
        "sweep" => cmd_sweep(args, flags),
        other => Err(usage(format!("unknown command '{other}'"))),
    }
}

struct Flags(Vec<(String, String)>);

impl Flags {
    fn take(&mut self, name: &str) -> Option<String> {
        let pos = self.0.iter().position(|(key, _)| key == name)?;
        Some(self.0.remove(pos).1)
    }

    fn require(&mut self, name: &str) -> Result<String, CliError> {
        self.take(name)
            .ok_or_else(|| usage(format!("missing required flag {name}")))
    }

    fn finish(self) -> Result<(), CliError> {
        if let Some((key, _)) = self.0.first() {
            return Err(usage(format!("unknown flag {key}")));
        }
        Ok(())
    }
}

fn parse_flags(args: &[String]) -> Result<Flags, CliError> {
    let mut flags = Vec::new();
    let mut iter = args.iter();
    while let Some(key) = iter.next() {
        if !key.starts_with("--") {
            return Err(usage(format!("expected a --flag, got '{key}'")));
        }
        let value = iter
            .next()
            .ok_or_else(|| usage(format!("flag {key} needs a value")))?;
        flags.push((key.clone(), value.clone()));
    }
    Ok(Flags(flags))
}

fn parse_f64(name: &str, value: &str) -> Result<f64, CliError> {
    value
        .parse::<f64>()
        .map_err(|_| usage(format!("{name}: cannot parse '{value}' as a number")))
}

fn parse_u64(name: &str, value: &str) -> Result<u64, CliError> {
    value
        .parse::<u64>()
        .map_err(|_| usage(format!("{name}: cannot parse '{value}' as an integer")))
}

fn load_config(path: &str) -> Result<(Config, String), CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        CliError::Tool(Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot read config '{path}': {e}"),
        )))
    })?;
    let config = Config::parse(&text)?;
    Ok((config, text))
}

fn ensure_out_dir(path: &str) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(path);
    fs::create_dir_all(&dir).map_err(|e| {
        CliError::Tool(Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot create output directory '{path}': {e}"),
        )))
    })?;
    Ok(dir)
}

fn cmd_simulate(args: &[String], mut flags: Flags) -> Result<(), CliError> {
    let started = Instant::now();
    let (config, config_text) = load_config(&flags.require("--config")?)?;
    let duration = parse_f64("--duration", &flags.require("--duration")?)?;
    let seed = parse_u64("--seed", &flags.require("--seed")?)?;
    let out_dir = ensure_out_dir(&flags.require("--out")?)?;
    let count = match flags.take("--count") {
        Some(v) => parse_u64("--count", &v)? as usize,
        None => 1,
    };
    let format = flags.take("--format").unwrap_or_else(|| "bin".into());
    if format != "bin" && format != "csv" {
        return Err(usage(format!("--format must be bin or csv, got '{format}'")));
    }
    flags.finish()?;
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }

    let params = derive_params(&config)?;
    let pointer = PointerModel::from_params(&params, &config.squeeze)?;
    let noise = if config.has_squeeze() {
        NoiseMode::Squeezed
    } else {
        NoiseMode::Isotropic
    };

    let results = pool::run_jobs(count, |i| -> Result<String, Error> {
        let spec = TrajectorySpec {
            duration,
            seed: seed + i as u64,
            initial_state: InitialState::Stationary,
            noise,
        };
        let trace = simulate(&params, &pointer, &spec)?;
        let name = match format.as_str() {
            "csv" => {
                let name = format!("trace_{}.csv", spec.seed);
                trace_io::write_trace_csv_file(out_dir.join(&name), &trace)?;
                name
            }
            _ => {
                let name = format!("trace_{}.iqtr", spec.seed);
                trace_io::write_trace_file(out_dir.join(&name), &trace)?;
                name
            }
        };
        Ok(name)
    });

    let mut manifest = Manifest::new(args.join(" "), config_text);
    for (i, result) in results.into_iter().enumerate() {
        manifest.seed(seed + i as u64);
        manifest.output(&result?);
    }
    manifest.wall_clock(started.elapsed().as_secs_f64());
    manifest.write(&out_dir).map_err(Error::Io)?;
    Ok(())
}

fn read_trace_any(path: &str) -> Result<jumpscope::model::IQTrace, Error> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot read trace '{path}': {e}"),
        ))
    })?;
    if bytes.starts_with(&trace_io::TRACE_MAGIC) {
        trace_io::read_trace_bin(bytes.as_slice())
    } else {
        trace_io::read_trace_csv(bytes.as_slice())
    }
}

fn cmd_filter(args: &[String], mut flags: Flags) -> Result<(), CliError> {
    let started = Instant::now();
    let trace_path = flags.require("--trace")?;
    let which = flags.require("--filter")?;
    if which != "bayes" && which != "latch" {
        return Err(usage(format!("--filter must be bayes or latch, got '{which}'")));
    }
    let (config, config_text) = load_config(&flags.require("--config")?)?;
    let out_dir = ensure_out_dir(&flags.require("--out")?)?;
    let predictor = match flags.take("--predictor") {
        Some(v) => Predictor::parse(&v)
            .ok_or_else(|| usage(format!("--predictor must be phase or complex, got '{v}'")))?,
        None => Predictor::Phase,
    };
    flags.finish()?;

    let params = derive_params(&config)?;
    let pointer = PointerModel::from_params(&params, &config.squeeze)?;
    let filterp = config.filter_params()?;

    let trace = read_trace_any(&trace_path)?;
    // the trace header is authoritative; a conflicting config is an error,
    // not a silent override
    if trace.dt != params.tau {
        return Err(CliError::Tool(Error::Config(format!(
            "trace tau {:e} s does not match config tau_s {:e} s",
            trace.dt, params.tau
        ))));
    }

    let initial = trace
        .truth
        .as_ref()
        .map(|t| t[0].state)
        .unwrap_or(StateLabel::G);
    let run = match which.as_str() {
        "bayes" => run_bayes(&trace, &params, &pointer, &filterp, predictor, initial),
        _ => run_latching(&trace, &pointer, &params, initial),
    };
    if run.degenerate_updates > 0 {
        eprintln!(
            "jumpscope: {} update(s) had fully underflowed likelihoods and fell back to the prior",
            run.degenerate_updates
        );
    }

    // annotate declarations with the matching ground-truth jump times when
    // the trace carries truth
    let events = match &trace.truth {
        Some(truth) => {
            annotate_events(&run.events, truth, StatsOptions::from_params(&params).window)
        }
        None => run.events.clone(),
    };

    write_events_csv(&out_dir.join("events.csv"), &events)?;
    write_states_csv(&out_dir.join("states.csv"), &trace, &run)?;

    let mut manifest = Manifest::new(args.join(" "), config_text);
    manifest.output("events.csv");
    manifest.output("states.csv");
    manifest.wall_clock(started.elapsed().as_secs_f64());
    manifest.write(&out_dir).map_err(Error::Io)?;
    Ok(())
}

fn write_events_csv(path: &Path, events: &[JumpEvent]) -> Result<(), Error> {
    let mut text = String::from("from,to,depart_s,declare_s,detection_s,true_s\n");
    for event in events {
        let true_s = event
            .true_time
            .map(|t| t.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            text,
            "{},{},{},{},{},{true_s}",
            event.from,
            event.to,
            event.depart_time,
            event.declare_time,
            event.detection_time()
        );
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_states_csv(
    path: &Path,
    trace: &jumpscope::model::IQTrace,
    run: &FilterRun,
) -> Result<(), Error> {
    let mut text = String::new();
    match &run.probs {
        Some(probs) => {
            text.push_str("time_s,state,p_g,p_e,p_f\n");
            for (k, (state, p)) in run.states.iter().zip(probs).enumerate() {
                let _ = writeln!(
                    text,
                    "{},{},{:.6},{:.6},{:.6}",
                    trace.sample_time(k),
                    state,
                    p[StateLabel::G],
                    p[StateLabel::E],
                    p[StateLabel::F]
                );
            }
        }
        None => {
            text.push_str("time_s,state\n");
            for (k, state) in run.states.iter().enumerate() {
                let _ = writeln!(text, "{},{}", trace.sample_time(k), state);
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}

fn cmd_sweep(args: &[String], mut flags: Flags) -> Result<(), CliError> {
    let started = Instant::now();
    let axis = flags.require("--axis")?;
    let axis = SweepAxis::parse(&axis)
        .ok_or_else(|| usage(format!("--axis must be tau or nbar, got '{axis}'")))?;
    let values_text = flags.require("--values")?;
    let per_point = parse_u64("--per-point", &flags.require("--per-point")?)? as usize;
    let (config, config_text) = load_config(&flags.require("--config")?)?;
    let out_dir = ensure_out_dir(&flags.require("--out")?)?;
    let seed = match flags.take("--seed") {
        Some(v) => parse_u64("--seed", &v)?,
        None => 1000,
    };
    flags.finish()?;

    let mut values: Vec<f64> = values_text
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| parse_f64("--values", v.trim()))
        .collect::<Result<Vec<f64>, _>>()?;
    if values.is_empty() {
        return Err(usage("--values must list at least one grid point"));
    }
    if per_point == 0 {
        return Err(usage("--per-point must be at least 1"));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();

    let results = pool::run_jobs(values.len(), |i| {
        sweep_point(
            &config,
            axis,
            values[i],
            per_point,
            seed + (i * per_point) as u64,
        )
    });
    let points = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let sweep = SweepResult::new(axis, points)?;

    let mut manifest = Manifest::new(args.join(" "), config_text);
    manifest.seed(seed);
    fs::write(out_dir.join("sweep.csv"), sweep.to_csv()).map_err(Error::Io)?;
    manifest.output("sweep.csv");
    for point in &sweep.points {
        for (name, stats) in [("bayes", &point.bayes), ("latch", &point.latch)] {
            let file = format!("hist_{}_{}_{name}.csv", axis.name(), point.value);
            fs::write(out_dir.join(&file), stats.histogram_csv()).map_err(Error::Io)?;
            manifest.output(&file);
        }
    }
    manifest.wall_clock(started.elapsed().as_secs_f64());
    manifest.write(&out_dir).map_err(Error::Io)?;
    Ok(())
}
