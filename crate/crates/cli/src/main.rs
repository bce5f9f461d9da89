use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use gridlink::grid::{calibrate, load_grid, CalibrationTarget};
use gridlink::scenario::{
    compare, emit_plotdata, parse_scenario, run, Mode, RunOptions, RunRecord, ScenarioError, ScenarioSpec, TRACE_FILE,
};

const SEED_ENV: &str = "GRIDLINK_SEED";

#[derive(Parser)]
#[command(name = "gridlink", version, about = "Run, compare and plot EV grid-integration scenarios")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its record directory.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Record directory (default: the scenario's `output`, else runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every bus publish to trace.jsonl.
        #[arg(long)]
        trace: bool,
    },
    /// Compare record directories against the first one.
    Compare {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// Print the reports as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Write two-column plot data for selected signals.
    Plot {
        run: PathBuf,
        #[arg(long = "signal", value_name = "TOPIC")]
        signals: Vec<String>,
        /// Output directory (default: <run>/plot).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a scenario file without running it.
    Validate { scenario: PathBuf },
    /// Stretch a grid's lines until a single charger and three coincident
    /// chargers produce the target voltage effects.
    CalibrateGrid {
        gridspec: PathBuf,
        /// Write the calibrated grid here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Accelerated,
    WallClock,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Accelerated => Mode::Accelerated,
            ModeArg::WallClock => Mode::WallClock,
        }
    }
}

/// An error tagged with its exit code.
struct Failure(u8, anyhow::Error);

const USAGE: u8 = 1;
const RUN: u8 = 2;
const MISMATCH: u8 = 3;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure(USAGE, e.into())
}

fn classify(e: ScenarioError) -> Failure {
    let code = match e {
        ScenarioError::SchemaMismatch { .. } => MISMATCH,
        ScenarioError::Wiring(_) => RUN,
        _ => USAGE,
    };
    Failure(code, e.into())
}

fn load_spec(path: &Path) -> Result<ScenarioSpec, Failure> {
    let mut spec = parse_scenario(path).map_err(classify)?;
    if let Ok(s) = std::env::var(SEED_ENV) {
        spec.seed = s
            .trim()
            .parse()
            .map_err(|_| usage(anyhow!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
    }
    Ok(spec)
}

fn load_record(dir: &Path) -> Result<RunRecord, Failure> {
    RunRecord::load(dir).map_err(classify)
}

fn cmd_run(scenario: &Path, mode: Option<ModeArg>, out: Option<PathBuf>, trace: bool) -> Result<(), Failure> {
    let spec = load_spec(scenario)?;
    let out = out
        .or_else(|| spec.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&spec.name));
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(|e| Failure(RUN, e))?;
    let opts = RunOptions {
        mode: mode.map(Mode::from),
        trace: (trace || spec.trace).then(|| out.join(TRACE_FILE)),
        ..RunOptions::default()
    };
    let record = run(&spec, &opts).map_err(|e| Failure(RUN, e.into()))?;
    record.write(&out).map_err(|e| Failure(RUN, e.into()))?;

    let h = &record.header;
    let d = &h.diagnostics;
    println!("{} ({:?}, seed {}) -> {}", h.scenario, h.setup, h.seed, out.display());
    println!(
        "  {} rows, {} violations, {} non-converged grid steps, balance error {:.2e}",
        record.rows.len(),
        d.violation_count,
        d.non_converged_steps,
        d.max_balance_error
    );
    for s in h.stations.iter().filter(|s| s.ev.is_some()) {
        println!("  {}: {:.1} Wh delivered", s.name, s.delivered_wh);
    }
    for r in &record.deadlines {
        println!(
            "  {}: {}/{} overruns, worst {:.3} ms late",
            r.participant, r.overruns, r.ticks_total, r.worst_lateness_ms
        );
    }
    match &h.failure {
        Some(f) => Err(Failure(RUN, anyhow!("run is non-conformant: {f}"))),
        None => Ok(()),
    }
}

fn cmd_compare(runs: &[PathBuf], json: bool) -> Result<(), Failure> {
    let records = runs
        .iter()
        .map(|p| Ok((p.display().to_string(), load_record(p)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let reports = compare(&records).map_err(classify)?;
    if json {
        let text = serde_json::to_string_pretty(&reports).expect("reports serialize");
        println!("{text}");
        return Ok(());
    }
    for r in &reports {
        println!("{} vs {}", r.run_a, r.run_b);
        println!("  {:<36} {:>12} {:>12} {:>8}", "signal", "max_abs", "mean_abs", "samples");
        for s in &r.signals {
            println!("  {:<36} {:>12.6} {:>12.6} {:>8}", s.signal, s.max_abs, s.mean_abs, s.samples);
        }
        match &r.offset {
            Some(o) => println!(
                "  {} power offset {:.2} % over {} rows, {:.0}..{:.0} s (higher: {})",
                o.station, o.percent, o.rows, o.from_s, o.to_s, o.higher
            ),
            None => println!("  power offset undefined: no co-active unconstrained rows"),
        }
    }
    Ok(())
}

fn cmd_plot(run: &Path, signals: &[String], out: Option<PathBuf>) -> Result<(), Failure> {
    let record = load_record(run)?;
    let out = out.unwrap_or_else(|| run.join("plot"));
    let manifest = emit_plotdata(&record, signals, &out).map_err(classify)?;
    for f in &manifest.files {
        println!("{} -> {} ({} rows)", f.signal, out.join(&f.file).display(), f.rows);
    }
    Ok(())
}

fn cmd_validate(scenario: &Path) -> Result<(), Failure> {
    let spec = load_spec(scenario)?;
    println!(
        "{}: {:?}, {:?}, {} stations, horizon {} s, seed {}",
        spec.name,
        spec.setup,
        spec.mode,
        spec.fleet.stations.len(),
        spec.horizon_ms() as f64 / 1e3,
        spec.seed
    );
    println!("spec hash {}", spec.hash());
    Ok(())
}

fn cmd_calibrate(path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let src = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(usage)?;
    let model = load_grid(&src)
        .with_context(|| path.display().to_string())
        .map_err(usage)?;
    let cal = calibrate(&model, &CalibrationTarget::default()).map_err(|e| Failure(RUN, e.into()))?;
    eprintln!(
        "minimum stretch {:.4}; single-charger drop {:.3} V, coincident minimum {:.3} V",
        cal.scale_min, cal.check.single_drop_v, cal.check.coincident_min_v
    );
    for l in cal.model.lines() {
        eprintln!("  {}: {} + j{} ohm", l.name, l.r_ohm, l.x_ohm);
    }
    let text = cal.model.to_toml();
    match out {
        Some(p) => fs::write(&p, text)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(|e| Failure(RUN, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Run {
            scenario,
            mode,
            out,
            trace,
        } => cmd_run(&scenario, mode, out, trace),
        Command::Compare { runs, json } => cmd_compare(&runs, json),
        Command::Plot { run, signals, out } => cmd_plot(&run, &signals, out),
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::CalibrateGrid { gridspec, out } => cmd_calibrate(&gridspec, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
