mod serve;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deniro_core::mapping::{survey_map, wall_bounds, SurveyParams};
use deniro_core::orchestrator::session::{Outcome, RunSummary, Session};
use deniro_core::orchestrator::trace::{command_log, parse_trace, TraceWriter};
use deniro_core::orchestrator::TraceEvent;
use deniro_core::scenario::{Scenario, WorldSpec};
use deniro_core::sim::LidarParams;
use deniro_core::world::save_map;
use deniro_core::{Error, Pose2D};

const EXIT_FAULT: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "deniro", version, about = "Simulated caregiver-assistant robot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Survey a world file with the simulated lidar and write `<prefix>.pgm` and `<prefix>.yaml`.
    BuildMap {
        world: PathBuf,
        out_prefix: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        resolution: f64,
        /// Where the survey starts, `x,y`; defaults to the middle of the walls' bounding box.
        #[arg(long, value_parser = parse_xy)]
        start: Option<(f64, f64)>,
    },
    /// Run a scenario to completion.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Tick budget; overrides the scenario's `max_ticks`.
        #[arg(long)]
        ticks: Option<u64>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Print only the final summary.
        #[arg(long)]
        headless: bool,
        /// Feed the commands recorded in this trace instead of the scenario script.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Run a scenario live and serve it over WebSocket.
    Serve {
        scenario: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Ticks per second.
        #[arg(long, default_value_t = 20.0)]
        rate: f64,
        /// Stop after this many ticks.
        #[arg(long)]
        max_ticks: Option<u64>,
    },
}

fn parse_xy(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let f = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((f(x)?, f(y)?))
}

/// Failure classes that map onto exit codes.
enum Failure {
    Config(anyhow::Error),
    Fault(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildMap { world, out_prefix, resolution, start } => build_map(&world, &out_prefix, resolution, start),
        Command::Run { scenario, seed, ticks, trace, headless, replay } => {
            run(&scenario, seed, ticks, trace.as_deref(), headless, replay.as_deref())
        }
        Command::Serve { scenario, port, bind, seed, trace, rate, max_ticks } => {
            serve::Options { bind, port, seed, trace, rate, max_ticks }.serve(&scenario).map_err(Failure::from)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Fault(summary)) => {
            eprintln!("{summary}");
            ExitCode::from(EXIT_FAULT)
        }
    }
}

fn build_map(world: &Path, prefix: &Path, resolution: f64, start: Option<(f64, f64)>) -> Result<(), Failure> {
    let spec = WorldSpec::load(world)?;
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Failure::Config(anyhow::anyhow!("resolution must be positive")));
    }
    let walls = spec.segments();
    let (x, y) = start.unwrap_or_else(|| match wall_bounds(&walls) {
        Some(b) => (0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3])),
        None => (0.0, 0.0),
    });
    let params = SurveyParams { resolution, ..SurveyParams::default() };
    let grid = survey_map(&walls, &Pose2D::new(x, y, 0.0), &LidarParams::default(), &params);
    save_map(&grid, prefix)?;
    let occupied = grid.occupied_cells().count();
    println!(
        "wrote {}.pgm ({}x{} cells, {occupied} occupied)",
        prefix.display(),
        grid.width(),
        grid.height()
    );
    Ok(())
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn summary_line(s: &RunSummary) -> String {
    format!(
        "outcome: {:?}, ticks: {}, final state: {}, collisions: {}, replans: {}",
        s.outcome,
        s.ticks,
        s.final_state.name(),
        s.collisions,
        s.replans
    )
}

fn run(
    path: &Path,
    seed: Option<u64>,
    ticks: Option<u64>,
    trace: Option<&Path>,
    headless: bool,
    replay: Option<&Path>,
) -> Result<(), Failure> {
    let scenario = load_scenario(path, seed)?;
    let budget = ticks.unwrap_or(scenario.max_ticks);
    let mut log = match replay {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
            Some(command_log(&parse_trace(&text)?).into_iter().peekable())
        }
        None => None,
    };
    let mut session = Session::new(scenario, log.is_none())?;
    let mut writer = match trace {
        Some(p) => {
            let f = File::create(p).map_err(|e| anyhow::anyhow!("{}: {e}", p.display()))?;
            Some(TraceWriter::new(BufWriter::new(f)))
        }
        None => None,
    };
    let stdout = std::io::stdout();
    while session.outcome().is_none() && session.tick_count() < budget {
        if let Some(log) = log.as_mut() {
            while log.peek().is_some_and(|(t, _)| *t <= session.tick_count() + 1) {
                session.enqueue(log.next().expect("peeked").1);
            }
        }
        let record = session.step();
        if let Some(w) = writer.as_mut() {
            w.write(&record)?;
        }
        if !headless {
            let mut out = stdout.lock();
            for e in &record.events {
                let line = match e {
                    TraceEvent::Transition { from, to, cause } => format!("{from} -> {to} ({cause})"),
                    TraceEvent::Say { text } => format!("robot: {text}"),
                    TraceEvent::Warning { text } => format!("warning: {text}"),
                    TraceEvent::Replan { reason } => format!("replan: {reason}"),
                    _ => continue,
                };
                let _ = writeln!(out, "[{:>5}] {line}", record.tick);
            }
        }
    }
    let summary = session.summary();
    if summary.outcome == Outcome::Completed {
        println!("{}", summary_line(&summary));
        Ok(())
    } else {
        Err(Failure::Fault(summary_line(&summary)))
    }
}
