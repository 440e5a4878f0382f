use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rangeavoid::Method;
use rangeavoid_sim::{bundled_scenario_dir, write_outputs, Outcome, RunResult, Scenario, Simulation, SimError};
use rangeavoid_teleop::{serve_blocking, ServeConfig};

#[derive(Parser)]
#[command(name = "rangeavoid", version, about = "Range-image obstacle avoidance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        config: PathBuf,
        /// Override the avoidance method.
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write metrics.txt, ticks.tsv and timing.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the tick budget.
        #[arg(long)]
        ticks: Option<usize>,
        /// Suppress per-second progress lines.
        #[arg(long)]
        headless: bool,
    },
    /// Run every `*.toml` scenario in a directory and print a summary.
    Suite {
        dir: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        /// Per-scenario outputs go to `<out>/<file stem>/`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fly a scenario live from a browser or WebSocket client.
    Serve {
        /// Scenario name from the scenario directory, or a path to a file.
        #[arg(default_value = "gap")]
        scenario: String,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Where `load` requests look up scenarios. Defaults to the bundled set.
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
        /// Serve this directory at `/` instead of the built-in console.
        #[arg(long)]
        static_dir: Option<PathBuf>,
        /// Simulation speed relative to real time.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn out_line(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    if !text.ends_with('\n') {
        let _ = out.write_all(b"\n");
    }
}

fn load(path: &Path, method: Option<Method>, seed: Option<u64>) -> Result<Scenario, SimError> {
    let mut s = Scenario::load(path)?;
    if let Some(m) = method {
        s.method = m;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn simulate(scenario: Scenario, ticks: Option<usize>, progress: bool) -> Result<RunResult, SimError> {
    let mut sim = Simulation::new(scenario)?;
    if ticks.is_some() {
        sim.set_max_ticks(ticks);
    }
    let per_second = (1.0 / sim.scenario().params.dt).round().max(1.0) as usize;
    while sim.step(None)? {
        if progress && sim.tick_count() % per_second == 0 {
            if let Some(r) = sim.last_record() {
                eprintln!(
                    "t={:6.2} pos=({:7.2},{:7.2},{:6.2}) speed={:5.2} d_true={:6.2} {}",
                    r.t,
                    r.position.x,
                    r.position.y,
                    r.position.z,
                    r.velocity.norm(),
                    r.d_true,
                    r.regime
                );
            }
        }
    }
    Ok(sim.finish())
}

fn run(
    config: &Path,
    method: Option<Method>,
    seed: Option<u64>,
    out: Option<&Path>,
    ticks: Option<usize>,
    headless: bool,
) -> Result<Outcome, SimError> {
    let scenario = load(config, method, seed)?;
    let result = simulate(scenario, ticks, !headless)?;
    out_line(&result.metrics.to_text());
    out_line(&result.compute.to_text());
    if let Some(dir) = out {
        write_outputs(dir, &result)?;
    }
    Ok(result.metrics.success)
}

fn suite(dir: &Path, method: Option<Method>, out: Option<&Path>) -> Result<bool, SimError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| SimError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    out_line(&format!(
        "{:<22} {:<16} {:>6} {:>8} {:>7} {:>7} {:>7} {:>8} {:>8} {:>8}  success",
        "scenario", "method", "ticks", "l_path", "v_avg", "d_min", "d_avg", "d_target", "avg_ms", "max_ms"
    ));
    let mut clean = true;
    for file in &files {
        let result = simulate(load(file, method, None)?, None, false)?;
        let m = &result.metrics;
        out_line(&format!(
            "{:<22} {:<16} {:>6} {:>8.2} {:>7.2} {:>7.2} {:>7.2} {:>8.2} {:>8.2} {:>8.2}  {}",
            m.scenario,
            m.method,
            m.ticks,
            m.l_path,
            m.v_avg,
            m.d_min,
            m.d_avg,
            m.d_target,
            result.compute.avg_ms,
            result.compute.max_ms,
            m.success
        ));
        if let Some(out) = out {
            let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            write_outputs(out.join(stem), &result)?;
        }
        clean &= m.success != Outcome::Collision;
    }
    Ok(clean)
}

fn serve(
    scenario: &str,
    bind: SocketAddr,
    scenario_dir: Option<PathBuf>,
    static_dir: Option<PathBuf>,
    speed: f64,
) -> Result<bool, String> {
    let scenario_dir = scenario_dir.unwrap_or_else(bundled_scenario_dir);
    let named = scenario_dir.join(format!("{scenario}.toml"));
    let path = if named.is_file() { named } else { PathBuf::from(scenario) };
    let scenario = Scenario::load(&path).map_err(|e| e.to_string())?;
    serve_blocking(ServeConfig {
        scenario,
        bind,
        scenario_dir,
        static_dir,
        speed,
    })
    .map_err(|e| e.to_string())?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            method,
            seed,
            out,
            ticks,
            headless,
        } => run(&config, method, seed, out.as_deref(), ticks, headless)
            .map(|o| o != Outcome::Collision)
            .map_err(|e| e.to_string()),
        Command::Suite { dir, method, out } => suite(&dir, method, out.as_deref()).map_err(|e| e.to_string()),
        Command::Serve {
            scenario,
            bind,
            scenario_dir,
            static_dir,
            speed,
        } => serve(&scenario, bind, scenario_dir, static_dir, speed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
