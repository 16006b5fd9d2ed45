use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use tilesim_core::scenario::{self, Report, Scenario, ScenarioError};

#[derive(Parser)]
#[command(
    name = "tilesim",
    version,
    about = "Deterministic tile testbed simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario (TOML) or exported fabric (JSON) for constraint violations.
    Validate { file: PathBuf },
    /// Run every configured stage and write the report under the output root.
    Run {
        file: PathBuf,
        /// Write the event log as events.ndjson.
        #[arg(long)]
        trace: bool,
        /// Write into this directory instead of the hash-named one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print one metric from a finished run, e.g. `sync.p99_residual_ps`.
    Report { dir: PathBuf, metric: String },
}

const EXIT_DOMAIN: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn load(file: &PathBuf) -> Result<Scenario, ExitCode> {
    Scenario::load(file).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_USAGE)
    })
}

fn validate(file: PathBuf) -> ExitCode {
    let diagnostics = if file.extension().is_some_and(|e| e == "json") {
        let text = match std::fs::read_to_string(&file) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {}: {e}", file.display());
                return ExitCode::from(EXIT_USAGE);
            }
        };
        match scenario::validate_fabric_document(&text) {
            Ok(d) => d,
            Err(e) => {
                eprintln!("error: {}: {e}", file.display());
                return ExitCode::from(EXIT_USAGE);
            }
        }
    } else {
        match load(&file) {
            Ok(s) => s.validate(),
            Err(code) => return code,
        }
    };
    for d in &diagnostics {
        println!("{d}");
    }
    if diagnostics.is_empty() {
        println!("ok: no diagnostics");
        ExitCode::SUCCESS
    } else {
        println!("{} diagnostic(s)", diagnostics.len());
        ExitCode::from(EXIT_DOMAIN)
    }
}

fn fmt_ps(v: Option<u64>) -> String {
    v.map(|p| format!("{:.3} ns", p as f64 / 1000.0))
        .unwrap_or_else(|| "-".into())
}

fn print_summary(report: &Report, dir: &std::path::Path, wall_s: f64) {
    println!("scenario  {}", report.scenario_hash);
    println!("output    {}", dir.display());
    println!(
        "tiles     {}  switches {}  links {}",
        report.fabric.tiles, report.fabric.switches, report.fabric.links
    );
    if let Some(p) = &report.power {
        println!(
            "power     grants {}  denials {}  disconnects {}  granted {:.1} W / {:.1} W",
            p.grants, p.denials, p.disconnects, p.total_granted_w, p.global_budget_w
        );
    }
    if let Some(s) = &report.sync {
        println!(
            "sync      converged {}  p50 {}  p99 {}  max {}",
            s.convergence_time_ps
                .map(|p| format!("{:.3} s", p as f64 * 1e-12))
                .unwrap_or_else(|| "never".into()),
            fmt_ps(s.p50_residual_ps),
            fmt_ps(s.p99_residual_ps),
            fmt_ps(s.max_residual_ps)
        );
    }
    if let Some(d) = &report.dataplane {
        println!(
            "dataplane produced {}  appended {}  dropped {}",
            d.produced, d.appended, d.dropped
        );
    }
    if let Some(c) = &report.coherent {
        println!(
            "coherent  N {}  mean gain {:.3}  efficiency {:.4}",
            c.n, c.mean, c.efficiency
        );
    }
    if let Some(r) = &report.rover {
        println!(
            "rover     visited {}/{}  charges {}  rms error {:.4} m  final soc {:.3}",
            r.waypoints_visited,
            r.waypoints_total,
            r.charge_events,
            r.rms_estimate_error_m,
            r.final_soc
        );
    }
    for f in &report.failures {
        println!("FAILED    {}: {}", f.stage.name(), f.message);
    }
    println!("wall time {wall_s:.2} s");
}

fn run(file: PathBuf, trace: bool, out: Option<PathBuf>) -> ExitCode {
    let s = match load(&file) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let dir = out.unwrap_or_else(|| s.output_path());
    let started = Instant::now();
    match scenario::run_in(&s, &dir, trace) {
        Ok(o) => {
            print_summary(&o.report, &o.dir, started.elapsed().as_secs_f64());
            if o.report.ok() {
                ExitCode::SUCCESS
            } else {
                eprintln!(
                    "error: run incomplete, partial outputs in {}",
                    o.dir.display()
                );
                ExitCode::from(EXIT_DOMAIN)
            }
        }
        Err(ScenarioError::Invalid(d)) => {
            for x in &d {
                eprintln!("{x}");
            }
            ExitCode::from(EXIT_DOMAIN)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DOMAIN)
        }
    }
}

fn report(dir: PathBuf, metric: String) -> ExitCode {
    let value = match scenario::read_report(&dir) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {}: {e}", dir.join("report.json").display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match scenario::lookup(&value, &metric) {
        Some(serde_json::Value::String(s)) => {
            println!("{s}");
            ExitCode::SUCCESS
        }
        Some(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        None => {
            eprintln!("unknown metric `{metric}`; available:");
            for name in scenario::metric_names(&value) {
                eprintln!("  {name}");
            }
            ExitCode::from(EXIT_DOMAIN)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Validate { file } => validate(file),
        Command::Run { file, trace, out } => run(file, trace, out),
        Command::Report { dir, metric } => report(dir, metric),
    }
}
