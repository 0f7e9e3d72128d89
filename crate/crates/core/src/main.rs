use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use multiarm::design::{design_curves, resolve_design, simulate_design, DesignReport, SimulationReport};
use multiarm::report::{render, ReportFormat};
use multiarm::scenario::DesignScenario;
use multiarm::service::{self, ServiceConfig, DEFAULT_FAST_PATH_MAX_K, DEFAULT_REPLICATES, DEFAULT_SEED};
use multiarm::Error;

/// Sample size, operating characteristics and reports for multi-arm
/// trials with a shared control arm.
#[derive(Parser)]
#[command(name = "multiarm", version)]
struct Cli {
    /// Directory for output files (created if missing).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Md)]
    format: Format,

    /// Seed for the randomised integration (design, curves) or the trial
    /// simulation (simulate). Overrides `qmc.seed` in the scenario file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of grid points per plotted curve, overriding `plot.quality`.
    #[arg(long, global = true)]
    quality: Option<usize>,

    /// Round sample sizes up to whole patients, overriding `integer_n`.
    #[arg(long, global = true)]
    integer_n: bool,

    /// Worker threads for the numerical engine (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Md,
    Html,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Md => ReportFormat::Md,
            Format::Html => ReportFormat::Html,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Resolve a scenario: writes design.json, report.<format> and, when
    /// plotting is enabled, curves.csv.
    Design {
        /// Scenario file (JSON).
        scenario: PathBuf,
    },
    /// Simulate a design and compare with the analytic operating
    /// characteristics: writes simulation.json and simulation.csv.
    Simulate {
        /// Scenario file the design was computed from.
        scenario: PathBuf,
        /// Design file written by `design`.
        design: PathBuf,
        /// Simulated trials per truth (at least 1000).
        #[arg(long, default_value_t = DEFAULT_REPLICATES)]
        replicates: u64,
    },
    /// Curve data for a design: writes curves.csv.
    Curves {
        /// Scenario file the design was computed from.
        scenario: PathBuf,
        /// Design file written by `design`.
        design: PathBuf,
    },
    /// Write the default scenario (scenario.json under --out, or standard
    /// output when --out is not given).
    #[command(alias = "reset-defaults")]
    Defaults,
    /// Run the HTTP service.
    Serve {
        /// Address to listen on.
        #[arg(long, env = "MULTIARM_BIND", default_value = "127.0.0.1:8080")]
        bind: String,
        /// Maximum number of concurrent computations (default: all cores).
        #[arg(long, env = "MULTIARM_WORKERS")]
        workers: Option<usize>,
        /// Largest K answered synchronously for single-step corrections.
        #[arg(long, env = "MULTIARM_FAST_PATH_MAX_K", default_value_t = DEFAULT_FAST_PATH_MAX_K)]
        fast_path_max_k: usize,
        /// Queue every design request as a job.
        #[arg(long)]
        no_fast_path: bool,
        /// File in which the job registry is persisted.
        #[arg(long, env = "MULTIARM_PERSIST", value_name = "FILE")]
        persist: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .chain()
                .find_map(|c| c.downcast_ref::<Error>())
                .is_some_and(Error::is_validation);
            ExitCode::from(if validation { 2 } else { 3 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Design { scenario } => {
            let scenario = load_scenario(scenario, &cli)?;
            for w in multiarm::design::runtime_warnings(&scenario) {
                eprintln!("warning: {}", w.message);
            }
            let report = resolve_design(&scenario)?;
            ensure_dir(&out)?;
            write_atomic(&out.join("design.json"), &report.to_json())?;
            let curve_file = report.curves.as_ref().map(|c| {
                write_atomic(&out.join("curves.csv"), &c.to_csv()).map(|()| "curves.csv")
            });
            let curve_file = curve_file.transpose()?;
            let format = ReportFormat::from(cli.format);
            let name = format!("report.{}", format.extension());
            write_atomic(&out.join(&name), &render(&report, format, curve_file))?;
            let d = &report.design;
            println!(
                "n = [{:.2}, {}], total {:.2}, achieved power {:.4}",
                d.sizes.n0,
                d.sizes.n.iter().map(|n| format!("{n:.2}")).collect::<Vec<_>>().join(", "),
                d.total_n,
                d.achieved_power
            );
        }
        Command::Simulate { scenario, design, replicates } => {
            let report = load_design(scenario, design, &cli)?;
            let seed = cli.seed.unwrap_or(DEFAULT_SEED);
            let sim = simulate_design(&report.design, *replicates, seed)?;
            ensure_dir(&out)?;
            write_atomic(
                &out.join("simulation.json"),
                &serde_json::to_string_pretty(&sim).expect("simulation serialises"),
            )?;
            write_atomic(&out.join("simulation.csv"), &simulation_csv(&sim))?;
            println!("max abs difference {:.3e} over {} replicates", sim.max_abs_diff, sim.replicates);
        }
        Command::Curves { scenario, design } => {
            let report = load_design(scenario, design, &cli)?;
            let quality = cli.quality.unwrap_or(report.design.scenario.plot.quality);
            let curves = design_curves(&report.design, quality)?;
            ensure_dir(&out)?;
            write_atomic(&out.join("curves.csv"), &curves.to_csv())?;
        }
        Command::Defaults => {
            let text = DesignScenario::defaults().to_json();
            match &cli.out {
                Some(dir) => {
                    ensure_dir(dir)?;
                    write_atomic(&dir.join("scenario.json"), &text)?;
                }
                None => println!("{text}"),
            }
        }
        Command::Serve { bind, workers, fast_path_max_k, no_fast_path, persist } => {
            let mut config = ServiceConfig {
                fast_path_max_k: (!no_fast_path).then_some(*fast_path_max_k),
                persist_path: persist.clone(),
                ..ServiceConfig::default()
            };
            if let Some(w) = workers {
                config.workers = *w;
            }
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            eprintln!("listening on {bind}");
            rt.block_on(service::serve(bind, config))
                .with_context(|| format!("serving on {bind}"))?;
        }
    }
    Ok(())
}

fn load_scenario(path: &Path, cli: &Cli) -> Result<DesignScenario> {
    let text = fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let mut s = DesignScenario::from_json(&text)
        .with_context(|| format!("in scenario file {}", path.display()))?;
    if let Some(seed) = cli.seed {
        s.qmc.seed = seed;
    }
    if let Some(q) = cli.quality {
        s.plot.quality = q;
    }
    if cli.integer_n {
        s.integer_n = true;
    }
    s.validate()?;
    Ok(s)
}

/// Reads a design file and checks that it belongs to the scenario file.
fn load_design(scenario: &Path, design: &Path, cli: &Cli) -> Result<DesignReport> {
    let s = load_scenario(scenario, cli)?;
    let text = fs::read_to_string(design)
        .map_err(|source| Error::Io { path: design.to_path_buf(), source })?;
    let report: DesignReport = serde_json::from_str(&text).map_err(|e| {
        Error::validation("design", format!("{}: {e}", design.display()))
    })?;
    let strip = |s: &DesignScenario| {
        let mut s = s.clone();
        s.qmc = Default::default();
        s.plot = Default::default();
        s
    };
    if strip(&s) != strip(&report.design.scenario) {
        return Err(Error::validation(
            "design",
            format!("{} was computed for a different scenario", design.display()),
        )
        .into());
    }
    Ok(report)
}

fn simulation_csv(sim: &SimulationReport) -> String {
    let mut out = String::from("truth,quantity,arm,simulated,standard_error,analytic,abs_diff\n");
    for row in &sim.rows {
        let entries = row
            .simulated
            .entries()
            .into_iter()
            .zip(row.standard_errors.entries())
            .zip(row.analytic.entries());
        for ((s, se), a) in entries {
            let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            let diff = match (s.value, a.value) {
                (Some(x), Some(y)) => (x - y).abs().to_string(),
                _ => String::new(),
            };
            let arm = s.arm.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{arm},{},{},{},{diff}",
                row.label,
                s.quantity,
                cell(s.value),
                cell(se.value),
                cell(a.value)
            );
        }
    }
    out
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    Ok(())
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, contents)
        .and_then(|()| fs::rename(&tmp, path))
        .map_err(|source| {
            let _ = fs::remove_file(&tmp);
            Error::Io { path: path.to_path_buf(), source }
        })?;
    Ok(())
}
