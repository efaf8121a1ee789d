use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use contactdiff::lcp::parse_problem;
use contactdiff::DantzigOptions;
use contactdiff_cli::experiments::{self, OptimizeReport};
use contactdiff_cli::scene::MaxStepConfig;
use contactdiff_cli::{CliError, Result, SceneConfig};
use serde::Serialize;

/// Differentiable planar rigid-body contact simulator.
#[derive(Debug, Parser)]
#[command(name = "contactdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Step without continuous collision detection (discrete control mode).
    #[arg(long, global = true)]
    no_ccd: bool,

    /// Use the uncorrected friction max-step rule. Test-only.
    #[arg(long, global = true)]
    legacy_maxstep: bool,

    /// Directory for trajectory, metrics and report files.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scene and report its metrics.
    Simulate { scene: PathBuf },
    /// Gradient-based optimization experiments.
    Optimize {
        #[command(subcommand)]
        kind: OptimizeKind,
    },
    /// Friction experiments on boxes.
    Experiment { kind: ExperimentKind, scene: PathBuf },
    /// Compare analytic gradients with central differences.
    Gradcheck { scene: PathBuf },
    /// Standalone LCP tools.
    Lcp {
        #[command(subcommand)]
        command: LcpCommand,
    },
}

#[derive(Debug, Subcommand)]
enum OptimizeKind {
    /// Fit the striking ball's initial velocity so the target ball ends at
    /// the requested position.
    TwoBall {
        scene: PathBuf,
        /// Override the scene's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExperimentKind {
    Slide,
    Push,
}

#[derive(Debug, Subcommand)]
enum LcpCommand {
    /// Solve a problem file with the pivoting solver and validate it.
    Solve { file: PathBuf },
}

/// Outcome of a command: the summary printed on stdout and whether every
/// validation it performed passed.
struct Outcome {
    summary: serde_json::Value,
    valid: bool,
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(io_err(&path))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let w = create(dir, name)?;
    serde_json::to_writer_pretty(w, value).map_err(|e| io_err(&path)(e.into()))
}

fn write_epochs(dir: &Path, report: &OptimizeReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(dir, "epochs.csv")?);
    w.write_record(["epoch", "loss", "vx_mps", "vy_mps", "grad_vx", "grad_vy", "learning_rate"])?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.loss.to_string(),
            e.velocity_mps[0].to_string(),
            e.velocity_mps[1].to_string(),
            e.gradient[0].to_string(),
            e.gradient[1].to_string(),
            e.learning_rate.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn load_scene(path: &Path, cli: &Cli) -> Result<SceneConfig> {
    let mut scene = SceneConfig::load(path)?;
    if cli.no_ccd {
        scene.solver.ccd = false;
    }
    if cli.legacy_maxstep {
        scene.solver.max_step = MaxStepConfig::Legacy;
    }
    Ok(scene)
}

fn simulate_and_write(scene: &SceneConfig, out: Option<&Path>) -> Result<experiments::Run> {
    let run = experiments::simulate(scene)?;
    if let Some(dir) = out {
        run.metrics.write_csv(scene, create(dir, "trajectory.csv")?)?;
        write_json(dir, "metrics.json", &run.metrics)?;
    }
    Ok(run)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simulate { scene } => {
            let scene = load_scene(scene, cli)?;
            let run = simulate_and_write(&scene, out)?;
            let s = &run.metrics.summary;
            Ok(Outcome {
                valid: s.lcp_failures.is_empty(),
                summary: to_value(s),
            })
        }
        Command::Optimize {
            kind: OptimizeKind::TwoBall { scene, epochs },
        } => {
            let scene = load_scene(scene, cli)?;
            let report = experiments::optimize_two_ball(&scene, *epochs)?;
            for note in &report.assumptions {
                eprintln!("assumption: {note}");
            }
            for &k in &report.halvings {
                eprintln!("epoch {k}: loss diverged, learning rate halved");
            }
            if let Some(dir) = out {
                write_epochs(dir, &report)?;
                write_json(dir, "metrics.json", &report)?;
            }
            let mut summary = to_value(&report);
            summary.as_object_mut().expect("report is an object").remove("epochs");
            Ok(Outcome { summary, valid: true })
        }
        Command::Experiment { kind, scene } => {
            let scene = load_scene(scene, cli)?;
            if let Some(dir) = out {
                simulate_and_write(&scene, Some(dir))?;
            }
            let (report, failures) = match kind {
                ExperimentKind::Slide => {
                    let r = experiments::slide(&scene)?;
                    let n = r.lcp_failures;
                    (to_value(&r), n)
                }
                ExperimentKind::Push => {
                    let r = experiments::push(&scene)?;
                    let n = r.lcp_failures;
                    (to_value(&r), n)
                }
            };
            if let Some(dir) = out {
                write_json(dir, "experiment.json", &report)?;
            }
            Ok(Outcome {
                summary: report,
                valid: failures == 0,
            })
        }
        Command::Gradcheck { scene } => {
            let scene = load_scene(scene, cli)?;
            let report = experiments::gradcheck(&scene)?;
            if let Some(dir) = out {
                write_json(dir, "fd_report.json", &report)?;
            }
            Ok(Outcome {
                valid: report.passed,
                summary: to_value(&report),
            })
        }
        Command::Lcp {
            command: LcpCommand::Solve { file },
        } => {
            let text = std::fs::read_to_string(file).map_err(io_err(file))?;
            let problem = parse_problem(&text)?;
            let opts = if cli.legacy_maxstep {
                DantzigOptions::legacy()
            } else {
                DantzigOptions::default()
            };
            let report = experiments::solve_lcp(&problem, &opts)?;
            if let Some(dir) = out {
                write_json(dir, "solution.json", &report)?;
            }
            Ok(Outcome {
                valid: report.valid,
                summary: to_value(&report),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(outcome) => {
            let text = serde_json::to_string_pretty(&outcome.summary).expect("summary serializes");
            // a closed pipe downstream is not an error of the run
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            if outcome.valid {
                ExitCode::SUCCESS
            } else {
                eprintln!("validation failed");
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
