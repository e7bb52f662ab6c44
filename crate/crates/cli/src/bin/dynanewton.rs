use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dynanewton::config::{DataSource, ExperimentConfig, Loss, SolverKind};
use dynanewton::experiment::{run_experiment, write_artifacts, HarnessError};
use dynanewton::plot::{plot_traces, PlotOptions, XAxis};
use dynanewton::reference::{default_cache_dir, reference_optimum, CACHE_ENV};
use dynanewton::trace::Trace;

#[derive(Parser)]
#[command(version, about = "Continuation Newton solvers for regularized ERM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum XArg {
    Epochs,
    Time,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv, stages.json and config.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's `output`, then `.`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overlay traces as a log-scale SVG chart.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "epochs")]
        x: XArg,
        /// Dotted line at each series' statistical accuracy.
        #[arg(long)]
        stat_line: bool,
        #[arg(long)]
        title: Option<String>,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Run the built-in invariant and oracle checks.
    Check,
    /// Compute (or look up) the reference optimum of a dataset.
    #[command(after_help = format!("The cache directory is taken from ${CACHE_ENV} when set."))]
    Reference {
        /// svmlight file, optionally gzip-compressed.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        nu: f64,
        #[arg(long, value_enum, default_value = "logistic")]
        loss: LossArg,
        /// Hold out this fraction before solving, as `run` does.
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Logistic,
    Quadratic,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn from_harness(e: HarnessError) -> ExitCode {
    fail(e.exit_code() as u8, e)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cache = default_cache_dir();
    match cli.command {
        Command::Run { config, out } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(2, format!("{}: {e}", config.display())),
            };
            let cfg: ExperimentConfig = match serde_json::from_str(&text) {
                Ok(c) => c,
                Err(e) => return fail(2, format!("{}: {e}", config.display())),
            };
            let dir = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("."));
            let report = match run_experiment(&cfg, Some(&cache)) {
                Ok(r) => r,
                Err(e) => return from_harness(e),
            };
            if let Err(e) = write_artifacts(&dir, &report) {
                return from_harness(e);
            }
            match (&report.failure, report.trace.last()) {
                (Some(f), _) => eprintln!("solver failed: {}", f.message),
                (None, Some(last)) => println!(
                    "{:?}: {:.3} epochs, suboptimality {:.3e}, {} stages",
                    cfg.solver,
                    last.epoch,
                    last.subopt,
                    report.stages.len()
                ),
                (None, None) => {}
            }
            if report.failure.is_none() && !report.converged {
                eprintln!("solver stopped before converging");
            }
            ExitCode::from(report.exit_code() as u8)
        }
        Command::Plot {
            out,
            x,
            stat_line,
            title,
            traces,
        } => {
            let mut series = Vec::new();
            for p in &traces {
                match Trace::read_path(p) {
                    Ok(t) => {
                        let label = p
                            .parent()
                            .and_then(|d| d.file_name())
                            .or_else(|| p.file_stem())
                            .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
                        series.push((label, t));
                    }
                    Err(e) => return fail(2, format!("{}: {e}", p.display())),
                }
            }
            let opts = PlotOptions {
                x_axis: match x {
                    XArg::Epochs => XAxis::Epochs,
                    XArg::Time => XAxis::Seconds,
                },
                stat_line,
                title,
            };
            match plot_traces(&series, &out, &opts) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(2, e),
            }
        }
        Command::Check => {
            let results = dynanewton::checks::run_all();
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            if results.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Reference {
            dataset,
            nu,
            loss,
            test_fraction,
            seed,
        } => {
            let cfg = ExperimentConfig {
                data: DataSource::Svmlight {
                    path: dataset,
                    test_path: None,
                    test_fraction,
                    split_seed: seed,
                },
                solver: SolverKind::Newton,
                loss: match loss {
                    LossArg::Logistic => Loss::Logistic,
                    LossArg::Quadratic => Loss::Quadratic,
                },
                nu_final: Some(nu),
                x0: 0.0,
                newton: Default::default(),
                continuation: Default::default(),
                lbfgs: Default::default(),
                saga: Default::default(),
                output: None,
                wall_clock: true,
            };
            let (train, _) = match dynanewton::experiment::load_data(&cfg.data) {
                Ok(d) => d,
                Err(e) => return from_harness(e),
            };
            if !(nu > 0.0 && nu.is_finite()) {
                return fail(2, format!("nu {nu} must be positive"));
            }
            match reference_optimum(&train, cfg.loss.into(), nu, Some(&cache)) {
                Ok(r) => {
                    println!("{}", serde_json::to_string_pretty(&r).expect("serializable"));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(1, e),
            }
        }
    }
}
