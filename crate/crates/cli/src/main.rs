use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use tsdmd_core::experiment::{
    read_registration, read_snapshots, registration_summary, run_hf, run_register, run_train_eval, write_registration, write_report,
    write_snapshots, EvalReport, ExperimentConfig,
};
use tsdmd_core::{io, Error};

/// Transformed-snapshot DMD for hyperbolic problems.
#[derive(Parser)]
#[command(name = "tsdmd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the full-order problem at the training times.
    HfSolve(Common),
    /// Register the snapshots written by `hf-solve`.
    Register(Common),
    /// Train TS-DMD and DMD and evaluate them against fresh solves.
    TrainEval(Common),
    /// Run all stages for one or more benchmarks.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Benchmarks to run when no config is given.
        #[arg(long, value_delimiter = ',', default_value = "test1,test2,test3")]
        cases: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: test1, test2, test3, test3-window08, test3-tref1.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the sampling seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    /// Resolves the configuration: explicit file, preset, or the one saved
    /// by an earlier stage in the output directory.
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut c = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => {
                let saved = self.out.join("config.json");
                if !saved.exists() {
                    return Err(Error::InvalidArgument(format!("no --config or --preset given and {} does not exist", saved.display())));
                }
                ExperimentConfig::load(&saved)?
            }
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.validate()?;
        Ok(c)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidGrid(_)
        | Error::GridMismatch(_)
        | Error::InvalidArgument(_)
        | Error::Unsupported(_)
        | Error::Format(_)
        | Error::Json(_) => 2,
        Error::NonFinite(_) | Error::Solver { .. } | Error::Numerical(_) => 3,
        Error::Io(_) => 1,
    }
}

fn hf_stage(c: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out)?;
    io::write_json(&out.join("config.json"), c)?;
    let snaps = run_hf(c)?;
    write_snapshots(out, &snaps)?;
    info!("wrote {} snapshots to {}", snaps.len(), out.display());
    Ok(())
}

fn register_stage(c: &ExperimentConfig, out: &Path) -> Result<(), Error> {
    let snaps = read_snapshots(out)?;
    let reg = run_register(c, &snaps)?;
    write_registration(out, &reg)?;
    let warnings = reg.transforms.warnings();
    if warnings > 0 {
        log::warn!("{warnings} snapshots did not converge; see registration.csv");
    }
    Ok(())
}

fn train_eval_stage(c: &ExperimentConfig, out: &Path) -> Result<EvalReport, Error> {
    let snaps = read_snapshots(out)?;
    let (transforms, g, phi, inversion) = read_registration(out)?;
    let summary = registration_summary(&transforms, &inversion, &[]);
    let report = run_train_eval(c, &snaps, &g, &phi, Some(summary))?;
    write_report(out, &report)?;
    print_summary(&report);
    Ok(report)
}

fn print_summary(r: &EvalReport) {
    println!("{}", r.config.name);
    println!("{:>4} {:>14} {:>14} {:>14} {:>14}", "n", "TS-DMD interp", "DMD interp", "TS-DMD extrap", "DMD extrap");
    for re in &r.ranks {
        println!(
            "{:>4} {:>14.4e} {:>14.4e} {:>14.4e} {:>14.4e}",
            re.n, re.tsdmd[0].average[0], re.dmd[0].average[0], re.tsdmd[1].average[0], re.dmd[1].average[0]
        );
    }
    let t = &r.timing.report;
    println!("speedup (n = {}): {:.1}", r.timing.n, t.speedup);
    for j in &r.jacobian {
        let m = j.minima.iter().copied().fold(f64::INFINITY, f64::min);
        println!("min Jacobian of the inverse maps (n = {}): {m:.4}", j.n);
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::HfSolve(a) => hf_stage(&a.config()?, &a.out),
        Command::Register(a) => register_stage(&a.config()?, &a.out),
        Command::TrainEval(a) => train_eval_stage(&a.config()?, &a.out).map(|_| ()),
        Command::Bench { common, cases } => {
            let configs = if common.config.is_some() || common.preset.is_some() {
                vec![common.config()?]
            } else {
                cases
                    .iter()
                    .map(|name| {
                        let mut c = ExperimentConfig::preset(name)?;
                        if let Some(s) = common.seed {
                            c.seed = s;
                        }
                        Ok(c)
                    })
                    .collect::<Result<Vec<_>, Error>>()?
            };
            for c in &configs {
                let dir = common.out.join(&c.name);
                hf_stage(c, &dir)?;
                register_stage(c, &dir)?;
                train_eval_stage(c, &dir)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
