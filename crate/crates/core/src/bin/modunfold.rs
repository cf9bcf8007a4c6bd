use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modunfold::controller::Engine;
use modunfold::harness::{self, Experiment, ExperimentSpec, Granularity};
use modunfold::Result;

/// Monte Carlo driver for the blind modulo converter.
#[derive(Parser)]
#[command(name = "modunfold", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its summaries.
    Run(Overrides),
    /// Repeat an experiment over a grid of kappa values.
    Sweep {
        #[command(flatten)]
        overrides: Overrides,
        /// comma-separated kappa values, e.g. 1.5,2,3,4
        #[arg(long, value_delimiter = ',', required = true)]
        kappa_grid: Vec<f64>,
    },
}

/// Flags override the values of the configuration file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    /// repeat to compare several engines on paired seeds
    #[arg(long = "engine")]
    engines: Vec<Engine>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    max_m: Option<u32>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    per_sample: bool,
}

impl Overrides {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::load(&self.config)?;
        if !self.engines.is_empty() {
            spec.engines = self.engines.clone();
        }
        if let Some(k) = self.kappa {
            spec.system.kappa = k;
        }
        if let Some(b) = self.bits {
            spec.system.bits = b;
        }
        if let Some(p) = self.p {
            spec.system.p = p;
        }
        if let Some(m) = self.max_m {
            spec.system.max_abs_m = m;
        }
        if let Some(n) = self.samples {
            spec.n_samples = n;
        }
        if let Some(t) = self.trials {
            spec.n_trials = t;
        }
        if let Some(s) = self.seed {
            spec.base_seed = s;
        }
        if let Some(j) = self.jobs {
            spec.jobs = j;
        }
        if let Some(o) = &self.out {
            spec.out_dir = o.clone();
        }
        if self.per_sample {
            spec.record = Granularity::PerSample;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(o) => {
            let exp = Experiment::new(o.spec()?)?;
            let reports = exp.run()?;
            for rep in &reports {
                for (engine, run) in &rep.runs {
                    if let Err(e) = run {
                        eprintln!("trial {} engine {engine} failed: {e}", rep.trial);
                    }
                }
            }
            let summaries = harness::summarize(exp.spec(), &reports)?;
            for path in harness::emit(&exp.spec().out_dir, &summaries, &reports)? {
                eprintln!("wrote {}", path.display());
            }
            for s in &summaries {
                print!("{}", harness::render_summary(s));
            }
        }
        Command::Sweep { overrides, kappa_grid } => {
            let spec = overrides.spec()?;
            for (kappa, summaries) in harness::sweep(&spec, &kappa_grid)? {
                for s in summaries {
                    println!(
                        "kappa = {kappa} engine = {} mse = {} unfold_error_rate = {}",
                        s.engine,
                        harness::fmt_f64(s.fields[0].mean),
                        harness::fmt_f64(s.fields[2].mean)
                    );
                }
            }
            eprintln!("wrote {}", spec.out_dir.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
