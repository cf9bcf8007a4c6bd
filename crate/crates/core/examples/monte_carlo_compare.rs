// Paired Monte Carlo comparison of the three engines. Every engine sees the
// same input and dither per trial, so differences come from the unfolder.

use modunfold::controller::{Engine, SystemConfig};
use modunfold::harness::{render_summary, summarize, Experiment, ExperimentSpec};

pub fn run_example() -> modunfold::Result<()> {
    let spec = ExperimentSpec {
        system: SystemConfig {
            kappa: 3.0,
            ..SystemConfig::default()
        },
        n_samples: 30_000,
        n_trials: 4,
        warmup: 5_000,
        engines: vec![Engine::Baseline, Engine::Robust, Engine::Oracle],
        ..ExperimentSpec::default()
    };
    let exp = Experiment::new(spec)?;
    let reports = exp.run()?;
    for s in summarize(exp.spec(), &reports)? {
        // bare keys carry the trial means; dotted keys hold the spread
        let means = render_summary(&s);
        for line in means.lines().filter(|l| !l.split(" = ").next().unwrap_or("").contains('.')) {
            println!("{line}");
        }
        println!();
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> modunfold::Result<()> {
    run_example()
}
