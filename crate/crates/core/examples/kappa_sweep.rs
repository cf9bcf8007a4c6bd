// Sweep the safety margin and tabulate how error rate trades against
// resolution. Files land in a temporary directory.

use modunfold::controller::Engine;
use modunfold::harness::{sweep, ExperimentSpec};

pub fn run_example() -> modunfold::Result<()> {
    let dir = std::env::temp_dir().join(format!("modunfold_kappa_sweep_{}", std::process::id()));
    let spec = ExperimentSpec {
        n_samples: 30_000,
        n_trials: 2,
        warmup: 5_000,
        engines: vec![Engine::Baseline, Engine::Robust],
        out_dir: dir.clone(),
        ..ExperimentSpec::default()
    };
    let points = sweep(&spec, &[1.5, 2.0, 3.0, 4.0])?;
    println!("{:>6} {:>9} {:>12} {:>12} {:>10}", "kappa", "engine", "mse", "err rate", "alpha");
    for (kappa, summaries) in &points {
        for s in summaries {
            let mean = |k: &str| s.field(k).map(|f| f.mean).unwrap_or(f64::NAN);
            println!(
                "{kappa:>6} {:>9} {:>12.4e} {:>12.4e} {:>10.4}",
                s.engine.name(),
                mean("mse"),
                mean("unfold_error_rate"),
                mean("final_alpha")
            );
        }
    }
    println!("tables written to {}", dir.display());
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}

#[allow(dead_code)]
fn main() -> modunfold::Result<()> {
    run_example()
}
