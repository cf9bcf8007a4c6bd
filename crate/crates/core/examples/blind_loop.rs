// Run the blind closed loop sample by sample and print how the resolution
// climbs from its cautious start to the level allowed by the margin.

use modunfold::controller::{asymptotic_alpha, Engine, LoopState, SystemConfig};
use modunfold::sigen::ArModel;

pub fn run_example() -> modunfold::Result<()> {
    let model = ArModel::new(vec![0.95], 1.0)?;
    let cfg = SystemConfig {
        engine: Engine::Robust,
        kappa: 3.0,
        ..SystemConfig::default()
    };
    let xs = model.generate(60_000, 5);
    let (mut state, boot) = LoopState::init(&cfg, &xs, 6, None)?;
    println!("bootstrap samples {}, alpha after bootstrap {:.4}", boot.len(), state.alpha());
    let mut sq = 0.0;
    let mut errors = 0;
    for (i, &x) in xs[boot.len()..].iter().enumerate() {
        let r = state.step(x)?;
        sq += r.sq_err;
        errors += (!r.detect_ok) as u32;
        if (i + 1) % 10_000 == 0 {
            println!(
                "n {:>6}: alpha {:.4}, block mse {:.3e}, unfold errors {errors}",
                r.n,
                r.alpha,
                sq / 10_000.0
            );
            sq = 0.0;
            errors = 0;
        }
    }
    let target = asymptotic_alpha(&model.oracle(cfg.p)?, cfg.p, cfg.bits, cfg.kappa)?;
    println!("asymptotic alpha {target:.4}, mitigation events {}", state.mitigation_events());
    Ok(())
}

#[allow(dead_code)]
fn main() -> modunfold::Result<()> {
    run_example()
}
