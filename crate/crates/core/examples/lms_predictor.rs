// Train the LMS predictor on an error-free unfolded stream at fixed
// resolution and watch its error spread approach the optimum.

use modunfold::modcore::{ChannelState, ModRange};
use modunfold::predictor::{PredictorConfig, PredictorState};
use modunfold::sigen::ArModel;

pub fn run_example() -> modunfold::Result<()> {
    let model = ArModel::new(vec![0.95], 1.0)?;
    let (p, alpha) = (8, 2.0);
    let (h, sigma_opt) = model.optimal_predictor_oracle(p, alpha)?;
    let mut pred = PredictorState::new(p, &PredictorConfig::default())?;
    let mut channel = ChannelState::new(ModRange::new(12)?, alpha, 1)?;
    let xs = model.generate(60_000, 2);
    let mut block = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let z = channel.next_dither();
        let v = alpha * x + z;
        if pred.window_ready() {
            let e = v - pred.predict()?;
            pred.lms_update(e);
            pred.update_sigma_p(e / alpha);
            block += (e / alpha).powi(2);
        }
        pred.push_window((v + 0.5) / alpha);
        if (i + 1) % 10_000 == 0 {
            println!("samples {:>6}: block rms {:.4}, ewma {:.4}", i + 1, (block / 10_000.0).sqrt(), pred.sigma_p_hat());
            block = 0.0;
        }
    }
    println!("optimum {sigma_opt:.4}");
    println!("tap  learned  optimal");
    for (k, (t, o)) in pred.taps().iter().zip(&h).enumerate() {
        println!("{k:>3} {:>8.4} {o:>8.4}", t / alpha);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> modunfold::Result<()> {
    run_example()
}
