// Generate an AR(2) process and compare its sample autocovariance with the
// closed-form oracle. Also prints the optimal order-p predictor and the
// resolution the loop settles at for a few margins.

use modunfold::controller::asymptotic_alpha;
use modunfold::sigen::ArModel;

pub fn run_example() -> modunfold::Result<()> {
    let model = ArModel::new(vec![1.2, -0.5], 1.0)?;
    let oracle = model.autocorr_oracle(4)?;
    let xs = model.generate(200_000, 3);
    println!("{:>4} {:>12} {:>12}", "lag", "oracle", "sample");
    for (lag, r) in oracle.iter().enumerate() {
        let n = xs.len() - lag;
        let est = xs[..n].iter().zip(&xs[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        println!("{lag:>4} {r:>12.5} {est:>12.5}");
    }

    let p = 8;
    let (h, sigma) = model.optimal_predictor_oracle(p, 4.0)?;
    println!("optimal taps at alpha 4: {:?}", h.iter().map(|t| (t * 1e4).round() / 1e4).collect::<Vec<_>>());
    println!("normalized prediction error std: {sigma:.5}");

    let full = model.oracle(p)?;
    for kappa in [1.5, 2.0, 3.0, 4.0] {
        println!("kappa {kappa}: asymptotic alpha {:.4}", asymptotic_alpha(&full, p, 4, kappa)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> modunfold::Result<()> {
    run_example()
}
