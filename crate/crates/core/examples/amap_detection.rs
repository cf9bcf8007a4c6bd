// Plant a fold error on top of a true window and let both detectors vote.
// The oracle uses the true covariance; the approximate detector uses one
// estimated from training windows.

use modunfold::controller::asymptotic_alpha;
use modunfold::modcore::{ChannelState, ModRange};
use modunfold::predictor::OnlineCovariance;
use modunfold::sigen::ArModel;
use modunfold::unfold::{amap_detect, oracle_map_detect, prior_neg_log, HypothesisSet};

pub fn run_example() -> modunfold::Result<()> {
    let model = ArModel::new(vec![0.95], 1.0)?;
    let p = 8;
    let range = ModRange::new(4)?;
    let oracle = model.oracle(p)?;
    let alpha = asymptotic_alpha(&oracle, p, 4, 2.0)?;
    let (_, sigma) = oracle.optimal_predictor(p, alpha)?;
    let cov = oracle.stacked_covariance(&vec![alpha; p + 1])?;
    let hyp = HypothesisSet::new(4);

    println!("alpha {alpha:.4}, fold width in normalized units {:.4}", range.delta() / alpha);
    for m in 0..=3 {
        println!("prior cost F({m}) = {:.4}", prior_neg_log(m, range.delta(), alpha * sigma)?);
    }

    // normalized stream: vbar = x + (z + 1/2) / alpha
    let mut channel = ChannelState::new(range, alpha, 9)?;
    let vbar: Vec<f64> = model
        .generate(40_000, 8)
        .iter()
        .map(|x| x + (channel.next_dither() + 0.5) / alpha)
        .collect();
    let mut acc = OnlineCovariance::new(p + 1, 1.0);
    for w in vbar[..20_000].windows(p + 1) {
        acc.update(w)?;
    }
    let cov_hat = acc.estimate()?;
    let sigma_hat = cov_hat.clone().cholesky().map(|c| c.l()[(p, p)]).unwrap_or(sigma);

    let shift = range.delta() / alpha;
    let (mut oracle_hits, mut amap_hits, mut events) = (0, 0, 0);
    for (k, w) in vbar[20_000..].windows(p + 1).step_by(p + 1).enumerate() {
        let m_true = if k % 2 == 0 { 1 } else { -1 };
        let base = w[p] + m_true as f64 * shift;
        let o = oracle_map_detect(&w[..p], base, alpha, range.delta(), &cov, sigma, hyp)?;
        let a = amap_detect(&w[..p], base, alpha, range.delta(), &cov_hat, sigma_hat, hyp)?;
        oracle_hits += (o.m_hat == m_true) as usize;
        amap_hits += (a.m_hat == m_true) as usize;
        events += 1;
    }
    println!("planted single folds: {events}");
    println!("oracle recovered {:.2}%", 100.0 * oracle_hits as f64 / events as f64);
    println!("approximate recovered {:.2}%", 100.0 * amap_hits as f64 / events as f64);
    Ok(())
}

#[allow(dead_code)]
fn main() -> modunfold::Result<()> {
    run_example()
}
