//! Scenarios shared by the acceptance gate and the regression tests.
#![allow(dead_code)]

use modunfold::controller::asymptotic_alpha;
use modunfold::modcore::{ChannelState, ModRange};
use modunfold::predictor::{OnlineCovariance, PredictorConfig, PredictorState};
use modunfold::sigen::ArModel;
use modunfold::unfold::{amap_detect, baseline_unfold, oracle_map_detect, HypothesisSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Baseline unfolding with fixed optimal taps at fixed resolution.
/// Returns per-sample `(x_hat - x, expected dither term, correct)`.
pub fn fixed_tap_run(a: f64, kappa: f64, n: usize, seed: u64) -> (f64, Vec<(f64, f64, bool)>) {
    let p = 8;
    let bits = 4;
    let model = ArModel::new(vec![a], 1.0).unwrap();
    let oracle = model.oracle(p).unwrap();
    let alpha = asymptotic_alpha(&oracle, p, bits, kappa).unwrap();
    let (h, _) = oracle.optimal_predictor(p, alpha).unwrap();
    let taps: Vec<f64> = h.iter().map(|t| alpha * t).collect();
    let range = ModRange::new(bits).unwrap();
    let mut ch = ChannelState::new(range, alpha, seed ^ 0x5eed).unwrap();
    let mut pred = PredictorState::new(p, &PredictorConfig::default()).unwrap();
    pred.set_taps(&taps).unwrap();
    let xs = model.generate(n + p, seed);
    // the first p samples are taken as known, as after an exact bootstrap
    for &x in &xs[..p] {
        let z = ch.next_dither();
        pred.push_window(x + (z + 0.5) / alpha);
    }
    let mut out = Vec::with_capacity(n);
    for &x in &xs[p..] {
        let f = ch.fold_sample(x).unwrap();
        let v = alpha * x + f.z;
        let u = baseline_unfold(f.y, &pred, range).unwrap();
        let x_hat = (u.v_hat + 0.5) / alpha;
        out.push((x_hat - x, (f.z + 0.5) / alpha, (u.v_hat - v).abs() <= 1e-9));
        pred.push_window(x_hat);
    }
    (alpha, out)
}

/// Planted overload events at kappa = 2 with exact history: the m = 0
/// candidate is moved one fold width off the true sample.
/// Returns the hit counts `(oracle MAP, AMAP with estimated moments)`.
pub fn planted_recovery(events: usize, seed: u64) -> (usize, usize) {
    let p = 8;
    let bits = 4;
    let range = ModRange::new(bits).unwrap();
    let delta = range.delta();
    let model = ArModel::new(vec![0.95], 1.0).unwrap();
    let oracle = model.oracle(p).unwrap();
    let alpha = asymptotic_alpha(&oracle, p, bits, 2.0).unwrap();
    let (_, sigma) = oracle.optimal_predictor(p, alpha).unwrap();
    let cov = oracle.stacked_covariance(&vec![alpha; p + 1]).unwrap();
    let hyp = HypothesisSet::new(4);

    let normalized = |n: usize, s: u64| -> Vec<f64> {
        let xs = model.generate(n, s);
        let mut ch = ChannelState::new(range, alpha, s ^ 0xd1e).unwrap();
        xs.iter().map(|&x| x + (ch.next_dither() + 0.5) / alpha).collect()
    };

    // moments estimated on an independent training stretch
    let train = normalized(100_000 + p, seed.wrapping_add(1));
    let mut acc = OnlineCovariance::new(p + 1, 1.0);
    for w in train.windows(p + 1) {
        acc.update(w).unwrap();
    }
    let cov_hat = acc.estimate().unwrap();
    let l = cov_hat.clone().cholesky().unwrap().l();
    let sigma_hat = l[(p, p)];

    let data = normalized(events + p, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let (mut hit_oracle, mut hit_amap) = (0usize, 0usize);
    for w in data.windows(p + 1) {
        let m_true: i64 = if rng.random::<bool>() { 1 } else { -1 };
        let base = w[p] + m_true as f64 * delta / alpha;
        let o = oracle_map_detect(&w[..p], base, alpha, delta, &cov, sigma, hyp).unwrap();
        let a = amap_detect(&w[..p], base, alpha, delta, &cov_hat, sigma_hat, hyp).unwrap();
        hit_oracle += usize::from(o.m_hat == m_true);
        hit_amap += usize::from(a.m_hat == m_true);
    }
    (hit_oracle, hit_amap)
}

