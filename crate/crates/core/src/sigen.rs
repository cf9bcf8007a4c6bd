//! Synthetic stationary autoregressive sources and their exact second-order
//! statistics.
//!
//! The blind pipeline never sees anything from this module except the
//! generated samples; the autocovariance and optimal-predictor oracles are
//! for tests, the oracle engine and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution of the driving white noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Innovation {
    #[default]
    Gaussian,
    /// Zero-mean uniform noise with the configured variance. The resulting
    /// process is not Gaussian; used only as a robustness scenario.
    Uniform,
}

/// Condition number above which a covariance solve is refused.
pub const MAX_CONDITION: f64 = 1e12;

const MIN_BURN_IN: usize = 100;
const MAX_BURN_IN: usize = 10_000_000;

/// Stationary AR(q) model `x_n = sum_i a_i x_{n-i} + w_n`, `w_n` white with
/// variance `innovation_var`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    coeffs: Vec<f64>,
    innovation_var: f64,
    innovation: Innovation,
    pole_radius: f64,
}

impl ArModel {
    pub fn new(coeffs: Vec<f64>, innovation_var: f64) -> Result<Self> {
        Self::with_innovation(coeffs, innovation_var, Innovation::Gaussian)
    }

    pub fn with_innovation(
        coeffs: Vec<f64>,
        innovation_var: f64,
        innovation: Innovation,
    ) -> Result<Self> {
        if !(innovation_var > 0.0) || !innovation_var.is_finite() {
            return Err(Error::config(format!(
                "innovation variance must be positive, got {innovation_var}"
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("AR coefficients must be finite"));
        }
        let pole_radius = spectral_radius(&coeffs);
        if pole_radius >= 1.0 - 1e-12 {
            return Err(Error::config(format!(
                "AR model is not stationary (largest pole magnitude {pole_radius})"
            )));
        }
        Ok(ArModel {
            coeffs,
            innovation_var,
            innovation,
            pole_radius,
        })
    }

    /// White noise of the given variance.
    pub fn white(var: f64) -> Result<Self> {
        Self::new(Vec::new(), var)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn innovation_var(&self) -> f64 {
        self.innovation_var
    }

    pub fn innovation(&self) -> Innovation {
        self.innovation
    }

    /// Largest magnitude among the roots of `z^q - a_1 z^{q-1} - ... - a_q`.
    pub fn pole_radius(&self) -> f64 {
        self.pole_radius
    }

    /// Number of leading samples discarded by [`ArModel::generate`].
    pub fn burn_in(&self) -> usize {
        let q = self.order();
        if q == 0 || self.pole_radius == 0.0 {
            return if q == 0 { 0 } else { MIN_BURN_IN };
        }
        let n = (10.0 * q as f64 / -self.pole_radius.ln()).ceil();
        (n as usize).clamp(MIN_BURN_IN, MAX_BURN_IN)
    }

    fn draw_innovation(&self, rng: &mut ChaCha8Rng) -> f64 {
        let sd = self.innovation_var.sqrt();
        match self.innovation {
            Innovation::Gaussian => sd * rng.sample::<f64, _>(StandardNormal),
            Innovation::Uniform => sd * 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
        }
    }

    /// `n` samples of the process after burn-in; deterministic in `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = self.order();
        let burn = self.burn_in();
        // history newest-first
        let mut hist = vec![0.0; q];
        let mut out = Vec::with_capacity(n);
        for i in 0..burn + n {
            let pred: f64 = self.coeffs.iter().zip(&hist).map(|(a, x)| a * x).sum();
            let x = pred + self.draw_innovation(&mut rng);
            if q > 0 {
                hist.rotate_right(1);
                hist[0] = x;
            }
            if i >= burn {
                out.push(x);
            }
        }
        out
    }

    /// Exact autocovariances `R_x[0..=max_lag]` from the Yule-Walker equations.
    pub fn autocorr_oracle(&self, max_lag: usize) -> Result<Vec<f64>> {
        let q = self.order();
        let mut r = vec![0.0; max_lag.max(q) + 1];
        if q == 0 {
            r[0] = self.innovation_var;
        } else {
            // gamma_k - sum_i a_i gamma_|k-i| = sigma^2 delta_k, k = 0..=q
            let mut m = DMatrix::<f64>::zeros(q + 1, q + 1);
            let mut rhs = DVector::<f64>::zeros(q + 1);
            rhs[0] = self.innovation_var;
            for k in 0..=q {
                m[(k, k)] += 1.0;
                for (i, a) in self.coeffs.iter().enumerate() {
                    let lag = (k as isize - (i as isize + 1)).unsigned_abs();
                    m[(k, lag)] -= a;
                }
            }
            let sol = m
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::numerical("singular Yule-Walker system"))?;
            for k in 0..=q {
                r[k] = sol[k];
            }
            for l in q + 1..r.len() {
                r[l] = self
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a * r[l - i - 1])
                    .sum();
            }
        }
        r.truncate(max_lag + 1);
        Ok(r)
    }

    /// Optimal length-`p` one-step predictor of the normalized sample
    /// `(v + 1/2)/alpha = x + (z + 1/2)/alpha`, together with its prediction
    /// error standard deviation. `alpha = inf` drops the dither term.
    ///
    /// Taps are ordered newest sample first.
    pub fn optimal_predictor_oracle(&self, p: usize, alpha: f64) -> Result<(Vec<f64>, f64)> {
        let r = self.autocorr_oracle(p)?;
        optimal_predictor(&r, p, alpha)
    }

    /// Second-order oracle for a fixed predictor length.
    pub fn oracle(&self, p: usize) -> Result<ProcessOracle> {
        Ok(ProcessOracle {
            autocov: self.autocorr_oracle(p)?,
        })
    }
}

/// Dither variance contribution `1/(12 alpha^2)` of the normalized sample.
#[inline]
pub fn dither_var(alpha: f64) -> f64 {
    1.0 / (12.0 * alpha * alpha)
}

fn optimal_predictor(r: &[f64], p: usize, alpha: f64) -> Result<(Vec<f64>, f64)> {
    if p == 0 {
        return Err(Error::domain("predictor length must be at least 1"));
    }
    if !(alpha > 0.0) {
        return Err(Error::domain(format!("resolution must be positive, got {alpha}")));
    }
    let noise = dither_var(alpha);
    let rv0 = r[0] + noise;
    let toeplitz = DMatrix::from_fn(p, p, |i, j| r[i.abs_diff(j)] + if i == j { noise } else { 0.0 });
    let rhs = DVector::from_fn(p, |i, _| r[i + 1]);
    let cond = condition_number(&toeplitz);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::numerical(format!(
            "predictor normal equations ill-conditioned (condition number {cond:.3e})"
        )));
    }
    let h = toeplitz
        .cholesky()
        .ok_or_else(|| Error::numerical("covariance matrix not positive definite"))?
        .solve(&rhs);
    let mse = (rv0 - h.dot(&rhs)).max(0.0);
    Ok((h.iter().copied().collect(), mse.sqrt()))
}

/// 2-norm condition number of a symmetric matrix.
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &e| a.min(e.abs()));
    max / min
}

fn spectral_radius(coeffs: &[f64]) -> f64 {
    let q = coeffs.len();
    match q {
        0 => 0.0,
        1 => coeffs[0].abs(),
        _ => {
            let mut companion = DMatrix::<f64>::zeros(q, q);
            for (j, a) in coeffs.iter().enumerate() {
                companion[(0, j)] = *a;
            }
            for i in 1..q {
                companion[(i, i - 1)] = 1.0;
            }
            companion
                .complex_eigenvalues()
                .iter()
                .map(|c| c.norm())
                .fold(0.0, f64::max)
        }
    }
}

/// Exact second-order statistics of a process, truncated to the lags a
/// length-`p` pipeline needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOracle {
    autocov: Vec<f64>,
}

impl ProcessOracle {
    pub fn from_autocov(autocov: Vec<f64>) -> Result<Self> {
        if autocov.is_empty() || !(autocov[0] > 0.0) {
            return Err(Error::config("autocovariance must start with a positive variance"));
        }
        Ok(ProcessOracle { autocov })
    }

    pub fn autocov(&self) -> &[f64] {
        &self.autocov
    }

    /// Largest predictor length this oracle supports.
    pub fn max_order(&self) -> usize {
        self.autocov.len() - 1
    }

    pub fn optimal_predictor(&self, p: usize, alpha: f64) -> Result<(Vec<f64>, f64)> {
        if p > self.max_order() {
            return Err(Error::domain(format!(
                "oracle holds {} lags, predictor length {p} requested",
                self.max_order()
            )));
        }
        optimal_predictor(&self.autocov, p, alpha)
    }

    /// Covariance of the stacked normalized vector
    /// `[vbar_{n-p}, ..., vbar_{n-1}, vbar_n]` given the resolution used at
    /// each of those samples (same order, oldest first).
    pub fn stacked_covariance(&self, alphas: &[f64]) -> Result<DMatrix<f64>> {
        let k = alphas.len();
        if k == 0 || k > self.autocov.len() {
            return Err(Error::domain(format!(
                "stacked covariance of size {k} needs {k} lags, oracle holds {}",
                self.autocov.len()
            )));
        }
        Ok(DMatrix::from_fn(k, k, |i, j| {
            self.autocov[i.abs_diff(j)] + if i == j { dither_var(alphas[i]) } else { 0.0 }
        }))
    }
}
