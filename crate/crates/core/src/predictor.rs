//! Adaptive linear predictor and the online moment estimators used by the
//! unfolding engines.
//!
//! Units: the window holds normalized samples `vbar = (v + 1/2)/alpha`, while
//! the prediction itself and the LMS error are in unfolded (`v`) units, so
//! the taps carry the current resolution. The controller rescales them when
//! `alpha` moves.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on `mu * |window|^2` for plain LMS. The classical
/// mean-square stability limit is 2; healthy operation sits far below 1.
pub const LMS_STABILITY: f64 = 1.0;

/// Step sizes and options of the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// LMS step size. `None` selects `0.01 / p`.
    pub lms_step: Option<f64>,
    /// Smoothing factor of the squared-error average.
    pub ewma_lambda: f64,
    /// Normalize the LMS step by the regressor energy.
    pub normalized_lms: bool,
    /// Regularizer added to the regressor energy in normalized LMS.
    pub nlms_eps: f64,
    /// Exponential forgetting of the covariance accumulator; 1 keeps a plain
    /// running average.
    pub cov_forgetting: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            lms_step: None,
            ewma_lambda: 0.005,
            normalized_lms: false,
            nlms_eps: 1e-6,
            cov_forgetting: 1.0,
        }
    }
}

impl PredictorConfig {
    pub fn step_for(&self, p: usize) -> f64 {
        self.lms_step.unwrap_or(0.01 / p as f64)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let mu = self.step_for(p);
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::config(format!("LMS step must be positive, got {mu}")));
        }
        if !(self.ewma_lambda > 0.0 && self.ewma_lambda <= 1.0) {
            return Err(Error::config(format!(
                "ewma_lambda must be in (0, 1], got {}",
                self.ewma_lambda
            )));
        }
        if !(self.cov_forgetting > 0.0 && self.cov_forgetting <= 1.0) {
            return Err(Error::config(format!(
                "cov_forgetting must be in (0, 1], got {}",
                self.cov_forgetting
            )));
        }
        if !(self.nlms_eps >= 0.0) {
            return Err(Error::config("nlms_eps must be non-negative"));
        }
        Ok(())
    }
}

/// Running second-moment matrix of stacked normalized vectors.
///
/// With `forgetting = 1` the estimate is `(1/count) * sum u u^T`; otherwise
/// older terms are discounted geometrically and the normalizer follows the
/// same weights.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineCovariance {
    dim: usize,
    sum: Vec<f64>,
    weight: f64,
    count: u64,
    forgetting: f64,
}

impl OnlineCovariance {
    pub fn new(dim: usize, forgetting: f64) -> Self {
        OnlineCovariance {
            dim,
            sum: vec![0.0; dim * dim],
            weight: 0.0,
            count: 0,
            forgetting,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of accumulated vectors.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim {
            return Err(Error::domain(format!(
                "stacked vector has length {}, expected {}",
                u.len(),
                self.dim
            )));
        }
        let beta = self.forgetting;
        for i in 0..self.dim {
            let row = &mut self.sum[i * self.dim..(i + 1) * self.dim];
            for (j, s) in row.iter_mut().enumerate() {
                *s = beta * *s + u[i] * u[j];
            }
        }
        self.weight = beta * self.weight + 1.0;
        self.count += 1;
        Ok(())
    }

    /// Current estimate; needs at least one accumulated vector.
    pub fn estimate(&self) -> Result<DMatrix<f64>> {
        if self.count == 0 {
            return Err(Error::state("covariance estimate read before any update"));
        }
        let w = self.weight;
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &self.sum).map(|s| s / w))
    }

    pub fn reset(&mut self) {
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.weight = 0.0;
        self.count = 0;
    }
}

/// LMS predictor over the last `p` normalized samples plus its error-variance
/// and covariance trackers.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorState {
    taps: Vec<f64>,
    /// newest sample first
    window: Vec<f64>,
    filled: usize,
    sigma_p_sq_hat: f64,
    cov: OnlineCovariance,
    lms_step: f64,
    ewma_lambda: f64,
    normalized: bool,
    nlms_eps: f64,
    skipped: u64,
}

impl PredictorState {
    pub fn new(p: usize, cfg: &PredictorConfig) -> Result<Self> {
        if p == 0 {
            return Err(Error::config("predictor length must be at least 1"));
        }
        cfg.validate(p)?;
        Ok(PredictorState {
            taps: vec![0.0; p],
            window: vec![0.0; p],
            filled: 0,
            sigma_p_sq_hat: 1.0,
            cov: OnlineCovariance::new(p + 1, cfg.cov_forgetting),
            lms_step: cfg.step_for(p),
            ewma_lambda: cfg.ewma_lambda,
            normalized: cfg.normalized_lms,
            nlms_eps: cfg.nlms_eps,
            skipped: 0,
        })
    }

    pub fn order(&self) -> usize {
        self.taps.len()
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn set_taps(&mut self, taps: &[f64]) -> Result<()> {
        if taps.len() != self.taps.len() {
            return Err(Error::domain(format!(
                "expected {} taps, got {}",
                self.taps.len(),
                taps.len()
            )));
        }
        self.taps.copy_from_slice(taps);
        Ok(())
    }

    /// Multiply every tap by `factor`; used when the resolution changes.
    pub fn scale_taps(&mut self, factor: f64) {
        self.taps.iter_mut().for_each(|t| *t *= factor);
    }

    /// Most recent normalized samples, newest first.
    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn window_ready(&self) -> bool {
        self.filled == self.window.len()
    }

    pub fn push_window(&mut self, vbar: f64) {
        self.window.rotate_right(1);
        self.window[0] = vbar;
        self.filled = (self.filled + 1).min(self.window.len());
    }

    /// Linear prediction of the next unfolded sample, `taps . window - 1/2`.
    pub fn predict(&self) -> Result<f64> {
        if !self.window_ready() {
            return Err(Error::state(format!(
                "predictor window holds {} of {} samples",
                self.filled,
                self.window.len()
            )));
        }
        Ok(dot(&self.taps, &self.window) - 0.5)
    }

    /// One LMS step `taps += mu * err * window`.
    ///
    /// Non-finite errors are dropped and counted; they only arise when the
    /// upstream unfolding has already failed.
    pub fn lms_update(&mut self, err: f64) {
        if !err.is_finite() {
            self.skipped += 1;
            return;
        }
        let mut mu = self.lms_step;
        let energy = dot(&self.window, &self.window);
        if self.normalized {
            mu /= self.nlms_eps + energy;
        } else if mu * energy > LMS_STABILITY {
            // a corrupted window can carry offsets of several fold widths;
            // keep the step inside the mean-square stability region
            mu = LMS_STABILITY / energy;
        }
        for (t, w) in self.taps.iter_mut().zip(&self.window) {
            *t += mu * err * w;
        }
    }

    /// Number of LMS updates dropped because of a non-finite error.
    pub fn skipped_updates(&self) -> u64 {
        self.skipped
    }

    /// Exponentially weighted average of the squared prediction error.
    pub fn update_sigma_p(&mut self, err: f64) {
        if !err.is_finite() {
            return;
        }
        let l = self.ewma_lambda;
        self.sigma_p_sq_hat = (1.0 - l) * self.sigma_p_sq_hat + l * err * err;
    }

    pub fn sigma_p_sq_hat(&self) -> f64 {
        self.sigma_p_sq_hat
    }

    pub fn sigma_p_hat(&self) -> f64 {
        self.sigma_p_sq_hat.sqrt()
    }

    pub fn set_sigma_p_sq(&mut self, value: f64) -> Result<()> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::domain(format!(
                "error variance must be positive, got {value}"
            )));
        }
        self.sigma_p_sq_hat = value;
        Ok(())
    }

    /// Accumulate one stacked vector `[vbar_{i-p}, ..., vbar_{i-1}, vbar_i]`.
    pub fn update_cov(&mut self, stacked: &[f64]) -> Result<()> {
        self.cov.update(stacked)
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        self.cov.estimate()
    }

    pub fn cov_accumulator(&self) -> &OnlineCovariance {
        &self.cov
    }

    /// The stacked vector for a new sample: current window oldest first,
    /// followed by `vbar_new`.
    pub fn stacked_with(&self, vbar_new: f64) -> Vec<f64> {
        let mut out: Vec<f64> = self.window.iter().rev().copied().collect();
        out.push(vbar_new);
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(p: usize) -> PredictorState {
        PredictorState::new(p, &PredictorConfig::default()).unwrap()
    }

    #[test]
    fn predict_examples() {
        let mut s = state(3);
        for v in [1.0, -2.0, 7.5] {
            s.push_window(v);
        }
        assert_eq!(s.predict().unwrap(), -0.5);

        let mut s = state(1);
        s.set_taps(&[1.0]).unwrap();
        s.push_window(3.2);
        assert!((s.predict().unwrap() - 2.7).abs() < 1e-12);

        let mut s = state(2);
        s.set_taps(&[0.5, 0.5]).unwrap();
        s.push_window(4.0);
        s.push_window(2.0);
        assert_eq!(s.window(), &[2.0, 4.0]);
        assert_eq!(s.predict().unwrap(), 2.5);
    }

    #[test]
    fn predict_requires_full_window() {
        let mut s = state(2);
        s.push_window(1.0);
        assert!(matches!(s.predict(), Err(Error::State(_))));
        s.push_window(1.0);
        assert!(s.predict().is_ok());
    }

    #[test]
    fn lms_single_step() {
        let cfg = PredictorConfig {
            lms_step: Some(0.1),
            ..Default::default()
        };
        let mut s = PredictorState::new(1, &cfg).unwrap();
        s.push_window(2.0);
        s.lms_update(0.5);
        assert!((s.taps()[0] - 0.1).abs() < 1e-15);
        let before = s.taps().to_vec();
        s.lms_update(0.0);
        assert_eq!(s.taps(), &before[..]);
    }

    #[test]
    fn lms_skips_non_finite_error() {
        let mut s = state(2);
        s.push_window(1.0);
        s.push_window(1.0);
        s.lms_update(f64::NAN);
        s.lms_update(f64::INFINITY);
        assert_eq!(s.skipped_updates(), 2);
        assert_eq!(s.taps(), &[0.0, 0.0]);
    }

    #[test]
    fn normalized_lms_divides_by_energy() {
        let cfg = PredictorConfig {
            lms_step: Some(0.5),
            normalized_lms: true,
            nlms_eps: 0.0,
            ..Default::default()
        };
        let mut s = PredictorState::new(2, &cfg).unwrap();
        s.push_window(1.0);
        s.push_window(1.0);
        s.lms_update(2.0);
        assert_eq!(s.taps(), &[0.5, 0.5]);
    }

    #[test]
    fn sigma_p_examples() {
        let cfg = PredictorConfig {
            ewma_lambda: 0.01,
            ..Default::default()
        };
        let mut s = PredictorState::new(1, &cfg).unwrap();
        s.update_sigma_p(2.0);
        assert!((s.sigma_p_sq_hat() - 1.03).abs() < 1e-12);

        let cfg = PredictorConfig {
            ewma_lambda: 1.0,
            ..Default::default()
        };
        let mut s = PredictorState::new(1, &cfg).unwrap();
        s.update_sigma_p(-3.0);
        assert_eq!(s.sigma_p_sq_hat(), 9.0);
    }

    #[test]
    fn sigma_p_converges_geometrically_for_constant_error() {
        let lambda = 0.05;
        let cfg = PredictorConfig {
            ewma_lambda: lambda,
            ..Default::default()
        };
        let mut s = PredictorState::new(1, &cfg).unwrap();
        let c: f64 = 0.7;
        let mut gap = s.sigma_p_sq_hat() - c * c;
        for _ in 0..200 {
            s.update_sigma_p(c);
            let next = s.sigma_p_sq_hat() - c * c;
            assert!((next - (1.0 - lambda) * gap).abs() < 1e-14);
            gap = next;
        }
    }

    #[test]
    fn covariance_examples() {
        let mut s = state(1);
        assert!(matches!(s.covariance(), Err(Error::State(_))));
        s.update_cov(&[1.0, 0.0]).unwrap();
        s.update_cov(&[1.0, 0.0]).unwrap();
        let c = s.covariance().unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));

        let mut s = state(2);
        for _ in 0..5 {
            s.update_cov(&[0.0; 3]).unwrap();
        }
        assert_eq!(s.covariance().unwrap(), DMatrix::zeros(3, 3));
        assert!(s.update_cov(&[0.0; 2]).is_err());
    }

    #[test]
    fn covariance_with_forgetting_weights_recent_vectors() {
        let mut c = OnlineCovariance::new(1, 0.5);
        c.update(&[2.0]).unwrap();
        c.update(&[0.0]).unwrap();
        // (0.5 * 4 + 0) / (0.5 + 1)
        assert!((c.estimate().unwrap()[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stacked_vector_is_oldest_first() {
        let mut s = state(3);
        for v in [1.0, 2.0, 3.0] {
            s.push_window(v);
        }
        assert_eq!(s.stacked_with(4.0), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn config_validation() {
        assert!(PredictorConfig::default().validate(4).is_ok());
        let bad = PredictorConfig {
            ewma_lambda: 0.0,
            ..Default::default()
        };
        assert!(bad.validate(4).is_err());
        let bad = PredictorConfig {
            lms_step: Some(-1.0),
            ..Default::default()
        };
        assert!(bad.validate(4).is_err());
        assert_eq!(PredictorConfig::default().step_for(8), 0.00125);
    }
}
