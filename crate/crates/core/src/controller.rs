//! The adaptive blind unfolding loop.
//!
//! Per sample: fold the input at the current resolution, unfold it with the
//! selected engine, reconstruct, then update the LMS taps, the error-spread
//! and covariance trackers, the convergence monitor, the resolution and the
//! error-propagation guard.
//!
//! The loop starts with a short bootstrap at a deliberately small `alpha0`,
//! where no folding can occur and the centred channel output is the unfolded
//! sample itself.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modcore::{wrap_centered, ChannelState, ModRange};
use crate::predictor::{dot, PredictorConfig, PredictorState};
use crate::sigen::ProcessOracle;
use crate::unfold::{
    apply_detection, baseline_unfold, candidate_base, detect_with_factor, AmapDetector,
    CovFactor, DetectMethod, HypothesisSet, UnfoldOutput,
};

/// Unfolding engine driven by the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// recentre the prediction error, implicitly assuming no fold
    Baseline,
    /// approximate-MAP fold detection from estimated moments
    Robust,
    /// MAP fold detection from true history and true moments
    Oracle,
}

impl Engine {
    pub fn name(&self) -> &'static str {
        match self {
            Engine::Baseline => "baseline",
            Engine::Robust => "robust",
            Engine::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Engine::Baseline),
            "robust" => Ok(Engine::Robust),
            "oracle" => Ok(Engine::Oracle),
            other => Err(Error::config(format!("unknown engine {other:?}"))),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// System parameters and loop schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// converter bits; the modulo range is `2^bits`
    pub bits: u32,
    pub kappa: f64,
    /// predictor length
    pub p: usize,
    pub alpha0: f64,
    pub max_abs_m: u32,
    pub engine: Engine,
    pub lms_step: Option<f64>,
    pub ewma_lambda: f64,
    pub normalized_lms: bool,
    pub cov_forgetting: f64,
    /// samples per convergence block
    pub conv_window: usize,
    /// relative change between consecutive blocks counted as converged
    pub conv_tol: f64,
    pub gamma_up: f64,
    pub mitig_window: usize,
    /// the guard fires when more than this many flags sit in the window
    pub mitig_threshold: usize,
    /// samples used to re-estimate the error spread after the guard fires
    pub mitig_reinit: usize,
    /// baseline flag: `|e_hat| >= baseline_flag_frac * delta / 2`
    pub baseline_flag_frac: f64,
    /// robust flag: objective gap to the runner-up below this value
    pub tie_margin: f64,
    /// bootstrap samples beyond the first `p`
    pub bootstrap_extra: usize,
    pub kappa_boot: f64,
    /// refresh period of the cached covariance factorization
    pub refresh_every: u32,
    /// hard ceiling on the resolution
    pub alpha_max: f64,
    /// Offset guard: fire when the running mean of the reconstruction
    /// exceeds this many running standard deviations. Zero disables it.
    pub offset_guard: f64,
    /// smoothing factor of the offset guard's running moments
    pub offset_guard_lambda: f64,
    /// Excursion guard: fire when a reconstruction lands more than this many
    /// running standard deviations from zero. Zero disables it.
    pub excursion_guard: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            bits: 4,
            kappa: 3.0,
            p: 8,
            alpha0: 0.25,
            max_abs_m: 4,
            engine: Engine::Baseline,
            lms_step: None,
            ewma_lambda: 0.005,
            normalized_lms: false,
            cov_forgetting: 1.0,
            conv_window: 500,
            conv_tol: 0.05,
            gamma_up: 1.25,
            mitig_window: 20,
            mitig_threshold: 5,
            mitig_reinit: 50,
            baseline_flag_frac: 0.9,
            tie_margin: 0.25,
            bootstrap_extra: 50,
            kappa_boot: 6.0,
            refresh_every: 1,
            offset_guard: 1.0,
            offset_guard_lambda: 0.002,
            excursion_guard: 8.0,
            alpha_max: 1e6,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be positive, got {v}")))
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.range()?;
        positive("kappa", self.kappa)?;
        positive("alpha0", self.alpha0)?;
        positive("alpha_max", self.alpha_max)?;
        if self.alpha0 > self.alpha_max {
            return Err(Error::config("alpha0 exceeds alpha_max"));
        }
        positive("kappa_boot", self.kappa_boot)?;
        positive("conv_tol", self.conv_tol)?;
        positive("baseline_flag_frac", self.baseline_flag_frac)?;
        if !(self.tie_margin >= 0.0) {
            return Err(Error::config(format!("tie_margin must be non-negative, got {}", self.tie_margin)));
        }
        if !(self.gamma_up > 1.0) || !self.gamma_up.is_finite() {
            return Err(Error::config(format!("gamma_up must exceed 1, got {}", self.gamma_up)));
        }
        if self.p == 0 {
            return Err(Error::config("predictor length p must be at least 1"));
        }
        if self.conv_window == 0 || self.mitig_window == 0 || self.mitig_reinit == 0 {
            return Err(Error::config("conv_window, mitig_window and mitig_reinit must be positive"));
        }
        if !(self.excursion_guard >= 0.0) {
            return Err(Error::config(format!(
                "excursion_guard must be non-negative, got {}",
                self.excursion_guard
            )));
        }
        if !(self.offset_guard >= 0.0) {
            return Err(Error::config(format!("offset_guard must be non-negative, got {}", self.offset_guard)));
        }
        if !(self.offset_guard_lambda > 0.0 && self.offset_guard_lambda <= 1.0) {
            return Err(Error::config(format!(
                "offset_guard_lambda must be in (0, 1], got {}",
                self.offset_guard_lambda
            )));
        }
        if self.bootstrap_extra == 0 {
            return Err(Error::config("bootstrap_extra must be positive"));
        }
        self.predictor_config().validate(self.p)
    }

    pub fn range(&self) -> Result<ModRange> {
        ModRange::new(self.bits)
    }

    pub fn hypotheses(&self) -> HypothesisSet {
        HypothesisSet::new(self.max_abs_m)
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            lms_step: self.lms_step,
            ewma_lambda: self.ewma_lambda,
            normalized_lms: self.normalized_lms,
            cov_forgetting: self.cov_forgetting,
            ..PredictorConfig::default()
        }
    }

    /// Number of samples consumed by [`LoopState::init`].
    pub fn bootstrap_len(&self) -> usize {
        self.p + self.bootstrap_extra
    }
}

/// Resolution that places the fold boundary `kappa` error deviations away:
/// `2^(R-1) / (kappa * sigma_bar_p)`.
pub fn alpha_target(bits: u32, kappa: f64, sigma_bar_p: f64) -> f64 {
    2f64.powi(bits as i32 - 1) / (kappa * sigma_bar_p)
}

/// One resolution step: grow geometrically towards the target, drop to it
/// directly when above.
pub fn alpha_update(alpha: f64, target: f64, gamma_up: f64) -> f64 {
    if alpha > target {
        target
    } else {
        (alpha * gamma_up).min(target)
    }
}

/// Steady-state resolution of the loop with the optimal predictor: the fixed
/// point of `alpha = alpha_target(bits, kappa, sigma_bar_p(alpha))`.
pub fn asymptotic_alpha(oracle: &ProcessOracle, p: usize, bits: u32, kappa: f64) -> Result<f64> {
    // sigma_bar_p(alpha) decreases in alpha, so iterating from the
    // dither-free bound descends monotonically onto the fixed point
    let (_, s_inf) = oracle.optimal_predictor(p, f64::INFINITY)?;
    let mut alpha = alpha_target(bits, kappa, s_inf);
    for _ in 0..200 {
        let (_, s) = oracle.optimal_predictor(p, alpha)?;
        let next = alpha_target(bits, kappa, s);
        if (next - alpha).abs() <= 1e-15 * alpha {
            return Ok(next);
        }
        alpha = next;
    }
    Ok(alpha)
}

/// Block-mean convergence monitor of the squared normalized prediction error.
///
/// Reports convergence when two consecutive blocks of `window` samples,
/// both collected after the last reset, differ by less than `tol` relative.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceMonitor {
    window: usize,
    tol: f64,
    acc: f64,
    filled: usize,
    prev_block: Option<f64>,
}

impl ConvergenceMonitor {
    pub fn new(window: usize, tol: f64) -> Self {
        ConvergenceMonitor {
            window: window.max(1),
            tol,
            acc: 0.0,
            filled: 0,
            prev_block: None,
        }
    }

    /// Feed one squared error; true when a block just closed and matched
    /// its predecessor.
    pub fn push(&mut self, e2: f64) -> bool {
        self.acc += e2;
        self.filled += 1;
        if self.filled < self.window {
            return false;
        }
        let block = self.acc / self.window as f64;
        self.acc = 0.0;
        self.filled = 0;
        let converged = match self.prev_block {
            Some(prev) if prev > 0.0 => ((block - prev) / prev).abs() < self.tol,
            Some(_) => block == 0.0,
            None => false,
        };
        self.prev_block = Some(block);
        converged
    }

    pub fn reset(&mut self) {
        self.acc = 0.0;
        self.filled = 0;
        self.prev_block = None;
    }
}

/// Sliding count of anomaly flags.
#[derive(Debug, Clone, PartialEq)]
pub struct MitigationMonitor {
    flags: VecDeque<bool>,
    window: usize,
    threshold: usize,
    count: usize,
}

impl MitigationMonitor {
    pub fn new(window: usize, threshold: usize) -> Self {
        MitigationMonitor {
            flags: VecDeque::with_capacity(window),
            window: window.max(1),
            threshold,
            count: 0,
        }
    }

    /// Feed one flag; true once more than `threshold` of the last `window`
    /// flags are set.
    pub fn push(&mut self, flag: bool) -> bool {
        if self.flags.len() == self.window && self.flags.pop_front() == Some(true) {
            self.count -= 1;
        }
        self.flags.push_back(flag);
        self.count += flag as usize;
        self.count > self.threshold
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn clear(&mut self) {
        self.flags.clear();
        self.count = 0;
    }
}

/// Everything recorded about one processed sample. `x`, `v`, `overload` and
/// `detect_ok` come from ground truth and are never seen by the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub n: u64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub v_hat: f64,
    pub x_hat: f64,
    /// recentred prediction error before fold correction
    pub e_hat: f64,
    pub m_hat: i64,
    pub alpha: f64,
    /// The true prediction error of the current taps on the true history
    /// left the modulo interval.
    pub overload: bool,
    /// `|v_hat - v| <= 1e-6`
    pub detect_ok: bool,
    pub sq_err: f64,
    pub bootstrap: bool,
}

/// Tolerance separating a correct unfolding from a wrong one.
pub const DETECT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
struct OracleContext {
    process: ProcessOracle,
    sigma: Option<(f64, f64)>,
    factor: Option<(Vec<f64>, CovFactor)>,
}

impl OracleContext {
    fn sigma_at(&mut self, p: usize, alpha: f64) -> Result<f64> {
        match self.sigma {
            Some((a, s)) if a == alpha => Ok(s),
            _ => {
                let (_, s) = self.process.optimal_predictor(p, alpha)?;
                self.sigma = Some((alpha, s));
                Ok(s)
            }
        }
    }

    fn factor_for(&mut self, alphas: &[f64]) -> Result<&CovFactor> {
        let stale = !matches!(&self.factor, Some((a, _)) if a.as_slice() == alphas);
        if stale {
            let c = self.process.stacked_covariance(alphas)?;
            self.factor = Some((alphas.to_vec(), CovFactor::new(&c)?));
        }
        Ok(&self.factor.as_ref().expect("factor set above").1)
    }
}

/// Clip level, in running RMS units, for samples entering the guard moments.
/// Low enough that a ramp outruns the growth of the moments.
const GUARD_CLIP: f64 = 3.0;

/// Running state of one blind conversion loop.
#[derive(Debug, Clone)]
pub struct LoopState {
    cfg: SystemConfig,
    range: ModRange,
    channel: ChannelState,
    predictor: PredictorState,
    /// resolution of each sample in the stacked vector, oldest first
    alpha_history: VecDeque<f64>,
    /// true normalized samples, newest first
    true_window: Vec<f64>,
    n: u64,
    conv: ConvergenceMonitor,
    mitig: MitigationMonitor,
    /// remaining samples and running sum while re-estimating the error spread
    reinit: Option<(usize, f64)>,
    /// remaining window-refresh samples and the resolution to resume at
    refresh: Option<(usize, f64)>,
    mitigation_events: u64,
    alpha_changes: u64,
    first_convergence: Option<u64>,
    detector: AmapDetector,
    oracle: Option<OracleContext>,
    /// running mean and second moment of the reconstruction
    guard_mean: f64,
    guard_m2: f64,
}

impl LoopState {
    /// Validate the configuration and run the bootstrap over the first
    /// [`SystemConfig::bootstrap_len`] entries of `first_samples`.
    ///
    /// `oracle` is required by the oracle engine only.
    pub fn init(
        cfg: &SystemConfig,
        first_samples: &[f64],
        seed: u64,
        oracle: Option<ProcessOracle>,
    ) -> Result<(LoopState, Vec<StepRecord>)> {
        cfg.validate()?;
        let range = cfg.range()?;
        let len = cfg.bootstrap_len();
        if first_samples.len() < len {
            return Err(Error::config(format!(
                "bootstrap needs {len} samples, got {}",
                first_samples.len()
            )));
        }
        if cfg.engine == Engine::Oracle && oracle.is_none() {
            return Err(Error::config("oracle engine requires the process statistics"));
        }
        if let Some(o) = &oracle {
            if o.max_order() < cfg.p {
                return Err(Error::config("process oracle holds fewer lags than the predictor length"));
            }
        }
        let boot = &first_samples[..len];
        if boot.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("input samples must be finite"));
        }
        let mean = boot.iter().sum::<f64>() / len as f64;
        let std = (boot.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (len - 1).max(1) as f64).sqrt();
        let limit = range.half() / cfg.kappa_boot;
        if cfg.alpha0 * std > limit {
            return Err(Error::config(format!(
                "alpha0 = {} is too large for an unfolded bootstrap: alpha0 * std(x) = {:.6} exceeds \
                 delta / (2 * kappa_boot) = {limit:.6}; use alpha0 <= {:.6}",
                cfg.alpha0,
                cfg.alpha0 * std,
                limit / std
            )));
        }

        let p = cfg.p;
        let mut state = LoopState {
            cfg: cfg.clone(),
            range,
            channel: ChannelState::new(range, cfg.alpha0, seed)?,
            predictor: PredictorState::new(p, &cfg.predictor_config())?,
            alpha_history: VecDeque::from(vec![cfg.alpha0; p + 1]),
            true_window: vec![0.0; p],
            n: 0,
            conv: ConvergenceMonitor::new(cfg.conv_window, cfg.conv_tol),
            mitig: MitigationMonitor::new(cfg.mitig_window, cfg.mitig_threshold),
            reinit: None,
            refresh: None,
            mitigation_events: 0,
            alpha_changes: 0,
            first_convergence: None,
            detector: AmapDetector::new(cfg.hypotheses(), cfg.refresh_every),
            oracle: oracle.map(|process| OracleContext {
                process,
                sigma: None,
                factor: None,
            }),
            guard_mean: 0.0,
            guard_m2: std * std,
        };

        let mut records = Vec::with_capacity(len);
        let mut e2_sum = 0.0;
        let mut e2_count = 0usize;
        for &x in boot {
            let alpha = state.channel.alpha();
            let folded = state.channel.fold_sample(x)?;
            let v = alpha * x + folded.z;
            let v_hat = wrap_centered(folded.y, range.delta());
            let x_hat = (v_hat + 0.5) / alpha;
            let mut e_hat = 0.0;
            if state.predictor.window_ready() {
                e_hat = v_hat - state.predictor.predict()?;
                state.predictor.lms_update(e_hat);
                e2_sum += (e_hat / alpha).powi(2);
                e2_count += 1;
            }
            if state.predictor.window_ready() {
                let stacked = state.predictor.stacked_with(x_hat);
                state.predictor.update_cov(&stacked)?;
            }
            state.predictor.push_window(x_hat);
            state.push_truth(x + (folded.z + 0.5) / alpha, alpha);
            let detect_ok = (v_hat - v).abs() <= DETECT_TOL;
            records.push(StepRecord {
                n: state.n,
                x,
                y: folded.y,
                v,
                v_hat,
                x_hat,
                e_hat,
                m_hat: 0,
                alpha,
                overload: !detect_ok,
                detect_ok,
                sq_err: (x_hat - x).powi(2),
                bootstrap: true,
            });
            state.n += 1;
        }
        let seeded = e2_sum / e2_count as f64;
        state.predictor.set_sigma_p_sq(if seeded > 0.0 { seeded } else { 1.0 })?;
        Ok((state, records))
    }

    fn push_truth(&mut self, vbar_true: f64, alpha: f64) {
        self.true_window.rotate_right(1);
        self.true_window[0] = vbar_true;
        self.alpha_history.pop_front();
        self.alpha_history.push_back(alpha);
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn alpha(&self) -> f64 {
        self.channel.alpha()
    }

    pub fn predictor(&self) -> &PredictorState {
        &self.predictor
    }

    pub fn channel(&self) -> &ChannelState {
        &self.channel
    }

    /// Index of the next sample.
    pub fn sample_index(&self) -> u64 {
        self.n
    }

    pub fn mitigation_events(&self) -> u64 {
        self.mitigation_events
    }

    pub fn alpha_changes(&self) -> u64 {
        self.alpha_changes
    }

    /// Sample index at which the convergence monitor first fired.
    pub fn first_convergence(&self) -> Option<u64> {
        self.first_convergence
    }

    /// Resolution updates are suspended while the error spread is being
    /// re-estimated after a mitigation event.
    pub fn frozen(&self) -> bool {
        self.reinit.is_some() || self.refresh.is_some()
    }

    /// Resolutions of the samples `n-p .. n`, oldest first, where `n` is the
    /// most recent sample.
    pub fn alpha_history(&self) -> Vec<f64> {
        self.alpha_history.iter().copied().collect()
    }

    /// Change the resolution and keep the predictor consistent with it.
    fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        let alpha = alpha.clamp(self.cfg.alpha0, self.cfg.alpha_max);
        let old = self.channel.alpha();
        if alpha == old {
            return Ok(());
        }
        self.channel.set_alpha(alpha)?;
        // taps act on normalized samples but predict in v units
        self.predictor.scale_taps(alpha / old);
        self.conv.reset();
        self.alpha_changes += 1;
        Ok(())
    }

    fn unfold(&mut self, y: f64, alpha: f64) -> Result<UnfoldOutput> {
        match self.cfg.engine {
            Engine::Baseline => baseline_unfold(y, &self.predictor, self.range),
            Engine::Robust => self.detector.unfold(y, &self.predictor, self.range, alpha),
            Engine::Oracle => {
                let base = baseline_unfold(y, &self.predictor, self.range)?;
                let p = self.cfg.p;
                // the current sample is not in the history yet
                let mut alphas: Vec<f64> = self.alpha_history.iter().skip(1).copied().collect();
                alphas.push(alpha);
                let window: Vec<f64> = self.true_window.iter().rev().copied().collect();
                let hyp = self.cfg.hypotheses();
                let delta = self.range.delta();
                let ctx = self.oracle.as_mut().expect("checked at init");
                let sigma = ctx.sigma_at(p, alpha)?;
                let factor = ctx.factor_for(&alphas)?;
                let det = detect_with_factor(
                    &window,
                    candidate_base(&base, alpha),
                    alpha,
                    delta,
                    factor,
                    sigma,
                    hyp,
                    DetectMethod::OracleMap,
                )?;
                Ok(apply_detection(base, det, delta))
            }
        }
    }

    /// Process one input sample.
    pub fn step(&mut self, x: f64) -> Result<StepRecord> {
        if !x.is_finite() {
            return Err(Error::domain(format!("input sample must be finite, got {x}")));
        }
        if self.refresh.is_some() {
            return self.refresh_step(x);
        }
        let alpha = self.channel.alpha();
        let half = self.range.half();
        let folded = self.channel.fold_sample(x)?;
        let v = alpha * x + folded.z;

        let fresh = v - (dot(self.predictor.taps(), &self.true_window) - 0.5);
        let overload = !(-half..half).contains(&fresh);

        let out = self.unfold(folded.y, alpha)?;
        let v_hat = out.v_hat;
        if !v_hat.is_finite() {
            return Err(Error::numerical(format!("non-finite unfolded sample at n = {}", self.n)));
        }
        let x_hat = (v_hat + 0.5) / alpha;
        let err = out.corrected_error();
        let ebar = err / alpha;

        self.predictor.lms_update(err);
        match &mut self.reinit {
            Some((left, sum)) => {
                *sum += ebar * ebar;
                *left -= 1;
                if *left == 0 {
                    let var = *sum / self.cfg.mitig_reinit as f64;
                    self.reinit = None;
                    if var > 0.0 && var.is_finite() {
                        self.predictor.set_sigma_p_sq(var)?;
                    }
                }
            }
            None => self.predictor.update_sigma_p(ebar),
        }
        let stacked = self.predictor.stacked_with(x_hat);
        self.predictor.update_cov(&stacked)?;
        self.predictor.push_window(x_hat);
        self.push_truth(x + (folded.z + 0.5) / alpha, alpha);

        let record = StepRecord {
            n: self.n,
            x,
            y: folded.y,
            v,
            v_hat,
            x_hat,
            e_hat: out.e_hat,
            m_hat: out.m_hat(),
            alpha,
            overload,
            detect_ok: (v_hat - v).abs() <= DETECT_TOL,
            sq_err: (x_hat - x).powi(2),
            bootstrap: false,
        };
        self.n += 1;

        let excursion = self.cfg.excursion_guard > 0.0
            && x_hat * x_hat > self.cfg.excursion_guard.powi(2) * self.guard_m2;
        self.update_guard(x_hat);

        let flagged = !self.frozen() && {
            let flag = match self.cfg.engine {
                Engine::Baseline => out.e_hat.abs() >= self.cfg.baseline_flag_frac * half,
                Engine::Robust | Engine::Oracle => out
                    .detection
                    .as_ref()
                    .is_some_and(|d| d.m_hat != 0 || d.margin() < self.cfg.tie_margin),
            };
            self.mitig.push(flag)
        };
        // the drift guards stay armed while the error spread is re-estimated
        if flagged || excursion || self.offset_detected() {
            self.mitigate()?;
        }

        if self.conv.push(ebar * ebar) {
            self.first_convergence.get_or_insert(self.n);
            if !self.frozen() {
                let target = alpha_target(self.cfg.bits, self.cfg.kappa, self.predictor.sigma_p_hat());
                self.set_alpha(alpha_update(self.channel.alpha(), target, self.cfg.gamma_up))?;
            }
        }
        Ok(record)
    }

    fn update_guard(&mut self, x_hat: f64) {
        let lg = self.cfg.offset_guard_lambda;
        // clipped so that one runaway sample cannot blind the guard
        let x_hat = if self.cfg.excursion_guard > 0.0 && self.guard_m2 > 0.0 {
            let bound = GUARD_CLIP * self.guard_m2.sqrt();
            x_hat.clamp(-bound, bound)
        } else {
            x_hat
        };
        self.guard_mean += lg * (x_hat - self.guard_mean);
        self.guard_m2 += lg * (x_hat * x_hat - self.guard_m2);
    }

    /// One sample of a window refresh: the resolution sits at `alpha0`,
    /// where nothing folds, so the centred output is the unfolded sample.
    fn refresh_step(&mut self, x: f64) -> Result<StepRecord> {
        let alpha = self.channel.alpha();
        let folded = self.channel.fold_sample(x)?;
        let v = alpha * x + folded.z;
        let v_hat = wrap_centered(folded.y, self.range.delta());
        let x_hat = (v_hat + 0.5) / alpha;
        self.predictor.push_window(x_hat);
        self.push_truth(x + (folded.z + 0.5) / alpha, alpha);
        self.update_guard(x_hat);
        let detect_ok = (v_hat - v).abs() <= DETECT_TOL;
        let record = StepRecord {
            n: self.n,
            x,
            y: folded.y,
            v,
            v_hat,
            x_hat,
            e_hat: 0.0,
            m_hat: 0,
            alpha,
            overload: !detect_ok,
            detect_ok,
            sq_err: (x_hat - x).powi(2),
            bootstrap: true,
        };
        self.n += 1;
        if let Some((left, resume)) = &mut self.refresh {
            *left -= 1;
            if *left == 0 {
                let resume = *resume;
                self.refresh = None;
                self.set_alpha(resume)?;
                self.reinit = Some((self.cfg.mitig_reinit, 0.0));
            }
        }
        Ok(record)
    }

    /// The input is zero-mean, so a reconstruction whose running mean sits
    /// far from zero relative to its running spread carries a fold offset
    /// that the prediction error cannot reveal.
    fn offset_detected(&self) -> bool {
        let var = self.guard_m2 - self.guard_mean * self.guard_mean;
        self.cfg.offset_guard > 0.0
            && self.guard_mean * self.guard_mean > self.cfg.offset_guard.powi(2) * var.max(0.0)
    }

    /// Error-propagation guard.
    ///
    /// A wrong unfolding leaves a multiple of the fold width in the window,
    /// and the predictor carries it forward indefinitely. The guard drops to
    /// `alpha0` for `p` samples to rebuild the window from unfolded samples,
    /// resumes one `gamma_up` step below the previous resolution, then
    /// re-estimates the error spread before resolution updates are allowed
    /// again. The taps are kept.
    fn mitigate(&mut self) -> Result<()> {
        self.mitigation_events += 1;
        self.mitig.clear();
        self.guard_mean = 0.0;
        self.reinit = None;
        let resume = (self.channel.alpha() / self.cfg.gamma_up).max(self.cfg.alpha0);
        self.set_alpha(self.cfg.alpha0)?;
        self.refresh = Some((self.cfg.p, resume));
        Ok(())
    }
}
