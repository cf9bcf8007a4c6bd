//! Modulo arithmetic and the dithered modulo-ADC channel.
//!
//! The channel follows the subtractive-dither model
//! `y = [alpha * x + z] mod 2^R` with `z ~ Unif((-1, 0])`. The unfolded
//! value `v = alpha * x + z` is what the unfolding engines try to recover;
//! the input estimate is then `(v + 1/2) / alpha`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `x mod delta` into `[0, delta)`, without argument checks.
#[inline]
pub(crate) fn wrap(x: f64, delta: f64) -> f64 {
    let mut r = x - delta * (x / delta).floor();
    if r < 0.0 {
        r += delta;
    }
    if r >= delta {
        // x / delta rounded across an integer boundary
        r = delta.next_down();
    }
    r
}

/// Centered modulo into `[-delta/2, delta/2)`, without argument checks.
#[inline]
pub(crate) fn wrap_centered(w: f64, delta: f64) -> f64 {
    let half = 0.5 * delta;
    wrap(w + half, delta) - half
}

fn check_args(x: f64, delta: f64) -> Result<()> {
    if !x.is_finite() {
        return Err(Error::domain(format!("modulo argument must be finite, got {x}")));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!("modulo range must be positive, got {delta}")));
    }
    Ok(())
}

/// `x - delta * floor(x / delta)`, always in `[0, delta)`.
pub fn mod_delta(x: f64, delta: f64) -> Result<f64> {
    check_args(x, delta)?;
    Ok(wrap(x, delta))
}

/// `([w + delta/2] mod delta) - delta/2`, always in `[-delta/2, delta/2)`.
pub fn center_mod(w: f64, delta: f64) -> Result<f64> {
    check_args(w, delta)?;
    Ok(wrap_centered(w, delta))
}

/// Ground-truth unfolded sample `alpha * x + z`.
#[inline]
pub fn unfolded_value(alpha: f64, x: f64, z: f64) -> f64 {
    alpha * x + z
}

/// Input estimate from an unfolded sample, compensating the dither mean of -1/2.
pub fn reconstruct(v_hat: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::domain(format!("resolution must be positive, got {alpha}")));
    }
    Ok((v_hat + 0.5) / alpha)
}

/// Modulo range of an `R`-bit converter, `delta = 2^R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModRange {
    bits: u32,
    delta: f64,
}

impl ModRange {
    pub const MAX_BITS: u32 = 52;

    pub fn new(bits: u32) -> Result<Self> {
        if bits == 0 || bits > Self::MAX_BITS {
            return Err(Error::config(format!(
                "bit depth must be in 1..={}, got {bits}",
                Self::MAX_BITS
            )));
        }
        Ok(ModRange {
            bits,
            delta: (1u64 << bits) as f64,
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn half(&self) -> f64 {
        0.5 * self.delta
    }
}

/// One channel use: folded output and the dither that produced it.
///
/// The dither is returned for oracle bookkeeping only; estimators must not
/// look at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Folded {
    pub y: f64,
    pub z: f64,
}

/// Modulo-ADC state: range, current resolution and the dither stream.
///
/// The dither stream is a ChaCha8 keystream keyed by the trial seed, so the
/// draw for sample `k` is a pure function of `(seed, k)` and can be reached
/// directly with [`ChannelState::seek`].
#[derive(Debug, Clone)]
pub struct ChannelState {
    range: ModRange,
    alpha: f64,
    rng: ChaCha8Rng,
    index: u64,
}

impl ChannelState {
    pub fn new(range: ModRange, alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::config(format!("resolution must be positive, got {alpha}")));
        }
        Ok(ChannelState {
            range,
            alpha,
            rng: ChaCha8Rng::seed_from_u64(seed),
            index: 0,
        })
    }

    pub fn range(&self) -> ModRange {
        self.range
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain(format!("resolution must be positive, got {alpha}")));
        }
        self.alpha = alpha;
        Ok(())
    }

    /// Index of the next sample to be folded.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Position the dither stream at sample `index`.
    pub fn seek(&mut self, index: u64) {
        // one f64 draw consumes one u64, i.e. two 32-bit words
        self.rng.set_word_pos(2 * index as u128);
        self.index = index;
    }

    /// Draw the next dither value, uniform on `(-1, 0]`.
    pub fn next_dither(&mut self) -> f64 {
        self.index += 1;
        -self.rng.random::<f64>()
    }

    /// Fold one input sample through the channel.
    pub fn fold_sample(&mut self, x: f64) -> Result<Folded> {
        let z = self.next_dither();
        let y = mod_delta(unfolded_value(self.alpha, x, z), self.range.delta())?;
        Ok(Folded { y, z })
    }

    /// Fold with an explicit dither value instead of the internal stream.
    pub fn fold_with_dither(&self, x: f64, z: f64) -> Result<f64> {
        mod_delta(unfolded_value(self.alpha, x, z), self.range.delta())
    }
}
