//! Success/failure-driven scale factor for the trust-scaled optimizers:
//! doubling after a streak of successes, halving after a streak of
//! failures, with clamping above and a restart signal below.

use crate::scalar::Scalar;

/// Error from the trust-scale state machine.
#[derive(Debug, Clone, thiserror::Error)]
pub enum TrustScaleError {
    #[error("record called on a state that already needs a restart")]
    NeedsRestart,
}

/// Scale factor `L` with its success/failure counters and bounds.
///
/// At most one counter is nonzero: a success resets the failure counter and
/// vice versa. After `tau_succ` consecutive successes `L` doubles (clamped
/// at `max_scale`); after `tau_fail` consecutive failures it halves, and if
/// the halved value drops below `min_scale` the state is marked for restart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustScale<T: Scalar> {
    pub scale: T,
    pub succ_count: u32,
    pub fail_count: u32,
    pub tau_succ: u32,
    pub tau_fail: u32,
    pub min_scale: T,
    pub max_scale: T,
    pub needs_restart: bool,
}

impl<T: Scalar> TrustScale<T> {
    /// Standard initialization for dimension `dim` and batch size `batch`:
    /// `L = 0.8`, `τ_succ = 3`, `τ_fail = ⌈max(4/b, d/b)⌉`, bounds
    /// `[2⁻⁷, 1.6]`.
    pub fn new(dim: usize, batch: usize) -> Self {
        assert!(dim >= 1 && batch >= 1);
        let tau_fail = (4.0f64.max(dim as f64) / batch as f64).ceil() as u32;
        Self {
            scale: T::of(0.8),
            succ_count: 0,
            fail_count: 0,
            tau_succ: 3,
            tau_fail,
            min_scale: T::of(2.0f64.powi(-7)),
            max_scale: T::of(1.6),
            needs_restart: false,
        }
    }

    /// Pure transition: returns the state after recording one success or
    /// failure. Fails if the state already signalled a restart.
    pub fn record(&self, improved: bool) -> Result<Self, TrustScaleError> {
        if self.needs_restart {
            return Err(TrustScaleError::NeedsRestart);
        }
        let mut next = *self;
        if improved {
            next.succ_count += 1;
            next.fail_count = 0;
            if next.succ_count >= next.tau_succ {
                next.scale = (next.scale * T::of(2.0)).min(next.max_scale);
                next.succ_count = 0;
            }
        } else {
            next.fail_count += 1;
            next.succ_count = 0;
            if next.fail_count >= next.tau_fail {
                next.scale *= T::of(0.5);
                next.fail_count = 0;
                if next.scale < next.min_scale {
                    next.needs_restart = true;
                }
            }
        }
        Ok(next)
    }
}
