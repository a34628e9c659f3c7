//! Exercise rewards `f_j(X_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A nonnegative reward collected on exercise at date `j`.
pub trait Reward<T>: Sync {
    fn reward(&self, date: usize, time: T, state: &[T]) -> T;
}

impl<T, F> Reward<T> for F
where
    F: Fn(usize, T, &[T]) -> T + Sync,
{
    fn reward(&self, date: usize, time: T, state: &[T]) -> T {
        self(date, time, state)
    }
}

/// Vanilla payoffs on the first state coordinate(s), discounted at a flat
/// `rate` to time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Call {
        strike: f64,
        #[serde(default)]
        rate: f64,
    },
    Put {
        strike: f64,
        #[serde(default)]
        rate: f64,
    },
    /// `(max_i x_i − K)⁺`.
    MaxCall {
        strike: f64,
        #[serde(default)]
        rate: f64,
    },
    /// Undiscounted `(x − K)⁺` per exercised right.
    SwingCall { strike: f64 },
}

impl Payoff {
    pub fn strike(&self) -> f64 {
        match self {
            Payoff::Call { strike, .. }
            | Payoff::Put { strike, .. }
            | Payoff::MaxCall { strike, .. }
            | Payoff::SwingCall { strike } => *strike,
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            Payoff::Call { rate, .. } | Payoff::Put { rate, .. } | Payoff::MaxCall { rate, .. } => {
                *rate
            }
            Payoff::SwingCall { .. } => 0.0,
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if !(self.strike() > 0.0) {
            return Err(Error::Config("payoff strike must be positive".into()));
        }
        if !self.rate().is_finite() {
            return Err(Error::Config("discount rate must be finite".into()));
        }
        if !matches!(self, Payoff::MaxCall { .. }) && state_dim != 1 {
            return Err(Error::Config(format!(
                "single-asset payoff on a {state_dim}-dimensional state"
            )));
        }
        Ok(())
    }

    /// True if exercise is optimal above the boundary.
    pub fn exercises_above(&self) -> bool {
        !matches!(self, Payoff::Put { .. })
    }

    /// Undiscounted intrinsic value.
    pub fn intrinsic<T: Real>(&self, state: &[T]) -> T {
        let k = T::lit(self.strike());
        let v = match self {
            Payoff::Call { .. } | Payoff::SwingCall { .. } => state[0] - k,
            Payoff::Put { .. } => k - state[0],
            Payoff::MaxCall { .. } => state.iter().copied().fold(T::neg_infinity(), T::max) - k,
        };
        v.max(T::zero())
    }
}

impl<T: Real> Reward<T> for Payoff {
    fn reward(&self, _date: usize, time: T, state: &[T]) -> T {
        let r = self.rate();
        let intrinsic = match self {
            // the max runs over asset coordinates only
            Payoff::MaxCall { .. } => self.intrinsic(state),
            _ => self.intrinsic(&state[..1]),
        };
        if r == 0.0 {
            intrinsic
        } else {
            intrinsic * (-T::lit(r) * time).exp()
        }
    }
}

/// Reward restricted to the first `dim` state coordinates, so that
/// augmented states can be fed to any payoff.
#[derive(Debug, Clone)]
pub struct Projected<'a, R> {
    pub inner: &'a R,
    pub dim: usize,
}

impl<T, R: Reward<T>> Reward<T> for Projected<'_, R> {
    fn reward(&self, date: usize, time: T, state: &[T]) -> T {
        self.inner.reward(date, time, &state[..self.dim])
    }
}
