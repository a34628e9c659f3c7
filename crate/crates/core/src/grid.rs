//! Two-level time grid: exercise dates embedded in a uniform-per-interval
//! simulation grid.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Exercise dates `t_0 < … < t_J` and the fine grid obtained by splitting
/// every interval into `steps_per_interval` equal steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    exercise_dates: Vec<T>,
    steps_per_interval: usize,
    fine_times: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(exercise_dates: Vec<T>, steps_per_interval: usize) -> Result<Self> {
        if exercise_dates.len() < 2 {
            return Err(Error::InvalidGrid(
                "at least two exercise dates are required".into(),
            ));
        }
        if steps_per_interval == 0 {
            return Err(Error::InvalidGrid("steps_per_interval must be >= 1".into()));
        }
        if let Some(w) = exercise_dates.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneDates { index: w + 1 });
        }
        let n0 = steps_per_interval;
        let mut fine_times = Vec::with_capacity((exercise_dates.len() - 1) * n0 + 1);
        for w in exercise_dates.windows(2) {
            let h = (w[1] - w[0]) / T::lit(n0 as f64);
            for p in 0..n0 {
                fine_times.push(w[0] + h * T::lit(p as f64));
            }
        }
        fine_times.push(*exercise_dates.last().unwrap());
        Ok(Self {
            exercise_dates,
            steps_per_interval,
            fine_times,
        })
    }

    /// `n_dates` equidistant dates on `[0, maturity]`, both ends included.
    pub fn equidistant(maturity: T, n_dates: usize, steps_per_interval: usize) -> Result<Self> {
        if n_dates < 2 {
            return Err(Error::InvalidGrid("n_dates must be >= 2".into()));
        }
        let m = (n_dates - 1) as f64;
        let dates = (0..n_dates)
            .map(|j| maturity * T::lit(j as f64) / T::lit(m))
            .collect();
        Self::new(dates, steps_per_interval)
    }

    pub fn exercise_dates(&self) -> &[T] {
        &self.exercise_dates
    }

    pub fn fine_times(&self) -> &[T] {
        &self.fine_times
    }

    pub fn steps_per_interval(&self) -> usize {
        self.steps_per_interval
    }

    /// Number of exercise dates `J + 1`.
    pub fn n_dates(&self) -> usize {
        self.exercise_dates.len()
    }

    pub fn n_intervals(&self) -> usize {
        self.exercise_dates.len() - 1
    }

    pub fn n_steps(&self) -> usize {
        self.fine_times.len() - 1
    }

    pub fn n_times(&self) -> usize {
        self.fine_times.len()
    }

    pub fn maturity(&self) -> T {
        *self.exercise_dates.last().unwrap()
    }

    /// Fine-time index of exercise date `j`.
    pub fn date_index(&self, j: usize) -> usize {
        j * self.steps_per_interval
    }

    /// Interval containing fine step `k` (the step from `k` to `k + 1`).
    pub fn interval_of_step(&self, k: usize) -> usize {
        k / self.steps_per_interval
    }

    /// Last exercise date at or before fine time `k`.
    pub fn date_at_or_before(&self, k: usize) -> usize {
        (k / self.steps_per_interval).min(self.n_intervals())
    }

    /// Length of fine step `k`.
    pub fn step_dt(&self, k: usize) -> T {
        let j = self.interval_of_step(k);
        (self.exercise_dates[j + 1] - self.exercise_dates[j])
            / T::lit(self.steps_per_interval as f64)
    }

    /// Same exercise dates with every fine step split into `factor` pieces.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        Self::new(
            self.exercise_dates.clone(),
            self.steps_per_interval * factor.max(1),
        )
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> TimeGrid<U> {
        TimeGrid {
            exercise_dates: self
                .exercise_dates
                .iter()
                .map(|t| U::lit(t.f64()))
                .collect(),
            steps_per_interval: self.steps_per_interval,
            fine_times: self.fine_times.iter().map(|t| U::lit(t.f64())).collect(),
        }
    }
}

/// Free-function form used by the harness.
pub fn build_grid<T: Real>(
    exercise_dates: Vec<T>,
    steps_per_interval: usize,
) -> Result<TimeGrid<T>> {
    TimeGrid::new(exercise_dates, steps_per_interval)
}
