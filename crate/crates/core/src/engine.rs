//! Primal-dual loop over exercise levels.

use rayon::prelude::*;

use crate::ambiguity::Driver;
use crate::basis::BasisSpec;
use crate::dual::{dual_pathwise_max, RunningDual};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::lsmc::{solve_interval, FitWorkspace, RegressionFit, RegressionMode};
use crate::paths::{PathBuf, PathEnsemble};
use crate::payoff::Reward;
use crate::scalar::Real;

/// Everything computed for one exercise level on the training ensemble.
///
/// Per-path arrays are date-major: entry `j * n_paths + n`.
#[derive(Debug, Clone)]
pub struct LevelState<T> {
    pub level: usize,
    pub fit: RegressionFit<T>,
    /// `c̄ˡ_j`, floored at zero; zero at the last date.
    pub continuation: Vec<T>,
    /// `Ūˡ_j = f_j + c̄^{l−1}_j`.
    pub exercise_value: Vec<T>,
    /// `Ȳˡ_j = max(Ūˡ_j, c̄ˡ_j)`.
    pub value: Vec<T>,
    /// `M̄ˡ` at exercise dates, zero at date 0.
    pub martingale: Vec<T>,
}

/// Exercise dates of one path and the cash collected.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingVector<T> {
    /// `times[l − 1]` is the date of right `l`, `None` if never exercised.
    pub times: Vec<Option<usize>>,
    pub cash: T,
}

impl<T> StoppingVector<T> {
    pub fn exercised(&self) -> usize {
        self.times.iter().flatten().count()
    }
}

/// Output of [`run_primal_dual`].
#[derive(Debug, Clone)]
pub struct PrimalDual<T> {
    grid: TimeGrid<T>,
    driver: Driver,
    n_paths: usize,
    /// `f_j` on the training paths, date-major.
    payoffs: Vec<T>,
    levels: Vec<LevelState<T>>,
}

/// Training steps `(a, b)` and weight on `b` for fine step `k` of a grid
/// refined by `factor`, with `per_interval` training steps per exercise
/// interval.
pub fn blend<T: Real>(k: usize, factor: usize, per_interval: usize) -> (usize, usize, T) {
    let c = k / factor;
    if factor == 1 {
        return (c, c, T::zero());
    }
    let offset = ((k % factor) as f64 + 0.5) / factor as f64 - 0.5;
    let first = c % per_interval == 0;
    let last = (c + 1) % per_interval == 0;
    if offset < 0.0 && !first {
        (c - 1, c, T::lit(1.0 + offset))
    } else if offset > 0.0 && !last {
        (c, c + 1, T::lit(offset))
    } else {
        (c, c, T::zero())
    }
}

/// Runs levels `1..=rights`; level `l + 1` reuses the continuation of level
/// `l` in its exercise value.
pub fn run_primal_dual<T: Real, R: Reward<T> + ?Sized>(
    ensemble: &PathEnsemble<T>,
    reward: &R,
    driver: &Driver,
    rights: usize,
    basis: &BasisSpec<T>,
    grid: &TimeGrid<T>,
    mode: RegressionMode,
) -> Result<PrimalDual<T>> {
    if rights == 0 {
        return Err(Error::Config(
            "at least one exercise right is required".into(),
        ));
    }
    if ensemble.n_times() != grid.n_times() {
        return Err(Error::Dimension {
            what: "ensemble times",
            expected: grid.n_times(),
            got: ensemble.n_times(),
        });
    }
    let n = ensemble.n_paths();
    let nd = grid.n_dates();
    let dates = grid.exercise_dates();
    let mut payoffs = vec![T::zero(); nd * n];
    for j in 0..nd {
        let k = grid.date_index(j);
        for i in 0..n {
            let f = reward.reward(j, dates[j], ensemble.state(k, i));
            if !(f >= T::zero()) {
                return Err(Error::Config(format!(
                    "reward must be nonnegative, got {} at date {j}",
                    f.f64()
                )));
            }
            payoffs[j * n + i] = f;
        }
    }
    let mut levels: Vec<LevelState<T>> = Vec::with_capacity(rights);
    for l in 1..=rights {
        let prev = levels.last().map(|s| &s.continuation);
        let mut fit = RegressionFit::new(
            basis.clone(),
            None,
            mode,
            ensemble.brownian_dim(),
            ensemble.jump_dim(),
            grid.n_steps(),
        );
        let mut continuation = vec![T::zero(); nd * n];
        let mut exercise_value = vec![T::zero(); nd * n];
        let mut value = vec![T::zero(); nd * n];
        let mut jumps = vec![T::zero(); (nd - 1) * n];
        let last = nd - 1;
        for i in 0..n {
            let f = payoffs[last * n + i];
            exercise_value[last * n + i] = f;
            value[last * n + i] = f;
        }
        for j in (0..last).rev() {
            let terminal = &value[(j + 1) * n..(j + 2) * n];
            let sol =
                solve_interval(terminal, ensemble, driver, grid, j, &mut fit).map_err(|e| {
                    log::error!("level {l}, interval {j}: {e}");
                    e.in_stage("primal-dual")
                })?;
            for i in 0..n {
                let c = sol.continuation[i].max(T::zero());
                let u = payoffs[j * n + i] + prev.map_or(T::zero(), |p| p[j * n + i]);
                continuation[j * n + i] = c;
                exercise_value[j * n + i] = u;
                value[j * n + i] = u.max(c);
                jumps[j * n + i] = sol.increments.chunks(n).map(|s| s[i]).sum();
            }
        }
        let mut martingale = vec![T::zero(); nd * n];
        for j in 1..nd {
            for i in 0..n {
                martingale[j * n + i] = martingale[(j - 1) * n + i] + jumps[(j - 1) * n + i];
            }
        }
        log::debug!("level {l}: Y0 = {}", mean(&value[..n]).f64());
        levels.push(LevelState {
            level: l,
            fit,
            continuation,
            exercise_value,
            value,
            martingale,
        });
    }
    Ok(PrimalDual {
        grid: grid.clone(),
        driver: driver.clone(),
        n_paths: n,
        payoffs,
        levels,
    })
}

fn mean<T: Real>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::lit(v.len() as f64)
}

impl<T: Real> PrimalDual<T> {
    pub fn rights(&self) -> usize {
        self.levels.len()
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Level `l` in `1..=L`.
    pub fn level(&self, l: usize) -> &LevelState<T> {
        &self.levels[l - 1]
    }

    pub fn levels(&self) -> &[LevelState<T>] {
        &self.levels
    }

    pub fn payoffs(&self) -> &[T] {
        &self.payoffs
    }

    /// The first `rights` levels; they are exactly what a run with that many
    /// rights would have produced.
    pub fn truncated(&self, rights: usize) -> Result<Self> {
        if rights == 0 || rights > self.rights() {
            return Err(Error::Config(format!(
                "cannot truncate {} levels to {rights}",
                self.rights()
            )));
        }
        Ok(Self {
            grid: self.grid.clone(),
            driver: self.driver.clone(),
            n_paths: self.n_paths,
            payoffs: self.payoffs.clone(),
            levels: self.levels[..rights].to_vec(),
        })
    }

    /// Training-sample mean of `Ȳˡ_0`; zero for `l = 0`.
    pub fn value_at_zero(&self, l: usize) -> T {
        if l == 0 {
            T::zero()
        } else {
            mean(&self.level(l).value[..self.n_paths])
        }
    }

    /// Largest `|Ȳ − max(Ū, c̄)|` over all stored entries.
    pub fn bellman_residual(&self) -> T {
        self.levels
            .iter()
            .flat_map(|s| {
                s.value
                    .iter()
                    .zip(&s.exercise_value)
                    .zip(&s.continuation)
                    .map(|((y, u), c)| (*y - u.max(*c)).abs())
            })
            .fold(T::zero(), T::max)
    }

    pub fn workspace(&self) -> FitWorkspace<T> {
        self.levels[0].fit.workspace()
    }

    /// `c̄ˡ_j(x)` from the fitted coefficients, for any state.
    pub fn continuation_at(&self, l: usize, j: usize, state: &[T], ws: &mut FitWorkspace<T>) -> T {
        if l == 0 || j + 1 >= self.grid.n_dates() {
            return T::zero();
        }
        let k = self.grid.date_index(j);
        let h = self.grid.step_dt(k);
        let (c, _) = self
            .level(l)
            .fit
            .mean_and_value(k, state, h, &self.driver, ws);
        c.max(T::zero())
    }

    /// Greedy exercise policy for `L` rights: right `l` is used at the first
    /// date after right `l − 1` where `f + c̄^{L−l} ≥ c̄^{L−l+1}`.
    ///
    /// `stride` is the number of fine steps per interval on `path`.
    pub fn stopping_policy<R: Reward<T> + ?Sized>(
        &self,
        reward: &R,
        path: &PathBuf<T>,
        stride: usize,
        ws: &mut FitWorkspace<T>,
    ) -> StoppingVector<T> {
        let big_l = self.rights();
        let dates = self.grid.exercise_dates();
        let mut times = vec![None; big_l];
        let mut cash = T::zero();
        let mut r = 1;
        for (j, &t) in dates.iter().enumerate() {
            if r > big_l {
                break;
            }
            let x = path.state(j * stride);
            let f = reward.reward(j, t, x);
            let keep = self.continuation_at(big_l - r + 1, j, x, ws);
            let spare = self.continuation_at(big_l - r, j, x, ws);
            if f + spare >= keep {
                times[r - 1] = Some(j);
                cash = cash + f;
                r += 1;
            }
        }
        StoppingVector { times, cash }
    }

    /// Policy cash-flows of every path of `ensemble`.
    pub fn policy_cash<R: Reward<T> + ?Sized>(
        &self,
        reward: &R,
        ensemble: &PathEnsemble<T>,
    ) -> Vec<T> {
        let stride = self.grid.steps_per_interval();
        (0..ensemble.n_paths())
            .into_par_iter()
            .map_init(
                || (PathBuf::default(), self.workspace()),
                |(buf, ws), n| {
                    buf.load_ensemble(ensemble, n);
                    self.stopping_policy(reward, buf, stride, ws).cash
                },
            )
            .collect()
    }

    /// `M̄ˡ` at every fine time of `path`, whose grid refines the training
    /// grid by `factor`. Controls on a fine step interpolate between the
    /// training steps whose midpoints bracket it, within one exercise
    /// interval.
    pub fn martingale_path(
        &self,
        l: usize,
        path: &PathBuf<T>,
        factor: usize,
        ws: &mut FitWorkspace<T>,
        out: &mut Vec<T>,
    ) {
        out.clear();
        out.push(T::zero());
        let fit = &self.level(l).fit;
        let mut m = T::zero();
        for k in 0..path.n_times() - 1 {
            let inc = fit.increment_blended(
                blend(k, factor, self.grid.steps_per_interval()),
                path.state(k),
                path.dw(k),
                path.dn_comp(k),
                path.step_dt(k),
                &self.driver,
                ws,
            );
            m = m + inc;
            out.push(m);
        }
    }

    /// `[level][fine time]` martingale values on `path`.
    pub fn martingale_family(
        &self,
        path: &PathBuf<T>,
        factor: usize,
        ws: &mut FitWorkspace<T>,
    ) -> Vec<Vec<T>> {
        (1..=self.rights())
            .map(|l| {
                let mut v = Vec::with_capacity(path.n_times());
                self.martingale_path(l, path, factor, ws, &mut v);
                v
            })
            .collect()
    }

    /// Pathwise dual `Θ_0^L` of `path` with the reconstructed martingales.
    pub fn dual_terminal<R: Reward<T> + ?Sized>(
        &self,
        reward: &R,
        path: &PathBuf<T>,
        factor: usize,
        ws: &mut FitWorkspace<T>,
    ) -> T {
        let stride = self.grid.steps_per_interval() * factor;
        let fam = self.martingale_family(path, factor, ws);
        let (f, m) = self.at_dates(reward, path, stride, &fam);
        dual_pathwise_max(&f, &m, self.rights())
    }

    fn at_dates<R: Reward<T> + ?Sized>(
        &self,
        reward: &R,
        path: &PathBuf<T>,
        stride: usize,
        fam: &[Vec<T>],
    ) -> (Vec<T>, Vec<Vec<T>>) {
        let dates = self.grid.exercise_dates();
        let f = dates
            .iter()
            .enumerate()
            .map(|(j, &t)| reward.reward(j, t, path.state(j * stride)))
            .collect();
        let m = fam
            .iter()
            .map(|v| (0..dates.len()).map(|j| v[j * stride]).collect())
            .collect();
        (f, m)
    }

    /// Pathwise dual on the training paths from the stored martingales.
    pub fn training_dual_terminal(&self) -> Vec<T> {
        let n = self.n_paths;
        let nd = self.grid.n_dates();
        (0..n)
            .map(|i| {
                let f: Vec<T> = (0..nd).map(|j| self.payoffs[j * n + i]).collect();
                let m: Vec<Vec<T>> = self
                    .levels
                    .iter()
                    .map(|s| (0..nd).map(|j| s.martingale[j * n + i]).collect())
                    .collect();
                dual_pathwise_max(&f, &m, self.rights())
            })
            .collect()
    }

    /// Markov state of the dual on `path`: per fine time, the original state
    /// followed by `M̄¹..M̄ᴸ` and the running dual maximum at the last date
    /// reached. Returns `(values, width)` with `width = L + 1` extra
    /// coordinates per time, and the pathwise dual.
    pub fn augmented_path<R: Reward<T> + ?Sized>(
        &self,
        reward: &R,
        path: &PathBuf<T>,
        factor: usize,
        ws: &mut FitWorkspace<T>,
    ) -> (Vec<T>, T) {
        let big_l = self.rights();
        let stride = self.grid.steps_per_interval() * factor;
        let fam = self.martingale_family(path, factor, ws);
        let dates = self.grid.exercise_dates();
        let width = big_l + 1;
        let nt = path.n_times();
        let mut out = vec![T::zero(); nt * width];
        let mut run = RunningDual::new(big_l);
        let mut current = T::zero();
        let mut m = vec![T::zero(); big_l];
        for k in 0..nt {
            if k % stride == 0 {
                let j = k / stride;
                for q in 0..big_l {
                    m[q] = fam[q][k];
                }
                current = run.push(reward.reward(j, dates[j], path.state(k)), &m);
            }
            for q in 0..big_l {
                out[k * width + q] = fam[q][k];
            }
            out[k * width + big_l] = current;
        }
        (out, current)
    }
}
