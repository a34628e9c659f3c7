//! Genuine lower bound, approximate upper bound and genuine upper bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{Driver, LogWeight};
use crate::basis::BasisSpec;
use crate::engine::{blend, PrimalDual};
use crate::error::{Error, Result};
use crate::lsmc::{solve_horizon, FitWorkspace, RegressionFit, RegressionMode};
use crate::paths::{PathBuf, PathDraw, PathEnsemble, PathSampler};
use crate::payoff::Reward;
use crate::scalar::Real;
use crate::stats::SampleStats;

/// Where evaluation paths come from.
#[derive(Clone, Copy)]
pub enum PathSource<'a, T> {
    Stored(&'a PathEnsemble<T>),
    /// Paths `0..count` of a sampler, drawn on demand and never stored.
    Streamed {
        sampler: &'a PathSampler,
        count: usize,
    },
}

impl<T: Real> PathSource<'_, T> {
    pub fn len(&self) -> usize {
        match self {
            PathSource::Stored(e) => e.n_paths(),
            PathSource::Streamed { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies `f` to every path in parallel; results keep path order.
    pub fn map<W, R, I, F>(&self, init: I, f: F) -> Vec<R>
    where
        R: Send,
        I: Fn() -> W + Sync + Send,
        F: Fn(&PathBuf<T>, &mut W) -> R + Sync + Send,
    {
        (0..self.len())
            .into_par_iter()
            .map_init(
                || (PathBuf::default(), PathDraw::default(), init()),
                |(buf, draw, w), n| {
                    match self {
                        PathSource::Stored(e) => buf.load_ensemble(e, n),
                        PathSource::Streamed { sampler, .. } => {
                            sampler.draw(n as u64, draw);
                            buf.load_draw(sampler, draw);
                        }
                    }
                    f(buf, w)
                },
            )
            .collect()
    }
}

/// `exp(𝓛²T/2)` for the Lipschitz modulus `𝓛` of the driver.
pub fn lipschitz_constant(driver: &Driver, maturity: f64) -> f64 {
    let l = driver.lipschitz_modulus();
    (l * l * maturity / 2.0).exp()
}

#[derive(Debug, Clone, Serialize)]
pub struct LowerBound {
    pub lb_raw: SampleStats,
    pub lb: SampleStats,
    /// Radon–Nikodym weights of the evaluation paths.
    pub weight: SampleStats,
    /// Mean number of rights used per path.
    pub mean_exercised: f64,
}

/// Lower bound from the policy of `pd`.
///
/// A BSDE fit of the policy cash-flows on `fit_paths` supplies both the
/// controls of the worst-case measure and the martingale `M̄` subtracted
/// from the cash-flows. Each evaluation path contributes `D·U` and
/// `D·(U − M̄_T)`; `D = 1` when the driver vanishes.
pub fn lower_bound<T: Real, R: Reward<T> + ?Sized>(
    pd: &PrimalDual<T>,
    reward: &R,
    fit_paths: &PathEnsemble<T>,
    eval: PathSource<'_, T>,
    basis: &BasisSpec<T>,
    mode: RegressionMode,
) -> Result<LowerBound> {
    let driver = pd.driver();
    let grid = pd.grid();
    let cash = pd.policy_cash(reward, fit_paths);
    let mut fit = RegressionFit::new(
        basis.clone(),
        None,
        mode,
        fit_paths.brownian_dim(),
        fit_paths.jump_dim(),
        grid.n_steps(),
    );
    solve_horizon(&cash, fit_paths, driver, grid, &mut fit)
        .map_err(|e| e.in_stage("lower-bound fit"))?;
    let stride = grid.steps_per_interval();
    let tilt = !driver.is_zero();
    let rows = eval.map(
        || (pd.workspace(), fit.workspace(), Scratch::new(driver)),
        |buf, (ws, fws, s)| -> Result<(f64, f64, f64, usize)> {
            let sv = pd.stopping_policy(reward, buf, stride, ws);
            let (w, m_t) = weight_and_martingale(&fit, driver, buf, fws, s, tilt)?;
            Ok((
                (w * sv.cash).f64(),
                (w * (sv.cash - m_t)).f64(),
                w.f64(),
                sv.exercised(),
            ))
        },
    );
    let rows: Vec<_> = rows
        .into_iter()
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("lower-bound evaluation"))?;
    let n = rows.len().max(1) as f64;
    Ok(LowerBound {
        lb_raw: SampleStats::from_iter(rows.iter().map(|r| r.0)),
        lb: SampleStats::from_iter(rows.iter().map(|r| r.1)),
        weight: SampleStats::from_iter(rows.iter().map(|r| r.2)),
        mean_exercised: rows.iter().map(|r| r.3 as f64).sum::<f64>() / n,
    })
}

struct Scratch<T> {
    q: Vec<T>,
    dl: Vec<T>,
}

impl<T: Real> Scratch<T> {
    fn new(driver: &Driver) -> Self {
        Self {
            q: vec![T::zero(); driver.brownian_dim()],
            dl: vec![T::zero(); driver.jump_dim()],
        }
    }
}

fn weight_and_martingale<T: Real>(
    fit: &RegressionFit<T>,
    driver: &Driver,
    buf: &PathBuf<T>,
    ws: &mut FitWorkspace<T>,
    s: &mut Scratch<T>,
    tilt: bool,
) -> Result<(T, T)> {
    let mut lw = LogWeight::default();
    let mut m = T::zero();
    for k in 0..buf.n_times() - 1 {
        let h = buf.step_dt(k);
        m = m + fit.increment(k, buf.state(k), buf.dw(k), buf.dn_comp(k), h, driver, ws);
        if tilt {
            driver.subgradient_into(&ws.z, &ws.zt, &mut s.q, &mut s.dl);
            lw.step(driver, k, &s.q, &s.dl, buf.dw(k), buf.dn(k), h)?;
        }
    }
    Ok((if tilt { lw.weight() } else { T::one() }, m))
}

/// Regressors of the upper-bound BSDE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperBasis {
    /// Spline features of the state only.
    #[default]
    State,
    /// Spline features plus raw martingale and running-dual coordinates.
    Augmented,
}

/// BSDE fit of the pathwise dual over the augmented state.
#[derive(Debug, Clone)]
pub struct UpperFit<T> {
    pub fit: RegressionFit<T>,
    /// Approximate upper bound `Ȳ₀`.
    pub y0: T,
    /// Pathwise duals of the fitting paths.
    pub dual: SampleStats,
}

/// Augmented states `(X, M̄¹..M̄ᴸ, running dual)` of every path of
/// `ensemble`, time-major, and the pathwise duals.
pub fn augment_ensemble<T: Real, R: Reward<T> + ?Sized>(
    pd: &PrimalDual<T>,
    reward: &R,
    ensemble: &PathEnsemble<T>,
) -> Result<(PathEnsemble<T>, Vec<T>)> {
    let width = pd.rights() + 1;
    let n = ensemble.n_paths();
    let nt = ensemble.n_times();
    let per_path = PathSource::Stored(ensemble).map(
        || pd.workspace(),
        |buf, ws| pd.augmented_path(reward, buf, 1, ws),
    );
    let mut extra = vec![T::zero(); nt * n * width];
    let mut theta = Vec::with_capacity(n);
    for (i, (aug, th)) in per_path.into_iter().enumerate() {
        for k in 0..nt {
            let dst = (k * n + i) * width;
            extra[dst..dst + width].copy_from_slice(&aug[k * width..(k + 1) * width]);
        }
        theta.push(th);
    }
    Ok((ensemble.augment(&extra, width)?, theta))
}

/// Approximate upper bound: worst-case expectation of the pathwise dual,
/// regressing on `basis` extended by the `L + 1` augmented coordinates.
pub fn approximate_upper_bound<T: Real, R: Reward<T> + ?Sized>(
    pd: &PrimalDual<T>,
    reward: &R,
    ensemble: &PathEnsemble<T>,
    basis: &BasisSpec<T>,
    upper_basis: UpperBasis,
    mode: RegressionMode,
) -> Result<UpperFit<T>> {
    let (aug, theta) = augment_ensemble(pd, reward, ensemble)?;
    let aug_basis = match upper_basis {
        UpperBasis::State => basis.clone(),
        UpperBasis::Augmented => basis.augmented(pd.rights() + 1),
    };
    let mut fit = RegressionFit::new(
        aug_basis,
        None,
        mode,
        aug.brownian_dim(),
        aug.jump_dim(),
        pd.grid().n_steps(),
    );
    let u0 = solve_horizon(&theta, &aug, pd.driver(), pd.grid(), &mut fit)
        .map_err(|e| e.in_stage("upper-bound fit"))?;
    let y0 = u0.iter().copied().sum::<T>() / T::lit(u0.len() as f64);
    Ok(UpperFit {
        fit,
        y0,
        dual: SampleStats::from_iter(theta.iter().map(|t| t.f64())),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GenuineUpper {
    pub ub: f64,
    pub tracking_error: f64,
    /// Pathwise duals of the evaluation paths.
    pub dual: SampleStats,
}

/// `Ȳ₀ + K·mean₁/√mean₂` where the means are of `|Û − Θ|²` over the two
/// halves of `eval`; `Û` starts at `Ȳ₀` and follows the fitted increments.
///
/// `eval` lives on the training grid refined by `factor`.
pub fn genuine_upper_bound<T: Real, R: Reward<T> + ?Sized>(
    pd: &PrimalDual<T>,
    reward: &R,
    upper: &UpperFit<T>,
    eval: PathSource<'_, T>,
    factor: usize,
    k: f64,
) -> Result<GenuineUpper> {
    if eval.len() < 2 {
        return Err(Error::Config(
            "the upper bound needs at least two evaluation paths".into(),
        ));
    }
    let width = pd.rights() + 1;
    let driver = pd.driver();
    let per_interval = pd.grid().steps_per_interval();
    let rows = eval.map(
        || (pd.workspace(), upper.fit.workspace(), Vec::new()),
        |buf, (ws, fws, state)| {
            let (aug, theta) = pd.augmented_path(reward, buf, factor, ws);
            let mut u = upper.y0;
            for s in 0..buf.n_times() - 1 {
                state.clear();
                state.extend_from_slice(buf.state(s));
                state.extend_from_slice(&aug[s * width..(s + 1) * width]);
                u = u + upper.fit.increment_blended(
                    blend(s, factor, per_interval),
                    state,
                    buf.dw(s),
                    buf.dn_comp(s),
                    buf.step_dt(s),
                    driver,
                    fws,
                );
            }
            let r = (u - theta).f64();
            (r * r, theta.f64())
        },
    );
    let half = rows.len() / 2;
    let mean = |v: &[(f64, f64)]| v.iter().map(|r| r.0).sum::<f64>() / v.len() as f64;
    let (m1, m2) = (mean(&rows[..half]), mean(&rows[half..]));
    let y0 = upper.y0.f64();
    let ub = if m2 > 0.0 {
        y0 + k * m1 / m2.sqrt()
    } else {
        y0
    };
    Ok(GenuineUpper {
        ub,
        tracking_error: mean(&rows).sqrt(),
        dual: SampleStats::from_iter(rows.iter().map(|r| r.1)),
    })
}

/// One row of a bounds table.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub ambiguity: String,
    pub rights: usize,
    pub lb_raw: f64,
    pub lb_raw_se: f64,
    pub lb: f64,
    pub lb_se: f64,
    pub y0_upper: f64,
    pub tracking_error: f64,
    pub ub: f64,
    pub dual_mean: f64,
    pub dual_se: f64,
    pub lipschitz_k: f64,
    /// Training value `Ȳᴸ_0` of the primal-dual loop.
    pub y0_primal: f64,
    pub sizes: [usize; 5],
    pub seed: u64,
}

impl BoundsReport {
    pub const CSV_HEADER: &'static str =
        "ambiguity,lb_raw,lb_raw_se,lb,lb_se,y0_upper,te,ub,dual_mean,dual_se";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.ambiguity,
            self.lb_raw,
            self.lb_raw_se,
            self.lb,
            self.lb_se,
            self.y0_upper,
            self.tracking_error,
            self.ub,
            self.dual_mean,
            self.dual_se
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambiguity::DriverSpec;
    use crate::basis::centred_levels;
    use crate::engine::run_primal_dual;
    use crate::grid::TimeGrid;
    use crate::model::ModelConfig;
    use crate::paths::simulate;
    use crate::payoff::Payoff;

    #[test]
    fn lipschitz_examples() {
        let zero = Driver::zero(1, &[]);
        assert_eq!(lipschitz_constant(&zero, 3.0), 1.0);
        let ball = Driver::bind(&DriverSpec::ball(0.1, 0.0), 1, &[], None).unwrap();
        assert!((lipschitz_constant(&ball, 3.0) - 0.015f64.exp()).abs() < 1e-12);
        let disc: DriverSpec =
            serde_json::from_str(r#"{"kind":"discrete","q":[-0.1,0.3],"lambda":[]}"#).unwrap();
        let d = Driver::bind(&disc, 1, &[], None).unwrap();
        assert!((d.lipschitz_modulus() - 0.3).abs() < 1e-15);
    }

    struct Setup {
        grid: TimeGrid<f64>,
        model: ModelConfig,
        basis: BasisSpec<f64>,
        pd: PrimalDual<f64>,
        put: Payoff,
    }

    fn setup(delta: f64) -> Setup {
        let grid = TimeGrid::equidistant(1.0, 5, 4).unwrap();
        let model = ModelConfig::gbm(100.0, 0.0, 0.25);
        let e = simulate::<f64>(&model, &grid, 3000, 1).unwrap();
        let basis = BasisSpec::from_ensemble(&e, 0, &centred_levels(8)).unwrap();
        let put = Payoff::Put {
            strike: 100.0,
            rate: 0.0,
        };
        let driver = Driver::bind(&DriverSpec::ball(delta, 0.0), 1, &[], None).unwrap();
        let pd = run_primal_dual(
            &e,
            &put,
            &driver,
            1,
            &basis,
            &grid,
            RegressionMode::Explicit,
        )
        .unwrap();
        Setup {
            grid,
            model,
            basis,
            pd,
            put,
        }
    }

    #[test]
    fn zero_driver_lower_bound_is_plain_mean() {
        let s = setup(0.0);
        let e2 = simulate::<f64>(&s.model, &s.grid, 3000, 2).unwrap();
        let e3 = simulate::<f64>(&s.model, &s.grid, 2000, 3).unwrap();
        let lb = lower_bound(
            &s.pd,
            &s.put,
            &e2,
            PathSource::Stored(&e3),
            &s.basis,
            RegressionMode::Explicit,
        )
        .unwrap();
        let cash = s.pd.policy_cash(&s.put, &e3);
        let plain = SampleStats::from_slice(&cash);
        assert!((lb.lb_raw.mean - plain.mean).abs() < 1e-12);
        assert_eq!(lb.weight.variance, 0.0);
        assert!(lb.lb.std_error < 0.5 * lb.lb_raw.std_error);
        assert!(
            (lb.lb.mean - lb.lb_raw.mean).abs() < 3.0 * (lb.lb.std_error + lb.lb_raw.std_error)
        );
    }

    #[test]
    fn streamed_and_stored_agree() {
        let s = setup(0.0);
        let sampler = PathSampler::new(&s.model, &s.grid, 3).unwrap();
        let e2 = simulate::<f64>(&s.model, &s.grid, 1000, 2).unwrap();
        let e3 = PathEnsemble::sample(&sampler, &s.grid, 500).unwrap();
        let a = lower_bound(
            &s.pd,
            &s.put,
            &e2,
            PathSource::Stored(&e3),
            &s.basis,
            RegressionMode::Explicit,
        )
        .unwrap();
        let b = lower_bound(
            &s.pd,
            &s.put,
            &e2,
            PathSource::Streamed {
                sampler: &sampler,
                count: 500,
            },
            &s.basis,
            RegressionMode::Explicit,
        )
        .unwrap();
        assert!((a.lb.mean - b.lb.mean).abs() < 1e-9);
    }

    #[test]
    fn bracket_with_and_without_ambiguity() {
        for delta in [0.0, 0.2] {
            let s = setup(delta);
            let e2 = simulate::<f64>(&s.model, &s.grid, 3000, 2).unwrap();
            let e3 = simulate::<f64>(&s.model, &s.grid, 4000, 3).unwrap();
            let lb = lower_bound(
                &s.pd,
                &s.put,
                &e2,
                PathSource::Stored(&e3),
                &s.basis,
                RegressionMode::Explicit,
            )
            .unwrap();
            let e4 = simulate::<f64>(&s.model, &s.grid, 3000, 4).unwrap();
            let up = approximate_upper_bound(
                &s.pd,
                &s.put,
                &e4,
                &s.basis,
                UpperBasis::State,
                RegressionMode::Explicit,
            )
            .unwrap();
            let fine = s.grid.refine(5).unwrap();
            let sampler = PathSampler::new(&s.model, &fine, 5).unwrap();
            let ub = genuine_upper_bound(
                &s.pd,
                &s.put,
                &up,
                PathSource::Streamed {
                    sampler: &sampler,
                    count: 400,
                },
                5,
                1.0,
            )
            .unwrap();
            let tol = 3.0 * (lb.lb.std_error + ub.dual.std_error);
            assert!(
                lb.lb.mean <= up.y0 + tol,
                "delta {delta}: {} vs {}",
                lb.lb.mean,
                up.y0
            );
            assert!(up.y0 <= ub.ub);
            assert!(ub.tracking_error > 0.0);
            if delta > 0.0 {
                assert!(lb.weight.variance > 0.0);
                assert!((lb.weight.mean - 1.0).abs() < 3.0 * lb.weight.std_error + 1e-3);
            }
        }
    }

    #[test]
    fn ambiguity_raises_put_value() {
        let a = setup(0.0).pd.value_at_zero(1);
        let b = setup(0.3).pd.value_at_zero(1);
        assert!(b > a);
    }

    #[test]
    fn csv_row_has_ten_fields() {
        let r = BoundsReport {
            ambiguity: "inf".into(),
            rights: 1,
            lb_raw: 1.0,
            lb_raw_se: 0.1,
            lb: 1.0,
            lb_se: 0.1,
            y0_upper: 1.1,
            tracking_error: 0.05,
            ub: 1.15,
            dual_mean: 1.1,
            dual_se: 0.01,
            lipschitz_k: 1.0,
            y0_primal: 1.0,
            sizes: [1; 5],
            seed: 0,
        };
        assert_eq!(r.csv_row().split(',').count(), 10);
        assert_eq!(BoundsReport::CSV_HEADER.split(',').count(), 10);
    }
}
