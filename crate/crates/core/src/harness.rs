//! Experiment configuration and orchestration.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ambiguity::{Driver, DriverSpec, Radius};
use crate::basis::{centred_levels, BasisSpec};
use crate::bounds::{
    approximate_upper_bound, genuine_upper_bound, lipschitz_constant, lower_bound, BoundsReport,
    PathSource, UpperBasis,
};
use crate::engine::{run_primal_dual, PrimalDual};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::lsmc::RegressionMode;
use crate::model::ModelConfig;
use crate::paths::{presimulate_boundary_ensemble, PathEnsemble, PathSampler};
use crate::payoff::Payoff;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Explicit exercise dates; otherwise `n_dates` equidistant dates on
    /// `[0, maturity]`.
    #[serde(default)]
    pub dates: Option<Vec<f64>>,
    #[serde(default)]
    pub maturity: Option<f64>,
    #[serde(default)]
    pub n_dates: Option<usize>,
    pub steps_per_interval: usize,
    /// Refinement of the upper-bound evaluation grid.
    #[serde(default = "default_refine")]
    pub refine: usize,
}

fn default_refine() -> usize {
    100
}

impl GridConfig {
    pub fn build(&self) -> Result<TimeGrid<f64>> {
        match (&self.dates, self.maturity, self.n_dates) {
            (Some(d), _, _) => TimeGrid::new(d.clone(), self.steps_per_interval),
            (None, Some(t), Some(n)) => TimeGrid::equidistant(t, n, self.steps_per_interval),
            _ => Err(Error::Config(
                "grid needs `dates` or `maturity` and `n_dates`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Samples {
    /// Primal-dual training paths.
    pub n1: usize,
    /// Lower-bound fitting paths.
    pub n2: usize,
    /// Lower-bound evaluation paths.
    pub n3: usize,
    /// Upper-bound fitting paths.
    pub n4: usize,
    /// Half the upper-bound evaluation paths.
    pub n5: usize,
}

impl Samples {
    pub fn as_array(&self) -> [usize; 5] {
        [self.n1, self.n2, self.n3, self.n4, self.n5]
    }
}

/// Quantile levels of the spline knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    /// `n` centred levels `(2i + 1)/(2n)`.
    #[serde(default)]
    pub centred: Option<usize>,
    /// `n` evenly spaced levels `i/(n + 1)`.
    #[serde(default)]
    pub even: Option<usize>,
    #[serde(default)]
    pub quantiles: Option<Vec<f64>>,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            centred: Some(50),
            even: None,
            quantiles: None,
        }
    }
}

impl BasisConfig {
    pub fn levels(&self) -> Result<Vec<f64>> {
        match (&self.quantiles, self.centred, self.even) {
            (Some(q), None, None) => Ok(q.clone()),
            (None, Some(n), None) => Ok(centred_levels(n)),
            (None, None, Some(n)) => Ok((1..=n).map(|i| i as f64 / (n + 1) as f64).collect()),
            (None, None, None) => Ok(centred_levels(50)),
            _ => Err(Error::Config(
                "basis takes exactly one of centred, even, quantiles".into(),
            )),
        }
    }

    /// Twice as many levels, as used for exercise boundaries.
    pub fn doubled(&self) -> Result<Self> {
        Ok(match (&self.quantiles, self.centred, self.even) {
            (None, Some(n), None) => Self {
                centred: Some(2 * n),
                ..Self::default()
            },
            (None, None, Some(n)) => Self {
                centred: None,
                even: Some(2 * n + 1),
                quantiles: None,
            },
            (None, None, None) => Self {
                centred: Some(100),
                ..Self::default()
            },
            _ => Err(Error::Config("explicit quantiles cannot be doubled".into()))?,
        })
    }
}

/// Constant in front of the tracking error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum LipschitzK {
    Value(f64),
    Named(KName),
    #[default]
    #[serde(skip)]
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KName {
    One,
    Theory,
}

impl LipschitzK {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(LipschitzK::Named(KName::One)),
            "theory" => Ok(LipschitzK::Named(KName::Theory)),
            x => x.parse::<f64>().map(LipschitzK::Value).map_err(|_| {
                Error::Config(format!(
                    "--lipschitz-k expects one, theory or a number, got `{x}`"
                ))
            }),
        }
    }

    pub fn resolve(&self, driver: &Driver, maturity: f64) -> f64 {
        match self {
            LipschitzK::Value(k) => *k,
            LipschitzK::Named(KName::Theory) => lipschitz_constant(driver, maturity),
            LipschitzK::Named(KName::One) | LipschitzK::Unit => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub payoff: Payoff,
    #[serde(default = "DriverSpec::none")]
    pub driver: DriverSpec,
    #[serde(default = "one")]
    pub rights: usize,
    pub samples: Samples,
    #[serde(default)]
    pub basis: BasisConfig,
    #[serde(default)]
    pub mode: RegressionMode,
    /// Regressors of the upper-bound BSDE.
    #[serde(default)]
    pub upper_basis: UpperBasis,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lipschitz_k: LipschitzK,
    /// Lower limit for worst-case jump intensities.
    #[serde(default)]
    pub intensity_floor: Option<f64>,
    /// Text of the `ambiguity` column; derived from the driver if absent.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub output: Option<String>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.payoff.validate(self.model.state_dim())?;
        if self.rights == 0 {
            return Err(Error::Config("rights must be at least 1".into()));
        }
        if self.samples.as_array().iter().any(|&n| n < 2) {
            return Err(Error::Config("every sample size must be at least 2".into()));
        }
        if self.grid.steps_per_interval == 0 || self.grid.refine == 0 {
            return Err(Error::Config(
                "steps per interval and refinement must be positive".into(),
            ));
        }
        if self.model.state_dim() > 2 {
            return Err(Error::Config(
                "spline bases support at most two state coordinates".into(),
            ));
        }
        self.grid.build()?;
        self.basis.levels()?;
        self.bind_driver()?;
        Ok(())
    }

    /// Shrinks every sample size and the steps per interval by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::Config("scale must be positive".into()));
        }
        let f = |n: usize| ((n as f64 * s).round() as usize).max(2);
        let mut c = self.clone();
        c.samples = Samples {
            n1: f(self.samples.n1),
            n2: f(self.samples.n2),
            n3: f(self.samples.n3),
            n4: f(self.samples.n4),
            n5: f(self.samples.n5),
        };
        c.grid.steps_per_interval =
            ((self.grid.steps_per_interval as f64 * s).round() as usize).max(1);
        Ok(c)
    }

    pub fn bind_driver(&self) -> Result<Driver> {
        Driver::bind(
            &self.driver,
            self.model.brownian_dim(),
            &self.model.intensities(),
            self.intensity_floor,
        )
    }

    pub fn ambiguity_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        driver_label(&self.driver)
    }

    /// Per-stage seeds for N1..N5.
    pub fn seeds(&self) -> [u64; 5] {
        [1, 2, 3, 4, 5].map(|i| derive_seed(self.seed, i))
    }
}

/// `inf` without ambiguity, `1/δ₁` for a pure drift ball.
pub fn driver_label(spec: &DriverSpec) -> String {
    match spec {
        DriverSpec::Ball { delta1, delta2 } => {
            let uni = |r: &Radius| match r {
                Radius::Uniform(x) => Some(*x),
                Radius::PerCoordinate(v) if v.iter().all(|x| *x == v[0]) => {
                    v.first().copied().or(Some(0.0))
                }
                _ => None,
            };
            match (uni(delta1), uni(delta2)) {
                (Some(a), Some(b)) if a == 0.0 && b == 0.0 => "inf".into(),
                (Some(a), Some(b)) if b == 0.0 => fmt_num(1.0 / a),
                _ => format!(
                    "{}",
                    serde_json::to_string(spec)
                        .unwrap_or_default()
                        .replace(',', ";")
                ),
            }
        }
        DriverSpec::Discrete { .. } => "discrete".into(),
    }
}

fn fmt_num(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.4}")
    }
}

/// Stage-one artifacts shared by the lower and upper pipelines.
pub struct Trained {
    pub grid: TimeGrid<f64>,
    pub basis: BasisSpec<f64>,
    pub driver: Driver,
    pub pd: PrimalDual<f64>,
}

fn build_basis(cfg: &BasisConfig, e: &PathEnsemble<f64>) -> Result<BasisSpec<f64>> {
    let levels = cfg.levels()?;
    match e.dim() {
        1 => BasisSpec::from_ensemble(e, 0, &levels),
        2 => {
            let a = BasisSpec::from_ensemble(e, 0, &levels)?;
            let b = BasisSpec::from_ensemble(e, 1, &levels)?;
            BasisSpec::build_tensor(&a, &b)
        }
        d => Err(Error::Config(format!(
            "no spline basis for {d} state coordinates"
        ))),
    }
}

/// Simulates the training paths and runs the primal-dual loop.
pub fn train(cfg: &ExperimentConfig, rights: usize) -> Result<Trained> {
    let grid = cfg.grid.build()?;
    let driver = cfg.bind_driver()?;
    let seeds = cfg.seeds();
    let t = Instant::now();
    let sampler = PathSampler::new(&cfg.model, &grid, seeds[0])?;
    let e1 = PathEnsemble::sample(&sampler, &grid, cfg.samples.n1)
        .map_err(|e| e.in_stage("simulate N1"))?;
    let basis = build_basis(&cfg.basis, &e1).map_err(|e| e.in_stage("basis"))?;
    let pd = run_primal_dual(&e1, &cfg.payoff, &driver, rights, &basis, &grid, cfg.mode)
        .map_err(|e| e.in_stage("primal-dual"))?;
    log::info!("stage 1 done in {:.1}s", t.elapsed().as_secs_f64());
    Ok(Trained {
        grid,
        basis,
        driver,
        pd,
    })
}

/// Lower and upper bounds for every entry of `rights` from one training
/// run with the largest entry.
pub fn run_rights_ladder(cfg: &ExperimentConfig, rights: &[usize]) -> Result<Vec<BoundsReport>> {
    cfg.validate()?;
    let max_l = *rights
        .iter()
        .max()
        .ok_or_else(|| Error::Config("empty rights ladder".into()))?;
    if rights.contains(&0) {
        return Err(Error::Config("rights must be at least 1".into()));
    }
    let tr = train(cfg, max_l)?;
    let seeds = cfg.seeds();
    let grid = &tr.grid;
    let s2 = PathSampler::new(&cfg.model, grid, seeds[1])?;
    let n2 =
        PathEnsemble::sample(&s2, grid, cfg.samples.n2).map_err(|e| e.in_stage("simulate N2"))?;
    let s3 = PathSampler::new(&cfg.model, grid, seeds[2])?;
    let s4 = PathSampler::new(&cfg.model, grid, seeds[3])?;
    let e4 =
        PathEnsemble::sample(&s4, grid, cfg.samples.n4).map_err(|e| e.in_stage("simulate N4"))?;
    let fine = grid.refine(cfg.grid.refine)?;
    let s5 = PathSampler::new(&cfg.model, &fine, seeds[4])?;
    let k = cfg.lipschitz_k.resolve(&tr.driver, grid.maturity());
    let mut out = Vec::with_capacity(rights.len());
    for &l in rights {
        let t = Instant::now();
        let pd = tr.pd.truncated(l)?;
        let lb = lower_bound(
            &pd,
            &cfg.payoff,
            &n2,
            PathSource::Streamed {
                sampler: &s3,
                count: cfg.samples.n3,
            },
            &tr.basis,
            cfg.mode,
        )
        .map_err(|e| e.in_stage("lower bound"))?;
        log::info!(
            "L = {l}: lower bound after {:.1}s",
            t.elapsed().as_secs_f64()
        );
        let up =
            approximate_upper_bound(&pd, &cfg.payoff, &e4, &tr.basis, cfg.upper_basis, cfg.mode)
                .map_err(|e| e.in_stage("approximate upper bound"))?;
        log::info!(
            "L = {l}: approximate upper bound after {:.1}s",
            t.elapsed().as_secs_f64()
        );
        let gu = genuine_upper_bound(
            &pd,
            &cfg.payoff,
            &up,
            PathSource::Streamed {
                sampler: &s5,
                count: 2 * cfg.samples.n5,
            },
            cfg.grid.refine,
            k,
        )
        .map_err(|e| e.in_stage("genuine upper bound"))?;
        log::info!("L = {l}: bounds in {:.1}s", t.elapsed().as_secs_f64());
        out.push(BoundsReport {
            ambiguity: cfg.ambiguity_label(),
            rights: l,
            lb_raw: lb.lb_raw.mean,
            lb_raw_se: lb.lb_raw.std_error,
            lb: lb.lb.mean,
            lb_se: lb.lb.std_error,
            y0_upper: up.y0,
            tracking_error: gu.tracking_error,
            ub: gu.ub,
            dual_mean: gu.dual.mean,
            dual_se: gu.dual.std_error,
            lipschitz_k: k,
            y0_primal: pd.value_at_zero(l),
            sizes: cfg.samples.as_array(),
            seed: cfg.seed,
        });
    }
    Ok(out)
}

/// Full pipeline for the configured number of rights.
pub fn run_price(cfg: &ExperimentConfig) -> Result<BoundsReport> {
    Ok(run_rights_ladder(cfg, &[cfg.rights])?.remove(0))
}

/// Exercise threshold of right `level` at one date.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryRow {
    pub date: usize,
    pub time: f64,
    pub level: usize,
    /// `None` if exercise and continuation do not cross in the sampled range.
    pub threshold: Option<f64>,
    pub exercise_above: bool,
}

impl BoundaryRow {
    pub const CSV_HEADER: &'static str = "date,time,level,threshold,direction";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{},{},{}",
            self.date,
            self.time,
            self.level,
            self.threshold
                .map_or("out_of_range".to_string(), |x| format!("{x:.6}")),
            if self.exercise_above {
                "above"
            } else {
                "below"
            }
        )
    }
}

/// Thresholds where `f_j + c̄^{l−1}_j − c̄ˡ_j` changes sign, from a training
/// run on pre-simulated paths with doubled paths and knots.
pub fn run_boundary(cfg: &ExperimentConfig) -> Result<Vec<BoundaryRow>> {
    cfg.validate()?;
    if cfg.model.state_dim() != 1 {
        return Err(Error::Config(
            "boundaries need a one-dimensional state".into(),
        ));
    }
    let grid = cfg.grid.build()?;
    let driver = cfg.bind_driver()?;
    let e =
        presimulate_boundary_ensemble::<f64>(&cfg.model, &grid, 2 * cfg.samples.n1, cfg.seeds()[0])
            .map_err(|e| e.in_stage("pre-simulation"))?;
    let doubled = cfg.basis.doubled()?;
    log::info!(
        "boundary basis levels {:?} (finer quantile grid read as evenly spaced, 0.0015 taken as 0.015)",
        doubled.levels()?.iter().take(3).collect::<Vec<_>>()
    );
    let basis = build_basis(&doubled, &e)?;
    let pd = run_primal_dual(
        &e,
        &cfg.payoff,
        &driver,
        cfg.rights,
        &basis,
        &grid,
        cfg.mode,
    )
    .map_err(|e| e.in_stage("primal-dual"))?;
    Ok(boundaries(&pd, &cfg.payoff, &e))
}

/// Thresholds for every date before maturity and every level of `pd`,
/// searched within the sampled state range of each date.
pub fn boundaries(
    pd: &PrimalDual<f64>,
    payoff: &Payoff,
    e: &PathEnsemble<f64>,
) -> Vec<BoundaryRow> {
    use crate::payoff::Reward;
    let grid = pd.grid();
    let above = payoff.exercises_above();
    let mut ws = pd.workspace();
    let mut rows = Vec::new();
    for j in 0..grid.n_dates() - 1 {
        let t = grid.exercise_dates()[j];
        let slice = e.state_at(grid.date_index(j));
        let lo = slice.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for l in 1..=pd.rights() {
            let mut gain = |x: f64| {
                let s = [x];
                Reward::<f64>::reward(payoff, j, t, &s) + pd.continuation_at(l - 1, j, &s, &mut ws)
                    - pd.continuation_at(l, j, &s, &mut ws)
            };
            let stops = |g: f64| g >= 0.0;
            let threshold = crossing(&mut gain, lo, hi, above, &stops);
            rows.push(BoundaryRow {
                date: j,
                time: t,
                level: l,
                threshold,
                exercise_above: above,
            });
        }
    }
    rows
}

/// First point, scanning upward, where stopping switches on (`above`) or
/// off (`!above`), refined by bisection.
fn crossing(
    gain: &mut dyn FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    above: bool,
    stops: &dyn Fn(f64) -> bool,
) -> Option<f64> {
    if !(hi > lo) {
        return None;
    }
    let n = 400;
    let at = |i: usize| lo + (hi - lo) * i as f64 / n as f64;
    let mut prev = stops(gain(lo));
    for i in 1..=n {
        let x = at(i);
        let cur = stops(gain(x));
        if cur != prev && cur == above {
            let (mut a, mut b) = (at(i - 1), x);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if stops(gain(m)) == above {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        prev = cur;
    }
    None
}

/// One sweep point of a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderEntry {
    pub label: String,
    pub driver: DriverSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub base: ExperimentConfig,
    /// Ambiguity sweep; the base driver alone if absent.
    #[serde(default)]
    pub ladder: Option<Vec<LadderEntry>>,
    /// Rights sweep, run from one training pass per ambiguity.
    #[serde(default)]
    pub rights: Option<Vec<usize>>,
}

impl TableConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(s)?;
        t.base.validate()?;
        Ok(t)
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Ok(Self {
            base: self.base.scaled(s)?,
            ..self.clone()
        })
    }
}

/// Rows of a table; a failed sweep point yields an `Err` entry with its
/// label and the run continues.
pub fn run_table(table: &TableConfig) -> Vec<(String, Result<BoundsReport>)> {
    let entries = match &table.ladder {
        Some(v) => v.clone(),
        None => vec![LadderEntry {
            label: table.base.ambiguity_label(),
            driver: table.base.driver.clone(),
        }],
    };
    let rights = table
        .rights
        .clone()
        .unwrap_or_else(|| vec![table.base.rights]);
    let multi = rights.len() > 1;
    let mut rows = Vec::new();
    for entry in entries {
        let mut cfg = table.base.clone();
        cfg.driver = entry.driver.clone();
        cfg.label = Some(entry.label.clone());
        let label_for = |l: usize| {
            if multi {
                format!("{}:L{l}", entry.label)
            } else {
                entry.label.clone()
            }
        };
        match run_rights_ladder(&cfg, &rights) {
            Ok(reports) => {
                for mut r in reports {
                    r.ambiguity = label_for(r.rights);
                    rows.push((r.ambiguity.clone(), Ok(r)));
                }
            }
            Err(e) => {
                log::error!("sweep point {} failed: {e}", entry.label);
                let msg = e.to_string();
                for &l in &rights {
                    rows.push((label_for(l), Err(Error::Config(msg.clone()))));
                }
            }
        }
    }
    rows
}

/// Writes the header and one row per entry; failed rows carry `NaN`.
pub fn write_table_csv<W: Write>(w: &mut W, rows: &[(String, Result<BoundsReport>)]) -> Result<()> {
    writeln!(w, "{}", BoundsReport::CSV_HEADER)?;
    for (label, r) in rows {
        match r {
            Ok(r) => writeln!(w, "{}", r.csv_row())?,
            Err(_) => writeln!(w, "{label}{}", ",NaN".repeat(9))?,
        }
    }
    Ok(())
}
