//! Exact simulation of the state process and its driving increments.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{ModelConfig, TwoFactorParams};
use crate::rng::path_rng;
use crate::scalar::Real;

const BATCH: usize = 4096;

/// One simulated trajectory in f64, laid out step-major.
#[derive(Debug, Clone, Default)]
pub struct PathDraw {
    pub state: Vec<f64>,
    pub dw: Vec<f64>,
    pub dn: Vec<u32>,
}

/// Draws single trajectories on demand; the streaming evaluators use it
/// to avoid holding an ensemble.
#[derive(Debug, Clone)]
pub struct PathSampler {
    model: ModelConfig,
    times: Vec<f64>,
    seed: u64,
    presim: bool,
}

impl PathSampler {
    pub fn new<T: Real>(model: &ModelConfig, grid: &TimeGrid<T>, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model: model.clone(),
            times: grid.fine_times().iter().map(|t| t.f64()).collect(),
            seed,
            presim: false,
        })
    }

    /// Starts every path at time −1 and diffuses it with zero log-drift to
    /// time 0 before the regular dynamics.
    pub fn with_presimulation(mut self) -> Result<Self> {
        if !matches!(self.model, ModelConfig::GbmDividend { .. }) {
            return Err(Error::Config(
                "pre-simulation is only defined for the gbm model".into(),
            ));
        }
        self.presim = true;
        Ok(self)
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.model.state_dim(),
            self.model.brownian_dim(),
            self.model.jump_dim(),
        )
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn draw(&self, path: u64, out: &mut PathDraw) {
        let (d, d1, d2) = self.dims();
        let nt = self.times.len();
        out.state.resize(nt * d, 0.0);
        out.dw.resize((nt - 1) * d1, 0.0);
        out.dn.resize((nt - 1) * d2, 0);
        let mut rng = path_rng(self.seed, path);
        match &self.model {
            ModelConfig::GbmDividend { assets } => {
                for (i, a) in assets.iter().enumerate() {
                    let mut x = a.x0;
                    if self.presim {
                        let z: f64 = rng.sample(StandardNormal);
                        x *= (a.sigma * z).exp();
                    }
                    out.state[i] = x;
                }
                for k in 0..nt - 1 {
                    let h = self.times[k + 1] - self.times[k];
                    let sh = h.sqrt();
                    for (i, a) in assets.iter().enumerate() {
                        let z: f64 = rng.sample(StandardNormal);
                        let dw = sh * z;
                        let x = out.state[k * d + i]
                            * ((a.mu - 0.5 * a.sigma * a.sigma) * h + a.sigma * dw).exp();
                        out.dw[k * d1 + i] = dw;
                        out.state[(k + 1) * d + i] = x;
                    }
                }
            }
            ModelConfig::TwoFactorJump(p) => self.draw_two_factor(p, &mut rng, out, d2),
        }
    }

    fn draw_two_factor<R: Rng>(
        &self,
        p: &TwoFactorParams,
        rng: &mut R,
        out: &mut PathDraw,
        d2: usize,
    ) {
        let mut u = 0.0f64;
        let mut v = 0.0f64;
        out.state[0] = p.s0 * p.seasonality(self.times[0]).exp();
        for k in 0..self.times.len() - 1 {
            let h = self.times[k + 1] - self.times[k];
            let decay = (-p.kappa_u * h).exp();
            // (ΔW, ∫ e^{-κ(t+h-s)} dW_s) are jointly Gaussian
            let var_i = (1.0 - (-2.0 * p.kappa_u * h).exp()) / (2.0 * p.kappa_u);
            let cov = (1.0 - decay) / p.kappa_u;
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let dw = h.sqrt() * z1;
            let resid = (var_i - cov * cov / h).max(0.0).sqrt();
            let integral = cov / h * dw + resid * z2;
            u = u * decay + p.sigma_u * integral;
            let jumps = if p.lambda_p > 0.0 {
                Poisson::new(p.lambda_p * h)
                    .map(|d| d.sample(rng) as u32)
                    .unwrap_or(0)
            } else {
                0
            };
            v *= (-p.kappa_v * h).exp();
            // arrivals are uniform on the step and decay from their own time
            for _ in 0..jumps {
                let age: f64 = h * rng.gen::<f64>();
                v += p.jump * (-p.kappa_v * age).exp();
            }
            out.dw[k] = dw;
            if d2 == 1 {
                out.dn[k] = jumps;
            }
            out.state[k + 1] = p.s0 * (p.seasonality(self.times[k + 1]) + u + v).exp();
        }
    }
}

/// Simulated trajectories, stored time-major so that a time slice across
/// all paths is contiguous.
#[derive(Debug, Clone)]
pub struct PathEnsemble<T> {
    n_paths: usize,
    dim: usize,
    brownian_dim: usize,
    jump_dim: usize,
    times: Vec<T>,
    state: Vec<T>,
    dw: Vec<T>,
    dn: Vec<u32>,
    intensity_ref: Vec<T>,
    seed: u64,
}

impl<T: Real> PathEnsemble<T> {
    /// Assembles an ensemble from raw time-major arrays.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        times: Vec<T>,
        n_paths: usize,
        dim: usize,
        state: Vec<T>,
        brownian_dim: usize,
        dw: Vec<T>,
        jump_dim: usize,
        dn: Vec<u32>,
        intensity_ref: Vec<T>,
    ) -> Result<Self> {
        let nt = times.len();
        if nt < 2 || n_paths == 0 {
            return Err(Error::Config(
                "ensemble needs >= 2 times and >= 1 path".into(),
            ));
        }
        let check = |what, expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Dimension {
                    what,
                    expected,
                    got,
                })
            }
        };
        check("state", nt * n_paths * dim, state.len())?;
        check("dW", (nt - 1) * n_paths * brownian_dim, dw.len())?;
        check("dN", (nt - 1) * n_paths * jump_dim, dn.len())?;
        check("intensities", jump_dim, intensity_ref.len())?;
        Ok(Self {
            n_paths,
            dim,
            brownian_dim,
            jump_dim,
            times,
            state,
            dw,
            dn,
            intensity_ref,
            seed: 0,
        })
    }

    pub fn sample(sampler: &PathSampler, grid: &TimeGrid<T>, n_paths: usize) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::Config("n_paths must be positive".into()));
        }
        let (d, d1, d2) = sampler.dims();
        let nt = sampler.n_times();
        if nt != grid.n_times() {
            return Err(Error::Dimension {
                what: "sampler grid",
                expected: grid.n_times(),
                got: nt,
            });
        }
        let mut state = vec![T::zero(); nt * n_paths * d];
        let mut dw = vec![T::zero(); (nt - 1) * n_paths * d1];
        let mut dn = vec![0u32; (nt - 1) * n_paths * d2];
        let mut start = 0;
        while start < n_paths {
            let end = (start + BATCH).min(n_paths);
            let draws: Vec<PathDraw> = (start..end)
                .into_par_iter()
                .map(|n| {
                    let mut p = PathDraw::default();
                    sampler.draw(n as u64, &mut p);
                    p
                })
                .collect();
            for (off, p) in draws.iter().enumerate() {
                let n = start + off;
                for k in 0..nt {
                    for i in 0..d {
                        state[(k * n_paths + n) * d + i] = T::lit(p.state[k * d + i]);
                    }
                }
                for k in 0..nt - 1 {
                    for c in 0..d1 {
                        dw[(k * n_paths + n) * d1 + c] = T::lit(p.dw[k * d1 + c]);
                    }
                    for c in 0..d2 {
                        dn[(k * n_paths + n) * d2 + c] = p.dn[k * d2 + c];
                    }
                }
            }
            start = end;
        }
        Ok(Self {
            n_paths,
            dim: d,
            brownian_dim: d1,
            jump_dim: d2,
            times: grid.fine_times().to_vec(),
            state,
            dw,
            dn,
            intensity_ref: sampler
                .model()
                .intensities()
                .into_iter()
                .map(T::lit)
                .collect(),
            seed: sampler.seed,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn brownian_dim(&self) -> usize {
        self.brownian_dim
    }
    pub fn jump_dim(&self) -> usize {
        self.jump_dim
    }
    pub fn n_times(&self) -> usize {
        self.times.len()
    }
    pub fn times(&self) -> &[T] {
        &self.times
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn intensity_ref(&self) -> &[T] {
        &self.intensity_ref
    }
    pub fn step_dt(&self, k: usize) -> T {
        self.times[k + 1] - self.times[k]
    }

    /// All paths' states at fine time `k`, `dim` values per path.
    pub fn state_at(&self, k: usize) -> &[T] {
        let w = self.n_paths * self.dim;
        &self.state[k * w..(k + 1) * w]
    }

    pub fn state(&self, k: usize, n: usize) -> &[T] {
        let i = (k * self.n_paths + n) * self.dim;
        &self.state[i..i + self.dim]
    }

    pub fn dw_at(&self, k: usize) -> &[T] {
        let w = self.n_paths * self.brownian_dim;
        &self.dw[k * w..(k + 1) * w]
    }

    pub fn dw(&self, k: usize, n: usize) -> &[T] {
        let i = (k * self.n_paths + n) * self.brownian_dim;
        &self.dw[i..i + self.brownian_dim]
    }

    pub fn dn(&self, k: usize, n: usize) -> &[u32] {
        let i = (k * self.n_paths + n) * self.jump_dim;
        &self.dn[i..i + self.jump_dim]
    }

    /// Compensated increment `ΔN − λ_P h` of jump coordinate `c`.
    pub fn compensated_dn(&self, k: usize, n: usize, c: usize) -> T {
        T::lit(self.dn(k, n)[c] as f64) - self.intensity_ref[c] * self.step_dt(k)
    }

    /// Same increments with the state replaced by `(X, extra)`; `extra`
    /// holds `width` values per path per fine time, time-major.
    pub fn augment(&self, extra: &[T], width: usize) -> Result<Self> {
        let nt = self.n_times();
        if extra.len() != nt * self.n_paths * width {
            return Err(Error::Dimension {
                what: "augmentation",
                expected: nt * self.n_paths * width,
                got: extra.len(),
            });
        }
        let nd = self.dim + width;
        let mut state = Vec::with_capacity(nt * self.n_paths * nd);
        for k in 0..nt {
            for n in 0..self.n_paths {
                state.extend_from_slice(self.state(k, n));
                let e = (k * self.n_paths + n) * width;
                state.extend_from_slice(&extra[e..e + width]);
            }
        }
        Ok(Self {
            dim: nd,
            state,
            ..self.clone_without_state()
        })
    }

    fn clone_without_state(&self) -> Self {
        Self {
            n_paths: self.n_paths,
            dim: self.dim,
            brownian_dim: self.brownian_dim,
            jump_dim: self.jump_dim,
            times: self.times.clone(),
            state: Vec::new(),
            dw: self.dw.clone(),
            dn: self.dn.clone(),
            intensity_ref: self.intensity_ref.clone(),
            seed: self.seed,
        }
    }

    /// Writes `state_<i>.csv`, `dw_<c>.csv` and `dn_<c>.csv` with header
    /// `path,time,value` into `dir`.
    pub fn dump_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let nt = self.n_times();
        let emit =
            |name: String, steps: usize, value: &dyn Fn(usize, usize) -> String| -> Result<()> {
                let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
                writeln!(w, "path,time,value")?;
                for n in 0..self.n_paths {
                    for k in 0..steps {
                        writeln!(w, "{n},{},{}", self.times[k], value(k, n))?;
                    }
                }
                w.flush()?;
                Ok(())
            };
        for i in 0..self.dim {
            emit(format!("state_{i}.csv"), nt, &|k, n| {
                self.state(k, n)[i].to_string()
            })?;
        }
        for c in 0..self.brownian_dim {
            emit(format!("dw_{c}.csv"), nt - 1, &|k, n| {
                self.dw(k, n)[c].to_string()
            })?;
        }
        for c in 0..self.jump_dim {
            emit(format!("dn_{c}.csv"), nt - 1, &|k, n| {
                self.dn(k, n)[c].to_string()
            })?;
        }
        Ok(())
    }
}

/// One path in the scalar type of the engine, with compensated jumps.
#[derive(Debug, Clone, Default)]
pub struct PathBuf<T> {
    pub dim: usize,
    pub brownian_dim: usize,
    pub jump_dim: usize,
    pub times: Vec<T>,
    /// `dim` values per fine time.
    pub state: Vec<T>,
    /// `brownian_dim` values per fine step.
    pub dw: Vec<T>,
    /// Jump counts, `jump_dim` values per fine step.
    pub dn: Vec<u32>,
    /// `ΔN − λ_P h`, same layout as `dn`.
    pub dn_comp: Vec<T>,
}

impl<T: Real> PathBuf<T> {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.state[k * self.dim..(k + 1) * self.dim]
    }

    pub fn dw(&self, k: usize) -> &[T] {
        &self.dw[k * self.brownian_dim..(k + 1) * self.brownian_dim]
    }

    pub fn dn(&self, k: usize) -> &[u32] {
        &self.dn[k * self.jump_dim..(k + 1) * self.jump_dim]
    }

    pub fn dn_comp(&self, k: usize) -> &[T] {
        &self.dn_comp[k * self.jump_dim..(k + 1) * self.jump_dim]
    }

    pub fn step_dt(&self, k: usize) -> T {
        self.times[k + 1] - self.times[k]
    }

    /// Copies path `n` out of a stored ensemble.
    pub fn load_ensemble(&mut self, e: &PathEnsemble<T>, n: usize) {
        let nt = e.n_times();
        self.dim = e.dim();
        self.brownian_dim = e.brownian_dim();
        self.jump_dim = e.jump_dim();
        self.times.clear();
        self.times.extend_from_slice(e.times());
        self.state.clear();
        self.dw.clear();
        self.dn.clear();
        self.dn_comp.clear();
        for k in 0..nt {
            self.state.extend_from_slice(e.state(k, n));
        }
        for k in 0..nt - 1 {
            self.dw.extend_from_slice(e.dw(k, n));
            self.dn.extend_from_slice(e.dn(k, n));
            for c in 0..self.jump_dim {
                self.dn_comp.push(e.compensated_dn(k, n, c));
            }
        }
    }

    /// Converts a freshly drawn f64 path.
    pub fn load_draw(&mut self, sampler: &PathSampler, draw: &PathDraw) {
        let (d, d1, d2) = sampler.dims();
        let lam = sampler.model().intensities();
        self.dim = d;
        self.brownian_dim = d1;
        self.jump_dim = d2;
        self.times.clear();
        self.times.extend(sampler.times.iter().map(|t| T::lit(*t)));
        self.state.clear();
        self.state.extend(draw.state.iter().map(|x| T::lit(*x)));
        self.dw.clear();
        self.dw.extend(draw.dw.iter().map(|x| T::lit(*x)));
        self.dn.clear();
        self.dn.extend_from_slice(&draw.dn);
        self.dn_comp.clear();
        for k in 0..sampler.times.len() - 1 {
            let h = sampler.times[k + 1] - sampler.times[k];
            for c in 0..d2 {
                self.dn_comp
                    .push(T::lit(draw.dn[k * d2 + c] as f64 - lam[c] * h));
            }
        }
    }
}

pub fn simulate_gbm<T: Real>(
    config: &ModelConfig,
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    if !matches!(config, ModelConfig::GbmDividend { .. }) {
        return Err(Error::Config(
            "simulate_gbm needs a gbm_dividend model".into(),
        ));
    }
    PathEnsemble::sample(&PathSampler::new(config, grid, seed)?, grid, n_paths)
}

pub fn simulate_two_factor<T: Real>(
    config: &ModelConfig,
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    if !matches!(config, ModelConfig::TwoFactorJump(_)) {
        return Err(Error::Config(
            "simulate_two_factor needs a two_factor_jump model".into(),
        ));
    }
    PathEnsemble::sample(&PathSampler::new(config, grid, seed)?, grid, n_paths)
}

/// Dispatches on the model variant.
pub fn simulate<T: Real>(
    config: &ModelConfig,
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    PathEnsemble::sample(&PathSampler::new(config, grid, seed)?, grid, n_paths)
}

/// Ensemble whose time-0 state has already diffused for one year with zero
/// log-drift, spreading the initial values for boundary estimation.
pub fn presimulate_boundary_ensemble<T: Real>(
    config: &ModelConfig,
    grid: &TimeGrid<T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    let sampler = PathSampler::new(config, grid, seed)?.with_presimulation()?;
    PathEnsemble::sample(&sampler, grid, n_paths)
}
