//! Ambiguity sets through their support function `g(z, z̃)`, its
//! subgradients, and the induced measure changes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A radius given either once for all coordinates or per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Radius {
    Uniform(f64),
    PerCoordinate(Vec<f64>),
}

impl Default for Radius {
    fn default() -> Self {
        Radius::Uniform(0.0)
    }
}

impl Radius {
    fn expand(&self, dim: usize, what: &'static str) -> Result<Vec<f64>> {
        match self {
            Radius::Uniform(r) => Ok(vec![*r; dim]),
            Radius::PerCoordinate(v) if v.len() == dim => Ok(v.clone()),
            Radius::PerCoordinate(v) => Err(Error::Dimension {
                what,
                expected: dim,
                got: v.len(),
            }),
        }
    }
}

/// Driver as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriverSpec {
    Ball {
        #[serde(default)]
        delta1: Radius,
        #[serde(default)]
        delta2: Radius,
    },
    Discrete {
        /// Drift scenarios, shared by every Brownian coordinate.
        #[serde(default)]
        q: Vec<f64>,
        /// Absolute intensity scenarios, shared by every jump coordinate.
        #[serde(default)]
        lambda: Vec<f64>,
    },
}

impl DriverSpec {
    pub fn ball(delta1: f64, delta2: f64) -> Self {
        DriverSpec::Ball {
            delta1: Radius::Uniform(delta1),
            delta2: Radius::Uniform(delta2),
        }
    }

    pub fn none() -> Self {
        Self::ball(0.0, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Ball { delta1: Vec<f64>, delta2: Vec<f64> },
    Discrete { q: Vec<f64>, shifts: Vec<Vec<f64>> },
}

/// A driver bound to the model's Brownian dimension and reference
/// intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Driver {
    shape: Shape,
    d1: usize,
    lambda_ref: Vec<f64>,
    floor: f64,
}

impl Driver {
    /// `floor` defaults to `1e-6 · λ_P` per jump coordinate when `None`.
    pub fn bind(
        spec: &DriverSpec,
        d1: usize,
        lambda_ref: &[f64],
        floor: Option<f64>,
    ) -> Result<Self> {
        let d2 = lambda_ref.len();
        let min_ref = lambda_ref.iter().copied().fold(f64::INFINITY, f64::min);
        let floor = floor.unwrap_or(if d2 > 0 { 1e-6 * min_ref } else { 0.0 });
        let shape = match spec {
            DriverSpec::Ball { delta1, delta2 } => {
                let delta1 = delta1.expand(d1, "delta1")?;
                let delta2 = delta2.expand(d2, "delta2")?;
                if delta1
                    .iter()
                    .chain(&delta2)
                    .any(|&r| !(r >= 0.0) || !r.is_finite())
                {
                    return Err(Error::Config(
                        "ball radii must be finite and nonnegative".into(),
                    ));
                }
                for (c, (&r, &l)) in delta2.iter().zip(lambda_ref).enumerate() {
                    if l - r < floor {
                        return Err(Error::Config(format!(
                            "jump radius {r} at coordinate {c} pushes the intensity below the floor {floor}"
                        )));
                    }
                }
                Shape::Ball { delta1, delta2 }
            }
            DriverSpec::Discrete { q, lambda } => {
                if d1 > 0 && q.is_empty() {
                    return Err(Error::Config(
                        "discrete driver needs at least one drift scenario".into(),
                    ));
                }
                if d2 > 0 && lambda.is_empty() {
                    return Err(Error::Config(
                        "discrete driver needs at least one intensity scenario".into(),
                    ));
                }
                if let Some(&l) = lambda
                    .iter()
                    .find(|&&l| !(l >= floor) || (d2 > 0 && l <= 0.0))
                {
                    return Err(Error::Config(format!(
                        "intensity scenario {l} is below the floor {floor}"
                    )));
                }
                let shifts = lambda_ref
                    .iter()
                    .map(|&lp| lambda.iter().map(|&l| l - lp).collect())
                    .collect();
                Shape::Discrete {
                    q: q.clone(),
                    shifts,
                }
            }
        };
        Ok(Self {
            shape,
            d1,
            lambda_ref: lambda_ref.to_vec(),
            floor,
        })
    }

    /// Reference-measure driver `g ≡ 0`.
    pub fn zero(d1: usize, lambda_ref: &[f64]) -> Self {
        Self::bind(&DriverSpec::none(), d1, lambda_ref, None).expect("zero driver is valid")
    }

    pub fn brownian_dim(&self) -> usize {
        self.d1
    }

    pub fn jump_dim(&self) -> usize {
        self.lambda_ref.len()
    }

    pub fn lambda_ref(&self) -> &[f64] {
        &self.lambda_ref
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// True when `g` vanishes identically.
    pub fn is_zero(&self) -> bool {
        match &self.shape {
            Shape::Ball { delta1, delta2 } => delta1.iter().chain(delta2).all(|&r| r == 0.0),
            Shape::Discrete { q, shifts } => {
                q.iter().all(|&x| x == 0.0) && shifts.iter().flatten().all(|&x| x == 0.0)
            }
        }
    }

    /// `g(z, z̃)`; slices must have the bound dimensions.
    #[inline]
    pub fn g<T: Real>(&self, z: &[T], zt: &[T]) -> T {
        let mut s = T::zero();
        match &self.shape {
            Shape::Ball { delta1, delta2 } => {
                for (r, x) in delta1.iter().zip(z) {
                    s = s + T::lit(*r) * x.abs();
                }
                for (r, x) in delta2.iter().zip(zt) {
                    s = s + T::lit(*r) * x.abs();
                }
            }
            Shape::Discrete { q, shifts } => {
                for x in z {
                    s = s + best(q.iter().map(|&a| T::lit(a) * *x)).1;
                }
                for (sh, x) in shifts.iter().zip(zt) {
                    s = s + best(sh.iter().map(|&a| T::lit(a) * *x)).1;
                }
            }
        }
        s
    }

    /// Maximizing drift `q` and intensity shift `λ − λ_P`, written into the
    /// output slices. Kinks select zero (ball) or the lowest index.
    #[inline]
    pub fn subgradient_into<T: Real>(&self, z: &[T], zt: &[T], q_out: &mut [T], dl_out: &mut [T]) {
        match &self.shape {
            Shape::Ball { delta1, delta2 } => {
                for ((o, r), x) in q_out.iter_mut().zip(delta1).zip(z) {
                    *o = signed(*r, *x);
                }
                for ((o, r), x) in dl_out.iter_mut().zip(delta2).zip(zt) {
                    *o = signed(*r, *x);
                }
            }
            Shape::Discrete { q, shifts } => {
                for (o, x) in q_out.iter_mut().zip(z) {
                    *o = T::lit(q[best(q.iter().map(|&a| T::lit(a) * *x)).0]);
                }
                for ((o, sh), x) in dl_out.iter_mut().zip(shifts).zip(zt) {
                    *o = T::lit(sh[best(sh.iter().map(|&a| T::lit(a) * *x)).0]);
                }
            }
        }
    }

    pub fn subgradient<T: Real>(&self, z: &[T], zt: &[T]) -> (Vec<T>, Vec<T>) {
        let mut q = vec![T::zero(); z.len()];
        let mut dl = vec![T::zero(); zt.len()];
        self.subgradient_into(z, zt, &mut q, &mut dl);
        (q, dl)
    }

    /// Lipschitz modulus of `g` in the Euclidean norm.
    pub fn lipschitz_modulus(&self) -> f64 {
        match &self.shape {
            Shape::Ball { delta1, delta2 } => delta1
                .iter()
                .chain(delta2)
                .map(|r| r * r)
                .sum::<f64>()
                .sqrt(),
            Shape::Discrete { q, shifts } => {
                let mq = q.iter().fold(0.0f64, |m, a| m.max(a.abs()));
                let ms: f64 = shifts
                    .iter()
                    .map(|s| s.iter().fold(0.0f64, |m, a| m.max(a.abs())).powi(2))
                    .sum();
                (self.d1 as f64 * mq * mq + ms).sqrt()
            }
        }
    }

    fn check_dims(&self, z: usize, zt: usize) -> Result<()> {
        if z != self.d1 {
            return Err(Error::Dimension {
                what: "z",
                expected: self.d1,
                got: z,
            });
        }
        if zt != self.jump_dim() {
            return Err(Error::Dimension {
                what: "z tilde",
                expected: self.jump_dim(),
                got: zt,
            });
        }
        Ok(())
    }
}

#[inline]
fn signed<T: Real>(r: f64, x: T) -> T {
    if x > T::zero() {
        T::lit(r)
    } else if x < T::zero() {
        -T::lit(r)
    } else {
        T::zero()
    }
}

/// Index and value of the first maximum.
#[inline]
fn best<T: Real>(it: impl Iterator<Item = T>) -> (usize, T) {
    let mut arg = 0;
    let mut val = T::neg_infinity();
    for (i, v) in it.enumerate() {
        if v > val {
            arg = i;
            val = v;
        }
    }
    (arg, val)
}

/// Checked evaluation of `g`.
pub fn eval_driver<T: Real>(driver: &Driver, _t: T, z: &[T], zt: &[T]) -> Result<T> {
    driver.check_dims(z.len(), zt.len())?;
    Ok(driver.g(z, zt))
}

/// Checked subgradient `(q, λ − λ_P)`.
pub fn subgradient<T: Real>(driver: &Driver, _t: T, z: &[T], zt: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    driver.check_dims(z.len(), zt.len())?;
    Ok(driver.subgradient(z, zt))
}

/// Running log-density of a measure change along one path.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogWeight<T> {
    pub log_d: T,
}

impl<T: Real> LogWeight<T> {
    /// Adds one step with drift `q`, intensity shift `dl`, increments
    /// `dw`, jump counts `dn` and step length `h`.
    pub fn step(
        &mut self,
        driver: &Driver,
        step: usize,
        q: &[T],
        dl: &[T],
        dw: &[T],
        dn: &[u32],
        h: T,
    ) -> Result<()> {
        let half = T::lit(0.5);
        let mut s = self.log_d;
        for (a, w) in q.iter().zip(dw) {
            s = s + *a * *w - half * *a * *a * h;
        }
        for c in 0..dl.len() {
            let lp = T::lit(driver.lambda_ref[c]);
            let lam = lp + dl[c];
            if !(lam.f64() > 0.0) || lam.f64() < driver.floor {
                return Err(Error::IntensityFloor {
                    step,
                    intensity: lam.f64(),
                    floor: driver.floor,
                });
            }
            s = s + (lam / lp).ln() * T::lit(dn[c] as f64) - dl[c] * h;
        }
        self.log_d = s;
        Ok(())
    }

    pub fn weight(&self) -> T {
        self.log_d.exp()
    }
}

/// Per-path Radon–Nikodym weights at the horizon together with the
/// controls used at every step.
#[derive(Debug, Clone)]
pub struct MeasureWeights<T> {
    pub weights: Vec<T>,
    /// `q` per step per path, `(k · n_paths + n) · d1 + c`.
    pub drift: Vec<T>,
    /// `λ` per step per path, same layout with `d2`.
    pub intensity: Vec<T>,
}

/// Builds `D = exp(Σ q·ΔW + Σ log(λ/λ_P)·ΔN − Σ(|q|²/2 + λ − λ_P)Δ)` with
/// `(q, λ)` the subgradient at the controls returned by `controls(k, n)`.
pub fn radon_nikodym_weights<T: Real, F>(
    driver: &Driver,
    ensemble: &crate::paths::PathEnsemble<T>,
    mut controls: F,
) -> Result<MeasureWeights<T>>
where
    F: FnMut(usize, usize) -> (Vec<T>, Vec<T>),
{
    let n_paths = ensemble.n_paths();
    let (d1, d2) = (ensemble.brownian_dim(), ensemble.jump_dim());
    let steps = ensemble.n_times() - 1;
    let mut weights = Vec::with_capacity(n_paths);
    let mut drift = vec![T::zero(); steps * n_paths * d1];
    let mut intensity = vec![T::zero(); steps * n_paths * d2];
    for n in 0..n_paths {
        let mut lw = LogWeight::default();
        for k in 0..steps {
            let (z, zt) = controls(k, n);
            driver.check_dims(z.len(), zt.len())?;
            let (q, dl) = driver.subgradient(&z, &zt);
            lw.step(
                driver,
                k,
                &q,
                &dl,
                ensemble.dw(k, n),
                ensemble.dn(k, n),
                ensemble.step_dt(k),
            )?;
            drift[(k * n_paths + n) * d1..(k * n_paths + n + 1) * d1].copy_from_slice(&q);
            for c in 0..d2 {
                intensity[(k * n_paths + n) * d2 + c] = T::lit(driver.lambda_ref[c]) + dl[c];
            }
        }
        weights.push(lw.weight());
    }
    Ok(MeasureWeights {
        weights,
        drift,
        intensity,
    })
}
