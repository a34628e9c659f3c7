//! Backward regression engine for the discretized BSDE
//! `U_p = U_{p+1} + g(Z, Z̃)Δ − ZΔW − Z̃ΔÑ`.

use serde::{Deserialize, Serialize};

use crate::ambiguity::Driver;
use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{
    default_ridge, hinge_normal_equations, normal_equations, solve_normal_equations, Hinge,
    SortedCoordinate,
};
use crate::paths::PathEnsemble;
use crate::scalar::Real;

const MAX_SWEEPS: usize = 50;
const SWEEP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionMode {
    /// Driver term left out of the least-squares residual; closed form.
    #[default]
    Explicit,
    /// Driver term inside the residual; coordinate descent.
    Implicit,
}

/// Coefficients of one fine step: `C = γ·ψ`, `Z_c = β_c·φ`, `Z̃_c = β̃_c·φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFit<T> {
    pub gamma: Vec<T>,
    /// `K_z` coefficients per Brownian coordinate, back to back.
    pub beta: Vec<T>,
    /// `K_z` coefficients per jump coordinate, back to back.
    pub beta_jump: Vec<T>,
    pub converged: bool,
    pub sweeps: usize,
}

impl<T: Real> StepFit<T> {
    pub fn zeros(ky: usize, kz: usize, d1: usize, d2: usize) -> Self {
        Self {
            gamma: vec![T::zero(); ky],
            beta: vec![T::zero(); kz * d1],
            beta_jump: vec![T::zero(); kz * d2],
            converged: true,
            sweeps: 0,
        }
    }
}

#[inline]
fn dotv<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

/// Regression coefficients on every fine step of a grid, with the bases
/// they refer to.
#[derive(Debug, Clone)]
pub struct RegressionFit<T> {
    basis_y: BasisSpec<T>,
    basis_z: Option<BasisSpec<T>>,
    mode: RegressionMode,
    d1: usize,
    d2: usize,
    steps: Vec<Option<StepFit<T>>>,
    tables: Vec<Option<ControlTable<T>>>,
}

/// Controls of one step as piecewise-linear functions of state
/// coordinate 0.
#[derive(Debug, Clone)]
struct ControlTable<T> {
    knots: Vec<T>,
    /// `(intercept, slope)` per segment and control, segment-major.
    lines: Vec<(T, T)>,
}

impl<T: Real> ControlTable<T> {
    fn new(hinges: &[Hinge<T>], f: &StepFit<T>, kz: usize, d1: usize, d2: usize) -> Self {
        let m = d1 + d2;
        let coef = |c: usize, i: usize| {
            if c < d1 {
                f.beta[c * kz + i]
            } else {
                f.beta_jump[(c - d1) * kz + i]
            }
        };
        let mut base = vec![(T::zero(), T::zero()); m];
        let mut kinks: Vec<(T, usize)> = Vec::new();
        for (i, h) in hinges.iter().enumerate() {
            match h.q {
                None => {
                    for (c, b) in base.iter_mut().enumerate() {
                        let w = coef(c, i);
                        *b = (b.0 + h.a * w, b.1 + h.b * w);
                    }
                }
                Some(q) => kinks.push((q, i)),
            }
        }
        kinks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut lines = Vec::with_capacity((kinks.len() + 1) * m);
        lines.extend_from_slice(&base);
        for &(_, i) in &kinks {
            let h = hinges[i];
            let prev = lines.len() - m;
            for c in 0..m {
                let (a, b) = lines[prev + c];
                let w = coef(c, i);
                lines.push((a + h.a * w, b + h.b * w));
            }
        }
        Self {
            knots: kinks.into_iter().map(|k| k.0).collect(),
            lines,
        }
    }
}

impl<T: Real> RegressionFit<T> {
    /// `basis_z = None` shares `basis_y` for the control functions.
    pub fn new(
        basis_y: BasisSpec<T>,
        basis_z: Option<BasisSpec<T>>,
        mode: RegressionMode,
        d1: usize,
        d2: usize,
        n_steps: usize,
    ) -> Self {
        Self {
            basis_y,
            basis_z,
            mode,
            d1,
            d2,
            steps: vec![None; n_steps],
            tables: vec![None; n_steps],
        }
    }

    pub fn basis_y(&self) -> &BasisSpec<T> {
        &self.basis_y
    }

    pub fn basis_z(&self) -> &BasisSpec<T> {
        self.basis_z.as_ref().unwrap_or(&self.basis_y)
    }

    pub fn mode(&self) -> RegressionMode {
        self.mode
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, k: usize) -> Option<&StepFit<T>> {
        self.steps.get(k).and_then(Option::as_ref)
    }

    pub fn set_step(&mut self, k: usize, fit: StepFit<T>) {
        self.tables[k] = self
            .basis_z()
            .hinge_form(k)
            .map(|h| ControlTable::new(&h, &fit, self.basis_z().size(), self.d1, self.d2));
        self.steps[k] = Some(fit);
    }

    /// `Z` and `Z̃` at step `k` into `ws.z` and `ws.zt`.
    fn controls(&self, k: usize, state: &[T], ws: &mut FitWorkspace<T>) {
        let Some(t) = &self.tables[k] else {
            self.evaluate(k, state, ws);
            return;
        };
        let x = state[0];
        let m = self.d1 + self.d2;
        let s = t.knots.partition_point(|q| *q < x);
        let row = &t.lines[s * m..(s + 1) * m];
        for c in 0..self.d1 {
            ws.z[c] = row[c].0 + row[c].1 * x;
        }
        for c in 0..self.d2 {
            ws.zt[c] = row[self.d1 + c].0 + row[self.d1 + c].1 * x;
        }
    }

    /// True once every step has coefficients.
    pub fn is_complete(&self) -> bool {
        self.steps.iter().all(Option::is_some)
    }

    /// Steps whose implicit solve hit the sweep limit.
    pub fn unconverged_steps(&self) -> usize {
        self.steps.iter().flatten().filter(|s| !s.converged).count()
    }

    fn fitted(&self, k: usize) -> &StepFit<T> {
        self.steps[k]
            .as_ref()
            .expect("coefficients requested for a step that was never fitted")
    }

    /// Scratch buffers sized for this fit.
    pub fn workspace(&self) -> FitWorkspace<T> {
        FitWorkspace {
            psi: vec![T::zero(); self.basis_y.size()],
            phi: vec![T::zero(); self.basis_z().size()],
            z: vec![T::zero(); self.d1],
            zt: vec![T::zero(); self.d2],
            z_prev: vec![T::zero(); self.d1],
            zt_prev: vec![T::zero(); self.d2],
        }
    }

    /// Evaluates `C`, `Z` and `Z̃` at step `k` for `state`; results land in
    /// `ws.z`, `ws.zt` and the return value.
    pub fn evaluate(&self, k: usize, state: &[T], ws: &mut FitWorkspace<T>) -> T {
        let f = self.fitted(k);
        self.basis_y.evaluate_into(k, state, &mut ws.psi);
        let c = dotv(&f.gamma, &ws.psi);
        let kz = self.basis_z().size();
        let phi: &[T] = if self.basis_z.is_some() {
            self.basis_z().evaluate_into(k, state, &mut ws.phi);
            &ws.phi
        } else {
            &ws.psi
        };
        for c in 0..self.d1 {
            ws.z[c] = dotv(&f.beta[c * kz..(c + 1) * kz], phi);
        }
        for c in 0..self.d2 {
            ws.zt[c] = dotv(&f.beta_jump[c * kz..(c + 1) * kz], phi);
        }
        c
    }

    /// Fitted conditional mean of `U_{k+1}` and the step value
    /// `mean + g(Z, Z̃)h`, unfloored.
    pub fn mean_and_value(
        &self,
        k: usize,
        state: &[T],
        h: T,
        driver: &Driver,
        ws: &mut FitWorkspace<T>,
    ) -> (T, T) {
        let c = self.evaluate(k, state, ws);
        let g = driver.g(&ws.z, &ws.zt) * h;
        match self.mode {
            RegressionMode::Explicit => (c, c + g),
            RegressionMode::Implicit => (c - g, c),
        }
    }

    /// Martingale increment `−g(Z, Z̃)h + Z·ΔW + Z̃·ΔÑ` of step `k` with
    /// coefficients from step `coef_step`.
    #[allow(clippy::too_many_arguments)]
    pub fn increment(
        &self,
        coef_step: usize,
        state: &[T],
        dw: &[T],
        dn_comp: &[T],
        h: T,
        driver: &Driver,
        ws: &mut FitWorkspace<T>,
    ) -> T {
        self.controls(coef_step, state, ws);
        let g = driver.g(&ws.z, &ws.zt);
        -g * h + dotv(&ws.z, dw) + dotv(&ws.zt, dn_comp)
    }

    /// As [`Self::increment`] with `(Z, Z̃)` blended as `(1 − w)·at(a) + w·at(b)`.
    #[allow(clippy::too_many_arguments)]
    pub fn increment_blended(
        &self,
        (a, b, w): (usize, usize, T),
        state: &[T],
        dw: &[T],
        dn_comp: &[T],
        h: T,
        driver: &Driver,
        ws: &mut FitWorkspace<T>,
    ) -> T {
        if a == b || w == T::zero() {
            return self.increment(a, state, dw, dn_comp, h, driver, ws);
        }
        self.controls(a, state, ws);
        ws.z_prev.copy_from_slice(&ws.z);
        ws.zt_prev.copy_from_slice(&ws.zt);
        self.controls(b, state, ws);
        let v = T::one() - w;
        for (z, p) in ws.z.iter_mut().zip(&ws.z_prev) {
            *z = v * *p + w * *z;
        }
        for (z, p) in ws.zt.iter_mut().zip(&ws.zt_prev) {
            *z = v * *p + w * *z;
        }
        let g = driver.g(&ws.z, &ws.zt);
        -g * h + dotv(&ws.z, dw) + dotv(&ws.zt, dn_comp)
    }
}

/// Per-thread scratch for [`RegressionFit::evaluate`].
#[derive(Debug, Clone)]
pub struct FitWorkspace<T> {
    psi: Vec<T>,
    phi: Vec<T>,
    pub z: Vec<T>,
    pub zt: Vec<T>,
    z_prev: Vec<T>,
    zt_prev: Vec<T>,
}

/// Sorted coordinate and hinge features of one step, for fast Gram
/// matrices when both bases are univariate splines.
#[derive(Debug, Clone)]
pub struct HingeDesign<T> {
    coord: SortedCoordinate<T>,
    fy: Vec<Hinge<T>>,
    fz: Vec<Hinge<T>>,
}

impl<T: Real> HingeDesign<T> {
    pub fn new(
        basis_y: &BasisSpec<T>,
        basis_z: &BasisSpec<T>,
        k: usize,
        states: &[T],
        dim: usize,
    ) -> Option<Self> {
        let fy = basis_y.hinge_form(k)?;
        let fz = basis_z.hinge_form(k)?;
        let x: Vec<T> = states.iter().step_by(dim).copied().collect();
        Some(Self {
            coord: SortedCoordinate::new(&x),
            fy,
            fz,
        })
    }
}

/// Normal equations of `[ψ, φ·w_1, …, φ·w_m]` with per-path weights `w_c`.
#[allow(clippy::too_many_arguments)]
fn joint_normal_equations<T: Real>(
    fast: Option<&HingeDesign<T>>,
    psi: &[T],
    ky: usize,
    phi: &[T],
    kz: usize,
    weights: &[Vec<T>],
    y: &[T],
) -> (Vec<T>, Vec<T>) {
    let n = y.len();
    if let Some(f) = fast {
        let mut blocks: Vec<(&[Hinge<T>], Option<&[T]>)> = vec![(&f.fy, None)];
        blocks.extend(
            weights
                .iter()
                .map(|w| (f.fz.as_slice(), Some(w.as_slice()))),
        );
        return hinge_normal_equations(&f.coord, &blocks, y);
    }
    let p = ky + kz * weights.len();
    let mut design = Vec::with_capacity(n * p);
    design.extend_from_slice(&psi[..n * ky]);
    for w in weights {
        for k in 0..kz {
            let col = &phi[k * n..(k + 1) * n];
            design.extend(col.iter().zip(w).map(|(v, w)| *v * *w));
        }
    }
    normal_equations(&design, y, n, p)
}

fn split_columns<T: Real>(v: &[T], d: usize, n: usize) -> Vec<Vec<T>> {
    (0..d)
        .map(|c| (0..n).map(|i| v[i * d + c]).collect())
        .collect()
}

/// Least squares of `U_{p+1}` on `[ψ, φ·ΔW, φ·ΔÑ]`.
///
/// `psi` and `phi` are column-major `n × K` designs, `dw` and `dn_comp`
/// hold `d1` and `d2` values per path.
#[allow(clippy::too_many_arguments)]
pub fn regression_step_explicit<T: Real>(
    u_next: &[T],
    psi: &[T],
    ky: usize,
    phi: &[T],
    kz: usize,
    dw: &[T],
    d1: usize,
    dn_comp: &[T],
    d2: usize,
) -> Result<StepFit<T>> {
    explicit_step(u_next, psi, ky, phi, kz, dw, d1, dn_comp, d2, &[], None)
}

/// Jump-control columns kept at a step where `expected_jumps` paths jump.
///
/// A univariate hinge basis keeps its constant and linear columns plus one
/// evenly spaced hinge per [`JUMPS_PER_COLUMN`] expected jumps beyond
/// those. Other bases keep every column.
pub fn jump_column_mask<T: Real>(
    basis: &BasisSpec<T>,
    time_index: usize,
    expected_jumps: f64,
) -> Vec<bool> {
    let kz = basis.size();
    if basis.hinge_form(time_index).is_none() || kz <= 2 {
        return vec![true; kz];
    }
    let hinges = kz - 2;
    let m = ((expected_jumps / JUMPS_PER_COLUMN).floor() as usize)
        .saturating_sub(2)
        .min(hinges);
    let mut mask = vec![false; kz];
    mask[0] = true;
    mask[1] = true;
    for i in 0..m {
        mask[2 + (2 * i + 1) * hinges / (2 * m)] = true;
    }
    mask
}

/// Expected jumping paths per kept jump-control column.
pub const JUMPS_PER_COLUMN: f64 = 20.0;

fn jump_active(mask: &[bool], k: usize) -> bool {
    mask.get(k).copied().unwrap_or(true)
}

/// Fixes the coefficients of dropped jump columns at zero.
fn pin_inactive_jump_columns<T: Real>(
    gram: &mut [T],
    rhs: &mut [T],
    p: usize,
    offset: usize,
    kz: usize,
    d2: usize,
    mask: &[bool],
) {
    for c in 0..d2 {
        for k in (0..kz).filter(|&k| !jump_active(mask, k)) {
            let col = offset + c * kz + k;
            for r in 0..p {
                gram[r * p + col] = T::zero();
                gram[col * p + r] = T::zero();
            }
            gram[col * p + col] = T::one();
            rhs[col] = T::zero();
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn explicit_step<T: Real>(
    u_next: &[T],
    psi: &[T],
    ky: usize,
    phi: &[T],
    kz: usize,
    dw: &[T],
    d1: usize,
    dn_comp: &[T],
    d2: usize,
    jump_mask: &[bool],
    fast: Option<&HingeDesign<T>>,
) -> Result<StepFit<T>> {
    let n = u_next.len();
    let p = ky + kz * (d1 + d2);
    let mut weights = split_columns(dw, d1, n);
    weights.extend(split_columns(dn_comp, d2, n));
    let (mut gram, mut rhs) = joint_normal_equations(fast, psi, ky, phi, kz, &weights, u_next);
    pin_inactive_jump_columns(&mut gram, &mut rhs, p, ky + kz * d1, kz, d2, jump_mask);
    let x = solve_normal_equations(&gram, &rhs, p, default_ridge::<T>())?;
    Ok(StepFit {
        gamma: x[..ky].to_vec(),
        beta: x[ky..ky + kz * d1].to_vec(),
        beta_jump: x[ky + kz * d1..].to_vec(),
        converged: true,
        sweeps: 0,
    })
}

/// Exact global minimizer over `b` of `Σ_n r_n(b)²` with
/// `r_n = R_n + h·g(z) − z·w_n`, `z = e_n + b·φ_n`, and
/// `g(z) = s⁺z` for `z ≥ 0`, `−s⁻z` for `z < 0`.
#[allow(clippy::too_many_arguments)]
pub fn minimize_piecewise<T: Real>(
    r: &[T],
    e: &[T],
    phi: &[T],
    w: &[T],
    s_plus: T,
    s_minus: T,
    h: T,
) -> T {
    let n = r.len();
    // r_n(b) = A_n + B_n b on each side of the kink
    let side = |i: usize, positive: bool| -> (T, T) {
        let a = if positive {
            h * s_plus - w[i]
        } else {
            -h * s_minus - w[i]
        };
        (r[i] + a * e[i], a * phi[i])
    };
    let (mut s0, mut s1, mut s2) = (T::zero(), T::zero(), T::zero());
    let mut kinks: Vec<(T, usize)> = Vec::new();
    for i in 0..n {
        let zero_phi = phi[i] == T::zero();
        // sign of z as b → −∞
        let positive = if zero_phi {
            e[i] >= T::zero()
        } else {
            phi[i] < T::zero()
        };
        let (a, b) = side(i, positive);
        s0 = s0 + a * a;
        s1 = s1 + a * b;
        s2 = s2 + b * b;
        if !zero_phi {
            kinks.push((-e[i] / phi[i], i));
        }
    }
    kinks.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(std::cmp::Ordering::Equal));
    let value = |s0: T, s1: T, s2: T, b: T| s0 + T::lit(2.0) * s1 * b + s2 * b * b;
    let piece_min = |s1: T, s2: T, lo: Option<T>, hi: Option<T>| -> T {
        let mut b = if s2 > T::zero() {
            -s1 / s2
        } else {
            lo.or(hi).unwrap_or(T::zero())
        };
        if let Some(l) = lo {
            b = b.max(l);
        }
        if let Some(u) = hi {
            b = b.min(u);
        }
        b
    };
    let mut lo: Option<T> = None;
    let mut best_b = T::zero();
    let mut best_v = T::infinity();
    let mut idx = 0;
    loop {
        let hi = kinks.get(idx).map(|k| k.0);
        let b = piece_min(s1, s2, lo, hi);
        let v = value(s0, s1, s2, b);
        if v < best_v {
            best_v = v;
            best_b = b;
        }
        let Some(&(at, _)) = kinks.get(idx) else {
            break;
        };
        // flip every path whose kink sits at this abscissa
        while idx < kinks.len() && kinks[idx].0 == at {
            let i = kinks[idx].1;
            let was_positive = phi[i] < T::zero();
            let (a, b) = side(i, was_positive);
            s0 = s0 - a * a;
            s1 = s1 - a * b;
            s2 = s2 - b * b;
            let (a, b) = side(i, !was_positive);
            s0 = s0 + a * a;
            s1 = s1 + a * b;
            s2 = s2 + b * b;
            idx += 1;
        }
        lo = Some(at);
    }
    best_b
}

/// Minimizes the residual with the driver term inside the square.
///
/// Starts from the explicit solution; every sweep tries a joint least
/// squares step with the signs of `Z` frozen, then runs exact coordinate
/// minimization over `γ` (as a block) and each control coefficient.
#[allow(clippy::too_many_arguments)]
pub fn regression_step_implicit<T: Real>(
    u_next: &[T],
    psi: &[T],
    ky: usize,
    phi: &[T],
    kz: usize,
    dw: &[T],
    d1: usize,
    dn_comp: &[T],
    d2: usize,
    driver: &Driver,
    h: T,
) -> Result<StepFit<T>> {
    implicit_step(
        u_next,
        psi,
        ky,
        phi,
        kz,
        dw,
        d1,
        dn_comp,
        d2,
        &[],
        driver,
        h,
        None,
    )
}

#[allow(clippy::too_many_arguments)]
fn implicit_step<T: Real>(
    u_next: &[T],
    psi: &[T],
    ky: usize,
    phi: &[T],
    kz: usize,
    dw: &[T],
    d1: usize,
    dn_comp: &[T],
    d2: usize,
    jump_mask: &[bool],
    driver: &Driver,
    h: T,
    fast: Option<&HingeDesign<T>>,
) -> Result<StepFit<T>> {
    let mut fit = explicit_step(
        u_next, psi, ky, phi, kz, dw, d1, dn_comp, d2, jump_mask, fast,
    )?;
    if driver.is_zero() {
        return Ok(fit);
    }
    let p = Implicit {
        u: u_next,
        psi,
        ky,
        phi,
        kz,
        dw,
        d1,
        dn: dn_comp,
        d2,
        jump_mask,
        slopes: driver_slopes::<T>(driver),
        h,
        n: u_next.len(),
        fast,
    };
    let (gram_psi, _) = joint_normal_equations(fast, psi, ky, phi, kz, &[], u_next);
    let mut prev = p.objective(&fit);
    // objectives at round-off level of the target count as converged
    let scale = u_next.iter().fold(T::zero(), |s, v| s + *v * *v) * T::epsilon();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        if let Some(cand) = p.frozen_sign_step(&fit) {
            if p.objective(&cand) < prev {
                fit = cand;
            }
        }
        p.coordinate_pass(&mut fit, &gram_psi)?;
        let obj = p.objective(&fit);
        let rel = ((prev - obj).abs() / prev.abs().max(scale).max(T::min_positive_value())).f64();
        prev = obj;
        if rel < SWEEP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("implicit regression stopped after {sweeps} sweeps without meeting tolerance");
    }
    fit.converged = converged;
    fit.sweeps = sweeps;
    Ok(fit)
}

struct Implicit<'a, T> {
    u: &'a [T],
    psi: &'a [T],
    ky: usize,
    phi: &'a [T],
    kz: usize,
    dw: &'a [T],
    d1: usize,
    dn: &'a [T],
    d2: usize,
    jump_mask: &'a [bool],
    slopes: Vec<(T, T)>,
    h: T,
    n: usize,
    fast: Option<&'a HingeDesign<T>>,
}

impl<T: Real> Implicit<'_, T> {
    fn inc(&self, c: usize, i: usize) -> T {
        if c < self.d1 {
            self.dw[i * self.d1 + c]
        } else {
            self.dn[i * self.d2 + c - self.d1]
        }
    }

    fn coef<'f>(&self, fit: &'f mut StepFit<T>, c: usize, k: usize) -> &'f mut T {
        if c < self.d1 {
            &mut fit.beta[c * self.kz + k]
        } else {
            &mut fit.beta_jump[(c - self.d1) * self.kz + k]
        }
    }

    fn coef_ref(&self, fit: &StepFit<T>, c: usize, k: usize) -> T {
        if c < self.d1 {
            fit.beta[c * self.kz + k]
        } else {
            fit.beta_jump[(c - self.d1) * self.kz + k]
        }
    }

    fn controls(&self, fit: &StepFit<T>) -> Vec<Vec<T>> {
        let n = self.n;
        (0..self.d1 + self.d2)
            .map(|c| {
                let mut z = vec![T::zero(); n];
                for k in 0..self.kz {
                    let b = self.coef_ref(fit, c, k);
                    for (zi, f) in z.iter_mut().zip(&self.phi[k * n..(k + 1) * n]) {
                        *zi = *zi + b * *f;
                    }
                }
                z
            })
            .collect()
    }

    fn continuation(&self, fit: &StepFit<T>) -> Vec<T> {
        let n = self.n;
        let mut c = vec![T::zero(); n];
        for k in 0..self.ky {
            for (ci, f) in c.iter_mut().zip(&self.psi[k * n..(k + 1) * n]) {
                *ci = *ci + fit.gamma[k] * *f;
            }
        }
        c
    }

    fn piece(&self, c: usize, z: T) -> T {
        let (sp, sm) = self.slopes[c];
        if z >= T::zero() {
            sp * z
        } else {
            -sm * z
        }
    }

    /// Residual without the `γ·ψ` term.
    fn partial_residuals(&self, z: &[Vec<T>]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let mut r = self.u[i];
                for (c, zc) in z.iter().enumerate() {
                    r = r + self.piece(c, zc[i]) * self.h - zc[i] * self.inc(c, i);
                }
                r
            })
            .collect()
    }

    fn objective(&self, fit: &StepFit<T>) -> T {
        let z = self.controls(fit);
        let c = self.continuation(fit);
        self.partial_residuals(&z)
            .iter()
            .zip(&c)
            .fold(T::zero(), |s, (r, c)| s + (*r - *c) * (*r - *c))
    }

    /// Joint least squares with the sign pattern of every `Z` held fixed.
    fn frozen_sign_step(&self, fit: &StepFit<T>) -> Option<StepFit<T>> {
        let n = self.n;
        let dz = self.d1 + self.d2;
        let z = self.controls(fit);
        let p = self.ky + self.kz * dz;
        let weights: Vec<Vec<T>> = z
            .iter()
            .enumerate()
            .map(|(c, zc)| {
                let (sp, sm) = self.slopes[c];
                (0..n)
                    .map(|i| {
                        let s = if zc[i] >= T::zero() { sp } else { -sm };
                        self.inc(c, i) - s * self.h
                    })
                    .collect()
            })
            .collect();
        let (mut gram, mut rhs) = joint_normal_equations(
            self.fast, self.psi, self.ky, self.phi, self.kz, &weights, self.u,
        );
        let offset = self.ky + self.kz * self.d1;
        pin_inactive_jump_columns(
            &mut gram,
            &mut rhs,
            p,
            offset,
            self.kz,
            self.d2,
            self.jump_mask,
        );
        let x = solve_normal_equations(&gram, &rhs, p, default_ridge::<T>()).ok()?;
        let mut out = fit.clone();
        out.gamma.copy_from_slice(&x[..self.ky]);
        for c in 0..dz {
            for k in 0..self.kz {
                *self.coef(&mut out, c, k) = x[self.ky + c * self.kz + k];
            }
        }
        Some(out)
    }

    fn coordinate_pass(&self, fit: &mut StepFit<T>, gram_psi: &[T]) -> Result<()> {
        let n = self.n;
        let mut z = self.controls(fit);
        // γ block
        let target = self.partial_residuals(&z);
        let rhs: Vec<T> = (0..self.ky)
            .map(|k| dotv(&self.psi[k * n..(k + 1) * n], &target))
            .collect();
        fit.gamma = solve_normal_equations(gram_psi, &rhs, self.ky, default_ridge::<T>())?;
        let cont = self.continuation(fit);
        let mut full = self.partial_residuals(&z);
        for (r, c) in full.iter_mut().zip(&cont) {
            *r = *r - *c;
        }
        let mut rb = vec![T::zero(); n];
        let mut eb = vec![T::zero(); n];
        let mut wb = vec![T::zero(); n];
        for c in 0..self.d1 + self.d2 {
            let (sp, sm) = self.slopes[c];
            for k in 0..self.kz {
                if c >= self.d1 && !jump_active(self.jump_mask, k) {
                    continue;
                }
                let b_old = self.coef_ref(fit, c, k);
                let col = &self.phi[k * n..(k + 1) * n];
                for i in 0..n {
                    let zi = z[c][i];
                    let w = self.inc(c, i);
                    rb[i] = full[i] - self.piece(c, zi) * self.h + zi * w;
                    eb[i] = zi - b_old * col[i];
                    wb[i] = w;
                }
                let b = minimize_piecewise(&rb, &eb, col, &wb, sp, sm, self.h);
                *self.coef(fit, c, k) = b;
                for i in 0..n {
                    let zi = eb[i] + b * col[i];
                    z[c][i] = zi;
                    full[i] = rb[i] + self.piece(c, zi) * self.h - zi * wb[i];
                }
            }
        }
        Ok(())
    }
}

/// `(s⁺, s⁻)` with `g = Σ_c s⁺_c z_c⁺ + s⁻_c z_c⁻`, Brownian coordinates
/// first.
fn driver_slopes<T: Real>(driver: &Driver) -> Vec<(T, T)> {
    let d1 = driver.brownian_dim();
    let d2 = driver.jump_dim();
    (0..d1 + d2)
        .map(|c| {
            let mut z = vec![T::zero(); d1];
            let mut zt = vec![T::zero(); d2];
            let unit = |z: &mut Vec<T>, zt: &mut Vec<T>, v: T| {
                if c < d1 {
                    z[c] = v;
                } else {
                    zt[c - d1] = v;
                }
            };
            unit(&mut z, &mut zt, T::one());
            let sp = driver.g(&z, &zt);
            unit(&mut z, &mut zt, -T::one());
            let sm = driver.g(&z, &zt);
            (sp, sm)
        })
        .collect()
}

/// Result of a backward sweep over one exercise interval.
#[derive(Debug, Clone)]
pub struct IntervalSolution<T> {
    /// Fitted continuation `C_0` at the left date, per path.
    pub continuation: Vec<T>,
    /// `C_0 + g(Z_0, Z̃_0)Δ` (floored like every `U_p`), per path.
    pub value: Vec<T>,
    /// Martingale increments, `n0 × n_paths`, step-major.
    pub increments: Vec<T>,
}

/// Backward sweep over the fine steps of interval `interval_index`,
/// starting from `terminal` at its right date. Coefficients are written
/// into `fit`.
pub fn solve_interval<T: Real>(
    terminal: &[T],
    ensemble: &PathEnsemble<T>,
    driver: &Driver,
    grid: &TimeGrid<T>,
    interval_index: usize,
    fit: &mut RegressionFit<T>,
) -> Result<IntervalSolution<T>> {
    let n = ensemble.n_paths();
    if terminal.len() != n {
        return Err(Error::Dimension {
            what: "terminal samples",
            expected: n,
            got: terminal.len(),
        });
    }
    if ensemble.n_times() != grid.n_times() || fit.n_steps() != grid.n_steps() {
        return Err(Error::Dimension {
            what: "grid steps",
            expected: grid.n_steps(),
            got: ensemble.n_times() - 1,
        });
    }
    if interval_index >= grid.n_intervals() {
        return Err(Error::Config(format!(
            "interval {interval_index} out of range"
        )));
    }
    let floor = terminal.iter().all(|&u| u >= T::zero());
    let n0 = grid.steps_per_interval();
    let (d, d1, d2) = (ensemble.dim(), ensemble.brownian_dim(), ensemble.jump_dim());
    let shared = fit.basis_z.is_none();
    let ky = fit.basis_y.size();
    let kz = fit.basis_z().size();
    let mut u = terminal.to_vec();
    let mut increments = vec![T::zero(); n0 * n];
    let mut continuation = vec![T::zero(); n];
    let mut dn_comp = vec![T::zero(); n * d2];
    let mut z = vec![T::zero(); d1];
    let mut zt = vec![T::zero(); d2];
    for p in (0..n0).rev() {
        let k = grid.date_index(interval_index) + p;
        let h = ensemble.step_dt(k);
        let states = ensemble.state_at(k);
        let psi = fit.basis_y.design(k, states, d);
        let phi_own = if shared {
            None
        } else {
            Some(fit.basis_z().design(k, states, d))
        };
        let phi = phi_own.as_deref().unwrap_or(&psi);
        let dw = ensemble.dw_at(k);
        let fast = HingeDesign::new(&fit.basis_y, fit.basis_z(), k, states, d);
        for i in 0..n {
            for c in 0..d2 {
                dn_comp[i * d2 + c] = ensemble.compensated_dn(k, i, c);
            }
        }
        let jump_mask = if d2 > 0 {
            let rate = ensemble
                .intensity_ref()
                .iter()
                .fold(f64::INFINITY, |m, l| m.min(l.f64()));
            jump_column_mask(fit.basis_z(), k, rate * h.f64() * n as f64)
        } else {
            Vec::new()
        };
        let step = match fit.mode {
            RegressionMode::Explicit => explicit_step(
                &u,
                &psi,
                ky,
                phi,
                kz,
                dw,
                d1,
                &dn_comp,
                d2,
                &jump_mask,
                fast.as_ref(),
            ),
            RegressionMode::Implicit => implicit_step(
                &u,
                &psi,
                ky,
                phi,
                kz,
                dw,
                d1,
                &dn_comp,
                d2,
                &jump_mask,
                driver,
                h,
                fast.as_ref(),
            ),
        }?;
        for i in 0..n {
            let c0 = (0..ky).fold(T::zero(), |s, j| s + step.gamma[j] * psi[j * n + i]);
            for c in 0..d1 {
                z[c] = (0..kz).fold(T::zero(), |s, j| s + step.beta[c * kz + j] * phi[j * n + i]);
            }
            for c in 0..d2 {
                zt[c] = (0..kz).fold(T::zero(), |s, j| {
                    s + step.beta_jump[c * kz + j] * phi[j * n + i]
                });
            }
            let g = driver.g(&z, &zt);
            let mut inc = -g * h;
            for c in 0..d1 {
                inc = inc + z[c] * dw[i * d1 + c];
            }
            for c in 0..d2 {
                inc = inc + zt[c] * dn_comp[i * d2 + c];
            }
            increments[p * n + i] = inc;
            // the implicit fit already carries the driver term in C
            let (mean, v) = match fit.mode {
                RegressionMode::Explicit => (c0, c0 + g * h),
                RegressionMode::Implicit => (c0 - g * h, c0),
            };
            u[i] = if floor { v.max(T::zero()) } else { v };
            if p == 0 {
                continuation[i] = mean;
            }
        }
        fit.set_step(k, step);
    }
    Ok(IntervalSolution {
        continuation,
        value: u,
        increments,
    })
}

/// Chains [`solve_interval`] over the whole horizon and returns the
/// time-0 value `U_0` averaged over paths, together with the fit.
pub fn solve_horizon<T: Real>(
    terminal: &[T],
    ensemble: &PathEnsemble<T>,
    driver: &Driver,
    grid: &TimeGrid<T>,
    fit: &mut RegressionFit<T>,
) -> Result<Vec<T>> {
    let mut u = terminal.to_vec();
    for j in (0..grid.n_intervals()).rev() {
        u = solve_interval(&u, ensemble, driver, grid, j, fit)?.value;
    }
    Ok(u)
}

/// Worst-case expectation of `terminal` at time zero.
pub fn rho_expectation_at_zero<T: Real>(
    terminal: &[T],
    ensemble: &PathEnsemble<T>,
    driver: &Driver,
    grid: &TimeGrid<T>,
    basis: &BasisSpec<T>,
    mode: RegressionMode,
) -> Result<T> {
    let mut fit = RegressionFit::new(
        basis.clone(),
        None,
        mode,
        ensemble.brownian_dim(),
        ensemble.jump_dim(),
        grid.n_steps(),
    );
    let u0 = solve_horizon(terminal, ensemble, driver, grid, &mut fit)?;
    Ok(u0.iter().copied().sum::<T>() / T::lit(u0.len() as f64))
}
