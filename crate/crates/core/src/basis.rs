//! Regression bases: linear splines with empirical-quantile knots, their
//! tensor products, and augmentation by raw state coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Hinge;
use crate::paths::PathEnsemble;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    QuantileSpline,
    Tensor,
    CustomAugmented,
}

/// Feature map per fine time.
///
/// Every coordinate in the spline part carries `slots` hinge functions
/// `(x − q)⁺`. When a time slice has fewer distinct knots than slots the
/// surplus hinges evaluate to zero, so the feature count never varies
/// with the time index.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec<T> {
    spline_dim: usize,
    slots: usize,
    /// `knots[time][coord]`, strictly increasing.
    knots: Vec<Vec<Vec<T>>>,
    augmentation: usize,
}

/// Sorted-sample linear interpolation quantile (Hyndman–Fan type 7).
pub fn quantile_type7<T: Real>(sorted: &[T], p: f64) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = T::lit(h - lo as f64);
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// `1%, 3%, …, 99%`-style grid: `n` levels centred in equal cells of (0,1).
pub fn centred_levels(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (2 * i + 1) as f64 / (2 * n) as f64)
        .collect()
}

fn knots_from_slice<T: Real>(slice: &mut [T], levels: &[f64]) -> Vec<T> {
    slice.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let mut k: Vec<T> = levels.iter().map(|&p| quantile_type7(slice, p)).collect();
    k.dedup_by(|a, b| *a <= *b);
    k
}

fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.iter().any(|&p| !(p > 0.0 && p < 1.0)) || levels.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(
            "quantile levels must be increasing and inside (0, 1)".into(),
        ));
    }
    Ok(())
}

impl<T: Real> BasisSpec<T> {
    /// Univariate spline `{1, x, (x − q_i)⁺}` with knots estimated per time
    /// slice.
    pub fn build_quantile_spline(samples_by_time: &[Vec<T>], levels: &[f64]) -> Result<Self> {
        validate_levels(levels)?;
        let mut degenerate = 0;
        let mut knots = Vec::with_capacity(samples_by_time.len());
        for (t, s) in samples_by_time.iter().enumerate() {
            if s.len() < 2 {
                return Err(Error::Config(format!(
                    "time slice {t} has {} samples, need >= 2",
                    s.len()
                )));
            }
            let mut buf = s.clone();
            let k = knots_from_slice(&mut buf, levels);
            if k.len() < levels.len() {
                degenerate += 1;
            }
            knots.push(vec![k]);
        }
        if degenerate > 0 {
            log::warn!(
                "{degenerate} of {} time slices had duplicate quantile knots; surplus hinges are zero",
                samples_by_time.len()
            );
        }
        Ok(Self {
            spline_dim: 1,
            slots: levels.len(),
            knots,
            augmentation: 0,
        })
    }

    /// Spline on coordinate `coord` of an ensemble's state.
    pub fn from_ensemble(ensemble: &PathEnsemble<T>, coord: usize, levels: &[f64]) -> Result<Self> {
        let slices = coordinate_slices(ensemble, coord);
        Self::build_quantile_spline(&slices, levels)
    }

    /// Product basis `1, φ¹, φ², φ¹⊗φ²` of two univariate splines; the
    /// constant of each factor is dropped before multiplying.
    pub fn build_tensor(b1: &Self, b2: &Self) -> Result<Self> {
        if b1.spline_dim != 1 || b2.spline_dim != 1 || b1.augmentation + b2.augmentation > 0 {
            return Err(Error::Config(
                "tensor factors must be univariate splines".into(),
            ));
        }
        if b1.knots.len() != b2.knots.len() {
            return Err(Error::Dimension {
                what: "tensor time axes",
                expected: b1.knots.len(),
                got: b2.knots.len(),
            });
        }
        if b1.slots != b2.slots {
            return Err(Error::Config(
                "tensor factors need equal knot counts".into(),
            ));
        }
        let knots = b1
            .knots
            .iter()
            .zip(&b2.knots)
            .map(|(a, b)| vec![a[0].clone(), b[0].clone()])
            .collect();
        Ok(Self {
            spline_dim: 2,
            slots: b1.slots,
            knots,
            augmentation: 0,
        })
    }

    /// Appends `extra` raw state coordinates after the spline features.
    pub fn augmented(&self, extra: usize) -> Self {
        Self {
            augmentation: self.augmentation + extra,
            ..self.clone()
        }
    }

    /// Constant-only basis on `n_times` slices.
    pub fn constant(n_times: usize) -> Self {
        Self {
            spline_dim: 0,
            slots: 0,
            knots: vec![Vec::new(); n_times],
            augmentation: 0,
        }
    }

    /// Basis with explicit knots `knots[time]` on one coordinate.
    pub fn with_knots(knots: Vec<Vec<T>>) -> Result<Self> {
        let slots = knots.iter().map(Vec::len).max().unwrap_or(0);
        if knots.iter().any(|k| k.windows(2).any(|w| !(w[1] > w[0]))) {
            return Err(Error::Config("knots must be strictly increasing".into()));
        }
        Ok(Self {
            spline_dim: 1,
            slots,
            knots: knots.into_iter().map(|k| vec![k]).collect(),
            augmentation: 0,
        })
    }

    pub fn kind(&self) -> BasisKind {
        if self.augmentation > 0 {
            BasisKind::CustomAugmented
        } else if self.spline_dim == 2 {
            BasisKind::Tensor
        } else {
            BasisKind::QuantileSpline
        }
    }

    fn univariate_width(&self) -> usize {
        1 + self.slots
    }

    /// Number of features `K`.
    pub fn size(&self) -> usize {
        let base = match self.spline_dim {
            0 => 1,
            1 => 1 + self.univariate_width(),
            _ => {
                let u = self.univariate_width();
                1 + 2 * u + u * u
            }
        };
        base + self.augmentation
    }

    /// Features that are not identically zero at `time_index`.
    pub fn effective_size(&self, time_index: usize) -> usize {
        let k = &self.knots[time_index];
        match self.spline_dim {
            0 => 1 + self.augmentation,
            1 => 2 + k[0].len() + self.augmentation,
            _ => {
                let (u1, u2) = (1 + k[0].len(), 1 + k[1].len());
                1 + u1 + u2 + u1 * u2 + self.augmentation
            }
        }
    }

    pub fn n_times(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self, time_index: usize, coord: usize) -> &[T] {
        &self.knots[time_index][coord]
    }

    pub fn augmentation(&self) -> usize {
        self.augmentation
    }

    /// State coordinates consumed: spline inputs first, then raw extras.
    pub fn input_dim(&self) -> usize {
        self.spline_dim + self.augmentation
    }

    fn univariate(&self, knots: &[T], x: T, out: &mut [T]) {
        out[0] = x;
        for (i, o) in out[1..].iter_mut().enumerate() {
            *o = match knots.get(i) {
                Some(&q) if x > q => x - q,
                _ => T::zero(),
            };
        }
    }

    /// Writes the `K` features of `state` at `time_index` into `out`.
    pub fn evaluate_into(&self, time_index: usize, state: &[T], out: &mut [T]) {
        debug_assert_eq!(out.len(), self.size());
        let k = &self.knots[time_index];
        out[0] = T::one();
        let mut at = 1;
        match self.spline_dim {
            0 => {}
            1 => {
                let u = self.univariate_width();
                self.univariate(&k[0], state[0], &mut out[1..1 + u]);
                at += u;
            }
            _ => {
                let u = self.univariate_width();
                let (a, rest) = out[1..].split_at_mut(u);
                let (b, prod) = rest.split_at_mut(u);
                self.univariate(&k[0], state[0], a);
                self.univariate(&k[1], state[1], b);
                for i in 0..u {
                    for j in 0..u {
                        prod[i * u + j] = a[i] * b[j];
                    }
                }
                at += 2 * u + u * u;
            }
        }
        for e in 0..self.augmentation {
            out[at + e] = state[self.spline_dim + e];
        }
    }

    pub fn evaluate(&self, time_index: usize, state: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.size()];
        self.evaluate_into(time_index, state, &mut out);
        out
    }

    /// Features at `time_index` as hinges of state coordinate 0, if the
    /// basis is univariate without augmentation.
    pub fn hinge_form(&self, time_index: usize) -> Option<Vec<Hinge<T>>> {
        if self.augmentation > 0 || self.spline_dim > 1 {
            return None;
        }
        let mut out = vec![Hinge {
            a: T::one(),
            b: T::zero(),
            q: None,
        }];
        if self.spline_dim == 1 {
            out.push(Hinge {
                a: T::zero(),
                b: T::one(),
                q: None,
            });
            let k = &self.knots[time_index][0];
            for i in 0..self.slots {
                out.push(match k.get(i) {
                    Some(&q) => Hinge {
                        a: -q,
                        b: T::one(),
                        q: Some(q),
                    },
                    None => Hinge {
                        a: T::zero(),
                        b: T::zero(),
                        q: None,
                    },
                });
            }
        }
        Some(out)
    }

    /// Column-major design matrix for all paths at fine time `time_index`;
    /// `states` holds `dim` values per path.
    pub fn design(&self, time_index: usize, states: &[T], dim: usize) -> Vec<T> {
        let n = states.len() / dim;
        let k = self.size();
        let mut m = vec![T::zero(); n * k];
        let mut row = vec![T::zero(); k];
        for p in 0..n {
            self.evaluate_into(time_index, &states[p * dim..(p + 1) * dim], &mut row);
            for (c, v) in row.iter().enumerate() {
                m[c * n + p] = *v;
            }
        }
        m
    }
}

/// Values of coordinate `coord` across paths, one vector per fine time.
pub fn coordinate_slices<T: Real>(ensemble: &PathEnsemble<T>, coord: usize) -> Vec<Vec<T>> {
    let d = ensemble.dim();
    (0..ensemble.n_times())
        .map(|k| {
            ensemble
                .state_at(k)
                .iter()
                .skip(coord)
                .step_by(d)
                .copied()
                .collect()
        })
        .collect()
}

pub fn build_quantile_spline_basis<T: Real>(
    samples_by_time: &[Vec<T>],
    quantile_levels: &[f64],
) -> Result<BasisSpec<T>> {
    BasisSpec::build_quantile_spline(samples_by_time, quantile_levels)
}

pub fn build_tensor_basis<T: Real>(b1: &BasisSpec<T>, b2: &BasisSpec<T>) -> Result<BasisSpec<T>> {
    BasisSpec::build_tensor(b1, b2)
}

pub fn evaluate<T: Real>(basis: &BasisSpec<T>, time_index: usize, state: &[T]) -> Vec<T> {
    basis.evaluate(time_index, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{least_squares, normal_equations};

    fn spread(n: usize) -> Vec<f64> {
        (0..n).map(|i| 50.0 + i as f64 * 0.37).collect()
    }

    #[test]
    fn fifty_levels_give_52_features() {
        let b = BasisSpec::build_quantile_spline(&[spread(1000)], &centred_levels(50)).unwrap();
        assert_eq!(b.size(), 52);
        assert_eq!(b.effective_size(0), 52);
        assert_eq!(b.kind(), BasisKind::QuantileSpline);
    }

    #[test]
    fn below_all_knots_only_linear() {
        let b = BasisSpec::build_quantile_spline(&[spread(100)], &centred_levels(10)).unwrap();
        let f = b.evaluate(0, &[10.0]);
        assert_eq!(&f[..2], &[1.0, 10.0]);
        assert!(f[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hinge_arithmetic() {
        let b = BasisSpec::with_knots(vec![vec![90.0, 110.0]]).unwrap();
        assert_eq!(b.evaluate(0, &[100.0]), vec![1.0, 100.0, 10.0, 0.0]);
        assert_eq!(BasisSpec::<f64>::constant(3).evaluate(2, &[5.0]), vec![1.0]);
    }

    #[test]
    fn tensor_has_441_features() {
        let lv: Vec<f64> = (1..=19).map(|i| i as f64 * 0.05).collect();
        let b1 = BasisSpec::build_quantile_spline(&[spread(500)], &lv).unwrap();
        let b2 = BasisSpec::build_quantile_spline(&[spread(400)], &lv).unwrap();
        let t = BasisSpec::build_tensor(&b1, &b2).unwrap();
        assert_eq!(t.size(), 441);
        assert_eq!(t.kind(), BasisKind::Tensor);
        let q = t.knots(0, 1)[3];
        let f = t.evaluate(0, &[60.0, q]);
        // hinge at the knot itself and all its products vanish
        let u = 20;
        assert_eq!(f[1 + u + 1 + 3], 0.0);
        for i in 0..u {
            assert_eq!(f[1 + 2 * u + i * u + 1 + 3], 0.0);
        }
    }

    #[test]
    fn tensor_rejects_mismatched_axes() {
        let b1 = BasisSpec::build_quantile_spline(&[spread(50)], &[0.5]).unwrap();
        let b2 = BasisSpec::build_quantile_spline(&[spread(50), spread(50)], &[0.5]).unwrap();
        assert!(BasisSpec::build_tensor(&b1, &b2).is_err());
    }

    #[test]
    fn degenerate_slice_keeps_size() {
        let b = BasisSpec::build_quantile_spline(&[vec![3.0; 20], spread(20)], &centred_levels(5))
            .unwrap();
        assert_eq!(b.knots(0, 0).len(), 1);
        assert_eq!(b.evaluate(0, &[3.0]).len(), b.evaluate(1, &[3.0]).len());
        assert_eq!(b.effective_size(0), 3);
    }

    #[test]
    fn augmented_appends_raw_coordinates() {
        let b = BasisSpec::with_knots(vec![vec![1.0]]).unwrap();
        let a = b.augmented(2);
        assert_eq!(a.kind(), BasisKind::CustomAugmented);
        let mut expect = b.evaluate(0, &[2.0]);
        expect.extend([7.0, -3.0]);
        assert_eq!(a.evaluate(0, &[2.0, 7.0, -3.0]), expect);
    }

    #[test]
    fn in_span_targets_fit_exactly() {
        let xs = spread(300);
        let b = BasisSpec::build_quantile_spline(&[xs.clone()], &centred_levels(8)).unwrap();
        let design = b.design(0, &xs, 1);
        let coef: Vec<f64> = (0..b.size()).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = xs
            .iter()
            .map(|&x| {
                b.evaluate(0, &[x])
                    .iter()
                    .zip(&coef)
                    .map(|(a, c)| a * c)
                    .sum()
            })
            .collect();
        let fit = least_squares(&design, &y, xs.len(), b.size()).unwrap();
        for &x in &xs {
            let f = b.evaluate(0, &[x]);
            let yhat: f64 = f.iter().zip(&fit).map(|(a, c)| a * c).sum();
            let y0: f64 = f.iter().zip(&coef).map(|(a, c)| a * c).sum();
            assert!((yhat - y0).abs() < 1e-6 * (1.0 + y0.abs()));
        }
        let (g, _) = normal_equations(&design, &y, xs.len(), b.size());
        let v: Vec<f64> = (0..b.size()).map(|i| (i as f64).cos()).collect();
        let q: f64 = (0..b.size())
            .map(|i| {
                (0..b.size())
                    .map(|j| v[i] * g[i * b.size() + j] * v[j])
                    .sum::<f64>()
            })
            .sum();
        assert!(q >= -1e-6);
    }

    #[test]
    fn type7_quantile() {
        let s = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(quantile_type7(&s, 0.5), 2.5);
        assert_eq!(quantile_type7(&s, 0.0), 1.0);
        assert_eq!(centred_levels(50)[0], 0.01);
        assert!((centred_levels(50)[49] - 0.99).abs() < 1e-15);
    }
}
