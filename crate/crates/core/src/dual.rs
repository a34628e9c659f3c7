//! Pathwise dual for `L` exercise rights, over any ordered field.

use crate::scalar::Scalar;
use crate::stats::SampleStats;

/// `Θ_0^L` by the backward recursion
///
/// `Θ^q_i = max(f_i + M^{q−1}_i − M^{q−1}_{i+1} + Θ^{q−1}_{i+1}, M^q_i − M^q_{i+1} + Θ^q_{i+1})`
///
/// with `Θ^0 ≡ 0`, `Θ^q_{T+1} = 0`, `M_{T+1} = M_T` and `M^0 ≡ 0`.
/// `martingales[q − 1]` holds level `q` at every date `0..=T`.
pub fn dual_pathwise_max<S: Scalar>(payoffs: &[S], martingales: &[Vec<S>], levels: usize) -> S {
    theta_table(payoffs, martingales, levels)[levels][0].clone()
}

/// All `Θ^q_i` for `q = 0..=L`, `i = 0..=T+1`.
pub fn theta_table<S: Scalar>(payoffs: &[S], martingales: &[Vec<S>], levels: usize) -> Vec<Vec<S>> {
    let t = payoffs.len() - 1;
    assert!(
        martingales.len() >= levels,
        "martingales missing for some levels"
    );
    let m = |q: usize, i: usize| -> S {
        if q == 0 {
            S::zero()
        } else {
            martingales[q - 1][i.min(t)].clone()
        }
    };
    let mut theta = vec![vec![S::zero(); t + 2]];
    for q in 1..=levels {
        let mut cur = vec![S::zero(); t + 2];
        for i in (0..=t).rev() {
            let exercise =
                payoffs[i].clone() + m(q - 1, i) - m(q - 1, i + 1) + theta[q - 1][i + 1].clone();
            let wait = m(q, i) - m(q, i + 1) + cur[i + 1].clone();
            cur[i] = S::max_of(exercise, wait);
        }
        theta.push(cur);
    }
    theta
}

/// Dual maximum over the horizon truncated at each date: entry `j` is the
/// value `Θ_0^L` would take if `j` were the last date. The last entry
/// equals [`dual_pathwise_max`].
///
/// Runs forward, so it can be updated as a path is revealed.
pub fn running_dual_max<S: Scalar>(payoffs: &[S], martingales: &[Vec<S>], levels: usize) -> Vec<S> {
    let mut tracker = RunningDual::new(levels);
    payoffs
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let m: Vec<S> = (0..levels).map(|q| martingales[q][j].clone()).collect();
            tracker.push(f.clone(), &m)
        })
        .collect()
}

/// Forward form of the dual maximum.
///
/// `best[k]` is the largest `M^L_0 + Σ_{l≤k} (f_{j_l} + M^{L−l}_{j_l} − M^{L−l+1}_{j_l})`
/// over `j_1 < … < j_k` among the dates seen so far; the truncated dual is
/// `max_k (best[k] − M^{L−k}_j)`.
#[derive(Debug, Clone)]
pub struct RunningDual<S> {
    levels: usize,
    started: bool,
    best: Vec<Option<S>>,
}

impl<S: Scalar> RunningDual<S> {
    pub fn new(levels: usize) -> Self {
        let mut best = vec![None; levels + 1];
        best[0] = Some(S::zero());
        Self {
            levels,
            started: false,
            best,
        }
    }

    /// Adds date `j` with payoff `f` and martingale values `m[q − 1]` for
    /// `q = 1..=L`; returns the truncated dual at `j`.
    pub fn push(&mut self, f: S, m: &[S]) -> S {
        let big_l = self.levels;
        let mq = |q: usize| -> S {
            if q == 0 {
                S::zero()
            } else {
                m[q - 1].clone()
            }
        };
        if !self.started {
            self.started = true;
            self.best[0] = Some(mq(big_l));
        }
        for k in (1..=big_l).rev() {
            if let Some(prev) = self.best[k - 1].clone() {
                let q = big_l - k + 1;
                let cand = prev + f.clone() + mq(q - 1) - mq(q);
                self.best[k] = Some(match self.best[k].take() {
                    Some(b) => S::max_of(b, cand),
                    None => cand,
                });
            }
        }
        let mut out: Option<S> = None;
        for k in 0..=big_l {
            if let Some(b) = self.best[k].clone() {
                let v = b - mq(big_l - k);
                out = Some(match out {
                    Some(o) => S::max_of(o, v),
                    None => v,
                });
            }
        }
        out.expect("k = 0 is always present")
    }
}

/// Sample statistics of pathwise dual values; a small variance indicates
/// a nearly surely optimal martingale family.
pub fn theta_variance_diagnostic(theta_samples: &[f64]) -> SampleStats {
    SampleStats::from_slice(theta_samples)
}

/// Brute force over ordered exercise tuples (with "unexercised" allowed):
/// the dual value written out as a sum over the chosen dates.
pub fn dual_by_enumeration<S: Scalar>(payoffs: &[S], martingales: &[Vec<S>], levels: usize) -> S {
    let t = payoffs.len() - 1;
    let m = |q: usize, i: usize| -> S {
        if q == 0 {
            S::zero()
        } else {
            martingales[q - 1][i.min(t)].clone()
        }
    };
    let mut best: Option<S> = None;
    let mut tuple = Vec::with_capacity(levels);
    fn rec<S: Scalar>(
        start: usize,
        t: usize,
        levels: usize,
        tuple: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        visit(tuple);
        if tuple.len() == levels {
            return;
        }
        for j in start..=t {
            tuple.push(j);
            rec::<S>(j + 1, t, levels, tuple, visit);
            tuple.pop();
        }
    }
    let mut visit = |tp: &[usize]| {
        // value of exercising right l (1-based) at tp[l−1] and nothing else
        let k = tp.len();
        let mut v = S::zero();
        let mut prev = 0usize;
        for (l, &j) in tp.iter().enumerate() {
            let q = levels - l;
            v = v + m(q, prev) - m(q, j) + payoffs[j].clone();
            prev = j;
        }
        let q = levels - k;
        v = v + m(q, prev) - m(q, t + 1);
        best = Some(match best.take() {
            Some(b) => S::max_of(b, v),
            None => v,
        });
    };
    rec::<S>(0, t, levels, &mut tuple, &mut visit);
    best.expect("the empty tuple is always visited")
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    #[test]
    fn zero_martingale_gives_running_max() {
        let f = vec![1.0, 4.0, 2.0, 3.0];
        assert_eq!(dual_pathwise_max(&f, &[vec![0.0; 4]], 1), 4.0);
        assert_eq!(dual_pathwise_max(&f, &[vec![0.0; 4], vec![0.0; 4]], 2), 7.0);
    }

    #[test]
    fn extra_rights_are_worthless() {
        let f = vec![2.0, 5.0];
        let m = vec![vec![0.0; 2]; 4];
        assert_eq!(dual_pathwise_max(&f, &m, 4), 7.0);
    }

    #[test]
    fn deterministic_toy() {
        let f = vec![1, 3, 2]
            .into_iter()
            .map(Ratio::<i64>::from_integer)
            .collect::<Vec<_>>();
        let z = vec![vec![Ratio::from_integer(0); 3]; 2];
        assert_eq!(dual_pathwise_max(&f, &z, 2), Ratio::from_integer(5));
        assert_eq!(
            running_dual_max(&f, &z, 2),
            vec![1, 4, 5]
                .into_iter()
                .map(Ratio::from_integer)
                .collect::<Vec<_>>()
        );
    }

    fn payoffs_and_martingales() -> impl Strategy<Value = (Vec<i64>, Vec<Vec<i64>>, usize)> {
        (1usize..=8, 1usize..=3).prop_flat_map(|(t, l)| {
            (
                prop::collection::vec(0i64..20, t + 1),
                prop::collection::vec(prop::collection::vec(-15i64..15, t + 1), l),
                Just(l),
            )
        })
    }

    proptest! {
        #[test]
        fn recursion_matches_enumeration((f, m, l) in payoffs_and_martingales()) {
            let f: Vec<Ratio<i64>> = f.into_iter().map(Ratio::from_integer).collect();
            let m: Vec<Vec<Ratio<i64>>> = m
                .into_iter()
                .map(|v| v.into_iter().map(|x| Ratio::new(x, 3)).collect())
                .collect();
            prop_assert_eq!(dual_pathwise_max(&f, &m, l), dual_by_enumeration(&f, &m, l));
        }

        #[test]
        fn forward_form_matches_recursion((f, m, l) in payoffs_and_martingales()) {
            let f: Vec<Ratio<i64>> = f.into_iter().map(Ratio::from_integer).collect();
            let m: Vec<Vec<Ratio<i64>>> = m
                .into_iter()
                .map(|v| v.into_iter().map(|x| Ratio::new(x, 7)).collect())
                .collect();
            let run = running_dual_max(&f, &m, l);
            prop_assert_eq!(run.last().unwrap().clone(), dual_pathwise_max(&f, &m, l));
            for j in 0..f.len() {
                let ms: Vec<Vec<Ratio<i64>>> = m.iter().map(|v| v[..=j].to_vec()).collect();
                prop_assert_eq!(run[j].clone(), dual_pathwise_max(&f[..=j], &ms, l));
            }
        }
    }

    #[test]
    fn diagnostic_variance() {
        assert_eq!(theta_variance_diagnostic(&[2.0, 2.0, 2.0]).variance, 0.0);
        assert!(theta_variance_diagnostic(&[1.0, 2.0, 4.0]).variance > 0.0);
    }
}
