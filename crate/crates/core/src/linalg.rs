//! Dense least-squares kernels, generic over the floating-point type.

use crate::error::{Error, Result};
use crate::scalar::Real;

const ROW_BLOCK: usize = 512;

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] = acc[0] + a[i] * b[i];
        acc[1] = acc[1] + a[i + 1] * b[i + 1];
        acc[2] = acc[2] + a[i + 2] * b[i + 2];
        acc[3] = acc[3] + a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s = s + a[i] * b[i];
    }
    s
}

/// Normal equations of a column-major design.
///
/// `design` holds `p` columns of length `n` back to back. Returns the full
/// symmetric `p × p` Gram matrix (row-major) and `Aᵀy`.
pub fn normal_equations<T: Real>(design: &[T], y: &[T], n: usize, p: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(design.len(), n * p);
    assert_eq!(y.len(), n);
    let nnz = design.iter().filter(|v| **v != T::zero()).count();
    if p >= 64 && 3 * nnz < n * p {
        return sparse_normal_equations(design, y, n, p);
    }
    let mut gram = vec![T::zero(); p * p];
    let mut rhs = vec![T::zero(); p];
    let mut start = 0;
    while start < n {
        let end = (start + ROW_BLOCK).min(n);
        for i in 0..p {
            let ci = &design[i * n + start..i * n + end];
            for j in i..p {
                let cj = &design[j * n + start..j * n + end];
                gram[i * p + j] = gram[i * p + j] + dot(ci, cj);
            }
            rhs[i] = rhs[i] + dot(ci, &y[start..end]);
        }
        start = end;
    }
    for i in 0..p {
        for j in 0..i {
            gram[i * p + j] = gram[j * p + i];
        }
    }
    (gram, rhs)
}

/// Row-wise accumulation over the nonzero entries of each row.
fn sparse_normal_equations<T: Real>(design: &[T], y: &[T], n: usize, p: usize) -> (Vec<T>, Vec<T>) {
    let mut gram = vec![T::zero(); p * p];
    let mut rhs = vec![T::zero(); p];
    let mut cols = Vec::with_capacity(p);
    let mut vals = Vec::with_capacity(p);
    for r in 0..n {
        cols.clear();
        vals.clear();
        for c in 0..p {
            let v = design[c * n + r];
            if v != T::zero() {
                cols.push(c);
                vals.push(v);
            }
        }
        for (a, (&ca, &va)) in cols.iter().zip(&vals).enumerate() {
            let row = &mut gram[ca * p..(ca + 1) * p];
            for (&cb, &vb) in cols[a..].iter().zip(&vals[a..]) {
                row[cb] = row[cb] + va * vb;
            }
            rhs[ca] = rhs[ca] + va * y[r];
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[i * p + j] = gram[j * p + i];
        }
    }
    (gram, rhs)
}

/// Feature `(a + b·x)·1{x > q}` of one state coordinate; `q = None` means
/// always on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hinge<T> {
    pub a: T,
    pub b: T,
    pub q: Option<T>,
}

/// One coordinate across paths, sorted and centred, for Gram matrices of
/// hinge features in `O(n log n + p²)`.
#[derive(Debug, Clone)]
pub struct SortedCoordinate<T> {
    centre: T,
    sorted: Vec<T>,
    order: Vec<usize>,
}

impl<T: Real> SortedCoordinate<T> {
    pub fn new(x: &[T]) -> Self {
        let n = x.len().max(1);
        let centre = x.iter().fold(T::zero(), |s, v| s + *v) / T::lit(n as f64);
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap_or(std::cmp::Ordering::Equal));
        let sorted = order.iter().map(|&i| x[i] - centre).collect();
        Self {
            centre,
            sorted,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// First sorted position strictly above `q`.
    fn start(&self, q: Option<T>) -> usize {
        match q {
            None => 0,
            Some(q) => {
                let qc = q - self.centre;
                self.sorted.partition_point(|v| *v <= qc)
            }
        }
    }

    /// Suffix sums of `xᶜᵐ·w` over sorted positions for `m = 0, 1, 2`.
    fn suffix(&self, w: impl Fn(usize) -> T) -> [Vec<T>; 3] {
        let n = self.sorted.len();
        let mut out = [
            vec![T::zero(); n + 1],
            vec![T::zero(); n + 1],
            vec![T::zero(); n + 1],
        ];
        for pos in (0..n).rev() {
            let x = self.sorted[pos];
            let v = w(self.order[pos]);
            out[0][pos] = out[0][pos + 1] + v;
            out[1][pos] = out[1][pos + 1] + v * x;
            out[2][pos] = out[2][pos + 1] + v * x * x;
        }
        out
    }
}

/// Normal equations for column blocks `ψ_k(x)·w` with hinge features `ψ_k`
/// and per-path block weights `w` (`None` is 1), in block order.
pub fn hinge_normal_equations<T: Real>(
    coord: &SortedCoordinate<T>,
    blocks: &[(&[Hinge<T>], Option<&[T]>)],
    y: &[T],
) -> (Vec<T>, Vec<T>) {
    let p: usize = blocks.iter().map(|b| b.0.len()).sum();
    let mut gram = vec![T::zero(); p * p];
    let mut rhs = vec![T::zero(); p];
    let one = |_: usize| T::one();
    let weight = |w: Option<&[T]>, i: usize| w.map_or(T::one(), |w| w[i]);
    // centred features: a + b·x = (a + b·c) + b·xᶜ
    let centred: Vec<Vec<(T, T, usize)>> = blocks
        .iter()
        .map(|(f, _)| {
            f.iter()
                .map(|h| (h.a + h.b * coord.centre, h.b, coord.start(h.q)))
                .collect()
        })
        .collect();
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut at = 0;
    for b in blocks {
        offsets.push(at);
        at += b.0.len();
    }
    for (bi, (_, wi)) in blocks.iter().enumerate() {
        for (bj, (_, wj)) in blocks.iter().enumerate().skip(bi) {
            let sums = match (wi, wj) {
                (None, None) => coord.suffix(one),
                _ => coord.suffix(|i| weight(*wi, i) * weight(*wj, i)),
            };
            for (r, &(ai, bbi, si)) in centred[bi].iter().enumerate() {
                for (c, &(aj, bbj, sj)) in centred[bj].iter().enumerate() {
                    let s = si.max(sj);
                    let v = ai * aj * sums[0][s]
                        + (ai * bbj + aj * bbi) * sums[1][s]
                        + bbi * bbj * sums[2][s];
                    let (gi, gj) = (offsets[bi] + r, offsets[bj] + c);
                    gram[gi * p + gj] = v;
                    gram[gj * p + gi] = v;
                }
            }
        }
        let sums = coord.suffix(|i| weight(*wi, i) * y[i]);
        for (r, &(a, b, s)) in centred[bi].iter().enumerate() {
            rhs[offsets[bi] + r] = a * sums[0][s] + b * sums[1][s];
        }
    }
    (gram, rhs)
}

/// Cholesky factorization in place (lower triangle). Returns the ratio of
/// the largest to the smallest pivot on failure.
fn cholesky<T: Real>(a: &mut [T], p: usize) -> std::result::Result<(), f64> {
    let mut max_pivot = 0.0f64;
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d = d - a[j * p + k] * a[j * p + k];
        }
        max_pivot = max_pivot.max(d.f64().abs());
        if !(d > T::zero()) || !d.is_finite() {
            let tiny = d.f64().abs().max(f64::MIN_POSITIVE);
            return Err(max_pivot / tiny);
        }
        let l = d.sqrt();
        a[j * p + j] = l;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s = s - a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / l;
        }
    }
    Ok(())
}

/// Solves the damped normal equations `(G + ridge) x = b`.
///
/// Columns are rescaled to unit diagonal first; the damping added to the
/// scaled diagonal is `ridge_factor · trace / K` over the `K` active
/// columns. Columns with an identically zero diagonal get coefficient 0.
pub fn solve_normal_equations<T: Real>(
    gram: &[T],
    rhs: &[T],
    p: usize,
    ridge_factor: T,
) -> Result<Vec<T>> {
    let active: Vec<usize> = (0..p).filter(|&i| gram[i * p + i] > T::zero()).collect();
    let m = active.len();
    let mut x = vec![T::zero(); p];
    if m == 0 {
        return Ok(x);
    }
    let scale: Vec<T> = active
        .iter()
        .map(|&i| T::one() / gram[i * p + i].sqrt())
        .collect();
    let mut a = vec![T::zero(); m * m];
    let mut b = vec![T::zero(); m];
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            a[r * m + c] = gram[i * p + j] * scale[r] * scale[c];
        }
        b[r] = rhs[i] * scale[r];
    }
    // scaled trace equals m, so trace / K = 1
    let damp = ridge_factor;
    let a0 = a.clone();
    for r in 0..m {
        a[r * m + r] = a[r * m + r] + damp;
    }
    cholesky(&mut a, m).map_err(|condition| Error::RankDeficient { condition })?;
    let mut y = chol_solve(&a, &b, m);
    // two refinement passes against the undamped system shrink the
    // damping bias on well-determined directions
    for _ in 0..2 {
        let resid: Vec<T> = (0..m)
            .map(|r| {
                let row = &a0[r * m..(r + 1) * m];
                b[r] - row.iter().zip(&y).fold(T::zero(), |s, (u, v)| s + *u * *v)
            })
            .collect();
        let dy = chol_solve(&a, &resid, m);
        for (v, d) in y.iter_mut().zip(dy) {
            *v = *v + d;
        }
    }
    for (r, &i) in active.iter().enumerate() {
        x[i] = y[r] * scale[r];
    }
    Ok(x)
}

fn chol_solve<T: Real>(l: &[T], b: &[T], m: usize) -> Vec<T> {
    let mut y = b.to_vec();
    for i in 0..m {
        let mut s = y[i];
        for k in 0..i {
            s = s - l[i * m + k] * y[k];
        }
        y[i] = s / l[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in i + 1..m {
            s = s - l[k * m + i] * y[k];
        }
        y[i] = s / l[i * m + i];
    }
    y
}

/// Default damping factor for a scalar type: `1e-10`, floored by the
/// type's own resolution.
pub fn default_ridge<T: Real>() -> T {
    T::lit(1e-10).max(T::epsilon() * T::lit(10.0))
}

/// Ordinary least squares of `y` on a column-major design.
pub fn least_squares<T: Real>(design: &[T], y: &[T], n: usize, p: usize) -> Result<Vec<T>> {
    let (g, b) = normal_equations(design, y, n, p);
    solve_normal_equations(&g, &b, p, default_ridge::<T>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_linear_model() {
        let n = 50;
        let mut design = vec![0.0f64; 2 * n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            let x = i as f64 / 7.0;
            design[i] = 1.0;
            design[n + i] = x;
            y[i] = 2.0 - 3.0 * x;
        }
        let beta = least_squares(&design, &y, n, 2).unwrap();
        assert!((beta[0] - 2.0).abs() < 1e-8);
        assert!((beta[1] + 3.0).abs() < 1e-8);
    }

    #[test]
    fn zero_column_gets_zero_coefficient() {
        let n = 10;
        let mut design = vec![0.0f64; 2 * n];
        let y = vec![1.5; n];
        for i in 0..n {
            design[i] = 1.0;
        }
        let beta = least_squares(&design, &y, n, 2).unwrap();
        assert!((beta[0] - 1.5).abs() < 1e-9);
        assert_eq!(beta[1], 0.0);
    }

    #[test]
    fn collinear_columns_still_predict() {
        // 1 and a constant column 100: prediction must still match
        let n = 20;
        let mut design = vec![0.0f64; 2 * n];
        let y = vec![4.0; n];
        for i in 0..n {
            design[i] = 1.0;
            design[n + i] = 100.0;
        }
        let beta = least_squares(&design, &y, n, 2).unwrap();
        assert!((beta[0] + 100.0 * beta[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn gram_is_symmetric() {
        let n = 33;
        let p = 3;
        let design: Vec<f64> = (0..n * p).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y = vec![1.0; n];
        let (g, _) = normal_equations(&design, &y, n, p);
        for i in 0..p {
            for j in 0..p {
                assert_eq!(g[i * p + j], g[j * p + i]);
            }
        }
    }

    #[test]
    fn sparse_gram_matches_dense() {
        let (n, p) = (50, 70);
        let design: Vec<f64> = (0..n * p)
            .map(|i| {
                if (i * 7919) % 5 == 0 {
                    ((i * 31) % 13) as f64 - 6.0
                } else {
                    0.0
                }
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        let (gs, rs) = sparse_normal_equations(&design, &y, n, p);
        for i in 0..p {
            let ci = &design[i * n..(i + 1) * n];
            assert_eq!(rs[i], dot(ci, &y));
            for j in 0..p {
                assert_eq!(gs[i * p + j], dot(ci, &design[j * n..(j + 1) * n]));
            }
        }
    }

    #[test]
    fn hinge_gram_matches_dense() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let x: Vec<f64> = (0..n).map(|_| 100.0 + 20.0 * rng.gen::<f64>()).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let feats = [
            Hinge {
                a: 1.0,
                b: 0.0,
                q: None,
            },
            Hinge {
                a: 0.0,
                b: 1.0,
                q: None,
            },
            Hinge {
                a: -105.0,
                b: 1.0,
                q: Some(105.0),
            },
            Hinge {
                a: -110.0,
                b: 1.0,
                q: Some(110.0),
            },
            Hinge {
                a: 0.0,
                b: 0.0,
                q: None,
            },
        ];
        let eval = |h: &Hinge<f64>, v: f64| match h.q {
            Some(q) if v <= q => 0.0,
            _ => h.a + h.b * v,
        };
        let mut design = Vec::new();
        for wt in [None, Some(&w)] {
            for h in &feats {
                design.extend((0..n).map(|i| eval(h, x[i]) * wt.map_or(1.0, |w| w[i])));
            }
        }
        let (g0, r0) = normal_equations(&design, &y, n, 10);
        let sc = SortedCoordinate::new(&x);
        let (g1, r1) = hinge_normal_equations(&sc, &[(&feats, None), (&feats, Some(&w))], &y);
        for (a, b) in g0.iter().zip(&g1).chain(r0.iter().zip(&r1)) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}
