//! Dense LU, conditioning factor and incremental rank tracking, generic over
//! the scalar field so that exact rational arithmetic can cross-check the
//! floating-point path.

use crate::error::{Error, Result};
use crate::scalar::Field;

/// Incremental Gaussian elimination over a stream of rows.
///
/// Each accepted row is stored fully reduced against the earlier basis rows
/// and in sparse form, so rank updates touch only nonzero entries.
#[derive(Clone, Debug)]
pub struct RankTracker<T: Field> {
    dim: usize,
    basis: Vec<(usize, Vec<(usize, T)>)>,
    scale: f64,
}

impl<T: Field> RankTracker<T> {
    pub fn new(dim: usize) -> Self {
        RankTracker {
            dim,
            basis: Vec::new(),
            scale: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn is_full(&self) -> bool {
        self.basis.len() == self.dim
    }

    /// Reduce `row` against the basis and keep it when it raises the rank.
    pub fn try_add(&mut self, row: &[T]) -> Result<bool> {
        if row.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        for v in row {
            self.scale = self.scale.max(v.magnitude());
        }
        let mut w: Vec<T> = row.to_vec();
        if w.iter().all(|v| v.negligible(self.scale)) {
            return Ok(false);
        }
        for (pivot, entries) in &self.basis {
            let lead = &w[*pivot];
            if lead.negligible(self.scale) {
                continue;
            }
            let pivot_value = entries
                .iter()
                .find(|(c, _)| c == pivot)
                .map(|(_, v)| v.clone())
                .expect("basis row holds its pivot");
            let factor = lead.clone() / pivot_value;
            for (c, v) in entries {
                w[*c] = w[*c].clone() - factor.clone() * v.clone();
            }
            w[*pivot] = T::zero();
        }
        let mut best: Option<(usize, f64)> = None;
        for (c, v) in w.iter().enumerate() {
            if v.negligible(self.scale) {
                continue;
            }
            let m = v.magnitude();
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((c, m));
            }
        }
        let Some((pivot, _)) = best else {
            return Ok(false);
        };
        let entries: Vec<(usize, T)> = w
            .into_iter()
            .enumerate()
            .filter(|(_, v)| !v.negligible(self.scale))
            .collect();
        self.basis.push((pivot, entries));
        Ok(true)
    }
}

/// Rank of a row-major matrix given as a list of rows.
pub fn rank_of<T: Field>(rows: &[Vec<T>], dim: usize) -> Result<usize> {
    let mut tracker = RankTracker::<T>::new(dim);
    for r in rows {
        tracker.try_add(r)?;
        if tracker.is_full() {
            break;
        }
    }
    Ok(tracker.rank())
}

/// LU factorization `P A = L U` with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu<T: Field> {
    n: usize,
    /// Row-major combined factors: strict lower part holds L, upper holds U.
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Field> Lu<T> {
    /// Factor a square row-major matrix.
    pub fn factor(a: &[T], n: usize) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                got: a.len(),
            });
        }
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, v| m.max(v.magnitude()));
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].magnitude();
            for i in k + 1..n {
                let m = lu[i * n + k].magnitude();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if lu[p * n + k].negligible(scale) {
                return Err(Error::Singular);
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k].clone();
            let (top, bottom) = lu.split_at_mut((k + 1) * n);
            let row_k = &top[k * n..k * n + n];
            for i in 0..n - k - 1 {
                let row_i = &mut bottom[i * n..i * n + n];
                if row_i[k].is_zero() {
                    continue;
                }
                let f = row_i[k].clone() / pivot.clone();
                row_i[k] = f.clone();
                for (a, b) in row_i[k + 1..].iter_mut().zip(&row_k[k + 1..]) {
                    if !b.is_zero() {
                        *a = a.clone() - f.clone() * b.clone();
                    }
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p].clone()).collect();
        self.forward(&mut x, 0);
        self.backward(&mut x);
        Ok(x)
    }

    fn forward(&self, x: &mut [T], start: usize) {
        let n = self.n;
        for i in start..n {
            let row = &self.lu[i * n..i * n + i];
            let mut acc = x[i].clone();
            for (l, v) in row[start..].iter().zip(&x[start..i]) {
                if !v.is_zero() && !l.is_zero() {
                    acc = acc - l.clone() * v.clone();
                }
            }
            x[i] = acc;
        }
    }

    fn backward(&self, x: &mut [T]) {
        let n = self.n;
        for i in (0..n).rev() {
            let row = &self.lu[i * n..i * n + n];
            let mut acc = x[i].clone();
            for (u, v) in row[i + 1..].iter().zip(&x[i + 1..]) {
                if !v.is_zero() && !u.is_zero() {
                    acc = acc - u.clone() * v.clone();
                }
            }
            x[i] = acc / row[i].clone();
        }
    }

    /// Largest absolute row sum of `A^{-1}`, accumulated column by column.
    pub fn inverse_inf_norm(&self) -> f64 {
        let n = self.n;
        let mut row_sums = vec![0.0f64; n];
        let mut pos = vec![0usize; n];
        for (i, &p) in self.perm.iter().enumerate() {
            pos[p] = i;
        }
        for j in 0..n {
            let mut x = vec![T::zero(); n];
            let start = pos[j];
            x[start] = T::one();
            self.forward(&mut x, start);
            self.backward(&mut x);
            for (s, v) in row_sums.iter_mut().zip(&x) {
                *s += v.magnitude();
            }
        }
        row_sums.into_iter().fold(0.0, f64::max)
    }
}

/// Conditioning factor `||C^{-1}||_{inf->inf}` of a square row-major matrix.
pub fn conditioning_factor<T: Field>(c: &[T], n: usize) -> Result<f64> {
    Ok(Lu::factor(c, n)?.inverse_inf_norm())
}

/// Largest absolute row sum of a row-major matrix.
pub fn inf_norm<T: Field>(c: &[T], n: usize) -> f64 {
    c.chunks(n.max(1))
        .map(|r| r.iter().map(|v| v.magnitude()).sum::<f64>())
        .fold(0.0, f64::max)
}
