//! Block-diagonal Cholesky factorization of the appeal precision matrix.
//!
//! Each session's columns interact only with each other, so the precision
//! `X'X + I / sigma^2` is block diagonal with one dense block per session.
//! Blocks are factored once and reused for every draw; only the right-hand
//! side changes between iterations.

use std::ops::Range;

use crate::error::{Error, Result};

/// Lower-triangular factor of one dense symmetric positive-definite block,
/// packed row by row.
#[derive(Debug, Clone, PartialEq)]
struct PackedCholesky {
    n: usize,
    lower: Vec<f64>,
}

#[inline]
fn idx(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

impl PackedCholesky {
    /// Factors a matrix given in the same packed lower layout.
    fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        for j in 0..n {
            let mut d = a[idx(j, j)];
            for k in 0..j {
                d -= a[idx(j, k)] * a[idx(j, k)];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SingularSystem);
            }
            let d = d.sqrt();
            a[idx(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[idx(i, j)];
                for k in 0..j {
                    s -= a[idx(i, k)] * a[idx(j, k)];
                }
                a[idx(i, j)] = s / d;
            }
        }
        Ok(Self { n, lower: a })
    }

    /// Solves `L y = b` in place.
    fn forward(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let row = &self.lower[idx(i, 0)..=idx(i, i)];
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Solves `L' x = y` in place.
    fn backward(&self, y: &mut [f64]) {
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in i + 1..self.n {
                s -= self.lower[idx(k, i)] * y[k];
            }
            y[i] = s / self.lower[idx(i, i)];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCholesky {
    blocks: Vec<(Range<usize>, PackedCholesky)>,
    dim: usize,
}

impl BlockCholesky {
    /// `entries(block, i, j)` yields the (i, j) entry, `j <= i`, of each block
    /// in block-local coordinates.
    pub fn factor<F>(ranges: &[Range<usize>], mut entries: F) -> Result<Self>
    where
        F: FnMut(usize, usize, usize) -> f64,
    {
        let mut blocks = Vec::with_capacity(ranges.len());
        let mut dim = 0;
        for (b, range) in ranges.iter().enumerate() {
            let n = range.len();
            let mut packed = Vec::with_capacity(n * (n + 1) / 2);
            for i in 0..n {
                for j in 0..=i {
                    packed.push(entries(b, i, j));
                }
            }
            blocks.push((range.clone(), PackedCholesky::factor(n, packed)?));
            dim = dim.max(range.end);
        }
        Ok(Self { blocks, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Overwrites `rhs` with `Q^{-1} rhs`.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        for (range, chol) in &self.blocks {
            let seg = &mut rhs[range.clone()];
            chol.forward(seg);
            chol.backward(seg);
        }
    }

    /// Overwrites `rhs` with `L^{-T} (L^{-1} rhs + noise)`, a draw from
    /// `N(Q^{-1} rhs, Q^{-1})` when `noise` is standard normal.
    pub fn sample_in_place(&self, rhs: &mut [f64], noise: &[f64]) {
        for (range, chol) in &self.blocks {
            let seg = &mut rhs[range.clone()];
            chol.forward(seg);
            for (x, e) in seg.iter_mut().zip(&noise[range.clone()]) {
                *x += e;
            }
            chol.backward(seg);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spd_block() {
        // [[4, 2], [2, 3]] x = [2, 1]  ->  x = [0.5, 0]
        let ranges = vec![0..2, 2..3];
        let chol = BlockCholesky::factor(&ranges, |b, i, j| match (b, i, j) {
            (0, 0, 0) => 4.0,
            (0, 1, 0) => 2.0,
            (0, 1, 1) => 3.0,
            (1, 0, 0) => 2.0,
            _ => unreachable!(),
        })
        .unwrap();
        let mut rhs = vec![2.0, 1.0, 5.0];
        chol.solve_in_place(&mut rhs);
        assert!((rhs[0] - 0.5).abs() < 1e-15);
        assert!(rhs[1].abs() < 1e-15);
        assert!((rhs[2] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite() {
        let r = BlockCholesky::factor(&[0..2], |_, i, j| if i == j { 1.0 } else { 2.0 });
        assert!(matches!(r, Err(Error::SingularSystem)));
    }
}
