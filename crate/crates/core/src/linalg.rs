//! Banded LU without pivoting.
//!
//! Every system assembled by the solver has a positive definite symmetric
//! part (mass plus diffusion), so all leading principal minors are
//! nonsingular and elimination without row exchanges is well defined and
//! keeps the band.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("zero pivot at row {0}")]
    ZeroPivot(usize),
    #[error("iterative refinement stalled at relative residual {residual:e} (history {history:?})")]
    NoConvergence { residual: f64, history: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    /// Row-major band storage: entry `(i, j)` at `i * (2bw+1) + (j + bw - i)`.
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.bw, "({i}, {j}) outside band {}", self.bw);
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, yi) in y.iter_mut().enumerate() {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw + 1).min(self.n);
            let row = &self.data[i * (2 * self.bw + 1)..];
            let mut s = 0.0;
            for j in lo..hi {
                s += row[j + self.bw - i] * x[j];
            }
            *yi = s;
        }
        y
    }

    pub fn factor(&self) -> Result<BandLu, LinalgError> {
        let mut lu = self.data.clone();
        let (n, bw) = (self.n, self.bw);
        let w = 2 * bw + 1;
        for k in 0..n {
            let pivot = lu[k * w + bw];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(LinalgError::ZeroPivot(k));
            }
            let hi = (k + bw + 1).min(n);
            for i in k + 1..hi {
                let ik = i * w + (k + bw - i);
                let l = lu[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                lu[ik] = l;
                for j in k + 1..hi {
                    let kj = lu[k * w + (j + bw - k)];
                    lu[i * w + (j + bw - i)] -= l * kj;
                }
            }
        }
        Ok(BandLu { matrix: self.clone(), lu })
    }
}

/// LU factors of a [`BandMatrix`], together with the original matrix for refinement.
#[derive(Debug, Clone)]
pub struct BandLu {
    matrix: BandMatrix,
    lu: Vec<f64>,
}

impl BandLu {
    pub fn matrix(&self) -> &BandMatrix {
        &self.matrix
    }

    /// One forward/backward substitution.
    pub fn solve_once(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.matrix.n, self.matrix.bw);
        let w = 2 * bw + 1;
        let mut x = b.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = x[i];
            for j in lo..i {
                s -= self.lu[i * w + (j + bw - i)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw + 1).min(n);
            let mut s = x[i];
            for j in i + 1..hi {
                s -= self.lu[i * w + (j + bw - i)] * x[j];
            }
            x[i] = s / self.lu[i * w + bw];
        }
        x
    }

    /// Solves to a relative residual of at most `rtol` using iterative refinement.
    pub fn solve(&self, b: &[f64], rtol: f64) -> Result<Vec<f64>, LinalgError> {
        let bnorm = norm(b);
        let mut x = self.solve_once(b);
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut history = Vec::new();
        for _ in 0..8 {
            let ax = self.matrix.matvec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rel = norm(&r) / bnorm;
            history.push(rel);
            if rel <= rtol {
                return Ok(x);
            }
            let dx = self.solve_once(&r);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += d;
            }
        }
        let residual = *history.last().unwrap_or(&f64::NAN);
        Err(LinalgError::NoConvergence { residual, history })
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_band(n: usize, bw: usize, seed: u64) -> BandMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = BandMatrix::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                if i != j {
                    // symmetric part dominated by the diagonal, skew part arbitrary
                    m.add(i, j, rng.random_range(-1.0..1.0));
                }
            }
            m.add(i, i, 4.0 * bw as f64 + rng.random_range(0.0..1.0));
        }
        m
    }

    #[test]
    fn band_solve_matches_dense() {
        let (n, bw) = (40, 5);
        let m = random_band(n, bw, 7);
        let dense = DMatrix::from_fn(n, n, |i, j| m.get(i, j));
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = m.factor().unwrap().solve(&b, 1e-14).unwrap();
        let xd = dense.lu().solve(&DVector::from_vec(b)).unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matvec_respects_band() {
        let mut m = BandMatrix::zeros(3, 1);
        m.add(0, 0, 2.0);
        m.add(0, 1, -1.0);
        m.add(1, 0, 3.0);
        m.add(2, 2, 5.0);
        assert_eq!(m.matvec(&[1.0, 1.0, 1.0]), vec![1.0, 3.0, 5.0]);
        assert_eq!(m.get(0, 2), 0.0);
    }

    #[test]
    fn zero_pivot_reported() {
        let m = BandMatrix::zeros(2, 1);
        assert_eq!(m.factor().unwrap_err(), LinalgError::ZeroPivot(0));
    }
}
