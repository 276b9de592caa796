//! Dense LU factorization with partial pivoting.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// LU factors of a square matrix, stored in place with the row permutation.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Array2<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factorize(mut a: Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "LU needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (mut p, mut best) = (k, a[[k, k]].abs());
            for i in k + 1..n {
                let v = a[[i, k]].abs();
                if v > best {
                    p = i;
                    best = v;
                }
            }
            if !(best > 1e-300) {
                return Err(Error::Singular {
                    column: k,
                    pivot: best,
                });
            }
            if p != k {
                for j in 0..n {
                    a.swap([k, j], [p, j]);
                }
                perm.swap(k, p);
            }
            let pivot = a[[k, k]];
            for i in k + 1..n {
                let f = a[[i, k]] / pivot;
                a[[i, k]] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        a[[i, j]] -= f * a[[k, j]];
                    }
                }
            }
        }
        Ok(Lu { lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.dim();
        let mut x: Array1<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[[i, j]] * x[j];
            }
            x[i] = s / self.lu[[i, i]];
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.dim();
        // A = P^T L U, so A^T = U^T L^T P.
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[[j, i]] * y[j];
            }
            y[i] = s / self.lu[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.lu[[j, i]] * y[j];
            }
            y[i] = s;
        }
        let mut x = Array1::zeros(n);
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}
