//! Small dense linear algebra: Cholesky factorization and a cyclic Jacobi
//! eigensolver for symmetric matrices. Problem sizes here are tiny (cytogram
//! dimension, covariate count, hidden width), so hand-rolled generic kernels
//! beat pulling in a LAPACK binding.

use crate::error::MoeError;
use crate::num::Real;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<R> {
    l: Array2<R>,
}

impl<R: Real> Cholesky<R> {
    /// Factors `a = L L'`. Fails if `a` is not positive definite.
    pub fn factor(a: &ArrayView2<R>) -> Result<Self, MoeError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(MoeError::dim("Cholesky requires a square matrix"));
        }
        let mut l = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                if i == j {
                    if s <= R::zero() || !s.is_finite() {
                        return Err(MoeError::Solver(format!(
                            "matrix not positive definite (pivot {i} = {s})"
                        )));
                    }
                    l[[i, i]] = s.sqrt();
                } else {
                    l[[i, j]] = s / l[[j, j]];
                }
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// log det(a) = 2 sum_i log L_ii
    pub fn log_det(&self) -> R {
        let mut s = R::zero();
        for i in 0..self.dim() {
            s += self.l[[i, i]].ln();
        }
        s + s
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_inplace(&self, b: &mut [R]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[[i, k]] * b[k];
            }
            b[i] = s / self.l[[i, i]];
        }
    }

    /// Solves `a x = b` via the two triangular solves.
    pub fn solve_vec(&self, b: &ArrayView1<R>) -> Array1<R> {
        let n = self.dim();
        let mut x: Vec<R> = b.iter().copied().collect();
        self.solve_lower_inplace(&mut x);
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[[k, i]] * x[k];
            }
            x[i] = s / self.l[[i, i]];
        }
        Array1::from_vec(x)
    }

    /// `||L^{-1} v||^2`, the quadratic form `v' a^{-1} v`.
    pub fn mahalanobis_sq(&self, v: &ArrayView1<R>) -> R {
        let mut w: Vec<R> = v.iter().copied().collect();
        self.solve_lower_inplace(&mut w);
        let mut s = R::zero();
        for &x in &w {
            s += x * x;
        }
        s
    }

    /// Dense inverse of the factored matrix.
    pub fn inverse(&self) -> Array2<R> {
        let n = self.dim();
        let mut inv = Array2::zeros((n, n));
        for j in 0..n {
            let mut e = Array1::zeros(n);
            e[j] = R::one();
            let col = self.solve_vec(&e.view());
            for i in 0..n {
                inv[[i, j]] = col[i];
            }
        }
        // symmetrize to scrub round-off
        for i in 0..n {
            for j in 0..i {
                let v = (inv[[i, j]] + inv[[j, i]]) * R::of(0.5);
                inv[[i, j]] = v;
                inv[[j, i]] = v;
            }
        }
        inv
    }
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns `(values, vectors)` with eigenvalues sorted in descending order
/// and eigenvectors in the corresponding columns.
pub fn sym_eigen<R: Real>(a: &ArrayView2<R>) -> (Array1<R>, Array2<R>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigen requires a square matrix");
    let mut m = a.to_owned();
    let mut v: Array2<R> = Array2::eye(n);
    let tol = R::epsilon() * R::of(1e-2);
    for _sweep in 0..100 {
        let mut off = R::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off.max(m[[i, j]].abs());
            }
        }
        let scale = {
            let mut d = R::zero();
            for i in 0..n {
                d = d.max(m[[i, i]].abs());
            }
            d.max(R::one())
        };
        if off <= tol * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq.abs() <= tol * scale {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (R::of(2.0) * apq);
                let t = {
                    let s = if theta >= R::zero() { R::one() } else { -R::one() };
                    s / (theta.abs() + (theta * theta + R::one()).sqrt())
                };
                let c = (t * t + R::one()).sqrt().recip();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[[j, j]]
            .partial_cmp(&m[[i, i]])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for (slot, &idx) in order.iter().enumerate() {
        values[slot] = m[[idx, idx]];
        for k in 0..n {
            vectors[[k, slot]] = v[[k, idx]];
        }
    }
    (values, vectors)
}
