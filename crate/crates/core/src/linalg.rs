//! Small dense vector and matrix helpers over `f64` slices.
//!
//! Matrices are row-major `n × n` slices. Everything here is sized for
//! tabular problems (tens to a few hundred unknowns).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += s * x`
pub fn axpy(y: &mut [f64], s: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// `y = A x` for a row-major `n × n` matrix.
pub fn mat_vec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    debug_assert_eq!(a.len(), n * n);
    a.chunks_exact(n).map(|row| dot(row, x)).collect()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// One step of iterative refinement is applied. Returns the solution and
/// the max-norm residual `‖A x − b‖∞` of the refined solution.
pub fn solve(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = b.len();
    if a.len() != n * n {
        return Err(Error::Input("matrix/vector size mismatch".into()));
    }
    let lu = lu_factor(a, n)?;
    let mut x = lu.solve(b);
    let r = residual(a, &x, b);
    let dx = lu.solve(&r);
    for (xi, di) in x.iter_mut().zip(&dx) {
        *xi += di;
    }
    let res = max_abs(&residual(a, &x, b));
    Ok((x, res))
}

fn residual(a: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = mat_vec(a, x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}

struct Lu {
    n: usize,
    m: Vec<f64>,
    perm: Vec<usize>,
}

fn lu_factor(a: &[f64], n: usize) -> Result<Lu> {
    let mut m = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (piv, big) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if big == 0.0 || !big.is_finite() {
            return Err(Error::Numerical {
                what: "lu factorization (singular pivot)".into(),
                residual: big,
            });
        }
        if piv != col {
            for c in 0..n {
                m.swap(col * n + c, piv * n + c);
            }
            perm.swap(col, piv);
        }
        let p = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / p;
            m[r * n + col] = f;
            if f != 0.0 {
                for c in col + 1..n {
                    m[r * n + c] -= f * m[col * n + c];
                }
            }
        }
    }
    Ok(Lu { n, m, perm })
}

impl Lu {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let mut s = y[r];
            for c in 0..r {
                s -= self.m[r * n + c] * y[c];
            }
            y[r] = s;
        }
        for r in (0..n).rev() {
            let mut s = y[r];
            for c in r + 1..n {
                s -= self.m[r * n + c] * y[c];
            }
            y[r] = s / self.m[r * n + r];
        }
        y
    }
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, sorted
/// ascending.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum();
        if off <= 1e-30 * diag.max(1e-300) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Identity minus `s` times `m` for a row-major square matrix.
pub fn identity_minus(m: &[f64], s: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[r * n + c] = if r == c { 1.0 } else { 0.0 } - s * m[r * n + c];
        }
    }
    out
}

pub fn transpose(m: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        for c in 0..n {
            out[c * n + r] = m[r * n + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_small_system() {
        let a = [4.0, 1.0, 2.0, 3.0];
        let (x, res) = solve(&a, &[1.0, 2.0]).unwrap();
        assert!((x[0] - 0.1).abs() < 1e-15);
        assert!((x[1] - 0.6).abs() < 1e-15);
        assert!(res < 1e-15);
    }

    #[test]
    fn solve_needs_pivoting() {
        let a = [0.0, 1.0, 1.0, 0.0];
        let (x, _) = solve(&a, &[2.0, 3.0]).unwrap();
        assert_eq!(x, vec![3.0, 2.0]);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(matches!(solve(&a, &[1.0, 1.0]), Err(Error::Numerical { .. })));
    }

    #[test]
    fn jacobi_matches_closed_form_2x2() {
        let ev = symmetric_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((ev[0] - 1.0).abs() < 1e-14);
        assert!((ev[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_trace_and_diagonal() {
        let a = [5.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 2.0];
        assert_eq!(symmetric_eigenvalues(&a, 3), vec![-1.0, 2.0, 5.0]);
        let b = [2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0];
        let ev = symmetric_eigenvalues(&b, 3);
        let sum: f64 = ev.iter().sum();
        assert!((sum - 6.0).abs() < 1e-12);
        // 2 - sqrt(2), 2, 2 + sqrt(2)
        assert!((ev[0] - (2.0 - 2f64.sqrt())).abs() < 1e-12);
        assert!((ev[2] - (2.0 + 2f64.sqrt())).abs() < 1e-12);
    }
}
