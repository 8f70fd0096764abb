//! Small dense symmetric linear algebra: Cholesky factorisation with a cheap
//! condition estimate and a cyclic Jacobi eigenvalue sweep. Sized for Gram
//! systems of at most a few hundred centers.

use alloc::vec::Vec;

use crate::error::Error;
use crate::math;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix
/// in row-major order, plus a condition estimate from the factor diagonal.
pub struct Cholesky {
    l: Vec<f64>,
    n: usize,
    pub condition_estimate: f64,
}

impl Cholesky {
    pub fn new(a: &[f64], n: usize) -> Result<Self, Error> {
        assert_eq!(a.len(), n * n);
        let mut l = alloc::vec![0.0; n * n];
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::IllConditioned {
                            estimate: f64::INFINITY,
                        });
                    }
                    let d = math::sqrt(s);
                    l[i * n + i] = d;
                    dmin = dmin.min(d);
                    dmax = dmax.max(d);
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        // (max L_ii / min L_ii)^2 bounds the 2-norm condition number from
        // below; adequate as a guard.
        let condition_estimate = (dmax / dmin) * (dmax / dmin);
        Ok(Cholesky {
            l,
            n,
            condition_estimate,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method, ascending.
pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off <= 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + math::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + math::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / math::sqrt(1.0 + t * t);
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
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}
