//! Small dense Cholesky factorization with rank-one update and downdate.
//!
//! Factors are stored row-major in a full `n × n` buffer; only the lower
//! triangle is meaningful. The matrices here are `|C| × |C|` where `|C|` is
//! the number of live concepts, so a simple layout beats a general library
//! call in the sampler's inner loop.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn empty() -> Self {
        Cholesky { n: 0, l: Vec::new() }
    }

    /// Factor a symmetric positive definite matrix given row-major.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix buffer must be n*n");
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix not positive definite at pivot {i} (value {s})"
                        )));
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Cholesky { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// log |A| = 2 Σ log L_ii
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.l[i * self.n + i].ln()).sum::<f64>() * 2.0
    }

    /// Solves `L u = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(b.iter()).map(|(l, x)| l * x).sum();
            b[i] = (b[i] - s) / self.l[i * n + i];
        }
    }

    /// `bᵀ A⁻¹ b` via one triangular solve.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        let mut u = b.to_vec();
        self.forward_solve(&mut u);
        u.iter().map(|x| x * x).sum()
    }

    /// Replace the factor of `A` by the factor of `A + v vᵀ`.
    pub fn update(&mut self, v: &[f64]) {
        let n = self.n;
        let mut w = v.to_vec();
        for k in 0..n {
            let lkk = self.l[k * n + k];
            let r = lkk.hypot(w[k]);
            let c = r / lkk;
            let s = w[k] / lkk;
            self.l[k * n + k] = r;
            for i in k + 1..n {
                let lik = (self.l[i * n + k] + s * w[i]) / c;
                w[i] = c * w[i] - s * lik;
                self.l[i * n + k] = lik;
            }
        }
    }

    /// Replace the factor of `A` by the factor of `A − v vᵀ`.
    ///
    /// Fails when the downdated matrix is not numerically positive definite;
    /// the factor is left unspecified in that case and must be rebuilt.
    pub fn downdate(&mut self, v: &[f64]) -> Result<()> {
        let n = self.n;
        let mut w = v.to_vec();
        for k in 0..n {
            let lkk = self.l[k * n + k];
            let r2 = (lkk - w[k]) * (lkk + w[k]);
            if !(r2 > 0.0) {
                return Err(Error::Numerical(format!(
                    "cholesky downdate lost definiteness at pivot {k}"
                )));
            }
            let r = r2.sqrt();
            let c = r / lkk;
            let s = w[k] / lkk;
            self.l[k * n + k] = r;
            for i in k + 1..n {
                let lik = (self.l[i * n + k] - s * w[i]) / c;
                w[i] = c * w[i] - s * lik;
                self.l[i * n + k] = lik;
            }
        }
        Ok(())
    }
}
