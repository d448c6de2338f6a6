//! Monomial observables of state and input.
//!
//! A [`MonomialBasis`] spans every monomial in `(x_1..x_n, u_1..u_m)` of total
//! degree at most `w`. Monomials are ordered by ascending total degree and,
//! within one degree, by descending lexicographic order of their exponent
//! tuples, so the constant comes first and `x_1..x_n` occupy positions
//! `1..=n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("invalid basis dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch: expected {expected} values for {what}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("state index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
}

/// The surface identification code needs from a set of observables.
///
/// Only monomials are implemented; other families (Fourier, RBF) plug in here.
pub trait LiftingBasis {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Number of observables `N`.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn lift(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>, BasisError>;
    /// `N x n` Jacobian of the lifted vector with respect to the state.
    fn lift_gradient(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>, BasisError>;
    /// Coefficient vector of the observable `f(x, u) = x_i` (1-based `i`).
    fn identity_coefficients(&self, i: usize) -> Result<DVector<f64>, BasisError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialBasis {
    n: usize,
    m: usize,
    w: usize,
    exponents: Vec<Vec<u32>>,
}

/// `C(n + m + w, w)`, the number of monomials in `n + m` variables of degree `<= w`.
pub fn monomial_count(n: usize, m: usize, w: usize) -> usize {
    let d = n + m;
    // C(d + w, w) built incrementally stays integral at each step.
    let mut c: u128 = 1;
    for k in 1..=w as u128 {
        c = c * (d as u128 + k) / k;
    }
    c as usize
}

fn push_degree(vars: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if prefix.len() + 1 == vars {
        prefix.push(degree);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for e in (0..=degree).rev() {
        prefix.push(e);
        push_degree(vars, degree - e, prefix, out);
        prefix.pop();
    }
}

impl MonomialBasis {
    /// All monomials of total degree `<= w` in `n` states and `m` inputs.
    pub fn new(n: usize, m: usize, w: usize) -> Result<Self, BasisError> {
        if n == 0 {
            return Err(BasisError::InvalidDimension("state dimension n must be >= 1".into()));
        }
        if w == 0 {
            return Err(BasisError::InvalidDimension("maximum degree w must be >= 1".into()));
        }
        let vars = n + m;
        let mut exponents = Vec::with_capacity(monomial_count(n, m, w));
        let mut prefix = Vec::with_capacity(vars);
        for degree in 0..=w as u32 {
            push_degree(vars, degree, &mut prefix, &mut exponents);
        }
        Ok(Self { n, m, w, exponents })
    }

    /// Rebuilds a basis from a stored exponent list, checking it matches the
    /// canonical enumeration for `(n, m, w)`.
    pub fn from_exponents(
        n: usize,
        m: usize,
        w: usize,
        exponents: Vec<Vec<u32>>,
    ) -> Result<Self, BasisError> {
        let canonical = Self::new(n, m, w)?;
        if canonical.exponents != exponents {
            return Err(BasisError::InvalidDimension(format!(
                "stored exponents do not match the graded ordering for n={n}, m={m}, w={w}"
            )));
        }
        Ok(canonical)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Maximum total degree.
    pub fn degree(&self) -> usize {
        self.w
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Position of the degree-1 monomial for variable `j` (0-based over `x` then `u`).
    fn linear_position(&self, j: usize) -> usize {
        1 + j
    }

    fn check_point(&self, x: &[f64], u: &[f64]) -> Result<(), BasisError> {
        if x.len() != self.n {
            return Err(BasisError::DimensionMismatch { what: "state", expected: self.n, got: x.len() });
        }
        if u.len() != self.m {
            return Err(BasisError::DimensionMismatch { what: "input", expected: self.m, got: u.len() });
        }
        Ok(())
    }

    /// `powers[j][e] = z_j^e` by repeated multiplication.
    fn power_table(&self, x: &[f64], u: &[f64]) -> Vec<Vec<f64>> {
        x.iter()
            .chain(u.iter())
            .map(|&z| {
                let mut row = Vec::with_capacity(self.w + 1);
                let mut p = 1.0;
                row.push(p);
                for _ in 0..self.w {
                    p *= z;
                    row.push(p);
                }
                row
            })
            .collect()
    }

    /// Writes `psi(x, u)` into `out` without allocating the result.
    pub fn lift_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), BasisError> {
        self.check_point(x, u)?;
        if out.len() != self.exponents.len() {
            return Err(BasisError::DimensionMismatch {
                what: "lift output",
                expected: self.exponents.len(),
                got: out.len(),
            });
        }
        let powers = self.power_table(x, u);
        for (slot, exps) in out.iter_mut().zip(&self.exponents) {
            let mut v = 1.0;
            for (j, &e) in exps.iter().enumerate() {
                if e > 0 {
                    v *= powers[j][e as usize];
                }
            }
            *slot = v;
        }
        Ok(())
    }
}

impl LiftingBasis for MonomialBasis {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn len(&self) -> usize {
        self.exponents.len()
    }

    fn lift(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>, BasisError> {
        let mut out = DVector::zeros(self.exponents.len());
        self.lift_into(x, u, out.as_mut_slice())?;
        Ok(out)
    }

    fn lift_gradient(&self, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>, BasisError> {
        self.check_point(x, u)?;
        let powers = self.power_table(x, u);
        let mut grad = DMatrix::zeros(self.exponents.len(), self.n);
        for (k, exps) in self.exponents.iter().enumerate() {
            for i in 0..self.n {
                let ei = exps[i];
                if ei == 0 {
                    continue;
                }
                let mut v = ei as f64 * powers[i][ei as usize - 1];
                for (j, &e) in exps.iter().enumerate() {
                    if j != i && e > 0 {
                        v *= powers[j][e as usize];
                    }
                }
                grad[(k, i)] = v;
            }
        }
        Ok(grad)
    }

    fn identity_coefficients(&self, i: usize) -> Result<DVector<f64>, BasisError> {
        if i == 0 || i > self.n {
            return Err(BasisError::IndexOutOfRange { index: i, n: self.n });
        }
        let mut c = DVector::zeros(self.exponents.len());
        c[self.linear_position(i - 1)] = 1.0;
        Ok(c)
    }
}
