//! Dense linear-algebra kernels: SVD pseudoinverse and least squares,
//! matrix exponential and principal matrix logarithm.

mod expm;
mod logm;
mod svd;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expm::matrix_exp;
pub use logm::{eigenvalues, matrix_log};
pub use svd::{lstsq, lstsq_detailed, pseudoinverse, svd, LstsqSolution, SvdResult, DEFAULT_RCOND};

/// Row-major real matrix used for every operator in the pipeline.
pub type DenseMatrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix contains non-finite entries")]
    NonFiniteInput,
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no real principal logarithm: offending eigenvalues {}", format_eigenvalues(.eigenvalues))]
    NonPrincipalBranch { eigenvalues: Vec<Complex<f64>> },
    #[error("{0} failed to converge")]
    ConvergenceFailure(&'static str),
}

pub(crate) fn format_eigenvalues(ev: &[Complex<f64>]) -> String {
    let parts: Vec<String> = ev
        .iter()
        .map(|z| {
            if z.im == 0.0 {
                format!("{:.6e}", z.re)
            } else {
                format!("{:.6e}{:+.6e}i", z.re, z.im)
            }
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

pub(crate) fn ensure_finite(m: &DMatrix<f64>) -> Result<(), NumericsError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFiniteInput)
    }
}

pub(crate) fn ensure_square(m: &DMatrix<f64>) -> Result<(), NumericsError> {
    if m.is_square() {
        Ok(())
    } else {
        Err(NumericsError::NotSquare { rows: m.nrows(), cols: m.ncols() })
    }
}

/// Serialized form of a dense matrix: dimensions plus row-major entries.
///
/// Entries are written with 17 significant digits so that a write/read cycle
/// reproduces every `f64` exactly.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>, NumericsError> {
        if self.data.len() != self.rows * self.cols {
            return Err(NumericsError::DimensionMismatch(format!(
                "{}x{} matrix record holds {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        let m = DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        ensure_finite(&m)?;
        Ok(m)
    }
}

impl Serialize for MatrixRecord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = serializer.serialize_struct("MatrixRecord", 3)?;
        st.serialize_field("rows", &self.rows)?;
        st.serialize_field("cols", &self.cols)?;
        st.serialize_field("data", &PreciseSeq(&self.data))?;
        st.end()
    }
}

/// Formats `v` with 17 significant digits in JSON-compatible notation.
pub fn format_f64_17(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) struct PreciseSeq<'a>(pub &'a [f64]);

impl Serialize for PreciseSeq<'_> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::{Error, SerializeSeq};
        let mut seq = serializer.serialize_seq(Some(self.0.len()))?;
        for &v in self.0 {
            if !v.is_finite() {
                return Err(S::Error::custom("cannot serialize non-finite value"));
            }
            let raw = serde_json::value::RawValue::from_string(format_f64_17(v)).map_err(S::Error::custom)?;
            seq.serialize_element(&raw)?;
        }
        seq.end()
    }
}

/// Frobenius-norm relative difference `||a - b|| / ||b||` (absolute when `b = 0`).
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
