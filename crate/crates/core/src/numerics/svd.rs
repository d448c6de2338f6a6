use nalgebra::{DMatrix, DVector};

use super::{ensure_finite, NumericsError};

/// Relative singular-value cutoff used when callers do not pick one.
pub const DEFAULT_RCOND: f64 = 1e-12;

/// Thin SVD `M = U diag(s) V^T` with singular values in descending order.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdResult {
    /// Singular values strictly above `rcond * s_max * max(rows, cols)`.
    pub fn rank(&self, rcond: f64) -> usize {
        let cutoff = self.cutoff(rcond);
        self.singular_values.iter().filter(|&&s| s > cutoff).count()
    }

    fn cutoff(&self, rcond: f64) -> f64 {
        let smax = self.singular_values.iter().cloned().fold(0.0, f64::max);
        rcond * smax * self.u.nrows().max(self.v.nrows()) as f64
    }

    /// Reciprocal singular values, truncated to zero below the cutoff.
    fn inverted_values(&self, rcond: f64) -> DVector<f64> {
        let cutoff = self.cutoff(rcond);
        self.singular_values.map(|s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 })
    }

    pub fn condition_number(&self) -> f64 {
        let smax = self.singular_values.iter().cloned().fold(0.0, f64::max);
        let smin = self.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin == 0.0 {
            f64::INFINITY
        } else {
            smax / smin
        }
    }
}

pub fn svd(m: &DMatrix<f64>) -> Result<SvdResult, NumericsError> {
    ensure_finite(m)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        let r = rows.min(cols);
        return Ok(SvdResult {
            u: DMatrix::zeros(rows, r),
            singular_values: DVector::zeros(r),
            v: DMatrix::zeros(cols, r),
        });
    }
    thin_svd(m)
}

fn thin_svd(m: &DMatrix<f64>) -> Result<SvdResult, NumericsError> {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm.thin_svd().map_err(|_| NumericsError::ConvergenceFailure("singular value decomposition"))?;
    let (u, s, v) = (svd.U(), svd.S(), svd.V());
    Ok(SvdResult {
        u: DMatrix::from_fn(rows, k, |i, j| u[(i, j)]),
        singular_values: DVector::from_fn(k, |i, _| s[i]),
        v: DMatrix::from_fn(cols, k, |i, j| v[(i, j)]),
    })
}

/// Moore-Penrose pseudoinverse with relative truncation `rcond`.
pub fn pseudoinverse(m: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>, NumericsError> {
    let dec = svd(m)?;
    let inv = dec.inverted_values(rcond);
    let mut v_scaled = dec.v.clone();
    for (j, mut col) in v_scaled.column_iter_mut().enumerate() {
        col *= inv[j];
    }
    Ok(v_scaled * dec.u.transpose())
}

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub solution: DMatrix<f64>,
    pub rank: usize,
    pub singular_values: DVector<f64>,
}

/// Minimum-norm least-squares solution of `A X = B`.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> Result<DMatrix<f64>, NumericsError> {
    lstsq_detailed(a, b, rcond).map(|s| s.solution)
}

pub fn lstsq_detailed(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> Result<LstsqSolution, NumericsError> {
    if a.nrows() != b.nrows() {
        return Err(NumericsError::DimensionMismatch(format!(
            "lstsq: A has {} rows but B has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    ensure_finite(b)?;
    let dec = svd(a)?;
    let inv = dec.inverted_values(rcond);
    let mut coeffs = dec.u.transpose() * b;
    for (i, mut row) in coeffs.row_iter_mut().enumerate() {
        row *= inv[i];
    }
    Ok(LstsqSolution {
        solution: &dec.v * coeffs,
        rank: dec.rank(rcond),
        singular_values: dec.singular_values,
    })
}
