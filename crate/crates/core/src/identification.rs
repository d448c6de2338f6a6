//! Koopman-based identification: least-squares Koopman matrix, its
//! generator through the principal logarithm, and the polynomial vector field
//! read off the identity observables.
//!
//! Matrices act on coefficient vectors of observables. With `Psi_x` holding
//! lifted states row by row, the Koopman matrix satisfies
//! `Psi_x * U ~= Psi_y`, so column `j` of `U` represents `psi_j` advanced by
//! one sampling period. The vector field is `F(x, u) = W^T psi(x, u)`.

use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, LiftingBasis, MonomialBasis};
use crate::dataset::SnapshotSet;
use crate::numerics::{self, format_eigenvalues, MatrixRecord, NumericsError, PreciseSeq};
use crate::simulator::VectorField;

/// Bound on `||exp(Ts A) - U||_F / ||U||_F` for an accepted model.
pub const ROUND_TRIP_TOL: f64 = 1e-8;
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentificationError {
    #[error("snapshot set is empty")]
    EmptySnapshotSet,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("koopman regression failed: {0}")]
    Regression(NumericsError),
    #[error(
        "insufficient data: the Koopman matrix has zero or negative real eigenvalues {}, so its principal \
         logarithm does not exist; more system measurements can be taken to resolve this",
        format_eigenvalues(.eigenvalues)
    )]
    InsufficientData { eigenvalues: Vec<Complex<f64>> },
    #[error("generator computation failed: {0}")]
    Generator(NumericsError),
    #[error("invalid sampling period {0}")]
    InvalidPeriod(f64),
    #[error("model invariant violated: {0}")]
    InvariantViolation(String),
    #[error("model file: {0}")]
    ModelFile(String),
}

impl IdentificationError {
    /// Pipeline stage the error originates from.
    pub fn stage(&self) -> &'static str {
        match self {
            IdentificationError::EmptySnapshotSet
            | IdentificationError::DimensionMismatch(_)
            | IdentificationError::Basis(_)
            | IdentificationError::Regression(_) => "fit_koopman",
            IdentificationError::InsufficientData { .. }
            | IdentificationError::Generator(_)
            | IdentificationError::InvalidPeriod(_) => "compute_generator",
            IdentificationError::InvariantViolation(_) => "validate",
            IdentificationError::ModelFile(_) => "model_file",
        }
    }
}

/// Lifted data matrices `(Psi_x, Psi_y)`, each `K x N`.
pub fn lifted_matrices(snapshots: &SnapshotSet, basis: &MonomialBasis) -> Result<(DMatrix<f64>, DMatrix<f64>), IdentificationError> {
    if snapshots.is_empty() {
        return Err(IdentificationError::EmptySnapshotSet);
    }
    if snapshots.n() != basis.n() || snapshots.m() != basis.m() {
        return Err(IdentificationError::DimensionMismatch(format!(
            "snapshots have n={}, m={}; basis has n={}, m={}",
            snapshots.n(),
            snapshots.m(),
            basis.n(),
            basis.m()
        )));
    }
    let (k, big_n) = (snapshots.len(), basis.len());
    let mut psi_x = DMatrix::zeros(k, big_n);
    let mut psi_y = DMatrix::zeros(k, big_n);
    let mut row = vec![0.0; big_n];
    let mut x = vec![0.0; basis.n()];
    let mut y = vec![0.0; basis.n()];
    let mut u = vec![0.0; basis.m()];
    for r in 0..k {
        for j in 0..basis.n() {
            x[j] = snapshots.x[(r, j)];
            y[j] = snapshots.y[(r, j)];
        }
        for j in 0..basis.m() {
            u[j] = snapshots.u[(r, j)];
        }
        basis.lift_into(&x, &u, &mut row)?;
        psi_x.row_mut(r).copy_from_slice(&row);
        basis.lift_into(&y, &u, &mut row)?;
        psi_y.row_mut(r).copy_from_slice(&row);
    }
    Ok((psi_x, psi_y))
}

#[derive(Debug, Clone)]
pub struct KoopmanFit {
    /// `N x N` approximate Koopman matrix.
    pub koopman: DMatrix<f64>,
    /// `||Psi_x U - Psi_y||_F`.
    pub residual: f64,
    pub rank: usize,
    pub condition_number: f64,
    pub snapshots: usize,
}

pub fn fit_koopman(snapshots: &SnapshotSet, basis: &MonomialBasis, rcond: f64) -> Result<KoopmanFit, IdentificationError> {
    let (psi_x, psi_y) = lifted_matrices(snapshots, basis)?;
    let sol = numerics::lstsq_detailed(&psi_x, &psi_y, rcond).map_err(IdentificationError::Regression)?;
    let residual = (&psi_x * &sol.solution - &psi_y).norm();
    let s = &sol.singular_values;
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    Ok(KoopmanFit {
        koopman: sol.solution,
        residual,
        rank: sol.rank,
        condition_number: if smin > 0.0 { smax / smin } else { f64::INFINITY },
        snapshots: snapshots.len(),
    })
}

/// `A = log(U) / ts` with the principal logarithm.
pub fn compute_generator(koopman: &DMatrix<f64>, ts: f64) -> Result<DMatrix<f64>, IdentificationError> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(IdentificationError::InvalidPeriod(ts));
    }
    match numerics::matrix_log(koopman) {
        Ok(log) => Ok(log / ts),
        Err(NumericsError::NonPrincipalBranch { eigenvalues }) => Err(IdentificationError::InsufficientData { eigenvalues }),
        Err(e) => Err(IdentificationError::Generator(e)),
    }
}

/// `N x n` matrix whose column `i` is `A c_i`, with `c_i` the coefficients of `x_i`.
pub fn extract_vector_field<B: LiftingBasis>(generator: &DMatrix<f64>, basis: &B) -> Result<DMatrix<f64>, IdentificationError> {
    let big_n = basis.len();
    if generator.shape() != (big_n, big_n) {
        return Err(IdentificationError::DimensionMismatch(format!(
            "generator is {}x{}, basis has {big_n} observables",
            generator.nrows(),
            generator.ncols()
        )));
    }
    let mut field = DMatrix::zeros(big_n, basis.state_dim());
    for i in 0..basis.state_dim() {
        let c = basis.identity_coefficients(i + 1)?;
        field.set_column(i, &(generator * c));
    }
    Ok(field)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseField {
    pub value: Vec<f64>,
    /// The state Jacobian of the lift had rank `< n`; `value` is the
    /// minimum-norm solution.
    pub rank_deficient: bool,
}

/// Least-squares `F` solving `A^T psi(x, u) = (d psi / dx) F` at one point.
pub fn evaluate_field_pointwise<B: LiftingBasis>(
    generator: &DMatrix<f64>,
    basis: &B,
    x: &[f64],
    u: &[f64],
    rcond: f64,
) -> Result<PointwiseField, IdentificationError> {
    let big_n = basis.len();
    if generator.shape() != (big_n, big_n) {
        return Err(IdentificationError::DimensionMismatch(format!(
            "generator is {}x{}, basis has {big_n} observables",
            generator.nrows(),
            generator.ncols()
        )));
    }
    let psi = basis.lift(x, u)?;
    let jac = basis.lift_gradient(x, u)?;
    let rhs = DMatrix::from_column_slice(big_n, 1, (generator.transpose() * psi).as_slice());
    let sol = numerics::lstsq_detailed(&jac, &rhs, rcond).map_err(IdentificationError::Regression)?;
    Ok(PointwiseField {
        value: sol.solution.column(0).iter().copied().collect(),
        rank_deficient: sol.rank < basis.state_dim(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelMeta {
    /// Snapshot pairs used in the fit.
    pub k: usize,
    pub residual: f64,
    pub rank: usize,
    pub condition_number: f64,
    /// Frobenius norm of the generator columns belonging to observables that
    /// do not depend on the state (constant and input-only monomials). These
    /// should vanish because inputs are held constant along flows.
    pub input_observable_norm: f64,
    pub seed: Option<u64>,
    /// Creation time, seconds since the Unix epoch.
    pub created: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    basis: MonomialBasis,
    ts: f64,
    koopman: DMatrix<f64>,
    generator: DMatrix<f64>,
    field: DMatrix<f64>,
    pub meta: ModelMeta,
}

impl KoopmanModel {
    /// Assembles a model and checks every invariant.
    pub fn new(
        basis: MonomialBasis,
        ts: f64,
        koopman: DMatrix<f64>,
        generator: DMatrix<f64>,
        field: DMatrix<f64>,
        meta: ModelMeta,
    ) -> Result<Self, IdentificationError> {
        let model = Self { basis, ts, koopman, generator, field, meta };
        model.validate()?;
        Ok(model)
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    /// Koopman matrix `U`.
    pub fn koopman(&self) -> &DMatrix<f64> {
        &self.koopman
    }

    /// Generator `A`.
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// Vector-field coefficients `W`.
    pub fn field(&self) -> &DMatrix<f64> {
        &self.field
    }

    /// `||exp(ts A) - U||_F / ||U||_F`.
    pub fn round_trip_error(&self) -> Result<f64, IdentificationError> {
        let e = numerics::matrix_exp(&(&self.generator * self.ts)).map_err(IdentificationError::Generator)?;
        Ok(numerics::relative_frobenius(&e, &self.koopman))
    }

    pub fn validate(&self) -> Result<(), IdentificationError> {
        let big_n = self.basis.len();
        let n = self.basis.n();
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(IdentificationError::InvalidPeriod(self.ts));
        }
        for (name, mat, shape) in [
            ("U", &self.koopman, (big_n, big_n)),
            ("A", &self.generator, (big_n, big_n)),
            ("W", &self.field, (big_n, n)),
        ] {
            if mat.shape() != shape {
                return Err(IdentificationError::InvariantViolation(format!(
                    "{name} is {}x{}, expected {}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    shape.0,
                    shape.1
                )));
            }
            if !mat.iter().all(|v| v.is_finite()) {
                return Err(IdentificationError::InvariantViolation(format!("{name} has non-finite entries")));
            }
        }
        let expected = extract_vector_field(&self.generator, &self.basis)?;
        let scale = self.generator.amax().max(1.0);
        if (&expected - &self.field).amax() > 1e-12 * scale {
            return Err(IdentificationError::InvariantViolation("W columns differ from A applied to the identity observables".into()));
        }
        let rt = self.round_trip_error()?;
        if rt > ROUND_TRIP_TOL {
            return Err(IdentificationError::InvariantViolation(format!(
                "exp(Ts A) differs from U by {rt:.3e} (relative), tolerance {ROUND_TRIP_TOL:e}"
            )));
        }
        Ok(())
    }

    /// `F(x, u) = W^T psi(x, u)`.
    pub fn field_at(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, IdentificationError> {
        let psi = self.basis.lift(x, u)?;
        Ok((self.field.transpose() * psi).iter().copied().collect())
    }

    /// Coefficients of `F_i` (0-based `i`) as `(exponents, coefficient)` pairs
    /// with magnitude above `threshold`.
    pub fn field_terms(&self, i: usize, threshold: f64) -> Vec<(&[u32], f64)> {
        self.basis
            .exponents()
            .iter()
            .zip(self.field.column(i).iter())
            .filter(|(_, c)| c.abs() > threshold)
            .map(|(e, &c)| (e.as_slice(), c))
            .collect()
    }
}

impl VectorField for KoopmanModel {
    fn state_dim(&self) -> usize {
        self.basis.n()
    }

    fn input_dim(&self) -> usize {
        self.basis.m()
    }

    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let mut psi = vec![0.0; self.basis.len()];
        if self.basis.lift_into(x, u, &mut psi).is_err() {
            dx.fill(f64::NAN);
            return;
        }
        for (i, d) in dx.iter_mut().enumerate() {
            *d = self.field.column(i).iter().zip(&psi).map(|(w, p)| w * p).sum();
        }
    }
}

fn input_observable_norm(generator: &DMatrix<f64>, basis: &MonomialBasis) -> f64 {
    let n = basis.n();
    basis
        .exponents()
        .iter()
        .enumerate()
        .filter(|(_, e)| e[..n].iter().all(|&d| d == 0))
        .map(|(j, _)| generator.column(j).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Regression, logarithm and vector-field extraction in one call.
pub fn identify(snapshots: &SnapshotSet, basis: &MonomialBasis, rcond: f64) -> Result<KoopmanModel, IdentificationError> {
    let fit = fit_koopman(snapshots, basis, rcond)?;
    let generator = compute_generator(&fit.koopman, snapshots.ts)?;
    let field = extract_vector_field(&generator, basis)?;
    let meta = ModelMeta {
        k: fit.snapshots,
        residual: fit.residual,
        rank: fit.rank,
        condition_number: fit.condition_number,
        input_observable_norm: input_observable_norm(&generator, basis),
        seed: None,
        created: None,
    };
    KoopmanModel::new(basis.clone(), snapshots.ts, fit.koopman, generator, field, meta)
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

struct Precise(f64);

impl Serialize for Precise {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PreciseSeq(std::slice::from_ref(&self.0)).serialize_scalar(serializer)
    }
}

impl PreciseSeq<'_> {
    fn serialize_scalar<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::Error;
        let v = self.0[0];
        if !v.is_finite() {
            return Err(S::Error::custom("cannot serialize non-finite value"));
        }
        serde_json::value::RawValue::from_string(numerics::format_f64_17(v))
            .map_err(S::Error::custom)?
            .serialize(serializer)
    }
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    format_version: u32,
    n: usize,
    m: usize,
    w: usize,
    ts: Precise,
    basis: BasisRecordOut<'a>,
    matrices: MatricesRecord,
    meta: MetaRecordOut,
}

#[derive(Serialize)]
struct BasisRecordOut<'a> {
    exponents: &'a [Vec<u32>],
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct MatricesRecord {
    U: MatrixRecord,
    A: MatrixRecord,
    W: MatrixRecord,
}

#[derive(Serialize)]
struct MetaRecordOut {
    k: usize,
    residual: Precise,
    rank: usize,
    condition_number: Option<Precise>,
    input_observable_norm: Precise,
    seed: Option<u64>,
    created: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFileIn {
    format_version: u32,
    n: usize,
    m: usize,
    w: usize,
    ts: f64,
    basis: BasisRecordIn,
    matrices: MatricesRecord,
    meta: MetaRecordIn,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisRecordIn {
    exponents: Vec<Vec<u32>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaRecordIn {
    k: usize,
    residual: f64,
    rank: usize,
    #[serde(default)]
    condition_number: Option<f64>,
    #[serde(default)]
    input_observable_norm: f64,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    created: Option<u64>,
}

impl KoopmanModel {
    pub fn to_json(&self) -> Result<String, IdentificationError> {
        let meta = &self.meta;
        let out = ModelFileOut {
            format_version: MODEL_FORMAT_VERSION,
            n: self.basis.n(),
            m: self.basis.m(),
            w: self.basis.degree(),
            ts: Precise(self.ts),
            basis: BasisRecordOut { exponents: self.basis.exponents() },
            matrices: MatricesRecord {
                U: MatrixRecord::from_matrix(&self.koopman),
                A: MatrixRecord::from_matrix(&self.generator),
                W: MatrixRecord::from_matrix(&self.field),
            },
            meta: MetaRecordOut {
                k: meta.k,
                residual: Precise(meta.residual),
                rank: meta.rank,
                condition_number: meta.condition_number.is_finite().then_some(Precise(meta.condition_number)),
                input_observable_norm: Precise(meta.input_observable_norm),
                seed: meta.seed,
                created: meta.created,
            },
        };
        serde_json::to_string_pretty(&out).map_err(|e| IdentificationError::ModelFile(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, IdentificationError> {
        let raw: ModelFileIn = serde_json::from_str(text).map_err(|e| IdentificationError::ModelFile(e.to_string()))?;
        if raw.format_version != MODEL_FORMAT_VERSION {
            return Err(IdentificationError::ModelFile(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                raw.format_version
            )));
        }
        let basis = MonomialBasis::from_exponents(raw.n, raw.m, raw.w, raw.basis.exponents)?;
        let to = |r: &MatrixRecord| r.to_matrix().map_err(|e| IdentificationError::ModelFile(e.to_string()));
        let meta = ModelMeta {
            k: raw.meta.k,
            residual: raw.meta.residual,
            rank: raw.meta.rank,
            condition_number: raw.meta.condition_number.unwrap_or(f64::INFINITY),
            input_observable_norm: raw.meta.input_observable_norm,
            seed: raw.meta.seed,
            created: raw.meta.created,
        };
        Self::new(basis, raw.ts, to(&raw.matrices.U)?, to(&raw.matrices.A)?, to(&raw.matrices.W)?, meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IdentificationError> {
        let path = path.as_ref();
        let text = self.to_json()?;
        std::fs::write(path, text + "\n").map_err(|e| IdentificationError::ModelFile(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IdentificationError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IdentificationError::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            IdentificationError::ModelFile(msg) => IdentificationError::ModelFile(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Eigenvalues of the Koopman matrix, for diagnostics.
pub fn koopman_eigenvalues(model: &KoopmanModel) -> Result<Vec<Complex<f64>>, IdentificationError> {
    numerics::eigenvalues(&model.koopman).map_err(IdentificationError::Generator)
}

/// Lifts one point and returns it as a column vector; convenience for callers
/// that only hold a model.
pub fn lift_point(model: &KoopmanModel, x: &[f64], u: &[f64]) -> Result<DVector<f64>, IdentificationError> {
    Ok(model.basis.lift(x, u)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_snapshots, Trajectory};
    use crate::excitation::{self, ExcitationConfig};
    use crate::numerics::DEFAULT_RCOND;
    use crate::simulator::{integrate, FnField, InputSignal, OdeConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN_HALF: f64 = -std::f64::consts::LN_2;

    fn decay_snapshots() -> SnapshotSet {
        SnapshotSet::new(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.5]),
            DMatrix::zeros(2, 0),
            DMatrix::from_column_slice(2, 1, &[0.5, 0.25]),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn decay_fit_generator_and_field() {
        let basis = MonomialBasis::new(1, 0, 1).unwrap();
        let fit = fit_koopman(&decay_snapshots(), &basis, DEFAULT_RCOND).unwrap();
        let expected_u = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.5]);
        assert!((&fit.koopman - &expected_u).amax() < 1e-14);
        assert_eq!(fit.rank, 2);
        assert!(fit.residual < 1e-14);

        let a = compute_generator(&fit.koopman, 1.0).unwrap();
        assert!((a[(1, 1)] - LN_HALF).abs() < 1e-12);
        assert!(a[(0, 0)].abs() < 1e-12 && a[(0, 1)].abs() < 1e-12 && a[(1, 0)].abs() < 1e-12);

        let w = extract_vector_field(&a, &basis).unwrap();
        assert!(w[(0, 0)].abs() < 1e-12);
        assert!((w[(1, 0)] - LN_HALF).abs() < 1e-12);

        let p = evaluate_field_pointwise(&a, &basis, &[2.0], &[], DEFAULT_RCOND).unwrap();
        assert!((p.value[0] - 2.0 * LN_HALF).abs() < 1e-12);
        assert!(!p.rank_deficient);
    }

    #[test]
    fn identify_decay_end_to_end() {
        let basis = MonomialBasis::new(1, 0, 1).unwrap();
        let model = identify(&decay_snapshots(), &basis, DEFAULT_RCOND).unwrap();
        assert!((model.field()[(1, 0)] - LN_HALF).abs() < 1e-12);
        assert!(model.round_trip_error().unwrap() <= ROUND_TRIP_TOL);
        assert_eq!(model.meta.k, 2);
    }

    #[test]
    fn identity_map_gives_zero_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(40, 2, |_, _| rng.random_range(-1.0..1.0));
        let u = DMatrix::from_fn(40, 1, |_, _| rng.random_range(-1.0..1.0));
        let s = SnapshotSet::new(x.clone(), u, x, 0.1).unwrap();
        let basis = MonomialBasis::new(2, 1, 2).unwrap();
        let model = identify(&s, &basis, DEFAULT_RCOND).unwrap();
        assert!((model.koopman() - DMatrix::identity(10, 10)).amax() < 1e-10);
        assert!(model.generator().amax() < 1e-8);
        assert!(model.field().amax() < 1e-8);
    }

    #[test]
    fn generator_examples() {
        assert!(compute_generator(&DMatrix::identity(3, 3), 0.5).unwrap().amax() < 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[-0.2, 0.0, 0.0, 0.9]);
        match compute_generator(&bad, 0.1) {
            Err(IdentificationError::InsufficientData { eigenvalues }) => {
                assert_eq!(eigenvalues.len(), 1);
                assert!((eigenvalues[0].re + 0.2).abs() < 1e-12);
            }
            other => panic!("expected InsufficientData, got {other:?}"),
        }
        let msg = compute_generator(&bad, 0.1).unwrap_err().to_string();
        assert!(msg.contains("more system measurements can be taken"), "{msg}");
        assert!(matches!(compute_generator(&DMatrix::identity(2, 2), 0.0), Err(IdentificationError::InvalidPeriod(_))));
    }

    #[test]
    fn zero_generator_gives_zero_field() {
        let basis = MonomialBasis::new(2, 1, 3).unwrap();
        let a = DMatrix::zeros(basis.len(), basis.len());
        assert_eq!(extract_vector_field(&a, &basis).unwrap(), DMatrix::zeros(basis.len(), 2));
        let p = evaluate_field_pointwise(&a, &basis, &[0.3, -0.2], &[1.0], DEFAULT_RCOND).unwrap();
        assert!(p.value.iter().all(|v| *v == 0.0));
        assert!(extract_vector_field(&DMatrix::zeros(3, 3), &basis).is_err());
    }

    #[test]
    fn fit_rejects_mismatched_basis() {
        let basis = MonomialBasis::new(2, 0, 1).unwrap();
        assert!(matches!(fit_koopman(&decay_snapshots(), &basis, DEFAULT_RCOND), Err(IdentificationError::DimensionMismatch(_))));
    }

    /// `x' = -x + u` sampled under ZOH excitation.
    fn first_order_data(ts: f64, seconds: f64) -> SnapshotSet {
        let table = excitation::build_lookup(5, 1, 200, -1.0, 1.0).unwrap();
        let cfg = ExcitationConfig::new(0.7, -1.0, 1.0);
        let count = (seconds / ts).round() as usize + 1;
        let samples = excitation::sample_grid(&table, &cfg, ts, count).unwrap();
        let f = FnField::new(1, 1, |x: &[f64], u: &[f64], dx: &mut [f64]| dx[0] = -x[0] + u[0]);
        let traj: Trajectory = integrate(&f, &[0.5], &InputSignal::Zoh { samples, ts }, seconds, &OdeConfig { step: 1e-3 }, ts).unwrap();
        build_snapshots(&[traj]).unwrap()
    }

    #[test]
    fn first_order_system_is_recovered() {
        let s = first_order_data(0.01, 30.0);
        let basis = MonomialBasis::new(1, 1, 2).unwrap();
        let model = identify(&s, &basis, DEFAULT_RCOND).unwrap();
        let w = model.field().column(0);
        // Order: 1, x, u, x^2, xu, u^2.
        let truth = [0.0, -1.0, 1.0, 0.0, 0.0, 0.0];
        for (k, t) in truth.iter().enumerate() {
            assert!((w[k] - t).abs() <= 1e-4, "coefficient {k}: {}", w[k]);
        }
    }

    #[test]
    fn one_step_predictions_match_on_linear_data() {
        let s = first_order_data(0.01, 10.0);
        let basis = MonomialBasis::new(1, 1, 1).unwrap();
        let fit = fit_koopman(&s, &basis, DEFAULT_RCOND).unwrap();
        let (psi_x, psi_y) = lifted_matrices(&s, &basis).unwrap();
        assert!((psi_x * &fit.koopman - psi_y).amax() <= 1e-8);
    }

    #[test]
    fn pointwise_agrees_with_field_on_invariant_span() {
        let s = first_order_data(0.01, 30.0);
        let basis = MonomialBasis::new(1, 1, 2).unwrap();
        let model = identify(&s, &basis, DEFAULT_RCOND).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let x = [rng.random_range(-1.0..1.0)];
            let u = [rng.random_range(-1.0..1.0)];
            let p = evaluate_field_pointwise(model.generator(), model.basis(), &x, &u, DEFAULT_RCOND).unwrap();
            let f = model.field_at(&x, &u).unwrap();
            assert!((p.value[0] - f[0]).abs() <= 1e-6);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let s = first_order_data(0.01, 10.0);
        let basis = MonomialBasis::new(1, 1, 2).unwrap();
        let mut model = identify(&s, &basis, DEFAULT_RCOND).unwrap();
        model.meta.seed = Some(17);
        model.meta.created = Some(1_700_000_000);
        let text = model.to_json().unwrap();
        let back = KoopmanModel::from_json(&text).unwrap();
        assert_eq!(back.koopman(), model.koopman());
        assert_eq!(back.generator(), model.generator());
        assert_eq!(back.field(), model.field());
        assert_eq!(back.ts(), model.ts());
        assert_eq!(back.meta, model.meta);

        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["w"], 2);
        assert_eq!(v["matrices"]["U"]["rows"], 6);
        assert_eq!(v["basis"]["exponents"][2], serde_json::json!([0, 1]));
    }

    #[test]
    fn model_file_validation_rejects_tampering() {
        let basis = MonomialBasis::new(1, 0, 1).unwrap();
        let model = identify(&decay_snapshots(), &basis, DEFAULT_RCOND).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        v["matrices"]["U"]["data"][3] = serde_json::json!(0.75);
        let err = KoopmanModel::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, IdentificationError::InvariantViolation(_)), "{err:?}");

        let mut v: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        v["format_version"] = serde_json::json!(9);
        assert!(matches!(KoopmanModel::from_json(&v.to_string()), Err(IdentificationError::ModelFile(_))));

        let mut v: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(KoopmanModel::from_json(&v.to_string()).is_err());
    }
}
