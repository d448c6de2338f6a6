//! Koopman-operator system identification.
//!
//! Snapshot pairs of a controlled system are lifted onto monomial observables,
//! a finite Koopman matrix is fitted by least squares, its generator is
//! recovered with the principal matrix logarithm, and the generator applied to
//! the state observables yields a polynomial vector field that can be
//! simulated and scored against held-out data.


pub mod basis;
pub mod dataset;
pub mod excitation;
pub mod identification;
pub mod metrics;
pub mod numerics;
pub mod simulator;

pub use basis::{LiftingBasis, MonomialBasis};
pub use dataset::{RawTrial, SnapshotSet, SplitSpec, Trajectory};
pub use excitation::{ExcitationConfig, LookupTable};
pub use identification::{identify, KoopmanModel};
pub use metrics::{EvaluationReport, NormalizationBounds};
pub use numerics::DenseMatrix;
pub use simulator::{InputSignal, OdeConfig, VectorField, VectorFieldSpec};
