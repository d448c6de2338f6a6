//! Prediction-error metrics, per-state aggregation and comparison tables.
//!
//! NRMSE is the RMSE normalized by the measured range of each state, in
//! percent. Errors from several validation segments are pooled as squared-error
//! sums before the square root.

use std::fmt::Write as _;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Trajectory;
use crate::identification::KoopmanModel;
use crate::simulator::{simulate_model, OdeConfig, SimulationError, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("degenerate bounds for state {state}: min {min}, max {max}")]
    DegenerateBounds { state: usize, min: f64, max: f64 },
    #[error("reports disagree on state count: {0:?}")]
    InconsistentStateCounts(Vec<usize>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("every validation segment diverged ({0} segments)")]
    AllSegmentsDiverged(usize),
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// NRMSE in percent for one state with range `[min, max]`.
pub fn nrmse(y: &[f64], yhat: &[f64], min: f64, max: f64) -> Result<f64, MetricsError> {
    let range = checked_range(0, min, max)?;
    Ok(rmse(y, yhat)? / range * 100.0)
}

fn checked_range(state: usize, min: f64, max: f64) -> Result<f64, MetricsError> {
    if min.is_finite() && max.is_finite() && max > min {
        Ok(max - min)
    } else {
        Err(MetricsError::DegenerateBounds { state, min, max })
    }
}

/// Per-state extrema used to normalize errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationBounds {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self, MetricsError> {
        if min.len() != max.len() {
            return Err(MetricsError::LengthMismatch(min.len(), max.len()));
        }
        if min.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        for (i, (&lo, &hi)) in min.iter().zip(&max).enumerate() {
            checked_range(i, lo, hi)?;
        }
        Ok(Self { min, max })
    }

    /// Extrema of the measured states across all trajectories.
    pub fn from_trajectories<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>) -> Result<Self, MetricsError> {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for t in trajs {
            if min.is_empty() {
                min = vec![f64::INFINITY; t.n()];
                max = vec![f64::NEG_INFINITY; t.n()];
            } else if t.n() != min.len() {
                return Err(MetricsError::DimensionMismatch(format!("trajectories with {} and {} states", min.len(), t.n())));
            }
            for (j, col) in t.states.column_iter().enumerate() {
                min[j] = min[j].min(col.min());
                max[j] = max[j].max(col.max());
            }
        }
        Self::new(min, max)
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn range(&self, state: usize) -> f64 {
        self.max[state] - self.min[state]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateError {
    /// In state units; absent when only NRMSE is known.
    pub rmse: Option<f64>,
    /// Percent.
    pub nrmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergedSegment {
    pub segment: usize,
    pub time: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub per_state: Vec<StateError>,
    pub avg_nrmse: f64,
    /// Sample standard deviation across states; 0 when undefined.
    pub std_nrmse: f64,
    /// False for a single state, where the sample deviation is undefined.
    #[serde(default = "default_true")]
    pub std_defined: bool,
    pub segments: usize,
    #[serde(default)]
    pub diverged: Vec<DivergedSegment>,
}

fn default_true() -> bool {
    true
}

impl EvaluationReport {
    pub fn nrmse_values(&self) -> Vec<f64> {
        self.per_state.iter().map(|s| s.nrmse).collect()
    }

    /// Recomputes avg/std from `per_state` and checks them against the stored values.
    pub fn check_consistency(&self, tol: f64) -> bool {
        let (avg, std, _) = mean_and_sample_std(&self.nrmse_values());
        (avg - self.avg_nrmse).abs() <= tol && (std - self.std_nrmse).abs() <= tol
    }
}

fn mean_and_sample_std(v: &[f64]) -> (f64, f64, bool) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0, false);
    }
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt(), true)
}

pub fn aggregate_report(model: &str, per_state_nrmse: &[f64], per_state_rmse: Option<&[f64]>) -> Result<EvaluationReport, MetricsError> {
    if per_state_nrmse.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if let Some(r) = per_state_rmse {
        if r.len() != per_state_nrmse.len() {
            return Err(MetricsError::LengthMismatch(per_state_nrmse.len(), r.len()));
        }
    }
    let (avg, std, defined) = mean_and_sample_std(per_state_nrmse);
    let per_state = per_state_nrmse
        .iter()
        .enumerate()
        .map(|(i, &nrmse)| StateError { rmse: per_state_rmse.map(|r| r[i]), nrmse })
        .collect();
    Ok(EvaluationReport {
        model: model.to_string(),
        per_state,
        avg_nrmse: avg,
        std_nrmse: std,
        std_defined: defined,
        segments: 0,
        diverged: Vec::new(),
    })
}

/// Simulated trajectory for one validation segment, or why it failed.
#[derive(Debug, Clone)]
pub enum SegmentPrediction {
    Simulated(Trajectory),
    Diverged(SimulationError),
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    pub predictions: Vec<SegmentPrediction>,
}

/// Simulates the model on every validation segment from its first measured
/// state under the recorded inputs and pools the errors per state.
pub fn evaluate_model(
    model: &KoopmanModel,
    name: &str,
    validation: &[Trajectory],
    bounds: &NormalizationBounds,
    cfg: &OdeConfig,
) -> Result<Evaluation, MetricsError> {
    let n = model.state_dim();
    if validation.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if bounds.len() != n {
        return Err(MetricsError::DimensionMismatch(format!("bounds cover {} states, model has {n}", bounds.len())));
    }
    for (i, seg) in validation.iter().enumerate() {
        if seg.n() != n || seg.m() != model.input_dim() {
            return Err(MetricsError::DimensionMismatch(format!(
                "segment {i} has n={}, m={}; model has n={n}, m={}",
                seg.n(),
                seg.m(),
                model.input_dim()
            )));
        }
        if (seg.ts - model.ts()).abs() > 1e-9 * model.ts() {
            return Err(MetricsError::DimensionMismatch(format!("segment {i} has Ts={}, model has Ts={}", seg.ts, model.ts())));
        }
    }

    let mut sse = vec![0.0; n];
    let mut count = 0usize;
    let mut predictions = Vec::with_capacity(validation.len());
    let mut diverged = Vec::new();
    for (i, seg) in validation.iter().enumerate() {
        match simulate_model(model, &seg.state(0), &seg.inputs, cfg) {
            Ok(pred) => {
                accumulate(&mut sse, &seg.states, &pred.states);
                count += seg.len();
                predictions.push(SegmentPrediction::Simulated(pred));
            }
            Err(e) => {
                warn!("{name}: validation segment {i} excluded: {e}");
                let time = match &e {
                    SimulationError::NonFiniteState { time } => Some(*time),
                    _ => None,
                };
                diverged.push(DivergedSegment { segment: i, time, message: e.to_string() });
                predictions.push(SegmentPrediction::Diverged(e));
            }
        }
    }
    if count == 0 {
        return Err(MetricsError::AllSegmentsDiverged(validation.len()));
    }
    let rmse: Vec<f64> = sse.iter().map(|s| (s / count as f64).sqrt()).collect();
    let nrmse: Vec<f64> = rmse.iter().enumerate().map(|(j, r)| r / bounds.range(j) * 100.0).collect();
    let mut report = aggregate_report(name, &nrmse, Some(&rmse))?;
    report.segments = validation.len() - diverged.len();
    report.diverged = diverged;
    Ok(Evaluation { report, predictions })
}

fn accumulate(sse: &mut [f64], truth: &DMatrix<f64>, pred: &DMatrix<f64>) {
    for (j, s) in sse.iter_mut().enumerate() {
        *s += truth.column(j).iter().zip(pred.column(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub nrmse: Vec<f64>,
    pub avg: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub states: usize,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    /// Fixed-width table at one decimal.
    pub fn render(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.model.chars().count()).max().unwrap_or(0).max("Model".len());
        let col_w = 9;
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}", "Model");
        for j in 1..=self.states {
            let _ = write!(out, " {:>col_w$}", format!("x{j}"));
        }
        let _ = writeln!(out, " {:>col_w$} {:>col_w$}", "Avg.", "Std. Dev.");
        for r in &self.rows {
            let _ = write!(out, "{:<name_w$}", r.model);
            for v in &r.nrmse {
                let _ = write!(out, " {v:>col_w$.1}");
            }
            let _ = writeln!(out, " {:>col_w$.1} {:>col_w$.1}", r.avg, r.std);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

/// Rows sorted by average NRMSE, ties broken by model name.
pub fn compare(reports: &[EvaluationReport]) -> Result<Comparison, MetricsError> {
    let Some(first) = reports.first() else {
        return Err(MetricsError::EmptyInput);
    };
    let states = first.per_state.len();
    if reports.iter().any(|r| r.per_state.len() != states) {
        return Err(MetricsError::InconsistentStateCounts(reports.iter().map(|r| r.per_state.len()).collect()));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow { model: r.model.clone(), nrmse: r.nrmse_values(), avg: r.avg_nrmse, std: r.std_nrmse })
        .collect();
    rows.sort_by(|a, b| a.avg.total_cmp(&b.avg).then_with(|| a.model.cmp(&b.model)));
    Ok(Comparison { states, rows })
}
