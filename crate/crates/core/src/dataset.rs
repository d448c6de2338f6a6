//! Time-series ingestion, preprocessing, train/validation splitting and
//! snapshot-pair construction.
//!
//! CSV files carry a header `t,x1..xn,u1..um` with one sample per row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error at line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{path}: timestamps not strictly increasing at line {line}")]
    Monotonicity { path: PathBuf, line: u64 },
    #[error("signal is empty")]
    EmptySignal,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("segments use different sampling periods ({0} s vs {1} s)")]
    MixedSamplingPeriod(f64, f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Measured trial with arbitrary (strictly increasing) timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrial {
    pub name: String,
    pub timestamps: Vec<f64>,
    /// `T x n`, one row per sample.
    pub states: DMatrix<f64>,
    /// `T x m`.
    pub inputs: DMatrix<f64>,
}

impl RawTrial {
    pub fn new(name: impl Into<String>, timestamps: Vec<f64>, states: DMatrix<f64>, inputs: DMatrix<f64>) -> Result<Self, DatasetError> {
        if states.nrows() != timestamps.len() || inputs.nrows() != timestamps.len() {
            return Err(DatasetError::DimensionMismatch(format!(
                "{} timestamps, {} state rows, {} input rows",
                timestamps.len(),
                states.nrows(),
                inputs.nrows()
            )));
        }
        if let Some(k) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DatasetError::Monotonicity { path: PathBuf::new(), line: k as u64 + 3 });
        }
        Ok(Self { name: name.into(), timestamps, states, inputs })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Mean spacing between timestamps.
    pub fn mean_period(&self) -> Option<f64> {
        let n = self.timestamps.len();
        (n >= 2).then(|| (self.timestamps[n - 1] - self.timestamps[0]) / (n - 1) as f64)
    }
}

/// Uniformly sampled trajectory on the grid `t0 + k * ts`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub ts: f64,
    pub t0: f64,
    /// `T x n`.
    pub states: DMatrix<f64>,
    /// `T x m`.
    pub inputs: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(ts: f64, t0: f64, states: DMatrix<f64>, inputs: DMatrix<f64>) -> Result<Self, DatasetError> {
        if !(ts.is_finite() && ts > 0.0) {
            return Err(DatasetError::InvalidParameter(format!("sampling period must be > 0, got {ts}")));
        }
        if states.nrows() != inputs.nrows() {
            return Err(DatasetError::DimensionMismatch(format!(
                "{} state rows vs {} input rows",
                states.nrows(),
                inputs.nrows()
            )));
        }
        Ok(Self { ts, t0, states, inputs })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn n(&self) -> usize {
        self.states.ncols()
    }

    pub fn m(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.ts
    }

    /// Spanned time, `(T - 1) * ts`.
    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.ts
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        self.states.row(k).iter().copied().collect()
    }

    pub fn input(&self, k: usize) -> Vec<f64> {
        self.inputs.row(k).iter().copied().collect()
    }

    /// Samples `start..end`, keeping absolute time.
    pub fn slice(&self, start: usize, end: usize) -> Trajectory {
        let len = end - start;
        Trajectory {
            ts: self.ts,
            t0: self.time(start),
            states: self.states.rows(start, len).into_owned(),
            inputs: self.inputs.rows(start, len).into_owned(),
        }
    }

    pub fn to_raw(&self, name: impl Into<String>) -> RawTrial {
        RawTrial {
            name: name.into(),
            timestamps: (0..self.len()).map(|k| self.time(k)).collect(),
            states: self.states.clone(),
            inputs: self.inputs.clone(),
        }
    }
}

/// Snapshot pairs `{(x_k, u_k), (y_k, u_k)}`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub ts: f64,
}

impl SnapshotSet {
    pub fn new(x: DMatrix<f64>, u: DMatrix<f64>, y: DMatrix<f64>, ts: f64) -> Result<Self, DatasetError> {
        if x.nrows() != u.nrows() || x.nrows() != y.nrows() || x.ncols() != y.ncols() {
            return Err(DatasetError::DimensionMismatch(format!(
                "x {:?}, u {:?}, y {:?}",
                x.shape(),
                u.shape(),
                y.shape()
            )));
        }
        if x.nrows() == 0 {
            return Err(DatasetError::InsufficientData("snapshot set is empty".into()));
        }
        Ok(Self { x, u, y, ts })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.u.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub validation_count: usize,
    /// Seconds per validation window.
    pub validation_duration: f64,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn parse_column_name(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || rest.starts_with('0') || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

pub fn ingest_csv(path: impl AsRef<Path>) -> Result<RawTrial, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    read_csv(file, path, name)
}

/// Parses CSV text from any reader; `path` is only used in error messages.
pub fn read_csv<R: Read>(reader: R, path: &Path, name: String) -> Result<RawTrial, DatasetError> {
    let schema = |message: String| DatasetError::Schema { path: path.to_path_buf(), message };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DatasetError::Parse { path: path.to_path_buf(), line: 1, message: e.to_string() })?
        .clone();

    let mut t_col = None;
    let mut x_cols: Vec<(usize, usize)> = Vec::new();
    let mut u_cols: Vec<(usize, usize)> = Vec::new();
    for (col, h) in headers.iter().enumerate() {
        if h == "t" {
            if t_col.replace(col).is_some() {
                return Err(schema("duplicate column 't'".into()));
            }
        } else if let Some(i) = parse_column_name(h, 'x') {
            x_cols.push((i, col));
        } else if let Some(i) = parse_column_name(h, 'u') {
            u_cols.push((i, col));
        } else {
            return Err(schema(format!("unexpected column '{h}'")));
        }
    }
    let t_col = t_col.ok_or_else(|| schema("missing column 't'".into()))?;
    for (cols, prefix) in [(&mut x_cols, 'x'), (&mut u_cols, 'u')] {
        cols.sort_unstable();
        for (expected, &(i, _)) in (1..).zip(cols.iter()) {
            if i != expected {
                return Err(schema(format!("missing column '{prefix}{expected}'")));
            }
        }
    }
    if x_cols.is_empty() {
        return Err(schema("missing column 'x1'".into()));
    }

    let (n, m) = (x_cols.len(), u_cols.len());
    let mut timestamps = Vec::new();
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let cell = |col: usize| -> Result<f64, DatasetError> {
            let raw = rec.get(col).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("non-numeric cell '{raw}' in column '{}'", &headers[col]),
                })
        };
        let t = cell(t_col)?;
        if let Some(&prev) = timestamps.last() {
            if t <= prev {
                return Err(DatasetError::Monotonicity { path: path.to_path_buf(), line });
            }
        }
        timestamps.push(t);
        for &(_, c) in &x_cols {
            states.push(cell(c)?);
        }
        for &(_, c) in &u_cols {
            inputs.push(cell(c)?);
        }
    }
    let rows = timestamps.len();
    Ok(RawTrial {
        name,
        timestamps,
        states: DMatrix::from_row_slice(rows, n, &states),
        inputs: DMatrix::from_row_slice(rows, m, &inputs),
    })
}

/// Writes a trial in the `t,x1..xn,u1..um` schema. Values use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_csv<W: Write>(trial: &RawTrial, writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let n = trial.states.ncols();
    let m = trial.inputs.ncols();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("u{i}")));
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(1 + n + m);
    for (k, t) in trial.timestamps.iter().enumerate() {
        row.clear();
        row.push(t.to_string());
        row.extend(trial.states.row(k).iter().map(|v| v.to_string()));
        row.extend(trial.inputs.row(k).iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn export_csv(trial: &RawTrial, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_csv(trial, std::io::BufWriter::new(file)).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Centered moving average of each column.
///
/// The window holds `round(window / ts)` samples, bumped to the next odd
/// count. Near the ends it is clipped to the available samples.
pub fn moving_average(signal: &DMatrix<f64>, window: f64, ts: f64) -> Result<DMatrix<f64>, DatasetError> {
    if !(window > 0.0 && ts > 0.0 && window.is_finite() && ts.is_finite()) {
        return Err(DatasetError::InvalidParameter(format!("window {window} s and ts {ts} s must be > 0")));
    }
    if signal.nrows() == 0 {
        return Err(DatasetError::EmptySignal);
    }
    let mut len = (window / ts).round().max(1.0) as usize;
    if len.is_multiple_of(2) {
        len += 1;
    }
    Ok(centered_mean(signal, len / 2))
}

fn centered_mean(signal: &DMatrix<f64>, half: usize) -> DMatrix<f64> {
    let rows = signal.nrows();
    DMatrix::from_fn(rows, signal.ncols(), |k, j| {
        let lo = k.saturating_sub(half);
        let hi = (k + half).min(rows - 1);
        let col = signal.column(j);
        let sum: f64 = (lo..=hi).map(|i| col[i]).sum();
        sum / (hi - lo + 1) as f64
    })
}

/// Linear interpolation onto `t0 + k * ts` with `t0` the first timestamp.
pub fn resample_uniform(trial: &RawTrial, ts: f64) -> Result<Trajectory, DatasetError> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(DatasetError::InvalidParameter(format!("sampling period must be > 0, got {ts}")));
    }
    if trial.len() < 2 {
        return Err(DatasetError::InsufficientData(format!("trial '{}' has {} samples", trial.name, trial.len())));
    }
    let t0 = trial.timestamps[0];
    let span = trial.timestamps[trial.len() - 1] - t0;
    let count = (span / ts + 1e-9).floor() as usize + 1;
    if count < 2 {
        return Err(DatasetError::InsufficientData(format!(
            "trial '{}' spans {span} s, shorter than one period of {ts} s",
            trial.name
        )));
    }
    let (n, m) = (trial.states.ncols(), trial.inputs.ncols());
    let mut states = DMatrix::zeros(count, n);
    let mut inputs = DMatrix::zeros(count, m);
    let mut seg = 0usize;
    for k in 0..count {
        let t = (t0 + k as f64 * ts).min(trial.timestamps[trial.len() - 1]);
        while seg + 2 < trial.len() && trial.timestamps[seg + 1] < t {
            seg += 1;
        }
        let (ta, tb) = (trial.timestamps[seg], trial.timestamps[seg + 1]);
        let alpha = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let lerp = |a: f64, b: f64| if alpha == 0.0 { a } else if alpha == 1.0 { b } else { a + alpha * (b - a) };
        for j in 0..n {
            states[(k, j)] = lerp(trial.states[(seg, j)], trial.states[(seg + 1, j)]);
        }
        for j in 0..m {
            inputs[(k, j)] = lerp(trial.inputs[(seg, j)], trial.inputs[(seg + 1, j)]);
        }
    }
    Trajectory::new(ts, t0, states, inputs)
}

/// Central-difference time derivative of each column (one-sided at the ends).
pub fn central_difference(signal: &DMatrix<f64>, ts: f64) -> Result<DMatrix<f64>, DatasetError> {
    let rows = signal.nrows();
    if rows < 2 {
        return Err(DatasetError::InsufficientData("need at least 2 samples to differentiate".into()));
    }
    Ok(DMatrix::from_fn(rows, signal.ncols(), |k, j| {
        let (a, b) = (k.saturating_sub(1), (k + 1).min(rows - 1));
        (signal[(b, j)] - signal[(a, j)]) / ((b - a) as f64 * ts)
    }))
}

/// Preprocessing knobs applied to every trial before splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Output sampling period in seconds.
    #[serde(default = "default_ts")]
    pub ts: f64,
    /// Moving-average window applied to raw states before resampling;
    /// `null` disables it.
    #[serde(default = "default_filter_window")]
    pub filter_window: Option<f64>,
    /// 1-based state columns holding velocities; they get a second moving
    /// average of `filter_window` after resampling.
    #[serde(default)]
    pub velocity_columns: Vec<usize>,
    /// Append finite-difference velocities of every state (then filter them)
    /// for datasets recorded without velocity columns.
    #[serde(default)]
    pub derive_velocities: bool,
}

fn default_ts() -> f64 {
    0.02
}

fn default_filter_window() -> Option<f64> {
    Some(1.0)
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { ts: default_ts(), filter_window: default_filter_window(), velocity_columns: Vec::new(), derive_velocities: false }
    }
}

/// Filter raw states, resample, then apply the velocity filter.
pub fn preprocess(trial: &RawTrial, cfg: &PreprocessConfig) -> Result<Trajectory, DatasetError> {
    let n = trial.states.ncols();
    if let Some(&bad) = cfg.velocity_columns.iter().find(|&&c| c == 0 || c > n) {
        return Err(DatasetError::InvalidParameter(format!("velocity column {bad} out of range 1..={n}")));
    }
    let mut filtered = trial.clone();
    if let Some(window) = cfg.filter_window {
        let period = trial
            .mean_period()
            .ok_or_else(|| DatasetError::InsufficientData(format!("trial '{}' has fewer than 2 samples", trial.name)))?;
        filtered.states = moving_average(&trial.states, window, period)?;
    }
    let mut traj = resample_uniform(&filtered, cfg.ts)?;
    if let Some(window) = cfg.filter_window {
        if !cfg.velocity_columns.is_empty() {
            let smooth = moving_average(&traj.states, window, cfg.ts)?;
            for &c in &cfg.velocity_columns {
                traj.states.set_column(c - 1, &smooth.column(c - 1));
            }
        }
    }
    if cfg.derive_velocities {
        let mut vel = central_difference(&traj.states, cfg.ts)?;
        if let Some(window) = cfg.filter_window {
            vel = moving_average(&vel, window, cfg.ts)?;
        }
        let rows = traj.len();
        let mut states = DMatrix::zeros(rows, 2 * n);
        states.columns_mut(0, n).copy_from(&traj.states);
        states.columns_mut(n, n).copy_from(&vel);
        traj.states = states;
    }
    Ok(traj)
}

/// Adds i.i.d. Gaussian noise of standard deviation `std` to every state entry.
pub fn add_state_noise(traj: &mut Trajectory, std: f64, seed: u64) -> Result<(), DatasetError> {
    if std == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, std).map_err(|e| DatasetError::InvalidParameter(format!("noise std {std}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..traj.states.nrows() {
        for j in 0..traj.states.ncols() {
            traj.states[(k, j)] += normal.sample(&mut rng);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Splitting and snapshots
// ---------------------------------------------------------------------------

const MAX_SPLIT_DRAWS: usize = 1000;

/// Samples in one validation window.
pub fn window_samples(duration: f64, ts: f64) -> usize {
    (duration / ts).round() as usize + 1
}

/// Carves `validation_count` non-overlapping windows at seeded random offsets;
/// the remaining runs of samples become training segments.
pub fn split_validation(traj: &Trajectory, spec: &SplitSpec) -> Result<(Vec<Trajectory>, Vec<Trajectory>), DatasetError> {
    let total = traj.len();
    if spec.validation_count == 0 {
        let train = if total >= 2 { vec![traj.clone()] } else { Vec::new() };
        return Ok((train, Vec::new()));
    }
    if !(spec.validation_duration > 0.0) {
        return Err(DatasetError::InvalidParameter("validation duration must be > 0".into()));
    }
    let len = window_samples(spec.validation_duration, traj.ts);
    let needed = spec.validation_count * len;
    if needed > total {
        return Err(DatasetError::InfeasibleSplit(format!(
            "{} windows of {} samples need {needed} samples, trajectory has {total}",
            spec.validation_count, len
        )));
    }
    let slack = total - needed;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut offsets = Vec::with_capacity(spec.validation_count);
    let mut accepted = false;
    for _ in 0..MAX_SPLIT_DRAWS {
        offsets.clear();
        offsets.extend((0..spec.validation_count).map(|_| rng.random_range(0..=slack)));
        offsets.sort_unstable();
        // A single leftover sample could not form a training segment.
        let mut gaps = Vec::with_capacity(offsets.len() + 1);
        gaps.push(offsets[0]);
        gaps.extend(offsets.windows(2).map(|w| w[1] - w[0]));
        gaps.push(slack - offsets[offsets.len() - 1]);
        if gaps.iter().all(|&g| g != 1) {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(DatasetError::InfeasibleSplit(format!(
            "could not place windows without leaving a 1-sample gap (slack {slack})"
        )));
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut cursor = 0usize;
    for (j, &off) in offsets.iter().enumerate() {
        let start = off + j * len;
        if start > cursor {
            train.push(traj.slice(cursor, start));
        }
        validation.push(traj.slice(start, start + len));
        cursor = start + len;
    }
    if cursor < total {
        train.push(traj.slice(cursor, total));
    }
    Ok((train, validation))
}

/// Snapshot pairs from consecutive samples of each segment; no pair spans two segments.
pub fn build_snapshots(segments: &[Trajectory]) -> Result<SnapshotSet, DatasetError> {
    let first = segments.first().ok_or_else(|| DatasetError::InsufficientData("no segments".into()))?;
    let (ts, n, m) = (first.ts, first.n(), first.m());
    for seg in segments {
        if (seg.ts - ts).abs() > 1e-9 * ts {
            return Err(DatasetError::MixedSamplingPeriod(ts, seg.ts));
        }
        if seg.n() != n || seg.m() != m {
            return Err(DatasetError::DimensionMismatch(format!(
                "segment has n={}, m={}; expected n={n}, m={m}",
                seg.n(),
                seg.m()
            )));
        }
    }
    let k: usize = segments.iter().map(|s| s.len().saturating_sub(1)).sum();
    let mut x = DMatrix::zeros(k, n);
    let mut u = DMatrix::zeros(k, m);
    let mut y = DMatrix::zeros(k, n);
    let mut row = 0;
    for seg in segments.iter().filter(|s| s.len() >= 2) {
        let pairs = seg.len() - 1;
        x.rows_mut(row, pairs).copy_from(&seg.states.rows(0, pairs));
        u.rows_mut(row, pairs).copy_from(&seg.inputs.rows(0, pairs));
        y.rows_mut(row, pairs).copy_from(&seg.states.rows(1, pairs));
        row += pairs;
    }
    SnapshotSet::new(x, u, y, ts)
}
