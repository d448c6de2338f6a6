//! Fixed-step RK4 integration of ground-truth systems and identified models.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Trajectory;
use crate::excitation::{self, ExcitationConfig, ExcitationError, LookupTable};
use crate::identification::KoopmanModel;

/// States larger than this in magnitude count as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("unknown system '{0}' (expected one of: linear2d, duffing, vanderpol)")]
    UnknownSystem(String),
    #[error("system '{name}' takes {expected} parameters, got {got}")]
    BadParamCount { name: String, expected: usize, got: usize },
    #[error("state diverged at t = {time} s")]
    NonFiniteState { time: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid integration setup: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Excitation(#[from] ExcitationError),
}

/// Right-hand side `dx/dt = F(x, u)`.
pub trait VectorField {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
}

/// Ground-truth benchmark systems (all with a single input channel).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinSystem {
    /// `x1' = x2`, `x2' = a x1 + b x2 + u`.
    Linear2d { a: f64, b: f64 },
    /// `x1' = x2`, `x2' = -alpha x1 - beta x1^3 - delta x2 + u`.
    Duffing { alpha: f64, beta: f64, delta: f64 },
    /// `x1' = x2`, `x2' = mu (1 - x1^2) x2 - x1 + u`.
    VanDerPol { mu: f64 },
}

impl BuiltinSystem {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinSystem::Linear2d { .. } => "linear2d",
            BuiltinSystem::Duffing { .. } => "duffing",
            BuiltinSystem::VanDerPol { .. } => "vanderpol",
        }
    }
}

impl VectorField for BuiltinSystem {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = match *self {
            BuiltinSystem::Linear2d { a, b } => a * x[0] + b * x[1] + u[0],
            BuiltinSystem::Duffing { alpha, beta, delta } => -alpha * x[0] - beta * x[0] * x[0] * x[0] - delta * x[1] + u[0],
            BuiltinSystem::VanDerPol { mu } => mu * (1.0 - x[0] * x[0]) * x[1] - x[0] + u[0],
        };
    }
}

#[derive(Debug, Clone)]
pub enum VectorFieldSpec {
    Builtin(BuiltinSystem),
    Koopman(Box<KoopmanModel>),
}

impl VectorField for VectorFieldSpec {
    fn state_dim(&self) -> usize {
        match self {
            VectorFieldSpec::Builtin(s) => s.state_dim(),
            VectorFieldSpec::Koopman(m) => m.state_dim(),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            VectorFieldSpec::Builtin(s) => s.input_dim(),
            VectorFieldSpec::Koopman(m) => m.input_dim(),
        }
    }

    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        match self {
            VectorFieldSpec::Builtin(s) => s.eval(x, u, dx),
            VectorFieldSpec::Koopman(m) => m.eval(x, u, dx),
        }
    }
}

/// Adapts a closure into a [`VectorField`].
pub struct FnField<F> {
    n: usize,
    m: usize,
    f: F,
}

impl<F: Fn(&[f64], &[f64], &mut [f64])> FnField<F> {
    pub fn new(n: usize, m: usize, f: F) -> Self {
        Self { n, m, f }
    }
}

impl<F: Fn(&[f64], &[f64], &mut [f64])> VectorField for FnField<F> {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.m
    }

    fn eval(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        (self.f)(x, u, dx)
    }
}

/// Looks up a builtin system; an empty `params` list selects the defaults.
pub fn builtin_field(name: &str, params: &[f64]) -> Result<VectorFieldSpec, SimulationError> {
    let (defaults, build): (&[f64], fn(&[f64]) -> BuiltinSystem) = match name {
        "linear2d" => (&[-2.0, -0.4], |p| BuiltinSystem::Linear2d { a: p[0], b: p[1] }),
        "duffing" => (&[1.0, 1.0, 0.5], |p| BuiltinSystem::Duffing { alpha: p[0], beta: p[1], delta: p[2] }),
        "vanderpol" => (&[1.0], |p| BuiltinSystem::VanDerPol { mu: p[0] }),
        other => return Err(SimulationError::UnknownSystem(other.to_string())),
    };
    let params = if params.is_empty() { defaults } else { params };
    if params.len() != defaults.len() {
        return Err(SimulationError::BadParamCount { name: name.to_string(), expected: defaults.len(), got: params.len() });
    }
    Ok(VectorFieldSpec::Builtin(build(params)))
}

#[derive(Debug, Clone)]
pub enum InputSignal {
    /// Row `k` holds the input applied on `[k ts, (k+1) ts)`.
    Zoh { samples: DMatrix<f64>, ts: f64 },
    Excitation { table: LookupTable, cfg: ExcitationConfig },
    Constant(Vec<f64>),
}

impl InputSignal {
    fn channels(&self) -> usize {
        match self {
            InputSignal::Zoh { samples, .. } => samples.ncols(),
            InputSignal::Excitation { table, .. } => table.channels(),
            InputSignal::Constant(u) => u.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    /// RK4 step in seconds; must divide the output period.
    pub step: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self { step: 1e-3 }
    }
}

/// Number of RK4 steps per output period.
pub fn substeps(cfg: &OdeConfig, ts_out: f64) -> Result<usize, SimulationError> {
    if !(cfg.step > 0.0 && cfg.step.is_finite()) || !(ts_out > 0.0 && ts_out.is_finite()) {
        return Err(SimulationError::InvalidConfig(format!("step {} and output period {ts_out} must be > 0", cfg.step)));
    }
    let ratio = ts_out / cfg.step;
    let count = ratio.round();
    if count < 1.0 || (ratio - count).abs() > 1e-6 {
        return Err(SimulationError::InvalidConfig(format!(
            "step {} s does not divide the output period {ts_out} s",
            cfg.step
        )));
    }
    Ok(count as usize)
}

fn check_state(x: &[f64], time: f64) -> Result<(), SimulationError> {
    if x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_BOUND) {
        Ok(())
    } else {
        Err(SimulationError::NonFiniteState { time })
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    /// One classical RK4 step with separate inputs at `t`, `t + h/2`, `t + h`.
    fn step<F: VectorField + ?Sized>(&mut self, field: &F, x: &mut [f64], u0: &[f64], umid: &[f64], u1: &[f64], h: f64) {
        let n = x.len();
        field.eval(x, u0, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k1[i];
        }
        field.eval(&self.tmp, umid, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * self.k2[i];
        }
        field.eval(&self.tmp, umid, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * self.k3[i];
        }
        field.eval(&self.tmp, u1, &mut self.k4);
        for i in 0..n {
            x[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Integrates `field` from `x0` for `duration` seconds, sampling every `ts_out`.
///
/// Zero-order-hold inputs use the sample of the current output interval for
/// every RK4 stage; the input recorded with each output sample is the value
/// applied from that sample onwards.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    input: &InputSignal,
    duration: f64,
    cfg: &OdeConfig,
    ts_out: f64,
) -> Result<Trajectory, SimulationError> {
    let (n, m) = (field.state_dim(), field.input_dim());
    if x0.len() != n {
        return Err(SimulationError::DimensionMismatch(format!("x0 has {} entries, field expects {n}", x0.len())));
    }
    if input.channels() != m {
        return Err(SimulationError::DimensionMismatch(format!("input has {} channels, field expects {m}", input.channels())));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(SimulationError::InvalidConfig(format!("duration must be > 0, got {duration}")));
    }
    let sub = substeps(cfg, ts_out)?;
    let intervals = (duration / ts_out).round() as usize;
    if intervals == 0 {
        return Err(SimulationError::InvalidConfig(format!("duration {duration} s is shorter than one period {ts_out} s")));
    }
    if let InputSignal::Zoh { samples, ts } = input {
        if (ts - ts_out).abs() > 1e-9 * ts_out {
            return Err(SimulationError::InvalidConfig(format!("zoh period {ts} s differs from output period {ts_out} s")));
        }
        if samples.nrows() < intervals + 1 {
            return Err(SimulationError::InvalidConfig(format!(
                "zoh input has {} samples, horizon needs {}",
                samples.nrows(),
                intervals + 1
            )));
        }
    }
    check_state(x0, 0.0)?;

    let h = ts_out / sub as f64;
    let mut states = DMatrix::zeros(intervals + 1, n);
    let mut inputs = DMatrix::zeros(intervals + 1, m);
    let mut x = x0.to_vec();
    let mut scratch = Rk4Scratch::new(n);
    let (mut u0, mut umid, mut u1) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);

    let sample_input = |k: usize, t: f64, out: &mut [f64]| -> Result<(), SimulationError> {
        match input {
            InputSignal::Zoh { samples, .. } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = samples[(k, j)];
                }
            }
            InputSignal::Excitation { table, cfg } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = excitation::input_at(table, cfg, t, j)?;
                }
            }
            InputSignal::Constant(u) => out.copy_from_slice(u),
        }
        Ok(())
    };

    for k in 0..=intervals {
        let t_k = k as f64 * ts_out;
        states.row_mut(k).copy_from_slice(&x);
        sample_input(k, t_k, &mut u0)?;
        inputs.row_mut(k).copy_from_slice(&u0);
        if k == intervals {
            break;
        }
        for s in 0..sub {
            let t = t_k + s as f64 * h;
            if matches!(input, InputSignal::Excitation { .. }) {
                sample_input(k, t, &mut u0)?;
                sample_input(k, t + 0.5 * h, &mut umid)?;
                sample_input(k, t + h, &mut u1)?;
            } else {
                umid.copy_from_slice(&u0);
                u1.copy_from_slice(&u0);
            }
            scratch.step(field, &mut x, &u0, &umid, &u1, h);
            check_state(&x, t + h)?;
        }
    }
    Ok(Trajectory { ts: ts_out, t0: 0.0, states, inputs })
}

/// Simulates an identified model from `x0` under zero-order-hold `inputs`
/// sampled at the model's period; returns one state per input row.
pub fn simulate_model(model: &KoopmanModel, x0: &[f64], inputs: &DMatrix<f64>, cfg: &OdeConfig) -> Result<Trajectory, SimulationError> {
    let ts = model.ts();
    if inputs.nrows() == 0 {
        return Err(SimulationError::InvalidConfig("no input samples".into()));
    }
    if inputs.nrows() == 1 {
        if x0.len() != model.state_dim() {
            return Err(SimulationError::DimensionMismatch(format!("x0 has {} entries, model expects {}", x0.len(), model.state_dim())));
        }
        return Ok(Trajectory {
            ts,
            t0: 0.0,
            states: DMatrix::from_row_slice(1, x0.len(), x0),
            inputs: inputs.clone(),
        });
    }
    let duration = (inputs.nrows() - 1) as f64 * ts;
    let signal = InputSignal::Zoh { samples: inputs.clone(), ts };
    integrate(model, x0, &signal, duration, cfg, ts)
}
