//! Shared inputs for the benchmarks in `benches/`.

use koopman_core::dataset::{build_snapshots, SnapshotSet};
use koopman_core::excitation::{build_lookup, sample_grid, ExcitationConfig};
use koopman_core::simulator::{builtin_field, integrate, InputSignal, OdeConfig};

pub const TS: f64 = 0.02;

/// Noiseless forced Duffing snapshots, `samples - 1` pairs.
pub fn duffing_snapshots(samples: usize) -> SnapshotSet {
    let field = builtin_field("duffing", &[]).expect("builtin system");
    let cfg = ExcitationConfig::new(4.0, -1.0, 1.0);
    let duration = (samples - 1) as f64 * TS;
    let table = build_lookup(7, 1, cfg.columns_for(duration), cfg.lo, cfg.hi).expect("lookup table");
    let inputs = sample_grid(&table, &cfg, TS, samples).expect("input samples");
    let signal = InputSignal::Zoh { samples: inputs, ts: TS };
    let traj = integrate(&field, &[0.5, 0.0], &signal, duration, &OdeConfig::default(), TS).expect("integration");
    build_snapshots(&[traj]).expect("snapshots")
}
