//! Randomized piecewise-linear excitation signals.
//!
//! Each input channel walks through a row of a uniformly random lookup table,
//! interpolating linearly between consecutive columns over a transition period
//! `T_u`. Channel `i` (0-based) is shifted by `i * offset_fraction * T_u`
//! inside each segment and the result is clamped to `[lo, hi]`.

use nalgebra::DMatrix;
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExcitationError {
    #[error("invalid amplitude range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("invalid excitation config: {0}")]
    InvalidConfig(String),
    #[error("lookup table exhausted at t = {t} s (segment {segment} needs column {needed}, table has {columns})")]
    TableExhausted { t: f64, segment: usize, needed: usize, columns: usize },
    #[error("channel {channel} out of range for {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },
}

/// `m x K_u` table of uniform draws on `[lo, hi]`.
///
/// Draws come from ChaCha8 seeded with `seed`, filled row by row (channel
/// major), so a table is reproducible on every platform.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    values: DMatrix<f64>,
    seed: u64,
    lo: f64,
    hi: f64,
}

impl LookupTable {
    pub fn from_values(values: DMatrix<f64>, lo: f64, hi: f64) -> Result<Self, ExcitationError> {
        check_range(lo, hi)?;
        if values.ncols() < 2 {
            return Err(ExcitationError::InvalidConfig("lookup table needs at least 2 columns".into()));
        }
        Ok(Self { values, seed: 0, lo, hi })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn columns(&self) -> usize {
        self.values.ncols()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationConfig {
    /// Transition period `T_u` in seconds.
    pub period: f64,
    pub lo: f64,
    pub hi: f64,
    /// Phase offset between consecutive channels as a fraction of `T_u`.
    /// `None` means `1/m`.
    #[serde(default)]
    pub offset_fraction: Option<f64>,
}

impl ExcitationConfig {
    pub fn new(period: f64, lo: f64, hi: f64) -> Self {
        Self { period, lo, hi, offset_fraction: None }
    }

    pub fn validate(&self) -> Result<(), ExcitationError> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(ExcitationError::InvalidConfig(format!("transition period must be > 0, got {}", self.period)));
        }
        check_range(self.lo, self.hi)?;
        if let Some(f) = self.offset_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(ExcitationError::InvalidConfig(format!("offset fraction must lie in [0, 1), got {f}")));
            }
        }
        Ok(())
    }

    pub fn offset_for(&self, channels: usize) -> f64 {
        self.offset_fraction.unwrap_or(1.0 / channels.max(1) as f64)
    }

    /// Table columns needed to drive a signal for `duration` seconds.
    pub fn columns_for(&self, duration: f64) -> usize {
        (duration / self.period).floor() as usize + 2
    }
}

fn check_range(lo: f64, hi: f64) -> Result<(), ExcitationError> {
    if lo.is_finite() && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(ExcitationError::InvalidRange { lo, hi })
    }
}

pub fn build_lookup(seed: u64, m: usize, columns: usize, lo: f64, hi: f64) -> Result<LookupTable, ExcitationError> {
    check_range(lo, hi)?;
    if columns < 2 {
        return Err(ExcitationError::InvalidConfig(format!("lookup table needs at least 2 columns, got {columns}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(lo, hi).map_err(|_| ExcitationError::InvalidRange { lo, hi })?;
    let mut values = DMatrix::zeros(m, columns);
    for i in 0..m {
        for k in 0..columns {
            values[(i, k)] = dist.sample(&mut rng);
        }
    }
    Ok(LookupTable { values, seed, lo, hi })
}

/// Value of channel `channel` (0-based) at time `t >= 0`.
pub fn input_at(table: &LookupTable, cfg: &ExcitationConfig, t: f64, channel: usize) -> Result<f64, ExcitationError> {
    if channel >= table.channels() {
        return Err(ExcitationError::ChannelOutOfRange { channel, channels: table.channels() });
    }
    let t = t.max(0.0);
    let mut segment = (t / cfg.period).floor() as usize;
    // The quotient can round below an exact boundary `k * period`.
    if (segment + 1) as f64 * cfg.period <= t {
        segment += 1;
    }
    if segment + 1 >= table.columns() {
        return Err(ExcitationError::TableExhausted {
            t,
            segment,
            needed: segment + 1,
            columns: table.columns(),
        });
    }
    let local = t - segment as f64 * cfg.period;
    let shift = channel as f64 * cfg.offset_for(table.channels()) * cfg.period;
    let start = table.values[(channel, segment)];
    let end = table.values[(channel, segment + 1)];
    let v = (end - start) / cfg.period * (local + shift) + start;
    Ok(v.clamp(cfg.lo, cfg.hi))
}

/// All channels at time `t`.
pub fn inputs_at(table: &LookupTable, cfg: &ExcitationConfig, t: f64) -> Result<Vec<f64>, ExcitationError> {
    (0..table.channels()).map(|i| input_at(table, cfg, t, i)).collect()
}

/// Samples every channel on the grid `k * ts`, `k = 0..count`, one row per sample.
pub fn sample_grid(table: &LookupTable, cfg: &ExcitationConfig, ts: f64, count: usize) -> Result<DMatrix<f64>, ExcitationError> {
    let mut out = DMatrix::zeros(count, table.channels());
    for k in 0..count {
        let t = k as f64 * ts;
        for i in 0..table.channels() {
            out[(k, i)] = input_at(table, cfg, t, i)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_channel_ramp() -> LookupTable {
        LookupTable::from_values(DMatrix::from_row_slice(2, 3, &[0.0, 10.0, 4.0, 0.0, 10.0, 2.0]), 0.0, 10.0).unwrap()
    }

    #[test]
    fn lookup_is_deterministic_and_bounded() {
        let a = build_lookup(42, 3, 50, 0.0, 10.0).unwrap();
        let b = build_lookup(42, 3, 50, 0.0, 10.0).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| (0.0..=10.0).contains(&v)));
        assert_ne!(a, build_lookup(43, 3, 50, 0.0, 10.0).unwrap());
    }

    #[test]
    fn lookup_mean_converges() {
        let t = build_lookup(7, 1, 100_000, 0.0, 10.0).unwrap();
        let mean = t.values().mean();
        assert!((mean - 5.0).abs() <= 0.1, "mean {mean}");
    }

    #[test]
    fn lookup_rejects_bad_range() {
        assert!(matches!(build_lookup(1, 1, 4, 3.0, 3.0), Err(ExcitationError::InvalidRange { .. })));
        assert!(matches!(build_lookup(1, 1, 4, 5.0, 3.0), Err(ExcitationError::InvalidRange { .. })));
        assert!(build_lookup(1, 1, 1, 0.0, 1.0).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let table = two_channel_ramp();
        let cfg = ExcitationConfig { period: 4.0, lo: 0.0, hi: 10.0, offset_fraction: Some(1.0 / 3.0) };
        assert_eq!(input_at(&table, &cfg, 1.0, 0).unwrap(), 2.5);
        assert_eq!(input_at(&table, &cfg, 0.0, 0).unwrap(), 0.0);
        let v = input_at(&table, &cfg, 0.0, 1).unwrap();
        assert!((v - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn default_offset_is_one_over_m() {
        let table = two_channel_ramp();
        let cfg = ExcitationConfig::new(4.0, 0.0, 10.0);
        // Channel 1 of 2 is shifted by T_u / 2.
        assert_eq!(input_at(&table, &cfg, 0.0, 1).unwrap(), 5.0);
    }

    #[test]
    fn exhausted_table_errors() {
        let table = two_channel_ramp();
        let cfg = ExcitationConfig::new(4.0, 0.0, 10.0);
        assert!(input_at(&table, &cfg, 7.9, 0).is_ok());
        assert!(matches!(input_at(&table, &cfg, 8.0, 0), Err(ExcitationError::TableExhausted { .. })));
        assert!(matches!(input_at(&table, &cfg, 1.0, 2), Err(ExcitationError::ChannelOutOfRange { .. })));
    }

    #[test]
    fn offset_channel_is_clamped() {
        let table = two_channel_ramp();
        let cfg = ExcitationConfig { period: 4.0, lo: 0.0, hi: 10.0, offset_fraction: Some(0.5) };
        // Late in segment 0 the shifted ramp would exceed 10.
        assert_eq!(input_at(&table, &cfg, 3.5, 1).unwrap(), 10.0);
    }

    #[test]
    fn first_channel_hits_table_entries_at_boundaries() {
        let table = build_lookup(9, 1, 12, 0.0, 10.0).unwrap();
        let cfg = ExcitationConfig::new(4.0, 0.0, 10.0);
        for k in 0..11 {
            let t = 4.0 * k as f64;
            assert_eq!(input_at(&table, &cfg, t, 0).unwrap(), table.values()[(0, k)]);
            // Approaching from the left lands on the same value.
            let left = input_at(&table, &cfg, t - 1e-9, 0);
            if let Ok(v) = left {
                assert!((v - table.values()[(0, k)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(ExcitationConfig::new(0.0, 0.0, 1.0).validate().is_err());
        assert!(ExcitationConfig::new(1.0, 1.0, 1.0).validate().is_err());
        let mut c = ExcitationConfig::new(1.0, 0.0, 1.0);
        c.offset_fraction = Some(1.0);
        assert!(c.validate().is_err());
        c.offset_fraction = Some(0.0);
        assert!(c.validate().is_ok());
    }

    proptest! {
        #[test]
        fn output_stays_in_range(seed in any::<u64>(), t in 0.0f64..39.0, frac in 0.0f64..0.99) {
            let table = build_lookup(seed, 3, 12, -1.0, 2.0).unwrap();
            let cfg = ExcitationConfig { period: 4.0, lo: -1.0, hi: 2.0, offset_fraction: Some(frac) };
            for i in 0..3 {
                let v = input_at(&table, &cfg, t, i).unwrap();
                prop_assert!((-1.0..=2.0).contains(&v));
            }
        }

        #[test]
        fn piecewise_linear_within_segment(seed in any::<u64>(), seg in 0usize..8) {
            let table = build_lookup(seed, 1, 10, 0.0, 10.0).unwrap();
            let cfg = ExcitationConfig::new(4.0, 0.0, 10.0);
            let samples: Vec<f64> = (0..16)
                .map(|j| input_at(&table, &cfg, seg as f64 * 4.0 + j as f64 * 0.25, 0).unwrap())
                .collect();
            for w in samples.windows(3) {
                prop_assert!((w[2] - 2.0 * w[1] + w[0]).abs() < 1e-12);
            }
        }
    }
}
