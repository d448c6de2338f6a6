//! Cross-module properties: basis, excitation, dataset, numerics,
//! identification and simulator checked against independent oracles.

use koopman_core::basis::{monomial_count, LiftingBasis, MonomialBasis};
use koopman_core::dataset::{build_snapshots, split_validation, SplitSpec, Trajectory};
use koopman_core::excitation::{build_lookup, input_at, sample_grid, ExcitationConfig};
use koopman_core::identification::identify;
use koopman_core::numerics::{matrix_exp, matrix_log, pseudoinverse, DEFAULT_RCOND};
use koopman_core::simulator::{integrate, FnField, InputSignal, OdeConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `C(n + m + w, w)` by the multiplicative formula.
fn binomial_oracle(n: usize, m: usize, w: usize) -> usize {
    let top = n + m + w;
    (1..=w).fold(1u128, |acc, k| acc * (top - w + k) as u128 / k as u128) as usize
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cardinality_and_ordering_are_stable(n in 1usize..=8, m in 0usize..=4, w in 1usize..=4) {
        let a = MonomialBasis::new(n, m, w).unwrap();
        let b = MonomialBasis::new(n, m, w).unwrap();
        prop_assert_eq!(a.len(), binomial_oracle(n, m, w));
        prop_assert_eq!(monomial_count(n, m, w), a.len());
        prop_assert_eq!(a.exponents(), b.exponents());
    }

    #[test]
    fn identity_observable_is_bit_exact(
        x in prop::collection::vec(-64i32..64, 3),
        u in prop::collection::vec(-64i32..64, 2),
        w in 1usize..=3,
    ) {
        let basis = MonomialBasis::new(3, 2, w).unwrap();
        let x: Vec<f64> = x.iter().map(|&v| v as f64 / 8.0).collect();
        let u: Vec<f64> = u.iter().map(|&v| v as f64 / 8.0).collect();
        let psi = basis.lift(&x, &u).unwrap();
        for i in 0..3 {
            let c = basis.identity_coefficients(i + 1).unwrap();
            prop_assert_eq!(c.dot(&psi), x[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences(point in prop::collection::vec(-2.0f64..2.0, 5), w in 1usize..=3) {
        let basis = MonomialBasis::new(3, 2, w).unwrap();
        let (x, u) = point.split_at(3);
        let grad = basis.lift_gradient(x, u).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[i] += h;
            xm[i] -= h;
            let fd = (basis.lift(&xp, u).unwrap() - basis.lift(&xm, u).unwrap()) / (2.0 * h);
            prop_assert!((grad.column(i) - fd).amax() <= 1e-6);
        }
    }

    #[test]
    fn excitation_is_bounded_piecewise_linear_and_continuous(
        seed in any::<u64>(),
        m in 1usize..=3,
        period in 0.5f64..5.0,
    ) {
        let cfg = ExcitationConfig::new(period, -1.0, 1.0);
        let table = build_lookup(seed, m, 12, -1.0, 1.0).unwrap();
        let horizon = 10.0 * period;
        for k in 0..200 {
            let t = horizon * k as f64 / 200.0;
            for i in 0..m {
                let v = input_at(&table, &cfg, t, i).unwrap();
                prop_assert!((-1.0..=1.0).contains(&v));
            }
        }
        // First channel: table entries at boundaries, zero second differences inside.
        for seg in 0..10 {
            let t0 = seg as f64 * period;
            prop_assert_eq!(input_at(&table, &cfg, t0, 0).unwrap(), table.values()[(0, seg)]);
            let h = period / 8.0;
            let s: Vec<f64> = (1..4).map(|j| input_at(&table, &cfg, t0 + j as f64 * h, 0).unwrap()).collect();
            prop_assert!((s[2] - 2.0 * s[1] + s[0]).abs() <= 1e-12);
            let before = input_at(&table, &cfg, t0 + period - 1e-9, 0).unwrap();
            prop_assert!((before - table.values()[(0, seg + 1)]).abs() <= 1e-8);
        }
    }

    #[test]
    fn split_is_a_partition(seed in any::<u64>(), count in 0usize..=4, len in 600usize..1200) {
        let ts = 0.02;
        let states = DMatrix::from_fn(len, 2, |k, j| (k * (j + 1)) as f64);
        let traj = Trajectory::new(ts, 0.0, states, DMatrix::zeros(len, 1)).unwrap();
        let spec = SplitSpec { validation_count: count, validation_duration: 2.0, seed };
        let (train, validation) = split_validation(&traj, &spec).unwrap();
        let mut hits = vec![0usize; len];
        for seg in train.iter().chain(&validation) {
            let start = (seg.t0 / ts).round() as usize;
            for k in 0..seg.len() {
                hits[start + k] += 1;
                prop_assert_eq!(seg.states[(k, 1)], traj.states[(start + k, 1)]);
            }
        }
        prop_assert!(hits.iter().all(|&h| h == 1));
        prop_assert_eq!(validation.len(), count);
    }
}

fn forced_oscillator() -> FnField<impl Fn(&[f64], &[f64], &mut [f64])> {
    FnField::new(2, 1, |x: &[f64], u: &[f64], dx: &mut [f64]| {
        dx[0] = x[1];
        dx[1] = -x[0] - x[0].powi(3) - 0.5 * x[1] + u[0];
    })
}

fn excitation_samples(seed: u64, count: usize, ts: f64) -> DMatrix<f64> {
    let cfg = ExcitationConfig::new(2.0, -1.0, 1.0);
    let table = build_lookup(seed, 1, cfg.columns_for(count as f64 * ts), -1.0, 1.0).unwrap();
    sample_grid(&table, &cfg, ts, count).unwrap()
}

#[test]
fn snapshots_match_one_step_flow() {
    let (ts, count) = (0.02, 400);
    let inputs = excitation_samples(3, count, ts);
    let ode = OdeConfig::default();
    let field = forced_oscillator();
    let signal = InputSignal::Zoh { samples: inputs, ts };
    let traj = integrate(&field, &[0.5, 0.0], &signal, (count - 1) as f64 * ts, &ode, ts).unwrap();
    let snaps = build_snapshots(&[traj]).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..snaps.len() {
        let x0 = [snaps.x[(k, 0)], snaps.x[(k, 1)]];
        let step = integrate(&field, &x0, &InputSignal::Constant(vec![snaps.u[(k, 0)]]), ts, &ode, ts).unwrap();
        for j in 0..2 {
            worst = worst.max((step.states[(1, j)] - snaps.y[(k, j)]).abs());
        }
    }
    assert!(worst <= 1e-8, "worst one-step mismatch {worst:e}");
}

#[test]
fn integration_is_deterministic() {
    let ts = 0.02;
    let inputs = excitation_samples(9, 500, ts);
    let run = || {
        let signal = InputSignal::Zoh { samples: inputs.clone(), ts };
        integrate(&forced_oscillator(), &[0.3, -0.2], &signal, 499.0 * ts, &OdeConfig::default(), ts).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.states.iter().zip(b.states.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn exp_log_inverse_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let n = rng.random_range(2..=10);
        let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let g = &g / g.norm().max(1.0);
        let back = matrix_log(&matrix_exp(&g).unwrap()).unwrap();
        assert!((back - &g).norm() <= 1e-8);
    }
}

#[test]
fn pseudoinverse_is_an_involution_on_full_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..50 {
        let (r, c) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let m: DMatrix<f64> = DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let s = koopman_core::numerics::svd(&m).unwrap();
        if s.condition_number() > 1e6 {
            continue;
        }
        let back = pseudoinverse(&pseudoinverse(&m, DEFAULT_RCOND).unwrap(), DEFAULT_RCOND).unwrap();
        assert!((back - &m).amax() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Quadratic fields lie in the degree-2 span and are recovered coefficient
    /// by coefficient.
    #[test]
    fn polynomial_fields_are_recovered(a in -0.3f64..0.3, b in -0.3f64..0.3, c in -0.3f64..0.3, seed in any::<u64>()) {
        let ts = 0.01;
        let count = 2001;
        let field = FnField::new(2, 1, move |x: &[f64], u: &[f64], dx: &mut [f64]| {
            dx[0] = x[1] + a * x[0] * x[0];
            dx[1] = -x[0] - 0.5 * x[1] + b * x[0] * x[1] + c * u[0] * x[0] + u[0];
        });
        let inputs = excitation_samples(seed, count, ts) * 0.5;
        let signal = InputSignal::Zoh { samples: inputs, ts };
        let traj = integrate(&field, &[0.2, 0.0], &signal, (count - 1) as f64 * ts, &OdeConfig::default(), ts).unwrap();
        let basis = MonomialBasis::new(2, 1, 2).unwrap();
        let model = identify(&build_snapshots(&[traj]).unwrap(), &basis, DEFAULT_RCOND).unwrap();
        let truth = |e: &[u32], i: usize| -> f64 {
            match (i, e) {
                (0, [0, 1, 0]) => 1.0,
                (0, [2, 0, 0]) => a,
                (1, [1, 0, 0]) => -1.0,
                (1, [0, 1, 0]) => -0.5,
                (1, [1, 1, 0]) => b,
                (1, [1, 0, 1]) => c,
                (1, [0, 0, 1]) => 1.0,
                _ => 0.0,
            }
        };
        for (j, e) in basis.exponents().iter().enumerate() {
            for i in 0..2 {
                let err = (model.field()[(j, i)] - truth(e, i)).abs();
                prop_assert!(err <= 1e-4, "term {:?} state {} error {:e}", e, i, err);
            }
        }
        prop_assert!(model.round_trip_error().unwrap() <= 1e-8);
    }
}
