//! Whole-solver runs through the public API on small synthetic problems.

use dynanewton_core::continuation::{dyna_newton, ContinuationConfig, Schedule};
use dynanewton_core::dataset::synthesize_logistic;
use dynanewton_core::lbfgs::{dyna_lbfgs, LbfgsConfig};
use dynanewton_core::newton::{decrement, minimize, NewtonConfig};
use dynanewton_core::objective::{LossKind, RegularizedObjective};
use dynanewton_core::work::{Silent, Work};
use proptest::prelude::*;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn continuation_matches_plain_newton() {
    let ds = synthesize_logistic(4000, 12, 1, 2.0).unwrap().dataset;
    let n = ds.len();
    let nu = 1.0 / n as f64;
    let full = RegularizedObjective::new(LossKind::Logistic, ds.full(), nu).unwrap();
    let x0 = vec![0.0; 12];
    let ncfg = NewtonConfig::default();

    let mut work = Work::new(n);
    let direct = minimize(&full, &x0, &ncfg, &mut work, &mut Silent).unwrap();
    let direct_epochs = work.epochs();

    let mut work = Work::new(n);
    let cont = dyna_newton(&ds, LossKind::Logistic, &x0, &ContinuationConfig::default(), &ncfg, &mut work, &mut Silent)
        .unwrap();
    assert!(max_abs_diff(&cont.x, &direct.x) < 1e-6);
    assert!(decrement(&full, &cont.x).unwrap() < 1e-6);
    assert_eq!(cont.stages.last().unwrap().m, n);
    assert!(work.epochs() < direct_epochs, "{} vs {direct_epochs}", work.epochs());
}

#[test]
fn dyna_lbfgs_reaches_the_same_optimum() {
    let ds = synthesize_logistic(3000, 8, 2, 1.0).unwrap().dataset;
    let n = ds.len();
    let full = RegularizedObjective::new(LossKind::Logistic, ds.full(), 1.0 / n as f64).unwrap();
    let x0 = vec![0.0; 8];
    let mut work = Work::new(n);
    let newton = minimize(&full, &x0, &NewtonConfig::default(), &mut work, &mut Silent).unwrap();
    let mut work = Work::new(n);
    let out = dyna_lbfgs(
        &ds,
        LossKind::Logistic,
        &x0,
        &ContinuationConfig::default(),
        &LbfgsConfig::default(),
        &mut work,
        &mut Silent,
    )
    .unwrap();
    assert!(out.converged);
    assert!(max_abs_diff(&out.x, &newton.x) < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // ν·n stays fixed along the path, prefixes grow, and every hand-over lands
    // inside twice the quadratic-convergence radius.
    #[test]
    fn stage_path_invariants(seed in 0u64..1000, d in 2usize..8, alpha in 0.3f64..0.9, adaptive in any::<bool>()) {
        let ds = synthesize_logistic(1500, d, seed, 1.5).unwrap().dataset;
        let cfg = ContinuationConfig {
            schedule: if adaptive { Schedule::Adaptive } else { Schedule::FixedAlpha(alpha) },
            ..Default::default()
        };
        let mut work = Work::new(ds.len());
        let out = dyna_newton(&ds, LossKind::Logistic, &vec![0.0; d], &cfg, &NewtonConfig::default(), &mut work, &mut Silent)
            .unwrap();
        let s = &out.stages;
        let coupling = s[0].mu * s[0].m as f64;
        for w in s.windows(2) {
            prop_assert!(w[1].m > w[0].m);
            prop_assert!(w[1].mu < w[0].mu);
            prop_assert!((w[1].epochs_used - w[0].epochs_used) >= 0.0);
        }
        for st in s {
            prop_assert!((st.mu * st.m as f64 - coupling).abs() <= 1e-9 * coupling);
            prop_assert!(st.t == 0 || st.lambda_handover <= 2.0 * cfg.eta);
        }
        prop_assert_eq!(s.last().unwrap().m, ds.len());
    }
}
