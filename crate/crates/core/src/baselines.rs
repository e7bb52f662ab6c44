//! SAGA, the variance-reduced stochastic gradient baseline.
//!
//! For generalized linear losses `∇φ(z_i, x) = c_i z_i`, so the gradient table
//! only needs one scalar per sample. The regularizer is part of every
//! per-sample objective `φ_i + ν/2 ‖x‖²`; its gradient `ν x` has no variance
//! and is applied exactly at the current iterate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;
use crate::objective::RegularizedObjective;
use crate::work::{Monitor, Progress, Work, WorkEvent};
use crate::{Error, Result};

/// Steps between full recomputations of the average gradient, in units of `n`.
const RESYNC_SWEEPS: u64 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SagaConfig {
    /// Number of effective epochs (`n` steps each) to run.
    pub epochs: usize,
    pub seed: u64,
    /// Step size; `1/(3L)` when unset.
    pub step: Option<f64>,
    /// Fill the gradient table with one pass at `x0` (charged as a gradient
    /// evaluation) instead of starting from zeros.
    pub init_table: bool,
}

impl Default for SagaConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            seed: 0,
            step: None,
            init_table: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SagaState {
    pub x: Vec<f64>,
    /// Stored per-sample derivative coefficients `c_i`.
    pub coeffs: Vec<f64>,
    /// `(1/n) Σ c_i z_i`, maintained incrementally.
    pub avg_grad: Vec<f64>,
    pub step: f64,
    pub steps: u64,
    /// Largest relative gap between the incremental and the recomputed
    /// average seen at a resync.
    pub max_drift: f64,
}

impl SagaState {
    /// Recompute `avg_grad` from the table; returns the relative drift of
    /// the incremental value.
    fn resync(&mut self, obj: &RegularizedObjective<'_>) -> f64 {
        let n = obj.n();
        let mut fresh = vec![0.0; obj.dim()];
        for (i, (row, _)) in obj.view().rows().enumerate() {
            row.axpy(self.coeffs[i] / n as f64, &mut fresh);
        }
        let diff: f64 = self
            .avg_grad
            .iter()
            .zip(&fresh)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let scale = math::norm(&fresh).max(f64::MIN_POSITIVE);
        self.avg_grad = fresh;
        math::sqrt(diff) / scale
    }
}

/// Run SAGA for `cfg.epochs` effective epochs, sampling uniformly with
/// replacement from a seeded ChaCha8 stream. The monitor sees the iterate
/// at the start and after every `n` steps.
pub fn saga_run(
    obj: &RegularizedObjective<'_>,
    x0: &[f64],
    cfg: &SagaConfig,
    work: &mut Work,
    monitor: &mut dyn Monitor,
) -> Result<SagaState> {
    if x0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: x0.len(),
        });
    }
    let step = cfg.step.unwrap_or_else(|| 1.0 / (3.0 * obj.lipschitz_estimate()));
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidConfig(format!("SAGA step {step} must be positive")));
    }
    let n = obj.n();
    let nu = obj.nu();
    let view = obj.view();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SagaState {
        x: x0.to_vec(),
        coeffs: vec![0.0; n],
        avg_grad: vec![0.0; obj.dim()],
        step,
        steps: 0,
        max_drift: 0.0,
    };
    let loss = obj.loss();
    let inv_n = 1.0 / n as f64;
    if cfg.init_table {
        for (i, (row, y)) in view.rows().enumerate() {
            state.coeffs[i] = loss.derivative(row.dot(x0), y);
            row.axpy(state.coeffs[i] * inv_n, &mut state.avg_grad);
        }
        work.charge(WorkEvent::GradientEvaluation { n });
    }
    monitor.observe(&Progress {
        epochs: work.epochs(),
        x: &state.x,
        lambda: None,
        stage: None,
    });
    for _ in 0..cfg.epochs {
        for _ in 0..n {
            let i = rng.random_range(0..n);
            let row = view.row(i);
            let c_new = loss.derivative(row.dot(&state.x), view.label(i));
            let delta = c_new - state.coeffs[i];
            // x ← x − γ (Δc z_i + avg + ν x), with avg taken before the update
            for (xj, aj) in state.x.iter_mut().zip(&state.avg_grad) {
                *xj -= step * (aj + nu * *xj);
            }
            row.axpy(-step * delta, &mut state.x);
            row.axpy(delta * inv_n, &mut state.avg_grad);
            state.coeffs[i] = c_new;
            state.steps += 1;
            work.charge(WorkEvent::SagaStep);
            if state.steps % (RESYNC_SWEEPS * n as u64) == 0 {
                let drift = state.resync(obj);
                state.max_drift = state.max_drift.max(drift);
            }
        }
        if state.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SAGA iterate"));
        }
        monitor.observe(&Progress {
            epochs: work.epochs(),
            x: &state.x,
            lambda: None,
            stage: None,
        });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_logistic, DatasetBuilder};
    use crate::newton::{minimize, NewtonConfig};
    use crate::objective::LossKind;
    use crate::work::Silent;

    #[test]
    fn single_sample_is_gradient_descent() {
        let mut b = DatasetBuilder::new();
        b.push_row(&[(0, 1.0), (1, -2.0)], 1.0).unwrap();
        let ds = b.build(None).unwrap();
        let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), 0.1).unwrap();
        let cfg = SagaConfig {
            epochs: 25,
            seed: 3,
            step: None,
            init_table: true,
        };
        let mut work = Work::new(1);
        let state = saga_run(&obj, &[0.5, 0.5], &cfg, &mut work, &mut Silent).unwrap();
        let mut x = vec![0.5, 0.5];
        for _ in 0..25 {
            let g = obj.evaluate(&x, false).unwrap().gradient;
            for (xi, gi) in x.iter_mut().zip(g) {
                *xi -= state.step * gi;
            }
        }
        for (a, b) in state.x.iter().zip(&x) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
        // table initialization plus 25 sweeps
        assert_eq!(work.epochs(), 26.0);
    }

    /// Coefficient of determination of a least-squares line through `ys`.
    fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        sxy * sxy / (sxx * syy)
    }

    #[test]
    fn linear_rate_on_strongly_convex_quadratic() {
        for seed in 0..5 {
            let d = 100;
            let ds = synthesize_logistic(2000, d, 12 + seed, 1.0).unwrap().dataset;
            let obj = RegularizedObjective::new(LossKind::Quadratic, ds.full(), 0.1).unwrap();
            let mut scratch = Work::new(ds.len());
            let star = minimize(&obj, &vec![0.0; d], &NewtonConfig::default(), &mut scratch, &mut Silent).unwrap();
            let f_star = obj.value(&star.x).unwrap();
            let mut subopt = Vec::new();
            let mut monitor = |p: &Progress<'_>| subopt.push(obj.value(p.x).unwrap() - f_star);
            let mut work = Work::new(ds.len());
            let cfg = SagaConfig {
                epochs: 20,
                seed,
                step: None,
                init_table: true,
            };
            saga_run(&obj, &vec![0.0; d], &cfg, &mut work, &mut monitor).unwrap();
            let epochs: Vec<f64> = (2..=20).map(|e| e as f64).collect();
            let logs: Vec<f64> = (2..=20).map(|e| subopt[e].log10()).collect();
            assert!(subopt[20] < subopt[2] * 1e-3, "{subopt:?}");
            assert!(r_squared(&epochs, &logs) >= 0.98, "seed {seed}: {logs:?}");
        }
    }

    #[test]
    fn fixed_seed_is_bit_deterministic() {
        let ds = synthesize_logistic(300, 5, 2, 1.0).unwrap().dataset;
        let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), 1e-3).unwrap();
        let cfg = SagaConfig {
            epochs: 3,
            seed: 42,
            step: None,
            init_table: true,
        };
        let run = || {
            let mut work = Work::new(ds.len());
            saga_run(&obj, &[0.0; 5], &cfg, &mut work, &mut Silent).unwrap().x
        };
        let a = run();
        assert_eq!(a, run());
        let other = SagaConfig { seed: 43, ..cfg.clone() };
        let mut work = Work::new(ds.len());
        assert_ne!(a, saga_run(&obj, &[0.0; 5], &other, &mut work, &mut Silent).unwrap().x);
    }

    #[test]
    fn average_gradient_does_not_drift() {
        let ds = synthesize_logistic(200, 6, 5, 1.0).unwrap().dataset;
        let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), 1e-2).unwrap();
        let cfg = SagaConfig {
            epochs: 40,
            seed: 9,
            step: None,
            init_table: true,
        };
        let mut work = Work::new(ds.len());
        let mut state = saga_run(&obj, &[0.0; 6], &cfg, &mut work, &mut Silent).unwrap();
        assert_eq!(state.steps, 40 * 200);
        assert!(state.max_drift > 0.0 || state.steps < 10 * 200);
        assert!(state.max_drift <= 1e-8, "{}", state.max_drift);
        assert!(state.resync(&obj) <= 1e-8);
    }
}
