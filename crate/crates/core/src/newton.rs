//! Damped Newton method with backtracking line search.

use alloc::vec::Vec;

use crate::linalg::{factor_spd, SpdFactorization};
use crate::math;
use crate::objective::{EvalReport, RegularizedObjective};
use crate::work::{Monitor, Progress, Work, WorkEvent};
use crate::{Error, Result};

/// Sufficient-decrease constant `a` of the Armijo test.
pub const DEFAULT_LS_ALPHA: f64 = 0.1;
/// Backtracking shrink factor `b`.
pub const DEFAULT_LS_BETA: f64 = 0.5;
/// Radius of the region where a full step is accepted, `(1 - 2a) / 4`.
pub const DEFAULT_ETA: f64 = (1.0 - 2.0 * DEFAULT_LS_ALPHA) / 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    pub ls_alpha: f64,
    pub ls_beta: f64,
    /// Stop once `λ²/2 <= eps`.
    pub eps: f64,
    pub max_iters: usize,
    /// Run exactly this many steps and ignore `eps`.
    pub fixed_iters: Option<usize>,
    /// Take the full step without a trial evaluation when `λ` is at most
    /// this value. For self-concordant objectives and radius `(1 - 2a)/4`
    /// backtracking would accept `t = 1` there anyway.
    pub full_step_radius: Option<f64>,
    pub max_halvings: u32,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            ls_alpha: DEFAULT_LS_ALPHA,
            ls_beta: DEFAULT_LS_BETA,
            eps: 1e-12,
            max_iters: 100,
            fixed_iters: None,
            full_step_radius: Some(DEFAULT_ETA),
            max_halvings: 60,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ls_alpha > 0.0
            && self.ls_alpha < 0.5
            && self.ls_beta > 0.0
            && self.ls_beta < 1.0
            && self.eps > 0.0
            && self.full_step_radius.is_none_or(|r| r >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("{self:?}")))
        }
    }
}

/// What one Newton step did.
#[derive(Debug, Clone)]
pub struct NewtonStepReport {
    /// Decrement at the pre-step point.
    pub lambda: f64,
    pub step_size: f64,
    /// Objective evaluations spent by the line search; 0 when the full step
    /// was taken inside the certified region.
    pub ls_trials: u32,
    pub value_before: f64,
    pub value_after: Option<f64>,
    /// Factorization of the Hessian at the pre-step point.
    pub factorization: SpdFactorization,
}

impl NewtonStepReport {
    /// Charge the evaluation and the line-search trials of this step.
    pub fn charge(&self, work: &mut Work, n: usize) {
        work.charge(WorkEvent::NewtonEvaluation { n });
        for _ in 0..self.ls_trials {
            work.charge(WorkEvent::LineSearchTrial { n });
        }
    }
}

/// Hessian factorization, Newton direction and decrement at `x`.
pub(crate) struct LocalModel {
    pub(crate) eval: EvalReport,
    pub(crate) factorization: SpdFactorization,
    pub(crate) direction: Vec<f64>,
    pub(crate) lambda: f64,
}

fn local_model(obj: &RegularizedObjective<'_>, x: &[f64]) -> Result<LocalModel> {
    LocalModel::from_eval(obj.evaluate(x, true)?)
}

impl LocalModel {
    pub(crate) fn from_eval(mut eval: EvalReport) -> Result<Self> {
        let hessian = eval.hessian.take().expect("requested");
        let factorization = factor_spd(&hessian)?;
        let mut direction = factorization.solve(&eval.gradient);
        direction.iter_mut().for_each(|v| *v = -*v);
        let lambda = math::sqrt(factorization.quad_form_inv(&eval.gradient));
        Ok(LocalModel {
            eval,
            factorization,
            direction,
            lambda,
        })
    }
}

pub(crate) fn take_step(
    obj: &RegularizedObjective<'_>,
    x: &[f64],
    model: LocalModel,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, NewtonStepReport)> {
    let LocalModel {
        eval,
        factorization,
        direction,
        lambda,
    } = model;
    let f0 = eval.value;
    let slope = math::dot(&eval.gradient, &direction);
    let shifted =
        |t: f64| -> Vec<f64> { x.iter().zip(&direction).map(|(a, d)| a + t * d).collect() };

    // A predicted decrease below the resolution of f cannot be verified.
    let unresolvable = -slope <= 64.0 * f64::EPSILON * f0.abs().max(f64::MIN_POSITIVE);
    let certified = cfg.full_step_radius.is_some_and(|r| lambda <= r);
    if unresolvable || certified {
        let report = NewtonStepReport {
            lambda,
            step_size: 1.0,
            ls_trials: 0,
            value_before: f0,
            value_after: None,
            factorization,
        };
        return Ok((shifted(1.0), report));
    }

    let mut t = 1.0;
    let mut trials = 0;
    loop {
        trials += 1;
        let candidate = shifted(t);
        let value = obj.value(&candidate).unwrap_or(f64::INFINITY);
        if value <= f0 + cfg.ls_alpha * t * slope {
            let report = NewtonStepReport {
                lambda,
                step_size: t,
                ls_trials: trials,
                value_before: f0,
                value_after: Some(value),
                factorization,
            };
            return Ok((candidate, report));
        }
        if trials > cfg.max_halvings {
            return Err(Error::Stalled {
                halvings: cfg.max_halvings,
                lambda,
                stage: None,
            });
        }
        t *= cfg.ls_beta;
    }
}

/// One damped Newton step from `x`.
pub fn newton_step(
    obj: &RegularizedObjective<'_>,
    x: &[f64],
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, NewtonStepReport)> {
    let model = local_model(obj, x)?;
    take_step(obj, x, model, cfg)
}

/// Newton decrement `sqrt(∇fᵀ [∇²f]⁻¹ ∇f)` at `x`.
pub fn decrement(obj: &RegularizedObjective<'_>, x: &[f64]) -> Result<f64> {
    Ok(local_model(obj, x)?.lambda)
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: Vec<f64>,
    /// Steps actually taken.
    pub iterations: usize,
    pub converged: bool,
    /// Decrement at the last point where it was computed.
    pub lambda: f64,
    /// Hessian factorization from the last evaluation.
    pub factorization: Option<SpdFactorization>,
}

/// Iterate Newton steps until `λ²/2 <= eps`, or for exactly
/// `cfg.fixed_iters` steps when that is set.
///
/// Running out of `max_iters` is reported through `converged = false`.
pub fn minimize(
    obj: &RegularizedObjective<'_>,
    x0: &[f64],
    cfg: &NewtonConfig,
    work: &mut Work,
    monitor: &mut dyn Monitor,
) -> Result<NewtonOutcome> {
    minimize_in_stage(obj, x0, cfg, work, monitor, None)
}

pub(crate) fn minimize_in_stage(
    obj: &RegularizedObjective<'_>,
    x0: &[f64],
    cfg: &NewtonConfig,
    work: &mut Work,
    monitor: &mut dyn Monitor,
    stage: Option<usize>,
) -> Result<NewtonOutcome> {
    cfg.validate()?;
    let n = obj.n();
    let tag = |e: Error| match stage {
        Some(t) => e.at_stage(t),
        None => e,
    };
    let mut x = x0.to_vec();
    let mut lambda = f64::NAN;
    let mut factorization = None;
    let mut iterations = 0;
    let budget = cfg.fixed_iters.unwrap_or(cfg.max_iters);
    monitor.observe(&Progress {
        epochs: work.epochs(),
        x: &x,
        lambda: None,
        stage,
    });
    loop {
        if iterations == budget {
            return Ok(NewtonOutcome {
                converged: cfg.fixed_iters.is_some() || lambda * lambda / 2.0 <= cfg.eps,
                x,
                iterations,
                lambda,
                factorization,
            });
        }
        let model = local_model(obj, &x).map_err(tag)?;
        work.charge(WorkEvent::NewtonEvaluation { n });
        lambda = model.lambda;
        if cfg.fixed_iters.is_none() && lambda * lambda / 2.0 <= cfg.eps {
            return Ok(NewtonOutcome {
                x,
                iterations,
                converged: true,
                lambda,
                factorization: Some(model.factorization),
            });
        }
        let (next, report) = take_step(obj, &x, model, cfg).map_err(tag)?;
        for _ in 0..report.ls_trials {
            work.charge(WorkEvent::LineSearchTrial { n });
        }
        x = next;
        iterations += 1;
        factorization = Some(report.factorization);
        monitor.observe(&Progress {
            epochs: work.epochs(),
            x: &x,
            lambda: Some(lambda),
            stage,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize_logistic, Dataset, DatasetBuilder};
    use crate::objective::LossKind;
    use crate::work::Silent;
    use alloc::vec;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(d: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..d)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
            .collect()
    }

    /// Closed-form minimizer of the regularized least-squares objective.
    fn least_squares_minimizer(ds: &Dataset, nu: f64) -> Vec<f64> {
        let (n, d) = (ds.len(), ds.dim());
        let z = DMatrix::from_fn(n, d, |i, j| ds.row(i).to_dense(d)[j]);
        let y = DVector::from_column_slice(ds.labels());
        let h = z.transpose() * &z / n as f64 + DMatrix::identity(d, d) * nu;
        let b = z.transpose() * y / n as f64;
        h.lu().solve(&b).unwrap().as_slice().to_vec()
    }

    #[test]
    fn quadratic_is_solved_in_one_full_step() {
        let ds = synthesize_logistic(60, 6, 2, 1.0).unwrap().dataset;
        let obj = RegularizedObjective::new(LossKind::Quadratic, ds.full(), 0.05).unwrap();
        let x0 = random_vec(6, 9, 3.0);
        let cfg = NewtonConfig {
            full_step_radius: None,
            ..Default::default()
        };
        let (x1, rep) = newton_step(&obj, &x0, &cfg).unwrap();
        assert_eq!(rep.step_size, 1.0);
        assert_eq!(rep.ls_trials, 1);
        let star = least_squares_minimizer(&ds, 0.05);
        for (a, b) in x1.iter().zip(&star) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn minimize_quadratic_takes_one_iteration() {
        let ds = synthesize_logistic(40, 3, 3, 1.0).unwrap().dataset;
        let obj = RegularizedObjective::new(LossKind::Quadratic, ds.full(), 0.1).unwrap();
        let cfg = NewtonConfig {
            eps: 1e-14,
            ..Default::default()
        };
        let mut work = Work::new(ds.len());
        let out = minimize(&obj, &[5.0, -2.0, 1.0], &cfg, &mut work, &mut Silent).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn stationary_point_has_zero_decrement() {
        let ds = synthesize_logistic(40, 3, 3, 1.0).unwrap().dataset;
        let obj = RegularizedObjective::new(LossKind::Quadratic, ds.full(), 0.1).unwrap();
        let star = least_squares_minimizer(&ds, 0.1);
        let lambda = decrement(&obj, &star).unwrap();
        assert!(lambda < 1e-12, "{lambda}");
        let (next, rep) = newton_step(&obj, &star, &NewtonConfig::default()).unwrap();
        assert!(rep.lambda < 1e-12);
        for (a, b) in next.iter().zip(&star) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn decrement_of_half_squared_norm_is_the_norm() {
        // an all-zero row contributes a constant loss, leaving ν/2 ‖x‖²
        let mut b = DatasetBuilder::new();
        b.push_row(&[], 1.0).unwrap();
        let ds = b.build(Some(3)).unwrap();
        let obj = RegularizedObjective::new(LossKind::Quadratic, ds.full(), 1.0).unwrap();
        let x = [1.0, -2.0, 2.0];
        assert!((decrement(&obj, &x).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn logistic_decrement_contracts_quadratically() {
        let ds = synthesize_logistic(200, 5, 6, 1.0).unwrap().dataset;
        let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), 0.1).unwrap();
        let cfg = NewtonConfig::default();
        let mut x = vec![0.0; 5];
        let mut lambdas = Vec::new();
        for _ in 0..6 {
            let (next, rep) = newton_step(&obj, &x, &cfg).unwrap();
            lambdas.push(rep.lambda);
            x = next;
        }
        for w in lambdas.windows(2) {
            if w[0] > 1e-12 {
                assert!(w[1] < w[0], "{lambdas:?}");
            }
            if w[0] < 0.25 && w[0] > 1e-7 {
                assert!(
                    w[1] <= 1.5 * w[0] * w[0] / ((1.0 - w[0]) * (1.0 - w[0])),
                    "{lambdas:?}"
                );
            }
        }
    }

    #[test]
    fn fixed_iteration_mode_runs_exactly() {
        let ds = synthesize_logistic(100, 4, 1, 1.0).unwrap().dataset;
        let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), 0.01).unwrap();
        for k in [1, 6] {
            let cfg = NewtonConfig {
                fixed_iters: Some(k),
                ..Default::default()
            };
            let mut work = Work::new(ds.len());
            let out = minimize(&obj, &[0.0; 4], &cfg, &mut work, &mut Silent).unwrap();
            assert_eq!(out.iterations, k);
        }
    }

    #[test]
    fn running_out_of_iterations_is_not_fatal() {
        let ds = synthesize_logistic(100, 4, 1, 1.0).unwrap().dataset;
        let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), 1e-4).unwrap();
        let cfg = NewtonConfig {
            max_iters: 1,
            eps: 1e-30,
            ..Default::default()
        };
        let mut work = Work::new(ds.len());
        let out = minimize(&obj, &[10.0; 4], &cfg, &mut work, &mut Silent).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn stall_is_reported() {
        let ds = synthesize_logistic(50, 3, 1, 1.0).unwrap().dataset;
        let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), 0.01).unwrap();
        // an Armijo constant this close to 1/2 with almost no backtracking
        // budget cannot accept the damped steps far from the optimum
        let cfg = NewtonConfig {
            max_halvings: 0,
            full_step_radius: None,
            ls_alpha: 0.49,
            ..Default::default()
        };
        let err = newton_step(&obj, &[30.0, -30.0, 30.0], &cfg).unwrap_err();
        assert!(matches!(err, Error::Stalled { .. }), "{err:?}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        for cfg in [
            NewtonConfig {
                ls_alpha: 0.5,
                ..Default::default()
            },
            NewtonConfig {
                ls_beta: 1.0,
                ..Default::default()
            },
            NewtonConfig {
                eps: 0.0,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
        assert!((DEFAULT_ETA - 0.2).abs() < 1e-15);
    }

    fn transformed(ds: &Dataset, a: &DMatrix<f64>) -> Dataset {
        // rows z ↦ Aᵀ z so that ⟨z', w⟩ = ⟨z, A w⟩
        let d = ds.dim();
        let rows: Vec<Vec<f64>> = (0..ds.len())
            .map(|i| {
                let z = DVector::from_vec(ds.row(i).to_dense(d));
                (a.transpose() * z).as_slice().to_vec()
            })
            .collect();
        Dataset::from_dense(&rows, ds.labels()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn decrement_is_affine_invariant(seed in 0u64..1000) {
            let d = 4;
            let ds = synthesize_logistic(60, d, seed, 1.0).unwrap().dataset;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(d, d, |i, j| {
                rng.random::<f64>() - 0.5 + if i == j { 1.5 } else { 0.0 }
            });
            let x = random_vec(d, seed + 1, 0.5);
            let f = RegularizedObjective::new(LossKind::Logistic, ds.full(), 0.0).unwrap();
            let lam_f = decrement(&f, &x).unwrap();
            let ds_g = transformed(&ds, &a);
            let g = RegularizedObjective::new(LossKind::Logistic, ds_g.full(), 0.0).unwrap();
            let w = a.clone().lu().solve(&DVector::from_column_slice(&x)).unwrap();
            let lam_g = decrement(&g, w.as_slice()).unwrap();
            prop_assert!((lam_f - lam_g).abs() <= 1e-8 * lam_f.max(1e-12));
        }

        #[test]
        fn gradient_norm_condition_implies_decrement_condition(seed in 0u64..1000, t in 0.0f64..1.0) {
            let eta = 0.2;
            let nu = 0.05;
            let ds = synthesize_logistic(80, 4, seed, 1.0).unwrap().dataset;
            let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), nu).unwrap();
            // points between a rough start and the optimum
            let mut work = Work::new(ds.len());
            let star = minimize(&obj, &[0.0; 4], &NewtonConfig::default(), &mut work, &mut Silent).unwrap().x;
            let x: Vec<f64> = star.iter().zip(random_vec(4, seed, 1.0)).map(|(s, r)| s + t * r).collect();
            let g = obj.evaluate(&x, false).unwrap().gradient;
            if math::norm(&g) <= eta * math::sqrt(nu) {
                prop_assert!(decrement(&obj, &x).unwrap() <= eta);
            }
        }

        #[test]
        fn steps_descend(seed in 0u64..1000) {
            let ds = synthesize_logistic(80, 4, seed, 1.0).unwrap().dataset;
            let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), 0.01).unwrap();
            let mut x = random_vec(4, seed, 5.0);
            for _ in 0..4 {
                let (next, rep) = newton_step(&obj, &x, &NewtonConfig::default()).unwrap();
                if rep.lambda > 1e-6 {
                    prop_assert!(obj.value(&next).unwrap() < obj.value(&x).unwrap());
                }
                x = next;
            }
        }
    }
}
