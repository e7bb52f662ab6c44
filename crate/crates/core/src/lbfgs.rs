//! Limited-memory BFGS and its continuation variant.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use crate::continuation::{ContinuationConfig, StageRecord};
use crate::dataset::Dataset;
use crate::math;
use crate::newton::{DEFAULT_LS_ALPHA, DEFAULT_LS_BETA};
use crate::objective::{EvalReport, LossKind, LossSums, RegularizedObjective};
use crate::work::{Monitor, Progress, Work, WorkEvent};
use crate::{Error, Result};

/// Relative curvature threshold below which a pair is not stored.
pub const CURVATURE_EPS: f64 = 1e-12;

/// Ring buffer of the most recent `(s, y)` pairs.
#[derive(Debug, Clone)]
pub struct LbfgsMemory {
    capacity: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
    accepted: usize,
    skipped: usize,
}

impl LbfgsMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "L-BFGS memory needs room for a pair");
        Self {
            capacity,
            pairs: VecDeque::with_capacity(capacity),
            accepted: 0,
            skipped: 0,
        }
    }

    /// Store a pair if `⟨s, y⟩ > 1e-12 ‖s‖ ‖y‖`; returns whether it was kept.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = math::dot(&s, &y);
        if !(sy > CURVATURE_EPS * math::norm(&s) * math::norm(&y)) {
            self.skipped += 1;
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        self.accepted += 1;
        true
    }

    /// Initial inverse-Hessian scale `⟨s,y⟩/⟨y,y⟩` of the newest pair.
    pub fn gamma(&self) -> f64 {
        self.pairs
            .back()
            .map_or(1.0, |(s, y)| math::dot(s, y) / math::norm_sq(y))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.pairs.iter().map(|(s, y)| (s.as_slice(), y.as_slice()))
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

/// `−Ĥ⁻¹ g` by the two-loop recursion; `−g` for an empty memory.
pub fn two_loop_direction(mem: &LbfgsMemory, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y) in mem.pairs.iter().rev() {
        let rho = 1.0 / math::dot(s, y);
        let a = rho * math::dot(s, &q);
        math::axpy(-a, y, &mut q);
        alphas.push((a, rho));
    }
    let gamma = mem.gamma();
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y), (a, rho)) in mem.pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * math::dot(y, &q);
        math::axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub ls_alpha: f64,
    pub ls_beta: f64,
    /// Stop once `‖∇f‖ <= tol`.
    pub tol: f64,
    pub max_iters: usize,
    pub max_halvings: u32,
    /// L-BFGS iterations per intermediate continuation stage.
    pub stage_iters: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            ls_alpha: DEFAULT_LS_ALPHA,
            ls_beta: DEFAULT_LS_BETA,
            tol: 1e-8,
            max_iters: 10_000,
            max_halvings: 60,
            stage_iters: 1,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.memory > 0
            && self.ls_alpha > 0.0
            && self.ls_alpha < 0.5
            && self.ls_beta > 0.0
            && self.ls_beta < 1.0
            && self.tol >= 0.0
            && self.stage_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `false` when the iteration budget ran out or the line search stalled.
    pub converged: bool,
    pub stalled: bool,
    pub grad_norm: f64,
    pub memory: LbfgsMemory,
}

/// Value, gradient and the raw loss sums behind them at one point.
struct Point {
    x: Vec<f64>,
    eval: EvalReport,
    sums: LossSums,
}

fn evaluate_at(loss: LossKind, ds: &Dataset, n: usize, nu: f64, x: Vec<f64>) -> Result<Point> {
    let mut sums = LossSums::new(x.len(), false);
    sums.accumulate(loss, ds.full(), 0..n, &x);
    let eval = sums.clone().finish(nu, &x)?;
    Ok(Point { x, eval, sums })
}

/// One L-BFGS iteration with Armijo backtracking; every trial is a fused
/// value-and-gradient pass. Returns `None` when the line search stalls.
#[allow(clippy::too_many_arguments)]
fn iterate(
    loss: LossKind,
    ds: &Dataset,
    n: usize,
    nu: f64,
    at: &Point,
    mem: &mut LbfgsMemory,
    cfg: &LbfgsConfig,
    work: &mut Work,
) -> Result<Option<Point>> {
    let g = &at.eval.gradient;
    let mut dir = two_loop_direction(mem, g);
    let mut slope = math::dot(g, &dir);
    if !(slope < 0.0) {
        // stale curvature information: restart from steepest descent
        *mem = LbfgsMemory {
            pairs: VecDeque::with_capacity(mem.capacity),
            ..mem.clone()
        };
        dir = g.iter().map(|v| -v).collect();
        slope = -math::norm_sq(g);
    }
    let mut t = if mem.is_empty() {
        (1.0 / math::norm(g)).min(1.0)
    } else {
        1.0
    };
    for _ in 0..=cfg.max_halvings {
        let trial: Vec<f64> = at.x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
        work.charge(WorkEvent::GradientEvaluation { n });
        match evaluate_at(loss, ds, n, nu, trial) {
            Ok(next) if next.eval.value <= at.eval.value + cfg.ls_alpha * t * slope => {
                let s = next.x.iter().zip(&at.x).map(|(a, b)| a - b).collect();
                let y = next
                    .eval
                    .gradient
                    .iter()
                    .zip(g)
                    .map(|(a, b)| a - b)
                    .collect();
                mem.push(s, y);
                return Ok(Some(next));
            }
            Ok(_) | Err(Error::NonFinite(_)) => t *= cfg.ls_beta,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// L-BFGS with backtracking line search until `‖∇f‖ <= cfg.tol`.
pub fn lbfgs_minimize(
    obj: &RegularizedObjective<'_>,
    x0: &[f64],
    cfg: &LbfgsConfig,
    work: &mut Work,
    monitor: &mut dyn Monitor,
) -> Result<LbfgsOutcome> {
    cfg.validate()?;
    if x0.len() != obj.dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.dim(),
            got: x0.len(),
        });
    }
    let (ds, n) = (obj.view().dataset(), obj.n());
    let mut mem = LbfgsMemory::new(cfg.memory);
    run_stage(
        obj.loss(),
        ds,
        n,
        obj.nu(),
        x0.to_vec(),
        &mut mem,
        cfg,
        StageBudget::Tolerance,
        work,
        monitor,
        None,
    )
    .map(|(point, iterations, stalled)| {
        let grad_norm = math::norm(&point.eval.gradient);
        LbfgsOutcome {
            x: point.x,
            iterations,
            converged: !stalled && grad_norm <= cfg.tol,
            stalled,
            grad_norm,
            memory: mem,
        }
    })
}

#[derive(Clone, Copy)]
enum StageBudget {
    Tolerance,
    Steps(usize),
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    loss: LossKind,
    ds: &Dataset,
    n: usize,
    nu: f64,
    x0: Vec<f64>,
    mem: &mut LbfgsMemory,
    cfg: &LbfgsConfig,
    budget: StageBudget,
    work: &mut Work,
    monitor: &mut dyn Monitor,
    stage: Option<usize>,
) -> Result<(Point, usize, bool)> {
    monitor.observe(&Progress {
        epochs: work.epochs(),
        x: &x0,
        lambda: None,
        stage,
    });
    work.charge(WorkEvent::GradientEvaluation { n });
    let start = evaluate_at(loss, ds, n, nu, x0)?;
    continue_stage(loss, ds, n, nu, start, mem, cfg, budget, work, monitor, stage)
}

#[allow(clippy::too_many_arguments)]
fn continue_stage(
    loss: LossKind,
    ds: &Dataset,
    n: usize,
    nu: f64,
    mut point: Point,
    mem: &mut LbfgsMemory,
    cfg: &LbfgsConfig,
    budget: StageBudget,
    work: &mut Work,
    monitor: &mut dyn Monitor,
    stage: Option<usize>,
) -> Result<(Point, usize, bool)> {
    let limit = match budget {
        StageBudget::Tolerance => cfg.max_iters,
        StageBudget::Steps(k) => k,
    };
    let mut iterations = 0;
    while iterations < limit && math::norm(&point.eval.gradient) > cfg.tol {
        match iterate(loss, ds, n, nu, &point, mem, cfg, work)? {
            Some(next) => point = next,
            None => return Ok((point, iterations, true)),
        }
        iterations += 1;
        monitor.observe(&Progress {
            epochs: work.epochs(),
            x: &point.x,
            lambda: None,
            stage,
        });
    }
    Ok((point, iterations, false))
}

#[derive(Debug, Clone)]
pub struct DynaLbfgsOutcome {
    pub x: Vec<f64>,
    pub stages: Vec<StageRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub memory: LbfgsMemory,
}

/// Continuation driver with L-BFGS steps in place of Newton steps.
///
/// A candidate stage `(ν, n)` is accepted when the gradient of the new
/// objective at the current iterate satisfies `‖∇f‖ <= η √ν`, which implies
/// a decrement of at most `η`. The grid scan, the coupling `ν n = μ₀ m₀` and
/// the forced minimal growth follow [`crate::continuation::dyna_newton`].
/// Stage 0 and the full problem are solved to `cfg.tol`; intermediate stages
/// take `cfg.stage_iters` iterations. The quasi-Newton memory is carried
/// across stages.
pub fn dyna_lbfgs(
    ds: &Dataset,
    loss: LossKind,
    x0: &[f64],
    ccfg: &ContinuationConfig,
    cfg: &LbfgsConfig,
    work: &mut Work,
    monitor: &mut dyn Monitor,
) -> Result<DynaLbfgsOutcome> {
    ccfg.validate()?;
    cfg.validate()?;
    if x0.len() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            got: x0.len(),
        });
    }
    let total = ds.len();
    let (m0, mu0) = ccfg.resolve(ds.dim(), total)?;
    let coupling = mu0 * m0 as f64;
    let mut mem = LbfgsMemory::new(cfg.memory);
    let mut stages = Vec::new();

    let (mut m, mut mu) = (m0, mu0);
    let lambda0;
    let (mut point, mut iterations, mut stalled) = {
        work.charge(WorkEvent::GradientEvaluation { n: m });
        let start = evaluate_at(loss, ds, m, mu, x0.to_vec())?;
        lambda0 = math::norm(&start.eval.gradient) / math::sqrt(mu);
        monitor.observe(&Progress {
            epochs: work.epochs(),
            x: &start.x,
            lambda: None,
            stage: Some(0),
        });
        continue_stage(loss, ds, m, mu, start, &mut mem, cfg, StageBudget::Tolerance, work, monitor, Some(0))?
    };
    stages.push(StageRecord {
        t: 0,
        m,
        mu,
        alpha: 1.0,
        lambda_handover: lambda0,
        lambda_estimate: None,
        forced: false,
        epochs_used: work.epochs(),
    });

    let mut t = 0;
    while m < total && !stalled {
        t += 1;
        // growth on the gradient-norm proxy
        let mut new_rows = LossSums::new(ds.dim(), false);
        let mut chosen: Option<(usize, f64, LossSums, f64, bool)> = None;
        let mut last_n = m;
        for &a in &ccfg.alpha_grid {
            let n = grown(m, a, total);
            if n == last_n {
                continue;
            }
            new_rows.accumulate(loss, ds.full(), last_n..n, &point.x);
            work.charge(WorkEvent::GrowthRows { rows: n - last_n });
            last_n = n;
            let nu = coupling / n as f64;
            let mut merged = point.sums.clone();
            merged.merge(&new_rows);
            let g = merged.clone().finish(nu, &point.x)?.gradient;
            let proxy = math::norm(&g) / math::sqrt(nu);
            let feasible = proxy <= ccfg.eta;
            if !feasible {
                if chosen.is_none() {
                    chosen = Some((n, nu, merged, proxy, true));
                }
                break;
            }
            chosen = Some((n, nu, merged, proxy, false));
            if n == total {
                break;
            }
        }
        let (n, nu, sums, proxy, forced) = chosen.expect("m < N always yields a candidate");
        let alpha = m as f64 / n as f64;
        m = n;
        mu = nu;
        let eval = sums.clone().finish(mu, &point.x)?;
        let handover = math::norm(&eval.gradient) / math::sqrt(mu);
        let budget = if m == total {
            StageBudget::Tolerance
        } else {
            StageBudget::Steps(cfg.stage_iters)
        };
        let start = Point {
            x: point.x,
            eval,
            sums,
        };
        let (next, steps, halted) =
            continue_stage(loss, ds, m, mu, start, &mut mem, cfg, budget, work, monitor, Some(t))?;
        point = next;
        iterations += steps;
        stalled = halted;
        stages.push(StageRecord {
            t,
            m,
            mu,
            alpha,
            lambda_handover: handover,
            lambda_estimate: Some(proxy),
            forced,
            epochs_used: work.epochs(),
        });
    }
    let grad_norm = math::norm(&point.eval.gradient);
    Ok(DynaLbfgsOutcome {
        x: point.x,
        stages,
        iterations,
        converged: !stalled && m == total && grad_norm <= cfg.tol,
        grad_norm,
        memory: mem,
    })
}

fn grown(m: usize, alpha: f64, total: usize) -> usize {
    let target = m as f64 / alpha;
    if !(target < total as f64) {
        return total;
    }
    (math::round(target) as usize).max(m + 1).min(total)
}
