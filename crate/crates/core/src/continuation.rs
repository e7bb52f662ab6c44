//! Newton continuation over growing sample prefixes.
//!
//! A stage is a pair `(μ_t, m_t)`: the objective `f^{S_{1:m_t}}_{μ_t}`. Stages
//! are coupled through `μ_t · m_t = μ₀ · m₀`, so growing the prefix by a factor
//! `1/α` shrinks the regularizer by `α`. The driver takes one Newton step per
//! stage (or a fixed handful) and relies on the previous iterate already
//! sitting inside the quadratic convergence region `λ ≤ η` of the next stage.
//!
//! Two ways of choosing `α` are provided:
//!
//! * a-priori schedules ([`Schedule::FixedAlpha`], [`Schedule::Apriori`],
//!   [`Schedule::AlphaStar`]) derived from worst-case bounds, and
//! * the data-adaptive [`Schedule::Adaptive`] rule, which estimates the
//!   decrement of each candidate stage from the current Hessian factorization
//!   and the gradients of the rows that would be added.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::linalg::SpdFactorization;
use crate::math;
use crate::newton::{take_step, LocalModel, NewtonConfig, DEFAULT_ETA};
use crate::objective::{LossKind, LossSums, RegularizedObjective};
use crate::work::{Monitor, Progress, Work, WorkEvent};
use crate::{Error, Result};

/// Uniform-convergence bound model `𝒱(m) = c · d / m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizationBound {
    pub c: f64,
    pub capacity: usize,
}

impl GeneralizationBound {
    pub fn value(&self, m: usize) -> f64 {
        self.c * self.capacity as f64 / m as f64
    }
}

/// How the increment factor `α = m_{t-1} / m_t` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Smallest grid `α` whose estimated decrement stays within `η`.
    Adaptive,
    /// The same `α` at every stage.
    FixedAlpha(f64),
    /// Constant ratio from the loss bound `Φ` ([`nu_lower_bound_apriori`]).
    Apriori,
    /// Per-stage root of the sample-growth cubic ([`alpha_star`]).
    AlphaStar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationConfig {
    /// Radius of the quadratic convergence region, in `(0, 1/4)`.
    pub eta: f64,
    /// Free parameter of the sample-growth bound.
    pub beta: f64,
    /// Constant `c` in `𝒱(m) = c·d/m`.
    pub bound_c: f64,
    /// Initial prefix; `max(4d, 128)` (capped at `N`) when unset.
    pub m0: Option<usize>,
    /// Initial regularization; `1/m0` when unset.
    pub mu0: Option<f64>,
    pub schedule: Schedule,
    /// Candidate `α` values for the adaptive rule, strictly descending.
    pub alpha_grid: Vec<f64>,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_ETA,
            beta: 1.0,
            bound_c: 1.0,
            m0: None,
            mu0: None,
            schedule: Schedule::Adaptive,
            alpha_grid: vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.25],
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("{msg} ({self:?})")));
        if !(self.eta > 0.0 && self.eta < 0.25) {
            return bad("eta must lie in (0, 1/4)");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.bound_c >= 0.0 && self.bound_c.is_finite()) {
            return bad("bound constant must be >= 0");
        }
        if self.m0 == Some(0) {
            return bad("m0 must be at least 1");
        }
        if self.mu0.is_some_and(|mu| !(mu > 0.0 && mu.is_finite())) {
            return bad("mu0 must be positive");
        }
        if self.alpha_grid.is_empty()
            || self.alpha_grid.iter().any(|&a| !(a > 0.0 && a < 1.0))
            || self.alpha_grid.windows(2).any(|w| w[0] <= w[1])
        {
            return bad("alpha grid must be strictly descending within (0, 1)");
        }
        if let Schedule::FixedAlpha(a) = self.schedule {
            if !(a > 0.0 && a < 1.0) {
                return bad("fixed alpha must lie in (0, 1)");
            }
        }
        Ok(())
    }

    /// Concrete `(m0, μ0)` for a dataset with `dim` features and `total` rows.
    pub fn resolve(&self, dim: usize, total: usize) -> Result<(usize, f64)> {
        let m0 = match self.m0 {
            Some(m0) if m0 > total => {
                return Err(Error::PrefixOutOfRange {
                    requested: m0,
                    available: total,
                })
            }
            Some(m0) => m0,
            None => (4 * dim).max(128).min(total),
        };
        if m0 == 0 {
            return Err(Error::InvalidDataset("empty training set".into()));
        }
        Ok((m0, self.mu0.unwrap_or(1.0 / m0 as f64)))
    }
}

/// History of one continuation stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub t: usize,
    pub m: usize,
    pub mu: f64,
    /// `m_{t-1} / m_t`; 1 for the initial stage.
    pub alpha: f64,
    /// Exact decrement of this stage's objective at the previous iterate.
    pub lambda_handover: f64,
    /// Estimate that drove the growth decision (adaptive schedule only).
    pub lambda_estimate: Option<f64>,
    /// No candidate passed the test and the smallest growth step was forced.
    pub forced: bool,
    /// Cumulative effective epochs when the stage finished.
    pub epochs_used: f64,
}

fn shrink_from_b(mu: f64, b: f64) -> f64 {
    if b.is_infinite() {
        return 0.0;
    }
    // √(B²+4B) − B written without cancellation
    let gap = 4.0 * b / (math::sqrt(b * b + 4.0 * b) + b);
    mu * (1.0 - 0.5 * gap)
}

/// Smallest `ν ≤ μ` for which the decrement of `f_ν` at `x*_μ` is at most `η`,
/// given `‖x*_μ‖`.
///
/// At the returned value `(μ − ν)‖x*_μ‖ = η √ν`.
pub fn nu_lower_bound(mu: f64, x_norm: f64, eta: f64) -> f64 {
    if x_norm == 0.0 {
        return 0.0;
    }
    shrink_from_b(mu, eta * eta / (mu * x_norm * x_norm))
}

/// Data-free variant of [`nu_lower_bound`] using `‖x*_μ‖² ≤ 2Φ/μ`, where `Φ`
/// bounds the loss at the origin. The ratio `ν/μ` it yields is constant.
pub fn nu_lower_bound_apriori(mu: f64, phi: f64, eta: f64) -> f64 {
    shrink_from_b(mu, eta * eta / (2.0 * phi))
}

/// Smallest `α ∈ [0, 1]` such that, with `u = 1 − α`,
///
/// `(1+β) μ² ‖x‖² u² + (1+1/β) 2L 𝒱(m) u³ ≤ μ η²`.
///
/// With `β = 1` this is `μ²‖x‖²u² + 2L𝒱(m)u³ ≤ μη²/2`. The left side grows
/// with `u`, so the boundary is found by bisection to `1e-12`. A return value
/// of 0 means every `α` passes; values near 1 mean the sample cannot grow.
#[allow(clippy::too_many_arguments)]
pub fn alpha_star(
    mu: f64,
    m: usize,
    x_norm: f64,
    lipschitz: f64,
    bound: &GeneralizationBound,
    eta: f64,
    beta: f64,
) -> f64 {
    let quad = (1.0 + beta) * mu * mu * x_norm * x_norm;
    let cubic = (1.0 + 1.0 / beta) * 2.0 * lipschitz * bound.value(m);
    let rhs = mu * eta * eta;
    let lhs = |u: f64| quad * u * u + cubic * u * u * u;
    if lhs(1.0) <= rhs {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if lhs(mid) <= rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    1.0 - lo
}

/// Loss sums at a fixed point over the rows that follow a prefix, extended
/// lazily as larger prefixes are queried.
#[derive(Debug, Clone)]
pub struct GradientCache {
    x: Vec<f64>,
    start: usize,
    sums: LossSums,
}

impl GradientCache {
    /// Cache for rows `start..` at `x`. Curvature is accumulated as well when
    /// `with_hessian` is set, so a chosen candidate needs no further pass.
    pub fn new(x: &[f64], start: usize, with_hessian: bool) -> Self {
        Self {
            x: x.to_vec(),
            start,
            sums: LossSums::new(x.len(), with_hessian),
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// One past the last cached row.
    pub fn end(&self) -> usize {
        self.start + self.sums.rows
    }

    pub fn point(&self) -> &[f64] {
        &self.x
    }

    /// Cache rows up to `n`; returns how many rows were newly touched.
    pub fn extend_to(&mut self, loss: LossKind, ds: &Dataset, n: usize) -> Result<usize> {
        if n > ds.len() {
            return Err(Error::PrefixOutOfRange {
                requested: n,
                available: ds.len(),
            });
        }
        let end = self.end();
        if n < end {
            return Err(Error::InvalidConfig(format!(
                "gradient cache already covers {end} rows, cannot shrink to {n}"
            )));
        }
        self.sums.accumulate(loss, ds.full(), end..n, &self.x);
        Ok(n - end)
    }

    /// `Σ_{k ∈ start..end} ∇φ(z_k, x)`.
    pub fn gradient_sum(&self) -> &[f64] {
        &self.sums.gradient
    }
}

/// Gradient of `f^{S_{1:n}}_ν` at `x` assuming `x` minimizes `f^{S_{1:m}}_μ`:
///
/// `(1/n) Σ_{k=m+1..n} ∇φ(z_k, x) + ν (1 − μm/(νn)) x`.
///
/// The cache must start at `m` and be taken at `x`; it is extended to `n`.
/// For an inexact `x` the true gradient is this plus `(m/n) ∇f^{S_{1:m}}_μ(x)`.
#[allow(clippy::too_many_arguments)]
pub fn extended_gradient(
    loss: LossKind,
    ds: &Dataset,
    mu: f64,
    m: usize,
    x: &[f64],
    nu: f64,
    n: usize,
    cache: &mut GradientCache,
) -> Result<Vec<f64>> {
    if cache.start != m || cache.x != x {
        return Err(Error::InvalidConfig(
            "gradient cache taken at a different point or prefix".into(),
        ));
    }
    if n < m || nu > mu {
        return Err(Error::InvalidConfig(format!(
            "extension must grow the sample and shrink the regularizer (m={m}, n={n}, mu={mu}, nu={nu})"
        )));
    }
    cache.extend_to(loss, ds, n)?;
    if cache.end() != n {
        return Err(Error::InvalidConfig(format!(
            "gradient cache covers {} rows past {n}",
            cache.end() - n
        )));
    }
    Ok(extend(cache.gradient_sum(), mu, m, x, nu, n))
}

fn extend(new_sum: &[f64], mu: f64, m: usize, x: &[f64], nu: f64, n: usize) -> Vec<f64> {
    let inv_n = 1.0 / n as f64;
    // ν (1 − μm/(νn)) expanded so that ν = 0 is allowed
    let shrink = nu - mu * m as f64 * inv_n;
    new_sum
        .iter()
        .zip(x)
        .map(|(g, xi)| g * inv_n + shrink * xi)
        .collect()
}

/// Estimate of `λ²` for the objective with regularizer shrunk from `μ` to `ν`,
/// from a factorization `F` of the Hessian at strength `μ`:
///
/// `gᵀF⁻¹g + (μ − ν) ‖F⁻¹g‖²`
///
/// which is the first-order expansion of `gᵀ(H − (μ−ν)I)⁻¹g`.
pub fn taylor_decrement_estimate(f: &SpdFactorization, g: &[f64], mu: f64, nu: f64) -> f64 {
    let quad = f.quad_form_inv(g);
    if mu == nu {
        return quad;
    }
    let h_inv_g = f.solve(g);
    quad + (mu - nu) * math::norm_sq(&h_inv_g)
}

/// Solved stage handed to [`find_growth`].
#[derive(Debug, Clone, Copy)]
pub struct StageSolution<'a> {
    pub x: &'a [f64],
    pub mu: f64,
    pub m: usize,
    /// Factorization of `∇²f^{S_{1:m}}_μ(x)`.
    pub factorization: &'a SpdFactorization,
    /// `∇f^{S_{1:m}}_μ(x)`; zero for an exact minimizer.
    pub gradient: &'a [f64],
}

/// Outcome of a growth decision.
#[derive(Debug, Clone, PartialEq)]
pub enum Growth {
    Grow {
        /// Realized ratio `m / n` after rounding and clamping.
        alpha: f64,
        nu: f64,
        n: usize,
        lambda_estimate: f64,
        /// No candidate passed; the smallest growth step was taken anyway.
        forced: bool,
    },
    /// The stage already covers the whole dataset.
    Done,
}

/// `n = round(m/α)`, at least `m + 1`, at most `total`.
fn grown_size(m: usize, alpha: f64, total: usize) -> usize {
    let target = m as f64 / alpha;
    if !(target < total as f64) {
        return total;
    }
    (math::round(target) as usize).max(m + 1).min(total)
}

struct Candidate {
    growth: Growth,
    new_rows: LossSums,
}

/// Descending grid scan behind [`find_growth`]; also returns the loss sums
/// of the chosen new rows and the number of rows the scan touched.
fn scan_growth(
    sol: &StageSolution<'_>,
    cfg: &ContinuationConfig,
    coupling: f64,
    loss: LossKind,
    ds: &Dataset,
    cache: &mut GradientCache,
) -> Result<(Option<Candidate>, usize)> {
    let total = ds.len();
    if sol.m >= total {
        return Ok((None, 0));
    }
    let mut touched = 0;
    let mut chosen: Option<Candidate> = None;
    let mut fallback: Option<Candidate> = None;
    let mut last_n = sol.m;
    for &grid_alpha in &cfg.alpha_grid {
        let n = grown_size(sol.m, grid_alpha, total);
        if n == last_n {
            continue;
        }
        last_n = n;
        let nu = coupling / n as f64;
        touched += cache.extend_to(loss, ds, n)?;
        let mut g = extend(cache.gradient_sum(), sol.mu, sol.m, sol.x, nu, n);
        // residual of the inexact inner solve; exact for the true gradient
        let w = sol.m as f64 / n as f64;
        g.iter_mut()
            .zip(sol.gradient)
            .for_each(|(gi, ri)| *gi += w * ri);
        let estimate = math::sqrt(taylor_decrement_estimate(sol.factorization, &g, sol.mu, nu).max(0.0));
        let feasible = estimate <= cfg.eta;
        let candidate = || Candidate {
            growth: Growth::Grow {
                alpha: sol.m as f64 / n as f64,
                nu,
                n,
                lambda_estimate: estimate,
                forced: !feasible,
            },
            new_rows: cache.sums.clone(),
        };
        if !feasible {
            if chosen.is_none() {
                fallback = Some(candidate());
            }
            break;
        }
        chosen = Some(candidate());
        if n == total {
            break;
        }
    }
    Ok((chosen.or(fallback), touched))
}

/// Pick the next stage by scanning `cfg.alpha_grid` from the largest `α`
/// down and keeping the smallest `α` whose estimated decrement is within
/// `η`. The scan stops at the first candidate that fails. When even the
/// largest `α` fails it is taken anyway and flagged as forced.
///
/// `coupling` is the product `μ₀ m₀`; the new strength is `coupling / n`.
/// The cache must start at `sol.m` and be taken at `sol.x`.
pub fn find_growth(
    sol: &StageSolution<'_>,
    cfg: &ContinuationConfig,
    coupling: f64,
    loss: LossKind,
    ds: &Dataset,
    cache: &mut GradientCache,
) -> Result<Growth> {
    if cache.start != sol.m || cache.x != sol.x {
        return Err(Error::InvalidConfig(
            "gradient cache taken at a different point or prefix".into(),
        ));
    }
    let (candidate, _) = scan_growth(sol, cfg, coupling, loss, ds, cache)?;
    Ok(candidate.map_or(Growth::Done, |c| c.growth))
}

#[derive(Debug, Clone)]
pub struct ContinuationOutcome {
    pub x: Vec<f64>,
    pub stages: Vec<StageRecord>,
    /// Decrement of the full objective at the final point.
    pub lambda: f64,
    /// Newton steps over all stages.
    pub iterations: usize,
}

/// Continuation Newton method from `x0` to the minimizer of the full
/// objective at strength `μ₀ m₀ / N`.
///
/// Stage 0 is solved to `newton_cfg.eps`. Each later stage grows the prefix
/// according to `cfg.schedule`, then takes `newton_cfg.fixed_iters` Newton
/// steps (one when unset), stopping early once the stage is solved to
/// `eps`. Once the prefix covers the dataset, Newton runs to `eps`.
///
/// A previous iterate whose decrement on the new stage exceeds `2η` aborts
/// with [`Error::HandoverViolation`].
pub fn dyna_newton(
    ds: &Dataset,
    loss: LossKind,
    x0: &[f64],
    cfg: &ContinuationConfig,
    newton_cfg: &NewtonConfig,
    work: &mut Work,
    monitor: &mut dyn Monitor,
) -> Result<ContinuationOutcome> {
    cfg.validate()?;
    newton_cfg.validate()?;
    if x0.len() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            got: x0.len(),
        });
    }
    let total = ds.len();
    let (m0, mu0) = cfg.resolve(ds.dim(), total)?;
    let coupling = mu0 * m0 as f64;
    let inner_steps = newton_cfg.fixed_iters.unwrap_or(1);
    let solved = |lambda: f64| lambda * lambda / 2.0 <= newton_cfg.eps;

    let loss_lipschitz = match cfg.schedule {
        Schedule::AlphaStar => RegularizedObjective::new(loss, ds.full(), 0.0)?.lipschitz_estimate(),
        _ => 0.0,
    };
    let phi = RegularizedObjective::new(loss, ds.full(), 0.0)?.phi_bound();
    let bound = GeneralizationBound {
        c: cfg.bound_c,
        capacity: ds.dim(),
    };

    let mut x = x0.to_vec();
    let mut m = m0;
    let mut mu = mu0;
    let mut stages: Vec<StageRecord> = Vec::new();
    let mut iterations = 0;
    monitor.observe(&Progress {
        epochs: work.epochs(),
        x: &x,
        lambda: None,
        stage: Some(0),
    });

    let evaluate = |x: &[f64], m: usize, work: &mut Work| -> LossSums {
        let mut sums = LossSums::new(x.len(), true);
        sums.accumulate(loss, ds.full(), 0..m, x);
        work.charge(WorkEvent::NewtonEvaluation { n: m });
        sums
    };

    let mut sums = evaluate(&x, m, work);
    let mut t = 0;
    let mut alpha = 1.0;
    let mut lambda_estimate = None;
    let mut forced = false;
    loop {
        let tag = |e: Error| e.at_stage(t);
        let obj = RegularizedObjective::new(loss, ds.prefix(m)?, mu)?;
        let mut model = LocalModel::from_eval(sums.clone().finish(mu, &x)?).map_err(tag)?;
        let lambda_handover = model.lambda;
        if t > 0 && lambda_handover > 2.0 * cfg.eta {
            return Err(Error::HandoverViolation {
                stage: t,
                lambda: lambda_handover,
                limit: 2.0 * cfg.eta,
            });
        }

        // stage 0 and the full problem are solved to tolerance
        let to_tolerance = t == 0 || m == total;
        let budget = if to_tolerance {
            newton_cfg.max_iters
        } else {
            inner_steps
        };
        let mut steps = 0;
        while !solved(model.lambda) {
            if steps == budget {
                if to_tolerance {
                    return Err(Error::NotConverged {
                        iterations: steps,
                        stage: Some(t),
                    });
                }
                break;
            }
            let lambda = model.lambda;
            let (next, report) = take_step(&obj, &x, model, newton_cfg).map_err(tag)?;
            for _ in 0..report.ls_trials {
                work.charge(WorkEvent::LineSearchTrial { n: m });
            }
            x = next;
            steps += 1;
            monitor.observe(&Progress {
                epochs: work.epochs(),
                x: &x,
                lambda: Some(lambda),
                stage: Some(t),
            });
            sums = evaluate(&x, m, work);
            model = LocalModel::from_eval(sums.clone().finish(mu, &x)?).map_err(tag)?;
        }
        iterations += steps;
        stages.push(StageRecord {
            t,
            m,
            mu,
            alpha,
            lambda_handover,
            lambda_estimate,
            forced,
            epochs_used: work.epochs(),
        });
        if m == total {
            return Ok(ContinuationOutcome {
                x,
                stages,
                lambda: model.lambda,
                iterations,
            });
        }

        // grow the sample
        let (n, new_rows) = match cfg.schedule {
            Schedule::Adaptive => {
                let mut cache = GradientCache::new(&x, m, true);
                let sol = StageSolution {
                    x: &x,
                    mu,
                    m,
                    factorization: &model.factorization,
                    gradient: &model.eval.gradient,
                };
                let (candidate, touched) = scan_growth(&sol, cfg, coupling, loss, ds, &mut cache)?;
                work.charge(WorkEvent::GrowthRows { rows: touched });
                match candidate {
                    Some(Candidate {
                        growth:
                            Growth::Grow {
                                n,
                                lambda_estimate: estimate,
                                forced: was_forced,
                                ..
                            },
                        new_rows,
                    }) => {
                        lambda_estimate = Some(estimate);
                        forced = was_forced;
                        (n, new_rows)
                    }
                    _ => unreachable!("m < N always yields a candidate"),
                }
            }
            schedule => {
                let a = match schedule {
                    Schedule::FixedAlpha(a) => a,
                    Schedule::Apriori => nu_lower_bound_apriori(1.0, phi, cfg.eta),
                    _ => alpha_star(
                        mu,
                        m,
                        math::sqrt(2.0 * phi / mu),
                        loss_lipschitz,
                        &bound,
                        cfg.eta,
                        cfg.beta,
                    ),
                };
                // a bound that forbids growth still has to make progress
                forced = !(a < 1.0);
                let a = if forced { cfg.alpha_grid[0] } else { a };
                let n = grown_size(m, a.max(f64::MIN_POSITIVE), total);
                let mut new_rows = LossSums::new(x.len(), true);
                new_rows.accumulate(loss, ds.full(), m..n, &x);
                work.charge(WorkEvent::GrowthRows { rows: n - m });
                lambda_estimate = None;
                (n, new_rows)
            }
        };
        sums.merge(&new_rows);
        alpha = m as f64 / n as f64;
        m = n;
        mu = coupling / n as f64;
        t += 1;
    }
}
