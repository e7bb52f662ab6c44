//! JSON experiment configuration.
//!
//! Every optional field has a declared default; [`ExperimentConfig::resolve`]
//! fills them in so the `config.json` written next to a trace replays the run
//! exactly.

use std::path::PathBuf;

use dynanewton_core::continuation::{ContinuationConfig, Schedule};
use dynanewton_core::lbfgs::LbfgsConfig;
use dynanewton_core::newton::NewtonConfig;
use dynanewton_core::objective::LossKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Newton,
    DynaNewtonV1,
    DynaNewtonV2,
    Saga,
    Lbfgs,
    DynaLbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Logistic,
    Quadratic,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Logistic => LossKind::Logistic,
            Loss::Quadratic => LossKind::Quadratic,
        }
    }
}

fn default_test_fraction() -> f64 {
    0.1
}

/// Where the samples come from. Unless a separate test file is given, the
/// data is shuffled once with `split_seed` and split into train and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Svmlight {
        path: PathBuf,
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        split_seed: u64,
    },
    /// Sparse binary surrogate with the shape of w8a.
    W8aLike {
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        split_seed: u64,
    },
    /// Dense Gaussian rows labelled by a planted logistic model.
    Logistic {
        n: usize,
        d: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        split_seed: u64,
    },
}

fn default_margin() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Adaptive,
    FixedAlpha { alpha: f64 },
    Apriori,
    AlphaStar,
}

impl From<ScheduleSpec> for Schedule {
    fn from(s: ScheduleSpec) -> Self {
        match s {
            ScheduleSpec::Adaptive => Schedule::Adaptive,
            ScheduleSpec::FixedAlpha { alpha } => Schedule::FixedAlpha(alpha),
            ScheduleSpec::Apriori => Schedule::Apriori,
            ScheduleSpec::AlphaStar => Schedule::AlphaStar,
        }
    }
}

impl From<Schedule> for ScheduleSpec {
    fn from(s: Schedule) -> Self {
        match s {
            Schedule::Adaptive => ScheduleSpec::Adaptive,
            Schedule::FixedAlpha(alpha) => ScheduleSpec::FixedAlpha { alpha },
            Schedule::Apriori => ScheduleSpec::Apriori,
            Schedule::AlphaStar => ScheduleSpec::AlphaStar,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSection {
    pub ls_alpha: Option<f64>,
    pub ls_beta: Option<f64>,
    pub eps: Option<f64>,
    pub max_iters: Option<usize>,
    pub fixed_iters: Option<usize>,
    /// `null` keeps the default radius; a negative value disables the
    /// certified full step.
    pub full_step_radius: Option<f64>,
}

impl NewtonSection {
    pub fn to_core(&self) -> NewtonConfig {
        let d = NewtonConfig::default();
        NewtonConfig {
            ls_alpha: self.ls_alpha.unwrap_or(d.ls_alpha),
            ls_beta: self.ls_beta.unwrap_or(d.ls_beta),
            eps: self.eps.unwrap_or(d.eps),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            fixed_iters: self.fixed_iters.or(d.fixed_iters),
            full_step_radius: match self.full_step_radius {
                Some(r) if r < 0.0 => None,
                Some(r) => Some(r),
                None => d.full_step_radius,
            },
            max_halvings: d.max_halvings,
        }
    }

    fn resolved(&self) -> Self {
        let c = self.to_core();
        Self {
            ls_alpha: Some(c.ls_alpha),
            ls_beta: Some(c.ls_beta),
            eps: Some(c.eps),
            max_iters: Some(c.max_iters),
            fixed_iters: c.fixed_iters,
            full_step_radius: Some(c.full_step_radius.unwrap_or(-1.0)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationSection {
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub bound_c: Option<f64>,
    pub m0: Option<usize>,
    pub schedule: Option<ScheduleSpec>,
    pub alpha_grid: Option<Vec<f64>>,
}

impl ContinuationSection {
    /// Core configuration with `μ0` chosen so that the coupled schedule ends
    /// at `nu_final` on `total` rows.
    pub fn to_core(&self, solver: SolverKind, dim: usize, total: usize, nu_final: f64) -> ContinuationConfig {
        let d = ContinuationConfig::default();
        let mut cfg = ContinuationConfig {
            eta: self.eta.unwrap_or(d.eta),
            beta: self.beta.unwrap_or(d.beta),
            bound_c: self.bound_c.unwrap_or(d.bound_c),
            m0: self.m0,
            mu0: None,
            schedule: match (solver, self.schedule) {
                (_, Some(s)) => s.into(),
                (SolverKind::DynaNewtonV1, None) => Schedule::Apriori,
                _ => Schedule::Adaptive,
            },
            alpha_grid: self.alpha_grid.clone().unwrap_or(d.alpha_grid),
        };
        if let Ok((m0, _)) = cfg.resolve(dim, total) {
            cfg.m0 = Some(m0);
            cfg.mu0 = Some(nu_final * total as f64 / m0 as f64);
        }
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfgsSection {
    pub memory: Option<usize>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub stage_iters: Option<usize>,
}

impl LbfgsSection {
    pub fn to_core(&self) -> LbfgsConfig {
        let d = LbfgsConfig::default();
        LbfgsConfig {
            memory: self.memory.unwrap_or(d.memory),
            tol: self.tol.unwrap_or(d.tol),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            stage_iters: self.stage_iters.unwrap_or(d.stage_iters),
            ..d
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SagaSection {
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub solver: SolverKind,
    #[serde(default)]
    pub loss: Loss,
    /// Regularization of the full problem; `1/N` when unset.
    #[serde(default)]
    pub nu_final: Option<f64>,
    /// Every coordinate of the starting point.
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub newton: NewtonSection,
    #[serde(default)]
    pub continuation: ContinuationSection,
    #[serde(default)]
    pub lbfgs: LbfgsSection,
    #[serde(default)]
    pub saga: SagaSection,
    /// Output directory; the `run` subcommand's `--out` overrides it.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Record wall time in the trace; with `false` the `time_s` column is
    /// zero and repeated runs produce byte-identical traces.
    #[serde(default = "default_true")]
    pub wall_clock: bool,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// Fill every default that depends only on the training set shape.
    pub fn resolve(&self, dim: usize, total: usize) -> ExperimentConfig {
        let nu_final = self.nu_final.unwrap_or(1.0 / total as f64);
        let cont = self.continuation.to_core(self.solver, dim, total, nu_final);
        let lbfgs = self.lbfgs.to_core();
        ExperimentConfig {
            nu_final: Some(nu_final),
            newton: self.newton.resolved(),
            continuation: ContinuationSection {
                eta: Some(cont.eta),
                beta: Some(cont.beta),
                bound_c: Some(cont.bound_c),
                m0: cont.m0,
                schedule: Some(cont.schedule.into()),
                alpha_grid: Some(cont.alpha_grid),
            },
            lbfgs: LbfgsSection {
                memory: Some(lbfgs.memory),
                tol: Some(lbfgs.tol),
                max_iters: Some(lbfgs.max_iters),
                stage_iters: Some(lbfgs.stage_iters),
            },
            saga: SagaSection {
                epochs: Some(self.saga.epochs.unwrap_or(30)),
                seed: Some(self.saga.seed.unwrap_or(0)),
                step: self.saga.step,
            },
            ..self.clone()
        }
    }
}
