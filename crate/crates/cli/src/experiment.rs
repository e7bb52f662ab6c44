//! Loading data, running one solver and writing its artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use dynanewton_core::baselines::{saga_run, SagaConfig};
use dynanewton_core::continuation::{dyna_newton, StageRecord};
use dynanewton_core::dataset::{
    synthesize_logistic, synthesize_sparse_binary, train_test_split, Dataset, SparseBinarySpec,
};
use dynanewton_core::lbfgs::{dyna_lbfgs, lbfgs_minimize};
use dynanewton_core::newton::minimize;
use dynanewton_core::objective::{LossKind, RegularizedObjective};
use dynanewton_core::work::Work;
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, SolverKind};
use crate::reference::{reference_optimum, ReferenceError};
use crate::svmlight::{self, SvmlightError};
use crate::trace::{Recorder, Trace};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] SvmlightError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Core(#[from] dynanewton_core::Error),
}

impl HarnessError {
    /// 1 for numerical failures, 2 for usage and IO problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Reference(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
        move |source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Training and test sets after the one-off shuffle.
pub fn load_data(src: &DataSource) -> Result<(Dataset, Dataset), HarnessError> {
    let split = |ds: Dataset, f: f64, seed: u64| -> Result<(Dataset, Dataset), HarnessError> {
        if !(f > 0.0 && f < 1.0) {
            return Err(HarnessError::Usage(format!("test_fraction {f} must lie in (0, 1)")));
        }
        Ok(train_test_split(&ds, f, seed)?)
    };
    match src {
        DataSource::Svmlight {
            path,
            test_path: Some(test_path),
            split_seed,
            ..
        } => {
            let train = svmlight::read(path, None)?;
            let test = svmlight::read(test_path, Some(train.dim()))?;
            let dim = train.dim().max(test.dim());
            Ok((train.with_dim(dim)?.shuffled(*split_seed), test))
        }
        DataSource::Svmlight {
            path,
            test_path: None,
            test_fraction,
            split_seed,
        } => split(svmlight::read(path, None)?, *test_fraction, *split_seed),
        DataSource::W8aLike {
            seed,
            n,
            test_fraction,
            split_seed,
        } => {
            let mut spec = SparseBinarySpec::w8a_like(*seed);
            if let Some(n) = n {
                spec.n = *n;
            }
            split(synthesize_sparse_binary(&spec)?.dataset, *test_fraction, *split_seed)
        }
        DataSource::Logistic {
            n,
            d,
            seed,
            margin,
            test_fraction,
            split_seed,
        } => split(synthesize_logistic(*n, *d, *seed, *margin)?.dataset, *test_fraction, *split_seed),
    }
}

/// Data and reference value shared by several runs on the same problem.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub loss: LossKind,
    pub nu_final: f64,
    pub f_ref: f64,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<Self, HarnessError> {
        let (train, test) = load_data(&cfg.data)?;
        Self::from_split(train, test, cfg, cache_dir)
    }

    pub fn from_split(
        train: Dataset,
        test: Dataset,
        cfg: &ExperimentConfig,
        cache_dir: Option<&Path>,
    ) -> Result<Self, HarnessError> {
        let loss = cfg.loss.into();
        let nu_final = cfg.nu_final.unwrap_or(1.0 / train.len() as f64);
        if !(nu_final > 0.0 && nu_final.is_finite()) {
            return Err(HarnessError::Usage(format!("nu_final {nu_final} must be positive")));
        }
        let f_ref = reference_optimum(&train, loss, nu_final, cache_dir)?.value;
        Ok(Self {
            train,
            test,
            loss,
            nu_final,
            f_ref,
        })
    }
}

/// Serializable copy of [`StageRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub t: usize,
    pub m: usize,
    pub mu: f64,
    pub alpha: f64,
    pub lambda_handover: f64,
    pub lambda_estimate: Option<f64>,
    pub forced: bool,
    pub epochs_used: f64,
}

impl From<&StageRecord> for StageRow {
    fn from(s: &StageRecord) -> Self {
        Self {
            t: s.t,
            m: s.m,
            mu: s.mu,
            alpha: s.alpha,
            lambda_handover: s.lambda_handover,
            lambda_estimate: s.lambda_estimate,
            forced: s.forced,
            epochs_used: s.epochs_used,
        }
    }
}

/// Machine-readable description of a solver failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: String,
    pub message: String,
    pub stage: Option<usize>,
    pub lambda: Option<f64>,
    pub epochs: f64,
}

impl Failure {
    fn from_core(e: &dynanewton_core::Error, epochs: f64) -> Self {
        use dynanewton_core::Error as E;
        let (kind, stage, lambda) = match e {
            E::HandoverViolation { stage, lambda, .. } => ("handover_violation", Some(*stage), Some(*lambda)),
            E::Stalled { stage, lambda, .. } => ("stalled", *stage, Some(*lambda)),
            E::SingularHessian { stage, .. } => ("singular_hessian", *stage, None),
            E::NotConverged { stage, .. } => ("not_converged", *stage, None),
            E::NonFinite(_) => ("non_finite", None, None),
            _ => ("invalid_input", None, None),
        };
        Self {
            kind: kind.into(),
            message: e.to_string(),
            stage,
            lambda,
            epochs,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// Configuration with every default resolved.
    pub config: ExperimentConfig,
    pub f_ref: f64,
    pub trace: Trace,
    pub stages: Vec<StageRow>,
    pub x: Vec<f64>,
    pub epochs: f64,
    pub converged: bool,
    pub failure: Option<Failure>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.failure.is_none() && self.converged {
            0
        } else {
            1
        }
    }
}

/// Run the configured solver on prepared data. Solver failures are
/// reported in [`RunReport::failure`] together with the partial trace.
pub fn run_prepared(cfg: &ExperimentConfig, data: &Prepared) -> Result<RunReport, HarnessError> {
    let (train, loss) = (&data.train, data.loss);
    let n = train.len();
    let d = train.dim();
    let resolved = ExperimentConfig {
        nu_final: Some(data.nu_final),
        ..cfg.clone()
    }
    .resolve(d, n);
    let nu = data.nu_final;
    let full = RegularizedObjective::new(loss, train.full(), nu)?;
    let test = RegularizedObjective::new(loss, data.test.full(), 0.0)?;
    let x0 = vec![cfg.x0; d];
    let newton_cfg = resolved.newton.to_core();
    let cont_cfg = resolved.continuation.to_core(cfg.solver, d, n, nu);
    let lbfgs_cfg = resolved.lbfgs.to_core();

    let mut work = Work::new(n);
    let mut rec = Recorder::new(full, Some(test), data.f_ref);
    if !cfg.wall_clock {
        rec = rec.without_clock();
    }
    rec.start_clock();
    let mut stages = Vec::new();
    let result: dynanewton_core::Result<(Vec<f64>, bool)> = match cfg.solver {
        SolverKind::Newton => {
            minimize(&full, &x0, &newton_cfg, &mut work, &mut rec).map(|o| (o.x, o.converged))
        }
        SolverKind::DynaNewtonV1 | SolverKind::DynaNewtonV2 => {
            dyna_newton(train, loss, &x0, &cont_cfg, &newton_cfg, &mut work, &mut rec).map(|o| {
                stages = o.stages.iter().map(StageRow::from).collect();
                (o.x, true)
            })
        }
        SolverKind::Saga => {
            let saga_cfg = SagaConfig {
                epochs: resolved.saga.epochs.expect("resolved"),
                seed: resolved.saga.seed.expect("resolved"),
                step: resolved.saga.step,
                init_table: true,
            };
            saga_run(&full, &x0, &saga_cfg, &mut work, &mut rec).map(|s| (s.x, true))
        }
        SolverKind::Lbfgs => {
            lbfgs_minimize(&full, &x0, &lbfgs_cfg, &mut work, &mut rec).map(|o| (o.x, o.converged))
        }
        SolverKind::DynaLbfgs => dyna_lbfgs(train, loss, &x0, &cont_cfg, &lbfgs_cfg, &mut work, &mut rec).map(|o| {
            stages = o.stages.iter().map(StageRow::from).collect();
            (o.x, o.converged)
        }),
    };
    let epochs = work.epochs();
    let (x, converged, failure) = match result {
        Ok((x, converged)) => (x, converged, None),
        Err(e @ (dynanewton_core::Error::InvalidConfig(_) | dynanewton_core::Error::InvalidDataset(_))) => {
            return Err(HarnessError::Core(e))
        }
        Err(e) => (Vec::new(), false, Some(Failure::from_core(&e, epochs))),
    };
    Ok(RunReport {
        config: resolved,
        f_ref: data.f_ref,
        trace: rec.trace,
        stages,
        x,
        epochs,
        converged,
        failure,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<RunReport, HarnessError> {
    let data = Prepared::new(cfg, cache_dir)?;
    run_prepared(cfg, &data)
}

/// Write `trace.csv`, `stages.json`, `config.json` and, on failure,
/// `failure.json` into `dir`.
pub fn write_artifacts(dir: &Path, report: &RunReport) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    let trace_path = dir.join("trace.csv");
    let file = fs::File::create(&trace_path).map_err(HarnessError::io(&trace_path))?;
    report.trace.write_csv(file)?;
    let json = |name: &str, bytes: Vec<u8>| -> Result<(), HarnessError> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(HarnessError::io(&p))
    };
    json("stages.json", serde_json::to_vec_pretty(&report.stages)?)?;
    json("config.json", serde_json::to_vec_pretty(&report.config)?)?;
    let failure = dir.join("failure.json");
    match &report.failure {
        Some(f) => json("failure.json", serde_json::to_vec_pretty(f)?)?,
        None if failure.exists() => fs::remove_file(&failure).map_err(HarnessError::io(&failure))?,
        None => {}
    }
    Ok(())
}
