//! Effective-epoch accounting and progress callbacks.
//!
//! Every solver charges the data passes it performs to a [`Work`] counter,
//! normalized by the size of the full training set. One effective epoch is
//! one pass over all `N` rows.

/// A unit of data-touching work.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkEvent {
    /// Fused value, gradient and Hessian on `n` rows.
    NewtonEvaluation { n: usize },
    /// One backtracking trial (objective value, or value and gradient for
    /// L-BFGS) on `n` rows.
    LineSearchTrial { n: usize },
    /// Gradient (fused with value) on `n` rows.
    GradientEvaluation { n: usize },
    /// One incremental SAGA update.
    SagaStep,
    /// Per-sample gradients of `rows` newly touched rows while deciding how
    /// far to grow the sample.
    GrowthRows { rows: usize },
}

/// Cost of `event` in effective epochs for a training set of `total` rows.
pub fn effective_epoch_cost(event: WorkEvent, total: usize) -> f64 {
    let rows = match event {
        WorkEvent::NewtonEvaluation { n }
        | WorkEvent::LineSearchTrial { n }
        | WorkEvent::GradientEvaluation { n } => n,
        WorkEvent::SagaStep => 1,
        WorkEvent::GrowthRows { rows } => rows,
    };
    rows as f64 / total as f64
}

/// Running effective-epoch total.
#[derive(Debug, Clone, PartialEq)]
pub struct Work {
    total_rows: usize,
    epochs: f64,
}

impl Work {
    pub fn new(total_rows: usize) -> Self {
        assert!(total_rows > 0, "work accounting needs a non-empty dataset");
        Self {
            total_rows,
            epochs: 0.0,
        }
    }

    pub fn charge(&mut self, event: WorkEvent) {
        self.epochs += effective_epoch_cost(event, self.total_rows);
    }

    pub fn epochs(&self) -> f64 {
        self.epochs
    }

    pub fn total_rows(&self) -> usize {
        self.total_rows
    }
}

/// Snapshot handed to a [`Monitor`] after each iteration.
#[derive(Debug, Clone, Copy)]
pub struct Progress<'a> {
    pub epochs: f64,
    pub x: &'a [f64],
    /// Newton decrement at the pre-step point, when the solver knows it.
    pub lambda: Option<f64>,
    /// Continuation stage index.
    pub stage: Option<usize>,
}

pub trait Monitor {
    fn observe(&mut self, progress: &Progress<'_>);
}

impl<F: FnMut(&Progress<'_>)> Monitor for F {
    fn observe(&mut self, progress: &Progress<'_>) {
        self(progress)
    }
}

/// Discards all progress.
#[derive(Debug, Default, Clone, Copy)]
pub struct Silent;

impl Monitor for Silent {
    fn observe(&mut self, _: &Progress<'_>) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_newton_with_two_trials_is_three_epochs() {
        let n = 1000;
        let mut w = Work::new(n);
        w.charge(WorkEvent::NewtonEvaluation { n });
        w.charge(WorkEvent::LineSearchTrial { n });
        w.charge(WorkEvent::LineSearchTrial { n });
        assert!((w.epochs() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn saga_sweep_is_one_epoch() {
        let mut w = Work::new(64);
        for _ in 0..64 {
            w.charge(WorkEvent::SagaStep);
        }
        assert!((w.epochs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_prefix_stage_is_half_epoch() {
        let mut w = Work::new(400);
        w.charge(WorkEvent::NewtonEvaluation { n: 100 });
        w.charge(WorkEvent::LineSearchTrial { n: 100 });
        assert_eq!(w.epochs(), 0.5);
        assert_eq!(
            effective_epoch_cost(WorkEvent::GrowthRows { rows: 40 }, 400),
            0.1
        );
    }
}
