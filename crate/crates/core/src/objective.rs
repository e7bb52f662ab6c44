//! Regularized empirical risk over a sample prefix.
//!
//! `f(x) = (1/n) Σ_{i<n} φ(y_i, ⟨z_i, x⟩) + ν/2 ‖x‖²`
//!
//! Both supported losses are generalized linear: the per-sample gradient is a
//! scalar multiple of the sample row and the Hessian is a weighted sum of
//! rank-one terms.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{PrefixView, SparseRow};
use crate::linalg::SymMatrix;
use crate::math;
use crate::{Error, Result};

/// Per-sample loss as a function of the score `s = ⟨z, x⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `log(1 + exp(-y s))`
    Logistic,
    /// `½ (s - y)²`
    Quadratic,
}

impl LossKind {
    #[inline]
    pub fn value(self, score: f64, y: f64) -> f64 {
        match self {
            LossKind::Logistic => math::softplus(-y * score),
            LossKind::Quadratic => 0.5 * (score - y) * (score - y),
        }
    }

    /// dφ/ds
    #[inline]
    pub fn derivative(self, score: f64, y: f64) -> f64 {
        match self {
            LossKind::Logistic => -y * math::sigmoid(-y * score),
            LossKind::Quadratic => score - y,
        }
    }

    /// d²φ/ds²
    #[inline]
    pub fn curvature(self, score: f64, y: f64) -> f64 {
        match self {
            LossKind::Logistic => {
                let p = math::sigmoid(y * score);
                p * (1.0 - p)
            }
            LossKind::Quadratic => 1.0,
        }
    }
}

/// Value, gradient and (optionally) Hessian at one point.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<SymMatrix>,
}

/// `∇φ(z_i, x) = coeff · z_i` without densifying the row.
#[derive(Debug, Clone, Copy)]
pub struct GlmGradient<'a> {
    pub coeff: f64,
    pub row: SparseRow<'a>,
}

impl GlmGradient<'_> {
    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.row.axpy(self.coeff, &mut out);
        out
    }
}

/// Unnormalized loss sums over a set of rows at a fixed point.
///
/// Sums over disjoint row ranges can be merged, which lets the continuation
/// driver reuse the work on an old prefix when the sample grows.
#[derive(Debug, Clone)]
pub(crate) struct LossSums {
    pub(crate) rows: usize,
    pub(crate) value: f64,
    pub(crate) gradient: Vec<f64>,
    /// Lower triangle only until [`LossSums::finish`].
    pub(crate) hessian: Option<SymMatrix>,
}

impl LossSums {
    pub(crate) fn new(dim: usize, want_hessian: bool) -> Self {
        Self {
            rows: 0,
            value: 0.0,
            gradient: vec![0.0; dim],
            hessian: want_hessian.then(|| SymMatrix::zeros(dim)),
        }
    }

    pub(crate) fn add_row(&mut self, loss: LossKind, row: SparseRow<'_>, y: f64, x: &[f64]) {
        let s = row.dot(x);
        self.rows += 1;
        self.value += loss.value(s, y);
        row.axpy(loss.derivative(s, y), &mut self.gradient);
        if let Some(h) = self.hessian.as_mut() {
            let w = loss.curvature(s, y);
            if w != 0.0 {
                h.rank_one_lower(w, row.indices, row.values);
            }
        }
    }

    pub(crate) fn accumulate(
        &mut self,
        loss: LossKind,
        view: PrefixView<'_>,
        range: core::ops::Range<usize>,
        x: &[f64],
    ) {
        for i in range {
            self.add_row(loss, view.row(i), view.label(i), x);
        }
    }

    pub(crate) fn merge(&mut self, other: &LossSums) {
        self.rows += other.rows;
        self.value += other.value;
        for (a, b) in self.gradient.iter_mut().zip(&other.gradient) {
            *a += b;
        }
        if let (Some(h), Some(o)) = (self.hessian.as_mut(), other.hessian.as_ref()) {
            h.add_assign(o);
        }
    }

    /// Normalize by the row count and add `ν/2 ‖x‖²`.
    pub(crate) fn finish(mut self, nu: f64, x: &[f64]) -> Result<EvalReport> {
        let inv_n = 1.0 / self.rows as f64;
        let value = self.value * inv_n + 0.5 * nu * math::norm_sq(x);
        for (g, &xi) in self.gradient.iter_mut().zip(x) {
            *g = *g * inv_n + nu * xi;
        }
        if let Some(h) = self.hessian.as_mut() {
            h.scale(inv_n);
            h.mirror_lower();
            h.add_diag(nu);
        }
        if !value.is_finite() || self.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("objective evaluation"));
        }
        Ok(EvalReport {
            value,
            gradient: self.gradient,
            hessian: self.hessian,
        })
    }
}

/// `f^S_ν` for a loss, a prefix `S` and a regularization strength `ν`.
#[derive(Debug, Clone, Copy)]
pub struct RegularizedObjective<'a> {
    loss: LossKind,
    view: PrefixView<'a>,
    nu: f64,
}

impl<'a> RegularizedObjective<'a> {
    pub fn new(loss: LossKind, view: PrefixView<'a>, nu: f64) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "regularization strength {nu} must be finite and >= 0"
            )));
        }
        Ok(Self { loss, view, nu })
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn view(&self) -> PrefixView<'a> {
        self.view
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn dim(&self) -> usize {
        self.view.dim()
    }

    /// Number of samples in the prefix.
    pub fn n(&self) -> usize {
        self.view.len()
    }

    /// Same prefix, different regularization.
    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        Self::new(self.loss, self.view, nu)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Value, gradient and optionally the dense Hessian, in one pass.
    pub fn evaluate(&self, x: &[f64], want_hessian: bool) -> Result<EvalReport> {
        self.check_dim(x)?;
        let mut sums = LossSums::new(self.dim(), want_hessian);
        sums.accumulate(self.loss, self.view, 0..self.n(), x);
        sums.finish(self.nu, x)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let loss_sum: f64 = self
            .view
            .rows()
            .map(|(row, y)| self.loss.value(row.dot(x), y))
            .sum();
        let value = loss_sum / self.n() as f64 + 0.5 * self.nu * math::norm_sq(x);
        if !value.is_finite() {
            return Err(Error::NonFinite("objective value"));
        }
        Ok(value)
    }

    /// Mean unregularized loss over the prefix.
    pub fn mean_loss(&self, x: &[f64]) -> Result<f64> {
        self.with_nu(0.0)?.value(x)
    }

    /// `∇²f(x) v` without forming the Hessian.
    pub fn hessian_vector(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_dim(v)?;
        let mut out = vec![0.0; self.dim()];
        for (row, y) in self.view.rows() {
            let w = self.loss.curvature(row.dot(x), y);
            row.axpy(w * row.dot(v), &mut out);
        }
        let inv_n = 1.0 / self.n() as f64;
        for (o, &vi) in out.iter_mut().zip(v) {
            *o = *o * inv_n + self.nu * vi;
        }
        Ok(out)
    }

    /// `∇φ(z_i, x)` with no regularization term.
    pub fn per_sample_gradient(&self, i: usize, x: &[f64]) -> GlmGradient<'a> {
        assert!(i < self.n(), "row {i} outside prefix of {}", self.n());
        let row = self.view.row(i);
        GlmGradient {
            coeff: self.loss.derivative(row.dot(x), self.view.label(i)),
            row,
        }
    }

    /// Upper bound Φ on `φ(z, 0)` over the prefix.
    pub fn phi_bound(&self) -> f64 {
        match self.loss {
            LossKind::Logistic => core::f64::consts::LN_2,
            LossKind::Quadratic => self
                .view
                .labels()
                .iter()
                .map(|y| 0.5 * y * y)
                .fold(0.0, f64::max),
        }
    }

    /// Row-norm upper bound on the Lipschitz constant of `∇f`.
    pub fn lipschitz_estimate(&self) -> f64 {
        let max_sq = self
            .view
            .rows()
            .map(|(row, _)| row.norm_sq())
            .fold(0.0, f64::max);
        let scale = match self.loss {
            LossKind::Logistic => 0.25,
            LossKind::Quadratic => 1.0,
        };
        scale * max_sq + self.nu
    }
}
