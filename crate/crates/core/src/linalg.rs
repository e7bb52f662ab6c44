//! Dense symmetric matrices and a jittered Cholesky factorization.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::{Error, Result};

/// Smallest diagonal shift tried when the plain factorization fails.
pub const JITTER_START: f64 = 1e-12;
/// Number of doublings of the jitter before giving up.
pub const MAX_ESCALATIONS: u32 = 30;

/// Dense symmetric matrix in full row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diag(&vec![1.0; dim])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Build from a closure; the result is symmetrized as `(A + Aᵀ)/2`.
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = f(i, j);
            }
        }
        m.symmetrize();
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn add_diag(&mut self, shift: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += shift;
        }
    }

    /// Replace every entry by the mean of it and its transpose.
    pub fn symmetrize(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (self.data[i * d + j] + self.data[j * d + i]);
                self.data[i * d + j] = avg;
                self.data[j * d + i] = avg;
            }
        }
    }

    /// Add `weight * v vᵀ` for a sparse `v`, touching only the lower triangle.
    /// Call [`SymMatrix::mirror_lower`] once all updates are in.
    #[inline]
    pub(crate) fn rank_one_lower(&mut self, weight: f64, indices: &[u32], values: &[f64]) {
        let d = self.dim;
        for (a, (&ia, &va)) in indices.iter().zip(values).enumerate() {
            let wa = weight * va;
            let row = ia as usize * d;
            for (&ib, &vb) in indices[..=a].iter().zip(&values[..=a]) {
                self.data[row + ib as usize] += wa * vb;
            }
        }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub(crate) fn add_assign(&mut self, other: &SymMatrix) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Copy the lower triangle onto the upper one.
    pub(crate) fn mirror_lower(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..i {
                self.data[j * d + i] = self.data[i * d + j];
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        self.data
            .chunks_exact(self.dim.max(1))
            .map(|row| math::dot(row, x))
            .collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::norm(&self.data)
    }
}

/// Cholesky factor `L` with `L Lᵀ = H + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactorization {
    dim: usize,
    /// Row-major, only the lower triangle is meaningful.
    lower: Vec<f64>,
    jitter: f64,
}

/// Factor a symmetric positive definite matrix.
///
/// The input is symmetrized first. If the plain factorization meets a
/// non-positive pivot, a diagonal shift starting at [`JITTER_START`] is
/// doubled until the factorization succeeds, at most [`MAX_ESCALATIONS`]
/// times.
pub fn factor_spd(h: &SymMatrix) -> Result<SpdFactorization> {
    let mut sym = h.clone();
    sym.symmetrize();
    if let Some(lower) = cholesky(&sym, 0.0) {
        return Ok(SpdFactorization {
            dim: sym.dim,
            lower,
            jitter: 0.0,
        });
    }
    let mut jitter = JITTER_START;
    for _ in 0..=MAX_ESCALATIONS {
        if let Some(lower) = cholesky(&sym, jitter) {
            return Ok(SpdFactorization {
                dim: sym.dim,
                lower,
                jitter,
            });
        }
        jitter *= 2.0;
    }
    Err(Error::SingularHessian {
        escalations: MAX_ESCALATIONS,
        stage: None,
    })
}

fn cholesky(h: &SymMatrix, shift: f64) -> Option<Vec<f64>> {
    let d = h.dim;
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        let (above, below) = l.split_at_mut(i * d);
        let row_i = &mut below[..d];
        for j in 0..i {
            let row_j = &above[j * d..j * d + j + 1];
            let s = h.data[i * d + j] - math::dot(&row_i[..j], &row_j[..j]);
            row_i[j] = s / row_j[j];
        }
        let diag = h.data[i * d + i] + shift - math::norm_sq(&row_i[..i]);
        if !(diag > 0.0 && diag.is_finite()) {
            return None;
        }
        row_i[i] = math::sqrt(diag);
    }
    Some(l)
}

impl SpdFactorization {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diagonal shift that was added before factoring (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Solve `L w = b`.
    pub fn forward_substitute(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim);
        let d = self.dim;
        let mut w = b.to_vec();
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let s = w[i] - math::dot(row, &w[..i]);
            w[i] = s / self.lower[i * d + i];
        }
        w
    }

    /// `(H + jitter·I)⁻¹ b`
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut x = self.forward_substitute(b);
        for i in (0..d).rev() {
            let mut s = x[i];
            for k in (i + 1)..d {
                s -= self.lower[k * d + i] * x[k];
            }
            x[i] = s / self.lower[i * d + i];
        }
        x
    }

    /// `gᵀ (H + jitter·I)⁻¹ g`, computed as `‖L⁻¹ g‖²`.
    pub fn quad_form_inv(&self, g: &[f64]) -> f64 {
        math::norm_sq(&self.forward_substitute(g))
    }

    /// `L Lᵀ`
    pub fn reconstruct(&self) -> SymMatrix {
        let d = self.dim;
        SymMatrix::from_fn(d, |i, j| {
            let k = i.min(j) + 1;
            math::dot(&self.lower[i * d..i * d + k], &self.lower[j * d..j * d + k])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, seed: u64, shift: f64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..d * d)
            .map(|_| rng.random::<f64>() * 2.0 - 1.0)
            .collect();
        SymMatrix::from_fn(d, |i, j| {
            (0..d).map(|k| a[k * d + i] * a[k * d + j]).sum::<f64>()
                + if i == j { shift } else { 0.0 }
        })
    }

    fn to_nalgebra(m: &SymMatrix) -> DMatrix<f64> {
        DMatrix::from_row_slice(m.dim(), m.dim(), m.as_slice())
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>();
        libm::sqrt(num / den.max(1e-300))
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = factor_spd(&SymMatrix::identity(3)).unwrap();
        assert_eq!(f.jitter(), 0.0);
        assert_eq!(f.reconstruct(), SymMatrix::identity(3));
        assert_eq!(f.solve(&[1.0, 2.0, 3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(f.quad_form_inv(&[3.0, 4.0, 0.0]), 25.0);
        assert_eq!(f.quad_form_inv(&[0.0; 3]), 0.0);
    }

    #[test]
    fn diagonal_factor() {
        let f = factor_spd(&SymMatrix::from_diag(&[4.0, 9.0])).unwrap();
        assert_eq!(f.lower, vec![2.0, 0.0, 0.0, 3.0]);
        let g = factor_spd(&SymMatrix::from_diag(&[2.0, 4.0])).unwrap();
        for v in g.solve(&[2.0, 4.0]) {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn random_spd_matches_explicit_inverse() {
        let h = random_spd(10, 4, 0.1);
        let f = factor_spd(&h).unwrap();
        assert_eq!(f.jitter(), 0.0);
        let inv = to_nalgebra(&h).try_inverse().unwrap();
        let b: Vec<f64> = (0..10).map(|i| (i as f64 * 0.7).sin()).collect();
        let oracle = &inv * DVector::from_column_slice(&b);
        assert!(rel_err(&f.solve(&b), oracle.as_slice()) <= 1e-9);
        let q_oracle = DVector::from_column_slice(&b).dot(&oracle);
        assert!((f.quad_form_inv(&b) - q_oracle).abs() / q_oracle <= 1e-9);
    }

    #[test]
    fn reconstruction_error_is_tiny() {
        let h = random_spd(25, 11, 0.05);
        let f = factor_spd(&h).unwrap();
        let r = f.reconstruct();
        let diff: Vec<f64> = r
            .as_slice()
            .iter()
            .zip(h.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        assert!(math::norm(&diff) / h.frobenius_norm() <= 1e-10);
    }

    #[test]
    fn semidefinite_input_gets_minimal_jitter() {
        // rank one: v vᵀ with v = (1, 1)
        let h = SymMatrix::from_fn(2, |_, _| 1.0);
        let f = factor_spd(&h).unwrap();
        assert!(f.jitter() > 0.0);
        let k = libm::log2(f.jitter() / JITTER_START);
        assert!(
            (k - libm::round(k)).abs() < 1e-9,
            "jitter {} not on the grid",
            f.jitter()
        );
        // the next smaller grid value must fail
        if f.jitter() > JITTER_START {
            assert!(cholesky(&h, f.jitter() / 2.0).is_none());
        }
    }

    #[test]
    fn indefinite_input_fails() {
        let h = SymMatrix::from_diag(&[1.0, -1.0]);
        assert!(matches!(factor_spd(&h), Err(Error::SingularHessian { .. })));
    }

    #[test]
    fn asymmetric_input_is_symmetrized() {
        let h = SymMatrix {
            dim: 2,
            data: vec![2.0, 1.0, 0.0, 2.0],
        };
        let f = factor_spd(&h).unwrap();
        let r = f.reconstruct();
        assert!((r.get(0, 1) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn quad_form_equals_inner_product_with_solve(seed in 0u64..500, d in 1usize..12) {
            let h = random_spd(d, seed, 0.2);
            let f = factor_spd(&h).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let g: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let q = f.quad_form_inv(&g);
            let via_solve = math::dot(&g, &f.solve(&g));
            prop_assert!(q >= 0.0);
            prop_assert!((q - via_solve).abs() <= 1e-10 * q.max(1e-300));
        }

        #[test]
        fn solve_inverts_matvec(seed in 0u64..500, d in 1usize..12) {
            let h = random_spd(d, seed, 0.5);
            let f = factor_spd(&h).unwrap();
            prop_assume!(f.jitter() == 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let back = f.solve(&h.matvec(&x));
            prop_assert!(rel_err(&back, &x) <= 1e-9);
        }
    }
}
