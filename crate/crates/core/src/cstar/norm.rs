//! Operator norms: power iteration on the Gram operator with a dense SVD
//! oracle for small sizes.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub type C64 = Complex64;

/// A square linear operator on `C^dim`.
pub trait LinearOp: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64]) -> Vec<C64>;
    fn apply_adjoint(&self, x: &[C64]) -> Vec<C64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormPolicy {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Dimensions up to this size use the dense SVD.
    pub dense_threshold: usize,
    pub seed: u64,
}

impl Default for NormPolicy {
    fn default() -> Self {
        NormPolicy { max_iter: 200, rel_tol: 1e-10, dense_threshold: 256, seed: 0x5eed }
    }
}

fn l2(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest singular value by power iteration on `A*A` from a seeded start.
pub fn power_norm(op: &dyn LinearOp, policy: &NormPolicy) -> f64 {
    let n = op.dim();
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let mut x: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    let mut prev = 0.0;
    let mut est = 0.0;
    for _ in 0..policy.max_iter {
        let nx = l2(&x);
        if nx == 0.0 {
            return est;
        }
        x.iter_mut().for_each(|z| *z /= nx);
        let y = op.apply(&x);
        est = l2(&y);
        if est == 0.0 {
            return 0.0;
        }
        if (est - prev).abs() <= policy.rel_tol * est {
            break;
        }
        prev = est;
        x = op.apply_adjoint(&y);
    }
    est
}

pub fn dense_matrix(op: &dyn LinearOp) -> DMatrix<C64> {
    let n = op.dim();
    let mut m = DMatrix::<C64>::zeros(n, n);
    let mut e = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        e[j] = C64::new(1.0, 0.0);
        let col = op.apply(&e);
        for (i, z) in col.into_iter().enumerate() {
            m[(i, j)] = z;
        }
        e[j] = C64::new(0.0, 0.0);
    }
    m
}

pub fn matrix_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

pub fn dense_norm(op: &dyn LinearOp) -> f64 {
    matrix_norm(&dense_matrix(op))
}

/// Dense SVD below the policy threshold, power iteration above.
pub fn estimate_norm(op: &dyn LinearOp, policy: &NormPolicy) -> f64 {
    if op.dim() <= policy.dense_threshold {
        dense_norm(op)
    } else {
        power_norm(op, policy)
    }
}

/// Smallest eigenvalue of a Hermitian matrix (the Hermitian part is used).
pub fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigen().eigenvalues.min()
}

/// A dense matrix viewed as a [`LinearOp`].
pub struct DenseOp(pub DMatrix<C64>);

impl LinearOp for DenseOp {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        (&self.0 * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
    }

    fn apply_adjoint(&self, x: &[C64]) -> Vec<C64> {
        (self.0.adjoint() * nalgebra::DVector::from_column_slice(x)).as_slice().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1, 5, 40] {
            let m = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let op = DenseOp(m);
            let exact = dense_norm(&op);
            let power = power_norm(&op, &NormPolicy { max_iter: 5000, ..Default::default() });
            assert!((exact - power).abs() <= 1e-6 * exact, "{exact} vs {power}");
        }
    }

    #[test]
    fn diagonal_norms() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(0.5, 0.0), C64::new(0.0, -2.0)]));
        assert!((dense_norm(&DenseOp(m.clone())) - 2.0).abs() < 1e-12);
        assert!((power_norm(&DenseOp(m), &NormPolicy::default()) - 2.0).abs() < 1e-9);
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(-0.25, 0.0), C64::new(3.0, 0.0)]));
        assert!((min_eigenvalue(&h) + 0.25).abs() < 1e-12);
    }
}
