//! Inner completely positive approximations `(F, ψ, φ)` of the coefficient
//! algebra, decomposed into order-zero colours `φ^{(i)}`.

use super::norm::C64;

pub trait InnerApproximation: Sync {
    /// Number of colours `s + 1`.
    fn colors(&self) -> usize;

    /// `(φ^{(i)} ∘ ψ)(a)` for a coefficient function `a`.
    fn apply(&self, color: usize, a: &[C64]) -> Vec<C64>;

    fn name(&self) -> &str;
}

/// The exact approximation of a finite-dimensional commutative algebra by
/// itself: one colour, `ψ = φ = id`.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityApproximation;

impl InnerApproximation for IdentityApproximation {
    fn colors(&self) -> usize {
        1
    }

    fn apply(&self, _color: usize, a: &[C64]) -> Vec<C64> {
        a.to_vec()
    }

    fn name(&self) -> &str {
        "identity"
    }
}
