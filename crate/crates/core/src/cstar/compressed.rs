//! Operators in `M_{|J_n|}(C(X))`: block matrices indexed by `J_n` whose
//! entries are functions on the sample, acting on `ℓ²(J_n) ⊗ ℓ²(X)`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use super::band::{self, zero, BandOperator};
use super::norm::{self, LinearOp, NormPolicy, C64};
use crate::dynsys::SampledSystem;
use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::{self, BoxWindow, LatticeVector};
use crate::rational;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressedOperator {
    pub n: usize,
    pub rank: usize,
    pub points: usize,
    /// `(row slot, column slot)` indices into the lexicographic `J_n`.
    pub blocks: BTreeMap<(usize, usize), Vec<C64>>,
}

impl CompressedOperator {
    pub fn zero(n: usize, rank: usize, points: usize) -> Self {
        CompressedOperator { n, rank, points, blocks: BTreeMap::new() }
    }

    pub fn window(&self) -> BoxWindow {
        BoxWindow::j(self.n, self.rank).expect("valid window")
    }

    pub fn slots(&self) -> usize {
        self.window().len()
    }

    /// The identity `Ψ(1)`.
    pub fn identity(n: usize, rank: usize, points: usize) -> Self {
        let mut out = Self::zero(n, rank, points);
        for s in 0..out.slots() {
            out.add_block(s, s, &vec![C64::new(1.0, 0.0); points]);
        }
        out
    }

    /// `e_{r,c} ⊗ a`.
    pub fn matrix_unit(n: usize, rank: usize, r: usize, c: usize, a: Vec<C64>) -> Self {
        let mut out = Self::zero(n, rank, a.len());
        out.add_block(r, c, &a);
        out
    }

    /// `Y ⊗ a` for a scalar matrix `Y`.
    pub fn tensor(n: usize, rank: usize, y: &DMatrix<C64>, a: &[C64]) -> Self {
        let mut out = Self::zero(n, rank, a.len());
        for r in 0..y.nrows() {
            for c in 0..y.ncols() {
                if y[(r, c)] != zero() {
                    let f: Vec<C64> = a.iter().map(|z| z * y[(r, c)]).collect();
                    out.add_block(r, c, &f);
                }
            }
        }
        out
    }

    pub fn add_block(&mut self, r: usize, c: usize, f: &[C64]) {
        let slot = self.blocks.entry((r, c)).or_insert_with(|| vec![zero(); f.len()]);
        for (s, x) in slot.iter_mut().zip(f) {
            *s += x;
        }
    }

    pub fn block(&self, r: usize, c: usize) -> Option<&[C64]> {
        self.blocks.get(&(r, c)).map(|b| b.as_slice())
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (&(r, c), f) in &other.blocks {
            out.add_block(r, c, f);
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.blocks.values_mut().for_each(|f| f.iter_mut().for_each(|z| *z *= s));
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut by_row: BTreeMap<usize, Vec<(usize, &Vec<C64>)>> = BTreeMap::new();
        for (&(k, c), f) in &other.blocks {
            by_row.entry(k).or_default().push((c, f));
        }
        let mut out = Self::zero(self.n, self.rank, self.points);
        for (&(r, k), f) in &self.blocks {
            if let Some(row) = by_row.get(&k) {
                for &(c, g) in row {
                    let prod: Vec<C64> = f.iter().zip(g.iter()).map(|(a, b)| a * b).collect();
                    out.add_block(r, c, &prod);
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero(self.n, self.rank, self.points);
        for (&(r, c), f) in &self.blocks {
            out.add_block(c, r, &f.iter().map(|z| z.conj()).collect::<Vec<_>>());
        }
        out
    }

    /// `diag(left) · self · diag(right)` with scalar slot weights.
    pub fn scale_slots(&self, left: &[f64], right: &[f64]) -> Self {
        let mut out = self.clone();
        for (&(r, c), f) in out.blocks.iter_mut() {
            let s = left[r] * right[c];
            f.iter_mut().for_each(|z| *z *= s);
        }
        out
    }

    /// Applies `f ↦ h(f)` to every block.
    pub fn map_blocks(&self, h: impl Fn(&[C64]) -> Vec<C64>) -> Self {
        let mut out = self.clone();
        for f in out.blocks.values_mut() {
            *f = h(f);
        }
        out
    }

    /// The scalar matrix `[block(r,c)(x)]` at a sample point.
    pub fn fiber(&self, x: usize) -> DMatrix<C64> {
        let k = self.slots();
        let mut m = DMatrix::<C64>::zeros(k, k);
        for (&(r, c), f) in &self.blocks {
            m[(r, c)] = f[x];
        }
        m
    }

    /// Exact norm: blocks are multiplication operators, so the operator is the
    /// direct sum over sample points of the scalar matrices [`Self::fiber`].
    pub fn norm(&self) -> f64 {
        if self.blocks.is_empty() {
            return 0.0;
        }
        exec::max_range(self.points, |x| norm::matrix_norm(&self.fiber(x)))
    }

    /// Operator on `ℓ²(J_n) ⊗ ℓ²(X)` with index `slot · P + x`.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let p = self.points;
        let d = self.slots() * p;
        let mut m = DMatrix::<C64>::zeros(d, d);
        for (&(r, c), f) in &self.blocks {
            for x in 0..p {
                m[(r * p + x, c * p + x)] = f[x];
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let d = self.sub(other);
        d.blocks.values().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl LinearOp for CompressedOperator {
    fn dim(&self) -> usize {
        self.slots() * self.points
    }

    fn apply(&self, xi: &[C64]) -> Vec<C64> {
        let p = self.points;
        let mut out = vec![zero(); self.dim()];
        for (&(r, c), f) in &self.blocks {
            for x in 0..p {
                out[r * p + x] += f[x] * xi[c * p + x];
            }
        }
        out
    }

    fn apply_adjoint(&self, xi: &[C64]) -> Vec<C64> {
        let p = self.points;
        let mut out = vec![zero(); self.dim()];
        for (&(r, c), f) in &self.blocks {
            for x in 0..p {
                out[c * p + x] += f[x].conj() * xi[r * p + x];
            }
        }
        out
    }
}

/// `Ψ(a u_v) = Σ_{w ∈ J_n ∩ (v + J_n)} e_{w, w-v} ⊗ α^{-w}(a)`, extended
/// linearly.
pub fn compress_psi(sys: &SampledSystem, op: &BandOperator, n: usize) -> Result<CompressedOperator> {
    if op.rank != sys.rank() || op.points != sys.points() {
        return Err(Error::InvalidParameter("operator does not match the system".into()));
    }
    let win = BoxWindow::j(n, op.rank)?;
    let slots = win.vectors();
    let mut out = CompressedOperator::zero(n, op.rank, op.points);
    for (v, a) in &op.terms {
        for (r, w) in slots.iter().enumerate() {
            let Some(c) = win.index_of(&(w - v)) else { continue };
            out.add_block(r, c, &band::act_function(sys, &-w, a)?);
        }
    }
    Ok(out)
}

/// Tent weights `D_{w,w} = d_n^m(w)` on `J_n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagonalWeight {
    pub n: usize,
    pub rank: usize,
    pub values: Vec<f64>,
    pub sqrt: Vec<f64>,
}

impl DiagonalWeight {
    pub fn new(n: usize, rank: usize) -> Result<Self> {
        let values = BoxWindow::j(n, rank)?
            .vectors()
            .iter()
            .map(|w| lattice::tent_m(n, w).map(|r| rational::to_f64(&r)))
            .collect::<Result<Vec<f64>>>()?;
        let sqrt = values.iter().map(|v| v.sqrt()).collect();
        Ok(DiagonalWeight { n, rank, values, sqrt })
    }

    pub fn as_operator(&self, points: usize) -> CompressedOperator {
        CompressedOperator::identity(self.n, self.rank, points).scale_slots(&self.values, &vec![1.0; self.values.len()])
    }
}

/// `μ(x) = √D Ψ(x) √D`.
pub fn mu(sys: &SampledSystem, op: &BandOperator, n: usize) -> Result<CompressedOperator> {
    let d = DiagonalWeight::new(n, op.rank)?;
    Ok(compress_psi(sys, op, n)?.scale_slots(&d.sqrt, &d.sqrt))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommutatorReport {
    /// Estimated `‖[√D, Ψ(a u_v)]‖`.
    pub estimate: f64,
    /// `max_w |√d(w) - √d(w - v)|` over `w ∈ J_n ∩ (v + J_n)`.
    pub max_difference: f64,
    /// `max_difference · ‖a‖`.
    pub bound: f64,
}

/// `max_w |√d_n^m(w) - √d_n^m(w - v)|` over `w ∈ J_n ∩ (v + J_n)`.
pub fn sqrt_tent_max_difference(n: usize, v: &LatticeVector) -> Result<f64> {
    let win = BoxWindow::j(n, v.rank())?;
    let d = DiagonalWeight::new(n, v.rank())?;
    Ok(win
        .vectors()
        .iter()
        .enumerate()
        .filter_map(|(r, w)| win.index_of(&(w - v)).map(|c| (d.sqrt[r] - d.sqrt[c]).abs()))
        .fold(0.0, f64::max))
}

/// The commutator `[√D, Ψ(a u_v)]`, its estimated norm, and the
/// max-difference bound.
pub fn commutator_sqrt_d(
    sys: &SampledSystem,
    a: &[C64],
    v: &LatticeVector,
    n: usize,
    policy: &NormPolicy,
) -> Result<CommutatorReport> {
    let psi = compress_psi(sys, &BandOperator::monomial(v.clone(), a.to_vec()), n)?;
    let d = DiagonalWeight::new(n, v.rank())?;
    let ones = vec![1.0; d.sqrt.len()];
    let comm = psi.scale_slots(&d.sqrt, &ones).sub(&psi.scale_slots(&ones, &d.sqrt));
    let estimate = norm::estimate_norm(&comm, policy);
    let max_difference = sqrt_tent_max_difference(n, v)?;
    Ok(CommutatorReport { estimate, max_difference, bound: max_difference * band::sup_norm(a) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cstar::band::WindowRep;

    fn lv(c: &[i64]) -> LatticeVector {
        LatticeVector::new(c.to_vec())
    }

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    /// `Q · x · Q` from the padded regular representation.
    fn dense_qxq(sys: &SampledSystem, op: &BandOperator, n: usize) -> DMatrix<C64> {
        let pad = op.bandwidth();
        let rep = WindowRep::padded_j(sys, n, pad).unwrap();
        let inner = BoxWindow::j(n, sys.rank()).unwrap();
        let p = sys.points();
        let k = inner.len();
        let mut out = DMatrix::<C64>::zeros(k * p, k * p);
        let slot = |w: &LatticeVector| rep.window().index_of(w).unwrap();
        for (cj, wc) in inner.vectors().iter().enumerate() {
            for x in 0..p {
                let mut e = vec![c(0.0); rep.dim()];
                e[slot(wc) * p + x] = c(1.0);
                let col = rep.apply(op, &e);
                for (ri, wr) in inner.vectors().iter().enumerate() {
                    for y in 0..p {
                        out[(ri * p + y, cj * p + x)] = col[slot(wr) * p + y];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn psi_of_functions_is_diagonal() {
        let sys = SampledSystem::make_cyclic(&[8]).unwrap();
        let a: Vec<C64> = (0..8).map(|x| c(x as f64)).collect();
        let psi = compress_psi(&sys, &BandOperator::monomial(lv(&[0]), a.clone()), 2).unwrap();
        let win = BoxWindow::j(2, 1).unwrap();
        for (r, w) in win.vectors().iter().enumerate() {
            assert_eq!(psi.block(r, r).unwrap(), band::act_function(&sys, &-w, &a).unwrap().as_slice());
        }
        assert_eq!(psi.blocks.len(), 4);
        let far = compress_psi(&sys, &BandOperator::monomial(lv(&[4]), a), 2).unwrap();
        assert!(far.blocks.is_empty());
    }

    #[test]
    fn psi_matches_dense_oracle() {
        let sys = SampledSystem::make_cyclic(&[8]).unwrap();
        for v in -3..=3 {
            let a: Vec<C64> = (0..8).map(|x| C64::new((x * 7 % 5) as f64 - 2.0, (x % 3) as f64)).collect();
            let op = BandOperator::monomial(lv(&[v]), a);
            let psi = compress_psi(&sys, &op, 2).unwrap().to_dense();
            let oracle = dense_qxq(&sys, &op, 2);
            assert!((psi - oracle).iter().all(|z| z.norm() < 1e-12), "v = {v}");
        }
    }

    #[test]
    fn mu_of_one_is_d() {
        let sys = SampledSystem::make_cyclic(&[6]).unwrap();
        let m = mu(&sys, &BandOperator::identity(1, 6), 3).unwrap();
        let d = DiagonalWeight::new(3, 1).unwrap().as_operator(6);
        assert!(m.max_abs_diff(&d) < 1e-15);
    }

    #[test]
    fn commutator_examples() {
        let sys = SampledSystem::make_cyclic(&[16]).unwrap();
        let a: Vec<C64> = (0..16).map(|x| c(((x * 5) % 7) as f64 / 6.0)).collect();
        let r = commutator_sqrt_d(&sys, &a, &lv(&[0]), 4, &NormPolicy::default()).unwrap();
        assert_eq!((r.estimate, r.bound), (0.0, 0.0));
        let r = commutator_sqrt_d(&sys, &a, &lv(&[1]), 8, &NormPolicy::default()).unwrap();
        assert!(r.estimate <= r.bound + 1e-12);
        assert!(r.estimate > 0.0);
    }

    #[test]
    fn norm_is_per_point() {
        let y = DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
        let op = CompressedOperator::tensor(1, 1, &y, &[c(0.5), c(-3.0)]);
        assert!((op.norm() - 3.0).abs() < 1e-12);
        assert!((norm::dense_norm(&op) - 3.0).abs() < 1e-12);
    }
}
