//! Band operators `Σ_v a_v u_v` in the crossed product of `C(X)` by `Z^m`.
//!
//! Conventions: the induced action on functions is `α^v(c) = c ∘ α^{-v}`,
//! `u_v c u_v^* = α^v(c)`, hence `(a u_g)(b u_h) = a α^g(b) u_{g+h}` and
//! `(c u_v)^* = α^{-v}(c̄) u_{-v}`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use super::norm::{self, LinearOp, NormPolicy, C64};
use crate::dynsys::SampledSystem;
use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::{BoxWindow, LatticeVector, RectWindow};

pub(crate) fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// `α^v(c) = c ∘ α^{-v}` for a coefficient function `c`.
pub fn act_function(sys: &SampledSystem, v: &LatticeVector, c: &[C64]) -> Result<Vec<C64>> {
    let back = sys.permutation(&-v)?;
    Ok(back.iter().map(|&y| c[y as usize]).collect())
}

pub fn sup_norm(c: &[C64]) -> f64 {
    c.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandOperator {
    pub rank: usize,
    pub points: usize,
    pub terms: BTreeMap<LatticeVector, Vec<C64>>,
}

impl BandOperator {
    pub fn zero(rank: usize, points: usize) -> Self {
        BandOperator { rank, points, terms: BTreeMap::new() }
    }

    pub fn monomial(v: LatticeVector, a: Vec<C64>) -> Self {
        let mut op = Self::zero(v.rank(), a.len());
        op.add_term(v, &a);
        op
    }

    pub fn identity(rank: usize, points: usize) -> Self {
        Self::monomial(LatticeVector::zero(rank), vec![C64::new(1.0, 0.0); points])
    }

    /// Adds `a u_v`.
    pub fn add_term(&mut self, v: LatticeVector, a: &[C64]) {
        assert_eq!(a.len(), self.points, "coefficient length");
        assert_eq!(v.rank(), self.rank, "term rank");
        let slot = self.terms.entry(v).or_insert_with(|| vec![zero(); a.len()]);
        for (s, x) in slot.iter_mut().zip(a) {
            *s += x;
        }
    }

    pub fn coefficient(&self, v: &LatticeVector) -> Option<&[C64]> {
        self.terms.get(v).map(|c| c.as_slice())
    }

    /// Largest `‖v‖∞` over the terms.
    pub fn bandwidth(&self) -> usize {
        self.terms.keys().map(|v| v.norm_inf() as usize).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (v, a) in &other.terms {
            out.add_term(v.clone(), a);
        }
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.terms.values_mut().for_each(|c| c.iter_mut().for_each(|z| *z *= s));
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, sys: &SampledSystem, other: &Self) -> Result<Self> {
        let mut out = Self::zero(self.rank, self.points);
        for (g, a) in &self.terms {
            let back = sys.permutation(&-g)?;
            for (h, b) in &other.terms {
                let c: Vec<C64> = (0..self.points).map(|x| a[x] * b[back[x] as usize]).collect();
                out.add_term(g + h, &c);
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self, sys: &SampledSystem) -> Result<Self> {
        let mut out = Self::zero(self.rank, self.points);
        for (v, c) in &self.terms {
            let conj: Vec<C64> = c.iter().map(|z| z.conj()).collect();
            out.add_term(-v, &act_function(sys, &-v, &conj)?);
        }
        Ok(out)
    }

    /// Sum of the coefficient sup-norms: an upper bound for the C*-norm.
    pub fn l1_norm(&self) -> f64 {
        self.terms.values().map(|c| sup_norm(c)).sum()
    }
}

/// The regular representation restricted to a rectangular window of
/// `ℓ²(Z^m) ⊗ ℓ²(X)`: `(a u_v ξ)(w, x) = a(α^w x) ξ(w - v, x)`.
pub struct WindowRep<'a> {
    sys: &'a SampledSystem,
    window: RectWindow,
    /// `α^w` for every slot `w`.
    perms: Vec<Vec<u32>>,
}

impl<'a> WindowRep<'a> {
    pub fn new(sys: &'a SampledSystem, window: RectWindow) -> Result<Self> {
        let perms = window.vectors().iter().map(|w| sys.permutation(w)).collect::<Result<Vec<_>>>()?;
        Ok(WindowRep { sys, window, perms })
    }

    /// `J_n` padded by `pad` in every direction.
    pub fn padded_j(sys: &'a SampledSystem, n: usize, pad: usize) -> Result<Self> {
        Self::new(sys, BoxWindow::j(n, sys.rank())?.rect().padded(pad))
    }

    pub fn window(&self) -> &RectWindow {
        &self.window
    }

    pub fn dim(&self) -> usize {
        self.window.len() * self.sys.points()
    }

    pub fn apply(&self, op: &BandOperator, xi: &[C64]) -> Vec<C64> {
        let p = self.sys.points();
        let slots = self.window.vectors();
        let mut out = vec![zero(); self.dim()];
        exec::for_each_chunk_mut(&mut out, p, |si, row| {
            let w = &slots[si];
            for (v, a) in &op.terms {
                let Some(src) = self.window.index_of(&(w - v)) else { continue };
                let perm = &self.perms[si];
                for x in 0..p {
                    row[x] += a[perm[x] as usize] * xi[src * p + x];
                }
            }
        });
        out
    }
}

/// Applies `op` on `ℓ²(J_n padded by pad) ⊗ ℓ²(X)`. The padding must cover
/// the band width so that vectors supported in `J_n` are mapped exactly.
pub fn band_apply(sys: &SampledSystem, op: &BandOperator, n: usize, pad: usize, vector: &[C64]) -> Result<Vec<C64>> {
    if pad < op.bandwidth() {
        return Err(Error::InsufficientPadding { band: op.bandwidth(), pad });
    }
    let rep = WindowRep::padded_j(sys, n, pad)?;
    if vector.len() != rep.dim() {
        return Err(Error::InvalidParameter(format!("vector length {} != {}", vector.len(), rep.dim())));
    }
    Ok(rep.apply(op, vector))
}

/// `op` compressed to a window, as a [`LinearOp`]. Its norm is a lower
/// bound for the C*-norm.
pub struct WindowOp<'a> {
    pub rep: WindowRep<'a>,
    pub op: BandOperator,
    pub adjoint: BandOperator,
}

impl<'a> WindowOp<'a> {
    pub fn new(sys: &'a SampledSystem, op: &BandOperator, window: RectWindow) -> Result<Self> {
        Ok(WindowOp { rep: WindowRep::new(sys, window)?, op: op.clone(), adjoint: op.adjoint(sys)? })
    }
}

impl LinearOp for WindowOp<'_> {
    fn dim(&self) -> usize {
        self.rep.dim()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        self.rep.apply(&self.op, x)
    }

    fn apply_adjoint(&self, x: &[C64]) -> Vec<C64> {
        self.rep.apply(&self.adjoint, x)
    }
}

/// The Bloch fibre `π_θ(a u_v) ξ(x) = e^{iθ·v} a(x) ξ(α^{-v} x)` on `ℓ²(X)`.
/// The C*-norm is `sup_θ ‖π_θ(·)‖`.
pub fn fiber_matrix(sys: &SampledSystem, op: &BandOperator, theta: &[f64]) -> Result<DMatrix<C64>> {
    let p = sys.points();
    let mut m = DMatrix::<C64>::zeros(p, p);
    for (v, a) in &op.terms {
        let phase: f64 = v.coords().iter().zip(theta).map(|(&k, t)| k as f64 * t).sum();
        let e = C64::from_polar(1.0, phase);
        let back = sys.permutation(&-v)?;
        for x in 0..p {
            m[(x, back[x] as usize)] += e * a[x];
        }
    }
    Ok(m)
}

/// Rigorous bracket `lower ≤ ‖op‖ ≤ upper` for the crossed-product norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormEnclosure {
    pub lower: f64,
    pub upper: f64,
}

impl NormEnclosure {
    pub fn exact(v: f64) -> Self {
        NormEnclosure { lower: v, upper: v }
    }
}

fn theta_grid(m: usize) -> usize {
    match m {
        1 => 128,
        2 => 24,
        _ => 8,
    }
}

fn weighted_median(mut pts: Vec<(i64, f64)>) -> i64 {
    pts.sort_by_key(|p| p.0);
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (k, w) in &pts {
        acc += w;
        if acc >= total / 2.0 {
            return *k;
        }
    }
    pts.last().map_or(0, |p| p.0)
}

/// Norm in the crossed product. A single term has norm `sup |a|`; otherwise
/// fibres are evaluated on a `θ` grid with `K` points per coordinate and the
/// upper end adds the Lipschitz slack `π/K · Σ_v ‖a_v‖ ‖v - v_0‖_1`.
pub fn crossed_norm(sys: &SampledSystem, op: &BandOperator, policy: &NormPolicy) -> Result<NormEnclosure> {
    let live: Vec<(&LatticeVector, &Vec<C64>)> = op.terms.iter().filter(|(_, c)| sup_norm(c) > 0.0).collect();
    match live.len() {
        0 => return Ok(NormEnclosure::exact(0.0)),
        1 => return Ok(NormEnclosure::exact(sup_norm(live[0].1))),
        _ => {}
    }
    let m = op.rank;
    let k = theta_grid(m);
    let v0: Vec<i64> = (0..m)
        .map(|i| weighted_median(live.iter().map(|(v, c)| (v.coords()[i], sup_norm(c))).collect()))
        .collect();
    let lip: f64 = live
        .iter()
        .map(|(v, c)| sup_norm(c) * v.coords().iter().zip(&v0).map(|(a, b)| (a - b).abs() as f64).sum::<f64>())
        .sum();
    let total = k.pow(m as u32);
    let fibre = |idx: usize| -> Result<f64> {
        let mut rem = idx;
        let theta: Vec<f64> = (0..m)
            .map(|_| {
                let t = rem % k;
                rem /= k;
                2.0 * PI * t as f64 / k as f64
            })
            .collect();
        let mat = fiber_matrix(sys, op, &theta)?;
        Ok(if mat.nrows() <= policy.dense_threshold {
            norm::matrix_norm(&mat)
        } else {
            norm::power_norm(&norm::DenseOp(mat), policy)
        })
    };
    let values = exec::map_range(total, fibre);
    let mut lower: f64 = 0.0;
    for v in values {
        lower = lower.max(v?);
    }
    let upper = (lower + lip * PI / k as f64).min(op.l1_norm());
    Ok(NormEnclosure { lower, upper })
}

/// Smallest eigenvalue over the fibre grid of a self-adjoint element.
pub fn crossed_min_eigenvalue(sys: &SampledSystem, op: &BandOperator) -> Result<f64> {
    let m = op.rank;
    let k = theta_grid(m);
    let total = k.pow(m as u32);
    let mut lo = f64::INFINITY;
    for idx in 0..total {
        let mut rem = idx;
        let theta: Vec<f64> = (0..m)
            .map(|_| {
                let t = rem % k;
                rem /= k;
                2.0 * PI * t as f64 / k as f64
            })
            .collect();
        lo = lo.min(norm::min_eigenvalue(&fiber_matrix(sys, op, &theta)?));
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(c: &[i64]) -> LatticeVector {
        LatticeVector::new(c.to_vec())
    }

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn algebra_rules() {
        let sys = SampledSystem::make_cyclic(&[5]).unwrap();
        let a: Vec<C64> = (0..5).map(|x| c(x as f64)).collect();
        let b: Vec<C64> = (0..5).map(|x| C64::new(1.0, x as f64)).collect();
        let x = BandOperator::monomial(lv(&[2]), a.clone());
        let y = BandOperator::monomial(lv(&[-1]), b.clone());
        let xy = x.mul(&sys, &y).unwrap();
        let coeff = xy.coefficient(&lv(&[1])).unwrap();
        let moved = act_function(&sys, &lv(&[2]), &b).unwrap();
        for p in 0..5 {
            assert_eq!(coeff[p], a[p] * moved[p]);
        }
        // (xy)* = y* x*
        let lhs = xy.adjoint(&sys).unwrap();
        let rhs = y.adjoint(&sys).unwrap().mul(&sys, &x.adjoint(&sys).unwrap()).unwrap();
        for (v, c1) in &lhs.terms {
            let c2 = rhs.coefficient(v).unwrap();
            assert!(c1.iter().zip(c2).all(|(p, q)| (p - q).norm() < 1e-12));
        }
    }

    #[test]
    fn identity_and_padding() {
        let sys = SampledSystem::make_cyclic(&[4]).unwrap();
        let id = BandOperator::identity(1, 4);
        let rep = WindowRep::padded_j(&sys, 2, 0).unwrap();
        let xi: Vec<C64> = (0..rep.dim()).map(|i| C64::new(i as f64, 1.0)).collect();
        assert_eq!(band_apply(&sys, &id, 2, 0, &xi).unwrap(), xi);
        let shift = BandOperator::monomial(lv(&[1]), vec![c(1.0); 4]);
        assert_eq!(band_apply(&sys, &shift, 2, 0, &xi).unwrap_err().code(), "E_PADDING");
    }

    #[test]
    fn fibre_norms() {
        let sys = SampledSystem::make_cyclic(&[6]).unwrap();
        // 1 + u_1 has norm 2 (θ = 0 fibre)
        let op = BandOperator::identity(1, 6).add(&BandOperator::monomial(lv(&[1]), vec![c(1.0); 6]));
        let e = crossed_norm(&sys, &op, &NormPolicy::default()).unwrap();
        assert!(e.lower <= 2.0 + 1e-12 && e.upper >= 2.0 - 1e-12);
        assert!((e.lower - 2.0).abs() < 1e-9);
        let mono = BandOperator::monomial(lv(&[3]), (0..6).map(|x| c(x as f64 / 10.0)).collect());
        assert_eq!(crossed_norm(&sys, &mono, &NormPolicy::default()).unwrap(), NormEnclosure::exact(0.5));
    }

    #[test]
    fn window_lower_bound() {
        let sys = SampledSystem::make_cyclic(&[6]).unwrap();
        let op = BandOperator::identity(1, 6).add(&BandOperator::monomial(lv(&[1]), vec![c(1.0); 6]));
        let e = crossed_norm(&sys, &op, &NormPolicy::default()).unwrap();
        let w = WindowOp::new(&sys, &op, BoxWindow::j(4, 1).unwrap().rect()).unwrap();
        let lower = norm::dense_norm(&w);
        assert!(lower <= e.upper + 1e-12);
        assert!(lower > 1.8);
    }
}
