//! The approximation pipeline `x ↦ σ ∘ φ_n ∘ ψ_n ∘ μ(x)` on the desk model,
//! with every intermediate estimate measured next to its budget.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::band::{crossed_norm, sup_norm, BandOperator};
use super::compressed::{self, CompressedOperator, DiagonalWeight};
use super::inner::InnerApproximation;
use super::norm::{NormPolicy, C64};
use crate::dynsys::SampledSystem;
use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::{self, BoxWindow, LatticeVector};
use crate::rational::{self, Rational};
use crate::rokhlin::{self, ToleranceReport, TowerFamily};

/// Floating slack allowed on top of every budget.
pub const NUMERIC_SLACK: f64 = 1e-12;

/// A tower family over `B_{2n}` re-indexed by `J_n` through the index shift,
/// with indices outside `J_n` reduced modulo `2n`.
#[derive(Clone, Debug)]
pub struct CrossedFamily {
    pub n: usize,
    pub rank: usize,
    pub points: usize,
    exact: Vec<Vec<Vec<Rational>>>,
    values: Vec<Vec<Vec<f64>>>,
    sqrt: Vec<Vec<Vec<f64>>>,
    window: BoxWindow,
}

impl CrossedFamily {
    pub fn from_towers(family: &TowerFamily) -> Result<Self> {
        family.validate()?;
        if family.side % 2 != 0 {
            return Err(Error::InvalidParameter(format!("tower side {} must be even (2n)", family.side)));
        }
        let n = family.side / 2;
        let m = family.rank;
        let window = BoxWindow::j(n, m)?;
        let shift = lattice::index_shift(n, m);
        let mut exact = Vec::new();
        for i in 0..family.upper() {
            exact.push(window.vectors().iter().map(|w| family.function(i, &(w - &shift)).to_vec()).collect::<Vec<_>>());
        }
        let values: Vec<Vec<Vec<f64>>> =
            exact.iter().map(|l| l.iter().map(|f| f.iter().map(rational::to_f64).collect()).collect()).collect();
        let sqrt = values.iter().map(|l| l.iter().map(|f| f.iter().map(|x| x.sqrt()).collect()).collect()).collect();
        Ok(CrossedFamily { n, rank: m, points: family.points, exact, values, sqrt, window })
    }

    pub fn levels(&self) -> usize {
        self.values.len()
    }

    fn slot(&self, w: &LatticeVector) -> usize {
        self.window.index_of(&lattice::reduce_j(w, self.n)).expect("reduced into J_n")
    }

    pub fn f(&self, l: usize, w: &LatticeVector) -> &[f64] {
        &self.values[l][self.slot(w)]
    }

    pub fn f_exact(&self, l: usize, w: &LatticeVector) -> &[Rational] {
        &self.exact[l][self.slot(w)]
    }

    pub fn sqrt_f(&self, l: usize, w: &LatticeVector) -> &[f64] {
        &self.sqrt[l][self.slot(w)]
    }
}

/// Defects of a crossed family: the relations for `f` and `f^{1/2}` with shifts
/// in `J_n ∪ (-J_n)` and cyclic indices in `J_n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FamilyDefects {
    pub eps1: f64,
    pub eps2: f64,
    pub sqrt_eps2: f64,
    pub eps3: f64,
    pub sqrt_eps3: f64,
    /// The maximum of the above: the `ε` of the pipeline.
    pub epsilon: f64,
}

pub fn family_defects(sys: &SampledSystem, fam: &CrossedFamily) -> Result<FamilyDefects> {
    let p = fam.points;
    let slots = fam.window.vectors();
    let k = slots.len();
    let mut sum = vec![0.0; p];
    for l in 0..fam.levels() {
        for f in &fam.values[l] {
            for (s, x) in sum.iter_mut().zip(f) {
                *s += x;
            }
        }
    }
    let eps1 = sum.iter().map(|s| (1.0 - s).abs()).fold(0.0, f64::max);
    let pair_sup = |tab: &Vec<Vec<Vec<f64>>>| {
        exec::max_range(fam.levels() * k, |idx| {
            let (l, a) = (idx / k, idx % k);
            let mut worst: f64 = 0.0;
            for b in a + 1..k {
                for x in 0..p {
                    worst = worst.max((tab[l][a][x] * tab[l][b][x]).abs());
                }
            }
            worst
        })
    };
    let eps2 = pair_sup(&fam.values);
    let sqrt_eps2 = pair_sup(&fam.sqrt);
    let mut shifts: Vec<LatticeVector> = slots.iter().cloned().chain(slots.iter().map(|w| -w)).collect();
    shifts.sort();
    shifts.dedup();
    let backs = shifts.iter().map(|u| sys.permutation(&-u)).collect::<Result<Vec<_>>>()?;
    let shift_sup = |tab: &Vec<Vec<Vec<f64>>>| {
        exec::max_range(shifts.len(), |si| {
            let back = &backs[si];
            let mut worst: f64 = 0.0;
            for l in 0..fam.levels() {
                for (wi, w) in slots.iter().enumerate() {
                    let target = &tab[l][fam.slot(&(w + &shifts[si]))];
                    let src = &tab[l][wi];
                    for x in 0..p {
                        worst = worst.max((src[back[x] as usize] - target[x]).abs());
                    }
                }
            }
            worst
        })
    };
    let eps3 = shift_sup(&fam.values);
    let sqrt_eps3 = shift_sup(&fam.sqrt);
    let epsilon = [eps1, eps2, sqrt_eps2, eps3, sqrt_eps3].into_iter().fold(0.0, f64::max);
    Ok(FamilyDefects { eps1, eps2, sqrt_eps2, eps3, sqrt_eps3, epsilon })
}

/// Shared lookup tables for the maps `σ_p^{(l)}`.
pub struct SigmaContext<'a> {
    pub sys: &'a SampledSystem,
    pub fam: &'a CrossedFamily,
    slots: Vec<LatticeVector>,
    /// `x ↦ α^{-v}(x)` keyed by `v`, for `v ∈ J_n ∪ (J_n - J_n)`.
    back: BTreeMap<LatticeVector, Vec<u32>>,
    binary: Vec<Vec<u8>>,
}

impl<'a> SigmaContext<'a> {
    pub fn new(sys: &'a SampledSystem, fam: &'a CrossedFamily) -> Result<Self> {
        if fam.points != sys.points() || fam.rank != sys.rank() {
            return Err(Error::InvalidParameter("family does not match the system".into()));
        }
        let slots = fam.window.vectors();
        let mut back = BTreeMap::new();
        for v in &slots {
            for w in &slots {
                for u in [v.clone(), v - w] {
                    if !back.contains_key(&u) {
                        back.insert(u.clone(), sys.permutation(&-&u)?);
                    }
                }
            }
        }
        Ok(SigmaContext { sys, fam, slots, back, binary: lattice::binary_vectors(sys.rank()) })
    }

    fn act(&self, v: &LatticeVector, c: &[C64]) -> Vec<C64> {
        let back = &self.back[v];
        back.iter().map(|&y| c[y as usize]).collect()
    }

    fn act_real(&self, v: &LatticeVector, c: &[f64]) -> Vec<f64> {
        let back = &self.back[v];
        back.iter().map(|&y| c[y as usize]).collect()
    }

    fn sp(&self, p: &[u8], v: &LatticeVector) -> LatticeVector {
        lattice::shift_s(p, self.fam.n, v).expect("slot lies in J_n")
    }

    /// `σ_p^{(l)}(e_{v,w} ⊗ b) = f^{1/2}_{s_p(v)} α^v(b) α^{v-w}(f^{1/2}_{s_p(w)}) u_{v-w}`.
    pub fn sigma_block(&self, l: usize, p: &[u8], r: usize, c: usize, b: &[C64]) -> (LatticeVector, Vec<C64>) {
        let (v, w) = (&self.slots[r], &self.slots[c]);
        let left = self.fam.sqrt_f(l, &self.sp(p, v));
        let moved = self.act(v, b);
        let d = v - w;
        let right = self.act_real(&d, self.fam.sqrt_f(l, &self.sp(p, w)));
        let coeff = (0..b.len()).map(|x| moved[x] * (left[x] * right[x])).collect();
        (d, coeff)
    }

    /// The `(⋆)` target `f_{s_p(v)} α^v(b) u_{v-w}`.
    pub fn star_target(&self, l: usize, p: &[u8], r: usize, c: usize, b: &[C64]) -> (LatticeVector, Vec<C64>) {
        let (v, w) = (&self.slots[r], &self.slots[c]);
        let f = self.fam.f(l, &self.sp(p, v));
        let moved = self.act(v, b);
        (v - w, (0..b.len()).map(|x| moved[x] * f[x]).collect())
    }

    /// `σ_p^{(l)}` extended linearly over the blocks.
    pub fn sigma(&self, l: usize, p: &[u8], x: &CompressedOperator) -> Result<BandOperator> {
        if x.n != self.fam.n || x.rank != self.fam.rank {
            return Err(Error::InvalidParameter(format!("compressed window J_{} does not match the family's J_{}", x.n, self.fam.n)));
        }
        let mut out = BandOperator::zero(self.fam.rank, self.fam.points);
        for (&(r, c), b) in &x.blocks {
            let (d, coeff) = self.sigma_block(l, p, r, c, b);
            out.add_term(d, &coeff);
        }
        Ok(out)
    }

    /// `σ = Σ_l Σ_p σ_p^{(l)}`.
    pub fn sigma_total(&self, x: &CompressedOperator) -> Result<BandOperator> {
        let mut out = BandOperator::zero(self.fam.rank, self.fam.points);
        for l in 0..self.fam.levels() {
            for p in &self.binary {
                out = out.add(&self.sigma(l, p, x)?);
            }
        }
        Ok(out)
    }

    /// `(σ ∘ φ_n ∘ ψ_n ∘ μ)(op)`.
    pub fn approximate(&self, inner: &dyn InnerApproximation, op: &BandOperator) -> Result<BandOperator> {
        let y = compressed::mu(self.sys, op, self.fam.n)?;
        let mut out = BandOperator::zero(self.fam.rank, self.fam.points);
        for i in 0..inner.colors() {
            out = out.add(&self.sigma_total(&y.map_blocks(|b| inner.apply(i, b)))?);
        }
        Ok(out)
    }

    pub fn binary(&self) -> &[Vec<u8>] {
        &self.binary
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderZeroReport {
    pub pairs: usize,
    /// `max ‖T(a) T(b)‖ / (‖a‖ ‖b‖)` using the upper norm enclosure.
    pub defect: f64,
    pub worst_pair: usize,
}

/// Measures how far `map` is from preserving orthogonality on the given pairs.
pub fn order_zero_defect(
    sys: &SampledSystem,
    map: &dyn Fn(&CompressedOperator) -> Result<BandOperator>,
    pairs: &[(CompressedOperator, CompressedOperator)],
    policy: &NormPolicy,
) -> Result<OrderZeroReport> {
    let mut defect: f64 = 0.0;
    let mut worst_pair = 0;
    for (i, (a, b)) in pairs.iter().enumerate() {
        let (na, nb) = (a.norm(), b.norm());
        let prod = a.mul(b).norm();
        if prod > 1e-12 * (na * nb).max(1.0) {
            return Err(Error::NotOrthogonal { index: i, norm: prod });
        }
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let value = crossed_norm(sys, &map(a)?.mul(sys, &map(b)?)?, policy)?.upper / (na * nb);
        if value > defect {
            defect = value;
            worst_pair = i;
        }
    }
    Ok(OrderZeroReport { pairs: pairs.len(), defect, worst_pair })
}

fn random_function(rng: &mut ChaCha8Rng, points: usize) -> Vec<C64> {
    (0..points)
        .map(|_| C64::from_polar(rng.random_range(0.0..1.0), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<C64> {
    DMatrix::from_fn(k, k, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) / k as f64)
}

/// Deterministic orthogonal pairs in `M_{|J_n|}(C(X))`: matrix units with
/// mismatched inner indices, `Y ⊗ χ_S` against `Z ⊗ χ_{S^c}`, their positive
/// squares, and diagonal units with disjoint supports.
pub fn orthogonal_pairs(n: usize, rank: usize, points: usize, seed: u64) -> Result<Vec<(CompressedOperator, CompressedOperator)>> {
    let k = BoxWindow::j(n, rank)?.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for _ in 0..4 {
        let (w1, w2, w4) = (rng.random_range(0..k), rng.random_range(0..k), rng.random_range(0..k));
        let w3 = if k > 1 { (w2 + 1 + rng.random_range(0..k - 1)) % k } else { continue };
        let a = random_function(&mut rng, points);
        let b = random_function(&mut rng, points);
        pairs.push((CompressedOperator::matrix_unit(n, rank, w1, w2, a), CompressedOperator::matrix_unit(n, rank, w3, w4, b)));
    }
    for _ in 0..3 {
        let s: Vec<bool> = (0..points).map(|_| rng.random_bool(0.5)).collect();
        let chi = |inside: bool| -> Vec<C64> { s.iter().map(|&b| C64::new(if b == inside { 1.0 } else { 0.0 }, 0.0)).collect() };
        let y = CompressedOperator::tensor(n, rank, &random_matrix(&mut rng, k), &chi(true));
        let z = CompressedOperator::tensor(n, rank, &random_matrix(&mut rng, k), &chi(false));
        pairs.push((y.adjoint().mul(&y), z.adjoint().mul(&z)));
        pairs.push((y, z));
    }
    if k > 1 {
        let r = rng.random_range(0..k);
        let c = (r + 1) % k;
        let a: Vec<C64> = random_function(&mut rng, points).iter().map(|z| C64::new(z.norm(), 0.0)).collect();
        let b: Vec<C64> = random_function(&mut rng, points).iter().map(|z| C64::new(z.norm(), 0.0)).collect();
        pairs.push((CompressedOperator::matrix_unit(n, rank, r, r, a), CompressedOperator::matrix_unit(n, rank, c, c, b)));
    }
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CotlarReport {
    pub members: usize,
    pub contractions: bool,
    /// Measured `max_{i≠j} ‖b_i^* b_j‖`.
    pub eta_measured: f64,
    pub eta: f64,
    pub premise_holds: bool,
    pub sum_norm: f64,
    pub max_norm: f64,
    pub delta: f64,
    /// `‖Σ b_j‖ ≤ δ + max ‖b_j‖` with the sum bounded from above and the
    /// maximum from below.
    pub conclusion_holds: bool,
}

/// Checks one instance of the almost-orthogonality norm bound. Premise
/// violations are reported and the conclusion is still evaluated.
pub fn cotlar_bound_check(
    sys: &SampledSystem,
    ops: &[BandOperator],
    eta: f64,
    delta: f64,
    policy: &NormPolicy,
) -> Result<CotlarReport> {
    let Some(first) = ops.first() else {
        return Err(Error::InvalidParameter("empty family".into()));
    };
    let norms = ops.iter().map(|b| crossed_norm(sys, b, policy)).collect::<Result<Vec<_>>>()?;
    let contractions = norms.iter().all(|e| e.lower <= 1.0 + NUMERIC_SLACK);
    let adjoints = ops.iter().map(|b| b.adjoint(sys)).collect::<Result<Vec<_>>>()?;
    let mut eta_measured: f64 = 0.0;
    for i in 0..ops.len() {
        for j in 0..ops.len() {
            if i != j {
                eta_measured = eta_measured.max(crossed_norm(sys, &adjoints[i].mul(sys, &ops[j])?, policy)?.upper);
            }
        }
    }
    let mut sum = BandOperator::zero(first.rank, first.points);
    for b in ops {
        sum = sum.add(b);
    }
    let sum_norm = crossed_norm(sys, &sum, policy)?.upper;
    let max_norm = norms.iter().map(|e| e.lower).fold(0.0, f64::max);
    Ok(CotlarReport {
        members: ops.len(),
        contractions,
        eta_measured,
        eta,
        premise_holds: eta_measured <= eta + NUMERIC_SLACK,
        sum_norm,
        max_norm,
        delta,
        conclusion_holds: sum_norm <= delta + max_norm + NUMERIC_SLACK,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestOp {
    pub label: String,
    pub op: BandOperator,
}

/// `u_v` for every `v ∈ J_N`; with a seed also `a_v u_v` with random
/// coefficients of sup-norm exactly 1, and their sum over `J_N`.
pub fn monomial_test_ops(sys: &SampledSystem, big_n: usize, seed: Option<u64>) -> Result<Vec<TestOp>> {
    let (m, p) = (sys.rank(), sys.points());
    let vs = BoxWindow::j(big_n, m)?.vectors();
    let mut out: Vec<TestOp> =
        vs.iter().map(|v| TestOp { label: format!("u{v}"), op: BandOperator::monomial(v.clone(), vec![C64::new(1.0, 0.0); p]) }).collect();
    if let Some(seed) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = BandOperator::zero(m, p);
        for v in &vs {
            let a = unit_sup_function(&mut rng, p);
            sum.add_term(v.clone(), &a);
            out.push(TestOp { label: format!("a{v}u{v}"), op: BandOperator::monomial(v.clone(), a) });
        }
        out.push(TestOp { label: "sum".into(), op: sum });
    }
    Ok(out)
}

/// A random function normalised to sup-norm 1.
pub fn unit_sup_function(rng: &mut ChaCha8Rng, points: usize) -> Vec<C64> {
    let a = random_function(rng, points);
    let s = sup_norm(&a);
    a.into_iter().map(|z| z / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub measured: f64,
    pub budget: f64,
    pub pass: bool,
}

impl Check {
    pub fn new(measured: f64, budget: f64) -> Self {
        Self::with_slack(measured, budget, NUMERIC_SLACK)
    }

    pub fn with_slack(measured: f64, budget: f64, slack: f64) -> Self {
        Check { measured, budget, pass: measured <= budget + slack && measured.is_finite() }
    }
}

/// Slack on the order-zero budget; products of disjointly supported
/// functions pick up rounding through the fibre norms.
pub const ORDER_ZERO_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderZeroEntry {
    pub level: usize,
    pub p: Vec<u8>,
    pub color: usize,
    pub report: OrderZeroReport,
    /// Budget `(|J_n| + 2) |J_n|^3 ε`.
    pub check: Check,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaChoice {
    /// `3 |J_n| |J_N| ε`.
    pub from_epsilon: f64,
    /// `|J_N| (N/n)^m`: smallest `δ` absorbing the tail term.
    pub tail_premise: f64,
    /// `|J_n| max |√d(w) - √d(w - v)|` over `v ∈ J_N`.
    pub sqrt_premise: f64,
    pub floor: f64,
    pub value: f64,
    pub binding: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Params {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub d: usize,
    pub s: usize,
    pub j_n: usize,
    pub j_big_n: usize,
    pub points: usize,
    pub inner: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpReport {
    pub label: String,
    pub coefficient_norm: f64,
    pub commutator: Check,
    pub mu_vs_d_psi: Check,
    /// Worst `(⋆)` defect per unit block norm against `3ε`.
    pub star: Check,
    /// Monomials only: budget `2^{m+3}(d+1)(s+1) δ/|J_N| · ‖a‖`.
    pub monomial: Option<Check>,
    /// Budget `2^{m+3}(d+1)(s+1) δ`.
    pub f_prime: Check,
    /// Budget `2^{m+4}(d+1)(s+1) δ`.
    pub end_to_end: Check,
    pub defect_lower: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineReport {
    pub params: Params,
    pub towers: ToleranceReport,
    pub family: FamilyDefects,
    pub delta: DeltaChoice,
    /// `max |Σ_w f_w - Σ_w d(w) Σ_p f_{s_p(w)}|`, evaluated exactly.
    #[serde(with = "rational::serde_str")]
    pub tower_sum_identity: Rational,
    /// Worst tail sum over `v ∈ J_N` and `l`.
    pub tail: Check,
    /// Worst `‖1 - Σ_l Σ_{w ∈ J_n ∩ (v+J_n)} d(w) Σ_p f_{s_p(w)}‖`.
    pub lower_bound: Check,
    /// The almost-orthogonality bound on the tail families.
    pub cotlar: Vec<CotlarReport>,
    pub cotlar_holds: bool,
    /// `‖σ(1)‖` against `2^m(d+2)`.
    pub sigma_unit: Check,
    /// `σ_p^{(l)} ∘ φ_n^{(i)}` on seeded orthogonal pairs, when requested.
    pub order_zero: Vec<OrderZeroEntry>,
    pub ops: Vec<OpReport>,
    pub pass: bool,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    /// Overrides the default floor (the larger of the two premises).
    pub delta_floor: Option<f64>,
    /// Seed for the orthogonal test pairs; `None` skips the order-zero step.
    pub order_zero_seed: Option<u64>,
    pub policy: NormPolicy,
}

fn pow2(k: usize) -> f64 {
    (1u64 << k) as f64
}

/// Runs the pipeline on `test_ops` and compares every estimate of the chain
/// with its budget.
pub fn pipeline_defect(
    sys: &SampledSystem,
    towers: &TowerFamily,
    inner: &dyn InnerApproximation,
    test_ops: &[TestOp],
    cfg: &PipelineConfig,
) -> Result<PipelineReport> {
    let (n, big_n) = (cfg.n, cfg.big_n);
    let m = sys.rank();
    if big_n == 0 || big_n > n {
        return Err(Error::InvalidParameter(format!("need 1 <= N <= n (N = {big_n}, n = {n})")));
    }
    if towers.side != 2 * n {
        return Err(Error::InvalidParameter(format!("tower side {} must equal 2n = {}", towers.side, 2 * n)));
    }
    let jn = BoxWindow::j(n, m)?;
    let jbig = BoxWindow::j(big_n, m)?;
    for t in test_ops {
        if let Some(v) = t.op.terms.keys().find(|v| !jbig.contains(v)) {
            return Err(Error::out_of_window(v, jbig.label()));
        }
        if t.op.terms.values().any(|a| sup_norm(a) > 1.0 + NUMERIC_SLACK) {
            return Err(Error::InvalidParameter(format!("test op {} has a non-contractive coefficient", t.label)));
        }
    }
    let policy = &cfg.policy;
    let def16 = rokhlin::verify_def16(sys, towers, &[])?;
    let fam = CrossedFamily::from_towers(towers)?;
    let ctx = SigmaContext::new(sys, &fam)?;
    let defects = family_defects(sys, &fam)?;
    let d = fam.levels() - 1;
    let s = inner.colors() - 1;
    let (card_n, card_big) = (jn.len() as f64, jbig.len() as f64);
    let ratio = big_n as f64 / n as f64;

    let from_epsilon = 3.0 * card_n * card_big * defects.epsilon;
    let tail_premise = card_big * ratio.powi(m as i32);
    let sqrt_premise = card_n
        * jbig.vectors().iter().map(|v| compressed::sqrt_tent_max_difference(n, v)).collect::<Result<Vec<_>>>()?.into_iter().fold(0.0, f64::max);
    let (floor, floor_name) = match cfg.delta_floor {
        Some(f) => (f, "override"),
        None if tail_premise >= sqrt_premise => (tail_premise, "tail_premise"),
        None => (sqrt_premise, "sqrt_premise"),
    };
    let (delta, binding) = if from_epsilon >= floor { (from_epsilon, "epsilon") } else { (floor, floor_name) };
    let delta_choice = DeltaChoice { from_epsilon, tail_premise, sqrt_premise, floor, value: delta, binding: binding.into() };

    let weights = DiagonalWeight::new(n, m)?;
    let tents: Vec<Rational> = jn.vectors().iter().map(|w| lattice::tent_m(n, w)).collect::<Result<_>>()?;
    let p = sys.points();

    // Σ_w f_w = Σ_w d(w) Σ_p f_{s_p(w)}, exactly
    let mut identity = Rational::zero();
    for l in 0..fam.levels() {
        for x in 0..p {
            let mut lhs = Rational::zero();
            let mut rhs = Rational::zero();
            for (wi, w) in jn.vectors().iter().enumerate() {
                lhs += fam.f_exact(l, w)[x];
                for bits in ctx.binary() {
                    rhs += tents[wi] * fam.f_exact(l, &lattice::shift_s(bits, n, w)?)[x];
                }
            }
            let diff = (lhs - rhs).abs();
            if diff > identity {
                identity = diff;
            }
        }
    }

    let tail_budget = pow2(m) * (delta / card_big + ratio.powi(m as i32));
    let lower_budget = pow2(m + 2) * (d + 1) as f64 * delta / card_big;
    let mut tail_worst: f64 = 0.0;
    let mut lower_worst: f64 = 0.0;
    let mut cotlar = Vec::new();
    for v in jbig.vectors() {
        let mut covered = vec![0.0; p];
        for l in 0..fam.levels() {
            let mut tail = vec![0.0; p];
            let mut per_p: Vec<Vec<BandOperator>> = vec![Vec::new(); ctx.binary().len()];
            for (wi, w) in jn.vectors().iter().enumerate() {
                let inside = jn.contains(&(w - &v));
                for (pi, bits) in ctx.binary().iter().enumerate() {
                    let f = fam.f(l, &lattice::shift_s(bits, n, w)?);
                    let dw = weights.values[wi];
                    let target = if inside { &mut covered } else { &mut tail };
                    for x in 0..p {
                        target[x] += dw * f[x];
                    }
                    if !inside {
                        let coeff: Vec<C64> = f.iter().map(|&y| C64::new(dw * y, 0.0)).collect();
                        per_p[pi].push(BandOperator::monomial(LatticeVector::zero(m), coeff));
                    }
                }
            }
            tail_worst = tail_worst.max(tail.iter().copied().fold(0.0, f64::max));
            for members in per_p.iter().filter(|b| !b.is_empty()) {
                cotlar.push(cotlar_bound_check(sys, members, defects.epsilon, delta / card_big, policy)?);
            }
        }
        lower_worst = lower_worst.max(covered.iter().map(|c| (1.0 - c).abs()).fold(0.0, f64::max));
    }
    let cotlar_holds = cotlar.iter().all(|c| c.conclusion_holds);

    let sigma_one = ctx.sigma_total(&CompressedOperator::identity(n, m, p))?;
    let sigma_unit = Check::new(crossed_norm(sys, &sigma_one, policy)?.upper, pow2(m) * (d + 2) as f64);

    let mut order_zero = Vec::new();
    if let Some(seed) = cfg.order_zero_seed {
        let pairs = orthogonal_pairs(n, m, p, seed)?;
        let budget = (card_n + 2.0) * card_n.powi(3) * defects.epsilon;
        for l in 0..fam.levels() {
            for bits in ctx.binary() {
                for color in 0..inner.colors() {
                    let map = colored_map(&ctx, inner, l, bits.clone(), color);
                    let report = order_zero_defect(sys, &map, &pairs, policy)?;
                    let check = Check::with_slack(report.defect, budget, ORDER_ZERO_SLACK);
                    order_zero.push(OrderZeroEntry { level: l, p: bits.clone(), color, report, check });
                }
            }
        }
    }

    let colors = ((d + 1) * (s + 1)) as f64;
    let ops = exec::map_slice(test_ops, |t| -> Result<OpReport> {
        let a_norm: f64 = t.op.terms.values().map(|a| sup_norm(a)).sum();
        let psi = compressed::compress_psi(sys, &t.op, n)?;
        let ones = vec![1.0; weights.sqrt.len()];
        let comm = psi.scale_slots(&weights.sqrt, &ones).sub(&psi.scale_slots(&ones, &weights.sqrt));
        let mu_x = psi.scale_slots(&weights.sqrt, &weights.sqrt);
        let d_psi = psi.scale_slots(&weights.values, &ones);
        let mut star: f64 = 0.0;
        for i in 0..inner.colors() {
            let y = mu_x.map_blocks(|b| inner.apply(i, b));
            for (&(r, c), b) in &y.blocks {
                let bn = sup_norm(b);
                if bn == 0.0 {
                    continue;
                }
                for l in 0..fam.levels() {
                    for bits in ctx.binary() {
                        let (_, got) = ctx.sigma_block(l, bits, r, c, b);
                        let (_, want) = ctx.star_target(l, bits, r, c, b);
                        let diff = got.iter().zip(&want).map(|(g, w)| (g - w).norm()).fold(0.0, f64::max);
                        star = star.max(diff / bn);
                    }
                }
            }
        }
        let approx = ctx.approximate(inner, &t.op)?;
        let err = crossed_norm(sys, &t.op.sub(&approx), policy)?;
        let live = t.op.terms.values().filter(|a| sup_norm(a) > 0.0).count();
        Ok(OpReport {
            label: t.label.clone(),
            coefficient_norm: a_norm,
            commutator: Check::new(comm.norm(), delta / card_n * a_norm),
            mu_vs_d_psi: Check::new(mu_x.sub(&d_psi).norm(), delta / card_n * a_norm),
            star: Check::new(star, 3.0 * defects.epsilon),
            monomial: (live == 1).then(|| Check::new(err.upper, pow2(m + 3) * colors * delta / card_big * a_norm)),
            f_prime: Check::new(err.upper, pow2(m + 3) * colors * delta),
            end_to_end: Check::new(err.upper, pow2(m + 4) * colors * delta),
            defect_lower: err.lower,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let tail = Check::new(tail_worst, tail_budget);
    let lower_bound = Check::new(lower_worst, lower_budget);
    let mut violations = Vec::new();
    if !identity.is_zero() {
        violations.push(format!("tower-sum identity off by {}", rational::format(&identity)));
    }
    for (name, c) in [("tail", &tail), ("lower_bound", &lower_bound), ("sigma_unit", &sigma_unit)] {
        if !c.pass {
            violations.push(format!("{name}: {} > {}", c.measured, c.budget));
        }
    }
    for e in order_zero.iter().filter(|e| !e.check.pass) {
        violations.push(format!("order zero l={} p={:?} color={}: {} > {}", e.level, e.p, e.color, e.check.measured, e.check.budget));
    }
    if !cotlar_holds {
        violations.push("almost-orthogonality bound fails on a tail family".into());
    }
    for o in &ops {
        let checks = [
            ("commutator", Some(&o.commutator)),
            ("mu_vs_d_psi", Some(&o.mu_vs_d_psi)),
            ("star", Some(&o.star)),
            ("monomial", o.monomial.as_ref()),
            ("f_prime", Some(&o.f_prime)),
            ("end_to_end", Some(&o.end_to_end)),
        ];
        for (name, c) in checks {
            if let Some(c) = c.filter(|c| !c.pass) {
                violations.push(format!("{} {name}: {} > {}", o.label, c.measured, c.budget));
            }
        }
    }
    Ok(PipelineReport {
        params: Params {
            m,
            n,
            big_n,
            d,
            s,
            j_n: jn.len(),
            j_big_n: jbig.len(),
            points: p,
            inner: inner.name().into(),
        },
        towers: def16,
        family: defects,
        delta: delta_choice,
        tower_sum_identity: identity,
        tail,
        lower_bound,
        cotlar,
        cotlar_holds,
        sigma_unit,
        order_zero,
        ops,
        pass: violations.is_empty(),
        violations,
    })
}

/// `σ_p^{(l)} ∘ φ_n^{(i)}` as a closure over compressed operators.
pub fn colored_map<'a>(
    ctx: &'a SigmaContext<'a>,
    inner: &'a dyn InnerApproximation,
    l: usize,
    p: Vec<u8>,
    color: usize,
) -> impl Fn(&CompressedOperator) -> Result<BandOperator> + 'a {
    move |x| ctx.sigma(l, &p, &x.map_blocks(|b| inner.apply(color, b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cstar::inner::IdentityApproximation;
    use crate::rational::rat;
    use crate::rokhlin::{indicator_towers, mix_neighbors, tiling_cover};

    fn tiling(points: usize, n: usize) -> (SampledSystem, TowerFamily) {
        let sys = SampledSystem::make_cyclic(&[points]).unwrap();
        let fam = indicator_towers(&tiling_cover(&sys, 2 * n).unwrap());
        (sys, fam)
    }

    #[test]
    fn exact_tiling_has_no_defects() {
        let (sys, fam) = tiling(16, 2);
        let cf = CrossedFamily::from_towers(&fam).unwrap();
        let d = family_defects(&sys, &cf).unwrap();
        assert_eq!(d.epsilon, 0.0, "{d:?}");
        let mixed = mix_neighbors(&fam, &rat(1, 4)).unwrap();
        let d = family_defects(&sys, &CrossedFamily::from_towers(&mixed).unwrap()).unwrap();
        assert!(d.eps2 > 0.0 && d.eps3 == 0.0, "{d:?}");
    }

    #[test]
    fn sigma_of_unit_matrix_units() {
        let (sys, fam) = tiling(16, 2);
        let cf = CrossedFamily::from_towers(&fam).unwrap();
        let ctx = SigmaContext::new(&sys, &cf).unwrap();
        // σ(1) = Σ_l Σ_p Σ_w f_{s_p(w)} = Σ_w Σ_p f_{s_p(w)}: every B_4 slot counted twice
        let one = ctx.sigma_total(&CompressedOperator::identity(2, 1, 16)).unwrap();
        assert_eq!(one.bandwidth(), 0);
        let c = one.coefficient(&LatticeVector::zero(1)).unwrap();
        assert!(c.iter().all(|z| (z.re - 2.0).abs() < 1e-12 && z.im == 0.0), "{c:?}");
        let wrong = CompressedOperator::identity(3, 1, 16);
        assert_eq!(ctx.sigma(0, &[0], &wrong).unwrap_err().code(), "E_PARAM");
    }

    #[test]
    fn order_zero_on_exact_tiling() {
        let (sys, fam) = tiling(16, 2);
        let cf = CrossedFamily::from_towers(&fam).unwrap();
        let ctx = SigmaContext::new(&sys, &cf).unwrap();
        let pairs = orthogonal_pairs(2, 1, 16, 7).unwrap();
        let inner = IdentityApproximation;
        for bits in ctx.binary().to_vec() {
            let map = colored_map(&ctx, &inner, 0, bits, 0);
            let r = order_zero_defect(&sys, &map, &pairs, &NormPolicy::default()).unwrap();
            assert!(r.defect <= 1e-9, "{r:?}");
        }
    }

    #[test]
    fn non_orthogonal_pairs_are_rejected() {
        let (sys, fam) = tiling(16, 2);
        let cf = CrossedFamily::from_towers(&fam).unwrap();
        let ctx = SigmaContext::new(&sys, &cf).unwrap();
        let one = CompressedOperator::identity(2, 1, 16);
        let map = |x: &CompressedOperator| ctx.sigma(0, &[0], x);
        let err = order_zero_defect(&sys, &map, &[(one.clone(), one)], &NormPolicy::default()).unwrap_err();
        assert_eq!(err.code(), "E_ORTHOGONALITY");
    }

    #[test]
    fn cotlar_on_orthogonal_projections() {
        let sys = SampledSystem::make_cyclic(&[8]).unwrap();
        let chi = |lo: usize| -> Vec<C64> { (0..8).map(|x| C64::new(if x / 4 == lo { 1.0 } else { 0.0 }, 0.0)).collect() };
        let ops = vec![BandOperator::monomial(LatticeVector::zero(1), chi(0)), BandOperator::monomial(LatticeVector::zero(1), chi(1))];
        let r = cotlar_bound_check(&sys, &ops, 0.0, 0.0, &NormPolicy::default()).unwrap();
        assert!(r.contractions && r.premise_holds && r.conclusion_holds, "{r:?}");
        assert!((r.sum_norm - 1.0).abs() < 1e-12);
        let same = vec![ops[0].clone(), ops[0].clone()];
        let r = cotlar_bound_check(&sys, &same, 0.0, 0.0, &NormPolicy::default()).unwrap();
        assert!(!r.premise_holds && !r.conclusion_holds, "{r:?}");
    }

    #[test]
    fn pipeline_on_small_tiling() {
        let (sys, fam) = tiling(32, 4);
        let ops = monomial_test_ops(&sys, 2, Some(3)).unwrap();
        let cfg = PipelineConfig { n: 4, big_n: 2, delta_floor: None, order_zero_seed: Some(1), policy: NormPolicy::default() };
        let r = pipeline_defect(&sys, &fam, &IdentityApproximation, &ops, &cfg).unwrap();
        assert!(r.tower_sum_identity.is_zero());
        assert_eq!(r.family.epsilon, 0.0);
        assert!(r.pass, "{:#?}", r.violations);
        let again = pipeline_defect(&sys, &fam, &IdentityApproximation, &ops, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn pipeline_rejects_bad_windows() {
        let (sys, fam) = tiling(32, 4);
        let ops = monomial_test_ops(&sys, 3, None).unwrap();
        let cfg = PipelineConfig { n: 4, big_n: 2, delta_floor: None, order_zero_seed: Some(1), policy: NormPolicy::default() };
        assert_eq!(pipeline_defect(&sys, &fam, &IdentityApproximation, &ops, &cfg).unwrap_err().code(), "E_WINDOW");
        let cfg = PipelineConfig { n: 8, ..cfg };
        assert_eq!(pipeline_defect(&sys, &fam, &IdentityApproximation, &ops, &cfg).unwrap_err().code(), "E_PARAM");
    }
}
