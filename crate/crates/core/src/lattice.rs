//! Exact combinatorics of `Z^m`: the boxes `B_n = {0..n-1}^m` and
//! `J_n = {-n+1..n}^m`, tent weights, the shift bijections `s_a` and the
//! covering translates used by the marker and tower constructions.
//!
//! Every enumeration is lexicographic with the first coordinate most
//! significant.

use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::Rational;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticeVector(Vec<i64>);

impl LatticeVector {
    pub fn new(coords: Vec<i64>) -> Self {
        LatticeVector(coords)
    }

    pub fn zero(m: usize) -> Self {
        LatticeVector(vec![0; m])
    }

    pub fn unit(m: usize, i: usize) -> Self {
        let mut c = vec![0; m];
        c[i] = 1;
        LatticeVector(c)
    }

    pub fn splat(m: usize, value: i64) -> Self {
        LatticeVector(vec![value; m])
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn norm_inf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn norm_l1(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).sum()
    }

    pub fn scale(&self, k: i64) -> Self {
        LatticeVector(self.0.iter().map(|c| c * k).collect())
    }

    fn zip(&self, other: &Self, f: impl Fn(i64, i64) -> i64) -> Self {
        assert_eq!(self.rank(), other.rank(), "lattice rank mismatch");
        LatticeVector(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }
}

impl fmt::Display for LatticeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Add for &LatticeVector {
    type Output = LatticeVector;
    fn add(self, rhs: Self) -> LatticeVector {
        self.zip(rhs, |a, b| a + b)
    }
}

impl Sub for &LatticeVector {
    type Output = LatticeVector;
    fn sub(self, rhs: Self) -> LatticeVector {
        self.zip(rhs, |a, b| a - b)
    }
}

impl Neg for &LatticeVector {
    type Output = LatticeVector;
    fn neg(self) -> LatticeVector {
        LatticeVector(self.0.iter().map(|c| -c).collect())
    }
}

impl From<Vec<i64>> for LatticeVector {
    fn from(v: Vec<i64>) -> Self {
        LatticeVector(v)
    }
}

/// An axis-aligned box `{lo_i..=hi_i}` in `Z^m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RectWindow {
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl RectWindow {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::InvalidParameter("window bounds must have equal positive rank".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidParameter("empty window".into()));
        }
        Ok(RectWindow { lo, hi })
    }

    /// The cube `{lo..=hi}^m`.
    pub fn cube(m: usize, lo: i64, hi: i64) -> Result<Self> {
        Self::new(vec![lo; m], vec![hi; m])
    }

    pub fn rank(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    fn side(&self, i: usize) -> usize {
        (self.hi[i] - self.lo[i] + 1) as usize
    }

    pub fn len(&self) -> usize {
        (0..self.rank()).map(|i| self.side(i)).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, v: &LatticeVector) -> bool {
        v.rank() == self.rank()
            && v.coords().iter().enumerate().all(|(i, &c)| self.lo[i] <= c && c <= self.hi[i])
    }

    /// Lexicographic position of `v`, or `None` when outside.
    pub fn index_of(&self, v: &LatticeVector) -> Option<usize> {
        if !self.contains(v) {
            return None;
        }
        let mut idx = 0usize;
        for (i, &c) in v.coords().iter().enumerate() {
            idx = idx * self.side(i) + (c - self.lo[i]) as usize;
        }
        Some(idx)
    }

    pub fn vector_at(&self, mut idx: usize) -> LatticeVector {
        let m = self.rank();
        let mut coords = vec![0i64; m];
        for i in (0..m).rev() {
            let s = self.side(i);
            coords[i] = self.lo[i] + (idx % s) as i64;
            idx /= s;
        }
        LatticeVector(coords)
    }

    pub fn vectors(&self) -> Vec<LatticeVector> {
        (0..self.len()).map(|i| self.vector_at(i)).collect()
    }

    /// The same window grown by `pad` in every direction.
    pub fn padded(&self, pad: usize) -> Self {
        let p = pad as i64;
        RectWindow {
            lo: self.lo.iter().map(|c| c - p).collect(),
            hi: self.hi.iter().map(|c| c + p).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxKind {
    /// `B_n = {0, ..., n-1}^m`
    B,
    /// `J_n = {-n+1, ..., n}^m`
    J,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoxWindow {
    pub kind: BoxKind,
    pub n: usize,
    pub m: usize,
}

impl BoxWindow {
    pub fn new(kind: BoxKind, n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidParameter(format!("box needs n >= 1 and m >= 1 (got n={n}, m={m})")));
        }
        Ok(BoxWindow { kind, n, m })
    }

    pub fn b(n: usize, m: usize) -> Result<Self> {
        Self::new(BoxKind::B, n, m)
    }

    pub fn j(n: usize, m: usize) -> Result<Self> {
        Self::new(BoxKind::J, n, m)
    }

    pub fn rect(&self) -> RectWindow {
        let n = self.n as i64;
        match self.kind {
            BoxKind::B => RectWindow::cube(self.m, 0, n - 1),
            BoxKind::J => RectWindow::cube(self.m, -n + 1, n),
        }
        .expect("validated box")
    }

    pub fn len(&self) -> usize {
        let side = match self.kind {
            BoxKind::B => self.n,
            BoxKind::J => 2 * self.n,
        };
        side.pow(self.m as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, v: &LatticeVector) -> bool {
        self.rect().contains(v)
    }

    pub fn index_of(&self, v: &LatticeVector) -> Option<usize> {
        self.rect().index_of(v)
    }

    pub fn vectors(&self) -> Vec<LatticeVector> {
        self.rect().vectors()
    }

    pub(crate) fn label(&self) -> String {
        format!("{:?}_{}^{}", self.kind, self.n, self.m)
    }
}

pub fn enum_box(kind: BoxKind, n: usize, m: usize) -> Result<Vec<LatticeVector>> {
    Ok(BoxWindow::new(kind, n, m)?.vectors())
}

/// All `a ∈ {0,1}^m` in lexicographic order.
pub fn binary_vectors(m: usize) -> Vec<Vec<u8>> {
    (0..1usize << m)
        .map(|bits| (0..m).map(|i| ((bits >> (m - 1 - i)) & 1) as u8).collect())
        .collect()
}

/// `B_n - B_n = {-(n-1), ..., n-1}^m`.
pub fn difference_box(n: usize, m: usize) -> Result<RectWindow> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidParameter("difference box needs n, m >= 1".into()));
    }
    let k = n as i64 - 1;
    RectWindow::cube(m, -k, k)
}

/// Tent weight `d_n(j) = 1 - |j|/n` for `j ∈ {-n+1, ..., n}`.
pub fn tent(n: usize, j: i64) -> Result<Rational> {
    if n == 0 {
        return Err(Error::InvalidParameter("tent needs n >= 1".into()));
    }
    let ni = n as i64;
    if j <= -ni || j > ni {
        return Err(Error::OutOfWindow {
            vector: vec![j],
            window: format!("J_{n}^1"),
        });
    }
    Ok(Rational::one() - Rational::new(j.abs() as i128, n as i128))
}

/// Product tent `d_n^m(v) = ∏ d_n(v_i)` for `v ∈ J_n`.
pub fn tent_m(n: usize, v: &LatticeVector) -> Result<Rational> {
    let window = BoxWindow::j(n, v.rank().max(1))?;
    if v.rank() == 0 || !window.contains(v) {
        return Err(Error::out_of_window(v, window.label()));
    }
    v.coords()
        .iter()
        .try_fold(Rational::one(), |acc, &j| Ok(acc * tent(n, j)?))
}

fn check_binary(a: &[u8], m: usize) -> Result<()> {
    if a.len() != m {
        return Err(Error::RankMismatch { expected: m, got: a.len() });
    }
    if a.iter().any(|&x| x > 1) {
        return Err(Error::InvalidParameter(format!("shift selector {a:?} is not in {{0,1}}^m")));
    }
    Ok(())
}

/// Reduces an integer into the `J_n` window `{-n+1, ..., n}` modulo `2n`.
pub fn reduce_j1(x: i64, n: usize) -> i64 {
    let n = n as i64;
    (x + n - 1).rem_euclid(2 * n) - n + 1
}

/// Coordinatewise reduction of `v` into `J_n` modulo `2n`.
pub fn reduce_j(v: &LatticeVector, n: usize) -> LatticeVector {
    LatticeVector(v.coords().iter().map(|&x| reduce_j1(x, n)).collect())
}

/// Coordinatewise reduction of `v` into `B_n` modulo `n`.
pub fn reduce_b(v: &LatticeVector, n: usize) -> LatticeVector {
    LatticeVector(v.coords().iter().map(|&x| x.rem_euclid(n as i64)).collect())
}

/// The shift bijection `s_a(v) = (v_i + a_i n mod 2n)` with representatives in `J_n`.
pub fn shift_s(a: &[u8], n: usize, v: &LatticeVector) -> Result<LatticeVector> {
    let window = BoxWindow::j(n, v.rank().max(1))?;
    check_binary(a, v.rank())?;
    if !window.contains(v) {
        return Err(Error::out_of_window(v, window.label()));
    }
    Ok(LatticeVector(
        v.coords()
            .iter()
            .zip(a)
            .map(|(&j, &ai)| reduce_j1(j + ai as i64 * n as i64, n))
            .collect(),
    ))
}

/// `d_n^m(s_a(v))` for every `a ∈ {0,1}^m`, in lexicographic order of `a`.
/// The weights sum to one exactly.
pub fn partition_weights(n: usize, v: &LatticeVector) -> Result<Vec<(Vec<u8>, Rational)>> {
    binary_vectors(v.rank())
        .into_iter()
        .map(|a| {
            let w = tent_m(n, &shift_s(&a, n, v)?)?;
            Ok((a, w))
        })
        .collect()
}

/// The translate that carries `B_{2n}` onto `J_n`: `(-n+1, ..., -n+1)`.
///
/// This is the single index-shift convention shared by the tower synthesis
/// and the crossed-product window: `J_n = index_shift(n, m) + B_{2n}`.
pub fn index_shift(n: usize, m: usize) -> LatticeVector {
    LatticeVector::splat(m, -(n as i64) + 1)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoveringTranslates {
    pub vectors: Vec<LatticeVector>,
    pub base_n: usize,
}

impl CoveringTranslates {
    /// Exhaustively checks that the translates `w + B_{base_n}` are pairwise
    /// disjoint and that their union is exactly `target`.
    pub fn tiles(&self, target: &RectWindow) -> bool {
        let Some(first) = self.vectors.first() else {
            return false;
        };
        let Ok(base) = BoxWindow::b(self.base_n, first.rank()) else {
            return false;
        };
        let mut hits = vec![0u32; target.len()];
        for w in &self.vectors {
            for b in base.vectors() {
                match target.index_of(&(w + &b)) {
                    Some(i) => hits[i] += 1,
                    None => return false,
                }
            }
        }
        hits.iter().all(|&h| h == 1)
    }
}

/// The `2^m` translates `w_a = (a_j n)_j` with `B_{2n} = ⊔_a (w_a + B_n)`.
pub fn cover_translates(n: usize, m: usize) -> Result<CoveringTranslates> {
    BoxWindow::b(n, m)?;
    let vectors = binary_vectors(m)
        .into_iter()
        .map(|a| LatticeVector(a.iter().map(|&x| x as i64 * n as i64).collect()))
        .collect();
    Ok(CoveringTranslates { vectors, base_n: n })
}

/// `v_1, ..., v_d` with `v_l = (2 l n, 0, ..., 0)`; together with `v_0 = 0`
/// the translates `v_l + (B_n - B_n)` are pairwise disjoint.
pub fn separation_vectors(n: usize, d: usize, m: usize) -> Result<Vec<LatticeVector>> {
    BoxWindow::b(n, m)?;
    Ok((1..=d)
        .map(|l| {
            let mut c = vec![0i64; m];
            c[0] = (2 * l * n) as i64;
            LatticeVector(c)
        })
        .collect())
}

/// Sum of the requested rationals; a small helper for exact identities.
pub fn exact_sum<'a>(it: impl IntoIterator<Item = &'a Rational>) -> Rational {
    it.into_iter().fold(Rational::zero(), |acc, x| acc + x)
}
