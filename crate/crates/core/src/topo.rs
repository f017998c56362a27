//! Point sets of a sampled system: translates, metric fattening and
//! `(M,k)`-disjointness.

use std::fmt;

use serde::{Serialize, Serializer};

use crate::dynsys::SampledSystem;
use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::LatticeVector;
use crate::rational::{self, Rational};

/// A subset of `{0, …, size-1}` stored as a bitset.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PointSet {
    size: usize,
    words: Vec<u64>,
}

impl PointSet {
    pub fn empty(size: usize) -> Self {
        PointSet { size, words: vec![0; size.div_ceil(64)] }
    }

    pub fn full(size: usize) -> Self {
        let mut s = Self::empty(size);
        for i in 0..size {
            s.insert(i);
        }
        s
    }

    pub fn from_indices(size: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty(size);
        for i in indices {
            s.insert(i);
        }
        s
    }

    pub fn from_mask(mask: &[bool]) -> Self {
        Self::from_indices(mask.len(), mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < self.size, "point {i} outside a set of size {}", self.size);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        if i < self.size {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        i < self.size && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.size
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.size).filter(move |&i| self.contains(i))
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn first(&self) -> Option<usize> {
        self.iter().next()
    }

    fn zip(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        assert_eq!(self.size, other.size, "point sets over different samples");
        PointSet {
            size: self.size,
            words: self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a & b)
    }

    pub fn difference(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a & !b)
    }

    pub fn complement(&self) -> Self {
        Self::full(self.size).difference(self)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.difference(other).is_empty()
    }

    pub fn intersects(&self, other: &Self) -> bool {
        !self.intersection(other).is_empty()
    }

    pub fn union_with(&mut self, other: &Self) {
        *self = self.union(other);
    }
}

impl fmt::Debug for PointSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for PointSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

/// `α^g(E)`.
pub fn translate_set(sys: &SampledSystem, set: &PointSet, g: &LatticeVector) -> Result<PointSet> {
    let perm = sys.permutation(g)?;
    Ok(translate_by(&perm, set))
}

pub(crate) fn translate_by(perm: &[u32], set: &PointSet) -> PointSet {
    PointSet::from_indices(set.size(), set.iter().map(|x| perm[x] as usize))
}

/// Closed `δ`-fattening `{y : d(y, E) ≤ δ}`.
pub fn fatten(sys: &SampledSystem, set: &PointSet, delta: &Rational) -> PointSet {
    let thr = sys.threshold(delta);
    if thr <= 0 {
        // distinct points are at positive distance
        return set.clone();
    }
    let members = set.indices();
    let mask = exec::map_range(sys.points(), |y| members.iter().any(|&x| sys.dist_num(x, y) <= thr));
    PointSet::from_mask(&mask)
}

/// The closure model `fatten(E, closure_eps)`.
pub fn closure(sys: &SampledSystem, set: &PointSet) -> PointSet {
    fatten(sys, set, &sys.closure_eps())
}

/// Per-point count of the distinct translates `α^g(E)`, `g ∈ M`, containing it.
pub fn multiplicity(sys: &SampledSystem, set: &PointSet, window: &[LatticeVector]) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; sys.points()];
    for g in dedup(window) {
        let perm = sys.permutation(&g)?;
        for x in set.iter() {
            counts[perm[x] as usize] += 1;
        }
    }
    Ok(counts)
}

fn dedup(window: &[LatticeVector]) -> Vec<LatticeVector> {
    let mut out: Vec<LatticeVector> = Vec::with_capacity(window.len());
    for g in window {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

/// A set of distinct window elements whose translates share `point`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IntersectionWitness {
    pub elements: Vec<LatticeVector>,
    pub point: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DisjointnessReport {
    pub window: Vec<LatticeVector>,
    pub k_max: usize,
    /// Smallest `k` with `E` `(M,k)`-disjoint, or `None` when it exceeds `k_max`.
    pub order: Option<usize>,
    /// For order `k ≥ 1`: `k` distinct elements whose translates meet, so the
    /// set is not `(M,k-1)`-disjoint. When the order exceeds `k_max`: `k_max+1`
    /// such elements.
    pub witness: Option<IntersectionWitness>,
}

/// Smallest `k ≤ k_max` such that every `k+1` distinct `M`-translates of `E`
/// have empty common intersection.
///
/// A point lying in `c` translates spoils exactly the levels `k < c`, so the
/// order is the maximal point multiplicity.
pub fn disjointness_order(
    sys: &SampledSystem,
    set: &PointSet,
    window: &[LatticeVector],
    k_max: usize,
) -> Result<DisjointnessReport> {
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be >= 1".into()));
    }
    let window = dedup(window);
    let counts = multiplicity(sys, set, &window)?;
    let (point, &order) = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("nonempty sample");
    let witness_size = order.min(k_max + 1);
    let witness = if witness_size == 0 {
        None
    } else {
        let mut elements = Vec::new();
        for g in &window {
            if elements.len() == witness_size {
                break;
            }
            let back = sys.act(&-g, point)?;
            if set.contains(back) {
                elements.push(g.clone());
            }
        }
        Some(IntersectionWitness { elements, point })
    };
    Ok(DisjointnessReport {
        order: (order <= k_max).then_some(order),
        window,
        k_max,
        witness,
    })
}

/// Whether `E` is `(M,k)`-disjoint; on failure returns a witness of `k+1`
/// translates sharing a point.
pub fn is_disjoint(
    sys: &SampledSystem,
    set: &PointSet,
    window: &[LatticeVector],
    k: usize,
) -> Result<Option<IntersectionWitness>> {
    let report = disjointness_order(sys, set, window, k.max(1))?;
    match report.order {
        Some(o) if o <= k => Ok(None),
        _ => {
            let mut w = report.witness.expect("failing order carries a witness");
            w.elements.truncate(k + 1);
            Ok(Some(w))
        }
    }
}

/// Largest `δ` in the grid (default: the distance grid) such that
/// `fatten(E, δ)` stays `(F,k)`-disjoint.
pub fn fattening_margin(
    sys: &SampledSystem,
    set: &PointSet,
    window: &[LatticeVector],
    k: usize,
    grid: Option<&[Rational]>,
) -> Result<Rational> {
    if let Some(w) = is_disjoint(sys, set, window, k)? {
        return Err(Error::Precondition {
            what: format!("set is not ({} translates, {k})-disjoint", window.len()),
            witness: format!("point {} lies in the translates by {:?}", w.point, fmt_vectors(&w.elements)),
        });
    }
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = sys.distance_grid().to_vec();
            &owned
        }
    };
    let mut grid: Vec<Rational> = grid.to_vec();
    grid.sort();
    grid.dedup();
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty δ grid".into()));
    }
    let ok = |delta: &Rational| -> Result<bool> { Ok(is_disjoint(sys, &fatten(sys, set, delta), window, k)?.is_none()) };
    // disjointness is antitone in δ: binary search for the last feasible value
    let (mut lo, mut hi) = (0usize, grid.len());
    if !ok(&grid[0])? {
        return Ok(Rational::from_integer(0));
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(&grid[mid])? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(grid[lo])
}

pub(crate) fn fmt_vectors(vs: &[LatticeVector]) -> Vec<String> {
    vs.iter().map(|v| v.to_string()).collect()
}

/// Formats a rational for reports.
pub fn fmt_rational(r: &Rational) -> String {
    rational::format(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::cyclic_index;
    use crate::rational::rat;

    fn lv(c: &[i64]) -> LatticeVector {
        LatticeVector::new(c.to_vec())
    }

    fn vs(cs: &[i64]) -> Vec<LatticeVector> {
        cs.iter().map(|&c| lv(&[c])).collect()
    }

    #[test]
    fn translate_examples() {
        let z8 = SampledSystem::make_cyclic(&[8]).unwrap();
        let e = PointSet::from_indices(8, [0, 1]);
        assert_eq!(translate_set(&z8, &e, &lv(&[3])).unwrap().indices(), vec![3, 4]);
        assert_eq!(translate_set(&z8, &e, &lv(&[0])).unwrap(), e);
        let t = SampledSystem::make_cyclic(&[4, 4]).unwrap();
        let e = PointSet::from_indices(16, [0]);
        let img = translate_set(&t, &e, &lv(&[1, 2])).unwrap();
        assert_eq!(img.indices(), vec![cyclic_index(&[4, 4], &[1, 2])]);
    }

    #[test]
    fn fatten_examples() {
        let z8 = SampledSystem::make_cyclic(&[8]).unwrap();
        let e = PointSet::from_indices(8, [0]);
        assert_eq!(fatten(&z8, &e, &rat(1, 8)).indices(), vec![0, 1, 7]);
        assert_eq!(fatten(&z8, &e, &rat(0, 1)), e);
        let od = SampledSystem::make_odometer(3).unwrap();
        let ball = fatten(&od, &PointSet::from_indices(8, [0]), &rat(1, 4));
        // agreeing with 000 in the first two (least significant) bits
        assert_eq!(ball.indices(), vec![0, 4]);
    }

    #[test]
    fn order_examples() {
        let z8 = SampledSystem::make_cyclic(&[8]).unwrap();
        let r = disjointness_order(&z8, &PointSet::from_indices(8, [0]), &vs(&[0, 1, 2]), 4).unwrap();
        assert_eq!(r.order, Some(1));
        let r = disjointness_order(&z8, &PointSet::from_indices(8, [0, 1]), &vs(&[0, 1]), 4).unwrap();
        assert_eq!(r.order, Some(2));
        let w = r.witness.unwrap();
        assert_eq!(w.point, 1);
        assert_eq!(w.elements, vs(&[0, 1]));
        let full = PointSet::full(8);
        assert_eq!(disjointness_order(&z8, &full, &vs(&[0, 1]), 1).unwrap().order, None);
        assert_eq!(disjointness_order(&z8, &full, &vs(&[0, 1]), 3).unwrap().order, Some(2));
        assert_eq!(disjointness_order(&z8, &PointSet::empty(8), &vs(&[0, 1]), 1).unwrap().order, Some(0));
    }

    #[test]
    fn margin_examples() {
        let z16 = SampledSystem::make_cyclic(&[16]).unwrap();
        let m = fattening_margin(&z16, &PointSet::from_indices(16, [0]), &vs(&[0, 1, 2]), 1, None).unwrap();
        assert_eq!(m, rat(0, 1));
        let m = fattening_margin(&z16, &PointSet::empty(16), &vs(&[0, 1, 2]), 1, None).unwrap();
        assert_eq!(m, rat(1, 2));
        let m = fattening_margin(&z16, &PointSet::from_indices(16, [0, 8]), &vs(&[0, 1]), 1, None).unwrap();
        assert_eq!(m, rat(0, 1));
        let bad = fattening_margin(&z16, &PointSet::from_indices(16, [0, 1]), &vs(&[0, 1]), 1, None);
        assert!(matches!(bad, Err(Error::Precondition { .. })));
        // a sparse set has room to grow
        let m = fattening_margin(&z16, &PointSet::from_indices(16, [0]), &vs(&[0, 4]), 1, None).unwrap();
        assert_eq!(m, rat(1, 16));
    }

    #[test]
    fn bitset_ops() {
        let a = PointSet::from_indices(70, [0, 65, 3]);
        let b = PointSet::from_indices(70, [3, 69]);
        assert_eq!(a.union(&b).indices(), vec![0, 3, 65, 69]);
        assert_eq!(a.intersection(&b).indices(), vec![3]);
        assert_eq!(a.difference(&b).len(), 2);
        assert_eq!(a.complement().len(), 67);
        assert!(PointSet::from_indices(70, [3]).is_subset(&a));
        assert_eq!(serde_json::to_string(&a).unwrap(), "[0,3,65]");
    }
}
