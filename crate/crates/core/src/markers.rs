//! Markers for free `Z^m`-actions: the one-step extension, the covering fold,
//! controlled markers, and independent verifiers.
//!
//! Closures are modelled by [`topo::closure`] (fattening by the system's
//! `closure_eps`); closed balls `B̄_δ(x)` are closed fattenings of `{x}`.

use serde::{Deserialize, Serialize};

use crate::dynsys::{self, SampledSystem};
use crate::error::{Error, Result};
use crate::lattice::{self, BoxWindow, LatticeVector};
use crate::rational::Rational;
use crate::topo::{self, fmt_vectors, PointSet};

/// `F - F` in lexicographic order.
pub fn differences(f: &[LatticeVector]) -> Vec<LatticeVector> {
    let mut out: Vec<LatticeVector> = f.iter().flat_map(|a| f.iter().map(move |b| a - b)).collect();
    out.sort();
    out.dedup();
    out
}

/// `M = ∪_{l=0}^{d} (g_l + (F - F))` with `g_0 = 0`, block by block.
pub fn marker_window(f: &[LatticeVector], g_list: &[LatticeVector]) -> Result<Vec<Vec<LatticeVector>>> {
    let m = f.first().map(|v| v.rank()).ok_or_else(|| Error::InvalidParameter("F must be nonempty".into()))?;
    let diff = differences(f);
    let mut blocks = vec![diff.clone()];
    for g in g_list {
        if g.rank() != m {
            return Err(Error::RankMismatch { expected: m, got: g.rank() });
        }
        blocks.push(diff.iter().map(|v| g + v).collect());
    }
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            if let Some(v) = blocks[i].iter().find(|v| blocks[j].contains(v)) {
                return Err(Error::Precondition {
                    what: format!("the blocks g_{i} + (F-F) and g_{j} + (F-F) overlap"),
                    witness: format!("common element {v}"),
                });
            }
        }
    }
    Ok(blocks)
}

fn flatten(blocks: &[Vec<LatticeVector>]) -> Vec<LatticeVector> {
    blocks.iter().flatten().cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Ball {
    pub center: usize,
    pub color: usize,
}

/// Result of one extension step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Extension {
    pub set: PointSet,
    /// Points of `V̄` not yet reached by `M`-translates of `U`.
    pub remainder: PointSet,
    #[serde(with = "crate::rational::serde_str")]
    pub rho: Rational,
    #[serde(with = "crate::rational::serde_str")]
    pub delta: Rational,
    pub balls: Vec<Ball>,
}

/// Shared state for extension steps over a fixed `F` and `g`-list.
struct Extender<'a> {
    sys: &'a SampledSystem,
    f: Vec<LatticeVector>,
    d: usize,
    /// `g_0 = 0, g_1, …, g_d`.
    g: Vec<LatticeVector>,
    blocks: Vec<Vec<LatticeVector>>,
    window: Vec<LatticeVector>,
    /// Permutations for `window`, in the same order.
    perms: Vec<Vec<u32>>,
    inv_perms: Vec<Vec<u32>>,
    f_perms: Vec<Vec<u32>>,
}

impl<'a> Extender<'a> {
    fn new(sys: &'a SampledSystem, f: &[LatticeVector], g_list: &[LatticeVector], d: usize) -> Result<Self> {
        if g_list.len() != d {
            return Err(Error::InvalidParameter(format!("expected d = {d} separation vectors, got {}", g_list.len())));
        }
        let blocks = marker_window(f, g_list)?;
        let window = flatten(&blocks);
        let perms = window.iter().map(|g| sys.permutation(g)).collect::<Result<Vec<_>>>()?;
        let inv_perms = window.iter().map(|g| sys.permutation(&-g)).collect::<Result<Vec<_>>>()?;
        let f_perms = f.iter().map(|g| sys.permutation(g)).collect::<Result<Vec<_>>>()?;
        let g = std::iter::once(LatticeVector::zero(f[0].rank())).chain(g_list.iter().cloned()).collect();
        Ok(Extender { sys, f: f.to_vec(), d, g, blocks, window, perms, inv_perms, f_perms })
    }

    fn closure(&self, set: &PointSet) -> PointSet {
        topo::closure(self.sys, set)
    }

    fn ball(&self, x: usize, delta: &Rational) -> PointSet {
        topo::fatten(self.sys, &PointSet::from_indices(self.sys.points(), [x]), delta)
    }

    /// First pair of distinct translates (from `perms`) of `set` that meet.
    fn collision(&self, perms: &[Vec<u32>], set: &PointSet) -> Option<(usize, usize, usize)> {
        let mut owner: Vec<Option<usize>> = vec![None; self.sys.points()];
        for (i, p) in perms.iter().enumerate() {
            for x in set.iter() {
                let y = p[x] as usize;
                match owner[y] {
                    Some(j) if j != i => return Some((j, i, y)),
                    _ => owner[y] = Some(i),
                }
            }
        }
        None
    }

    fn check_f_disjoint(&self, set: &PointSet, what: &str) -> Result<()> {
        if let Some((i, j, y)) = self.collision(&self.f_perms, set) {
            return Err(Error::Precondition {
                what: format!("F-translates of the closure of {what} are not pairwise disjoint"),
                witness: format!("point {y} lies in the translates by {} and {}", self.f[i], self.f[j]),
            });
        }
        Ok(())
    }

    fn m_translates_union(&self, set: &PointSet) -> PointSet {
        let mut out = PointSet::empty(self.sys.points());
        for p in &self.perms {
            out.union_with(&topo::translate_by(p, set));
        }
        out
    }

    fn extend(&self, u: &PointSet, v: &PointSet) -> Result<Extension> {
        let sys = self.sys;
        let u_bar = self.closure(u);
        let v_bar = self.closure(v);
        self.check_f_disjoint(&u_bar, "U")?;
        if let Some((i, j, y)) = self.collision(&self.inv_perms, &v_bar) {
            return Err(Error::Precondition {
                what: "(-M)-translates of the closure of V are not pairwise disjoint".into(),
                witness: format!("point {y} lies in the translates by {} and {}", -&self.window[i], -&self.window[j]),
            });
        }
        let boundary = u_bar.difference(u);
        if let Some(w) = topo::is_disjoint(sys, &boundary, &self.window, self.d)? {
            return Err(Error::Precondition {
                what: format!("the boundary model of U is not (M,{})-disjoint", self.d),
                witness: format!("point {} lies in the translates by {:?}", w.point, fmt_vectors(&w.elements)),
            });
        }

        let reached = self.m_translates_union(u);
        let remainder = v_bar.difference(&reached);
        let zero = Rational::from_integer(0);
        if remainder.is_empty() {
            return Ok(Extension { set: u.clone(), remainder, rho: zero, delta: zero, balls: Vec::new() });
        }

        let grid = sys.distance_grid();
        let rho_ok = |r: &Rational| {
            let fat = self.closure(&topo::fatten(sys, &remainder, r));
            self.collision(&self.inv_perms, &fat).is_none()
        };
        let rho = *grid
            .iter()
            .rev()
            .find(|r| rho_ok(r))
            .ok_or_else(|| Error::Precondition {
                what: "no radius keeps the (-M)-translates of the remainder disjoint".into(),
                witness: format!("remainder {:?}", remainder.indices()),
            })?;

        let u_translates: Vec<PointSet> = self.perms.iter().map(|p| topo::translate_by(p, &u_bar)).collect();
        let hits = |x: usize, delta: &Rational| -> Vec<usize> {
            let b = self.closure(&self.ball(x, delta));
            (0..self.window.len()).filter(|&i| u_translates[i].intersects(&b)).collect()
        };
        let mut worst = (remainder.first().unwrap_or(0), usize::MAX);
        let mut delta = None;
        for cand in grid.iter().rev().filter(|r| **r <= rho) {
            let bad = remainder.iter().map(|x| (x, hits(x, cand).len())).find(|(_, h)| *h > self.d);
            match bad {
                None => {
                    delta = Some(*cand);
                    break;
                }
                Some((x, h)) => {
                    if h < worst.1 || worst.1 == usize::MAX {
                        worst = (x, h);
                    }
                }
            }
        }
        let delta = delta.ok_or(Error::SmallnessBudget { point: worst.0, hits: worst.1 })?;

        let mut uncovered = remainder.clone();
        let mut balls = Vec::new();
        let mut w = u.clone();
        while let Some(z) = uncovered.first() {
            let ball = self.ball(z, &delta);
            let ball_bar = self.closure(&ball);
            let blocked: Vec<usize> = (0..self.window.len()).filter(|&i| u_translates[i].intersects(&ball_bar)).collect();
            let mut offset = 0;
            let mut color = None;
            for (l, block) in self.blocks.iter().enumerate() {
                let range = offset..offset + block.len();
                offset += block.len();
                if !blocked.iter().any(|i| range.contains(i)) {
                    color = Some(l);
                    break;
                }
            }
            let color = color.ok_or_else(|| Error::ColoringInfeasible {
                center: z,
                blocking: blocked.iter().map(|&i| self.window[i].coords().to_vec()).collect(),
            })?;
            w.union_with(&topo::translate_set(sys, &ball, &-&self.g[color])?);
            uncovered = uncovered.difference(&ball);
            balls.push(Ball { center: z, color });
        }

        if !u.is_subset(&w) {
            return Err(Error::Postcondition("U is not contained in W".into()));
        }
        let cover = self.m_translates_union(&w);
        if let Some(x) = v_bar.difference(&cover).first() {
            return Err(Error::Postcondition(format!("point {x} of V̄ is not reached by M-translates of W")));
        }
        if let Some((i, j, y)) = self.collision(&self.f_perms, &self.closure(&w)) {
            return Err(Error::Postcondition(format!(
                "F-translates of W̄ meet at point {y} (translates {} and {})",
                self.f[i], self.f[j]
            )));
        }
        Ok(Extension { set: w, remainder, rho, delta, balls })
    }
}

/// One extension step: enlarge `U` to `W` so that `M`-translates of `W`
/// reach `V̄` while the `F`-translates of `W̄` stay pairwise disjoint.
///
/// On finite samples the boundary condition of the smooth argument is
/// replaced by the precondition that the boundary model `Ū \ U` is
/// `(M,d)`-disjoint.
pub fn extend_marker_step(
    sys: &SampledSystem,
    u: &PointSet,
    v: &PointSet,
    f: &[LatticeVector],
    g_list: &[LatticeVector],
    d: usize,
) -> Result<Extension> {
    Extender::new(sys, f, g_list, d)?.extend(u, v)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MarkerWitness {
    pub z: PointSet,
    pub f: Vec<LatticeVector>,
    pub cover_window: Vec<LatticeVector>,
}

/// Folds extension steps over a seed cover, `W_k = extend(W_{k-1}, U_k)`.
/// The default seed is the singletons in index order.
pub fn build_marker(
    sys: &SampledSystem,
    f: &[LatticeVector],
    g_list: &[LatticeVector],
    d: usize,
    seed_cover: Option<&[PointSet]>,
) -> Result<MarkerWitness> {
    let ext = Extender::new(sys, f, g_list, d)?;
    let p = sys.points();
    let singletons: Vec<PointSet>;
    let seeds = match seed_cover {
        Some(s) => s,
        None => {
            singletons = (0..p).map(|x| PointSet::from_indices(p, [x])).collect();
            &singletons
        }
    };
    let mut union = PointSet::empty(p);
    for s in seeds {
        union.union_with(s);
    }
    if let Some(x) = union.complement().first() {
        return Err(Error::Precondition { what: "seed cover does not cover X".into(), witness: format!("point {x}") });
    }
    let mut w = PointSet::empty(p);
    let mut seen = PointSet::empty(p);
    for (k, seed) in seeds.iter().enumerate() {
        let next = ext.extend(&w, seed).map_err(|e| Error::Fold { fold: k, source: Box::new(e) })?.set;
        seen.union_with(seed);
        let fold_err = |msg: String| Error::Fold { fold: k, source: Box::new(Error::Postcondition(msg)) };
        if !w.is_subset(&next) {
            return Err(fold_err("W_k does not contain W_{k-1}".into()));
        }
        if !seen.is_subset(&ext.m_translates_union(&next)) {
            return Err(fold_err("M-translates of W_k do not cover U_0 ∪ … ∪ U_k".into()));
        }
        w = next;
    }
    let witness = MarkerWitness { z: w, f: f.to_vec(), cover_window: ext.window.clone() };
    let report = verify_marker(sys, &witness.z, &witness.f, &witness.cover_window);
    if !report.passed() {
        return Err(Error::Verification(format!("constructed marker failed verification: {report:?}")));
    }
    Ok(witness)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlledMarkerWitness {
    pub z: Vec<usize>,
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub translates: Vec<LatticeVector>,
}

impl ControlledMarkerWitness {
    pub fn set(&self, sys: &SampledSystem) -> Result<PointSet> {
        if let Some(&x) = self.z.iter().find(|&&x| x >= sys.points()) {
            return Err(Error::InvalidParameter(format!("marker point {x} out of range")));
        }
        Ok(PointSet::from_indices(sys.points(), self.z.iter().copied()))
    }
}

/// A constructed controlled marker with its construction data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ControlledMarker {
    pub witness: ControlledMarkerWitness,
    pub cover_window: Vec<LatticeVector>,
    pub separation: Vec<LatticeVector>,
    pub freeness_radius: usize,
}

/// Freeness radius needed by [`build_controlled_marker`] for `(n, d)` in rank `m`.
pub fn controlled_freeness_radius(n: usize, d: usize, m: usize) -> Result<usize> {
    let f = BoxWindow::b(n, m)?.vectors();
    let separation = lattice::separation_vectors(n, d, m)?;
    Ok(dynsys::radius_for_differences(&flatten(&marker_window(&f, &separation)?)))
}

/// A `2^m(d+1)`-controlled `B_n`-marker: a `B_n`-marker for
/// `M = ∪_l (v_l + (B_n - B_n))`, with translates `v_l + s + w_a` where `s`
/// is the index shift carrying `B_{2n}` onto `J_n ⊇ B_n - B_n`.
pub fn build_controlled_marker(sys: &SampledSystem, n: usize, d: usize) -> Result<ControlledMarker> {
    let m = sys.rank();
    let f = BoxWindow::b(n, m)?.vectors();
    let separation = lattice::separation_vectors(n, d, m)?;
    let radius = controlled_freeness_radius(n, d, m)?;
    let cert = dynsys::check_free(sys, radius)?;
    if let Some((g, x)) = cert.violations.first() {
        return Err(Error::Precondition {
            what: format!("action is not free at radius {radius}"),
            witness: format!("α^{g} fixes point {x} ({} violations)", cert.violations.len()),
        });
    }
    let marker = build_marker(sys, &f, &separation, d, None)?;
    let shift = lattice::index_shift(n, m);
    let covers = lattice::cover_translates(n, m)?;
    let mut translates = Vec::new();
    for v in std::iter::once(LatticeVector::zero(m)).chain(separation.iter().cloned()) {
        for w in &covers.vectors {
            translates.push(&(&v + &shift) + w);
        }
    }
    let witness = ControlledMarkerWitness { z: marker.z.indices(), n, l: translates.len(), translates };
    let report = verify_controlled_marker(sys, &witness);
    if !report.passed() {
        return Err(Error::Verification(format!("controlled marker failed verification: {report:?}")));
    }
    Ok(ControlledMarker { witness, cover_window: marker.cover_window, separation, freeness_radius: radius })
}

// Verification below deliberately avoids the set primitives used by the
// construction: it works point by point through `act` and `dist`.

fn closure_mask(sys: &SampledSystem, mask: &[bool]) -> Vec<bool> {
    let eps = sys.closure_eps();
    let members: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    (0..sys.points()).map(|y| members.iter().any(|&x| sys.dist(x, y) <= eps)).collect()
}

fn mask_of(sys: &SampledSystem, z: &PointSet) -> Vec<bool> {
    (0..sys.points()).map(|x| z.contains(x)).collect()
}

/// First `(g, h, y)` with `y ∈ α^g(S) ∩ α^h(S)`, `g ≠ h`.
fn first_collision(sys: &SampledSystem, mask: &[bool], window: &[LatticeVector]) -> Result<Option<(LatticeVector, LatticeVector, usize)>> {
    for y in 0..sys.points() {
        let mut found: Option<&LatticeVector> = None;
        for g in window {
            if mask[sys.act(&-g, y)?] {
                match found {
                    Some(h) if h != g => return Ok(Some((h.clone(), g.clone(), y))),
                    _ => found = Some(g),
                }
            }
        }
    }
    Ok(None)
}

fn uncovered_points(sys: &SampledSystem, mask: &[bool], window: &[LatticeVector]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for y in 0..sys.points() {
        let mut hit = false;
        for g in window {
            if mask[sys.act(&-g, y)?] {
                hit = true;
                break;
            }
        }
        if !hit {
            out.push(y);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Collision {
    pub first: LatticeVector,
    pub second: LatticeVector,
    pub point: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MarkerReport {
    pub disjoint: bool,
    pub collision: Option<Collision>,
    pub covers: bool,
    pub uncovered: Vec<usize>,
    /// Set when the check itself could not run (e.g. rank mismatch).
    pub error: Option<String>,
}

impl MarkerReport {
    pub fn passed(&self) -> bool {
        self.disjoint && self.covers && self.error.is_none()
    }

    fn failed(e: Error) -> Self {
        MarkerReport { disjoint: false, collision: None, covers: false, uncovered: Vec::new(), error: Some(e.to_string()) }
    }
}

fn check_marker(sys: &SampledSystem, z: &PointSet, f: &[LatticeVector], cover: &[LatticeVector]) -> Result<MarkerReport> {
    let mask = mask_of(sys, z);
    let collision = first_collision(sys, &closure_mask(sys, &mask), f)?
        .map(|(first, second, point)| Collision { first, second, point });
    let uncovered = uncovered_points(sys, &mask, cover)?;
    Ok(MarkerReport { disjoint: collision.is_none(), collision, covers: uncovered.is_empty(), uncovered, error: None })
}

/// Checks that the `F`-translates of `Z̄` are pairwise disjoint and that the
/// `M`-translates of `Z` cover `X`. Never fails; problems are reported.
pub fn verify_marker(sys: &SampledSystem, z: &PointSet, f: &[LatticeVector], cover: &[LatticeVector]) -> MarkerReport {
    check_marker(sys, z, f, cover).unwrap_or_else(MarkerReport::failed)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ControlledReport {
    pub marker: MarkerReport,
    /// `L` equals the number of translates.
    pub count_matches: bool,
}

impl ControlledReport {
    pub fn passed(&self) -> bool {
        self.marker.passed() && self.count_matches
    }
}

/// Checks `X = ∪_l ∪_{v ∈ B_n} α^{v_l + v}(Z)` and the `B_n`-disjointness.
pub fn verify_controlled_marker(sys: &SampledSystem, w: &ControlledMarkerWitness) -> ControlledReport {
    let count_matches = w.l == w.translates.len();
    let marker = (|| -> Result<MarkerReport> {
        let z = w.set(sys)?;
        let f = BoxWindow::b(w.n, sys.rank())?.vectors();
        let cover: Vec<LatticeVector> = w.translates.iter().flat_map(|t| f.iter().map(move |v| t + v)).collect();
        check_marker(sys, &z, &f, &cover)
    })()
    .unwrap_or_else(MarkerReport::failed);
    ControlledReport { marker, count_matches }
}
