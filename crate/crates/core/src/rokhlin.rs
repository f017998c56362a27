//! Rokhlin covers, tower-function synthesis, normalisation and the tolerance
//! verifier for the cyclic Rokhlin relations.

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::dynsys::SampledSystem;
use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::{self, BoxWindow, LatticeVector};
use crate::markers::{self, ControlledMarkerWitness};
use crate::rational::{self, Rational};
use crate::topo::PointSet;

/// Towers `U_v^{(l)}`, `v ∈ B_n`, stored as `towers[l][index of v in B_n]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RokhlinCover {
    pub n: usize,
    pub rank: usize,
    pub towers: Vec<Vec<PointSet>>,
}

#[derive(Deserialize)]
struct RawCover {
    n: usize,
    rank: usize,
    towers: Vec<Vec<Vec<usize>>>,
}

impl RokhlinCover {
    pub fn levels(&self) -> usize {
        self.towers.len()
    }

    pub fn window(&self) -> Result<BoxWindow> {
        BoxWindow::b(self.n, self.rank)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("cover serializes")
    }

    pub fn from_json(sys: &SampledSystem, s: &str) -> Result<Self> {
        let raw: RawCover = serde_json::from_str(s)?;
        let p = sys.points();
        let towers = raw
            .towers
            .into_iter()
            .map(|level| {
                level
                    .into_iter()
                    .map(|pts| {
                        if let Some(&x) = pts.iter().find(|&&x| x >= p) {
                            return Err(Error::InvalidParameter(format!("cover point {x} out of range")));
                        }
                        Ok(PointSet::from_indices(p, pts))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RokhlinCover { n: raw.n, rank: raw.rank, towers })
    }
}

/// `U_v^{(l)} = α^{t_l + v}(Z)` for a verified controlled marker.
pub fn cover_from_marker(sys: &SampledSystem, w: &ControlledMarkerWitness) -> Result<RokhlinCover> {
    let report = markers::verify_controlled_marker(sys, w);
    if !report.passed() {
        return Err(Error::Verification(format!("controlled marker rejected: {report:?}")));
    }
    let z = w.set(sys)?;
    let window = BoxWindow::b(w.n, sys.rank())?;
    let towers = w
        .translates
        .iter()
        .map(|t| {
            window
                .vectors()
                .iter()
                .map(|v| crate::topo::translate_set(sys, &z, &(t + v)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let cover = RokhlinCover { n: w.n, rank: sys.rank(), towers };
    let report = verify_cover(sys, &cover);
    if !report.passed() {
        return Err(Error::Verification(format!("cover failed verification: {report:?}")));
    }
    Ok(cover)
}

/// The exact tiling cover with a single tower: `Z` is the orbit of point 0
/// under the subgroup `side · Z^m`. Fails verification unless that orbit meets
/// every `B_side`-translate exactly once.
pub fn tiling_cover(sys: &SampledSystem, side: usize) -> Result<RokhlinCover> {
    if side == 0 {
        return Err(Error::InvalidParameter("side must be positive".into()));
    }
    let m = sys.rank();
    let steps = (0..m).map(|i| sys.permutation(&LatticeVector::unit(m, i).scale(side as i64))).collect::<Result<Vec<_>>>()?;
    let mut z = PointSet::empty(sys.points());
    let mut stack = vec![0usize];
    z.insert(0);
    while let Some(x) = stack.pop() {
        for step in &steps {
            let y = step[x] as usize;
            if !z.contains(y) {
                z.insert(y);
                stack.push(y);
            }
        }
    }
    let w = ControlledMarkerWitness { z: z.indices(), n: side, l: 1, translates: vec![LatticeVector::zero(m)] };
    cover_from_marker(sys, &w)
}

/// Controlled marker followed by [`cover_from_marker`]: `2^m(d+1)` towers.
pub fn build_cover(sys: &SampledSystem, n: usize, d: usize) -> Result<RokhlinCover> {
    let marker = markers::build_controlled_marker(sys, n, d)?;
    cover_from_marker(sys, &marker.witness)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EquivarianceWitness {
    pub level: usize,
    pub v: LatticeVector,
    pub point: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TowerCollision {
    pub level: usize,
    pub first: LatticeVector,
    pub second: LatticeVector,
    pub point: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoverReport {
    pub equivariant: bool,
    pub equivariance_witness: Option<EquivarianceWitness>,
    pub disjoint: bool,
    pub collision: Option<TowerCollision>,
    pub covers: bool,
    pub uncovered: Vec<usize>,
    pub error: Option<String>,
}

impl CoverReport {
    pub fn passed(&self) -> bool {
        self.equivariant && self.disjoint && self.covers && self.error.is_none()
    }
}

fn check_cover(sys: &SampledSystem, cover: &RokhlinCover) -> Result<CoverReport> {
    let p = sys.points();
    let window = cover.window()?;
    let vs = window.vectors();
    let eps = sys.closure_eps();
    let mut equivariance_witness = None;
    let mut collision = None;
    let mut covered = vec![false; p];
    for (l, level) in cover.towers.iter().enumerate() {
        if level.len() != vs.len() {
            return Err(Error::InvalidParameter(format!("level {l} has {} sets, expected {}", level.len(), vs.len())));
        }
        let base = &level[0];
        for (i, v) in vs.iter().enumerate() {
            for x in 0..p {
                let inside = level[i].contains(x);
                covered[x] |= inside;
                if equivariance_witness.is_none() && inside != base.contains(sys.act(&-v, x)?) {
                    equivariance_witness = Some(EquivarianceWitness { level: l, v: v.clone(), point: x });
                }
            }
        }
        if collision.is_none() {
            let mut owner: Vec<Option<usize>> = vec![None; p];
            'outer: for (i, set) in level.iter().enumerate() {
                let members: Vec<usize> = set.iter().collect();
                for y in 0..p {
                    if members.iter().any(|&x| sys.dist(x, y) <= eps) {
                        match owner[y] {
                            Some(j) if j != i => {
                                collision = Some(TowerCollision { level: l, first: vs[j].clone(), second: vs[i].clone(), point: y });
                                break 'outer;
                            }
                            _ => owner[y] = Some(i),
                        }
                    }
                }
            }
        }
    }
    let uncovered: Vec<usize> = (0..p).filter(|&x| !covered[x]).collect();
    Ok(CoverReport {
        equivariant: equivariance_witness.is_none(),
        equivariance_witness,
        disjoint: collision.is_none(),
        collision,
        covers: uncovered.is_empty(),
        uncovered,
        error: None,
    })
}

/// Checks equivariance, per-level disjointness of closure models, and covering.
pub fn verify_cover(sys: &SampledSystem, cover: &RokhlinCover) -> CoverReport {
    check_cover(sys, cover).unwrap_or_else(|e| CoverReport {
        equivariant: false,
        equivariance_witness: None,
        disjoint: false,
        collision: None,
        covers: false,
        uncovered: Vec::new(),
        error: Some(e.to_string()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Normalized,
}

/// Functions `f_v^{(i)}` for upper indices `i` and `v ∈ B_side`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerFamily {
    pub side: usize,
    pub rank: usize,
    pub points: usize,
    pub provenance: Provenance,
    pub labels: Vec<String>,
    /// `values[i][index of v in B_side][point]`.
    #[serde(with = "nested_rationals")]
    pub values: Vec<Vec<Vec<Rational>>>,
}

mod nested_rationals {
    use super::*;
    use serde::{de::Error as _, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vec<Vec<Rational>>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let raw: Vec<Vec<Vec<String>>> =
            v.iter().map(|a| a.iter().map(|b| b.iter().map(rational::format).collect()).collect()).collect();
        raw.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<Vec<Vec<Rational>>>, D::Error> {
        let raw = Vec::<Vec<Vec<String>>>::deserialize(d)?;
        raw.into_iter()
            .map(|a| {
                a.into_iter()
                    .map(|b| {
                        b.into_iter()
                            .map(|s| rational::parse(&s).ok_or_else(|| D::Error::custom(format!("bad rational {s:?}"))))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

impl TowerFamily {
    pub fn upper(&self) -> usize {
        self.values.len()
    }

    pub fn window(&self) -> Result<BoxWindow> {
        BoxWindow::b(self.side, self.rank)
    }

    /// `f_v^{(i)}` with `v` reduced coordinatewise into `B_side`.
    pub fn function(&self, i: usize, v: &LatticeVector) -> &[Rational] {
        let b = BoxWindow::b(self.side, self.rank).expect("valid family");
        let idx = b.index_of(&lattice::reduce_b(v, self.side)).expect("reduced into the box");
        &self.values[i][idx]
    }

    /// Pointwise `Σ_{i,v} f_v^{(i)}`.
    pub fn pointwise_sum(&self) -> Vec<Rational> {
        let mut s = vec![Rational::zero(); self.points];
        for level in &self.values {
            for f in level {
                for (acc, x) in s.iter_mut().zip(f) {
                    *acc += x;
                }
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let per_level = BoxWindow::b(self.side, self.rank)?.len();
        if self.labels.len() != self.values.len() {
            return Err(Error::InvalidParameter("labels and values disagree".into()));
        }
        for level in &self.values {
            if level.len() != per_level || level.iter().any(|f| f.len() != self.points) {
                return Err(Error::InvalidParameter("tower family has the wrong shape".into()));
            }
            if level.iter().flatten().any(|x| x.is_negative() || *x > Rational::one()) {
                return Err(Error::InvalidParameter("tower values must lie in [0,1]".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("family serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: TowerFamily = serde_json::from_str(s)?;
        f.validate()?;
        Ok(f)
    }

    /// `label,v,point,value` rows with the value as a decimal.
    pub fn to_csv(&self) -> String {
        let vs = BoxWindow::b(self.side, self.rank).map(|b| b.vectors()).unwrap_or_default();
        let mut out = String::from("label,v,point,value\n");
        for (label, level) in self.labels.iter().zip(&self.values) {
            for (v, f) in vs.iter().zip(level) {
                for (x, val) in f.iter().enumerate() {
                    out.push_str(&format!("{label},\"{v}\",{x},{}\n", rational::to_f64(val)));
                }
            }
        }
        out
    }

    fn with_values(&self, values: Vec<Vec<Vec<Rational>>>, provenance: Provenance) -> Self {
        TowerFamily { values, provenance, ..self.clone() }
    }
}

/// Indicator functions of the cover's sets.
pub fn indicator_towers(cover: &RokhlinCover) -> TowerFamily {
    let points = cover.towers.first().and_then(|l| l.first()).map_or(0, |s| s.size());
    let values = cover
        .towers
        .iter()
        .map(|level| {
            level
                .iter()
                .map(|set| (0..points).map(|x| if set.contains(x) { Rational::one() } else { Rational::zero() }).collect())
                .collect()
        })
        .collect();
    TowerFamily {
        side: cover.n,
        rank: cover.rank,
        points,
        provenance: Provenance::Raw,
        labels: (0..cover.levels()).map(|l| format!("l{l}")).collect(),
        values,
    }
}

/// Tapered towers over `B_L` from a cover of side `2N`, `N = 4 L n`.
///
/// After the index shift the cover is `U_w^{(l)}`, `w ∈ J_N`. With the bump
/// `h = max(0, 1 - dist(·, U_0)/δ)` (the indicator of `U_0` for `δ = 0`) and
/// `g_w = h ∘ α^{-w}`, a point of `V_w` contributes to `f_v` for `w ≡ v mod L`
/// with weight 1 up to `‖w‖∞ = 2Ln`, weight `(3Ln - ‖w‖∞)/(Ln)` up to `3Ln`,
/// and 0 beyond. The `2^m` translates `a_j = 2Ln(2p - 1)` give the upper
/// indices `(l, j)`.
pub fn towers_from_cover(
    sys: &SampledSystem,
    cover_big: &RokhlinCover,
    l_small: usize,
    n_param: usize,
    delta_bump: &Rational,
) -> Result<TowerFamily> {
    if l_small == 0 || n_param == 0 {
        return Err(Error::InvalidParameter("L and n must be positive".into()));
    }
    if delta_bump.is_negative() {
        return Err(Error::InvalidParameter("δ_bump must be >= 0".into()));
    }
    let m = sys.rank();
    let big_n = 4 * l_small * n_param;
    if cover_big.n != 2 * big_n || cover_big.rank != m {
        return Err(Error::InvalidParameter(format!(
            "cover side {} does not match 2N = {} for L = {l_small}, n = {n_param}",
            cover_big.n,
            2 * big_n
        )));
    }
    let report = verify_cover(sys, cover_big);
    if !report.passed() {
        return Err(Error::Verification(format!("cover rejected: {report:?}")));
    }
    let p = sys.points();
    let bwin = cover_big.window()?;
    let jwin = BoxWindow::j(big_n, m)?;
    let shift = lattice::index_shift(big_n, m);
    let zero_idx = bwin.index_of(&-&shift).expect("0 lies in J_N");
    let ln = (l_small * n_param) as i64;
    let small = BoxWindow::b(l_small, m)?;
    let js = jwin.vectors();
    let perms = js.iter().map(|w| sys.permutation(w)).collect::<Result<Vec<_>>>()?;
    let shifts: Vec<LatticeVector> = lattice::binary_vectors(m)
        .iter()
        .map(|p| LatticeVector::new(p.iter().map(|&b| 2 * ln * (2 * b as i64 - 1)).collect()))
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (l, level) in cover_big.towers.iter().enumerate() {
        let base = &level[zero_idx];
        let members = base.indices();
        let bump: Vec<Rational> = (0..p)
            .map(|x| {
                if base.contains(x) {
                    return Rational::one();
                }
                if delta_bump.is_zero() {
                    return Rational::zero();
                }
                let dist = members.iter().map(|&y| sys.dist(x, y)).min().unwrap_or_else(Rational::one);
                let h = Rational::one() - dist / delta_bump;
                if h.is_positive() { h } else { Rational::zero() }
            })
            .collect();
        // locate the unique tower position of every point of ∪ V_w
        let mut loc: Vec<Option<(usize, Rational)>> = vec![None; p];
        for (wi, perm) in perms.iter().enumerate() {
            for y in 0..p {
                if bump[y].is_zero() {
                    continue;
                }
                let x = perm[y] as usize;
                if let Some((other, _)) = loc[x] {
                    return Err(Error::Precondition {
                        what: format!("δ_bump too large: the fattened sets of level {l} are not pairwise disjoint"),
                        witness: format!("point {x} lies in V_{} and V_{}", js[other], js[wi]),
                    });
                }
                loc[x] = Some((wi, bump[y]));
            }
        }
        let tower: Vec<Vec<Rational>> = small
            .vectors()
            .iter()
            .map(|v| {
                (0..p)
                    .map(|x| match &loc[x] {
                        Some((wi, g)) => {
                            let w = &js[*wi];
                            let congruent = w.coords().iter().zip(v.coords()).all(|(a, b)| (a - b).rem_euclid(l_small as i64) == 0);
                            let k = w.norm_inf();
                            if !congruent || k > 3 * ln {
                                Rational::zero()
                            } else if k <= 2 * ln {
                                *g
                            } else {
                                Rational::new((3 * ln - k) as i128, ln as i128) * g
                            }
                        }
                        None => Rational::zero(),
                    })
                    .collect()
            })
            .collect();
        for (j, a) in shifts.iter().enumerate() {
            let back = sys.permutation(&-a)?;
            values.push(tower.iter().map(|f| (0..p).map(|x| f[back[x] as usize]).collect()).collect());
            labels.push(format!("l{l}.j{j}"));
        }
    }
    Ok(TowerFamily { side: l_small, rank: m, points: p, provenance: Provenance::Raw, labels, values })
}

/// `f_v^{(i)} = S^{-1} h_v^{(i)}` with `S` the pointwise sum; requires `S ≥ 1`.
pub fn normalize_towers(family: &TowerFamily) -> Result<TowerFamily> {
    let s = family.pointwise_sum();
    if let Some((x, v)) = s.iter().enumerate().find(|(_, v)| **v < Rational::one()) {
        return Err(Error::DeficientSum { point: x, value: rational::format(v) });
    }
    let values = family
        .values
        .iter()
        .map(|level| level.iter().map(|f| f.iter().zip(&s).map(|(a, b)| a / b).collect()).collect())
        .collect();
    Ok(family.with_values(values, Provenance::Normalized))
}

/// `(1 - η) f_v + η f_{v + e_1}` (indices cyclic in `B_side`): a perturbation
/// that keeps the pointwise sum and spoils exact disjointness.
pub fn mix_neighbors(family: &TowerFamily, eta: &Rational) -> Result<TowerFamily> {
    if eta.is_negative() || *eta > Rational::one() {
        return Err(Error::InvalidParameter("η must lie in [0,1]".into()));
    }
    let vs = family.window()?.vectors();
    let e1 = LatticeVector::unit(family.rank, 0);
    let values = (0..family.upper())
        .map(|i| {
            vs.iter()
                .map(|v| {
                    let next = family.function(i, &(v + &e1));
                    family
                        .function(i, v)
                        .iter()
                        .zip(next)
                        .map(|(a, b)| (Rational::one() - eta) * a + eta * b)
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(family.with_values(values, family.provenance))
}

/// Sup-norm defects of the cyclic Rokhlin relations on the sample.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ToleranceReport {
    /// `sup |1 - Σ f|`.
    #[serde(with = "rational::serde_str")]
    pub eps1: Rational,
    /// `min Σ f - 1`; nonnegative exactly when `Σ f ≥ 1`.
    #[serde(with = "rational::serde_str")]
    pub eps1prime: Rational,
    /// `max_{i, v ≠ v'} sup |f_v f_{v'}|`.
    #[serde(with = "rational::serde_str")]
    pub eps2: Rational,
    /// `max_{i, v, w} sup |f_w ∘ α^{-v} - f_{(v+w) mod side}|`.
    #[serde(with = "rational::serde_str")]
    pub eps3: Rational,
    /// `max sup |[f, a]|` over the test functions.
    #[serde(with = "rational::serde_str")]
    pub eps4: Rational,
    /// Tower-tower commutators; zero in a commutative algebra.
    #[serde(with = "rational::serde_str")]
    pub eps5: Rational,
}

impl ToleranceReport {
    pub fn max_defect(&self) -> Rational {
        [self.eps1, self.eps2, self.eps3, self.eps4, self.eps5].into_iter().max().expect("nonempty")
    }
}

fn sup_abs(it: impl Iterator<Item = Rational>) -> Rational {
    it.map(|x| x.abs()).max().unwrap_or_else(Rational::zero)
}

/// Evaluates the relations exhaustively over points and index pairs.
pub fn verify_def16(sys: &SampledSystem, family: &TowerFamily, test_functions: &[Vec<Rational>]) -> Result<ToleranceReport> {
    family.validate()?;
    if family.points != sys.points() || family.rank != sys.rank() {
        return Err(Error::InvalidParameter("tower family does not match the system".into()));
    }
    if test_functions.iter().any(|a| a.len() != sys.points()) {
        return Err(Error::InvalidParameter("test function of the wrong length".into()));
    }
    let s = family.pointwise_sum();
    let one = Rational::one();
    let eps1 = sup_abs(s.iter().map(|v| one - v));
    let eps1prime = s.iter().min().copied().unwrap_or_else(Rational::zero) - one;
    let vs = family.window()?.vectors();
    let k = vs.len();
    let eps2 = (0..family.upper())
        .flat_map(|i| (0..k).flat_map(move |a| (a + 1..k).map(move |b| (i, a, b))))
        .map(|(i, a, b)| sup_abs(family.values[i][a].iter().zip(&family.values[i][b]).map(|(x, y)| x * y)))
        .max()
        .unwrap_or_else(Rational::zero);
    let back = vs.iter().map(|v| sys.permutation(&-v)).collect::<Result<Vec<_>>>()?;
    let per_v = exec::map_range(k, |vi| {
        let mut worst = Rational::zero();
        for i in 0..family.upper() {
            for (wi, w) in vs.iter().enumerate() {
                let lhs = &family.values[i][wi];
                let rhs = family.function(i, &(&vs[vi] + w));
                for x in 0..family.points {
                    let d = (lhs[back[vi][x] as usize] - rhs[x]).abs();
                    if d > worst {
                        worst = d;
                    }
                }
            }
        }
        worst
    });
    let eps3 = per_v.into_iter().max().unwrap_or_else(Rational::zero);
    let eps4 = test_functions
        .iter()
        .flat_map(|a| family.values.iter().flatten().map(move |f| sup_abs(f.iter().zip(a).map(|(x, y)| x * y - y * x))))
        .max()
        .unwrap_or_else(Rational::zero);
    Ok(ToleranceReport { eps1, eps1prime, eps2, eps3, eps4, eps5: Rational::zero() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Bounds {
    pub dim_rok_bound: u64,
    pub dim_rok_cyc_bound: u64,
    pub dim_nuc_bound: u64,
}

/// `(2^m(d+1) - 1, 2^{2m}(d+1) - 1, 2^{3m}(d+1)^2 - 1)`.
pub fn report_bounds(d: u64, m: u32) -> Bounds {
    let t = 1u64 << m;
    Bounds {
        dim_rok_bound: t * (d + 1) - 1,
        dim_rok_cyc_bound: t * t * (d + 1) - 1,
        dim_nuc_bound: t * t * t * (d + 1) * (d + 1) - 1,
    }
}
