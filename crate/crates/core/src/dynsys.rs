//! Finite sampled stand-ins for compact metric `Z^m`-systems.
//!
//! A [`SampledSystem`] is a finite point set with an exact rational metric and
//! `m` commuting generator bijections. Metrics are stored as integer
//! numerators over one common denominator so that distance comparisons are
//! exact and cheap.

use std::sync::OnceLock;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::{BoxWindow, LatticeVector};
use crate::rational::{self, Rational};
use crate::topo::PointSet;

/// JSON description of a system.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Builder(BuilderSpec),
    Explicit(ExplicitSpec),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "lowercase", deny_unknown_fields)]
pub enum BuilderSpec {
    Cyclic { sizes: Vec<usize> },
    Odometer { bits: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSpec {
    pub points: usize,
    /// Row-major `points × points` distances.
    #[serde(with = "rational::serde_vec")]
    pub metric: Vec<Rational>,
    /// One permutation array per generator: `generators[i][p]` is the image of `p`.
    pub generators: Vec<Vec<usize>>,
}

impl SystemSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("system spec serializes")
    }
}

#[derive(Debug)]
pub struct SampledSystem {
    points: usize,
    /// Row-major metric numerators over `denom`.
    metric: Vec<i64>,
    denom: i64,
    generators: Vec<Vec<u32>>,
    inverses: Vec<Vec<u32>>,
    closure_eps: Rational,
    spec: SystemSpec,
    grid: OnceLock<Vec<Rational>>,
}

impl Clone for SampledSystem {
    fn clone(&self) -> Self {
        SampledSystem {
            points: self.points,
            metric: self.metric.clone(),
            denom: self.denom,
            generators: self.generators.clone(),
            inverses: self.inverses.clone(),
            closure_eps: self.closure_eps,
            spec: self.spec.clone(),
            grid: OnceLock::new(),
        }
    }
}

/// Row-major index of `coords` in `(Z/N_1) × ... × (Z/N_m)`.
pub fn cyclic_index(sizes: &[usize], coords: &[i64]) -> usize {
    coords
        .iter()
        .zip(sizes)
        .fold(0usize, |acc, (&c, &n)| acc * n + c.rem_euclid(n as i64) as usize)
}

pub fn cyclic_coords(sizes: &[usize], mut idx: usize) -> Vec<i64> {
    let mut out = vec![0i64; sizes.len()];
    for i in (0..sizes.len()).rev() {
        out[i] = (idx % sizes[i]) as i64;
        idx /= sizes[i];
    }
    out
}

fn inverse_perm(p: &[u32]) -> Vec<u32> {
    let mut inv = vec![0u32; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j as usize] = i as u32;
    }
    inv
}

fn compose(outer: &[u32], inner: &[u32]) -> Vec<u32> {
    inner.iter().map(|&j| outer[j as usize]).collect()
}

fn perm_pow(base: &[u32], mut k: u64) -> Vec<u32> {
    let mut result: Vec<u32> = (0..base.len() as u32).collect();
    let mut sq = base.to_vec();
    while k > 0 {
        if k & 1 == 1 {
            result = compose(&sq, &result);
        }
        k >>= 1;
        if k > 0 {
            sq = compose(&sq, &sq);
        }
    }
    result
}

impl SampledSystem {
    fn assemble(points: usize, metric: Vec<i64>, denom: i64, generators: Vec<Vec<u32>>, spec: SystemSpec) -> Self {
        let inverses = generators.iter().map(|g| inverse_perm(g)).collect();
        SampledSystem {
            points,
            metric,
            denom,
            generators,
            inverses,
            closure_eps: Rational::from_integer(0),
            spec,
            grid: OnceLock::new(),
        }
    }

    /// `(Z/N_1) × ... × (Z/N_m)` with generator `i` adding one in coordinate
    /// `i` and the normalised `ℓ∞` circle metric `max_i circ(x_i - y_i)/N_i`.
    pub fn make_cyclic(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter(format!("cyclic sizes must be >= 2 (got {sizes:?})")));
        }
        let points: usize = sizes.iter().product();
        let denom = sizes.iter().fold(1i64, |acc, &n| acc.lcm(&(n as i64)));
        let coords: Vec<Vec<i64>> = (0..points).map(|p| cyclic_coords(sizes, p)).collect();
        let mut metric = vec![0i64; points * points];
        exec::for_each_chunk_mut(&mut metric, points, |x, row| {
            for (y, out) in row.iter_mut().enumerate() {
                *out = sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| {
                        let k = (coords[x][i] - coords[y][i]).rem_euclid(n as i64);
                        k.min(n as i64 - k) * (denom / n as i64)
                    })
                    .max()
                    .unwrap_or(0);
            }
        });
        let generators = (0..sizes.len())
            .map(|i| {
                (0..points)
                    .map(|p| {
                        let mut c = coords[p].clone();
                        c[i] += 1;
                        cyclic_index(sizes, &c) as u32
                    })
                    .collect()
            })
            .collect();
        let spec = SystemSpec::Builder(BuilderSpec::Cyclic { sizes: sizes.to_vec() });
        Ok(Self::assemble(points, metric, denom, generators, spec))
    }

    /// Binary odometer on `{0,1}^bits`: `+1` with carry, least significant
    /// bit first, metric `2^{-k}` with `k` the first differing bit.
    pub fn make_odometer(bits: usize) -> Result<Self> {
        if bits == 0 || bits > 20 {
            return Err(Error::InvalidParameter(format!("odometer bits must be in 1..=20 (got {bits})")));
        }
        let points = 1usize << bits;
        let denom = 1i64 << (bits - 1);
        let mut metric = vec![0i64; points * points];
        exec::for_each_chunk_mut(&mut metric, points, |x, row| {
            for (y, out) in row.iter_mut().enumerate() {
                if x != y {
                    let k = (x ^ y).trailing_zeros() as usize;
                    *out = 1i64 << (bits - 1 - k);
                }
            }
        });
        let generators = vec![(0..points).map(|p| ((p + 1) % points) as u32).collect()];
        let spec = SystemSpec::Builder(BuilderSpec::Odometer { bits });
        Ok(Self::assemble(points, metric, denom, generators, spec))
    }

    /// Product system with the max metric; the generators of `a` come first.
    pub fn make_product(a: &SampledSystem, b: &SampledSystem) -> Result<Self> {
        let points = a.points * b.points;
        let metric = (0..points * points)
            .map(|k| {
                let (x, y) = (k / points, k % points);
                let da = a.dist(x / b.points, y / b.points);
                let db = b.dist(x % b.points, y % b.points);
                da.max(db)
            })
            .collect();
        let mut generators = Vec::new();
        for g in &a.generators {
            generators.push((0..points).map(|p| g[p / b.points] as usize * b.points + p % b.points).collect());
        }
        for g in &b.generators {
            generators.push((0..points).map(|p| (p / b.points) * b.points + g[p % b.points] as usize).collect());
        }
        Self::from_spec(&SystemSpec::Explicit(ExplicitSpec { points, metric, generators }))
    }

    /// Builds and validates a system from its description.
    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        match spec {
            SystemSpec::Builder(BuilderSpec::Cyclic { sizes }) => Self::make_cyclic(sizes),
            SystemSpec::Builder(BuilderSpec::Odometer { bits }) => Self::make_odometer(*bits),
            SystemSpec::Explicit(e) => Self::from_explicit(e),
        }
    }

    fn from_explicit(e: &ExplicitSpec) -> Result<Self> {
        let p = e.points;
        if p == 0 {
            return Err(Error::InvalidSystem("no points".into()));
        }
        if e.metric.len() != p * p {
            return Err(Error::InvalidSystem(format!("metric has {} entries, expected {}", e.metric.len(), p * p)));
        }
        if e.generators.is_empty() {
            return Err(Error::InvalidSystem("at least one generator is required".into()));
        }
        let mut denom: i128 = 1;
        for r in &e.metric {
            denom = denom.lcm(r.denom());
            if denom > (1i128 << 62) {
                return Err(Error::InvalidSystem("metric denominators are too large".into()));
            }
        }
        let mut metric = Vec::with_capacity(p * p);
        for r in &e.metric {
            let num = r.numer() * (denom / r.denom());
            if num < 0 || num > i64::MAX as i128 {
                return Err(Error::InvalidSystem("metric entries must be nonnegative and bounded".into()));
            }
            metric.push(num as i64);
        }
        let mut generators = Vec::with_capacity(e.generators.len());
        for (i, g) in e.generators.iter().enumerate() {
            if g.len() != p {
                return Err(Error::InvalidSystem(format!("generator {i} has length {}", g.len())));
            }
            let mut seen = vec![false; p];
            for &x in g {
                if x >= p || std::mem::replace(&mut seen[x], true) {
                    return Err(Error::InvalidSystem(format!("generator {i} is not a bijection")));
                }
            }
            generators.push(g.iter().map(|&x| x as u32).collect::<Vec<u32>>());
        }
        for i in 0..generators.len() {
            for j in i + 1..generators.len() {
                if compose(&generators[i], &generators[j]) != compose(&generators[j], &generators[i]) {
                    return Err(Error::InvalidSystem(format!("generators {i} and {j} do not commute")));
                }
            }
        }
        let sys = Self::assemble(p, metric, denom as i64, generators, SystemSpec::Explicit(e.clone()));
        sys.validate_metric()?;
        Ok(sys)
    }

    /// Symmetry, zero diagonal, positivity off the diagonal, and the triangle
    /// inequality (exhaustive up to 512 points, sampled above).
    pub fn validate_metric(&self) -> Result<()> {
        let p = self.points;
        for x in 0..p {
            if self.metric[x * p + x] != 0 {
                return Err(Error::InvalidSystem(format!("d({x},{x}) != 0")));
            }
            for y in x + 1..p {
                let d = self.metric[x * p + y];
                if d != self.metric[y * p + x] {
                    return Err(Error::InvalidSystem(format!("metric not symmetric at ({x},{y})")));
                }
                if d == 0 {
                    return Err(Error::InvalidSystem(format!("distinct points {x},{y} at distance 0")));
                }
            }
        }
        let m = &self.metric;
        let check = |x: usize, y: usize, z: usize| -> Option<(usize, usize, usize)> {
            ((m[x * p + z] as i128) > m[x * p + y] as i128 + m[y * p + z] as i128).then_some((x, y, z))
        };
        let bad = if p <= 512 {
            exec::find_first(p, |x| {
                (0..p).find_map(|y| (0..p).find_map(|z| check(x, y, z)))
            })
        } else {
            // deterministic spot check
            let mut state = 0x9E37_79B9_7F4A_7C15u64;
            let mut next = || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % p as u64) as usize
            };
            (0..200_000).find_map(|_| {
                let (x, y, z) = (next(), next(), next());
                check(x, y, z)
            })
        };
        match bad {
            Some((x, y, z)) => Err(Error::InvalidSystem(format!("triangle inequality fails for ({x},{y},{z})"))),
            None => Ok(()),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_spec(&SystemSpec::from_json(s)?)
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn to_json(&self) -> String {
        self.spec.to_json()
    }

    /// The system in explicit form (points, metric, generators).
    pub fn to_explicit(&self) -> ExplicitSpec {
        ExplicitSpec {
            points: self.points,
            metric: (0..self.points * self.points)
                .map(|k| Rational::new(self.metric[k] as i128, self.denom as i128))
                .collect(),
            generators: self.generators.iter().map(|g| g.iter().map(|&x| x as usize).collect()).collect(),
        }
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    pub fn closure_eps(&self) -> Rational {
        self.closure_eps
    }

    /// Sets the fattening radius used to model closures (default 0).
    pub fn with_closure_eps(mut self, eps: Rational) -> Result<Self> {
        if eps < Rational::from_integer(0) {
            return Err(Error::InvalidParameter("closure_eps must be >= 0".into()));
        }
        self.closure_eps = eps;
        Ok(self)
    }

    pub fn dist(&self, x: usize, y: usize) -> Rational {
        Rational::new(self.metric[x * self.points + y] as i128, self.denom as i128)
    }

    #[inline]
    pub(crate) fn dist_num(&self, x: usize, y: usize) -> i64 {
        self.metric[x * self.points + y]
    }

    /// Largest numerator `k` with `k / denom <= delta` (for `delta >= 0`).
    pub(crate) fn threshold(&self, delta: &Rational) -> i64 {
        let scaled = delta * Rational::from_integer(self.denom as i128);
        scaled.floor().to_integer().clamp(-1, i64::MAX as i128) as i64
    }

    /// Sorted distinct pairwise distances, including 0: the only radii at
    /// which a fattening can change.
    pub fn distance_grid(&self) -> &[Rational] {
        self.grid.get_or_init(|| {
            let mut nums = self.metric.clone();
            nums.sort_unstable();
            nums.dedup();
            nums.into_iter()
                .map(|k| Rational::new(k as i128, self.denom as i128))
                .collect()
        })
    }

    fn check_rank(&self, v: &LatticeVector) -> Result<()> {
        if v.rank() != self.rank() {
            return Err(Error::RankMismatch { expected: self.rank(), got: v.rank() });
        }
        Ok(())
    }

    /// `α^v(point)`.
    pub fn act(&self, v: &LatticeVector, point: usize) -> Result<usize> {
        self.check_rank(v)?;
        if point >= self.points {
            return Err(Error::InvalidParameter(format!("point {point} out of range")));
        }
        let mut p = point as u32;
        for (i, &k) in v.coords().iter().enumerate() {
            let table = if k >= 0 { &self.generators[i] } else { &self.inverses[i] };
            for _ in 0..k.unsigned_abs() {
                p = table[p as usize];
            }
        }
        Ok(p as usize)
    }

    /// The permutation `p ↦ α^v(p)` as a lookup table.
    pub fn permutation(&self, v: &LatticeVector) -> Result<Vec<u32>> {
        self.check_rank(v)?;
        let mut out: Vec<u32> = (0..self.points as u32).collect();
        for (i, &k) in v.coords().iter().enumerate() {
            if k == 0 {
                continue;
            }
            let base = if k > 0 { &self.generators[i] } else { &self.inverses[i] };
            out = compose(&perm_pow(base, k.unsigned_abs()), &out);
        }
        Ok(out)
    }

    /// Generator `i` as a permutation table.
    pub fn generator(&self, i: usize) -> &[u32] {
        &self.generators[i]
    }

    /// Checks `d(α^{e_i} x, α^{e_i} y) = d(x, y)` for every generator.
    pub fn isometry_audit(&self) -> IsometryAudit {
        let p = self.points;
        let violation = self.generators.iter().enumerate().find_map(|(i, g)| {
            exec::find_first(p, |x| {
                (0..p).find_map(|y| {
                    (self.dist_num(g[x] as usize, g[y] as usize) != self.dist_num(x, y)).then_some((i, x, y))
                })
            })
        });
        IsometryAudit { isometric: violation.is_none(), violation }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IsometryAudit {
    pub isometric: bool,
    /// `(generator, x, y)` of the first pair whose distance changes.
    pub violation: Option<(usize, usize, usize)>,
}

/// `X^g = {x : α^g(x) = x}` for `g ≠ 0`.
pub fn fixed_point_set(sys: &SampledSystem, g: &LatticeVector) -> Result<PointSet> {
    if g.is_zero() {
        return Err(Error::InvalidParameter("the identity fixes every point".into()));
    }
    let perm = sys.permutation(g)?;
    Ok(PointSet::from_indices(
        sys.points(),
        perm.iter().enumerate().filter(|(x, &y)| *x == y as usize).map(|(x, _)| x),
    ))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreenessCertificate {
    pub radius: usize,
    /// `(g, x)` with `α^g(x) = x`, `g ∈ J_R \ {0}`.
    pub violations: Vec<(LatticeVector, usize)>,
}

impl FreenessCertificate {
    pub fn is_free(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Audits every `g ∈ J_R \ {0}` for fixed points.
pub fn check_free(sys: &SampledSystem, radius: usize) -> Result<FreenessCertificate> {
    let window = BoxWindow::j(radius, sys.rank())?;
    let group: Vec<LatticeVector> = window.vectors().into_iter().filter(|g| !g.is_zero()).collect();
    let per_g = exec::map_slice(&group, |g| {
        let perm = sys.permutation(g).expect("rank checked");
        perm.iter()
            .enumerate()
            .filter(|(x, &y)| *x == y as usize)
            .map(|(x, _)| (g.clone(), x))
            .collect::<Vec<_>>()
    });
    Ok(FreenessCertificate { radius, violations: per_g.into_iter().flatten().collect() })
}

/// Smallest audit radius `R` whose window `J_R` contains every difference
/// `g - h` of elements of `set`.
pub fn radius_for_differences(set: &[LatticeVector]) -> usize {
    let mut k = 0i64;
    for g in set {
        for h in set {
            k = k.max((g - h).norm_inf());
        }
    }
    k as usize + 1
}
