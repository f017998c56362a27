//! Test-side oracles written directly from the defining formulas, sharing no
//! code with the library beyond `SampledSystem::act`.

#![allow(dead_code)]

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rokdim::cstar::BandOperator;
use rokdim::dynsys::SampledSystem;
use rokdim::lattice::LatticeVector;

pub fn lv(c: &[i64]) -> LatticeVector {
    LatticeVector::new(c.to_vec())
}

/// All of `{lo..=hi}^m` in row-major order, last coordinate fastest.
pub fn cube(m: usize, lo: i64, hi: i64) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out.into_iter().flat_map(|p| (lo..=hi).map(move |x| [p.clone(), vec![x]].concat())).collect();
    }
    out
}

/// `J_n = {-n+1, …, n}^m` in the library's enumeration order.
pub fn j_box(n: usize, m: usize) -> Vec<Vec<i64>> {
    cube(m, 1 - n as i64, n as i64)
}

/// `x ↦ α^v(x)` through repeated generator steps.
pub fn act(sys: &SampledSystem, v: &[i64], x: usize) -> usize {
    sys.act(&lv(v), x).unwrap()
}

pub fn random_coefficients(rng: &mut ChaCha8Rng, points: usize) -> Vec<C64> {
    (0..points).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

pub fn unit_sup(rng: &mut ChaCha8Rng, points: usize) -> Vec<C64> {
    let a = random_coefficients(rng, points);
    let s = a.iter().map(|z| z.norm()).fold(0.0, f64::max);
    a.into_iter().map(|z| z / s).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entry `((w, x), (w', x'))` of `Q (Σ a_v u_v) Q` on `ℓ²(J_n) ⊗ ℓ²(X)`,
/// from `(a u_v ξ)(w, x) = a(α^w x) ξ(w - v, x)`.
pub fn qxq_entry(sys: &SampledSystem, op: &BandOperator, w: &[i64], x: usize, w2: &[i64], x2: usize) -> C64 {
    if x != x2 {
        return C64::new(0.0, 0.0);
    }
    let v: Vec<i64> = w.iter().zip(w2).map(|(a, b)| a - b).collect();
    match op.terms.get(&lv(&v)) {
        Some(a) => a[act(sys, w, x)],
        None => C64::new(0.0, 0.0),
    }
}

/// `Q (Σ a_v u_v) Q ξ` with `ξ` indexed by `slot · |X| + x` over `J_n`.
pub fn qxq_apply(sys: &SampledSystem, op: &BandOperator, n: usize, xi: &[C64]) -> Vec<C64> {
    let m = sys.rank();
    let p = sys.points();
    let slots = j_box(n, m);
    let index: std::collections::HashMap<Vec<i64>, usize> = slots.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
    let mut out = vec![C64::new(0.0, 0.0); xi.len()];
    for (r, w) in slots.iter().enumerate() {
        for (v, a) in &op.terms {
            let src: Vec<i64> = w.iter().zip(v.coords()).map(|(a, b)| a - b).collect();
            let Some(&c) = index.get(&src) else { continue };
            for x in 0..p {
                out[r * p + x] += a[act(sys, w, x)] * xi[c * p + x];
            }
        }
    }
    out
}

/// `1 - |j|/n` on `|j| <= n`.
pub fn tent(n: usize, j: i64) -> f64 {
    1.0 - j.abs() as f64 / n as f64
}

pub fn tent_m(n: usize, v: &[i64]) -> f64 {
    v.iter().map(|&j| tent(n, j)).product()
}
