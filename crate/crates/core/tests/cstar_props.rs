mod common;

use common::*;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rokdim::cstar::band::{band_apply, crossed_min_eigenvalue, crossed_norm, BandOperator, WindowOp};
use rokdim::cstar::compressed::{compress_psi, mu, CompressedOperator, DiagonalWeight};
use rokdim::cstar::inner::IdentityApproximation;
use rand::Rng;
use rokdim::cstar::norm::{dense_norm, power_norm, NormPolicy};
use rokdim::cstar::pipeline::{monomial_test_ops, pipeline_defect, CrossedFamily, PipelineConfig, SigmaContext};
use rokdim::dynsys::SampledSystem;
use rokdim::lattice::BoxWindow;
use rokdim::rational::rat;
use rokdim::rokhlin;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn random_op(seed: u64, points: usize, band: i64) -> BandOperator {
    let mut r = rng(seed);
    let mut op = BandOperator::zero(1, points);
    for v in -band..=band {
        if (seed as i64 + v) % 3 != 0 {
            op.add_term(lv(&[v]), &random_coefficients(&mut r, points));
        }
    }
    op
}

/// Dense matrix of `op` on `ℓ²(window) ⊗ ℓ²(X)` from the regular
/// representation formula, zero outside the window.
fn dense_window(sys: &SampledSystem, op: &BandOperator, lo: i64, hi: i64) -> DMatrix<C64> {
    let p = sys.points();
    let k = (hi - lo + 1) as usize;
    let mut m = DMatrix::zeros(k * p, k * p);
    for (r, w) in (lo..=hi).enumerate() {
        for (v, a) in &op.terms {
            let src = w - v.coords()[0];
            if src < lo || src > hi {
                continue;
            }
            let col = (src - lo) as usize;
            for x in 0..p {
                m[(r * p + x, col * p + x)] += a[act(sys, &[w], x)];
            }
        }
    }
    m
}

fn dvec(v: &[C64]) -> nalgebra::DVector<C64> {
    nalgebra::DVector::from_column_slice(v)
}

#[test]
fn band_apply_examples() {
    let sys = SampledSystem::make_cyclic(&[4]).unwrap();
    let mut r = rng(1);
    let xi = random_coefficients(&mut r, 6 * 4);
    // J_2 padded by 1 is {-2, ..., 3}
    let one = BandOperator::identity(1, 4);
    assert_eq!(band_apply(&sys, &one, 2, 1, &xi).unwrap(), xi);
    let a: Vec<C64> = (0..4).map(|x| c(x as f64 + 0.5)).collect();
    let diag = BandOperator::monomial(lv(&[0]), a);
    let xi4 = random_coefficients(&mut r, 4 * 4);
    let got = band_apply(&sys, &diag, 2, 0, &xi4).unwrap();
    let want = &dense_window(&sys, &diag, -1, 2) * dvec(&xi4);
    assert!(got.iter().zip(want.iter()).all(|(g, w)| (g - w).norm() < 1e-14));
    let shift = BandOperator::monomial(lv(&[1]), vec![c(1.0); 4]);
    let got = band_apply(&sys, &shift, 2, 1, &xi).unwrap();
    let want = &dense_window(&sys, &shift, -2, 3) * dvec(&xi);
    assert!(got.iter().zip(want.iter()).all(|(g, w)| (g - w).norm() < 1e-14));
    assert_eq!(band_apply(&sys, &shift, 2, 0, &xi4).unwrap_err().code(), "E_PADDING");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn band_algebra_laws(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000) {
        let sys = SampledSystem::make_cyclic(&[6]).unwrap();
        let (x, y, z) = (random_op(s1, 6, 2), random_op(s2, 6, 1), random_op(s3, 6, 2));
        let close = |a: &BandOperator, b: &BandOperator| {
            let d = a.sub(b);
            d.terms.values().flatten().all(|c| c.norm() < 1e-12)
        };
        let xy = x.mul(&sys, &y).unwrap();
        prop_assert!(close(&xy.adjoint(&sys).unwrap(), &y.adjoint(&sys).unwrap().mul(&sys, &x.adjoint(&sys).unwrap()).unwrap()));
        prop_assert!(close(&xy.mul(&sys, &z).unwrap(), &x.mul(&sys, &y.mul(&sys, &z).unwrap()).unwrap()));
        prop_assert!(close(&x.adjoint(&sys).unwrap().adjoint(&sys).unwrap(), &x));
        // the product agrees with the window representation away from the edge
        let inner = dense_window(&sys, &y, -3, 4);
        let outer = dense_window(&sys, &x, -3, 4);
        let prod = dense_window(&sys, &xy, -3, 4);
        let composed = &outer * &inner;
        let centre = |i: usize| (-3 + (i / 6) as i64).abs() <= 1 || (i / 6) as i64 - 3 == 2;
        for i in (0..48).filter(|&i| centre(i)) {
            for j in (0..48).filter(|&j| centre(j)) {
                prop_assert!((composed[(i, j)] - prod[(i, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn norm_enclosure_is_consistent(s in 0u64..1000) {
        let sys = SampledSystem::make_cyclic(&[6]).unwrap();
        let x = random_op(s, 6, 2);
        let policy = NormPolicy::default();
        let e = crossed_norm(&sys, &x, &policy).unwrap();
        prop_assert!(e.lower <= e.upper + 1e-12);
        prop_assert!(e.upper <= x.l1_norm() + 1e-12);
        let window = BoxWindow::j(6, 1).unwrap().rect();
        let w = WindowOp::new(&sys, &x, window).unwrap();
        prop_assert!(dense_norm(&w) <= e.upper + 1e-9);
    }

    #[test]
    fn compression_and_mu_are_linear(s1 in 0u64..1000, s2 in 0u64..1000, t in -2.0f64..2.0) {
        let sys = SampledSystem::make_odometer(3).unwrap();
        let (x, y) = (random_op(s1, 8, 3), random_op(s2, 8, 2));
        let combo = x.add(&y.scale(c(t)));
        for n in 1..4 {
            let lhs = compress_psi(&sys, &combo, n).unwrap();
            let rhs = compress_psi(&sys, &x, n).unwrap().add(&compress_psi(&sys, &y, n).unwrap().scale(c(t)));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            let lhs = mu(&sys, &combo, n).unwrap();
            let rhs = mu(&sys, &x, n).unwrap().add(&mu(&sys, &y, n).unwrap().scale(c(t)));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }
}

#[test]
fn unitary_monomials_have_norm_one() {
    let sys = SampledSystem::make_cyclic(&[8, 4]).unwrap();
    let policy = NormPolicy::default();
    for v in [[0, 0], [1, 0], [2, -3], [-5, 7]] {
        let u = BandOperator::monomial(lv(&v), vec![c(1.0); 32]);
        let e = crossed_norm(&sys, &u, &policy).unwrap();
        assert!((e.lower - 1.0).abs() < 1e-12 && (e.upper - 1.0).abs() < 1e-12, "{e:?}");
    }
}

#[test]
fn power_iteration_matches_dense_norms() {
    let policy = NormPolicy::default();
    let mut r = rng(4);
    for n in 1..=4usize {
        let k = 2 * n;
        let y = DMatrix::from_fn(k, k, |_, _| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let a = random_coefficients(&mut r, 9);
        let op = CompressedOperator::tensor(n, 1, &y, &a).add(&CompressedOperator::identity(n, 1, 9).scale(c(0.3)));
        let dense = dense_norm(&op);
        let power = power_norm(&op, &policy);
        assert!((dense - power).abs() <= 1e-6 * dense, "n={n}: {dense} vs {power}");
        assert!((op.norm() - dense).abs() <= 1e-9 * dense);
    }
}

fn mixed_family(points: usize, n: usize) -> (SampledSystem, rokhlin::TowerFamily) {
    let sys = SampledSystem::make_cyclic(&[points]).unwrap();
    let fam = rokhlin::indicator_towers(&rokhlin::tiling_cover(&sys, 2 * n).unwrap());
    let mixed = rokhlin::mix_neighbors(&fam, &rat(1, 5)).unwrap();
    (sys, mixed)
}

#[test]
fn sigma_is_positive_and_linear() {
    let (sys, fam) = mixed_family(24, 3);
    let cf = CrossedFamily::from_towers(&fam).unwrap();
    let ctx = SigmaContext::new(&sys, &cf).unwrap();
    let mut r = rng(12);
    for trial in 0..4 {
        let y = DMatrix::from_fn(6, 6, |_, _| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
        let a = random_coefficients(&mut r, 24);
        let yop = CompressedOperator::tensor(3, 1, &y, &a);
        let pos = yop.adjoint().mul(&yop);
        for bits in ctx.binary().to_vec() {
            let s = ctx.sigma(0, &bits, &pos).unwrap();
            let lo = crossed_min_eigenvalue(&sys, &s).unwrap();
            assert!(lo >= -1e-9, "trial {trial}, p={bits:?}: {lo}");
            let t = 0.75;
            let lhs = ctx.sigma(0, &bits, &pos.add(&yop.scale(c(t)))).unwrap();
            let rhs = s.add(&ctx.sigma(0, &bits, &yop).unwrap().scale(c(t)));
            assert!(lhs.sub(&rhs).terms.values().flatten().all(|z| z.norm() < 1e-12));
        }
    }
}

#[test]
fn star_relation_on_perturbed_family() {
    let (sys, fam) = mixed_family(32, 4);
    let ops = monomial_test_ops(&sys, 2, Some(21)).unwrap();
    let cfg = PipelineConfig { n: 4, big_n: 2, delta_floor: None, order_zero_seed: Some(8), policy: NormPolicy::default() };
    let r = pipeline_defect(&sys, &fam, &IdentityApproximation, &ops, &cfg).unwrap();
    assert!(r.family.epsilon > 0.0);
    assert!(r.tower_sum_identity == rat(0, 1));
    for o in &r.ops {
        assert!(o.star.pass && o.star.budget == 3.0 * r.family.epsilon, "{o:?}");
    }
    assert!(r.order_zero.iter().all(|e| e.check.pass));
    assert!(r.pass, "{:?}", r.violations);
}

#[test]
fn unit_on_exact_tiling_is_reproduced() {
    let sys = SampledSystem::make_cyclic(&[64]).unwrap();
    let fam = rokhlin::indicator_towers(&rokhlin::tiling_cover(&sys, 16).unwrap());
    let ops = vec![monomial_test_ops(&sys, 2, None).unwrap().into_iter().find(|t| t.op.terms.contains_key(&lv(&[0]))).unwrap()];
    let cfg = PipelineConfig { n: 8, big_n: 2, delta_floor: None, order_zero_seed: None, policy: NormPolicy::default() };
    let r = pipeline_defect(&sys, &fam, &IdentityApproximation, &ops, &cfg).unwrap();
    assert!(r.tower_sum_identity == rat(0, 1));
    // with v = 0 nothing falls outside J_n ∩ (v + J_n), so only the
    // edge translates contribute to the tail
    assert!(r.ops[0].end_to_end.measured < 1e-12, "{:?}", r.ops[0]);
    assert!(r.ops[0].defect_lower < 1e-12);
}

#[test]
fn tower_sum_identity_on_constructed_towers() {
    let sys = SampledSystem::make_cyclic(&[128]).unwrap();
    for (l, n_param) in [(2usize, 2usize), (4, 1)] {
        let cover = rokhlin::build_cover(&sys, 8 * l * n_param, 0).unwrap();
        let raw = rokhlin::towers_from_cover(&sys, &cover, l, n_param, &rat(0, 1)).unwrap();
        let fam = rokhlin::normalize_towers(&raw).unwrap();
        let n = l / 2;
        let ops = monomial_test_ops(&sys, 1, None).unwrap();
        let cfg = PipelineConfig { n, big_n: 1, delta_floor: None, order_zero_seed: None, policy: NormPolicy::default() };
        let r = pipeline_defect(&sys, &fam, &IdentityApproximation, &ops, &cfg).unwrap();
        assert!(r.tower_sum_identity == rat(0, 1), "L={l}");
        assert_eq!(r.params.d + 1, fam.upper());
        for o in &r.ops {
            assert!(o.commutator.pass && o.mu_vs_d_psi.pass, "{o:?}");
        }
    }
}

#[test]
fn edge_monomials_stay_within_the_tail_budget() {
    let sys = SampledSystem::make_cyclic(&[32]).unwrap();
    let fam = rokhlin::indicator_towers(&rokhlin::tiling_cover(&sys, 4).unwrap());
    let ops = monomial_test_ops(&sys, 2, None).unwrap();
    let cfg = PipelineConfig { n: 2, big_n: 2, delta_floor: None, order_zero_seed: None, policy: NormPolicy::default() };
    let r = pipeline_defect(&sys, &fam, &IdentityApproximation, &ops, &cfg).unwrap();
    assert!(r.tail.measured > 0.0 && r.tail.pass, "{:?}", r.tail);
    let diag = DiagonalWeight::new(2, 1).unwrap();
    assert_eq!(diag.values, vec![0.5, 1.0, 0.5, 0.0]);
}
