mod common;

use std::collections::BTreeSet;

use common::{act, lv};
use proptest::prelude::*;
use rokdim::dynsys::{self, SampledSystem};
use rokdim::lattice::LatticeVector;
use rokdim::rational::rat;
use rokdim::topo::{self, PointSet};

fn systems() -> Vec<SampledSystem> {
    vec![
        SampledSystem::make_cyclic(&[12]).unwrap(),
        SampledSystem::make_cyclic(&[6, 4]).unwrap(),
        SampledSystem::make_odometer(4).unwrap(),
        SampledSystem::make_product(&SampledSystem::make_cyclic(&[3]).unwrap(), &SampledSystem::make_odometer(3).unwrap()).unwrap(),
    ]
}

fn subsets_of_size(items: &[LatticeVector], k: usize) -> Vec<Vec<LatticeVector>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut with: Vec<Vec<LatticeVector>> = subsets_of_size(&items[1..], k - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, items[0].clone());
            s
        })
        .collect();
    with.extend(subsets_of_size(&items[1..], k));
    with
}

/// Smallest `k` such that no `k+1` distinct translates share a point,
/// searched over explicit subsets.
fn order_by_subsets(sys: &SampledSystem, set: &[usize], window: &[LatticeVector]) -> usize {
    let translates: Vec<BTreeSet<usize>> = window.iter().map(|g| set.iter().map(|&x| act(sys, g.coords(), x)).collect()).collect();
    (0..=window.len())
        .find(|&k| {
            subsets_of_size(&(0..window.len()).map(|i| lv(&[i as i64])).collect::<Vec<_>>(), k + 1).iter().all(|idx| {
                let mut common: Option<BTreeSet<usize>> = None;
                for i in idx {
                    let t = &translates[i.coords()[0] as usize];
                    common = Some(match common {
                        None => t.clone(),
                        Some(c) => c.intersection(t).copied().collect(),
                    });
                }
                common.is_none_or(|c| c.is_empty())
            })
        })
        .unwrap()
}

proptest! {
    #[test]
    fn action_is_a_homomorphism(which in 0usize..4, v in proptest::collection::vec(-9i64..9, 2), w in proptest::collection::vec(-9i64..9, 2), x in 0usize..1000) {
        let sys = &systems()[which];
        let m = sys.rank();
        let (v, w) = (&v[..m], &w[..m]);
        let x = x % sys.points();
        let sum: Vec<i64> = v.iter().zip(w).map(|(a, b)| a + b).collect();
        prop_assert_eq!(act(sys, v, act(sys, w, x)), act(sys, &sum, x));
        let p = sys.permutation(&lv(v)).unwrap();
        let q = sys.permutation(&-&lv(v)).unwrap();
        prop_assert_eq!(q[p[x] as usize] as usize, x);
    }

    #[test]
    fn generators_are_isometries(which in 0usize..4) {
        let sys = &systems()[which];
        prop_assert!(sys.isometry_audit().isometric);
        prop_assert_eq!(SampledSystem::from_json(&sys.to_json()).unwrap().to_explicit(), sys.to_explicit());
    }

    #[test]
    fn point_set_algebra(a in proptest::collection::btree_set(0usize..70, 0..40), b in proptest::collection::btree_set(0usize..70, 0..40)) {
        let (pa, pb) = (PointSet::from_indices(70, a.iter().copied()), PointSet::from_indices(70, b.iter().copied()));
        let as_vec = |s: BTreeSet<usize>| s.into_iter().collect::<Vec<_>>();
        prop_assert_eq!(pa.union(&pb).indices(), as_vec(a.union(&b).copied().collect()));
        prop_assert_eq!(pa.intersection(&pb).indices(), as_vec(a.intersection(&b).copied().collect()));
        prop_assert_eq!(pa.difference(&pb).indices(), as_vec(a.difference(&b).copied().collect()));
        prop_assert_eq!(pa.complement().len(), 70 - a.len());
        prop_assert_eq!(pa.union(&pb).complement(), pa.complement().intersection(&pb.complement()));
        prop_assert_eq!(pa.is_subset(&pb), a.is_subset(&b));
        prop_assert_eq!(pa.intersects(&pb), !a.is_disjoint(&b));
    }

    #[test]
    fn translation_and_fattening(set in proptest::collection::btree_set(0usize..24, 0..10), g in -30i64..30, k in 0i128..6) {
        let sys = SampledSystem::make_cyclic(&[24]).unwrap();
        let s = PointSet::from_indices(24, set.iter().copied());
        let t = topo::translate_set(&sys, &s, &lv(&[g])).unwrap();
        prop_assert_eq!(t.len(), s.len());
        prop_assert_eq!(topo::translate_set(&sys, &t, &lv(&[-g])).unwrap(), s.clone());
        let small = topo::fatten(&sys, &s, &rat(k, 24));
        let big = topo::fatten(&sys, &s, &rat(k + 1, 24));
        prop_assert!(s.is_subset(&small) && small.is_subset(&big));
        // on the circle the closed k/24-ball has 2k+1 points
        for x in s.iter() {
            prop_assert!(big.contains((x + 24 - (k as usize + 1) % 24) % 24));
        }
    }

    #[test]
    fn disjointness_order_matches_subset_search(set in proptest::collection::btree_set(0usize..12, 1..6), shifts in proptest::collection::btree_set(-6i64..6, 1..5)) {
        let sys = SampledSystem::make_cyclic(&[12]).unwrap();
        let s = PointSet::from_indices(12, set.iter().copied());
        let window: Vec<LatticeVector> = shifts.iter().map(|&g| lv(&[g])).collect();
        let want = order_by_subsets(&sys, &set.iter().copied().collect::<Vec<_>>(), &window);
        let r = topo::disjointness_order(&sys, &s, &window, window.len()).unwrap();
        prop_assert_eq!(r.order, Some(want));
        if want > 1 {
            let w = topo::is_disjoint(&sys, &s, &window, want - 1).unwrap().expect("witness");
            prop_assert_eq!(w.elements.len(), want);
            for g in &w.elements {
                prop_assert!(s.contains(act(&sys, &[-g.coords()[0]], w.point)));
            }
        }
        prop_assert!(topo::is_disjoint(&sys, &s, &window, want).unwrap().is_none());
    }
}

#[test]
fn freeness_certificates() {
    let sys = SampledSystem::make_cyclic(&[10]).unwrap();
    assert!(dynsys::check_free(&sys, 9).unwrap().is_free());
    let cert = dynsys::check_free(&sys, 10).unwrap();
    assert!(!cert.is_free());
    assert!(cert.violations.iter().all(|(g, x)| act(&sys, g.coords(), *x) == *x));
    let odo = SampledSystem::make_odometer(5).unwrap();
    assert!(dynsys::check_free(&odo, 31).unwrap().is_free());
    // J_32 contains 32 but not -32
    assert_eq!(dynsys::check_free(&odo, 32).unwrap().violations.len(), 32);
}
