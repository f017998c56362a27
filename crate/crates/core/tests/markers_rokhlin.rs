mod common;

use common::act;
use num_traits::{One, Zero};
use rokdim::dynsys::SampledSystem;
use rokdim::lattice::BoxWindow;
use rokdim::markers::{build_controlled_marker, verify_controlled_marker};
use rokdim::rational::{rat, Rational};
use rokdim::rokhlin::{self, RokhlinCover};

/// Equivariance, disjointness within levels and covering, via `act` only.
fn oracle_cover_ok(sys: &SampledSystem, cover: &RokhlinCover) -> bool {
    let window = BoxWindow::b(cover.n, cover.rank).unwrap().vectors();
    let mut covered = vec![false; sys.points()];
    for tower in &cover.towers {
        let base = &tower[0];
        let mut hits = vec![0; sys.points()];
        for (i, v) in window.iter().enumerate() {
            let image: Vec<usize> = base.iter().map(|x| act(sys, v.coords(), x)).collect();
            if tower[i].indices() != {
                let mut s = image.clone();
                s.sort();
                s
            } {
                return false;
            }
            for x in image {
                hits[x] += 1;
                covered[x] = true;
            }
        }
        if hits.iter().any(|&h| h > 1) {
            return false;
        }
    }
    covered.into_iter().all(|c| c)
}

#[test]
fn covers_on_several_systems() {
    let cases: Vec<(SampledSystem, usize, usize)> = vec![
        (SampledSystem::make_cyclic(&[128]).unwrap(), 4, 1),
        (SampledSystem::make_odometer(7).unwrap(), 4, 0),
        (SampledSystem::make_odometer(7).unwrap(), 3, 1),
        (SampledSystem::make_cyclic(&[24, 24]).unwrap(), 3, 0),
    ];
    for (sys, n, d) in cases {
        let c = build_controlled_marker(&sys, n, d).unwrap();
        assert_eq!(c.witness.l, (1 << sys.rank()) * (d + 1));
        assert!(verify_controlled_marker(&sys, &c.witness).passed());
        let cover = rokhlin::cover_from_marker(&sys, &c.witness).unwrap();
        assert_eq!(cover.levels(), c.witness.l);
        assert!(oracle_cover_ok(&sys, &cover), "n={n}, d={d}");
    }
}

#[test]
fn tampered_cover_json_fails_verification() {
    let sys = SampledSystem::make_cyclic(&[64]).unwrap();
    let cover = rokhlin::build_cover(&sys, 4, 0).unwrap();
    let json = cover.to_json();
    assert_eq!(RokhlinCover::from_json(&sys, &json).unwrap(), cover);
    let mut bad = cover.clone();
    bad.towers[1][2] = bad.towers[1][3].clone();
    assert!(!oracle_cover_ok(&sys, &bad));
    let parsed = RokhlinCover::from_json(&sys, &bad.to_json()).unwrap();
    let report = rokhlin::verify_cover(&sys, &parsed);
    assert!(!report.passed() && !report.equivariant);
    assert_eq!(RokhlinCover::from_json(&SampledSystem::make_cyclic(&[32]).unwrap(), &json).unwrap_err().code(), "E_PARAM");
}

#[test]
fn tower_families_from_covers() {
    for (sys, l, n) in [
        (SampledSystem::make_odometer(7).unwrap(), 1, 2),
        (SampledSystem::make_odometer(7).unwrap(), 2, 1),
        (SampledSystem::make_cyclic(&[96]).unwrap(), 1, 3),
    ] {
        let cover = rokhlin::build_cover(&sys, 8 * l * n, 0).unwrap();
        let raw = rokhlin::towers_from_cover(&sys, &cover, l, n, &Rational::zero()).unwrap();
        assert_eq!(raw.upper(), cover.levels() * 2);
        let r = rokhlin::verify_def16(&sys, &raw, &[]).unwrap();
        assert!(r.eps2.is_zero());
        assert!(r.eps3 <= rat(2, n as i128), "{r:?}");
        assert!(r.eps1prime >= Rational::zero());
        let norm = rokhlin::normalize_towers(&raw).unwrap();
        assert!(norm.pointwise_sum().iter().all(|s| s.is_one()));
        assert!(norm.values.iter().flatten().flatten().all(|x| *x >= Rational::zero() && *x <= Rational::one()));
        assert_eq!(rokhlin::TowerFamily::from_json(&norm.to_json()).unwrap(), norm);
        let csv = norm.to_csv();
        assert_eq!(csv.lines().count(), 1 + norm.upper() * l * sys.points());
    }
}

#[test]
fn mixing_preserves_the_sum() {
    let sys = SampledSystem::make_cyclic(&[32]).unwrap();
    let fam = rokhlin::indicator_towers(&rokhlin::tiling_cover(&sys, 8).unwrap());
    let mixed = rokhlin::mix_neighbors(&fam, &rat(1, 3)).unwrap();
    let r = rokhlin::verify_def16(&sys, &mixed, &[]).unwrap();
    assert!(r.eps1.is_zero() && r.eps3.is_zero());
    assert_eq!(r.eps2, rat(2, 9));
    assert_eq!(rokhlin::mix_neighbors(&fam, &rat(3, 2)).unwrap_err().code(), "E_PARAM");
}
