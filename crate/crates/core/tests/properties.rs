use std::f64::consts::PI;

use proptest::prelude::*;
use spheregap::catalog::{self, ChartedImmersion};
use spheregap::compare::Relation;
use spheregap::height;
use spheregap::quad::{self, GridSpec, Rule, Sample};
use spheregap::specfn::{self, GapKind};
use spheregap::verify::glob_regex;

fn member(name: &str) -> ChartedImmersion {
    catalog::from_name(name).unwrap()
}

/// Rotation by `angle` in the coordinate plane `(i, j)` of `R^d`, row-major.
fn givens(d: usize, i: usize, j: usize, angle: f64) -> Vec<f64> {
    let mut q = vec![0.0; d * d];
    for k in 0..d {
        q[k * d + k] = 1.0;
    }
    let (s, c) = angle.sin_cos();
    q[i * d + i] = c;
    q[j * d + j] = c;
    q[i * d + j] = -s;
    q[j * d + i] = s;
    q
}

fn apply(q: &[f64], a: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d).map(|i| (0..d).map(|j| q[i * d + j] * a[j]).sum()).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / len).collect()
}

fn direction(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d).prop_filter("not too short", |v| v.iter().map(|x| x * x).sum::<f64>() > 0.05).prop_map(unit)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Vol(S^n) = 2 pi / (n - 1) Vol(S^{n-2}), independent of the Gamma form.
    #[test]
    fn sphere_volume_recurrence(n in 2i64..150) {
        let lhs = specfn::sphere_volume(n).unwrap();
        let rhs = 2.0 * PI / (n - 1) as f64 * specfn::sphere_volume(n - 2).unwrap();
        prop_assert!((lhs / rhs - 1.0).abs() < 1e-12);
        prop_assert!((specfn::ball_volume(n).unwrap() - specfn::sphere_volume(n - 1).unwrap() / n as f64).abs()
            <= 1e-12 * specfn::ball_volume(n).unwrap());
    }

    #[test]
    fn clifford_volumes_are_dominated(n in 2i64..120, k_frac in 0.0f64..1.0) {
        let k = 1 + ((n - 1) as f64 * k_frac) as i64;
        let k = k.min(n - 1);
        let v = specfn::clifford_volume(k, n).unwrap();
        prop_assert!(v <= specfn::clifford_volume(1, n).unwrap() * (1.0 + 1e-12));
        prop_assert!(v < (1.0 + specfn::gap_p(n).unwrap()) * specfn::sphere_volume(n).unwrap());
        prop_assert!((v - specfn::clifford_volume(n - k, n).unwrap()).abs() <= 1e-12 * v);
    }

    #[test]
    fn gap_factors_exceed_one_and_fall_with_pinching(n in 2i64..200, d1 in 0.0f64..1.0, d2 in 0.0f64..1.0) {
        let cap = 3.0 * n as f64 / 8.0;
        let (lo, hi) = if d1 < d2 { (d1 * cap, d2 * cap) } else { (d2 * cap, d1 * cap) };
        for kind in [GapKind::IntegralEinstein, GapKind::Antipodal, GapKind::Pinched { delta: lo }, GapKind::Rigidity { delta: hi }] {
            let g = specfn::hyp_gap(kind, n).unwrap();
            prop_assert!(g > 1.0 && g.is_finite());
        }
        let pinched = |d| specfn::hyp_gap(GapKind::Pinched { delta: d }, n).unwrap();
        let rigid = |d| specfn::hyp_gap(GapKind::Rigidity { delta: d }, n).unwrap();
        prop_assert!(pinched(lo) >= pinched(hi));
        prop_assert!(rigid(lo) >= rigid(hi));
        prop_assert!(specfn::gap_p(n).unwrap() < 1.0);
    }

    #[test]
    fn main_bound_grows_with_multiplicity(n in 1i64..60, m in 1i64..20) {
        let a = specfn::main_bound(n, m).unwrap();
        let b = specfn::main_bound(n, m + 1).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn relation_margins_agree_with_the_relation(lhs in -10.0f64..10.0, rhs in -10.0f64..10.0) {
        let holds = [
            (Relation::Ge, lhs >= rhs),
            (Relation::Gt, lhs > rhs),
            (Relation::Le, lhs <= rhs),
            (Relation::Lt, lhs < rhs),
            (Relation::Eq, lhs == rhs),
        ];
        for (r, want) in holds {
            prop_assert_eq!(r.passes(r.margin(lhs, rhs), 0.0), want, "{:?}", r);
        }
    }

    #[test]
    fn literal_globs_match_only_themselves(id in "[a-z:,/.-]{1,20}", other in "[a-z:,/.-]{1,20}") {
        let re = glob_regex(&id).unwrap();
        prop_assert!(re.is_match(&id));
        prop_assert_eq!(re.is_match(&other), id == other);
        prop_assert!(glob_regex("*").unwrap().is_match(&other));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // |a^T|^2 + phi^2 + psi^2 = 1 for hypersurfaces.
    #[test]
    fn height_components_split_a_unit_vector(idx in 0usize..4, seed in 0u64..1000, a in direction(5)) {
        let names = ["equator:2,3", "clifford:1,2", "clifford:1,3", "equator:1,2"];
        let m = member(names[idx]);
        let a = unit(a[..m.coord_len()].to_vec());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let u = m.sample_param(&mut rng, 0.1);
        let total = height::tangent_sq(&m, &a, &u).unwrap()
            + height::height(&m, &a, &u).unwrap().powi(2)
            + height::normal_height(&m, &a, &u).unwrap().powi(2);
        prop_assert!((total - 1.0).abs() < 1e-10, "{}", total);
    }

    #[test]
    fn region_integrals_are_additive(cut in -0.9f64..0.9, a in direction(4)) {
        let m = member("clifford:1,2");
        let g = GridSpec::new(vec![48, 48], Rule::Product).with_depth(4);
        let field = |s: &Sample| 1.0 + s.height(&a).powi(2);
        let whole = quad::integrate_where(&m, field, &a, -1.0, 1.0, &g).unwrap();
        let low = quad::integrate_where(&m, field, &a, -1.0, cut, &g).unwrap();
        let high = quad::integrate_where(&m, field, &a, cut, 1.0, &g).unwrap();
        let tol = whole.err_est + low.err_est + high.err_est + 1e-9;
        prop_assert!((low.value + high.value - whole.value).abs() <= tol);
        let full = quad::integrate(&m, field, &g).unwrap();
        prop_assert!((whole.value - full.value).abs() <= whole.err_est + full.err_est + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // Rotating the immersion and the direction together changes nothing.
    #[test]
    fn integrals_are_rotation_invariant(angle in 0.0f64..(2.0 * PI), plane in 0usize..6, a in direction(4)) {
        let planes = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let (i, j) = planes[plane];
        let q = givens(4, i, j, angle);
        let m = member("clifford:1,2");
        let r = member("clifford:1,2").with_rotation(&q).unwrap();
        let g = GridSpec::new(vec![64, 64], Rule::PeriodicTrapezoid);
        let qa = apply(&q, &a);
        let plain = quad::integrate(&m, |s: &Sample| s.height(&a).powi(4), &g).unwrap().value;
        let turned = quad::integrate(&r, |s: &Sample| s.height(&qa).powi(4), &g).unwrap().value;
        prop_assert!((plain - turned).abs() < 1e-10 * plain.abs().max(1.0));
        let vol = quad::integrate(&r, |_: &Sample| 1.0, &g).unwrap().value;
        prop_assert!((vol - 2.0 * PI * PI).abs() < 1e-10);
    }

    // The profile is a family of suffix sums: cap volumes fall as r rises,
    // and each level agrees with a direct region integral.
    #[test]
    fn cumulative_profile_is_consistent(seed in 0u64..500, probe in 0usize..16) {
        let m = member("equator:2,3");
        let g = GridSpec::new(vec![48, 96], Rule::Product).with_depth(4);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let (_, a) = m.sample_image_point(&mut rng, 0.1);
        let r = height::default_r_grid(16);
        let caps = quad::cumulative_profile(&m, &a, |_: &Sample| 1.0, &r, &g).unwrap();
        for w in caps.windows(2) {
            prop_assert!(w[1].value <= w[0].value + 1e-12);
        }
        let direct = quad::integrate_where(&m, |_: &Sample| 1.0, &a, r[probe], 1.0, &g).unwrap();
        // Cap of the great 2-sphere above height r: 2 pi (1 - r).
        let exact = 2.0 * PI * (1.0 - r[probe]);
        prop_assert!((caps[probe].value - exact).abs() <= caps[probe].err_est + 1e-9);
        prop_assert!((direct.value - exact).abs() <= direct.err_est + 1e-9);
    }
}
