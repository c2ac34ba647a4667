//! Property tests of the library invariants.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use proptest::prelude::*;

use alexkit::charts::{build_chart, quasigeodesic_check};
use alexkit::flow::{extremal_invariance_test, gradient_curve, FlowConfig};
use alexkit::glue::{cross_space_almost_isometry, discrete_net};
use alexkit::kplane::{angle, side_from_angle};
use alexkit::models::{
    arc_length_pairing, gen_cone, gen_convex_polygon, regular_polygon_vertices, square_vertices, GeneratorSpec,
    Interior, Model, PolygonOptions,
};
use alexkit::space::{
    default_angle_tol, extremality_check, hausdorff_measure_estimate, packing_dimension_estimate,
    packing_number_with, validate, Coords, Curve, CurveKind, MetricKind, PackingMode, PointId, Space, Subset,
};
use alexkit::strainers::{classify, is_strainer, strainer_number, unstrained_mass};

fn kappa() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![-1.0, 0.0, 1.0])
}

fn cloud(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0f64..1.0, 0.0f64..1.0).prop_map(|(x, y)| [x, y]), 2..max)
}

fn planar(points: &[[f64; 2]]) -> Space {
    Space::euclidean("cloud", 0.0, Coords::from_points(points))
}

fn polygon(vertices: &[[f64; 2]], h: f64, interior: Interior) -> Model {
    gen_convex_polygon(vertices, h, PolygonOptions { interior, interior_h: None }).unwrap()
}

fn boundary(model: &Model) -> Subset<'_> {
    Subset::named(&model.space, "boundary", None).unwrap()
}

fn interior_ids(model: &Model) -> Vec<PointId> {
    let b = &model.space.subset_spec("boundary").unwrap().indices;
    model.space.ids().filter(|i| b.binary_search(i).is_err()).collect()
}

// ---------------------------------------------------------------------------
// κ-plane

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn angle_round_trip(k in kappa(), l1 in 0.05f64..1.5, l2 in 0.05f64..1.5, gamma in 0.01f64..PI - 0.01) {
        let side = side_from_angle(k, l1, l2, gamma).unwrap();
        let back = angle(k, l1, l2, side).unwrap();
        prop_assert!((back - gamma).abs() < 1e-9, "{} vs {}", back, gamma);
    }

    #[test]
    fn angle_increases_with_opposite_side(
        k in kappa(), l1 in 0.1f64..1.0, l2 in 0.1f64..1.0, s in 0.01f64..0.98, ds in 1e-6f64..1e-2,
    ) {
        let lo = (l1 - l2).abs();
        let span = l1 + l2 - lo;
        let a = angle(k, l1, l2, lo + s * span).unwrap();
        let b = angle(k, l1, l2, lo + (s + ds) * span).unwrap();
        prop_assert!(b > a, "{} then {}", a, b);
    }

    #[test]
    fn small_curvature_is_continuous(l1 in 0.1f64..1.0, l2 in 0.1f64..1.0, gamma in 0.1f64..PI - 0.1) {
        let side = side_from_angle(0.0, l1, l2, gamma).unwrap();
        let flat = angle(0.0, l1, l2, side).unwrap();
        for k in [1e-6, -1e-6] {
            prop_assert!((angle(k, l1, l2, side).unwrap() - flat).abs() < 1e-5);
        }
    }

    #[test]
    fn adjacent_sides_commute(k in kappa(), l1 in 0.05f64..1.5, l2 in 0.05f64..1.5, gamma in 0.01f64..PI - 0.01) {
        let side = side_from_angle(k, l1, l2, gamma).unwrap();
        let a = angle(k, l1, l2, side).unwrap();
        let b = angle(k, l2, l1, side).unwrap();
        prop_assert!((a - b).abs() <= 1e-14, "{} vs {}", a, b);
    }
}

// ---------------------------------------------------------------------------
// spaces

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn intrinsic_dominates_extrinsic(points in cloud(40), link in 0.15f64..0.5) {
        let space = planar(&points);
        let sub = Subset::whole(&space, Some(link)).unwrap();
        for x in space.ids() {
            for y in space.ids() {
                prop_assert!(sub.intrinsic(x, y).unwrap() >= space.dist(x, y));
            }
        }
    }

    #[test]
    fn exact_packing_is_monotone(points in cloud(18), e1 in 0.05f64..0.5, e2 in 0.05f64..0.5, cut in 1usize..18) {
        let space = planar(&points);
        let all: Vec<PointId> = space.ids().collect();
        let (small, large) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let beta = |ids: &[PointId], eps| packing_number_with(&space, ids, eps, PackingMode::Exact).unwrap();
        prop_assert!(beta(&all, large) <= beta(&all, small));
        let part = &all[..cut.min(all.len())];
        prop_assert!(beta(part, small) <= beta(&all, small));
    }

    #[test]
    fn greedy_packing_is_sandwiched(points in cloud(20), eps in 0.05f64..0.4) {
        let space = planar(&points);
        let all: Vec<PointId> = space.ids().collect();
        let greedy = packing_number_with(&space, &all, eps, PackingMode::Greedy).unwrap();
        prop_assert!(greedy <= packing_number_with(&space, &all, eps, PackingMode::Exact).unwrap());
        prop_assert!(greedy >= packing_number_with(&space, &all, 2.0 * eps, PackingMode::Exact).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn intrinsic_measure_is_not_smaller(n in 3usize..10, h in 0.01f64..0.03, factor in 3.0f64..8.0) {
        let model = polygon(&regular_polygon_vertices(n, 1.0, 0.0), h, Interior::None);
        let sub = boundary(&model);
        let eps = factor * h;
        let ext = hausdorff_measure_estimate(&sub, 1, eps, MetricKind::Extrinsic).unwrap().value;
        let int = hausdorff_measure_estimate(&sub, 1, eps, MetricKind::Intrinsic).unwrap().value;
        prop_assert!(int >= 0.95 * ext, "{} vs {}", int, ext);
    }

    #[test]
    fn generators_produce_metric_spaces(spec in generator_spec()) {
        let model = spec.generate().unwrap();
        let report = validate(&model.space);
        prop_assert!(report.passed, "{:?}: {:?}", spec, report);
    }
}

fn generator_spec() -> impl Strategy<Value = GeneratorSpec> {
    let none = PolygonOptions { interior: Interior::None, interior_h: None };
    let full = PolygonOptions::default();
    prop_oneof![
        (3usize..12, 0.3f64..1.0, 0.0f64..1.0, prop::bool::ANY).prop_map(move |(n, radius, rotation, filled)| {
            GeneratorSpec::RegularPolygon { n, radius, rotation, h: 0.05, options: if filled { full } else { none } }
        }),
        (0.5f64..1.5).prop_map(move |side| GeneratorSpec::Square { side, h: 0.06, options: full }),
        (0.5f64..6.0, 0.5f64..1.0).prop_map(|(theta, radius)| GeneratorSpec::Cone { theta, radius, h: 0.08 }),
        (0.5f64..1.0).prop_map(|side| GeneratorSpec::Pillow { side, h: 0.1 }),
        (0.5f64..9.0).prop_map(|length| GeneratorSpec::Circle { length, h: 0.05 }),
        (0.2f64..2.0).prop_map(|length| GeneratorSpec::Segment { length, h: 0.05 }),
        (0.01f64..3.0).prop_map(|distance| GeneratorSpec::TwoPoints { distance }),
        (0.5f64..3.0).prop_map(|length| GeneratorSpec::Suspension {
            base: Box::new(GeneratorSpec::Circle { length, h: 0.2 }),
            h: 0.2,
        }),
    ]
}

// ---------------------------------------------------------------------------
// models

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn polygon_boundaries_are_extremal(n in 3usize..9, rotation in 0.0f64..1.0) {
        let model = polygon(&regular_polygon_vertices(n, 1.0, rotation), 0.03, Interior::Full);
        let witness = 0.2;
        let report = extremality_check(&boundary(&model), default_angle_tol(&model.space, witness), witness).unwrap();
        prop_assert!(report.passed, "{:?}", report);
    }

    #[test]
    fn cone_vertex_is_extremal_iff_the_angle_is_at_most_pi(theta in 1.0f64..PI, wide in 1.3f64..1.9) {
        let witness = 0.3;
        for (angle, expected) in [(theta, true), (wide * PI, false)] {
            let cone = gen_cone(angle, 1.0, 0.03).unwrap();
            let vertex = Subset::named(&cone.space, "vertex", None).unwrap();
            let report = extremality_check(&vertex, default_angle_tol(&cone.space, witness), witness).unwrap();
            prop_assert_eq!(report.passed, expected, "θ = {}: {:?}", angle, report);
        }
    }
}

// ---------------------------------------------------------------------------
// strainers

fn check_masks(n: usize, d1: f64, d2: f64, l1: f64, l2: f64) -> Result<(), TestCaseError> {
    let model = polygon(&regular_polygon_vertices(n, 0.5, 0.0), 0.04, Interior::Full);
    let whole = Subset::whole(&model.space, None).unwrap();
    let (dlo, dhi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
    let (llo, lhi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
    let radius = 0.3;
    let mask = |k, delta, ell| classify(&whole, k, delta, ell, radius).unwrap();
    for k in [1, 2] {
        let base = mask(k, dhi, llo);
        for w in &base.witnesses {
            let (ok, _) = is_strainer(&model.space, w.base, &w.pairs, dhi).unwrap();
            prop_assert!(ok && w.length > llo);
        }
        let subset_of = |a: &[PointId], b: &[PointId]| a.iter().all(|x| b.binary_search(x).is_ok());
        prop_assert!(subset_of(&mask(k, dlo, llo).member_ids, &base.member_ids));
        prop_assert!(subset_of(&mask(k, dhi, lhi).member_ids, &base.member_ids));
        if k == 2 {
            prop_assert!(subset_of(&base.member_ids, &mask(1, dhi, llo).member_ids));
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn masks_are_consistent_and_monotone(
        n in 3usize..8, d1 in 0.02f64..0.3, d2 in 0.02f64..0.3, l1 in 0.03f64..0.15, l2 in 0.03f64..0.15,
    ) {
        check_masks(n, d1, d2, l1, l2)?;
    }
}

#[test]
fn masks_stay_monotone_where_a_wider_pool_misleads_the_beam() {
    check_masks(6, 0.02, 0.02, 0.119_988_977_326_401_01, 0.101_539_270_001_390_49).unwrap();
}

#[test]
fn strainer_number_matches_packing_dimension() {
    let models: Vec<(&str, Model)> = vec![
        ("segment", GeneratorSpec::Segment { length: 1.0, h: 0.01 }.generate().unwrap()),
        ("circle", GeneratorSpec::Circle { length: 3.0, h: 0.01 }.generate().unwrap()),
        ("two points", GeneratorSpec::TwoPoints { distance: 1.0 }.generate().unwrap()),
        ("hexagon boundary", polygon(&regular_polygon_vertices(6, 1.0, 0.0), 0.01, Interior::None)),
        ("square boundary", polygon(&square_vertices(1.0), 0.02, Interior::Full)),
        ("cone", gen_cone(PI, 1.0, 0.02).unwrap()),
        ("pillow", GeneratorSpec::Pillow { side: 1.0, h: 0.025 }.generate().unwrap()),
    ];
    for (label, model) in &models {
        let h = model.space.resolution.unwrap_or(0.01);
        let link = Some(3.0 * h);
        let sub = match &model.annotation.marked_subset {
            Some(name) if model.space.subset_spec(name).unwrap().indices.len() > 1 => {
                Subset::named(&model.space, name, link).unwrap()
            }
            _ => Subset::whole(&model.space, link).unwrap(),
        };
        let number = strainer_number(&sub, 0.1, 0.1).unwrap() as f64;
        let grid: Vec<f64> = (0..5).map(|i| 2.0 * h * 10f64.powf(i as f64 / 4.0)).collect();
        let dim = packing_dimension_estimate(&model.space, sub.indices(), &grid).unwrap().slope;
        assert!((number - dim).abs() <= 0.2, "{label}: strainer number {number}, packing dimension {dim}");
    }
}

#[test]
fn unstrained_mass_shrinks_with_the_length_bound() {
    let models = [
        polygon(&regular_polygon_vertices(6, 1.0, 0.0), 0.005, Interior::None),
        polygon(&square_vertices(1.0), 0.005, Interior::None),
    ];
    for model in &models {
        let sub = boundary(model);
        let values: Vec<f64> =
            [0.08, 0.04, 0.02].iter().map(|&ell| unstrained_mass(&sub, 1, 1, 0.1, ell, 0.02).unwrap().value).collect();
        assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
    }
}

// ---------------------------------------------------------------------------
// charts

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn chart_components_are_one_lipschitz(n in 5usize..12, rotation in 0.0f64..1.0, start in 0usize..1000) {
        let model = polygon(&regular_polygon_vertices(n, 1.0, rotation), 0.01, Interior::None);
        let sub = boundary(&model);
        let base = sub.indices()[start % sub.len()];
        let Some(strainer) = alexkit::strainers::find_strainer(&model.space, base, 1, 0.3, 0.1, 0.3).unwrap() else {
            return Ok(());
        };
        let chart = build_chart(&sub, &strainer, 0.1).unwrap();
        for (i, &x) in chart.region.iter().enumerate() {
            for (j, &y) in chart.region.iter().enumerate() {
                for c in 0..chart.k() {
                    let (u, v, d) = (chart.values[i][c], chart.values[j][c], model.space.dist(x, y));
                    // Stored distances are rounded, so the bound holds to a few ulps of the operands.
                    let ulps = 4.0 * f64::EPSILON * u.max(v);
                    prop_assert!((u - v).abs() <= d + ulps, "{} {}: excess {}", x, y, (u - v).abs() - d);
                }
            }
        }
    }
}

#[test]
fn flat_chart_has_identical_metric_statistics() {
    let model = polygon(&square_vertices(1.0), 0.01, Interior::None);
    let sub = boundary(&model);
    let base = sub.indices()[50];
    let strainer = alexkit::strainers::find_strainer(&model.space, base, 1, 0.1, 0.1, 0.3).unwrap().unwrap();
    let chart = build_chart(&sub, &strainer, 0.1).unwrap();
    let (e, i) = (&chart.extrinsic, &chart.intrinsic);
    assert!((e.lip - i.lip).abs() <= 1e-12 && (e.colip - i.colip).abs() <= 1e-12);
    for (a, b) in e.quantiles.iter().zip(&i.quantiles) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn intrinsic_geodesics_of_marked_subsets_are_quasigeodesics() {
    let hexagon = polygon(&regular_polygon_vertices(6, 1.0, 0.3), 0.02, Interior::Full);
    let segment = GeneratorSpec::Segment { length: 1.0, h: 0.01 }.generate().unwrap();
    let circle = GeneratorSpec::Circle { length: 5.0, h: 0.02 }.generate().unwrap();
    let cases: Vec<(&Model, Vec<PointId>)> = vec![
        (&hexagon, interior_ids(&hexagon).into_iter().step_by(97).take(8).collect()),
        (&segment, vec![0, 100]),
        (&circle, vec![200, 230]),
    ];
    for (model, viewpoints) in cases {
        let h = model.space.resolution.unwrap();
        let sub = match model.annotation.marked_subset.as_deref() {
            Some(name) => Subset::named(&model.space, name, Some(1.2 * h)).unwrap(),
            None => Subset::whole(&model.space, Some(1.2 * h)).unwrap(),
        };
        let ids = sub.indices();
        let (a, b) = (ids[5], ids[ids.len() * 2 / 5]);
        let path = sub.intrinsic_path(a, b).unwrap().unwrap();
        let curve = Curve::new(path, h, CurveKind::IntrinsicGeodesic);
        for &p in &viewpoints {
            let v = quasigeodesic_check(&model.space, &curve, p).unwrap().max_violation;
            assert!(v <= 1e-6 + 4.0 * h, "{}: viewpoint {p}: violation {v}", model.space.name);
        }
    }
}

// ---------------------------------------------------------------------------
// flow

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gradient_curves_ascend_and_repeat(qx in 0.1f64..0.9, qy in 0.1f64..0.9, start in 0usize..10_000) {
        let h = 0.04;
        let model = polygon(&square_vertices(1.0), h, Interior::Full);
        let space = &model.space;
        let q = (0..space.len()).min_by(|&a, &b| {
            let d = |i: PointId| { let c = space.coords().unwrap().get(i); (c[0] - qx).hypot(c[1] - qy) };
            d(a).total_cmp(&d(b))
        }).unwrap();
        let x0 = start % space.len();
        prop_assume!(x0 != q);
        let cfg = FlowConfig::with_step(2.0 * h);
        let curve = gradient_curve(space, q, x0, &cfg).unwrap();
        for w in curve.curve.points.windows(2) {
            let gain = space.dist(q, w[1]) - space.dist(q, w[0]);
            prop_assert!(gain >= cfg.stop_threshold * cfg.step * 0.5, "gain {}", gain);
        }
        prop_assert_eq!(&gradient_curve(space, q, x0, &cfg).unwrap(), &curve);
        let sub = boundary(&model);
        let starts: Vec<PointId> = sub.indices().iter().copied().step_by(7).collect();
        let report = extremal_invariance_test(&sub, q, &starts, &cfg).unwrap();
        prop_assert!(report.max_deviation <= 3.0 * h, "{}", report.max_deviation);
    }
}

// ---------------------------------------------------------------------------
// glue

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nets_are_maximal_and_discrete(points in cloud(80), scale in 4.0f64..12.0) {
        let h = 0.02;
        let space = planar(&points).with_resolution(h);
        let sub = Subset::whole(&space, Some(3.0 * h)).unwrap();
        let r = scale * h;
        let net = discrete_net(&sub, r).unwrap();
        for (i, &a) in net.iter().enumerate() {
            for &b in &net[i + 1..] {
                prop_assert!(space.dist(a, b) > r / 2.0);
            }
        }
        for x in space.ids() {
            prop_assert!(net.iter().any(|&c| space.dist(x, c) <= r / 2.0));
        }
    }
}

#[test]
fn cross_space_distortion_vanishes_with_the_family_parameter() {
    let h = 0.01;
    let e = polygon(&regular_polygon_vertices(40, 1.0, 0.0), h, Interior::None);
    let se = boundary(&e);
    let identity: BTreeMap<PointId, PointId> = se.indices().iter().map(|&x| (x, x)).collect();
    let base = cross_space_almost_isometry(&se, &se, &identity, 1, 0.5, 0.4, 0.1).unwrap().distortion;
    let distortions: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&t| {
            let f = polygon(&regular_polygon_vertices(40, 1.0 + t, 0.0), h, Interior::None);
            let sf = boundary(&f);
            let g: BTreeMap<PointId, PointId> = arc_length_pairing(&e, &f).unwrap().into_iter().collect();
            cross_space_almost_isometry(&se, &sf, &g, 1, 0.5, 0.4, 0.1).unwrap().distortion - base
        })
        .collect();
    assert!(distortions.windows(2).all(|w| w[1] < w[0]), "{distortions:?}");
}
