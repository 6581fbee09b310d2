use std::collections::BTreeMap;

use proptest::prelude::*;

use macroreg::binning::{build_lookup_table, LookupTable, ValueKind};
use macroreg::descriptor::{compute_all_descriptors, neighbor_angle, Descriptor64, DescriptorFields};
use macroreg::matching::{hamming_distance, match_descriptors, KIND_MISMATCH};
use macroreg::reconstruction::{back_project, fit_line_3d, join_segments, project, CameraIntrinsics, Point2, Segment2D};
use macroreg::registration::rigid_fit;
use macroreg::scenegen::{generate_observed, generate_reference, Layout, SceneSpec, MIN_SEPARATION};
use macroreg::{FeatureKind, FeatureSet, MacroFeature, Point3, RigidTransform, Vector3};

fn coord() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

fn point() -> impl Strategy<Value = Point3> {
    (coord(), coord(), coord()).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn transform() -> impl Strategy<Value = RigidTransform> {
    (
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_filter("axis", |(x, y, z)| x * x + y * y + z * z > 1e-3),
        -std::f64::consts::PI..std::f64::consts::PI,
        (coord(), coord(), coord()),
    )
        .prop_map(|((ax, ay, az), angle, (tx, ty, tz))| {
            RigidTransform::from_axis_angle(&Vector3::new(ax, ay, az), angle, Vector3::new(tx, ty, tz))
        })
}

fn kind() -> impl Strategy<Value = FeatureKind> {
    prop_oneof![Just(FeatureKind::Door), Just(FeatureKind::Window)]
}

fn feature_set(min: usize, max: usize) -> impl Strategy<Value = FeatureSet> {
    prop::collection::vec((point(), kind()), min..max).prop_map(|items| {
        let features = items
            .into_iter()
            .enumerate()
            .map(|(i, (p, k))| MacroFeature::new(i as u64, k, p).unwrap())
            .collect();
        FeatureSet::new(features).unwrap()
    })
}

fn fixed_tables() -> (LookupTable, LookupTable) {
    let dist = LookupTable::from_boundaries(ValueKind::Distance, (1..40).map(|i| i as f64 * 2.5).collect()).unwrap();
    let angle = LookupTable::from_boundaries(ValueKind::Angle, (1..30).map(|i| i as f64 * 0.1).collect()).unwrap();
    (dist, angle)
}

fn descriptor() -> impl Strategy<Value = Descriptor64> {
    any::<u64>().prop_map(Descriptor64)
}

fn linear_quantize(boundaries: &[f64], x: f64) -> u8 {
    boundaries.iter().filter(|&&b| b <= x).count() as u8
}

proptest! {
    #[test]
    fn transforms_preserve_distances(t in transform(), p in point(), q in point()) {
        let d0 = (p - q).norm();
        let d1 = (t.apply(&p) - t.apply(&q)).norm();
        prop_assert!((d0 - d1).abs() < 1e-9);
        prop_assert!(t.deviation() < 1e-9);
    }

    #[test]
    fn inverse_and_compose_agree(a in transform(), b in transform(), p in point()) {
        let ab = a.compose(&b);
        prop_assert!((ab.apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-9);
        prop_assert!((a.inverse().apply(&a.apply(&p)) - p).norm() < 1e-9);
        prop_assert!(ab.deviation() < 1e-9);
    }

    #[test]
    fn knn_matches_exhaustive_sort(set in feature_set(1, 80), q in point(), k in 1usize..10) {
        let mut oracle: Vec<(f64, u64)> = set.iter().map(|f| ((f.centroid() - q).norm_squared(), f.id)).collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got: Vec<u64> = set.knn(&q, k).unwrap().iter().map(|n| n.feature.id).collect();
        let want: Vec<u64> = oracle.iter().take(k).map(|(_, id)| *id).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn quantize_is_monotone_and_matches_scan(
        raw in prop::collection::vec(-100.0..100.0f64, 0..30),
        xs in prop::collection::vec(-120.0..120.0f64, 2..20),
    ) {
        let mut b = raw;
        b.sort_by(f64::total_cmp);
        b.dedup();
        let table = LookupTable::from_boundaries(ValueKind::Distance, b.clone()).unwrap();
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        let bins: Vec<u8> = xs.iter().map(|&x| table.quantize(x)).collect();
        prop_assert!(bins.windows(2).all(|w| w[0] <= w[1]));
        for (&x, &bin) in xs.iter().zip(&bins) {
            prop_assert_eq!(bin, linear_quantize(&b, x));
            prop_assert!((bin as usize) < table.bin_count());
        }
    }

    #[test]
    fn trained_tables_cover_their_samples(values in prop::collection::vec(0.0..30.0f64, 2..200)) {
        prop_assume!(values.iter().any(|&v| v != values[0]));
        let table = build_lookup_table(&values, ValueKind::Distance).unwrap();
        prop_assert!(table.bin_count() <= 255);
        for v in &values {
            prop_assert!((table.quantize(*v) as usize) < table.bin_count());
        }
        prop_assert_eq!(build_lookup_table(&values, ValueKind::Distance).unwrap(), table);
    }

    #[test]
    fn packing_round_trips(k in kind(), a0 in 0u8..128, a in any::<[u8; 3]>(), d in any::<[u8; 4]>()) {
        let fields = DescriptorFields { kind: k, angles: [a0, a[0], a[1], a[2]], distances: d };
        let packed = Descriptor64::pack(&fields).unwrap();
        prop_assert_eq!(packed.unpack(), fields);
        prop_assert_eq!(packed.to_string().parse::<Descriptor64>().unwrap(), packed);
        prop_assert_eq!(packed.kind(), k);
    }

    #[test]
    fn neighbor_angle_symmetric_and_scale_free(
        a in point(), b in point(), s in 0.01..100.0f64, r in 0.01..100.0f64,
    ) {
        prop_assume!(a.coords.norm() > 1e-3 && b.coords.norm() > 1e-3);
        let ab = neighbor_angle(&a.coords, &b.coords).unwrap();
        prop_assert_eq!(ab, neighbor_angle(&b.coords, &a.coords).unwrap());
        let scaled = neighbor_angle(&(a.coords * s), &(b.coords * r)).unwrap();
        prop_assert!((ab - scaled).abs() < 1e-7);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&ab));
    }

    #[test]
    fn descriptors_are_rigidly_invariant(set in feature_set(10, 30), t in transform()) {
        let (dist, angle) = fixed_tables();
        let moved = FeatureSet::new(set.iter().map(|f| f.transformed(&t)).collect()).unwrap();
        let before = compute_all_descriptors(&set, &dist, &angle);
        let after = compute_all_descriptors(&moved, &dist, &angle);
        prop_assert!(before.skipped.is_empty());
        prop_assert_eq!(before.descriptors, after.descriptors);
    }

    #[test]
    fn hamming_is_a_metric_within_a_kind(a in descriptor(), b in descriptor(), c in descriptor()) {
        prop_assert_eq!(hamming_distance(a, b), hamming_distance(b, a));
        let same = |d: Descriptor64| Descriptor64(d.0 & !Descriptor64::KIND_BIT);
        let (a, b, c) = (same(a), same(b), same(c));
        prop_assert!(hamming_distance(a, c) <= hamming_distance(a, b) + hamming_distance(b, c));
        prop_assert_eq!(hamming_distance(a, b) == 0, a == b);
        prop_assert_eq!(hamming_distance(a, Descriptor64(b.0 | Descriptor64::KIND_BIT)), KIND_MISMATCH);
    }

    #[test]
    fn matching_agrees_with_double_loop(
        observed in prop::collection::btree_map(0u64..1000, any::<u64>(), 1..30),
        reference in prop::collection::btree_map(0u64..1000, any::<u64>(), 1..60),
    ) {
        let observed: BTreeMap<u64, Descriptor64> = observed.into_iter().map(|(k, v)| (k, Descriptor64(v))).collect();
        let reference: BTreeMap<u64, Descriptor64> = reference.into_iter().map(|(k, v)| (k, Descriptor64(v))).collect();
        let got = match_descriptors(&observed, &reference, 63).unwrap();
        let mut want = Vec::new();
        for (&oid, &od) in &observed {
            let dists: Vec<(u64, u32)> = reference.iter().map(|(&rid, &rd)| (rid, hamming_distance(od, rd))).collect();
            let best = dists.iter().map(|d| d.1).min().unwrap();
            let winners: Vec<_> = dists.iter().filter(|d| d.1 == best).collect();
            if winners.len() == 1 && best < 64 {
                want.push((oid, winners[0].0, best));
            }
        }
        let got: Vec<_> = got.iter().map(|c| (c.observed_id, c.reference_id, c.hamming)).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn rigid_fit_recovers_any_motion(t in transform(), pts in prop::collection::vec(point(), 4..20)) {
        let dest: Vec<Point3> = pts.iter().map(|p| t.apply(p)).collect();
        if let Ok(fit) = rigid_fit(&pts, &dest, &vec![1.0; pts.len()]) {
            prop_assert!(fit.deviation() < 1e-9);
            prop_assert!((fit.rotation().determinant() - 1.0).abs() < 1e-9);
            for (p, q) in pts.iter().zip(&dest) {
                prop_assert!((fit.apply(p) - q).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn rigid_fit_follows_a_left_motion(
        t in transform(), g in transform(), pts in prop::collection::vec(point(), 5..15),
    ) {
        let dest: Vec<Point3> = pts.iter().map(|p| t.apply(p)).collect();
        let moved: Vec<Point3> = dest.iter().map(|p| g.apply(p)).collect();
        let w = vec![1.0; pts.len()];
        if let (Ok(a), Ok(b)) = (rigid_fit(&pts, &dest, &w), rigid_fit(&pts, &moved, &w)) {
            let expected = g.compose(&a);
            prop_assert!(b.rotation_angle_to(&expected) < 1e-8);
            prop_assert!((b.translation() - expected.translation()).norm() < 1e-7);
        }
    }

    #[test]
    fn back_projection_inverts_projection(u in 0.0..640.0f64, v in 0.0..480.0f64, d in 0.1..50.0f64) {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap();
        let p = back_project(&Point2::new(u, v), d, &k).unwrap();
        let q = project(&p, &k).unwrap();
        prop_assert!((q.x - u).abs() < 1e-9 && (q.y - v).abs() < 1e-9);
    }

    #[test]
    fn joining_is_idempotent(
        raw in prop::collection::vec((0.0..200.0f64, 0.0..200.0f64, -20.0..20.0f64, -60.0..60.0f64), 0..15),
    ) {
        let segs: Vec<Segment2D> = raw
            .into_iter()
            .filter_map(|(x, y, dx, dy)| Segment2D::new(Point2::new(x, y), Point2::new(x + dx, y + dy)).ok())
            .collect();
        let once = join_segments(&segs, 2.0, 10.0);
        prop_assert_eq!(join_segments(&once, 2.0, 10.0), once.clone());
        prop_assert!(once.len() <= segs.len());
    }

    #[test]
    fn second_line_pass_never_fits_worse(
        ts in prop::collection::vec(-5.0..5.0f64, 10..40),
        noise in prop::collection::vec((-0.2..0.2f64, -0.2..0.2f64), 40),
    ) {
        let dir = Vector3::new(0.3, -0.5, 0.8).normalize();
        let pts: Vec<Point3> = ts
            .iter()
            .zip(&noise)
            .map(|(&t, &(a, b))| Point3::new(1.0, 2.0, 3.0) + dir * t + Vector3::new(a, b, 0.0))
            .collect();
        let line = match fit_line_3d(&pts, 0.05) {
            Ok(l) => l,
            Err(_) => return Ok(()),
        };
        let first = fit_line_3d(&pts, f64::INFINITY).unwrap();
        let survivors: Vec<&Point3> = pts.iter().filter(|p| first.distance(p) <= 0.05).collect();
        let residual = |l: &macroreg::reconstruction::Line3D| survivors.iter().map(|p| l.distance(p).powi(2)).sum::<f64>();
        prop_assert!(residual(&line) <= residual(&first) + 1e-12);
        prop_assert!((line.direction.norm() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scenes_are_pure_functions_of_the_spec(
        seed in any::<u64>(), noise in 0.0..0.2f64, dropout in 0.0..0.5f64, spurious in 0.0..0.5f64,
        layout in prop_oneof![Just(Layout::Corridor), Just(Layout::Grid), Just(Layout::Ring)],
    ) {
        let spec = SceneSpec {
            layout,
            extent: Vector3::new(40.0, 20.0, 3.0),
            noise_sigma: noise,
            dropout_rate: dropout,
            spurious_rate: spurious,
            rng_seed: seed,
            ..SceneSpec::default()
        };
        let reference = generate_reference(&spec).unwrap();
        prop_assert_eq!(&generate_reference(&spec).unwrap(), &reference);
        let (observed, truth) = generate_observed(&reference, &spec).unwrap();
        prop_assert_eq!(&generate_observed(&reference, &spec).unwrap().0, &observed);
        for f in observed.iter().filter(|f| reference.get(f.id).is_none()) {
            let at = truth.apply(f.centroid());
            prop_assert!(reference.iter().all(|r| (r.centroid() - at).norm() >= MIN_SEPARATION));
        }
    }
}
