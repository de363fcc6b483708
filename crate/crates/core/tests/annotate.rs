use proptest::prelude::*;

use spc_core::annotate::sampling::largest_remainder;
use spc_core::annotate::{
    sample_component_clouds, transfer_colors, transfer_labels, ComponentCloud, KdTree, RigidTransform,
};
use spc_core::fixtures::closed_cube;
use spc_core::{PointCloud, PointRecord, Rgb, SemanticClass, Vec3};

fn brute_nearest(points: &[Vec3], q: Vec3) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = q.distance_squared(*p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn vec3() -> impl Strategy<Value = Vec3> {
    (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

/// Coarse lattice points, so exact distance ties are common.
fn lattice() -> impl Strategy<Value = Vec3> {
    (-3i32..3, -3i32..3, -3i32..3).prop_map(|(x, y, z)| Vec3::new(f64::from(x), f64::from(y), f64::from(z)))
}

fn component(class: SemanticClass, color: Rgb, pts: &[Vec3]) -> ComponentCloud {
    ComponentCloud {
        component_id: class.name().to_string(),
        class,
        color,
        cloud: PointCloud::from_points(pts.iter().map(|&p| PointRecord::new(p).with_label(class).with_color(color)).collect()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn kdtree_matches_linear_scan(pts in prop::collection::vec(vec3(), 1..400), qs in prop::collection::vec(vec3(), 1..50)) {
        let tree = KdTree::new(pts.clone());
        for q in qs {
            prop_assert_eq!(tree.nearest(q), Some(brute_nearest(&pts, q)));
        }
    }

    #[test]
    fn kdtree_breaks_ties_to_the_lowest_index(pts in prop::collection::vec(lattice(), 1..300), qs in prop::collection::vec(lattice(), 1..30)) {
        let tree = KdTree::new(pts.clone());
        for q in qs {
            prop_assert_eq!(tree.nearest(q), Some(brute_nearest(&pts, q)));
        }
    }

    #[test]
    fn label_transfer_matches_brute_force(
        comps in prop::collection::vec(prop::collection::vec(vec3(), 1..60), 1..5),
        src in prop::collection::vec(vec3(), 1..300),
        t in 0.01f64..1.0,
    ) {
        let clouds: Vec<ComponentCloud> = comps
            .iter()
            .enumerate()
            .map(|(i, pts)| component(SemanticClass::ALL[i], Rgb([i as u8 * 40, 7, 9]), pts))
            .collect();
        let targets: Vec<Vec3> = comps.iter().flatten().copied().collect();
        let owner: Vec<usize> = comps.iter().enumerate().flat_map(|(i, c)| std::iter::repeat_n(i, c.len())).collect();
        let source = PointCloud::from_points(src.iter().map(|&p| PointRecord::new(p).with_color(Rgb([1, 2, 3]))).collect());
        let out = transfer_labels(&source, &clouds, t).unwrap();
        prop_assert_eq!(out.len(), source.len());
        for (p, q) in source.points.iter().zip(&out.points) {
            prop_assert_eq!(p.position, q.position);
            let (j, d2) = brute_nearest(&targets, p.position);
            if d2.sqrt() < t {
                prop_assert_eq!(q.label, Some(clouds[owner[j]].class));
                prop_assert_eq!(q.color, clouds[owner[j]].color);
            } else {
                prop_assert_eq!(q.label, Some(SemanticClass::Clutter));
                prop_assert_eq!(q.color, p.color);
            }
        }
    }

    #[test]
    fn color_transfer_leaves_labels_and_geometry(
        refs in prop::collection::vec(vec3(), 1..200),
        src in prop::collection::vec(vec3(), 1..200),
        t in 0.01f64..1.0,
        angle in -3.0f64..3.0,
    ) {
        let reference = PointCloud::from_points(
            refs.iter().enumerate().map(|(i, &p)| PointRecord::new(p).with_color(Rgb([i as u8, 0, 255]))).collect(),
        );
        let source = PointCloud::from_points(
            src.iter().map(|&p| PointRecord::new(p).with_label(SemanticClass::Wall).with_color(Rgb([9, 9, 9]))).collect(),
        );
        let tf = RigidTransform::rotation_z(angle, Vec3::new(0.5, -0.25, 0.0));
        let out = transfer_colors(&source, &reference, t, Some(&tf)).unwrap();
        // The transform maps reference points into the source frame.
        let moved: Vec<Vec3> = refs.iter().map(|&p| tf.apply(p)).collect();
        for (p, q) in source.points.iter().zip(&out.points) {
            prop_assert_eq!(p.position, q.position);
            prop_assert_eq!(p.label, q.label);
            let (j, d2) = brute_nearest(&moved, p.position);
            if d2.sqrt() < t - 1e-9 {
                prop_assert_eq!(q.color, reference.points[j].color);
            } else if d2.sqrt() >= t + 1e-9 {
                prop_assert_eq!(q.color, p.color);
            }
        }
    }

    #[test]
    fn largest_remainder_sums_to_total(w in prop::collection::vec(0.0f64..10.0, 1..40), total in 0usize..5000) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let parts = largest_remainder(&w, total);
        prop_assert_eq!(parts.iter().sum::<usize>(), total);
        let sum: f64 = w.iter().sum();
        for (k, wi) in parts.iter().zip(&w) {
            let quota = total as f64 * wi / sum;
            prop_assert!((*k as f64 - quota).abs() < 1.0 + 1e-9);
        }
    }
}

#[test]
fn distance_equal_to_threshold_is_clutter() {
    let comps = [component(SemanticClass::Wall, Rgb([200, 0, 0]), &[Vec3::new(0.0, 0.0, 0.0)])];
    let source = PointCloud::from_points(vec![
        PointRecord::new(Vec3::new(0.5, 0.0, 0.0)),
        PointRecord::new(Vec3::new(0.25, 0.0, 0.0)),
    ]);
    let out = transfer_labels(&source, &comps, 0.5).unwrap();
    assert_eq!(out.points[0].label, Some(SemanticClass::Clutter));
    assert_eq!(out.points[1].label, Some(SemanticClass::Wall));
}

#[test]
fn component_samples_cover_surfaces_at_density() {
    let scene = closed_cube(4.0);
    let clouds = sample_component_clouds(&scene, 100.0, 3);
    assert_eq!(clouds.len(), scene.components.len());
    for (c, comp) in clouds.iter().zip(&scene.components) {
        let expect = (100.0 * comp.mesh.area()).round() as usize;
        assert_eq!(c.cloud.len(), expect, "{}", c.component_id);
        assert!(c.cloud.points.iter().all(|p| p.label == Some(comp.class) && p.color == comp.color));
    }
    assert_eq!(clouds, sample_component_clouds(&scene, 100.0, 3));
}
