use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use proptest::prelude::*;

use spc_core::cloud::save_cloud;
use spc_core::dataset::{
    all_proportions, build_benchmark, build_mix, class_proportions, enumerate_experiments, export_dataset,
    export_scene, import_scene, partition_blocks, scene_labels, synthetic_count, DatasetError, ExperimentPlan,
    SceneEntry, Source,
};
use spc_core::{PointCloud, PointRecord, Rgb, SemanticClass, Vec3};

fn pool(prefix: &str, n: usize, source: Source) -> Vec<SceneEntry> {
    (0..n)
        .map(|i| SceneEntry { id: format!("{prefix}{i:02}"), source, path: PathBuf::from("unused"), point_count: 1 })
        .collect()
}

fn labeled_cloud() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(
        ((-20.0f64..20.0, -20.0f64..20.0, 0.0f64..3.0), any::<[u8; 3]>(), prop::option::of(0usize..8)),
        1..400,
    )
    .prop_map(|pts| {
        let points = pts
            .into_iter()
            .map(|((x, y, z), c, l)| PointRecord {
                label: l.map(|i| SemanticClass::ALL[i]),
                ..PointRecord::new(Vec3::new(x, y, z)).with_color(Rgb(c))
            })
            .collect();
        PointCloud::from_points(points)
    })
}

fn key(p: &PointRecord) -> (u64, u64, u64, [u8; 3], SemanticClass) {
    (
        p.position.x.to_bits(),
        p.position.y.to_bits(),
        p.position.z.to_bits(),
        p.color.0,
        p.label.unwrap_or(SemanticClass::Clutter),
    )
}

fn multiset(cloud: &PointCloud) -> BTreeMap<(u64, u64, u64, [u8; 3], SemanticClass), usize> {
    let mut m = BTreeMap::new();
    for p in &cloud.points {
        *m.entry(key(p)).or_insert(0) += 1;
    }
    m
}

#[test]
fn counts_for_the_standard_total() {
    let expect = [0, 2, 4, 7, 9, 11, 13, 15, 18, 20, 22, 24, 26, 29, 31, 33, 35, 37, 40, 42, 44];
    let got: Vec<usize> = all_proportions().into_iter().map(|p| synthetic_count(p, 44)).collect();
    assert_eq!(got, expect);
}

#[test]
fn enumeration_shape_and_benchmark_twins() {
    let real = pool("r", 50, Source::Real);
    let syn = pool("s", 50, Source::Synthetic);
    let plans = enumerate_experiments(&real, &syn, 44, 3, 9).unwrap();
    let mixes: Vec<_> = plans.iter().filter_map(|p| if let ExperimentPlan::Mix(m) = p { Some(m) } else { None }).collect();
    let benches: Vec<_> = plans.iter().filter_map(|p| if let ExperimentPlan::Benchmark(b) = p { Some(b) } else { None }).collect();
    assert_eq!((mixes.len(), benches.len()), (63, 57));
    for b in benches {
        let parent = mixes.iter().find(|m| m.name() == b.derived_from).unwrap();
        assert_eq!(b.real_picks, parent.real_picks);
        assert!(b.synthetic_picks.is_empty());
    }
    assert_eq!(plans, enumerate_experiments(&real, &syn, 44, 3, 9).unwrap());
}

#[test]
fn exhausted_pool_is_named() {
    let err = build_mix(&pool("r", 10, Source::Real), &pool("s", 50, Source::Synthetic), 5, 44, 0, 0).unwrap_err();
    assert!(matches!(err, DatasetError::PoolExhausted { pool: "real", needed: 42, available: 10 }), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mix_counts_and_disjoint_picks(total in 1usize..60, seed in any::<u64>(), rep in 0u32..3) {
        let real = pool("r", 60, Source::Real);
        let syn = pool("s", 60, Source::Synthetic);
        let mut last = 0;
        for p in all_proportions() {
            let m = build_mix(&real, &syn, p, total, seed, rep).unwrap();
            let n_syn = (p as usize * total + 50) / 100;
            prop_assert_eq!(m.synthetic_picks.len(), n_syn);
            prop_assert_eq!(m.synthetic_picks.len() + m.real_picks.len(), total);
            prop_assert!(m.synthetic_picks.len() >= last);
            last = m.synthetic_picks.len();
            let mut ids: Vec<&String> = m.synthetic_picks.iter().chain(&m.real_picks).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), total);
            if p > 0 && p < 100 {
                prop_assert_eq!(build_benchmark(&m).unwrap().real_picks, m.real_picks);
            } else {
                prop_assert!(build_benchmark(&m).is_err());
            }
        }
    }

    #[test]
    fn blocks_sample_their_own_cells(cloud in labeled_cloud(), size in 0.5f64..5.0, per in 1usize..64, seed in any::<u64>()) {
        let blocks = partition_blocks(&cloud, size, per, seed).unwrap();
        let min_x = cloud.points.iter().map(|p| p.position.x).fold(f64::INFINITY, f64::min);
        let min_y = cloud.points.iter().map(|p| p.position.y).fold(f64::INFINITY, f64::min);
        let cell = |p: &PointRecord| {
            (((p.position.x - min_x) / size).floor() as i64, ((p.position.y - min_y) / size).floor() as i64)
        };
        let mut occupied: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for p in &cloud.points {
            *occupied.entry(cell(p)).or_insert(0) += 1;
        }
        prop_assert_eq!(blocks.len(), occupied.len());
        for b in &blocks {
            prop_assert_eq!(b.points.len(), per);
            let members = occupied[&b.cell];
            let mut distinct = b.source_indices.clone();
            distinct.sort_unstable();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), members.min(per));
            for (&i, p) in b.source_indices.iter().zip(&b.points) {
                prop_assert_eq!(&cloud.points[i], p);
                prop_assert!(p.position.x >= b.origin.x - 1e-9 && p.position.x < b.origin.x + size + 1e-9);
                prop_assert!(p.position.y >= b.origin.y - 1e-9 && p.position.y < b.origin.y + size + 1e-9);
            }
        }
        prop_assert_eq!(&blocks, &partition_blocks(&cloud, size, per, seed).unwrap());
    }

    #[test]
    fn export_round_trips_points_colors_and_labels(cloud in labeled_cloud()) {
        let dir = tempfile::tempdir().unwrap();
        export_scene(&cloud, "s", dir.path()).unwrap();
        let back = import_scene(&dir.path().join("s")).unwrap();
        prop_assert_eq!(multiset(&back), multiset(&cloud));
        let labels = scene_labels(&dir.path().join("s")).unwrap();
        let expect: Vec<SemanticClass> = cloud.points.iter().map(|p| p.label.unwrap_or(SemanticClass::Clutter)).collect();
        prop_assert_eq!(labels, expect);
    }

    #[test]
    fn proportions_sum_to_one_hundred(cloud in labeled_cloud()) {
        let p = class_proportions(&cloud).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 100.0).abs() < 0.01);
    }
}

#[test]
fn dataset_export_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = Vec::new();
    for (i, source) in [Source::Real, Source::Synthetic].into_iter().enumerate() {
        let cloud = PointCloud::from_points(
            (0..50)
                .map(|k| {
                    PointRecord::new(Vec3::new(k as f64 * 0.1, i as f64, 0.5))
                        .with_label(SemanticClass::ALL[k % 3])
                        .with_color(Rgb([k as u8, 1, 2]))
                })
                .collect(),
        );
        let path = dir.path().join(format!("c{i}.txt"));
        save_cloud(&cloud, &path).unwrap();
        entries.push(SceneEntry::from_file(format!("c{i}"), source, &path).unwrap());
    }
    let plan = build_mix(&entries[..1], &entries[1..], 50, 2, 3, 0).unwrap();
    let plan = ExperimentPlan::Mix(plan);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let files_a = export_dataset(&plan, &entries, &a).unwrap();
    export_dataset(&plan, &entries, &b).unwrap();
    assert!(files_a.iter().any(|f| f.ends_with("plan.toml")));
    for f in &files_a {
        let rel = f.strip_prefix(&a).unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(b.join(rel)).unwrap(), "{}", rel.display());
    }
    assert!(a.join("c0/Annotations/ceiling_1.txt").exists());
    assert!(a.join("c1/c1.txt").exists());
}
