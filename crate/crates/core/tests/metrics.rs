use std::collections::BTreeMap;

use proptest::prelude::*;

use spc_core::labels::NUM_CLASSES;
use spc_core::metrics::{
    accumulate, deviation_table, iou, mean_iou, oa7, overall_accuracy, parse_report, format_report, select_best,
    ConfusionMatrix, EvalReport,
};
use spc_core::SemanticClass;

fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
    prop::array::uniform8(prop::array::uniform8(0u64..50))
        .prop_filter("nonempty non-clutter rows", |c| c[..7].iter().flatten().sum::<u64>() > 0)
        .prop_map(|counts| ConfusionMatrix { counts })
}

fn labels(n: usize) -> impl Strategy<Value = Vec<(i64, i64)>> {
    prop::collection::vec((0i64..8, 0i64..8), 0..n)
}

/// `Σ pᵢ Aᵢ` written out term by term.
fn oa_by_proportions(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total() as f64;
    (0..NUM_CLASSES)
        .filter(|&i| cm.row_sum(i) > 0)
        .map(|i| {
            let p = cm.row_sum(i) as f64 / total;
            let a = cm.counts[i][i] as f64 / cm.row_sum(i) as f64;
            p * a
        })
        .sum()
}

fn permuted(cm: &ConfusionMatrix, perm: &[usize]) -> ConfusionMatrix {
    let mut out = ConfusionMatrix::new();
    for i in 0..NUM_CLASSES {
        for j in 0..NUM_CLASSES {
            out.counts[perm[i]][perm[j]] = cm.counts[i][j];
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn oa_is_the_proportion_weighted_accuracy(cm in matrix()) {
        let oa = overall_accuracy(&cm).unwrap();
        prop_assert!((oa - oa_by_proportions(&cm)).abs() < 1e-12);
    }

    #[test]
    fn every_fraction_is_bounded(cm in matrix()) {
        let r = EvalReport::from_confusion(&cm).unwrap();
        for v in [r.oa, r.oa7, r.miou].into_iter().chain(r.per_class_acc.into_iter().flatten()).chain(r.per_class_iou.into_iter().flatten()) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn relabeling_permutes_per_class_scores(cm in matrix(), perm in Just((0..7).collect::<Vec<usize>>()).prop_shuffle()) {
        // Non-clutter classes are shuffled among themselves so oa7 is also preserved.
        let mut perm = perm;
        perm.push(7);
        let p = permuted(&cm, &perm);
        prop_assert!((overall_accuracy(&cm).unwrap() - overall_accuracy(&p).unwrap()).abs() < 1e-12);
        prop_assert!((mean_iou(&cm).unwrap() - mean_iou(&p).unwrap()).abs() < 1e-12);
        prop_assert!((oa7(&cm).unwrap() - oa7(&p).unwrap()).abs() < 1e-12);
        for c in SemanticClass::ALL {
            let moved = SemanticClass::ALL[perm[c as usize]];
            prop_assert_eq!(iou(&cm, c).unwrap(), iou(&p, moved).unwrap());
        }
    }

    #[test]
    fn accumulation_is_additive(a in labels(300), b in labels(300)) {
        let split = |v: &[(i64, i64)]| accumulate(v.iter().map(|x| x.0), v.iter().map(|x| x.1)).unwrap();
        let mut sum = split(&a);
        sum.merge(&split(&b));
        let joined: Vec<(i64, i64)> = a.iter().chain(&b).copied().collect();
        prop_assert_eq!(split(&joined), sum);
        prop_assert_eq!(sum.total() as usize, joined.len());
    }

    #[test]
    fn wrong_clutter_only_lowers_oa(diag in prop::array::uniform7(1u64..100), clutter in 1u64..100, to in 0usize..7) {
        let mut cm = ConfusionMatrix::new();
        for (i, d) in diag.iter().enumerate() {
            cm.counts[i][i] = *d;
        }
        cm.counts[7][to] = clutter;
        prop_assert!(overall_accuracy(&cm).unwrap() < 1.0);
        prop_assert_eq!(oa7(&cm).unwrap(), 1.0);
    }
}

fn two_class() -> ConfusionMatrix {
    accumulate(
        [0, 0, 0, 0, 1, 1, 1, 1, 1, 1],
        [0, 0, 0, 1, 0, 0, 1, 1, 1, 1],
    )
    .unwrap()
}

#[test]
fn two_class_worked_example() {
    let cm = two_class();
    assert_eq!(cm.counts[0][..2], [3, 1]);
    assert_eq!(cm.counts[1][..2], [2, 4]);
    assert!((overall_accuracy(&cm).unwrap() - 0.7).abs() < 1e-12);
    assert!((iou(&cm, SemanticClass::Ceiling).unwrap().unwrap() - 0.5).abs() < 1e-12);
    assert!((iou(&cm, SemanticClass::Floor).unwrap().unwrap() - 4.0 / 7.0).abs() < 1e-12);
    assert_eq!(iou(&cm, SemanticClass::Door).unwrap(), None);
    assert!((mean_iou(&cm).unwrap() - (0.5 + 4.0 / 7.0) / 2.0).abs() < 1e-12);
}

#[test]
fn clutter_exclusion_example() {
    let gt = std::iter::repeat_n(2, 50).chain(std::iter::repeat_n(7, 50));
    let cm = accumulate(gt, std::iter::repeat_n(2, 100)).unwrap();
    assert_eq!(overall_accuracy(&cm).unwrap(), 0.5);
    assert_eq!(oa7(&cm).unwrap(), 1.0);

    let cm = accumulate(std::iter::repeat_n(2, 10), std::iter::repeat_n(7, 10)).unwrap();
    assert_eq!(oa7(&cm).unwrap(), 0.0);
}

#[test]
fn best_epoch_and_deviation_examples() {
    let report = |miou: f64, oa: f64| EvalReport { oa, oa7: oa, miou, per_class_acc: [None; 8], per_class_iou: [None; 8] };
    let epochs = vec![(1, report(0.3, 0.0)), (2, report(0.5, 0.0)), (3, report(0.4, 0.0))];
    assert_eq!(select_best(&epochs).unwrap().0, 2);
    let tie = vec![(1, report(0.5, 0.1)), (2, report(0.5, 0.2))];
    assert_eq!(select_best(&tie).unwrap().0, 1);

    // Mixing only pays off above 70%.
    let mut mix = BTreeMap::new();
    let mut bench = BTreeMap::new();
    for p in (5..=95).step_by(5) {
        let gain = if p > 70 { 0.05 } else { 0.0 };
        mix.insert(p, report(0.5 + gain, 0.8 + gain));
        bench.insert(p, report(0.5, 0.8));
    }
    let high = deviation_table(&mix, &bench, (75, 95)).unwrap();
    assert_eq!(high.rows.len(), 5);
    assert!((high.average.oa - 0.05).abs() < 1e-12);
    assert!(high.average.miou > 0.0);
    let low = deviation_table(&mix, &bench, (5, 70)).unwrap();
    assert!(low.average.oa.abs() < 1e-12);
}

#[test]
fn report_text_round_trips_at_four_decimals() {
    let r = EvalReport::from_confusion(&two_class()).unwrap();
    let text = format_report(&r, Some(25), Some(4));
    let back = parse_report(&text, std::path::Path::new("r.toml")).unwrap();
    assert_eq!(back.proportion, Some(25));
    assert!((back.report.oa - r.oa).abs() <= 5e-5);
    assert!((back.report.miou - r.miou).abs() <= 5e-5);
    assert_eq!(back.report.per_class_iou[6], None);
}
