use drowsyfed_core::metrics::{accuracy, precision, recall, Averaging, ConfusionMatrix};
use proptest::prelude::*;

fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
    ConfusionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn hand_evaluated_two_class_matrix() {
    let m = cm(&[&[8, 2], &[1, 9]]);
    assert_eq!(accuracy(&m).unwrap(), 17.0 / 20.0);
    let p = precision(&m, Averaging::Macro).unwrap();
    assert!((p.value - (8.0 / 9.0 + 9.0 / 11.0) / 2.0).abs() < 1e-15);
    assert!((p.value - 0.85354).abs() < 1e-5);
    assert!((recall(&m, Averaging::Macro).unwrap().value - 0.85).abs() < 1e-15);
}

#[test]
fn diagonal_and_anti_diagonal() {
    let m = cm(&[&[5, 0], &[0, 5]]);
    assert_eq!(accuracy(&m).unwrap(), 1.0);
    assert_eq!(precision(&m, Averaging::Macro).unwrap().value, 1.0);
    assert_eq!(recall(&m, Averaging::Macro).unwrap().value, 1.0);
    assert_eq!(accuracy(&cm(&[&[0, 5], &[5, 0]])).unwrap(), 0.0);
}

#[test]
fn single_class_predictor_flags_unpredicted_class() {
    let m = cm(&[&[4, 0], &[6, 0]]);
    let p = precision(&m, Averaging::Macro).unwrap();
    assert_eq!(p.zero_denominator, vec![1]);
    assert_eq!(p.per_class[1], 0.0);
    assert_eq!(p.value, 0.2);
}

fn matrix() -> impl Strategy<Value = ConfusionMatrix> {
    (2usize..5).prop_flat_map(|c| {
        prop::collection::vec(0u64..50, c * c).prop_filter_map("non-empty", move |v| {
            if v.iter().sum::<u64>() == 0 {
                return None;
            }
            let rows: Vec<Vec<u64>> = v.chunks(c).map(|r| r.to_vec()).collect();
            ConfusionMatrix::from_rows(&rows).ok()
        })
    })
}

proptest! {
    #[test]
    fn metrics_in_unit_interval(m in matrix()) {
        for v in [
            accuracy(&m).unwrap(),
            precision(&m, Averaging::Macro).unwrap().value,
            recall(&m, Averaging::Macro).unwrap().value,
            precision(&m, Averaging::Weighted).unwrap().value,
        ] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn accuracy_equals_micro_precision_and_recall(m in matrix()) {
        // micro averages pool TP, FP, FN over classes
        let c = m.classes();
        let tp: u64 = (0..c).map(|b| m.get(b, b)).sum();
        let fp: u64 = (0..c).map(|b| (0..c).filter(|&t| t != b).map(|t| m.get(t, b)).sum::<u64>()).sum();
        let fn_: u64 = (0..c).map(|b| (0..c).filter(|&p| p != b).map(|p| m.get(b, p)).sum::<u64>()).sum();
        let acc = accuracy(&m).unwrap();
        prop_assert_eq!(acc, tp as f64 / (tp + fp) as f64);
        prop_assert_eq!(acc, tp as f64 / (tp + fn_) as f64);
    }

    #[test]
    fn invariant_under_class_relabelling(m in matrix(), seed in any::<u64>()) {
        let c = m.classes();
        let mut perm: Vec<usize> = (0..c).collect();
        perm.rotate_left((seed % c as u64) as usize);
        if seed & 1 == 1 { perm.swap(0, c - 1); }
        let q = m.permuted(&perm).unwrap();
        prop_assert_eq!(accuracy(&m).unwrap(), accuracy(&q).unwrap());
        let (pm, pq) = (precision(&m, Averaging::Macro).unwrap().value, precision(&q, Averaging::Macro).unwrap().value);
        let (rm, rq) = (recall(&m, Averaging::Macro).unwrap().value, recall(&q, Averaging::Macro).unwrap().value);
        prop_assert!((pm - pq).abs() < 1e-15);
        prop_assert!((rm - rq).abs() < 1e-15);
    }
}
