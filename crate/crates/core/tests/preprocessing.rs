mod common;

use std::collections::HashMap;

use proptest::collection::vec;
use proptest::prelude::*;

use common::{dataset, decoded_pairs};
use recbench::atomic::{AtomicFileKind, Column, DataTable, FieldSpec, FieldType};
use recbench::dataset::{Dataset, ValuePredicate};

fn rated(rows: &[(u32, u32, Option<f64>)]) -> Dataset {
    let table = DataTable::new(
        AtomicFileKind::Inter,
        vec![
            FieldSpec::new("user_id", FieldType::Token),
            FieldSpec::new("item_id", FieldType::Token),
            FieldSpec::new("rating", FieldType::Float),
        ],
        vec![
            Column::Token(rows.iter().map(|r| Some(format!("u{}", r.0))).collect()),
            Column::Token(rows.iter().map(|r| Some(format!("i{}", r.1))).collect()),
            Column::Float(rows.iter().map(|r| r.2).collect()),
        ],
    )
    .unwrap();
    Dataset::from_inter(table).unwrap()
}

fn rating_rows() -> impl Strategy<Value = Vec<(u32, u32, Option<f64>)>> {
    vec((0u32..6, 0u32..6, proptest::option::weighted(0.7, -5.0f64..5.0)), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fill_nan_uses_the_observed_mean(rows in rating_rows()) {
        let ds = rated(&rows);
        let observed: Vec<f64> = rows.iter().filter_map(|r| r.2).collect();
        match ds.fill_nan() {
            Err(_) => prop_assert!(observed.is_empty()),
            Ok(filled) => {
                // two passes: sum, then divide
                let mut sum = 0.0;
                for x in &observed {
                    sum += x;
                }
                let mean = sum / observed.len() as f64;
                let got = filled.inter().float_column("rating").unwrap();
                for (g, r) in got.iter().zip(&rows) {
                    let want = r.2.unwrap_or(mean);
                    prop_assert!((g.unwrap() - want).abs() <= 1e-12 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn value_filter_keeps_exactly_the_matching_rows(rows in rating_rows(), lo in -5.0f64..5.0, width in 0.0f64..6.0) {
        let ds = rated(&rows);
        let pred = ValuePredicate::half_open(lo, lo + width);
        let expected: Vec<(String, String)> = rows
            .iter()
            .filter(|r| r.2.is_some_and(|x| x >= lo && x < lo + width))
            .map(|r| (format!("u{}", r.0), format!("i{}", r.1)))
            .collect();
        match ds.filter_by_field_value("rating", &pred) {
            Err(_) => prop_assert!(expected.is_empty()),
            Ok(f) => prop_assert_eq!(decoded_pairs(&f), expected),
        }
    }

    #[test]
    fn normalize_maps_onto_unit_interval(rows in rating_rows()) {
        let ds = rated(&rows);
        let norm = ds.normalize(&["rating"]).unwrap();
        let observed: Vec<f64> = rows.iter().filter_map(|r| r.2).collect();
        let got = norm.inter().float_column("rating").unwrap();
        if let (Some(lo), Some(hi)) = (
            observed.iter().copied().reduce(f64::min),
            observed.iter().copied().reduce(f64::max),
        ) {
            for (g, r) in got.iter().zip(&rows) {
                match r.2 {
                    None => prop_assert!(g.is_none()),
                    Some(x) => {
                        let want = if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
                        prop_assert!((g.unwrap() - want).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn threshold_labels(rows in rating_rows(), thr in -5.0f64..5.0) {
        let ds = rated(&rows).set_label_by_threshold("rating", thr).unwrap();
        let labels = ds.inter().float_column("label").unwrap();
        for (l, r) in labels.iter().zip(&rows) {
            let want = if r.2.is_some_and(|x| x >= thr) { 1.0 } else { 0.0 };
            prop_assert_eq!(*l, Some(want));
        }
    }

    #[test]
    fn filtered_core_meets_both_thresholds(
        pairs in vec((0u32..8, 0u32..8), 1..50),
        mu in 0usize..5,
        mi in 0usize..5,
    ) {
        let rows: Vec<(u32, u32, f64)> = pairs.iter().enumerate().map(|(t, &(u, i))| (u, i, t as f64)).collect();
        if let Ok(f) = dataset(&rows).filter_by_inter_num(mu, mi) {
            let mut users: HashMap<u32, usize> = HashMap::new();
            let mut items: HashMap<u32, usize> = HashMap::new();
            for (&u, &i) in f.users().iter().zip(f.items()) {
                *users.entry(u).or_default() += 1;
                *items.entry(i).or_default() += 1;
            }
            prop_assert!(users.values().all(|&c| c >= mu));
            prop_assert!(items.values().all(|&c| c >= mi));
        }
    }
}

#[test]
fn condition_syntax() {
    let (f, p) = ValuePredicate::parse_condition("rating>=3").unwrap();
    assert_eq!(f, "rating");
    assert!(p.contains(3.0) && !p.contains(2.9));
    let (_, p) = ValuePredicate::parse_condition("timestamp in [10,20)").unwrap();
    assert!(p.contains(10.0) && p.contains(19.9) && !p.contains(20.0));
    let (_, p) = ValuePredicate::parse_condition("genre in {a, b}").unwrap();
    assert_eq!(p, ValuePredicate::OneOf(vec!["a".into(), "b".into()]));
    assert!(ValuePredicate::parse_condition("rating ~ 3").is_none());
}

#[test]
fn remap_after_filter_is_contiguous_in_first_occurrence_order() {
    let ds = dataset(&[(5, 1, 0.0), (7, 2, 1.0), (5, 2, 2.0), (9, 3, 3.0), (7, 1, 4.0)]);
    // u9 and i3 occur once and are dropped by a 2-core
    let f = ds.filter_by_inter_num(2, 2).unwrap().remap_ids().unwrap();
    assert_eq!(f.users(), &[1, 2, 1, 2]);
    assert_eq!(f.items(), &[1, 2, 2, 1]);
    assert_eq!(f.vocab("user_id").unwrap().token(1), Some("u5"));
    assert_eq!(f.n_users(), 3);
}
