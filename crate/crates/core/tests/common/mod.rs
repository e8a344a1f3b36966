#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use recbench::atomic::{write_atomic_file, AtomicFileKind, Column, DataTable, FieldSpec, FieldType};
use recbench::dataset::Dataset;
use recbench::runner::synthetic::planted_factor_inter;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `(user, item, timestamp)` rows as an interaction table with tokens
/// `u<k>` / `i<k>`.
pub fn inter_table(rows: &[(u32, u32, f64)]) -> DataTable {
    DataTable::new(
        AtomicFileKind::Inter,
        vec![
            FieldSpec::new("user_id", FieldType::Token),
            FieldSpec::new("item_id", FieldType::Token),
            FieldSpec::new("timestamp", FieldType::Float),
        ],
        vec![
            Column::Token(rows.iter().map(|r| Some(format!("u{}", r.0))).collect()),
            Column::Token(rows.iter().map(|r| Some(format!("i{}", r.1))).collect()),
            Column::Float(rows.iter().map(|r| Some(r.2)).collect()),
        ],
    )
    .unwrap()
}

pub fn dataset(rows: &[(u32, u32, f64)]) -> Dataset {
    Dataset::from_inter(inter_table(rows)).unwrap()
}

/// Random interactions: every user gets `min_rows..=max_rows` rows over
/// `n_items` items; timestamps are a global permutation so they are
/// distinct, and user order is shuffled.
pub fn random_rows(
    r: &mut impl Rng,
    n_users: u32,
    n_items: u32,
    min_rows: usize,
    max_rows: usize,
) -> Vec<(u32, u32, f64)> {
    let mut rows = Vec::new();
    for u in 0..n_users {
        for _ in 0..r.random_range(min_rows..=max_rows) {
            rows.push((u, r.random_range(0..n_items), 0.0));
        }
    }
    rows.shuffle(r);
    let mut ts: Vec<usize> = (0..rows.len()).collect();
    ts.shuffle(r);
    for (row, t) in rows.iter_mut().zip(ts) {
        row.2 = t as f64;
    }
    rows
}

/// Decoded `(user token, item token)` pairs in row order.
pub fn decoded_pairs(ds: &Dataset) -> Vec<(String, String)> {
    let t = ds.decode_inter();
    let tok = |name: &str| match t.column(name).unwrap() {
        Column::Token(v) => v.iter().map(|x| x.clone().unwrap()).collect::<Vec<_>>(),
        _ => panic!("{name} is not a token column"),
    };
    tok("user_id").into_iter().zip(tok("item_id")).collect()
}

/// Full sort of one score row: descending score, ties by ascending index.
pub fn sorted_indices(row: &[f64]) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..row.len() as u32).collect();
    idx.sort_by(|&a, &b| {
        row[b as usize]
            .partial_cmp(&row[a as usize])
            .expect("no NaN in oracle input")
            .then(a.cmp(&b))
    });
    idx
}

/// Reference ranking metrics of one ranked list against a positive set.
#[derive(Debug, Clone, Copy)]
pub struct RefMetrics {
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    pub mrr: f64,
}

pub fn reference_metrics(ranked: &[u32], positives: &HashSet<u32>, k: usize) -> RefMetrics {
    let top = &ranked[..k.min(ranked.len())];
    let found: Vec<usize> = top
        .iter()
        .enumerate()
        .filter(|(_, i)| positives.contains(i))
        .map(|(r, _)| r + 1)
        .collect();
    let p = positives.len() as f64;
    let dcg: f64 = found.iter().map(|&r| 1.0 / (r as f64 + 1.0).log2()).sum();
    let ideal: f64 = (1..=k.min(positives.len()))
        .map(|r| 1.0 / (r as f64 + 1.0).log2())
        .sum();
    RefMetrics {
        recall: found.len() as f64 / p,
        precision: found.len() as f64 / k as f64,
        ndcg: dcg / ideal,
        mrr: found.first().map_or(0.0, |&r| 1.0 / r as f64),
    }
}

/// Mean of reference metrics over users with positives.
pub fn mean_reference(per_user: &[Option<RefMetrics>]) -> BTreeMap<&'static str, f64> {
    let counted: Vec<&RefMetrics> = per_user.iter().flatten().collect();
    let n = counted.len().max(1) as f64;
    let mean = |f: fn(&RefMetrics) -> f64| {
        if counted.is_empty() {
            0.0
        } else {
            counted.iter().map(|m| f(m)).sum::<f64>() / n
        }
    };
    BTreeMap::from([
        ("recall", mean(|m| m.recall)),
        ("precision", mean(|m| m.precision)),
        ("ndcg", mean(|m| m.ndcg)),
        ("mrr", mean(|m| m.mrr)),
    ])
}

/// Writes planted-factor interactions to `<dir>/<name>.inter`.
pub fn write_planted(dir: &Path, name: &str, users: usize, items: usize, seed: u64) {
    let t = planted_factor_inter(users, items, 4, 0.05, seed);
    write_atomic_file(&t, &dir.join(format!("{name}.inter")), ',').unwrap();
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}
