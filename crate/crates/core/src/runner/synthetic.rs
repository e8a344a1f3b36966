//! Seeded synthetic interaction data with planted low-rank structure.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::atomic::{AtomicFileKind, Column, DataTable, FieldSpec, FieldType, ITEM_ID, USER_ID};
use crate::dataset::TIMESTAMP;
use crate::rng::{self, Purpose};

/// Interactions from a rank-`rank` factor model: user and item factors are
/// standard normal and each user observes the `fraction` of items with the
/// highest planted scores (at least one). Rows are in random order and
/// carry distinct timestamps.
pub fn planted_factor_inter(n_users: usize, n_items: usize, rank: usize, fraction: f64, seed: u64) -> DataTable {
    let mut rng = rng::stream(seed, Purpose::Synthetic, 0);
    let mut draw = |n: usize| -> Vec<f64> { (0..n * rank).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let users = draw(n_users);
    let items = draw(n_items);
    let per_user = ((n_items as f64 * fraction).round() as usize).clamp(1, n_items);
    let mut pairs = Vec::with_capacity(n_users * per_user);
    for u in 0..n_users {
        let pu = &users[u * rank..(u + 1) * rank];
        let mut scored: Vec<(f64, usize)> = (0..n_items)
            .map(|i| {
                let qi = &items[i * rank..(i + 1) * rank];
                (pu.iter().zip(qi).map(|(a, b)| a * b).sum(), i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        pairs.extend(scored[..per_user].iter().map(|&(_, i)| (u, i)));
    }
    pairs.shuffle(&mut rng);
    let schema = vec![
        FieldSpec::new(USER_ID, FieldType::Token),
        FieldSpec::new(ITEM_ID, FieldType::Token),
        FieldSpec::new(TIMESTAMP, FieldType::Float),
    ];
    let columns = vec![
        Column::Token(pairs.iter().map(|&(u, _)| Some(format!("u{u}"))).collect()),
        Column::Token(pairs.iter().map(|&(_, i)| Some(format!("i{i}"))).collect()),
        Column::Float((0..pairs.len()).map(|t| Some(t as f64)).collect()),
    ];
    DataTable::new(AtomicFileKind::Inter, schema, columns).expect("well-formed synthetic table")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_user_observes_the_same_count() {
        let t = planted_factor_inter(20, 40, 3, 0.1, 1);
        assert_eq!(t.row_count(), 20 * 4);
        assert_eq!(t, planted_factor_inter(20, 40, 3, 0.1, 1));
        assert_ne!(t, planted_factor_inter(20, 40, 3, 0.1, 2));
    }
}
