//! Empirical frequencies of seeded draws.

mod common;

use std::collections::HashMap;

use recbench::protocol::{build_candidates, parse_eval_setting, split_dataset, CandidateMode, Phase};
use recbench::runner::parse_range_text;
use recbench::runner::search::draw_combinations;

/// Pearson chi-square statistic of observed counts against a uniform
/// expectation.
fn chi_square(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn sampled_negatives_are_uniform_over_eligible_items() {
    // one user with items 0..5 among 25, so 20 eligible negatives
    let mut rows: Vec<(u32, u32, f64)> = (0..5).map(|i| (0, i, f64::from(i))).collect();
    // other users make the remaining items exist
    rows.extend((5..25).map(|i| (1 + i % 3, i, f64::from(i))));
    let ds = common::dataset(&rows);
    let mut counts: HashMap<u32, usize> = HashMap::new();
    let user = ds.users()[0];
    let own: Vec<u32> = (0..5).map(|r| ds.items()[r]).collect();
    for seed in 0..2000 {
        let plan = parse_eval_setting("RO_LS,uni3").unwrap().with_seed(seed);
        let split = split_dataset(&ds, &plan).unwrap();
        let cands = build_candidates(&ds, &split, Phase::Test, CandidateMode::Uniform(3), seed).unwrap();
        let entry = cands.users.iter().find(|c| c.user == user).unwrap();
        for negs in &entry.negatives {
            for &j in negs {
                assert!(!own.contains(&j));
                *counts.entry(j).or_default() += 1;
            }
        }
    }
    assert_eq!(counts.len(), 20);
    let observed: Vec<usize> = counts.values().copied().collect();
    // 19 degrees of freedom; 43.8 is the 0.999 quantile
    let stat = chi_square(&observed);
    assert!(stat < 43.8, "chi-square {stat}");
}

#[test]
fn random_search_draws_are_uniform_over_the_space() {
    let space = parse_range_text("lr=[0.1,0.2,0.3]\nembedding_size=[4,8,16,32]").unwrap();
    let mut counts = vec![0usize; space.size()];
    for seed in 0..10_000 {
        for c in draw_combinations(&space, 1, seed) {
            counts[c] += 1;
        }
    }
    // 11 degrees of freedom; 31.3 is the 0.999 quantile
    let stat = chi_square(&counts);
    assert!(stat < 31.3, "chi-square {stat}: {counts:?}");
}

#[test]
fn random_search_never_repeats_a_combination() {
    let space = parse_range_text("lr=[0.1,0.2,0.3]\nembedding_size=[4,8,16,32]").unwrap();
    for seed in 0..200 {
        let mut draws = draw_combinations(&space, 7, seed);
        assert_eq!(draws.len(), 7);
        draws.sort_unstable();
        draws.dedup();
        assert_eq!(draws.len(), 7);
    }
    assert_eq!(draw_combinations(&space, 50, 1), (0..12).collect::<Vec<_>>());
}
