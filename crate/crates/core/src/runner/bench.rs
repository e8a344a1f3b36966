//! Timing of the accelerated evaluation path against a per-user
//! score-sort-scan loop on the same seeded score matrix.

use std::collections::HashSet;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::index;
use rand::Rng as _;

use crate::eval::{
    index_hits, mask_items, relevance_matrix, topk_find, Collector, HitMatrix, Metric, MetricRegister, Report,
};
use crate::rng::{self, Purpose};

const BATCH: usize = 256;

/// A full-ranking instance: scores, history items to mask and positives.
pub struct BenchInstance {
    pub scores: Array2<f64>,
    pub history: Vec<Vec<u32>>,
    pub positives: Vec<Vec<u32>>,
}

impl BenchInstance {
    /// Scores are multiples of 1/1024 so ties occur; each user gets up to
    /// 20 history items and 1 to 10 disjoint positives.
    pub fn generate(n_users: usize, n_items: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Purpose::Synthetic, 1);
        let scores =
            Array2::from_shape_simple_fn((n_users, n_items), || f64::from(rng.random_range(0..1024u32)) / 1024.0);
        let mut history = Vec::with_capacity(n_users);
        let mut positives = Vec::with_capacity(n_users);
        for _ in 0..n_users {
            let n_hist = rng.random_range(0..=20usize.min(n_items / 2));
            let n_pos = rng
                .random_range(1..=10usize.min(n_items - n_hist).max(1))
                .min(n_items - n_hist);
            let mut picked: Vec<u32> = index::sample(&mut rng, n_items, n_hist + n_pos)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            let pos = picked.split_off(n_hist);
            history.push(picked);
            positives.push(pos);
        }
        Self {
            scores,
            history,
            positives,
        }
    }
}

fn register(k: usize) -> MetricRegister {
    MetricRegister::new(
        vec![Metric::Recall, Metric::Precision, Metric::Ndcg, Metric::Mrr],
        vec![k],
    )
    .expect("positive cutoff")
}

/// Batched reshape-free path: copy a block of rows, mask, partial top-K,
/// index against the relevance matrix.
pub fn accelerated_report(inst: &BenchInstance, k: usize) -> Report {
    let (n, m) = inst.scores.dim();
    let mut collector = Collector::new();
    for start in (0..n).step_by(BATCH) {
        let end = (start + BATCH).min(n);
        let mut block = inst.scores.slice(s![start..end, ..]).to_owned();
        let hist: Vec<&[u32]> = inst.history[start..end].iter().map(Vec::as_slice).collect();
        mask_items(&mut block, &hist);
        let top = topk_find(block.view(), k).expect("k <= m");
        let pos: Vec<&[u32]> = inst.positives[start..end].iter().map(Vec::as_slice).collect();
        let rel = relevance_matrix(&pos, m);
        collector.push_hits(index_hits(top.view(), rel.view()).expect("matching shapes"));
    }
    collector.finish(&register(k), Vec::new()).expect("registered metrics")
}

/// One user at a time: drop history items, sort every remaining item by
/// score (ties by index), scan the first K for positives.
pub fn naive_report(inst: &BenchInstance, k: usize) -> Report {
    let mut hits = Array2::zeros((inst.scores.nrows(), k));
    let mut pos_counts = Vec::with_capacity(inst.scores.nrows());
    for (u, row) in inst.scores.rows().into_iter().enumerate() {
        let hist: HashSet<u32> = inst.history[u].iter().copied().collect();
        let pos: HashSet<u32> = inst.positives[u].iter().copied().collect();
        let mut ranked: Vec<(f64, u32)> = row
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                (
                    if hist.contains(&(i as u32)) {
                        f64::NEG_INFINITY
                    } else {
                        s
                    },
                    i as u32,
                )
            })
            .collect();
        // keys are unique (index tie-break), so an unstable sort is exact
        ranked.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (slot, &(_, i)) in ranked.iter().take(k).enumerate() {
            hits[[u, slot]] = u8::from(pos.contains(&i));
        }
        pos_counts.push(pos.len());
    }
    let mut collector = Collector::new();
    collector.push_hits(HitMatrix { hits, pos_counts });
    collector.finish(&register(k), Vec::new()).expect("registered metrics")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub n_users: usize,
    pub n_items: usize,
    pub k: usize,
    pub repeats: usize,
    pub naive_mean_secs: f64,
    pub accelerated_mean_secs: f64,
    pub speedup: f64,
    pub reports_identical: bool,
    /// Metric report shared by both paths (the accelerated one if they
    /// differ).
    pub report: String,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        format!(
            "users: {}\nitems: {}\nk: {}\nrepeats: {}\nnaive_mean_secs: {:.6}\naccelerated_mean_secs: {:.6}\nspeedup: {:.2}\nreports_identical: {}\n",
            self.n_users,
            self.n_items,
            self.k,
            self.repeats,
            self.naive_mean_secs,
            self.accelerated_mean_secs,
            self.speedup,
            self.reports_identical
        )
    }
}

/// Mean wall time of `repeats` runs of each path on one seeded instance.
pub fn bench_eval(n_users: usize, n_items: usize, k: usize, repeats: usize, seed: u64) -> BenchReport {
    let n_users = n_users.max(1);
    let n_items = n_items.max(1);
    let k = k.clamp(1, n_items);
    let repeats = repeats.max(1);
    let inst = BenchInstance::generate(n_users, n_items, seed);
    let mut naive_total = 0.0;
    let mut accel_total = 0.0;
    let mut identical = true;
    let mut text = String::new();
    for _ in 0..repeats {
        let t = Instant::now();
        let naive = naive_report(&inst, k);
        naive_total += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let accel = accelerated_report(&inst, k);
        accel_total += t.elapsed().as_secs_f64();
        let (a, b) = (accel.to_text(), naive.to_text());
        identical &= a == b;
        text = a;
    }
    let naive_mean = naive_total / repeats as f64;
    let accel_mean = accel_total / repeats as f64;
    BenchReport {
        n_users,
        n_items,
        k,
        repeats,
        naive_mean_secs: naive_mean,
        accelerated_mean_secs: accel_mean,
        speedup: naive_mean / accel_mean,
        reports_identical: identical,
        report: text,
    }
}
