//! Ranking metrics over a [`HitMatrix`] and value metrics over predictions.

use super::topk::HitMatrix;
use super::{EvalError, Result};

/// Per-user values and their mean over users with at least one positive.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricValues {
    pub per_user: Vec<f64>,
    pub mean: f64,
}

fn check_k(c: &HitMatrix, k: usize) -> Result<()> {
    if k == 0 || k > c.width() {
        return Err(EvalError::KTooLarge { k, n_items: c.width() });
    }
    Ok(())
}

fn collect(c: &HitMatrix, k: usize, f: impl Fn(&[u8], usize) -> f64) -> Result<MetricValues> {
    check_k(c, k)?;
    let mut per_user = Vec::with_capacity(c.n_users());
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (row, &pos) in c.hits.rows().into_iter().zip(&c.pos_counts) {
        let row = row.to_slice().expect("standard layout");
        let v = if pos == 0 { 0.0 } else { f(&row[..k], pos) };
        if pos > 0 {
            sum += v;
            counted += 1;
        }
        per_user.push(v);
    }
    let mean = if counted == 0 { 0.0 } else { sum / counted as f64 };
    Ok(MetricValues { per_user, mean })
}

fn hit_count(row: &[u8]) -> f64 {
    row.iter().filter(|&&h| h != 0).count() as f64
}

pub fn recall_at_k(c: &HitMatrix, k: usize) -> Result<MetricValues> {
    collect(c, k, |row, pos| hit_count(row) / pos as f64)
}

pub fn precision_at_k(c: &HitMatrix, k: usize) -> Result<MetricValues> {
    collect(c, k, |row, _| hit_count(row) / k as f64)
}

/// Binary-relevance NDCG with the ideal ranking truncated at
/// `min(k, positives)`.
pub fn ndcg_at_k(c: &HitMatrix, k: usize) -> Result<MetricValues> {
    collect(c, k, |row, pos| {
        let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
        let dcg: f64 = row
            .iter()
            .enumerate()
            .filter(|(_, &h)| h != 0)
            .map(|(r, _)| gain(r))
            .sum();
        let idcg: f64 = (0..k.min(pos)).map(gain).sum();
        dcg / idcg
    })
}

pub fn mrr_at_k(c: &HitMatrix, k: usize) -> Result<MetricValues> {
    collect(c, k, |row, _| match row.iter().position(|&h| h != 0) {
        Some(r) => 1.0 / (r + 1) as f64,
        None => 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueMetrics {
    pub rmse: f64,
    pub mae: f64,
}

pub fn value_metrics(predictions: &[f64], truths: &[f64]) -> Result<ValueMetrics> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(EvalError::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let n = predictions.len() as f64;
    let (sq, abs) = predictions.iter().zip(truths).fold((0.0, 0.0), |(sq, abs), (p, t)| {
        (sq + (p - t) * (p - t), abs + (p - t).abs())
    });
    Ok(ValueMetrics {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
    })
}
