//! The accelerated ranking path: reshaping, filling, top-K finding and
//! indexing over whole score matrices.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2};

use super::{EvalError, Result};

/// Binary relevance of every item for every user of a batch.
pub type RelevanceMatrix = Array2<u8>;

/// Hits of the top-K lists plus the number of positives of each user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HitMatrix {
    pub hits: Array2<u8>,
    pub pos_counts: Vec<usize>,
}

impl HitMatrix {
    pub fn n_users(&self) -> usize {
        self.hits.nrows()
    }

    pub fn width(&self) -> usize {
        self.hits.ncols()
    }

    /// Stacks blocks in order.
    pub fn concat(blocks: &[HitMatrix]) -> Result<HitMatrix> {
        let width = blocks.first().map_or(0, HitMatrix::width);
        if blocks.iter().any(|b| b.width() != width) {
            return Err(EvalError::Shape("hit blocks differ in width".into()));
        }
        let views: Vec<_> = blocks.iter().map(|b| b.hits.view()).collect();
        let hits = if views.is_empty() {
            Array2::zeros((0, 0))
        } else {
            ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
        };
        Ok(HitMatrix {
            hits,
            pos_counts: blocks.iter().flat_map(|b| b.pos_counts.iter().copied()).collect(),
        })
    }
}

/// Scatters flat per-user scores into an `n x m` matrix that holds −∞
/// wherever a user has no candidate.
pub fn reshape_scores(candidates: &[Vec<u32>], scores: &[f64], n_items: usize) -> Result<Array2<f64>> {
    let total: usize = candidates.iter().map(Vec::len).sum();
    if total != scores.len() {
        return Err(EvalError::Shape(format!(
            "{} scores for {total} candidates",
            scores.len()
        )));
    }
    let mut out = Array2::from_elem((candidates.len(), n_items), f64::NEG_INFINITY);
    let mut flat = scores.iter();
    for (u, items) in candidates.iter().enumerate() {
        for &i in items {
            if i as usize >= n_items {
                return Err(EvalError::Shape(format!("candidate {i} is outside {n_items} items")));
            }
            out[[u, i as usize]] = *flat.next().expect("counted above");
        }
    }
    Ok(out)
}

/// Sets the listed items of each row to −∞.
pub fn mask_items(scores: &mut Array2<f64>, items: &[&[u32]]) {
    for (mut row, masked) in scores.rows_mut().into_iter().zip(items) {
        for &i in masked.iter() {
            if let Some(x) = row.get_mut(i as usize) {
                *x = f64::NEG_INFINITY;
            }
        }
    }
}

fn key(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

/// Ranking order: higher score first, then lower index.
fn rank_cmp(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

/// Top-`k` of one row by partial selection. Candidates go into a buffer of
/// at most `2k` entries which is cut back to `k` with a linear-time
/// selection whenever it fills; only the final `k` entries are sorted.
fn row_topk(row: &[f64], k: usize, buf: &mut Vec<(f64, u32)>, out: &mut [u32]) {
    buf.clear();
    // entries not strictly better than this are out: later indices lose ties
    let mut threshold: Option<f64> = None;
    for (j, &s) in row.iter().enumerate() {
        let s = key(s);
        if matches!(threshold, Some(t) if s <= t) {
            continue;
        }
        buf.push((s, j as u32));
        if buf.len() == 2 * k {
            buf.select_nth_unstable_by(k - 1, rank_cmp);
            buf.truncate(k);
            threshold = Some(buf[k - 1].0);
        }
    }
    buf.sort_unstable_by(rank_cmp);
    for (o, &(_, j)) in out.iter_mut().zip(buf.iter()) {
        *o = j;
    }
}

/// Per row, the `k` best indices by descending score with ties broken by
/// ascending index. NaN ranks like −∞.
pub fn topk_find(scores: ArrayView2<'_, f64>, k: usize) -> Result<Array2<u32>> {
    let m = scores.ncols();
    if k > m {
        return Err(EvalError::KTooLarge { k, n_items: m });
    }
    let mut out = Array2::zeros((scores.nrows(), k));
    if k == 0 {
        return Ok(out);
    }
    let mut buf = Vec::with_capacity(2 * k);
    let mut scratch = Vec::new();
    for (row, mut dst) in scores.rows().into_iter().zip(out.rows_mut()) {
        let row = match row.as_slice() {
            Some(s) => s,
            None => {
                scratch.clear();
                scratch.extend(row.iter().copied());
                &scratch[..]
            }
        };
        row_topk(row, k, &mut buf, dst.as_slice_mut().expect("standard layout"));
    }
    Ok(out)
}

/// Relevance rows for users with the given positives.
pub fn relevance_matrix(positives: &[&[u32]], n_items: usize) -> RelevanceMatrix {
    let mut b = Array2::zeros((positives.len(), n_items));
    for (u, items) in positives.iter().enumerate() {
        for &i in items.iter() {
            if (i as usize) < n_items {
                b[[u, i as usize]] = 1;
            }
        }
    }
    b
}

/// `C[u][k] = B[u][A[u][k]]` and the row sums of `B`.
pub fn index_hits(topk: ArrayView2<'_, u32>, relevance: ArrayView2<'_, u8>) -> Result<HitMatrix> {
    if topk.nrows() != relevance.nrows() {
        return Err(EvalError::Shape(format!(
            "{} top-K rows for {} relevance rows",
            topk.nrows(),
            relevance.nrows()
        )));
    }
    let m = relevance.ncols();
    let mut hits = Array2::zeros(topk.dim());
    for ((a, b), mut c) in topk.rows().into_iter().zip(relevance.rows()).zip(hits.rows_mut()) {
        for (dst, &i) in c.iter_mut().zip(a.iter()) {
            if i as usize >= m {
                return Err(EvalError::Shape(format!("index {i} is outside {m} items")));
            }
            *dst = b[i as usize];
        }
    }
    let pos_counts = relevance
        .rows()
        .into_iter()
        .map(|r| r.iter().filter(|&&x| x != 0).count())
        .collect();
    Ok(HitMatrix { hits, pos_counts })
}
