//! Top-K evaluation.
//!
//! Users are scored in batches. Each batch goes through reshaping (sampled
//! candidates are scattered into a −∞ matrix), filling (history items are
//! set to −∞), top-K finding and indexing against the relevance matrix.
//! The resulting hit blocks are concatenated by a [`Collector`] and the
//! registered metrics are computed once at the end.

pub mod metrics;
mod report;
mod topk;

use thiserror::Error;

use crate::atomic::{ITEM_ID, USER_ID};
use crate::dataset::{Batch, BatchColumn, Dataset, LABEL, RATING};
use crate::models::{ModelError, Recommender, UserHistory};
use crate::protocol::{CandidateMode, CandidateSet, Phase, SplitResult};

pub use metrics::{value_metrics, MetricValues, ValueMetrics};
pub use report::{Collector, Metric, MetricRegister, Report};
pub use topk::{index_hits, mask_items, relevance_matrix, reshape_scores, topk_find, HitMatrix, RelevanceMatrix};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("invalid cutoff: {0}")]
    BadCutoff(String),
    #[error("K = {k} exceeds the {n_items} ranked items")]
    KTooLarge { k: usize, n_items: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("value metrics need a `label` or `rating` column")]
    MissingTruth,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOptions {
    /// Users scored per batch.
    pub batch_size: usize,
    /// Full mode only: rank history items at −∞.
    pub mask_history: bool,
    /// Setting label written into the report header.
    pub setting: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            batch_size: 256,
            mask_history: true,
            setting: String::new(),
        }
    }
}

fn phase_name(phase: Phase) -> &'static str {
    match phase {
        Phase::Valid => "valid",
        Phase::Test => "test",
    }
}

/// Evaluates `model` on the users of `candidates`.
pub fn evaluate(
    model: &dyn Recommender,
    ds: &Dataset,
    split: &SplitResult,
    phase: Phase,
    candidates: &CandidateSet,
    register: &MetricRegister,
    opts: &EvalOptions,
) -> Result<Report> {
    let m = candidates.n_items;
    if model.n_items() != m {
        return Err(EvalError::Shape(format!(
            "model ranks {} items, dataset has {m}",
            model.n_items()
        )));
    }
    if register.needs_ranking() && register.max_k() > m {
        return Err(EvalError::KTooLarge {
            k: register.max_k(),
            n_items: m,
        });
    }
    let full = candidates.mode == CandidateMode::Full;
    let masked = full && opts.mask_history;
    let history = if masked {
        let rows = phase.history_rows(split);
        let users: Vec<u32> = rows.iter().map(|&r| ds.users()[r]).collect();
        let items: Vec<u32> = rows.iter().map(|&r| ds.items()[r]).collect();
        UserHistory::from_pairs(ds.n_users(), &users, &items)
    } else {
        UserHistory::from_lists(Vec::new())
    };
    let batch_size = opts.batch_size.max(1);
    let mut collector = Collector::new();

    if register.needs_ranking() {
        for (b, chunk) in candidates.users.chunks(batch_size).enumerate() {
            let user_ids: Vec<u32> = chunk.iter().map(|c| c.user).collect();
            let mut scores = if full {
                let s = model.full_sort_predict(&user_ids)?;
                if s.dim() != (chunk.len(), m) {
                    return Err(EvalError::Shape(format!("full-sort scores have shape {:?}", s.dim())));
                }
                s
            } else {
                let items: Vec<Vec<u32>> = (0..chunk.len())
                    .map(|k| candidates.items_of(b * batch_size + k))
                    .collect();
                let users: Vec<u32> = chunk
                    .iter()
                    .zip(&items)
                    .flat_map(|(c, its)| std::iter::repeat_n(c.user, its.len()))
                    .collect();
                let batch = Batch::from_columns([
                    (USER_ID, BatchColumn::Ids(users)),
                    (ITEM_ID, BatchColumn::Ids(items.concat())),
                ])
                .expect("columns share a length");
                reshape_scores(&items, &model.predict(&batch)?, m)?
            };
            if full {
                // the padding ID is never a rankable item
                scores.column_mut(0).fill(f64::NEG_INFINITY);
            }
            if masked {
                let hist: Vec<&[u32]> = user_ids.iter().map(|&u| history.items(u)).collect();
                mask_items(&mut scores, &hist);
            }
            let top = topk_find(scores.view(), register.max_k())?;
            let positives: Vec<&[u32]> = chunk.iter().map(|c| c.positives.as_slice()).collect();
            let relevance = relevance_matrix(&positives, m);
            collector.push_hits(index_hits(top.view(), relevance.view())?);
        }
    }

    if register.needs_values() {
        let truth_col = ds
            .inter()
            .float_column(LABEL)
            .or_else(|_| ds.inter().float_column(RATING))
            .map_err(|_| EvalError::MissingTruth)?;
        let rows: Vec<usize> = phase
            .rows(split)
            .iter()
            .copied()
            .filter(|&r| truth_col[r].is_some())
            .collect();
        for chunk in rows.chunks(batch_size) {
            let batch = ds.inter_batch(chunk);
            let preds = model.predict(&batch)?;
            let truths: Vec<f64> = chunk.iter().map(|&r| truth_col[r].expect("filtered")).collect();
            collector.push_values(&preds, &truths);
        }
    }

    let all_users: std::collections::BTreeSet<u32> = ds.users().iter().copied().collect();
    let header = vec![
        ("setting".to_string(), opts.setting.clone()),
        ("phase".to_string(), phase_name(phase).to_string()),
        (
            "mask_history".to_string(),
            if masked { "on" } else { "off" }.to_string(),
        ),
        ("users".to_string(), candidates.users.len().to_string()),
        (
            "excluded_users".to_string(),
            (all_users.len() - candidates.users.len()).to_string(),
        ),
    ];
    collector.finish(register, header)
}
