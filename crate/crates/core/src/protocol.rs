//! Evaluation protocols: the Group, Order, Split and NegSample steps and
//! their composition into settings such as `RO_RS,full` or `TO_LS,uni100`.
//!
//! Rows are grouped per user, ordered inside each group (seeded shuffle or
//! ascending timestamp), then split by ratio or leave-one-out. Ranking
//! candidates are either the whole catalog or the test positives plus `N`
//! uniformly sampled negatives per positive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::rng::{self, Purpose};

pub const DEFAULT_SEED: u64 = 2020;
pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("cannot parse evaluation setting `{0}`; expected (RO|TO)_(RS|LS),(full|uni<N>)")]
    BadSetting(String),
    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    BadRatios(Vec<f64>),
    #[error("temporal ordering requires a `timestamp` float field")]
    MissingTimestamp,
    #[error("interaction row {0} has no timestamp")]
    MissingTimestampValue(usize),
    #[error("user `{user}` has {eligible} eligible negatives but {needed} are required")]
    TooFewNegatives {
        user: String,
        eligible: usize,
        needed: usize,
    },
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderMode {
    /// Seeded uniform shuffle within each user group.
    Random,
    /// Ascending timestamp, stable on ties.
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitMode {
    Ratio { train: f64, valid: f64, test: f64 },
    LeaveOneOut,
}

impl SplitMode {
    pub fn ratio(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = [train, valid, test];
        if r.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ProtocolError::BadRatios(r.to_vec()));
        }
        Ok(SplitMode::Ratio { train, valid, test })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateMode {
    Full,
    /// `N` uniformly sampled negatives per test positive.
    Uniform(usize),
}

/// A fully resolved evaluation setting.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPlan {
    pub ordering: OrderMode,
    pub splitting: SplitMode,
    pub candidates: CandidateMode,
    pub group_by_user: bool,
    pub seed: u64,
}

impl EvalPlan {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_ratios(mut self, ratios: [f64; 3]) -> Result<Self> {
        if let SplitMode::Ratio { .. } = self.splitting {
            self.splitting = SplitMode::ratio(ratios[0], ratios[1], ratios[2])?;
        }
        Ok(self)
    }
}

impl FromStr for EvalPlan {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        parse_eval_setting(s)
    }
}

impl fmt::Display for EvalPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order = match self.ordering {
            OrderMode::Random => "RO",
            OrderMode::Temporal => "TO",
        };
        let split = match self.splitting {
            SplitMode::Ratio { .. } => "RS",
            SplitMode::LeaveOneOut => "LS",
        };
        match self.candidates {
            CandidateMode::Full => write!(f, "{order}_{split},full"),
            CandidateMode::Uniform(n) => write!(f, "{order}_{split},uni{n}"),
        }
    }
}

/// Parses `(RO|TO)_(RS|LS),(full|uni<N>)`. Ratio splits default to 8:1:1.
pub fn parse_eval_setting(spec: &str) -> Result<EvalPlan> {
    let bad = || ProtocolError::BadSetting(spec.to_string());
    let (split_part, cand_part) = spec.trim().split_once(',').ok_or_else(bad)?;
    let (order, split) = split_part.trim().split_once('_').ok_or_else(bad)?;
    let ordering = match order {
        "RO" => OrderMode::Random,
        "TO" => OrderMode::Temporal,
        _ => return Err(bad()),
    };
    let splitting = match split {
        "RS" => SplitMode::ratio(DEFAULT_RATIOS[0], DEFAULT_RATIOS[1], DEFAULT_RATIOS[2])?,
        "LS" => SplitMode::LeaveOneOut,
        _ => return Err(bad()),
    };
    let candidates = match cand_part.trim() {
        "full" => CandidateMode::Full,
        other => {
            let n = other
                .strip_prefix("uni")
                .filter(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n > 0)
                .ok_or_else(bad)?;
            CandidateMode::Uniform(n)
        }
    };
    Ok(EvalPlan {
        ordering,
        splitting,
        candidates,
        group_by_user: true,
        seed: DEFAULT_SEED,
    })
}

/// Interaction rows of one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserGroup {
    pub user: u32,
    pub rows: Vec<usize>,
}

/// Groups interaction rows per user, users ascending, rows in file order.
pub fn group_by_user(ds: &Dataset) -> Vec<UserGroup> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (row, &user) in ds.users().iter().enumerate() {
        groups.entry(user).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|(user, rows)| UserGroup { user, rows })
        .collect()
}

/// Orders the rows inside every group.
pub fn order_rows(ds: &Dataset, groups: &[UserGroup], mode: OrderMode, seed: u64) -> Result<Vec<UserGroup>> {
    match mode {
        OrderMode::Random => Ok(groups
            .iter()
            .map(|g| {
                let mut rows = g.rows.clone();
                rows.shuffle(&mut rng::stream(seed, Purpose::Ordering, u64::from(g.user)));
                UserGroup { user: g.user, rows }
            })
            .collect()),
        OrderMode::Temporal => {
            let ts = ds.timestamps().ok_or(ProtocolError::MissingTimestamp)?;
            groups
                .iter()
                .map(|g| {
                    let mut keyed = g
                        .rows
                        .iter()
                        .map(|&r| ts[r].map(|t| (t, r)).ok_or(ProtocolError::MissingTimestampValue(r)))
                        .collect::<Result<Vec<_>>>()?;
                    // stable: equal timestamps keep file order
                    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
                    Ok(UserGroup {
                        user: g.user,
                        rows: keyed.into_iter().map(|(_, r)| r).collect(),
                    })
                })
                .collect()
        }
    }
}

/// Row indices of each part; together they partition the grouped rows.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitResult {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-group sizes `(train, valid, test)` of a ratio split: floor for train
/// and valid, remainder to test. A `1e-9` slack absorbs products such as
/// `0.7 * 10 = 6.999...`.
pub fn ratio_sizes(group_len: usize, train: f64, valid: f64) -> (usize, usize, usize) {
    let g = group_len as f64;
    let n_train = ((train * g + 1e-9).floor() as usize).min(group_len);
    let n_valid = ((valid * g + 1e-9).floor() as usize).min(group_len - n_train);
    (n_train, n_valid, group_len - n_train - n_valid)
}

pub fn split_rows(groups: &[UserGroup], splitting: SplitMode) -> Result<SplitResult> {
    let mut out = SplitResult::default();
    match splitting {
        SplitMode::Ratio { train, valid, test } => {
            SplitMode::ratio(train, valid, test)?;
            for g in groups {
                let (n_train, n_valid, _) = ratio_sizes(g.rows.len(), train, valid);
                out.train.extend_from_slice(&g.rows[..n_train]);
                out.valid.extend_from_slice(&g.rows[n_train..n_train + n_valid]);
                out.test.extend_from_slice(&g.rows[n_train + n_valid..]);
            }
        }
        SplitMode::LeaveOneOut => {
            for g in groups {
                let rows = &g.rows;
                match rows.len() {
                    0 => {}
                    1 => out.train.push(rows[0]),
                    2 => {
                        out.train.push(rows[0]);
                        out.test.push(rows[1]);
                    }
                    n => {
                        out.train.extend_from_slice(&rows[..n - 2]);
                        out.valid.push(rows[n - 2]);
                        out.test.push(rows[n - 1]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Group, order and split in one go.
pub fn split_dataset(ds: &Dataset, plan: &EvalPlan) -> Result<SplitResult> {
    let groups = group_by_user(ds);
    let ordered = order_rows(ds, &groups, plan.ordering, plan.seed)?;
    split_rows(&ordered, plan.splitting)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Valid,
    Test,
}

impl Phase {
    pub fn rows(self, split: &SplitResult) -> &[usize] {
        match self {
            Phase::Valid => &split.valid,
            Phase::Test => &split.test,
        }
    }

    /// Rows a user is known to have interacted with before this phase.
    pub fn history_rows(self, split: &SplitResult) -> Vec<usize> {
        match self {
            Phase::Valid => split.train.clone(),
            Phase::Test => split.train.iter().chain(&split.valid).copied().collect(),
        }
    }
}

/// Ranking candidates of one evaluated user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserCandidates {
    pub user: u32,
    /// Distinct positives of the phase, ascending.
    pub positives: Vec<u32>,
    /// For sampled mode, the negatives drawn for each positive (parallel to
    /// `positives`); empty in full mode.
    pub negatives: Vec<Vec<u32>>,
}

impl UserCandidates {
    /// Sampled mode: positives and all their negatives, ascending, distinct.
    pub fn sampled_items(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .positives
            .iter()
            .chain(self.negatives.iter().flatten())
            .copied()
            .collect();
        set.into_iter().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub mode: CandidateMode,
    /// Item ID space size including the padding ID.
    pub n_items: usize,
    pub users: Vec<UserCandidates>,
}

impl CandidateSet {
    /// Candidate items of user entry `idx`: every real item in full mode,
    /// positives plus sampled negatives otherwise.
    pub fn items_of(&self, idx: usize) -> Vec<u32> {
        match self.mode {
            CandidateMode::Full => (1..self.n_items as u32).collect(),
            CandidateMode::Uniform(_) => self.users[idx].sampled_items(),
        }
    }
}

/// Per-user item sets of the given rows, users ascending.
pub fn items_by_user(ds: &Dataset, rows: &[usize]) -> BTreeMap<u32, BTreeSet<u32>> {
    let mut map: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for &r in rows {
        map.entry(ds.users()[r]).or_default().insert(ds.items()[r]);
    }
    map
}

/// Builds the candidates of every user with at least one positive in
/// `phase`. Sampled negatives exclude every item the user interacted with
/// in any split, and are drawn without replacement from a stream derived
/// from `(seed, user, phase)`.
pub fn build_candidates(
    ds: &Dataset,
    split: &SplitResult,
    phase: Phase,
    mode: CandidateMode,
    seed: u64,
) -> Result<CandidateSet> {
    let positives = items_by_user(ds, phase.rows(split));
    let n_items = ds.n_items();
    let known = match mode {
        CandidateMode::Full => BTreeMap::new(),
        CandidateMode::Uniform(_) => {
            let all: Vec<usize> = split
                .train
                .iter()
                .chain(&split.valid)
                .chain(&split.test)
                .copied()
                .collect();
            items_by_user(ds, &all)
        }
    };
    let phase_id = match phase {
        Phase::Valid => 0,
        Phase::Test => 1,
    };
    let users = positives
        .into_iter()
        .map(|(user, pos)| {
            let positives: Vec<u32> = pos.into_iter().collect();
            let negatives = match mode {
                CandidateMode::Full => Vec::new(),
                CandidateMode::Uniform(n) => {
                    let known = &known[&user];
                    let eligible: Vec<u32> = (1..n_items as u32).filter(|i| !known.contains(i)).collect();
                    if eligible.len() < n {
                        let name = ds
                            .vocab(crate::atomic::USER_ID)
                            .and_then(|v| v.token(user))
                            .unwrap_or("?")
                            .to_string();
                        return Err(ProtocolError::TooFewNegatives {
                            user: name,
                            eligible: eligible.len(),
                            needed: n,
                        });
                    }
                    let mut rng = rng::stream(seed, Purpose::NegativeSampling, u64::from(user) * 2 + phase_id);
                    positives
                        .iter()
                        .map(|_| {
                            index::sample(&mut rng, eligible.len(), n)
                                .into_iter()
                                .map(|k| eligible[k])
                                .collect()
                        })
                        .collect()
                }
            };
            Ok(UserCandidates {
                user,
                positives,
                negatives,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet { mode, n_items, users })
}
