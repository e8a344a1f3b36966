//! The model interface and the model zoo.
//!
//! Every model implements [`Recommender`]: `calculate_loss` and `predict`
//! over a [`Batch`], plus `full_sort_predict` for scoring whole catalogs in
//! the evaluation fast path. Iterative models (BPR, FM) learn through
//! `train_epoch`; closed-form models (popularity, ItemKNN, EASE) are fitted
//! by their constructor, report a loss of 0.0 and ignore `train_epoch`.

mod bpr;
pub mod checkpoint;
mod ease;
mod fm;
mod history;
mod itemknn;
pub mod loss;
mod pop;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Batch, Dataset, LABEL};
use crate::rng::RngState;

pub use bpr::{BprGradient, BprModel};
pub use checkpoint::{load_state, save_state, CheckpointMeta, FORMAT_VERSION};
pub use ease::EaseModel;
pub use fm::{pairwise_term, FmGradient, FmModel};
pub use history::UserHistory;
pub use itemknn::ItemKnnModel;
pub use pop::PopularityModel;

pub const NEG_ITEM_ID: &str = "neg_item_id";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("batch is missing column `{0}`")]
    MissingColumn(String),
    #[error("training split is empty")]
    EmptyTrainSplit,
    #[error("interactions have no `label` column")]
    MissingLabel,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid model state: {0}")]
    InvalidState(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidConfig(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupted checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint i/o on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Pop,
    ItemKnn,
    Bpr,
    Ease,
    Fm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pop => "Pop",
            ModelKind::ItemKnn => "ItemKNN",
            ModelKind::Bpr => "BPR",
            ModelKind::Ease => "EASE",
            ModelKind::Fm => "FM",
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, ModelKind::Bpr | ModelKind::Fm)
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pop" | "popularity" => Ok(ModelKind::Pop),
            "itemknn" => Ok(ModelKind::ItemKnn),
            "bpr" => Ok(ModelKind::Bpr),
            "ease" => Ok(ModelKind::Ease),
            "fm" => Ok(ModelKind::Fm),
            _ => Err(ModelError::UnknownModel(s.to_string())),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    Bpr,
    /// Hinge on the score difference: `max(0, margin - (pos - neg))`.
    Margin(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub embedding_size: usize,
    pub reg_weight: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            embedding_size: 64,
            reg_weight: 1e-4,
            batch_size: 256,
            epochs: 50,
            patience: 10,
            seed: crate::protocol::DEFAULT_SEED,
            loss: LossKind::Bpr,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.embedding_size == 0 || self.batch_size == 0 || self.epochs == 0 {
            return bad("embedding_size, batch_size and epochs must be positive");
        }
        if !(self.reg_weight >= 0.0) {
            return bad("reg_weight must be non-negative");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if let LossKind::Margin(m) = self.loss {
            if !(m > 0.0) {
                return bad("margin must be positive");
            }
        }
        Ok(())
    }
}

/// Training interactions in the form the trainers consume.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub n_users: usize,
    pub n_items: usize,
    pub users: Vec<u32>,
    pub items: Vec<u32>,
    pub labels: Option<Vec<f64>>,
    pub history: UserHistory,
}

impl TrainData {
    pub fn new(ds: &Dataset, rows: &[usize]) -> Self {
        let users: Vec<u32> = rows.iter().map(|&r| ds.users()[r]).collect();
        let items: Vec<u32> = rows.iter().map(|&r| ds.items()[r]).collect();
        let labels = ds
            .inter()
            .float_column(LABEL)
            .ok()
            .map(|col| rows.iter().map(|&r| col[r].unwrap_or(0.0)).collect());
        let history = UserHistory::from_pairs(ds.n_users(), &users, &items);
        Self {
            n_users: ds.n_users(),
            n_items: ds.n_items(),
            users,
            items,
            labels,
            history,
        }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// A flat named float array; integer data is stored exactly as f64.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            data,
        }
    }
}

/// Everything needed to rebuild a model bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub kind: ModelKind,
    pub hyper: BTreeMap<String, f64>,
    pub arrays: Vec<NamedArray>,
    pub epoch: usize,
    pub rng: Option<RngState>,
}

impl ModelState {
    pub fn array(&self, name: &str) -> Result<&[f64]> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.data.as_slice())
            .ok_or_else(|| ModelError::InvalidState(format!("missing array `{name}`")))
    }

    pub fn hyper(&self, name: &str) -> Result<f64> {
        self.hyper
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::InvalidState(format!("missing hyperparameter `{name}`")))
    }

    pub fn hyper_usize(&self, name: &str) -> Result<usize> {
        let v = self.hyper(name)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(ModelError::InvalidState(format!("`{name}` = {v} is not a count")));
        }
        Ok(v as usize)
    }
}

pub trait Recommender: Send + Sync {
    fn kind(&self) -> ModelKind;

    /// Size of the item ID space including the padding ID.
    fn n_items(&self) -> usize;

    /// Training objective on a batch. Closed-form models return 0.0.
    fn calculate_loss(&self, batch: &Batch) -> Result<f64>;

    /// One score per `(user_id, item_id)` row of the batch.
    fn predict(&self, batch: &Batch) -> Result<Vec<f64>>;

    /// Scores of every item for each user, `users.len() x n_items`.
    fn full_sort_predict(&self, users: &[u32]) -> Result<Array2<f64>>;

    /// Runs one training epoch and returns its mean batch loss.
    fn train_epoch(&mut self, _data: &TrainData) -> Result<f64> {
        Ok(0.0)
    }

    /// Completed training epochs.
    fn epoch(&self) -> usize {
        0
    }

    fn state(&self) -> ModelState;
}

/// Rebuilds a model from its saved state.
pub fn restore(state: &ModelState) -> Result<Box<dyn Recommender>> {
    Ok(match state.kind {
        ModelKind::Pop => Box::new(PopularityModel::from_state(state)?),
        ModelKind::ItemKnn => Box::new(ItemKnnModel::from_state(state)?),
        ModelKind::Bpr => Box::new(BprModel::from_state(state)?),
        ModelKind::Ease => Box::new(EaseModel::from_state(state)?),
        ModelKind::Fm => Box::new(FmModel::from_state(state)?),
    })
}

/// Model hyperparameters that are not part of [`TrainConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub knn_k: usize,
    pub knn_shrink: f64,
    pub ease_l2: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            knn_k: 100,
            knn_shrink: 0.0,
            ease_l2: 250.0,
        }
    }
}

/// Builds and (for closed-form models) fits a model on the training rows.
pub fn build_model(
    kind: ModelKind,
    ds: &Dataset,
    data: &TrainData,
    cfg: &TrainConfig,
    params: &ModelParams,
) -> Result<Box<dyn Recommender>> {
    if data.is_empty() {
        return Err(ModelError::EmptyTrainSplit);
    }
    Ok(match kind {
        ModelKind::Pop => Box::new(PopularityModel::fit(data)),
        ModelKind::ItemKnn => Box::new(ItemKnnModel::fit(data, params.knn_k, params.knn_shrink)?),
        ModelKind::Bpr => Box::new(BprModel::new(data.n_users, data.n_items, cfg)?),
        ModelKind::Ease => Box::new(EaseModel::fit(data, params.ease_l2)?),
        ModelKind::Fm => {
            if data.labels.is_none() {
                return Err(ModelError::MissingLabel);
            }
            Box::new(FmModel::new(ds, cfg)?)
        }
    })
}

pub(crate) fn id_column<'a>(batch: &'a Batch, name: &str) -> Result<&'a [u32]> {
    batch
        .ids(name)
        .ok_or_else(|| ModelError::MissingColumn(name.to_string()))
}

pub(crate) fn ids_to_f64<I: IntoIterator<Item = u32>>(ids: I) -> Vec<f64> {
    ids.into_iter().map(f64::from).collect()
}

pub(crate) fn f64_to_ids(data: &[f64]) -> Result<Vec<u32>> {
    data.iter()
        .map(|&x| {
            if x >= 0.0 && x <= f64::from(u32::MAX) && x.fract() == 0.0 {
                Ok(x as u32)
            } else {
                Err(ModelError::InvalidState(format!("{x} is not an ID")))
            }
        })
        .collect()
}
