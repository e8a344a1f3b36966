use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::loss::{bpr_loss, margin_loss, sigmoid};
use super::{
    id_column, LossKind, ModelError, ModelKind, ModelState, NamedArray, Recommender, Result, TrainConfig, TrainData,
    NEG_ITEM_ID,
};
use crate::atomic::{ITEM_ID, USER_ID};
use crate::dataset::{Batch, BatchColumn};
use crate::rng::{self, Purpose, RngState};

/// Matrix factorization trained on sampled (user, positive, negative)
/// triples with plain mini-batch SGD.
#[derive(Debug, Clone)]
pub struct BprModel {
    cfg: TrainConfig,
    user_emb: Array2<f64>,
    item_emb: Array2<f64>,
    epoch: usize,
    rng: rng::Rng,
}

/// Sparse gradient of the summed per-example objective.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BprGradient {
    pub users: BTreeMap<u32, Vec<f64>>,
    pub items: BTreeMap<u32, Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_scaled(acc: &mut [f64], x: &[f64], c: f64) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += c * v;
    }
}

impl BprModel {
    pub fn new(n_users: usize, n_items: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embedding_size;
        let mut rng = rng::stream(cfg.seed, Purpose::Training, 0);
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let user_emb = Array2::from_shape_simple_fn((n_users, d), || normal.sample(&mut rng));
        let item_emb = Array2::from_shape_simple_fn((n_items, d), || normal.sample(&mut rng));
        Ok(Self {
            cfg: cfg.clone(),
            user_emb,
            item_emb,
            epoch: 0,
            rng,
        })
    }

    pub fn user_embeddings(&self) -> &Array2<f64> {
        &self.user_emb
    }

    pub fn item_embeddings(&self) -> &Array2<f64> {
        &self.item_emb
    }

    fn user_row(&self, u: u32) -> &[f64] {
        self.user_emb.row(u as usize).to_slice().expect("standard layout")
    }

    fn item_row(&self, i: u32) -> &[f64] {
        self.item_emb.row(i as usize).to_slice().expect("standard layout")
    }

    fn check_ids(&self, users: &[u32], items: &[u32]) -> Result<()> {
        let bad_u = users.iter().find(|&&u| u as usize >= self.user_emb.nrows());
        let bad_i = items.iter().find(|&&i| i as usize >= self.item_emb.nrows());
        if let Some(id) = bad_u.or(bad_i) {
            return Err(ModelError::InvalidState(format!(
                "ID {id} is outside the embedding tables"
            )));
        }
        Ok(())
    }

    fn triples<'a>(&self, batch: &'a Batch) -> Result<(&'a [u32], &'a [u32], &'a [u32])> {
        let u = id_column(batch, USER_ID)?;
        let i = id_column(batch, ITEM_ID)?;
        let j = id_column(batch, NEG_ITEM_ID)?;
        if u.is_empty() {
            return Err(ModelError::LengthMismatch(0, 1));
        }
        self.check_ids(u, i)?;
        self.check_ids(u, j)?;
        Ok((u, i, j))
    }

    fn reg_term(&self, u: u32, i: u32, j: u32) -> f64 {
        let sq = |x: &[f64]| dot(x, x);
        0.5 * self.cfg.reg_weight * (sq(self.user_row(u)) + sq(self.item_row(i)) + sq(self.item_row(j)))
    }

    /// Loss and the gradient of the summed per-example objective over the
    /// batch; the mean-loss gradient is this divided by the batch size.
    pub fn loss_and_gradient(&self, batch: &Batch) -> Result<(f64, BprGradient)> {
        let (users, pos, neg) = self.triples(batch)?;
        let d = self.cfg.embedding_size;
        let lambda = self.cfg.reg_weight;
        let mut grad = BprGradient::default();
        let mut pos_scores = Vec::with_capacity(users.len());
        let mut neg_scores = Vec::with_capacity(users.len());
        let mut reg = 0.0;
        for ((&u, &i), &j) in users.iter().zip(pos).zip(neg) {
            let (pu, qi, qj) = (self.user_row(u), self.item_row(i), self.item_row(j));
            let xi = dot(pu, qi);
            let xj = dot(pu, qj);
            pos_scores.push(xi);
            neg_scores.push(xj);
            reg += self.reg_term(u, i, j);
            // derivative of the per-example ranking loss w.r.t. x_ui - x_uj
            let g = match self.cfg.loss {
                LossKind::Bpr => -sigmoid(xj - xi),
                LossKind::Margin(m) => {
                    if m - (xi - xj) > 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            };
            let gu = grad.users.entry(u).or_insert_with(|| vec![0.0; d]);
            for f in 0..d {
                gu[f] += g * (qi[f] - qj[f]) + lambda * pu[f];
            }
            add_scaled(grad.items.entry(i).or_insert_with(|| vec![0.0; d]), pu, g);
            add_scaled(grad.items.entry(i).or_default(), qi, lambda);
            add_scaled(grad.items.entry(j).or_insert_with(|| vec![0.0; d]), pu, -g);
            add_scaled(grad.items.entry(j).or_default(), qj, lambda);
        }
        let data_loss = match self.cfg.loss {
            LossKind::Bpr => bpr_loss(&pos_scores, &neg_scores)?,
            LossKind::Margin(m) => margin_loss(&pos_scores, &neg_scores, m)?,
        };
        Ok((data_loss + reg / users.len() as f64, grad))
    }

    fn apply(&mut self, grad: &BprGradient) {
        let lr = self.cfg.learning_rate;
        for (&u, g) in &grad.users {
            for (p, &x) in self.user_emb.row_mut(u as usize).iter_mut().zip(g) {
                *p -= lr * x;
            }
        }
        for (&i, g) in &grad.items {
            for (p, &x) in self.item_emb.row_mut(i as usize).iter_mut().zip(g) {
                *p -= lr * x;
            }
        }
    }

    /// Uniform negative outside the user's training items, or `None` when
    /// the user has interacted with every item.
    fn sample_negative(&mut self, data: &TrainData, user: u32) -> Option<u32> {
        let n = self.item_emb.nrows() as u32;
        if data.history.items(user).len() + 1 >= n as usize {
            return None;
        }
        loop {
            let j = self.rng.random_range(1..n);
            if !data.history.contains(user, j) {
                return Some(j);
            }
        }
    }

    pub fn from_state(state: &ModelState) -> Result<Self> {
        let n_users = state.hyper_usize("n_users")?;
        let n_items = state.hyper_usize("n_items")?;
        let cfg = TrainConfig {
            learning_rate: state.hyper("learning_rate")?,
            embedding_size: state.hyper_usize("embedding_size")?,
            reg_weight: state.hyper("reg_weight")?,
            batch_size: state.hyper_usize("batch_size")?,
            epochs: state.hyper_usize("epochs")?,
            patience: state.hyper_usize("patience")?,
            seed: 0,
            loss: match state.hyper("margin")? {
                m if m > 0.0 => LossKind::Margin(m),
                _ => LossKind::Bpr,
            },
        };
        let d = cfg.embedding_size;
        let shape_err = |_| ModelError::InvalidState("embedding table has the wrong size".into());
        let user_emb = Array2::from_shape_vec((n_users, d), state.array("user_emb")?.to_vec()).map_err(shape_err)?;
        let item_emb = Array2::from_shape_vec((n_items, d), state.array("item_emb")?.to_vec()).map_err(shape_err)?;
        let rng = state
            .rng
            .as_ref()
            .and_then(RngState::restore)
            .ok_or_else(|| ModelError::InvalidState("missing or invalid RNG state".into()))?;
        Ok(Self {
            cfg,
            user_emb,
            item_emb,
            epoch: state.epoch,
            rng,
        })
    }
}

impl Recommender for BprModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Bpr
    }

    fn n_items(&self) -> usize {
        self.item_emb.nrows()
    }

    fn calculate_loss(&self, batch: &Batch) -> Result<f64> {
        self.loss_and_gradient(batch).map(|(loss, _)| loss)
    }

    fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let users = id_column(batch, USER_ID)?;
        let items = id_column(batch, ITEM_ID)?;
        self.check_ids(users, items)?;
        Ok(users
            .iter()
            .zip(items)
            .map(|(&u, &i)| dot(self.user_row(u), self.item_row(i)))
            .collect())
    }

    fn full_sort_predict(&self, users: &[u32]) -> Result<Array2<f64>> {
        self.check_ids(users, &[])?;
        let m = self.item_emb.nrows();
        let mut out = Array2::zeros((users.len(), m));
        for (mut row, &u) in out.rows_mut().into_iter().zip(users) {
            let pu = self.user_row(u);
            for i in 0..m {
                row[i] = dot(pu, self.item_row(i as u32));
            }
        }
        Ok(out)
    }

    fn train_epoch(&mut self, data: &TrainData) -> Result<f64> {
        if data.is_empty() {
            return Err(ModelError::EmptyTrainSplit);
        }
        self.check_ids(&data.users, &data.items)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let mut users = Vec::with_capacity(chunk.len());
            let mut pos = Vec::with_capacity(chunk.len());
            let mut neg = Vec::with_capacity(chunk.len());
            for &r in chunk {
                let u = data.users[r];
                if let Some(j) = self.sample_negative(data, u) {
                    users.push(u);
                    pos.push(data.items[r]);
                    neg.push(j);
                }
            }
            if users.is_empty() {
                continue;
            }
            let batch = Batch::from_columns([
                (USER_ID, BatchColumn::Ids(users)),
                (ITEM_ID, BatchColumn::Ids(pos)),
                (NEG_ITEM_ID, BatchColumn::Ids(neg)),
            ])
            .expect("columns share a length");
            let (loss, grad) = self.loss_and_gradient(&batch)?;
            self.apply(&grad);
            total += loss;
            batches += 1;
        }
        self.epoch += 1;
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }

    fn epoch(&self) -> usize {
        self.epoch
    }

    fn state(&self) -> ModelState {
        let margin = match self.cfg.loss {
            LossKind::Bpr => 0.0,
            LossKind::Margin(m) => m,
        };
        ModelState {
            kind: ModelKind::Bpr,
            hyper: [
                ("n_users", self.user_emb.nrows() as f64),
                ("n_items", self.item_emb.nrows() as f64),
                ("learning_rate", self.cfg.learning_rate),
                ("embedding_size", self.cfg.embedding_size as f64),
                ("reg_weight", self.cfg.reg_weight),
                ("batch_size", self.cfg.batch_size as f64),
                ("epochs", self.cfg.epochs as f64),
                ("patience", self.cfg.patience as f64),
                ("margin", margin),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            arrays: vec![
                NamedArray::new("user_emb", self.user_emb.iter().copied().collect()),
                NamedArray::new("item_emb", self.item_emb.iter().copied().collect()),
            ],
            epoch: self.epoch,
            rng: Some(RngState::capture(&self.rng)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::from_pairs;
    use rand::SeedableRng;

    fn cfg(d: usize) -> TrainConfig {
        TrainConfig {
            embedding_size: d,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    fn random_batch(rng: &mut impl rand::Rng, n_users: u32, n_items: u32, len: usize) -> Batch {
        let col = |rng: &mut dyn rand::RngCore, lo: u32, hi: u32| -> Vec<u32> {
            (0..len).map(|_| rng.random_range(lo..hi)).collect()
        };
        let u = col(rng, 1, n_users);
        let i = col(rng, 1, n_items);
        let j = col(rng, 1, n_items);
        Batch::from_columns([
            (USER_ID, BatchColumn::Ids(u)),
            (ITEM_ID, BatchColumn::Ids(i)),
            (NEG_ITEM_ID, BatchColumn::Ids(j)),
        ])
        .unwrap()
    }

    /// Central differences of `calculate_loss` against the analytic mean
    /// gradient, one random coordinate per point.
    fn check_gradient(loss: LossKind) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for point in 0..100 {
            let mut c = cfg(4);
            c.reg_weight = 0.1;
            c.loss = loss;
            c.seed = point;
            let mut model = BprModel::new(6, 8, &c).unwrap();
            model.user_emb.mapv_inplace(|x| x * 50.0);
            model.item_emb.mapv_inplace(|x| x * 50.0);
            let batch = random_batch(&mut rng, 6, 8, 5);
            let (_, grad) = model.loss_and_gradient(&batch).unwrap();
            let n = batch.len() as f64;
            let h = 1e-6;
            let on_user = rng.random_bool(0.5);
            let (table, key) = if on_user {
                let u = *grad.users.keys().nth(rng.random_range(0..grad.users.len())).unwrap();
                (0, u)
            } else {
                let i = *grad.items.keys().nth(rng.random_range(0..grad.items.len())).unwrap();
                (1, i)
            };
            let f = rng.random_range(0..4);
            let analytic = if table == 0 {
                grad.users[&key][f]
            } else {
                grad.items[&key][f]
            } / n;
            let eval = |delta: f64| {
                let mut m = model.clone();
                let emb = if table == 0 { &mut m.user_emb } else { &mut m.item_emb };
                emb[[key as usize, f]] += delta;
                m.calculate_loss(&batch).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let scale = analytic.abs().max(fd.abs()).max(1e-6);
            assert!(
                (fd - analytic).abs() / scale < 1e-5,
                "point {point}: {fd} vs {analytic}"
            );
        }
    }

    #[test]
    fn bpr_gradient_matches_finite_differences() {
        check_gradient(LossKind::Bpr);
    }

    #[test]
    fn margin_gradient_matches_finite_differences() {
        check_gradient(LossKind::Margin(0.5));
    }

    fn data_of(pairs: &[(&str, &str)]) -> TrainData {
        let ds = from_pairs(pairs);
        let rows: Vec<usize> = (0..ds.len()).collect();
        TrainData::new(&ds, &rows)
    }

    #[test]
    fn single_pair_score_increases() {
        // the one pair plus a second item so that a negative exists
        let data = data_of(&[("a", "x"), ("b", "y")]);
        let mut c = cfg(1);
        c.learning_rate = 0.5;
        let mut model = BprModel::new(data.n_users, data.n_items, &c).unwrap();
        let score = |m: &BprModel| m.user_row(1)[0] * m.item_row(1)[0];
        let mut last = score(&model);
        for _ in 0..10 {
            model.train_epoch(&data).unwrap();
            let s = score(&model);
            assert!(s > last, "{s} <= {last}");
            last = s;
        }
    }

    #[test]
    fn heavy_l2_shrinks_norms() {
        let data = data_of(&[("a", "x"), ("a", "y"), ("b", "y"), ("b", "z"), ("c", "w")]);
        let mut c = cfg(3);
        c.reg_weight = 1e3;
        c.learning_rate = 1e-4;
        let mut model = BprModel::new(data.n_users, data.n_items, &c).unwrap();
        let norm = |m: &BprModel| m.user_emb.iter().chain(m.item_emb.iter()).map(|x| x * x).sum::<f64>();
        let mut last = norm(&model);
        for _ in 0..10 {
            model.train_epoch(&data).unwrap();
            let n = norm(&model);
            assert!(n < last);
            last = n;
        }
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let data = data_of(&[("a", "x"), ("a", "y"), ("b", "y"), ("b", "z"), ("c", "w"), ("c", "x")]);
        let c = cfg(4);
        let mut straight = BprModel::new(data.n_users, data.n_items, &c).unwrap();
        let mut first = BprModel::new(data.n_users, data.n_items, &c).unwrap();
        for _ in 0..3 {
            straight.train_epoch(&data).unwrap();
            first.train_epoch(&data).unwrap();
        }
        assert_eq!(straight.state(), first.state());
        let mut resumed = BprModel::from_state(&first.state()).unwrap();
        straight.train_epoch(&data).unwrap();
        resumed.train_epoch(&data).unwrap();
        assert_eq!(straight.state(), resumed.state());
        assert_eq!(resumed.epoch(), 4);
    }

    #[test]
    fn predict_agrees_with_full_sort() {
        let c = cfg(5);
        let model = BprModel::new(4, 7, &c).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let batch = random_batch(&mut rng, 4, 7, 30);
        let scores = model.predict(&batch).unwrap();
        let users = batch.ids(USER_ID).unwrap();
        let full = model.full_sort_predict(users).unwrap();
        for (k, (&i, s)) in batch.ids(ITEM_ID).unwrap().iter().zip(&scores).enumerate() {
            assert_eq!(full[[k, i as usize]], *s);
        }
    }
}
