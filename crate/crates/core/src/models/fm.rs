use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use super::loss::{sigmoid, softplus};
use super::{
    f64_to_ids, id_column, ids_to_f64, LossKind, ModelError, ModelKind, ModelState, NamedArray, Recommender, Result,
    TrainConfig, TrainData,
};
use crate::atomic::{ITEM_ID, USER_ID};
use crate::dataset::{Batch, BatchColumn, Dataset, EncodedColumn, EncodedTable, LABEL, PAD_ID};
use crate::rng::{self, Purpose, RngState};

/// Sparse feature vectors of the users or of the items, in CSR form.
#[derive(Debug, Clone, PartialEq)]
struct FeatureRows {
    offsets: Vec<usize>,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl FeatureRows {
    fn from_lists(lists: Vec<Vec<(u32, f64)>>) -> Self {
        let mut offsets = vec![0];
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for list in lists {
            for (k, x) in list {
                idx.push(k);
                val.push(x);
            }
            offsets.push(idx.len());
        }
        Self { offsets, idx, val }
    }

    fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    fn row(&self, r: u32) -> (&[u32], &[f64]) {
        let range = self.offsets[r as usize]..self.offsets[r as usize + 1];
        (&self.idx[range.clone()], &self.val[range])
    }

    fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        vec![
            NamedArray::new(
                format!("{prefix}.offsets"),
                self.offsets.iter().map(|&o| o as f64).collect(),
            ),
            NamedArray::new(format!("{prefix}.idx"), ids_to_f64(self.idx.iter().copied())),
            NamedArray::new(format!("{prefix}.val"), self.val.clone()),
        ]
    }

    fn from_arrays(state: &ModelState, prefix: &str, n_features: usize) -> Result<Self> {
        let offsets: Vec<usize> = f64_to_ids(state.array(&format!("{prefix}.offsets"))?)?
            .into_iter()
            .map(|o| o as usize)
            .collect();
        let idx = f64_to_ids(state.array(&format!("{prefix}.idx"))?)?;
        let val = state.array(&format!("{prefix}.val"))?.to_vec();
        let ok = offsets.first() == Some(&0)
            && offsets.windows(2).all(|w| w[0] <= w[1])
            && offsets.last() == Some(&idx.len())
            && idx.len() == val.len()
            && idx.iter().all(|&k| (k as usize) < n_features);
        if !ok {
            return Err(ModelError::InvalidState(format!("bad feature table `{prefix}`")));
        }
        Ok(Self { offsets, idx, val })
    }
}

/// Features of one side: a one-hot ID block followed by one block per
/// field of the side's feature table. Returns the rows and the next free
/// feature index.
fn side_features(table: Option<&EncodedTable>, key: &str, n: usize, base: usize) -> (FeatureRows, usize) {
    let mut lists: Vec<Vec<(u32, f64)>> = (0..n).map(|id| vec![((base + id) as u32, 1.0)]).collect();
    let mut next = base + n;
    if let Some(table) = table {
        let Ok(keys) = table.token_column(key) else {
            return (FeatureRows::from_lists(lists), next);
        };
        // the first row of an ID wins
        let mut row_of: Vec<Option<usize>> = vec![None; n];
        for (r, k) in keys.iter().enumerate() {
            if let Some(k) = *k {
                let slot = &mut row_of[k as usize];
                slot.get_or_insert(r);
            }
        }
        for (spec, col) in table.schema().iter().zip(table.columns()) {
            if spec.name == key {
                continue;
            }
            let field_base = next;
            match col {
                EncodedColumn::Token(v) => {
                    let width = v.iter().flatten().max().map_or(0, |&m| m as usize + 1);
                    for (id, row) in row_of.iter().enumerate() {
                        if let Some(Some(t)) = row.map(|r| v[r]) {
                            if t != PAD_ID {
                                lists[id].push(((field_base + t as usize) as u32, 1.0));
                            }
                        }
                    }
                    next += width;
                }
                EncodedColumn::TokenSeq(v) => {
                    let width = v.iter().flatten().flatten().max().map_or(0, |&m| m as usize + 1);
                    for (id, row) in row_of.iter().enumerate() {
                        if let Some(Some(seq)) = row.map(|r| &v[r]) {
                            let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
                            for &t in seq.iter().filter(|&&t| t != PAD_ID) {
                                *counts.entry(t).or_default() += 1.0;
                            }
                            let total: f64 = counts.values().sum();
                            for (t, c) in counts {
                                lists[id].push(((field_base + t as usize) as u32, c / total));
                            }
                        }
                    }
                    next += width;
                }
                EncodedColumn::Float(v) => {
                    for (id, row) in row_of.iter().enumerate() {
                        if let Some(Some(x)) = row.map(|r| v[r]) {
                            if x.is_finite() {
                                lists[id].push((field_base as u32, x));
                            }
                        }
                    }
                    next += 1;
                }
                EncodedColumn::FloatSeq(_) => {}
            }
        }
    }
    (FeatureRows::from_lists(lists), next)
}

/// `½ Σ_f [(Σ_k v_kf x_k)² − Σ_k v_kf² x_k²]` over the given features.
pub fn pairwise_term(v: &Array2<f64>, idx: &[u32], val: &[f64]) -> f64 {
    let mut total = 0.0;
    for f in 0..v.ncols() {
        let mut s = 0.0;
        let mut sq = 0.0;
        for (&k, &x) in idx.iter().zip(val) {
            let t = v[[k as usize, f]] * x;
            s += t;
            sq += t * t;
        }
        total += s * s - sq;
    }
    0.5 * total
}

/// Sparse gradient of the summed per-example objective.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FmGradient {
    pub w0: f64,
    pub w: BTreeMap<u32, f64>,
    pub v: BTreeMap<u32, Vec<f64>>,
}

/// Second-order factorization machine over user, item and side features,
/// trained with logistic loss on the interaction labels.
#[derive(Debug, Clone)]
pub struct FmModel {
    cfg: TrainConfig,
    w0: f64,
    w: Vec<f64>,
    v: Array2<f64>,
    users: FeatureRows,
    items: FeatureRows,
    epoch: usize,
    rng: rng::Rng,
}

impl FmModel {
    pub fn new(ds: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if ds.inter().float_column(LABEL).is_err() {
            return Err(ModelError::MissingLabel);
        }
        let (users, next) = side_features(ds.user_features(), USER_ID, ds.n_users(), 0);
        let (items, n_features) = side_features(ds.item_features(), ITEM_ID, ds.n_items(), next);
        let mut rng = rng::stream(cfg.seed, Purpose::Training, 0);
        let normal = Normal::new(0.0, 0.01).expect("valid normal");
        let v = Array2::from_shape_simple_fn((n_features, cfg.embedding_size), || normal.sample(&mut rng));
        Ok(Self {
            cfg: cfg.clone(),
            w0: 0.0,
            w: vec![0.0; n_features],
            v,
            users,
            items,
            epoch: 0,
            rng,
        })
    }

    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    pub fn factors(&self) -> &Array2<f64> {
        &self.v
    }

    /// Features of the pair `(u, i)`; user and item blocks never overlap.
    pub fn pair_features(&self, u: u32, i: u32) -> (Vec<u32>, Vec<f64>) {
        let (ui, uv) = self.users.row(u);
        let (ii, iv) = self.items.row(i);
        (
            ui.iter().chain(ii).copied().collect(),
            uv.iter().chain(iv).copied().collect(),
        )
    }

    /// Raw model output `ŷ` before the logistic link.
    pub fn logit(&self, u: u32, i: u32) -> f64 {
        let (idx, val) = self.pair_features(u, i);
        let linear: f64 = idx.iter().zip(&val).map(|(&k, &x)| self.w[k as usize] * x).sum();
        self.w0 + linear + pairwise_term(&self.v, &idx, &val)
    }

    fn check_pairs(&self, users: &[u32], items: &[u32]) -> Result<()> {
        let bad_u = users.iter().find(|&&u| u as usize >= self.users.rows());
        let bad_i = items.iter().find(|&&i| i as usize >= self.items.rows());
        if let Some(id) = bad_u.or(bad_i) {
            return Err(ModelError::InvalidState(format!("ID {id} has no feature row")));
        }
        Ok(())
    }

    pub fn loss_and_gradient(&self, batch: &Batch) -> Result<(f64, FmGradient)> {
        let users = id_column(batch, USER_ID)?;
        let items = id_column(batch, ITEM_ID)?;
        let labels = batch.floats(LABEL).ok_or(ModelError::MissingLabel)?;
        if users.is_empty() {
            return Err(ModelError::LengthMismatch(0, 1));
        }
        self.check_pairs(users, items)?;
        let d = self.cfg.embedding_size;
        let lambda = self.cfg.reg_weight;
        let mut grad = FmGradient::default();
        let mut total = 0.0;
        let mut s = vec![0.0; d];
        for ((&u, &i), &y) in users.iter().zip(items).zip(labels) {
            let y = if y.is_nan() { 0.0 } else { y };
            let (idx, val) = self.pair_features(u, i);
            let yhat = self.logit(u, i);
            total += softplus(yhat) - y * yhat;
            let g = sigmoid(yhat) - y;
            s.fill(0.0);
            for (&k, &x) in idx.iter().zip(&val) {
                for (f, sf) in s.iter_mut().enumerate() {
                    *sf += self.v[[k as usize, f]] * x;
                }
            }
            grad.w0 += g;
            for (&k, &x) in idx.iter().zip(&val) {
                let wk = self.w[k as usize];
                total += 0.5 * lambda * wk * wk;
                *grad.w.entry(k).or_default() += g * x + lambda * wk;
                let gv = grad.v.entry(k).or_insert_with(|| vec![0.0; d]);
                for f in 0..d {
                    let vkf = self.v[[k as usize, f]];
                    total += 0.5 * lambda * vkf * vkf;
                    gv[f] += g * x * (s[f] - vkf * x) + lambda * vkf;
                }
            }
        }
        Ok((total / users.len() as f64, grad))
    }

    fn apply(&mut self, grad: &FmGradient) {
        let lr = self.cfg.learning_rate;
        self.w0 -= lr * grad.w0;
        for (&k, &g) in &grad.w {
            self.w[k as usize] -= lr * g;
        }
        for (&k, g) in &grad.v {
            for (p, &x) in self.v.row_mut(k as usize).iter_mut().zip(g) {
                *p -= lr * x;
            }
        }
    }

    /// Per-row linear-plus-self-interaction term and factor sum of one side.
    fn side_summary(&self, rows: &FeatureRows, r: u32) -> (f64, Vec<f64>) {
        let (idx, val) = rows.row(r);
        let linear: f64 = idx.iter().zip(val).map(|(&k, &x)| self.w[k as usize] * x).sum();
        let mut s = vec![0.0; self.v.ncols()];
        for (&k, &x) in idx.iter().zip(val) {
            for (f, sf) in s.iter_mut().enumerate() {
                *sf += self.v[[k as usize, f]] * x;
            }
        }
        (linear + pairwise_term(&self.v, idx, val), s)
    }

    pub fn from_state(state: &ModelState) -> Result<Self> {
        let n_features = state.hyper_usize("n_features")?;
        let d = state.hyper_usize("embedding_size")?;
        let cfg = TrainConfig {
            learning_rate: state.hyper("learning_rate")?,
            embedding_size: d,
            reg_weight: state.hyper("reg_weight")?,
            batch_size: state.hyper_usize("batch_size")?,
            epochs: state.hyper_usize("epochs")?,
            patience: state.hyper_usize("patience")?,
            seed: 0,
            loss: LossKind::Bpr,
        };
        let w0 = match state.array("w0")? {
            [x] => *x,
            _ => return Err(ModelError::InvalidState("`w0` must hold one value".into())),
        };
        let w = state.array("w")?.to_vec();
        if w.len() != n_features {
            return Err(ModelError::InvalidState("linear weights have the wrong size".into()));
        }
        let v = Array2::from_shape_vec((n_features, d), state.array("v")?.to_vec())
            .map_err(|_| ModelError::InvalidState("factor matrix has the wrong size".into()))?;
        let rng = state
            .rng
            .as_ref()
            .and_then(RngState::restore)
            .ok_or_else(|| ModelError::InvalidState("missing or invalid RNG state".into()))?;
        Ok(Self {
            cfg,
            w0,
            w,
            v,
            users: FeatureRows::from_arrays(state, "user_features", n_features)?,
            items: FeatureRows::from_arrays(state, "item_features", n_features)?,
            epoch: state.epoch,
            rng,
        })
    }
}

impl Recommender for FmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Fm
    }

    fn n_items(&self) -> usize {
        self.items.rows()
    }

    fn calculate_loss(&self, batch: &Batch) -> Result<f64> {
        self.loss_and_gradient(batch).map(|(loss, _)| loss)
    }

    fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let users = id_column(batch, USER_ID)?;
        let items = id_column(batch, ITEM_ID)?;
        self.check_pairs(users, items)?;
        Ok(users
            .iter()
            .zip(items)
            .map(|(&u, &i)| sigmoid(self.logit(u, i)))
            .collect())
    }

    fn full_sort_predict(&self, users: &[u32]) -> Result<Array2<f64>> {
        self.check_pairs(users, &[])?;
        let m = self.items.rows();
        let item_parts: Vec<(f64, Vec<f64>)> = (0..m as u32).map(|i| self.side_summary(&self.items, i)).collect();
        let mut out = Array2::zeros((users.len(), m));
        for (mut row, &u) in out.rows_mut().into_iter().zip(users) {
            let (au, su) = self.side_summary(&self.users, u);
            for (i, (ai, si)) in item_parts.iter().enumerate() {
                let cross: f64 = su.iter().zip(si).map(|(a, b)| a * b).sum();
                row[i] = sigmoid(self.w0 + au + ai + cross);
            }
        }
        Ok(out)
    }

    fn train_epoch(&mut self, data: &TrainData) -> Result<f64> {
        if data.is_empty() {
            return Err(ModelError::EmptyTrainSplit);
        }
        let labels = data.labels.as_ref().ok_or(ModelError::MissingLabel)?;
        self.check_pairs(&data.users, &data.items)?;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch = Batch::from_columns([
                (
                    USER_ID,
                    BatchColumn::Ids(chunk.iter().map(|&r| data.users[r]).collect()),
                ),
                (
                    ITEM_ID,
                    BatchColumn::Ids(chunk.iter().map(|&r| data.items[r]).collect()),
                ),
                (LABEL, BatchColumn::Floats(chunk.iter().map(|&r| labels[r]).collect())),
            ])
            .expect("columns share a length");
            let (loss, grad) = self.loss_and_gradient(&batch)?;
            self.apply(&grad);
            total += loss;
            batches += 1;
        }
        self.epoch += 1;
        Ok(total / batches as f64)
    }

    fn epoch(&self) -> usize {
        self.epoch
    }

    fn state(&self) -> ModelState {
        let mut arrays = vec![
            NamedArray::new("w0", vec![self.w0]),
            NamedArray::new("w", self.w.clone()),
            NamedArray::new("v", self.v.iter().copied().collect()),
        ];
        arrays.extend(self.users.to_arrays("user_features"));
        arrays.extend(self.items.to_arrays("item_features"));
        ModelState {
            kind: ModelKind::Fm,
            hyper: [
                ("n_features", self.w.len() as f64),
                ("learning_rate", self.cfg.learning_rate),
                ("embedding_size", self.cfg.embedding_size as f64),
                ("reg_weight", self.cfg.reg_weight),
                ("batch_size", self.cfg.batch_size as f64),
                ("epochs", self.cfg.epochs as f64),
                ("patience", self.cfg.patience as f64),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            arrays,
            epoch: self.epoch,
            rng: Some(RngState::capture(&self.rng)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atomic::{parse_atomic_str, AtomicFileKind};
    use crate::dataset::AtomicTables;
    use rand::{Rng, SeedableRng};

    const INTER: &str = "user_id:token,item_id:token,label:float\n\
        a,x,1\na,y,0\nb,y,1\nb,z,1\nc,x,0\nc,w,1\nd,z,0\n";
    const USERS: &str = "user_id:token,age:float,gender:token\na,0.5,f\nb,0.2,m\nc,,f\n";
    const ITEMS: &str = "item_id:token,genres:token_seq\nx,g1 g2\ny,g2\nz,\nw,g3 g3 g1\n";

    fn dataset() -> Dataset {
        let parse = |t, k| parse_atomic_str(t, k, ',').unwrap();
        Dataset::from_tables(AtomicTables {
            inter: Some(parse(INTER, AtomicFileKind::Inter)),
            user: Some(parse(USERS, AtomicFileKind::User)),
            item: Some(parse(ITEMS, AtomicFileKind::Item)),
            ..AtomicTables::default()
        })
        .unwrap()
    }

    fn random_model(seed: u64, scale: f64) -> FmModel {
        let cfg = TrainConfig {
            embedding_size: 3,
            reg_weight: 0.05,
            seed,
            ..TrainConfig::default()
        };
        let mut m = FmModel::new(&dataset(), &cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        m.w0 = rng.random_range(-1.0..1.0);
        m.w.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        if scale > 0.0 {
            m.v.mapv_inplace(|_| rng.random_range(-scale..scale));
        }
        m
    }

    fn random_batch(rng: &mut impl Rng, m: &FmModel, len: usize) -> Batch {
        let nu = m.users.rows() as u32;
        let ni = m.items.rows() as u32;
        Batch::from_columns([
            (
                USER_ID,
                BatchColumn::Ids((0..len).map(|_| rng.random_range(1..nu)).collect()),
            ),
            (
                ITEM_ID,
                BatchColumn::Ids((0..len).map(|_| rng.random_range(1..ni)).collect()),
            ),
            (
                LABEL,
                BatchColumn::Floats((0..len).map(|_| f64::from(rng.random_range(0..2u8))).collect()),
            ),
        ])
        .unwrap()
    }

    #[test]
    fn builds_side_features() {
        let m = random_model(1, 0.1);
        // user a: one-hot, age 0.5, gender f
        let (idx, val) = m.users.row(1);
        assert_eq!(idx.len(), 3);
        assert_eq!(val, &[1.0, 0.5, 1.0]);
        // user c has a missing age
        assert_eq!(m.users.row(3).0.len(), 2);
        // user d has no feature row
        assert_eq!(m.users.row(4).0.len(), 1);
        // item w: g3 twice and g1 once
        let (_, val) = m.items.row(4);
        let mut side: Vec<f64> = val[1..].to_vec();
        side.sort_by(f64::total_cmp);
        assert_eq!(side, vec![1.0 / 3.0, 2.0 / 3.0]);
        // item z has an empty genre list
        assert_eq!(m.items.row(3).0.len(), 1);
    }

    #[test]
    fn pairwise_term_matches_double_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let d = rng.random_range(1..6);
            let v = Array2::from_shape_simple_fn((n, d), || rng.random_range(-2.0..2.0));
            let idx: Vec<u32> = (0..n as u32).filter(|_| rng.random_bool(0.7)).collect();
            let val: Vec<f64> = idx.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut naive = 0.0;
            for a in 0..idx.len() {
                for b in a + 1..idx.len() {
                    let dot: f64 = (0..d).map(|f| v[[idx[a] as usize, f]] * v[[idx[b] as usize, f]]).sum();
                    naive += dot * val[a] * val[b];
                }
            }
            let fast = pairwise_term(&v, &idx, &val);
            assert!((fast - naive).abs() <= 1e-9 * naive.abs().max(1.0), "{fast} vs {naive}");
        }
    }

    #[test]
    fn zero_factors_reduce_to_logistic_regression() {
        let mut m = random_model(4, 0.0);
        m.v.fill(0.0);
        for u in 1..5 {
            for i in 1..5 {
                let (idx, val) = m.pair_features(u, i);
                assert_eq!(pairwise_term(&m.v, &idx, &val), 0.0);
                let lin: f64 = m.w0 + idx.iter().zip(&val).map(|(&k, &x)| m.w[k as usize] * x).sum::<f64>();
                assert_eq!(m.logit(u, i), lin);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for point in 0..100 {
            let model = random_model(point, 0.8);
            let batch = random_batch(&mut rng, &model, 6);
            let (_, grad) = model.loss_and_gradient(&batch).unwrap();
            let n = batch.len() as f64;
            let which = rng.random_range(0..3);
            let k = *grad.v.keys().nth(rng.random_range(0..grad.v.len())).unwrap();
            let f = rng.random_range(0..3);
            let analytic = match which {
                0 => grad.w0,
                1 => grad.w[&k],
                _ => grad.v[&k][f],
            } / n;
            let eval = |delta: f64| {
                let mut m = model.clone();
                match which {
                    0 => m.w0 += delta,
                    1 => m.w[k as usize] += delta,
                    _ => m.v[[k as usize, f]] += delta,
                }
                m.calculate_loss(&batch).unwrap()
            };
            let h = 1e-6;
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let scale = analytic.abs().max(fd.abs()).max(1e-6);
            assert!(
                (fd - analytic).abs() / scale < 1e-5,
                "point {point}: {fd} vs {analytic}"
            );
        }
    }

    #[test]
    fn predict_agrees_with_full_sort() {
        let model = random_model(5, 0.5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let batch = random_batch(&mut rng, &model, 40);
        let scores = model.predict(&batch).unwrap();
        let full = model.full_sort_predict(batch.ids(USER_ID).unwrap()).unwrap();
        for (k, (&i, s)) in batch.ids(ITEM_ID).unwrap().iter().zip(&scores).enumerate() {
            assert!((full[[k, i as usize]] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn training_reduces_loss_and_resumes_exactly() {
        let ds = dataset();
        let rows: Vec<usize> = (0..ds.len()).collect();
        let data = TrainData::new(&ds, &rows);
        let cfg = TrainConfig {
            embedding_size: 4,
            batch_size: 2,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut a = FmModel::new(&ds, &cfg).unwrap();
        let first = a.train_epoch(&data).unwrap();
        let mut last = first;
        for _ in 0..30 {
            last = a.train_epoch(&data).unwrap();
        }
        assert!(last < first);

        let mut b = FmModel::from_state(&a.state()).unwrap();
        a.train_epoch(&data).unwrap();
        b.train_epoch(&data).unwrap();
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn requires_labels() {
        let ds = crate::dataset::test_support::from_pairs(&[("a", "x")]);
        assert!(matches!(
            FmModel::new(&ds, &TrainConfig::default()),
            Err(ModelError::MissingLabel)
        ));
    }
}
