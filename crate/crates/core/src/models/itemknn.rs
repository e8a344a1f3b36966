use std::cmp::Ordering;

use ndarray::Array2;

use super::{
    f64_to_ids, id_column, ids_to_f64, ModelError, ModelKind, ModelState, NamedArray, Recommender, Result, TrainData,
    UserHistory,
};
use crate::atomic::{ITEM_ID, USER_ID};
use crate::dataset::Batch;

/// Item-based neighbourhood model over cosine similarity of the binary
/// user-item matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemKnnModel {
    k: usize,
    shrink: f64,
    n_items: usize,
    history: UserHistory,
    // row j lists every (i, sim(i, j)) where j is among the kept neighbours of i
    row_offsets: Vec<usize>,
    row_items: Vec<u32>,
    row_sims: Vec<f64>,
}

impl ItemKnnModel {
    pub fn fit(data: &TrainData, k: usize, shrink: f64) -> Result<Self> {
        if k == 0 {
            return Err(ModelError::InvalidConfig("knn k must be positive".into()));
        }
        if !(shrink >= 0.0) {
            return Err(ModelError::InvalidConfig("knn shrink must be non-negative".into()));
        }
        let m = data.n_items;
        let history = data.history.clone();
        let mut item_users: Vec<Vec<u32>> = vec![Vec::new(); m];
        for u in 0..history.n_users() as u32 {
            for &i in history.items(u) {
                item_users[i as usize].push(u);
            }
        }
        let norms: Vec<f64> = item_users.iter().map(|us| (us.len() as f64).sqrt()).collect();

        let mut neighbours: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
        let mut co = vec![0u32; m];
        let mut touched = Vec::new();
        for i in 0..m {
            for &u in &item_users[i] {
                for &j in history.items(u) {
                    if co[j as usize] == 0 {
                        touched.push(j);
                    }
                    co[j as usize] += 1;
                }
            }
            let mut cand: Vec<(u32, f64)> = touched
                .iter()
                .filter(|&&j| j as usize != i)
                .map(|&j| {
                    let sim = f64::from(co[j as usize]) / (norms[i] * norms[j as usize] + shrink);
                    (j, sim)
                })
                .filter(|&(_, s)| s > 0.0)
                .collect();
            for &j in &touched {
                co[j as usize] = 0;
            }
            touched.clear();
            cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
            cand.truncate(k);
            neighbours[i] = cand;
        }

        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
        for (i, list) in neighbours.iter().enumerate() {
            for &(j, s) in list {
                rows[j as usize].push((i as u32, s));
            }
        }
        let mut row_offsets = vec![0];
        let mut row_items = Vec::new();
        let mut row_sims = Vec::new();
        for row in rows {
            for (i, s) in row {
                row_items.push(i);
                row_sims.push(s);
            }
            row_offsets.push(row_items.len());
        }
        Ok(Self {
            k,
            shrink,
            n_items: m,
            history,
            row_offsets,
            row_items,
            row_sims,
        })
    }

    /// Kept similarity `W[j, i]`, zero when `j` is not a neighbour of `i`.
    pub fn weight(&self, j: u32, i: u32) -> f64 {
        let (items, sims) = self.row(j);
        match items.binary_search(&i) {
            Ok(p) => sims[p],
            Err(_) => 0.0,
        }
    }

    fn row(&self, j: u32) -> (&[u32], &[f64]) {
        let j = j as usize;
        if j + 1 >= self.row_offsets.len() {
            return (&[], &[]);
        }
        let r = self.row_offsets[j]..self.row_offsets[j + 1];
        (&self.row_items[r.clone()], &self.row_sims[r])
    }

    pub fn from_state(state: &ModelState) -> Result<Self> {
        let n_items = state.hyper_usize("n_items")?;
        let row_offsets: Vec<usize> = f64_to_ids(state.array("row_offsets")?)?
            .into_iter()
            .map(|o| o as usize)
            .collect();
        let row_items = f64_to_ids(state.array("row_items")?)?;
        let row_sims = state.array("row_sims")?.to_vec();
        if row_offsets.len() != n_items + 1
            || row_offsets.last() != Some(&row_items.len())
            || row_items.len() != row_sims.len()
        {
            return Err(ModelError::InvalidState("inconsistent neighbour table".into()));
        }
        Ok(Self {
            k: state.hyper_usize("k")?,
            shrink: state.hyper("shrink")?,
            n_items,
            history: UserHistory::from_arrays(state, "history")?,
            row_offsets,
            row_items,
            row_sims,
        })
    }
}

impl Recommender for ItemKnnModel {
    fn kind(&self) -> ModelKind {
        ModelKind::ItemKnn
    }

    fn n_items(&self) -> usize {
        self.n_items
    }

    fn calculate_loss(&self, _batch: &Batch) -> Result<f64> {
        Ok(0.0)
    }

    fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let users = id_column(batch, USER_ID)?;
        let items = id_column(batch, ITEM_ID)?;
        Ok(users
            .iter()
            .zip(items)
            .map(|(&u, &i)| self.history.items(u).iter().map(|&j| self.weight(j, i)).sum())
            .collect())
    }

    fn full_sort_predict(&self, users: &[u32]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((users.len(), self.n_items));
        for (mut row, &u) in out.rows_mut().into_iter().zip(users) {
            for &j in self.history.items(u) {
                let (items, sims) = self.row(j);
                for (&i, &s) in items.iter().zip(sims) {
                    row[i as usize] += s;
                }
            }
        }
        Ok(out)
    }

    fn state(&self) -> ModelState {
        let mut arrays = self.history.to_arrays("history");
        arrays.push(NamedArray::new(
            "row_offsets",
            self.row_offsets.iter().map(|&o| o as f64).collect(),
        ));
        arrays.push(NamedArray::new("row_items", ids_to_f64(self.row_items.iter().copied())));
        arrays.push(NamedArray::new("row_sims", self.row_sims.clone()));
        ModelState {
            kind: ModelKind::ItemKnn,
            hyper: [
                ("k".to_string(), self.k as f64),
                ("shrink".to_string(), self.shrink),
                ("n_items".to_string(), self.n_items as f64),
            ]
            .into(),
            arrays,
            epoch: 0,
            rng: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::from_pairs;
    use rand::{Rng, SeedableRng};

    fn fit(pairs: &[(&str, &str)], k: usize, shrink: f64) -> (crate::dataset::Dataset, ItemKnnModel) {
        let ds = from_pairs(pairs);
        let rows: Vec<usize> = (0..ds.len()).collect();
        let model = ItemKnnModel::fit(&TrainData::new(&ds, &rows), k, shrink).unwrap();
        (ds, model)
    }

    #[test]
    fn identical_user_sets_have_unit_similarity() {
        let (_, m) = fit(&[("a", "x"), ("a", "y"), ("b", "x"), ("b", "y")], 5, 0.0);
        assert!((m.weight(1, 2) - 1.0).abs() < 1e-15);
        assert!((m.weight(2, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_user_sets_have_zero_similarity() {
        let (_, m) = fit(&[("a", "x"), ("b", "y")], 5, 0.0);
        assert_eq!(m.weight(1, 2), 0.0);
        assert_eq!(m.weight(2, 1), 0.0);
    }

    #[test]
    fn ties_keep_lower_item_ids() {
        // item x co-occurs once with each of y, z, w; all have one user
        let (_, m) = fit(
            &[("a", "x"), ("a", "y"), ("b", "x"), ("b", "z"), ("c", "x"), ("c", "w")],
            1,
            0.0,
        );
        // ids: x=1, y=2, z=3, w=4; item 1 keeps only neighbour 2
        assert!(m.weight(2, 1) > 0.0);
        assert_eq!(m.weight(3, 1), 0.0);
        assert_eq!(m.weight(4, 1), 0.0);
    }

    /// Dense oracle: cosine via explicit column dot products, per-column
    /// top-k by full sort, then the score matrix as a matrix product.
    fn dense_scores(x: &Array2<f64>, k: usize, shrink: f64) -> Array2<f64> {
        let m = x.ncols();
        let mut w = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            let mut col: Vec<(usize, f64)> = Vec::new();
            for j in 0..m {
                if i == j {
                    continue;
                }
                let dot = x.column(i).dot(&x.column(j));
                let ni = x.column(i).dot(&x.column(i)).sqrt();
                let nj = x.column(j).dot(&x.column(j)).sqrt();
                let denom = ni * nj + shrink;
                let s = if denom > 0.0 { dot / denom } else { 0.0 };
                if s > 0.0 {
                    col.push((j, s));
                }
            }
            col.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for &(j, s) in col.iter().take(k) {
                w[[j, i]] = s;
            }
        }
        x.dot(&w)
    }

    #[test]
    fn scores_match_dense_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for trial in 0..20 {
            let mut pairs = Vec::new();
            for u in 0..15 {
                for i in 0..20 {
                    if rng.random_bool(0.25) {
                        pairs.push((format!("u{u}"), format!("i{i}")));
                    }
                }
            }
            let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let k = 1 + trial % 7;
            let shrink = if trial % 2 == 0 { 0.0 } else { 1.5 };
            let (ds, model) = fit(&refs, k, shrink);
            let mut x = Array2::<f64>::zeros((ds.n_users(), ds.n_items()));
            for (&u, &i) in ds.users().iter().zip(ds.items()) {
                x[[u as usize, i as usize]] = 1.0;
            }
            let oracle = dense_scores(&x, k, shrink);
            let users: Vec<u32> = (0..ds.n_users() as u32).collect();
            let got = model.full_sort_predict(&users).unwrap();
            for (a, b) in got.iter().zip(oracle.iter()) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}
