use nalgebra::DMatrix;
use ndarray::Array2;

use super::{id_column, ModelError, ModelKind, ModelState, NamedArray, Recommender, Result, TrainData, UserHistory};
use crate::atomic::{ITEM_ID, USER_ID};
use crate::dataset::Batch;

/// Closed-form linear item-item model with a zero-diagonal weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EaseModel {
    l2: f64,
    n_items: usize,
    history: UserHistory,
    /// Row-major `n_items x n_items` weights `B`.
    weights: Vec<f64>,
}

impl EaseModel {
    pub fn fit(data: &TrainData, l2: f64) -> Result<Self> {
        if !(l2 > 0.0) || !l2.is_finite() {
            return Err(ModelError::InvalidConfig("ease l2 must be positive".into()));
        }
        let m = data.n_items;
        let history = data.history.clone();
        let mut gram = DMatrix::<f64>::zeros(m, m);
        for u in 0..history.n_users() as u32 {
            let items = history.items(u);
            for &a in items {
                for &b in items {
                    gram[(a as usize, b as usize)] += 1.0;
                }
            }
        }
        for d in 0..m {
            gram[(d, d)] += l2;
        }
        let p = gram
            .cholesky()
            .ok_or_else(|| ModelError::InvalidConfig("gram matrix is not positive definite".into()))?
            .inverse();
        let mut weights = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    weights[i * m + j] = -p[(i, j)] / p[(j, j)];
                }
            }
        }
        Ok(Self {
            l2,
            n_items: m,
            history,
            weights,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn from_state(state: &ModelState) -> Result<Self> {
        let n_items = state.hyper_usize("n_items")?;
        let weights = state.array("weights")?.to_vec();
        if weights.len() != n_items * n_items {
            return Err(ModelError::InvalidState("weight matrix has the wrong size".into()));
        }
        Ok(Self {
            l2: state.hyper("l2")?,
            n_items,
            history: UserHistory::from_arrays(state, "history")?,
            weights,
        })
    }
}

impl Recommender for EaseModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Ease
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
        let m = self.n_items;
        Ok(users
            .iter()
            .zip(items)
            .map(|(&u, &i)| {
                self.history
                    .items(u)
                    .iter()
                    .map(|&j| self.weights[j as usize * m + i as usize])
                    .sum()
            })
            .collect())
    }

    fn full_sort_predict(&self, users: &[u32]) -> Result<Array2<f64>> {
        let m = self.n_items;
        let mut out = Array2::zeros((users.len(), m));
        for (mut row, &u) in out.rows_mut().into_iter().zip(users) {
            let row = row.as_slice_mut().expect("standard layout");
            for &j in self.history.items(u) {
                let w = &self.weights[j as usize * m..(j as usize + 1) * m];
                for (r, &x) in row.iter_mut().zip(w) {
                    *r += x;
                }
            }
        }
        Ok(out)
    }

    fn state(&self) -> ModelState {
        let mut arrays = self.history.to_arrays("history");
        arrays.push(NamedArray::new("weights", self.weights.clone()));
        ModelState {
            kind: ModelKind::Ease,
            hyper: [
                ("l2".to_string(), self.l2),
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

    fn fit(pairs: &[(String, String)], l2: f64) -> (crate::dataset::Dataset, EaseModel) {
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let ds = from_pairs(&refs);
        let rows: Vec<usize> = (0..ds.len()).collect();
        let model = EaseModel::fit(&TrainData::new(&ds, &rows), l2).unwrap();
        (ds, model)
    }

    fn random_pairs(rng: &mut impl Rng, users: usize, items: usize, p: f64) -> Vec<(String, String)> {
        let mut pairs = Vec::new();
        for u in 0..users {
            for i in 0..items {
                if rng.random_bool(p) {
                    pairs.push((format!("u{u}"), format!("i{i}")));
                }
            }
        }
        pairs
    }

    /// Column-by-column ridge regression of `x_j` on the other columns,
    /// solved by LU on the normal equations.
    fn ridge_oracle(x: &DMatrix<f64>, l2: f64) -> DMatrix<f64> {
        let m = x.ncols();
        let mut b = DMatrix::zeros(m, m);
        for j in 0..m {
            let others: Vec<usize> = (0..m).filter(|&c| c != j).collect();
            let xo = x.select_columns(&others);
            let lhs = xo.transpose() * &xo + DMatrix::identity(m - 1, m - 1) * l2;
            let rhs = xo.transpose() * x.column(j);
            let sol = lhs.lu().solve(&rhs).unwrap();
            for (k, &c) in others.iter().enumerate() {
                b[(c, j)] = sol[k];
            }
        }
        b
    }

    #[test]
    fn matches_constrained_ridge_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let pairs = random_pairs(&mut rng, 30, 15, 0.3);
            let l2 = rng.random_range(0.5..20.0);
            let (ds, model) = fit(&pairs, l2);
            let m = ds.n_items();
            let mut x = DMatrix::<f64>::zeros(ds.n_users(), m);
            for (&u, &i) in ds.users().iter().zip(ds.items()) {
                x[(u as usize, i as usize)] = 1.0;
            }
            let oracle = ridge_oracle(&x, l2);
            for i in 0..m {
                assert_eq!(model.weights()[i * m + i], 0.0);
                for j in 0..m {
                    let got = model.weights()[i * m + j];
                    assert!((got - oracle[(i, j)]).abs() < 1e-6, "{got} vs {}", oracle[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn huge_l2_drives_scores_to_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pairs = random_pairs(&mut rng, 20, 10, 0.4);
        let (ds, model) = fit(&pairs, 1e12);
        let users: Vec<u32> = (1..ds.n_users() as u32).collect();
        let scores = model.full_sort_predict(&users).unwrap();
        assert!(scores.iter().all(|s| s.abs() < 1e-9));
    }
}
