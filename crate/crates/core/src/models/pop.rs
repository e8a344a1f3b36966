use ndarray::Array2;

use super::{id_column, ModelKind, ModelState, NamedArray, Recommender, Result, TrainData};
use crate::atomic::ITEM_ID;
use crate::dataset::Batch;

/// Scores every item by its number of training interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct PopularityModel {
    counts: Vec<f64>,
}

impl PopularityModel {
    pub fn fit(data: &TrainData) -> Self {
        let mut counts = vec![0.0; data.n_items];
        for &i in &data.items {
            counts[i as usize] += 1.0;
        }
        Self { counts }
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn from_state(state: &ModelState) -> Result<Self> {
        Ok(Self {
            counts: state.array("item_counts")?.to_vec(),
        })
    }
}

impl Recommender for PopularityModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Pop
    }

    fn n_items(&self) -> usize {
        self.counts.len()
    }

    fn calculate_loss(&self, _batch: &Batch) -> Result<f64> {
        Ok(0.0)
    }

    fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let items = id_column(batch, ITEM_ID)?;
        Ok(items.iter().map(|&i| self.counts[i as usize]).collect())
    }

    fn full_sort_predict(&self, users: &[u32]) -> Result<Array2<f64>> {
        let m = self.counts.len();
        let mut out = Array2::zeros((users.len(), m));
        for mut row in out.rows_mut() {
            row.as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&self.counts);
        }
        Ok(out)
    }

    fn state(&self) -> ModelState {
        ModelState {
            kind: ModelKind::Pop,
            hyper: [("n_items".to_string(), self.counts.len() as f64)].into(),
            arrays: vec![NamedArray::new("item_counts", self.counts.clone())],
            epoch: 0,
            rng: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::test_support::from_pairs;
    use std::collections::HashMap;

    #[test]
    fn counts_match_hash_map_oracle() {
        let ds = from_pairs(&[("a", "x"), ("b", "x"), ("c", "y"), ("a", "z"), ("d", "x")]);
        let rows: Vec<usize> = (0..ds.len()).collect();
        let data = TrainData::new(&ds, &rows);
        let model = PopularityModel::fit(&data);
        let mut oracle: HashMap<u32, f64> = HashMap::new();
        for &i in ds.items() {
            *oracle.entry(i).or_default() += 1.0;
        }
        for (i, &c) in model.counts().iter().enumerate() {
            assert_eq!(c, oracle.get(&(i as u32)).copied().unwrap_or(0.0));
        }
        let scores = model.full_sort_predict(&[1, 2]).unwrap();
        assert_eq!(scores.row(0).to_vec(), vec![0.0, 3.0, 1.0, 1.0]);
        assert_eq!(scores.row(1), scores.row(0));
    }
}
