use super::{f64_to_ids, ids_to_f64, ModelError, NamedArray, Result};

/// Per-user item lists in CSR form. Items of a user are distinct and
/// ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    offsets: Vec<usize>,
    items: Vec<u32>,
}

impl UserHistory {
    pub fn from_pairs(n_users: usize, users: &[u32], items: &[u32]) -> Self {
        let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n_users];
        for (&u, &i) in users.iter().zip(items) {
            lists[u as usize].push(i);
        }
        Self::from_lists(lists)
    }

    pub fn from_lists(mut lists: Vec<Vec<u32>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut items = Vec::new();
        offsets.push(0);
        for list in &mut lists {
            list.sort_unstable();
            list.dedup();
            items.extend_from_slice(list);
            offsets.push(items.len());
        }
        Self { offsets, items }
    }

    pub fn n_users(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Items of `user`; empty for unknown users.
    pub fn items(&self, user: u32) -> &[u32] {
        let u = user as usize;
        if u + 1 >= self.offsets.len() {
            return &[];
        }
        &self.items[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.items(user).binary_search(&item).is_ok()
    }

    pub fn to_arrays(&self, prefix: &str) -> Vec<NamedArray> {
        vec![
            NamedArray::new(
                format!("{prefix}.offsets"),
                self.offsets.iter().map(|&o| o as f64).collect(),
            ),
            NamedArray::new(format!("{prefix}.items"), ids_to_f64(self.items.iter().copied())),
        ]
    }

    pub fn from_arrays(state: &super::ModelState, prefix: &str) -> Result<Self> {
        let offsets: Vec<usize> = f64_to_ids(state.array(&format!("{prefix}.offsets"))?)?
            .into_iter()
            .map(|o| o as usize)
            .collect();
        let items = f64_to_ids(state.array(&format!("{prefix}.items"))?)?;
        let valid = !offsets.is_empty()
            && offsets[0] == 0
            && offsets.windows(2).all(|w| w[0] <= w[1])
            && offsets.last() == Some(&items.len());
        if !valid {
            return Err(ModelError::InvalidState(format!("bad `{prefix}` offsets")));
        }
        Ok(Self { offsets, items })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_sorted_distinct_lists() {
        let h = UserHistory::from_pairs(3, &[1, 1, 2, 1], &[5, 3, 4, 5]);
        assert_eq!(h.items(0), &[] as &[u32]);
        assert_eq!(h.items(1), &[3, 5]);
        assert_eq!(h.items(2), &[4]);
        assert_eq!(h.items(7), &[] as &[u32]);
        assert!(h.contains(1, 5));
        assert!(!h.contains(2, 5));
    }
}
