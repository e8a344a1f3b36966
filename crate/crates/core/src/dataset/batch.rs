use std::collections::BTreeMap;

use super::{DatasetError, Result};

/// One named batch column. Sequence columns are padded to a shared width.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchColumn {
    Ids(Vec<u32>),
    IdSeqs(Vec<Vec<u32>>),
    Floats(Vec<f64>),
}

impl BatchColumn {
    pub fn len(&self) -> usize {
        match self {
            BatchColumn::Ids(v) => v.len(),
            BatchColumn::IdSeqs(v) => v.len(),
            BatchColumn::Floats(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, rows: impl Iterator<Item = usize>) -> BatchColumn {
        match self {
            BatchColumn::Ids(v) => BatchColumn::Ids(rows.map(|r| v[r]).collect()),
            BatchColumn::IdSeqs(v) => BatchColumn::IdSeqs(rows.map(|r| v[r].clone()).collect()),
            BatchColumn::Floats(v) => BatchColumn::Floats(rows.map(|r| v[r]).collect()),
        }
    }
}

/// Key-value batch: named columns of equal length.
///
/// Everything lives in host memory, so device transfer is the identity and
/// no such method exists.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    len: usize,
    columns: BTreeMap<String, BatchColumn>,
}

impl Batch {
    pub fn with_len(len: usize) -> Self {
        Self {
            len,
            columns: BTreeMap::new(),
        }
    }

    /// Builds a batch from columns, which must agree in length.
    pub fn from_columns<I, S>(columns: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, BatchColumn)>,
        S: Into<String>,
    {
        let mut batch: Option<Batch> = None;
        for (name, col) in columns {
            let b = batch.get_or_insert_with(|| Batch::with_len(col.len()));
            b.insert(name, col)?;
        }
        Ok(batch.unwrap_or_default())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, name: impl Into<String>, column: BatchColumn) -> Result<()> {
        let name = name.into();
        if column.len() != self.len {
            return Err(DatasetError::LengthMismatch {
                name,
                expected: self.len,
                found: column.len(),
            });
        }
        self.columns.insert(name, column);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BatchColumn> {
        self.columns.get(name)
    }

    pub fn ids(&self, name: &str) -> Option<&[u32]> {
        match self.columns.get(name) {
            Some(BatchColumn::Ids(v)) => Some(v),
            _ => None,
        }
    }

    pub fn floats(&self, name: &str) -> Option<&[f64]> {
        match self.columns.get(name) {
            Some(BatchColumn::Floats(v)) => Some(v),
            _ => None,
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            len: rows.len(),
            columns: self
                .columns
                .iter()
                .map(|(k, c)| (k.clone(), c.gather(rows.iter().copied())))
                .collect(),
        }
    }

    /// Tiles the whole batch `times` times: `[a, b]` becomes `[a, b, a, b]`.
    pub fn repeat(&self, times: usize) -> Batch {
        assert!(times >= 1, "repeat count must be positive");
        let n = self.len;
        let rows: Vec<usize> = (0..times).flat_map(|_| 0..n).collect();
        self.select(&rows)
    }

    /// Repeats every row consecutively: `[a, b]` becomes `[a, a, b, b]`.
    pub fn repeat_interleave(&self, times: usize) -> Batch {
        assert!(times >= 1, "repeat count must be positive");
        let rows: Vec<usize> = (0..self.len).flat_map(|r| std::iter::repeat_n(r, times)).collect();
        self.select(&rows)
    }

    /// Overwrites or adds the columns of `other`. Length-1 columns of
    /// `other` are broadcast to this batch's length.
    pub fn update(&self, other: &Batch) -> Result<Batch> {
        let mut out = self.clone();
        // an empty `self` adopts the length of `other`
        if self.columns.is_empty() {
            out.len = other.len;
        }
        for (name, col) in &other.columns {
            let col = if col.len() == out.len {
                col.clone()
            } else if col.len() == 1 {
                col.gather(std::iter::repeat_n(0, out.len))
            } else {
                return Err(DatasetError::LengthMismatch {
                    name: name.clone(),
                    expected: out.len,
                    found: col.len(),
                });
            };
            out.columns.insert(name.clone(), col);
        }
        Ok(out)
    }
}
