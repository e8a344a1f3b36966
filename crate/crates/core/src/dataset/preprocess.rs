//! Preprocessing: frequency and value filtering, ID remapping, imputation,
//! labelling and normalization. Each function returns a new [`Dataset`]
//! and keeps the relative order of surviving rows.

use std::ops::Bound;

use super::{decode_table, AtomicTables, Dataset, DatasetError, EncodedColumn, EncodedTable, Result, LABEL, PAD_ID};
use crate::atomic::{AtomicFileKind, FieldSpec, FieldType};

/// Row filter on one interaction field.
#[derive(Debug, Clone, PartialEq)]
pub enum ValuePredicate {
    /// Float value inside an interval.
    Range { lower: Bound<f64>, upper: Bound<f64> },
    /// Token value in a set of raw tokens.
    OneOf(Vec<String>),
}

impl ValuePredicate {
    pub fn at_least(v: f64) -> Self {
        ValuePredicate::Range {
            lower: Bound::Included(v),
            upper: Bound::Unbounded,
        }
    }

    /// Half-open interval `[lo, hi)`.
    pub fn half_open(lo: f64, hi: f64) -> Self {
        ValuePredicate::Range {
            lower: Bound::Included(lo),
            upper: Bound::Excluded(hi),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let ValuePredicate::Range { lower, upper } = self else {
            return false;
        };
        let above = match lower {
            Bound::Included(l) => x >= *l,
            Bound::Excluded(l) => x > *l,
            Bound::Unbounded => true,
        };
        let below = match upper {
            Bound::Included(u) => x <= *u,
            Bound::Excluded(u) => x < *u,
            Bound::Unbounded => true,
        };
        above && below
    }

    /// Parses a condition such as `rating>=3`, `timestamp in [10,20)` or
    /// `genre in {comedy,drama}`.
    pub fn parse_condition(text: &str) -> Option<(String, ValuePredicate)> {
        let text = text.trim();
        if let Some((field, rest)) = text.split_once(" in ") {
            let rest = rest.trim();
            let field = field.trim().to_string();
            if let Some(set) = rest.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                let tokens = set.split(',').map(|t| t.trim().to_string()).collect();
                return Some((field, ValuePredicate::OneOf(tokens)));
            }
            let (lo_inc, rest) = match rest.chars().next()? {
                '[' => (true, &rest[1..]),
                '(' => (false, &rest[1..]),
                _ => return None,
            };
            let (hi_inc, inner) = match rest.chars().last()? {
                ']' => (true, &rest[..rest.len() - 1]),
                ')' => (false, &rest[..rest.len() - 1]),
                _ => return None,
            };
            let (lo, hi) = inner.split_once(',')?;
            let bound = |s: &str, inclusive: bool| -> Option<Bound<f64>> {
                let s = s.trim();
                if s.is_empty() || s == "inf" || s == "-inf" {
                    return Some(Bound::Unbounded);
                }
                let v: f64 = s.parse().ok()?;
                Some(if inclusive {
                    Bound::Included(v)
                } else {
                    Bound::Excluded(v)
                })
            };
            return Some((
                field,
                ValuePredicate::Range {
                    lower: bound(lo, lo_inc)?,
                    upper: bound(hi, hi_inc)?,
                },
            ));
        }
        for op in [">=", "<=", "==", ">", "<"] {
            if let Some((field, value)) = text.split_once(op) {
                let v: f64 = value.trim().parse().ok()?;
                let (lower, upper) = match op {
                    ">=" => (Bound::Included(v), Bound::Unbounded),
                    ">" => (Bound::Excluded(v), Bound::Unbounded),
                    "<=" => (Bound::Unbounded, Bound::Included(v)),
                    "<" => (Bound::Unbounded, Bound::Excluded(v)),
                    _ => (Bound::Included(v), Bound::Included(v)),
                };
                return Some((field.trim().to_string(), ValuePredicate::Range { lower, upper }));
            }
        }
        None
    }
}

fn float_column<'a>(table: &'a EncodedTable, field: &str) -> Result<&'a [Option<f64>]> {
    table.float_column(field)
}

impl Dataset {
    fn keep_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(DatasetError::Emptied);
        }
        self.with_inter(self.inter.select_rows(rows))
    }

    /// Alternately drops users with fewer than `min_user` and items with
    /// fewer than `min_item` interactions until nothing changes.
    pub fn filter_by_inter_num(&self, min_user: usize, min_item: usize) -> Result<Dataset> {
        let (users, items) = (self.users(), self.items());
        let mut alive = vec![true; self.len()];
        let mut user_count = vec![0usize; self.n_users()];
        let mut item_count = vec![0usize; self.n_items()];
        loop {
            user_count.iter_mut().for_each(|c| *c = 0);
            item_count.iter_mut().for_each(|c| *c = 0);
            for (r, _) in alive.iter().enumerate().filter(|(_, &a)| a) {
                user_count[users[r] as usize] += 1;
                item_count[items[r] as usize] += 1;
            }
            let mut changed = false;
            for (r, a) in alive.iter_mut().enumerate() {
                if *a && (user_count[users[r] as usize] < min_user || item_count[items[r] as usize] < min_item) {
                    *a = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let rows: Vec<usize> = (0..self.len()).filter(|&r| alive[r]).collect();
        self.keep_rows(&rows)
    }

    /// Drops interaction rows whose `field` value violates `predicate`.
    /// Missing values never satisfy a predicate. IDs are not remapped.
    pub fn filter_by_field_value(&self, field: &str, predicate: &ValuePredicate) -> Result<Dataset> {
        let column = self
            .inter
            .column(field)
            .ok_or_else(|| DatasetError::UnknownField(field.to_string()))?;
        let rows: Vec<usize> = match (column, predicate) {
            (EncodedColumn::Float(v), ValuePredicate::Range { .. }) => (0..v.len())
                .filter(|&r| v[r].is_some_and(|x| predicate.contains(x)))
                .collect(),
            (EncodedColumn::Token(v), ValuePredicate::OneOf(tokens)) => {
                let vocab = self.vocab_for(AtomicFileKind::Inter, field);
                let wanted: Vec<u32> = tokens.iter().filter_map(|t| vocab.id(t)).collect();
                (0..v.len())
                    .filter(|&r| v[r].is_some_and(|id| wanted.contains(&id)))
                    .collect()
            }
            (col, ValuePredicate::Range { .. }) => {
                return Err(DatasetError::WrongType {
                    field: field.to_string(),
                    expected: "float",
                    actual: col.ftype(),
                })
            }
            (col, ValuePredicate::OneOf(_)) => {
                return Err(DatasetError::WrongType {
                    field: field.to_string(),
                    expected: "token",
                    actual: col.ftype(),
                })
            }
        };
        self.keep_rows(&rows)
    }

    fn vocab_for(&self, kind: AtomicFileKind, field: &str) -> &super::Vocabulary {
        &self.vocabs[&super::vocab_name(kind, field)]
    }

    /// Re-encodes every token field to contiguous IDs by first occurrence
    /// over the current rows.
    pub fn remap_ids(&self) -> Result<Dataset> {
        let decode = |t: &Option<EncodedTable>| t.as_ref().map(|t| decode_table(t, &self.vocabs));
        Dataset::from_tables(AtomicTables {
            inter: Some(decode_table(&self.inter, &self.vocabs)),
            user: decode(&self.user_features),
            item: decode(&self.item_features),
            kg: decode(&self.kg),
            link: decode(&self.link),
            net: decode(&self.net),
        })
    }

    /// Replaces missing floats by the column mean, missing tokens by the
    /// padding ID and missing sequences by the empty sequence.
    pub fn fill_nan(&self) -> Result<Dataset> {
        let fill = |table: &EncodedTable| -> Result<EncodedTable> {
            let mut out = table.clone();
            for (spec, col) in out.schema.iter().zip(out.columns.iter_mut()) {
                match col {
                    EncodedColumn::Float(v) => {
                        if v.iter().all(Option::is_some) {
                            continue;
                        }
                        let mean = observed_mean(v).ok_or_else(|| DatasetError::AllMissing(spec.name.clone()))?;
                        v.iter_mut().for_each(|x| {
                            x.get_or_insert(mean);
                        });
                    }
                    EncodedColumn::Token(v) => v.iter_mut().for_each(|x| {
                        x.get_or_insert(PAD_ID);
                    }),
                    EncodedColumn::TokenSeq(v) => v.iter_mut().for_each(|x| {
                        x.get_or_insert_with(Vec::new);
                    }),
                    EncodedColumn::FloatSeq(v) => v.iter_mut().for_each(|x| {
                        x.get_or_insert_with(Vec::new);
                    }),
                }
            }
            Ok(out)
        };
        let opt = |t: &Option<EncodedTable>| t.as_ref().map(fill).transpose();
        Dataset::assemble(
            fill(&self.inter)?,
            opt(&self.user_features)?,
            opt(&self.item_features)?,
            opt(&self.kg)?,
            opt(&self.link)?,
            opt(&self.net)?,
            self.vocabs.clone(),
        )
    }

    /// Adds a float `label` column: 1.0 where `field >= threshold`, else 0.0.
    /// Missing values are labelled 0.0.
    pub fn set_label_by_threshold(&self, field: &str, threshold: f64) -> Result<Dataset> {
        let values = float_column(&self.inter, field)?;
        let labels = values
            .iter()
            .map(|v| Some(if v.is_some_and(|x| x >= threshold) { 1.0 } else { 0.0 }))
            .collect();
        let inter = self
            .inter
            .with_column(FieldSpec::new(LABEL, FieldType::Float), EncodedColumn::Float(labels));
        self.with_inter(inter)
    }

    /// Min-max rescales each listed float field to `[0, 1]` in every table
    /// that has it. Constant columns become 0.0.
    pub fn normalize(&self, fields: &[&str]) -> Result<Dataset> {
        let mut out = self.clone();
        for &field in fields {
            let mut found = false;
            let tables = std::iter::once(&mut out.inter)
                .chain(out.user_features.as_mut())
                .chain(out.item_features.as_mut())
                .chain(out.net.as_mut());
            for table in tables {
                let Some(i) = table.schema.iter().position(|f| f.name == field) else {
                    continue;
                };
                found = true;
                let EncodedColumn::Float(v) = &mut table.columns[i] else {
                    return Err(DatasetError::WrongType {
                        field: field.to_string(),
                        expected: "float",
                        actual: table.columns[i].ftype(),
                    });
                };
                min_max_scale(v);
            }
            if !found {
                return Err(DatasetError::UnknownField(field.to_string()));
            }
        }
        Dataset::assemble(
            out.inter,
            out.user_features,
            out.item_features,
            out.kg,
            out.link,
            out.net,
            out.vocabs,
        )
    }
}

fn observed_mean(v: &[Option<f64>]) -> Option<f64> {
    let (sum, n) = v.iter().flatten().fold((0.0, 0usize), |(s, n), &x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn min_max_scale(v: &mut [Option<f64>]) {
    let (lo, hi) = v
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if lo > hi {
        return;
    }
    let span = hi - lo;
    for x in v.iter_mut().flatten() {
        *x = if span > 0.0 { (*x - lo) / span } else { 0.0 };
    }
}
