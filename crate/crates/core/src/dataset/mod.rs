//! ID-encoded datasets built from atomic tables.
//!
//! A [`Dataset`] is immutable: every preprocessing function takes `&self`
//! and returns a new value. Token fields are encoded through per-field
//! [`Vocabulary`] instances; user and item vocabularies are shared by all
//! tables that mention users or items.

mod batch;
mod preprocess;
mod vocab;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::atomic::{
    self, AtomicFileKind, Column, DataTable, FieldSpec, FieldType, ENTITY_ID, HEAD_ID, ITEM_ID, RELATION_ID, SOURCE_ID,
    TAIL_ID, TARGET_ID, USER_ID,
};

pub use batch::{Batch, BatchColumn};
pub use preprocess::ValuePredicate;
pub use vocab::{Vocabulary, PAD_ID, PAD_TOKEN};

pub const TIMESTAMP: &str = "timestamp";
pub const RATING: &str = "rating";
pub const LABEL: &str = "label";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset emptied by filtering")]
    Emptied,
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("field `{field}` is {actual}, expected {expected}")]
    WrongType {
        field: String,
        expected: &'static str,
        actual: FieldType,
    },
    #[error("float column `{0}` has no observed values")]
    AllMissing(String),
    #[error("{kind} row {row}: missing `{field}`")]
    MissingId {
        kind: AtomicFileKind,
        field: String,
        row: usize,
    },
    #[error("batch column `{name}` has length {found}, expected {expected}")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("expected a {expected} table, got {found}")]
    WrongKind {
        expected: AtomicFileKind,
        found: AtomicFileKind,
    },
    #[error(transparent)]
    Atomic(#[from] atomic::AtomicError),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// A column after token encoding. `None` is still the missing marker.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedColumn {
    Token(Vec<Option<u32>>),
    TokenSeq(Vec<Option<Vec<u32>>>),
    Float(Vec<Option<f64>>),
    FloatSeq(Vec<Option<Vec<f64>>>),
}

impl EncodedColumn {
    pub fn ftype(&self) -> FieldType {
        match self {
            EncodedColumn::Token(_) => FieldType::Token,
            EncodedColumn::TokenSeq(_) => FieldType::TokenSeq,
            EncodedColumn::Float(_) => FieldType::Float,
            EncodedColumn::FloatSeq(_) => FieldType::FloatSeq,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            EncodedColumn::Token(v) => v.len(),
            EncodedColumn::TokenSeq(v) => v.len(),
            EncodedColumn::Float(v) => v.len(),
            EncodedColumn::FloatSeq(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn take_rows(&self, rows: &[usize]) -> EncodedColumn {
        fn pick<T: Clone>(v: &[T], rows: &[usize]) -> Vec<T> {
            rows.iter().map(|&r| v[r].clone()).collect()
        }
        match self {
            EncodedColumn::Token(v) => EncodedColumn::Token(pick(v, rows)),
            EncodedColumn::TokenSeq(v) => EncodedColumn::TokenSeq(pick(v, rows)),
            EncodedColumn::Float(v) => EncodedColumn::Float(pick(v, rows)),
            EncodedColumn::FloatSeq(v) => EncodedColumn::FloatSeq(pick(v, rows)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTable {
    kind: AtomicFileKind,
    schema: Vec<FieldSpec>,
    columns: Vec<EncodedColumn>,
    row_count: usize,
}

impl EncodedTable {
    pub fn kind(&self) -> AtomicFileKind {
        self.kind
    }

    pub fn schema(&self) -> &[FieldSpec] {
        &self.schema
    }

    pub fn columns(&self) -> &[EncodedColumn] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column(&self, name: &str) -> Option<&EncodedColumn> {
        self.schema
            .iter()
            .position(|f| f.name == name)
            .map(|i| &self.columns[i])
    }

    pub fn float_column(&self, name: &str) -> Result<&[Option<f64>]> {
        match self.column(name) {
            Some(EncodedColumn::Float(v)) => Ok(v),
            Some(other) => Err(DatasetError::WrongType {
                field: name.to_string(),
                expected: "float",
                actual: other.ftype(),
            }),
            None => Err(DatasetError::UnknownField(name.to_string())),
        }
    }

    pub fn token_column(&self, name: &str) -> Result<&[Option<u32>]> {
        match self.column(name) {
            Some(EncodedColumn::Token(v)) => Ok(v),
            Some(other) => Err(DatasetError::WrongType {
                field: name.to_string(),
                expected: "token",
                actual: other.ftype(),
            }),
            None => Err(DatasetError::UnknownField(name.to_string())),
        }
    }

    fn select_rows(&self, rows: &[usize]) -> EncodedTable {
        EncodedTable {
            kind: self.kind,
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.take_rows(rows)).collect(),
            row_count: rows.len(),
        }
    }

    /// Replaces or appends a column.
    fn with_column(&self, spec: FieldSpec, column: EncodedColumn) -> EncodedTable {
        let mut out = self.clone();
        match out.schema.iter().position(|f| f.name == spec.name) {
            Some(i) => {
                out.schema[i] = spec;
                out.columns[i] = column;
            }
            None => {
                out.schema.push(spec);
                out.columns.push(column);
            }
        }
        out
    }
}

/// Raw atomic tables a dataset is built from. Only `inter` is mandatory.
#[derive(Debug, Clone, Default)]
pub struct AtomicTables {
    pub inter: Option<DataTable>,
    pub user: Option<DataTable>,
    pub item: Option<DataTable>,
    pub kg: Option<DataTable>,
    pub link: Option<DataTable>,
    pub net: Option<DataTable>,
}

/// Name of the vocabulary a token field of a table is encoded with.
fn vocab_name(kind: AtomicFileKind, field: &str) -> String {
    match (kind, field) {
        (_, USER_ID) | (AtomicFileKind::Net, SOURCE_ID | TARGET_ID) => USER_ID.into(),
        (_, ITEM_ID) => ITEM_ID.into(),
        (AtomicFileKind::Kg, HEAD_ID | TAIL_ID) | (_, ENTITY_ID) => ENTITY_ID.into(),
        (_, RELATION_ID) => RELATION_ID.into(),
        (_, other) => other.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inter: EncodedTable,
    user_features: Option<EncodedTable>,
    item_features: Option<EncodedTable>,
    kg: Option<EncodedTable>,
    link: Option<EncodedTable>,
    net: Option<EncodedTable>,
    vocabs: BTreeMap<String, Vocabulary>,
    users: Vec<u32>,
    items: Vec<u32>,
}

impl Dataset {
    /// Builds a dataset from interaction rows only.
    pub fn from_inter(inter: DataTable) -> Result<Self> {
        Self::from_tables(AtomicTables {
            inter: Some(inter),
            ..Default::default()
        })
    }

    /// Encodes all tables. IDs follow first occurrence scanning tables in
    /// the order inter, user, item, net, link, kg.
    pub fn from_tables(tables: AtomicTables) -> Result<Self> {
        let inter = tables
            .inter
            .ok_or(DatasetError::UnknownField("interaction table".into()))?;
        let expect = |t: &Option<DataTable>, kind: AtomicFileKind| -> Result<()> {
            match t {
                Some(t) if t.kind() != kind => Err(DatasetError::WrongKind {
                    expected: kind,
                    found: t.kind(),
                }),
                _ => Ok(()),
            }
        };
        if inter.kind() != AtomicFileKind::Inter {
            return Err(DatasetError::WrongKind {
                expected: AtomicFileKind::Inter,
                found: inter.kind(),
            });
        }
        expect(&tables.user, AtomicFileKind::User)?;
        expect(&tables.item, AtomicFileKind::Item)?;
        expect(&tables.kg, AtomicFileKind::Kg)?;
        expect(&tables.link, AtomicFileKind::Link)?;
        expect(&tables.net, AtomicFileKind::Net)?;

        let mut vocabs = BTreeMap::new();
        let inter = encode_table(inter, &mut vocabs);
        let user_features = tables.user.map(|t| encode_table(t, &mut vocabs));
        let item_features = tables.item.map(|t| encode_table(t, &mut vocabs));
        let net = tables.net.map(|t| encode_table(t, &mut vocabs));
        let link = tables.link.map(|t| encode_table(t, &mut vocabs));
        let kg = tables.kg.map(|t| encode_table(t, &mut vocabs));
        vocabs
            .entry(USER_ID.to_string())
            .or_insert_with(|| Vocabulary::new(USER_ID));
        vocabs
            .entry(ITEM_ID.to_string())
            .or_insert_with(|| Vocabulary::new(ITEM_ID));
        Self::assemble(inter, user_features, item_features, kg, link, net, vocabs)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        inter: EncodedTable,
        user_features: Option<EncodedTable>,
        item_features: Option<EncodedTable>,
        kg: Option<EncodedTable>,
        link: Option<EncodedTable>,
        net: Option<EncodedTable>,
        vocabs: BTreeMap<String, Vocabulary>,
    ) -> Result<Self> {
        let ids = |field: &str| -> Result<Vec<u32>> {
            inter
                .token_column(field)?
                .iter()
                .enumerate()
                .map(|(row, id)| {
                    id.ok_or_else(|| DatasetError::MissingId {
                        kind: AtomicFileKind::Inter,
                        field: field.to_string(),
                        row,
                    })
                })
                .collect()
        };
        let users = ids(USER_ID)?;
        let items = ids(ITEM_ID)?;
        Ok(Self {
            inter,
            user_features,
            item_features,
            kg,
            link,
            net,
            vocabs,
            users,
            items,
        })
    }

    fn with_inter(&self, inter: EncodedTable) -> Result<Self> {
        Self::assemble(
            inter,
            self.user_features.clone(),
            self.item_features.clone(),
            self.kg.clone(),
            self.link.clone(),
            self.net.clone(),
            self.vocabs.clone(),
        )
    }

    pub fn inter(&self) -> &EncodedTable {
        &self.inter
    }

    pub fn user_features(&self) -> Option<&EncodedTable> {
        self.user_features.as_ref()
    }

    pub fn item_features(&self) -> Option<&EncodedTable> {
        self.item_features.as_ref()
    }

    pub fn kg(&self) -> Option<&EncodedTable> {
        self.kg.as_ref()
    }

    pub fn link(&self) -> Option<&EncodedTable> {
        self.link.as_ref()
    }

    pub fn net(&self) -> Option<&EncodedTable> {
        self.net.as_ref()
    }

    pub fn vocab(&self, name: &str) -> Option<&Vocabulary> {
        self.vocabs.get(name)
    }

    pub fn vocabs(&self) -> &BTreeMap<String, Vocabulary> {
        &self.vocabs
    }

    /// Number of user IDs including the padding ID.
    pub fn n_users(&self) -> usize {
        self.vocabs[USER_ID].len()
    }

    /// Number of item IDs including the padding ID.
    pub fn n_items(&self) -> usize {
        self.vocabs[ITEM_ID].len()
    }

    pub fn len(&self) -> usize {
        self.inter.row_count
    }

    pub fn is_empty(&self) -> bool {
        self.inter.row_count == 0
    }

    /// User ID of every interaction row.
    pub fn users(&self) -> &[u32] {
        &self.users
    }

    /// Item ID of every interaction row.
    pub fn items(&self) -> &[u32] {
        &self.items
    }

    pub fn timestamps(&self) -> Option<&[Option<f64>]> {
        self.inter.float_column(TIMESTAMP).ok()
    }

    /// Decodes an interaction table back to raw tokens.
    pub fn decode_inter(&self) -> DataTable {
        decode_table(&self.inter, &self.vocabs)
    }

    /// Interaction rows as a batch. Missing tokens become the padding ID and
    /// missing floats become NaN.
    pub fn inter_batch(&self, rows: &[usize]) -> Batch {
        table_batch(&self.inter, rows)
    }
}

fn encode_table(table: DataTable, vocabs: &mut BTreeMap<String, Vocabulary>) -> EncodedTable {
    let (kind, schema, columns) = table.into_parts();
    let row_count = columns.first().map_or(0, Column::len);
    let columns = schema
        .iter()
        .zip(columns)
        .map(|(spec, col)| {
            let name = vocab_name(kind, &spec.name);
            match col {
                Column::Token(v) => {
                    let vocab = vocabs
                        .entry(name.clone())
                        .or_insert_with(|| Vocabulary::new(name.clone()));
                    EncodedColumn::Token(v.iter().map(|t| t.as_deref().map(|t| vocab.get_or_insert(t))).collect())
                }
                Column::TokenSeq(v) => {
                    let vocab = vocabs
                        .entry(name.clone())
                        .or_insert_with(|| Vocabulary::new(name.clone()));
                    EncodedColumn::TokenSeq(
                        v.iter()
                            .map(|seq| {
                                seq.as_ref()
                                    .map(|seq| seq.iter().map(|t| vocab.get_or_insert(t)).collect())
                            })
                            .collect(),
                    )
                }
                Column::Float(v) => EncodedColumn::Float(v),
                Column::FloatSeq(v) => EncodedColumn::FloatSeq(v),
            }
        })
        .collect();
    EncodedTable {
        kind,
        schema,
        columns,
        row_count,
    }
}

fn decode_table(table: &EncodedTable, vocabs: &BTreeMap<String, Vocabulary>) -> DataTable {
    let decode = |vocab: &Vocabulary, id: u32| vocab.token(id).map(str::to_string);
    let columns = table
        .schema
        .iter()
        .zip(&table.columns)
        .map(|(spec, col)| {
            let vocab = || &vocabs[&vocab_name(table.kind, &spec.name)];
            match col {
                EncodedColumn::Token(v) => {
                    let vocab = vocab();
                    Column::Token(v.iter().map(|id| id.and_then(|id| decode(vocab, id))).collect())
                }
                EncodedColumn::TokenSeq(v) => {
                    let vocab = vocab();
                    Column::TokenSeq(
                        v.iter()
                            .map(|seq| {
                                seq.as_ref()
                                    .map(|seq| seq.iter().filter_map(|&id| decode(vocab, id)).collect())
                            })
                            .collect(),
                    )
                }
                EncodedColumn::Float(v) => Column::Float(v.clone()),
                EncodedColumn::FloatSeq(v) => Column::FloatSeq(v.clone()),
            }
        })
        .collect();
    DataTable::new(table.kind, table.schema.clone(), columns).expect("decoding preserves a valid schema")
}

fn table_batch(table: &EncodedTable, rows: &[usize]) -> Batch {
    let mut batch = Batch::with_len(rows.len());
    for (spec, col) in table.schema.iter().zip(&table.columns) {
        let column = match col {
            EncodedColumn::Token(v) => BatchColumn::Ids(rows.iter().map(|&r| v[r].unwrap_or(PAD_ID)).collect()),
            EncodedColumn::TokenSeq(v) => {
                let width = rows
                    .iter()
                    .map(|&r| v[r].as_ref().map_or(0, Vec::len))
                    .max()
                    .unwrap_or(0);
                BatchColumn::IdSeqs(
                    rows.iter()
                        .map(|&r| {
                            let mut seq = v[r].clone().unwrap_or_default();
                            seq.resize(width, PAD_ID);
                            seq
                        })
                        .collect(),
                )
            }
            EncodedColumn::Float(v) => BatchColumn::Floats(rows.iter().map(|&r| v[r].unwrap_or(f64::NAN)).collect()),
            // float sequences are carried but not consumed by any model
            EncodedColumn::FloatSeq(_) => continue,
        };
        batch
            .insert(&spec.name, column)
            .expect("columns drawn from one row set share a length");
    }
    batch
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::atomic::parse_atomic_str;

    #[test]
    fn encodes_first_occurrence() {
        let ds = from_pairs(&[("u1", "b"), ("u2", "a"), ("u1", "b"), ("u3", "c")]);
        assert_eq!(ds.items(), &[1, 2, 1, 3]);
        assert_eq!(ds.users(), &[1, 2, 1, 3]);
        assert_eq!(ds.n_items(), 4);
        assert_eq!(ds.n_users(), 4);
    }

    #[test]
    fn item_only_in_feature_table_gets_an_id() {
        let inter = parse_atomic_str("user_id:token,item_id:token\nu,i1\n", AtomicFileKind::Inter, ',').unwrap();
        let item = parse_atomic_str("item_id:token,price:float\ni2,3.0\ni1,1.0\n", AtomicFileKind::Item, ',').unwrap();
        let ds = Dataset::from_tables(AtomicTables {
            inter: Some(inter),
            item: Some(item),
            ..Default::default()
        })
        .unwrap();
        let vocab = ds.vocab(ITEM_ID).unwrap();
        assert_eq!(vocab.id("i1"), Some(1));
        assert_eq!(vocab.id("i2"), Some(2));
        assert_eq!(ds.n_items(), 3);
    }

    #[test]
    fn missing_user_is_rejected() {
        let inter = parse_atomic_str("user_id:token,item_id:token\n,i1\n", AtomicFileKind::Inter, ',').unwrap();
        assert!(matches!(
            Dataset::from_inter(inter),
            Err(DatasetError::MissingId { row: 0, .. })
        ));
    }

    #[test]
    fn decode_inverts_encode() {
        let text = "user_id:token,item_id:token,tags:token_seq,rating:float\nu1,i1,a b,1\nu2,i1,,2\nu1,i2,b c,\n";
        let raw = parse_atomic_str(text, AtomicFileKind::Inter, ',').unwrap();
        let ds = Dataset::from_inter(raw.clone()).unwrap();
        assert_eq!(ds.decode_inter(), raw);
    }

    #[test]
    fn inter_batch_pads_sequences() {
        let ds = from_text("user_id:token,item_id:token,tags:token_seq,rating:float\nu1,i1,a b,1\nu2,i1,,\n");
        let b = ds.inter_batch(&[0, 1]);
        assert_eq!(b.len(), 2);
        assert_eq!(b.ids(USER_ID).unwrap(), &[1, 2]);
        assert_eq!(b.get("tags"), Some(&BatchColumn::IdSeqs(vec![vec![1, 2], vec![0, 0]])));
        let r = b.floats(RATING).unwrap();
        assert_eq!(r[0], 1.0);
        assert!(r[1].is_nan());
    }
}
