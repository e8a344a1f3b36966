//! Atomic data files.
//!
//! Every task input is a delimited UTF-8 text file whose suffix names its
//! role (`.inter`, `.user`, `.item`, `.kg`, `.link`, `.net`). Line 1 is a
//! header of `name:type` tokens, every following line is one row. Cells
//! never contain the separator; there is no quoting. An empty cell is a
//! missing value. Elements of `token_seq` / `float_seq` cells are separated
//! by a single space.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub const DEFAULT_SEPARATOR: char = ',';
pub const SEQ_SEPARATOR: char = ' ';

pub const USER_ID: &str = "user_id";
pub const ITEM_ID: &str = "item_id";
pub const HEAD_ID: &str = "head_id";
pub const RELATION_ID: &str = "relation_id";
pub const TAIL_ID: &str = "tail_id";
pub const ENTITY_ID: &str = "entity_id";
pub const SOURCE_ID: &str = "source_id";
pub const TARGET_ID: &str = "target_id";

#[derive(Debug, Error)]
pub enum AtomicError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unknown field type `{0}`")]
    UnknownType(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: usize, expected: usize, found: usize },
    #[error("line {line}: field `{field}` expects a float, got `{text}`")]
    BadFloat { line: usize, field: String, text: String },
    #[error("{kind} file: {reason}")]
    Schema { kind: AtomicFileKind, reason: String },
    #[error("field `{field}`, row {row}: cell cannot be written: {reason}")]
    Unwritable { field: String, row: usize, reason: String },
    #[error("mapping references column `{0}` absent from the source")]
    MissingSourceColumn(String),
    #[error("invalid field mapping `{0}`")]
    BadMapping(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, AtomicError>;

/// The four column kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldType {
    Token,
    TokenSeq,
    Float,
    FloatSeq,
}

impl FieldType {
    pub fn tag(self) -> &'static str {
        match self {
            FieldType::Token => "token",
            FieldType::TokenSeq => "token_seq",
            FieldType::Float => "float",
            FieldType::FloatSeq => "float_seq",
        }
    }

    pub fn is_token(self) -> bool {
        matches!(self, FieldType::Token | FieldType::TokenSeq)
    }
}

impl FromStr for FieldType {
    type Err = AtomicError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(FieldType::Token),
            "token_seq" => Ok(FieldType::TokenSeq),
            "float" => Ok(FieldType::Float),
            "float_seq" => Ok(FieldType::FloatSeq),
            other => Err(AtomicError::UnknownType(other.to_string())),
        }
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    pub name: String,
    pub ftype: FieldType,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, ftype: FieldType) -> Self {
        Self {
            name: name.into(),
            ftype,
        }
    }

    /// Parses a `name:type` header token.
    pub fn parse(token: &str) -> Result<Self> {
        let (name, tag) = token
            .rsplit_once(':')
            .ok_or_else(|| AtomicError::MalformedHeader(format!("`{token}` is not name:type")))?;
        if name.is_empty() {
            return Err(AtomicError::MalformedHeader(format!(
                "`{token}` has an empty field name"
            )));
        }
        Ok(FieldSpec::new(name, tag.parse()?))
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name, self.ftype)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomicFileKind {
    Inter,
    User,
    Item,
    Kg,
    Link,
    Net,
}

impl AtomicFileKind {
    pub const ALL: [AtomicFileKind; 6] = [
        AtomicFileKind::Inter,
        AtomicFileKind::User,
        AtomicFileKind::Item,
        AtomicFileKind::Kg,
        AtomicFileKind::Link,
        AtomicFileKind::Net,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            AtomicFileKind::Inter => "inter",
            AtomicFileKind::User => "user",
            AtomicFileKind::Item => "item",
            AtomicFileKind::Kg => "kg",
            AtomicFileKind::Link => "link",
            AtomicFileKind::Net => "net",
        }
    }

    /// Infers the kind from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?;
        ext.parse().ok()
    }

    /// Checks the structural requirements of this file kind.
    pub fn validate(self, schema: &[FieldSpec]) -> Result<()> {
        let has_token = |name: &str| schema.iter().any(|f| f.name == name && f.ftype == FieldType::Token);
        let require = |names: &[&str]| -> Result<()> {
            for name in names {
                if !has_token(name) {
                    return Err(AtomicError::Schema {
                        kind: self,
                        reason: format!("missing token field `{name}`"),
                    });
                }
            }
            Ok(())
        };
        let only = |allowed: &[&str], extra_float: bool| -> Result<()> {
            for f in schema {
                let ok = allowed.contains(&f.name.as_str()) || (extra_float && f.ftype == FieldType::Float);
                if !ok {
                    return Err(AtomicError::Schema {
                        kind: self,
                        reason: format!("unexpected field `{f}`"),
                    });
                }
            }
            Ok(())
        };
        match self {
            AtomicFileKind::Inter => require(&[USER_ID, ITEM_ID]),
            AtomicFileKind::User => require(&[USER_ID]),
            AtomicFileKind::Item => require(&[ITEM_ID]),
            AtomicFileKind::Kg => {
                require(&[HEAD_ID, TAIL_ID, RELATION_ID])?;
                only(&[HEAD_ID, TAIL_ID, RELATION_ID], false)
            }
            AtomicFileKind::Link => {
                require(&[ITEM_ID, ENTITY_ID])?;
                only(&[ITEM_ID, ENTITY_ID], false)
            }
            AtomicFileKind::Net => {
                require(&[SOURCE_ID, TARGET_ID])?;
                only(&[SOURCE_ID, TARGET_ID], true)?;
                if schema.len() > 3 {
                    return Err(AtomicError::Schema {
                        kind: self,
                        reason: "at most one weight field is allowed".into(),
                    });
                }
                Ok(())
            }
        }
    }
}

impl FromStr for AtomicFileKind {
    type Err = AtomicError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim_start_matches('.');
        AtomicFileKind::ALL
            .into_iter()
            .find(|k| k.suffix() == s)
            .ok_or_else(|| AtomicError::MalformedHeader(format!("unknown atomic file kind `{s}`")))
    }
}

impl fmt::Display for AtomicFileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, ".{}", self.suffix())
    }
}

/// One typed column. `None` is the missing marker.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Token(Vec<Option<String>>),
    TokenSeq(Vec<Option<Vec<String>>>),
    Float(Vec<Option<f64>>),
    FloatSeq(Vec<Option<Vec<f64>>>),
}

impl Column {
    pub fn empty(ftype: FieldType) -> Self {
        match ftype {
            FieldType::Token => Column::Token(Vec::new()),
            FieldType::TokenSeq => Column::TokenSeq(Vec::new()),
            FieldType::Float => Column::Float(Vec::new()),
            FieldType::FloatSeq => Column::FloatSeq(Vec::new()),
        }
    }

    pub fn ftype(&self) -> FieldType {
        match self {
            Column::Token(_) => FieldType::Token,
            Column::TokenSeq(_) => FieldType::TokenSeq,
            Column::Float(_) => FieldType::Float,
            Column::FloatSeq(_) => FieldType::FloatSeq,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Token(v) => v.len(),
            Column::TokenSeq(v) => v.len(),
            Column::Float(v) => v.len(),
            Column::FloatSeq(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_cell(&mut self, cell: &str, line: usize, field: &str) -> Result<()> {
        let bad_float = |text: &str| AtomicError::BadFloat {
            line,
            field: field.to_string(),
            text: text.to_string(),
        };
        let parse_float = |text: &str| -> Result<f64> {
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(bad_float(text)),
            }
        };
        match self {
            Column::Token(v) => v.push((!cell.is_empty()).then(|| cell.to_string())),
            Column::TokenSeq(v) => v.push((!cell.is_empty()).then(|| split_seq(cell))),
            Column::Float(v) => v.push(if cell.is_empty() {
                None
            } else {
                Some(parse_float(cell)?)
            }),
            Column::FloatSeq(v) => v.push(if cell.is_empty() {
                None
            } else {
                Some(cell.split(SEQ_SEPARATOR).map(parse_float).collect::<Result<Vec<_>>>()?)
            }),
        }
        Ok(())
    }

    /// Renders row `row` as a cell; the empty string encodes a missing value.
    fn render_cell(&self, row: usize) -> String {
        fn join<T: ToString>(items: &[T]) -> String {
            items.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
        }
        match self {
            Column::Token(v) => v[row].clone().unwrap_or_default(),
            Column::TokenSeq(v) => v[row].as_deref().map(join).unwrap_or_default(),
            // `Display` for f64 prints the shortest string that parses back
            // to the same value.
            Column::Float(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            Column::FloatSeq(v) => v[row].as_deref().map(join).unwrap_or_default(),
        }
    }

    fn take_rows(&self, rows: &[usize]) -> Column {
        fn pick<T: Clone>(v: &[T], rows: &[usize]) -> Vec<T> {
            rows.iter().map(|&r| v[r].clone()).collect()
        }
        match self {
            Column::Token(v) => Column::Token(pick(v, rows)),
            Column::TokenSeq(v) => Column::TokenSeq(pick(v, rows)),
            Column::Float(v) => Column::Float(pick(v, rows)),
            Column::FloatSeq(v) => Column::FloatSeq(pick(v, rows)),
        }
    }
}

/// Splits a sequence cell on single spaces.
pub fn split_seq(cell: &str) -> Vec<String> {
    cell.split(SEQ_SEPARATOR).map(str::to_string).collect()
}

/// The parsed content of one atomic file.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    kind: AtomicFileKind,
    schema: Vec<FieldSpec>,
    columns: Vec<Column>,
    row_count: usize,
}

impl DataTable {
    /// Builds a table, checking the schema and that all columns agree in length.
    pub fn new(kind: AtomicFileKind, schema: Vec<FieldSpec>, columns: Vec<Column>) -> Result<Self> {
        check_schema(&schema)?;
        kind.validate(&schema)?;
        if schema.len() != columns.len() {
            return Err(AtomicError::Schema {
                kind,
                reason: format!("{} fields but {} columns", schema.len(), columns.len()),
            });
        }
        let row_count = columns.first().map_or(0, Column::len);
        for (spec, col) in schema.iter().zip(&columns) {
            if spec.ftype != col.ftype() {
                return Err(AtomicError::Schema {
                    kind,
                    reason: format!(
                        "field `{}` declared {} but holds {}",
                        spec.name,
                        spec.ftype,
                        col.ftype()
                    ),
                });
            }
            if col.len() != row_count {
                return Err(AtomicError::Schema {
                    kind,
                    reason: format!("column `{}` has {} rows, expected {row_count}", spec.name, col.len()),
                });
            }
        }
        Ok(Self {
            kind,
            schema,
            columns,
            row_count,
        })
    }

    pub fn kind(&self) -> AtomicFileKind {
        self.kind
    }

    pub fn schema(&self) -> &[FieldSpec] {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|f| f.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.field_index(name).map(|i| &self.columns[i])
    }

    /// A new table holding only `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            kind: self.kind,
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.take_rows(rows)).collect(),
            row_count: rows.len(),
        }
    }

    pub fn into_parts(self) -> (AtomicFileKind, Vec<FieldSpec>, Vec<Column>) {
        (self.kind, self.schema, self.columns)
    }
}

fn check_schema(schema: &[FieldSpec]) -> Result<()> {
    if schema.is_empty() {
        return Err(AtomicError::MalformedHeader("no fields".into()));
    }
    let mut seen = HashSet::new();
    for f in schema {
        if f.name.is_empty() || f.name.chars().any(|c| c.is_whitespace() || c == ',' || c == '\t') {
            return Err(AtomicError::MalformedHeader(format!("invalid field name `{}`", f.name)));
        }
        if !seen.insert(f.name.as_str()) {
            return Err(AtomicError::MalformedHeader(format!("duplicate field `{}`", f.name)));
        }
    }
    Ok(())
}

fn parse_header(line: &str, separator: char) -> Result<Vec<FieldSpec>> {
    let schema = line
        .split(separator)
        .map(FieldSpec::parse)
        .collect::<Result<Vec<_>>>()?;
    check_schema(&schema)?;
    if schema.iter().any(|f| f.name.contains(separator)) {
        return Err(AtomicError::MalformedHeader("field name contains the separator".into()));
    }
    Ok(schema)
}

/// Parses atomic-file text. `\r\n` line endings are tolerated on input.
pub fn parse_atomic_str(text: &str, kind: AtomicFileKind, separator: char) -> Result<DataTable> {
    let mut lines = text.split('\n');
    let header = lines
        .next()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| AtomicError::MalformedHeader("missing header line".into()))?;
    let schema = parse_header(header.trim_end_matches('\r'), separator)?;
    kind.validate(&schema)?;

    let mut columns: Vec<Column> = schema.iter().map(|f| Column::empty(f.ftype)).collect();
    let mut body: Vec<&str> = lines.collect();
    // A terminating newline produces one trailing empty piece.
    if body.last() == Some(&"") {
        body.pop();
    }
    for (i, raw) in body.iter().enumerate() {
        let line_no = i + 2;
        let line = raw.trim_end_matches('\r');
        let cells: Vec<&str> = line.split(separator).collect();
        if cells.len() != schema.len() {
            return Err(AtomicError::FieldCount {
                line: line_no,
                expected: schema.len(),
                found: cells.len(),
            });
        }
        for ((col, spec), cell) in columns.iter_mut().zip(&schema).zip(cells) {
            col.push_cell(cell, line_no, &spec.name)?;
        }
    }
    let row_count = body.len();
    Ok(DataTable {
        kind,
        schema,
        columns,
        row_count,
    })
}

pub fn parse_atomic_file(path: &Path, kind: AtomicFileKind, separator: char) -> Result<DataTable> {
    let text = fs::read_to_string(path).map_err(|source| AtomicError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_atomic_str(&text, kind, separator)
}

/// Renders a table in atomic-file syntax.
pub fn render_atomic(table: &DataTable, separator: char) -> Result<String> {
    let mut out = String::new();
    let header: Vec<String> = table.schema.iter().map(ToString::to_string).collect();
    out.push_str(&header.join(&separator.to_string()));
    out.push('\n');
    let mut cells = Vec::with_capacity(table.schema.len());
    for row in 0..table.row_count {
        cells.clear();
        for (spec, col) in table.schema.iter().zip(&table.columns) {
            let cell = col.render_cell(row);
            check_cell(&cell, spec, row, separator, col)?;
            cells.push(cell);
        }
        out.push_str(&cells.join(&separator.to_string()));
        out.push('\n');
    }
    Ok(out)
}

fn check_cell(cell: &str, spec: &FieldSpec, row: usize, separator: char, col: &Column) -> Result<()> {
    let fail = |reason: &str| {
        Err(AtomicError::Unwritable {
            field: spec.name.clone(),
            row,
            reason: reason.to_string(),
        })
    };
    if cell.contains(separator) || cell.contains('\n') || cell.contains('\r') {
        return fail("contains the separator or a line break");
    }
    match col {
        Column::Token(v) if v[row].as_deref() == Some("") => fail("empty token is indistinguishable from missing"),
        Column::TokenSeq(v) => match &v[row] {
            Some(seq) if seq.is_empty() => fail("empty sequence is indistinguishable from missing"),
            Some(seq) if seq.iter().any(|t| t.is_empty() || t.contains(SEQ_SEPARATOR)) => {
                fail("sequence element is empty or contains a space")
            }
            _ => Ok(()),
        },
        Column::Float(v) if v[row].is_some_and(|x| !x.is_finite()) => fail("non-finite float"),
        Column::FloatSeq(v) => match &v[row] {
            Some(seq) if seq.is_empty() => fail("empty sequence is indistinguishable from missing"),
            Some(seq) if seq.iter().any(|x| !x.is_finite()) => fail("non-finite float"),
            _ => Ok(()),
        },
        _ => Ok(()),
    }
}

pub fn write_atomic_file(table: &DataTable, path: &Path, separator: char) -> Result<()> {
    let text = render_atomic(table, separator)?;
    let write_err = |source| AtomicError::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(write_err)?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(write_err)?;
    w.flush().map_err(write_err)
}

/// Source-column to atomic-field assignments used by [`convert_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldMapping {
    pub entries: Vec<(String, FieldSpec)>,
}

impl FieldMapping {
    /// Parses `src=name:type,src2=name2:type2`.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = text
            .split(',')
            .map(|part| {
                let (src, spec) = part
                    .split_once('=')
                    .ok_or_else(|| AtomicError::BadMapping(part.to_string()))?;
                if src.is_empty() {
                    return Err(AtomicError::BadMapping(part.to_string()));
                }
                Ok((src.to_string(), FieldSpec::parse(spec)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }
}

/// Reads a headed delimited file and keeps, renames and retypes the mapped
/// columns, in mapping order.
pub fn convert_csv(path: &Path, mapping: &FieldMapping, kind: AtomicFileKind, delimiter: u8) -> Result<DataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => AtomicError::Read {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => AtomicError::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let source_idx = mapping
        .entries
        .iter()
        .map(|(src, _)| {
            headers
                .iter()
                .position(|h| h == src)
                .ok_or_else(|| AtomicError::MissingSourceColumn(src.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let schema: Vec<FieldSpec> = mapping.entries.iter().map(|(_, s)| s.clone()).collect();
    check_schema(&schema)?;
    kind.validate(&schema)?;

    let mut columns: Vec<Column> = schema.iter().map(|f| Column::empty(f.ftype)).collect();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line_no = i + 2;
        for ((col, spec), &src) in columns.iter_mut().zip(&schema).zip(&source_idx) {
            let cell = record.get(src).unwrap_or("").trim();
            col.push_cell(cell, line_no, &spec.name)?;
        }
    }
    DataTable::new(kind, schema, columns)
}
