use std::fs;

use proptest::collection::vec;
use proptest::prelude::*;

use recbench::atomic::{
    convert_csv, parse_atomic_file, parse_atomic_str, render_atomic, split_seq, write_atomic_file, AtomicFileKind,
    Column, DataTable, FieldMapping, FieldSpec, FieldType,
};

fn token() -> impl Strategy<Value = String> {
    "[a-z0-9_.-]{1,6}"
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        Just(0.0),
        Just(-0.0),
    ]
}

fn column(ftype: FieldType, rows: usize) -> BoxedStrategy<Column> {
    match ftype {
        FieldType::Token => vec(proptest::option::weighted(0.9, token()), rows)
            .prop_map(Column::Token)
            .boxed(),
        FieldType::TokenSeq => vec(proptest::option::weighted(0.9, vec(token(), 1..4)), rows)
            .prop_map(Column::TokenSeq)
            .boxed(),
        FieldType::Float => vec(proptest::option::weighted(0.9, finite()), rows)
            .prop_map(Column::Float)
            .boxed(),
        FieldType::FloatSeq => vec(proptest::option::weighted(0.9, vec(finite(), 1..4)), rows)
            .prop_map(Column::FloatSeq)
            .boxed(),
    }
}

/// Interaction tables with the two ID fields and up to four extra fields
/// of random types.
fn inter_table() -> impl Strategy<Value = DataTable> {
    let types = vec(
        prop_oneof![
            Just(FieldType::Token),
            Just(FieldType::TokenSeq),
            Just(FieldType::Float),
            Just(FieldType::FloatSeq)
        ],
        0..4,
    );
    (types, 0usize..20).prop_flat_map(|(extra, rows)| {
        let mut schema = vec![
            FieldSpec::new("user_id", FieldType::Token),
            FieldSpec::new("item_id", FieldType::Token),
        ];
        schema.extend(
            extra
                .iter()
                .enumerate()
                .map(|(k, &t)| FieldSpec::new(format!("f{k}"), t)),
        );
        let cols: Vec<BoxedStrategy<Column>> = schema.iter().map(|f| column(f.ftype, rows)).collect();
        cols.prop_map(move |columns| DataTable::new(AtomicFileKind::Inter, schema.clone(), columns).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn render_then_parse_is_identity(table in inter_table(), sep in prop_oneof![Just(','), Just('\t'), Just(';')]) {
        let text = render_atomic(&table, sep).unwrap();
        let back = parse_atomic_str(&text, AtomicFileKind::Inter, sep).unwrap();
        prop_assert_eq!(back, table);
    }

    #[test]
    fn file_round_trip(table in inter_table()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.inter");
        write_atomic_file(&table, &path, ',').unwrap();
        prop_assert_eq!(parse_atomic_file(&path, AtomicFileKind::Inter, ',').unwrap(), table);
    }

    #[test]
    fn seq_split_matches_char_scan(parts in vec("[a-z0-9]{1,5}", 1..8)) {
        let cell = parts.join(" ");
        // scan characters, cutting at each space
        let mut expected = vec![String::new()];
        for c in cell.chars() {
            if c == ' ' {
                expected.push(String::new());
            } else {
                expected.last_mut().unwrap().push(c);
            }
        }
        prop_assert_eq!(split_seq(&cell), expected);
    }
}

#[test]
fn crlf_input_parses_like_lf() {
    let lf = "user_id:token,item_id:token,rating:float\nu1,i1,3\nu2,i2,\n";
    let crlf = lf.replace('\n', "\r\n");
    assert_eq!(
        parse_atomic_str(&crlf, AtomicFileKind::Inter, ',').unwrap(),
        parse_atomic_str(lf, AtomicFileKind::Inter, ',').unwrap()
    );
}

#[test]
fn unwritable_cells_are_rejected() {
    let schema = vec![
        FieldSpec::new("user_id", FieldType::Token),
        FieldSpec::new("item_id", FieldType::Token),
        FieldSpec::new("tags", FieldType::TokenSeq),
    ];
    let with_tags = |tags: Vec<String>| {
        DataTable::new(
            AtomicFileKind::Inter,
            schema.clone(),
            vec![
                Column::Token(vec![Some("u".into())]),
                Column::Token(vec![Some("i".into())]),
                Column::TokenSeq(vec![Some(tags)]),
            ],
        )
        .unwrap()
    };
    assert!(render_atomic(&with_tags(vec![]), ',').is_err());
    assert!(render_atomic(&with_tags(vec!["a b".into()]), ',').is_err());
    assert!(render_atomic(&with_tags(vec!["a,b".into()]), ',').is_err());
    assert!(render_atomic(&with_tags(vec!["a,b".into()]), '\t').is_ok());
}

#[test]
fn convert_selects_renames_and_retypes() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("ratings.csv");
    fs::write(
        &src,
        "movie,who,stars,when,ignored\nm1,alice,4.5,100,x\nm2,bob,,200,y\n",
    )
    .unwrap();
    let mapping =
        FieldMapping::parse("who=user_id:token,movie=item_id:token,stars=rating:float,when=timestamp:float").unwrap();
    let table = convert_csv(&src, &mapping, AtomicFileKind::Inter, b',').unwrap();
    let text = render_atomic(&table, ',').unwrap();
    assert_eq!(
        text,
        "user_id:token,item_id:token,rating:float,timestamp:float\nalice,m1,4.5,100\nbob,m2,,200\n"
    );

    let bad = FieldMapping::parse("nobody=user_id:token,movie=item_id:token").unwrap();
    assert!(convert_csv(&src, &bad, AtomicFileKind::Inter, b',').is_err());
}
