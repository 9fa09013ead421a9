use std::collections::BTreeMap;

use proptest::prelude::*;
use semslice::corpus::{load_dataset, write_dataset, DataFormat, Dataset, Example};
use serde_json::Value;

fn example(json_metadata: bool) -> impl Strategy<Value = Example> {
    let meta_value = if json_metadata {
        prop_oneof![
            "[a-z ]{1,8}".prop_map(Value::from),
            any::<i32>().prop_map(Value::from),
            any::<bool>().prop_map(Value::from),
        ]
        .boxed()
    } else {
        "[a-z0-9]{1,8}".prop_map(Value::from).boxed()
    };
    (
        "\\PC{0,3}[a-zA-Z0-9,\"'\n ]{1,40}",
        proptest::option::of("[01]"),
        proptest::option::of("[01]"),
        proptest::collection::btree_map("[a-z]{1,6}", any::<bool>(), 0..3),
        proptest::collection::btree_map("m_[a-z]{1,6}", meta_value, 0..3),
    )
        .prop_filter("text needs a visible character", |(t, ..)| !t.trim().is_empty())
        .prop_map(|(text, label, pred, gold, meta)| {
            let mut e = Example::new("", text);
            e.task_label = label;
            e.task_prediction = pred;
            e.gold_slices = gold;
            e.metadata = meta.into_iter().collect::<BTreeMap<_, _>>();
            e
        })
}

fn dataset(json_metadata: bool) -> impl Strategy<Value = Dataset> {
    proptest::collection::vec(example(json_metadata), 1..12).prop_map(|rows| {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, mut e)| {
                e.id = format!("id{i}");
                e
            })
            .collect();
        Dataset::new("data", rows).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsonl_round_trip(ds in dataset(true)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.jsonl");
        write_dataset(&ds, &p, DataFormat::Jsonl).unwrap();
        let back = load_dataset(&p, DataFormat::Jsonl).unwrap();
        prop_assert_eq!(back.examples(), ds.examples());
        prop_assert_eq!(back.name(), "data");
    }

    #[test]
    fn csv_round_trip(ds in dataset(false)) {
        // Absent values are written as empty cells, so every row carries the
        // union of columns; gold flags absent on some rows stay absent.
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.csv");
        write_dataset(&ds, &p, DataFormat::Csv).unwrap();
        let back = load_dataset(&p, DataFormat::Csv).unwrap();
        prop_assert_eq!(back.examples(), ds.examples());
    }
}
