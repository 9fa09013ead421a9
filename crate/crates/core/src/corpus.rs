//! Text datasets with optional task labels, task predictions and gold slice
//! attributes.
//!
//! JSONL is the canonical on-disk format: one object per line with keys
//! `id`, `text`, optional `label`, optional `prediction` and any number of
//! boolean `slice:<name>` columns. CSV uses the same names in its header row.
//! Columns that are none of the above are kept verbatim as metadata so that a
//! load/write cycle reproduces the record.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Column prefix marking a gold slice attribute.
pub const SLICE_PREFIX: &str = "slice:";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: empty text")]
    EmptyText { line: usize },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: column {column:?} must be true or false, got {value:?}")]
    NonBooleanSlice { line: usize, column: String, value: String },
    #[error("missing `text` column")]
    MissingText,
    #[error("dataset {0:?} has no examples")]
    Empty(String),
    #[error("unknown slice {0:?}")]
    UnknownSlice(String),
    #[error("slice {slice:?} references id {id:?} which is not in the dataset")]
    ForeignId { slice: String, id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// Picks the format from a file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

impl FromStr for DataFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(DataFormat::Jsonl),
            "csv" => Ok(DataFormat::Csv),
            other => Err(format!("unknown data format {other:?}")),
        }
    }
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub task_label: Option<String>,
    pub task_prediction: Option<String>,
    pub gold_slices: BTreeMap<String, bool>,
    /// Columns that carry neither text, labels nor slices.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, Value>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            task_label: None,
            task_prediction: None,
            gold_slices: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_task(mut self, label: impl Into<String>, prediction: impl Into<String>) -> Self {
        self.task_label = Some(label.into());
        self.task_prediction = Some(prediction.into());
        self
    }

    pub fn with_gold(mut self, slice: impl Into<String>, member: bool) -> Self {
        self.gold_slices.insert(slice.into(), member);
        self
    }

    /// `Some(true)` when the task prediction matches the label.
    pub fn is_correct(&self) -> Option<bool> {
        match (&self.task_label, &self.task_prediction) {
            (Some(l), Some(p)) => Some(l == p),
            _ => None,
        }
    }
}

/// An immutable, ordered collection of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    examples: Vec<Example>,
    gold_slice_names: BTreeSet<String>,
}

impl Dataset {
    /// Builds a dataset from in-memory examples, enforcing the same invariants
    /// as [`load_dataset`]. Line numbers in errors are 1-based positions.
    pub fn new(name: impl Into<String>, examples: Vec<Example>) -> Result<Self, CorpusError> {
        let name = name.into();
        if examples.is_empty() {
            return Err(CorpusError::Empty(name));
        }
        let mut seen = HashSet::with_capacity(examples.len());
        let mut gold_slice_names = BTreeSet::new();
        for (i, ex) in examples.iter().enumerate() {
            if ex.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { line: i + 1 });
            }
            if !seen.insert(ex.id.as_str()) {
                return Err(CorpusError::DuplicateId { line: i + 1, id: ex.id.clone() });
            }
            gold_slice_names.extend(ex.gold_slices.keys().cloned());
        }
        Ok(Self { name, examples, gold_slice_names })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn gold_slice_names(&self) -> &BTreeSet<String> {
        &self.gold_slice_names
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.id.as_str())
    }

    /// Ground-truth slice for a gold column.
    pub fn gold_slice(&self, name: &str) -> Result<Slice, CorpusError> {
        if !self.gold_slice_names.contains(name) {
            return Err(CorpusError::UnknownSlice(name.to_string()));
        }
        let member_ids = self
            .examples
            .iter()
            .filter(|e| e.gold_slices.get(name).copied().unwrap_or(false))
            .map(|e| e.id.clone())
            .collect();
        Ok(Slice { criterion_name: name.to_string(), member_ids, source: SliceSource::Gold })
    }

    /// Builds a slice from a membership predicate, preserving dataset order.
    pub fn slice_where<F>(&self, name: &str, source: SliceSource, mut member: F) -> Slice
    where
        F: FnMut(&Example) -> bool,
    {
        Slice {
            criterion_name: name.to_string(),
            member_ids: self.examples.iter().filter(|e| member(e)).map(|e| e.id.clone()).collect(),
            source,
        }
    }

    /// Checks that `slice` only references ids of this dataset, without
    /// duplicates and in dataset order.
    pub fn check_slice(&self, slice: &Slice) -> Result<(), CorpusError> {
        let mut cursor = 0usize;
        for id in &slice.member_ids {
            let pos = self.examples[cursor..].iter().position(|e| &e.id == id).map(|p| p + cursor);
            match pos {
                Some(p) => cursor = p + 1,
                None => {
                    return Err(CorpusError::ForeignId {
                        slice: slice.criterion_name.clone(),
                        id: id.clone(),
                    })
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceSource {
    Gold,
    Predicted,
}

/// A subset of dataset ids sharing a criterion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub criterion_name: String,
    pub member_ids: Vec<String>,
    pub source: SliceSource,
}

impl Slice {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset, CorpusError> {
    let file =
        File::open(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    let examples = match format {
        DataFormat::Jsonl => read_jsonl(BufReader::new(file), path)?,
        DataFormat::Csv => read_csv(file)?,
    };
    // Text and id checks already ran with file line numbers.
    Dataset::new(name, examples)
}

fn read_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Example>, CorpusError> {
    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Map<String, Value> = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse { line: line_no, message: e.to_string() })?;
        let row = examples.len();
        let ex = example_from_fields(obj.into_iter(), line_no, row)?;
        if !ids.insert(ex.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: ex.id });
        }
        examples.push(ex);
    }
    Ok(examples)
}

fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<Example>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CorpusError::Parse { line: 1, message: e.to_string() })?.clone();
    if !headers.iter().any(|h| h == "text") {
        return Err(CorpusError::MissingText);
    }
    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CorpusError::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(row + 2),
            message: e.to_string(),
        })?;
        let line_no = record.position().map(|p| p.line() as usize).unwrap_or(row + 2);
        // Empty CSV cells mean "absent" for everything but text.
        let fields = headers
            .iter()
            .zip(record.iter())
            .filter(|(h, v)| *h == "text" || !v.is_empty())
            .map(|(h, v)| (h.to_string(), Value::String(v.to_string())));
        let ex = example_from_fields(fields, line_no, row)?;
        if !ids.insert(ex.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: ex.id });
        }
        examples.push(ex);
    }
    Ok(examples)
}

fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

fn example_from_fields<I>(fields: I, line: usize, row: usize) -> Result<Example, CorpusError>
where
    I: Iterator<Item = (String, Value)>,
{
    let mut id = None;
    let mut text = None;
    let mut ex = Example::new(String::new(), String::new());
    for (key, value) in fields {
        match key.as_str() {
            "id" => id = scalar_to_string(&value),
            "text" => text = scalar_to_string(&value),
            "label" => ex.task_label = scalar_to_string(&value),
            "prediction" => ex.task_prediction = scalar_to_string(&value),
            k if k.starts_with(SLICE_PREFIX) => {
                let name = &k[SLICE_PREFIX.len()..];
                let member = match &value {
                    Value::Null => continue,
                    Value::Bool(b) => *b,
                    Value::String(s) if s.eq_ignore_ascii_case("true") => true,
                    Value::String(s) if s.eq_ignore_ascii_case("false") => false,
                    other => {
                        return Err(CorpusError::NonBooleanSlice {
                            line,
                            column: k.to_string(),
                            value: scalar_to_string(other).unwrap_or_default(),
                        })
                    }
                };
                ex.gold_slices.insert(name.to_string(), member);
            }
            _ => {
                ex.metadata.insert(key, value);
            }
        }
    }
    let text = text.ok_or(CorpusError::MissingText)?;
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyText { line });
    }
    ex.text = text;
    ex.id = id.unwrap_or_else(|| format!("row-{row}"));
    Ok(ex)
}

fn example_to_json(ex: &Example) -> Map<String, Value> {
    let mut obj = Map::new();
    obj.insert("id".into(), Value::String(ex.id.clone()));
    obj.insert("text".into(), Value::String(ex.text.clone()));
    if let Some(l) = &ex.task_label {
        obj.insert("label".into(), Value::String(l.clone()));
    }
    if let Some(p) = &ex.task_prediction {
        obj.insert("prediction".into(), Value::String(p.clone()));
    }
    for (name, member) in &ex.gold_slices {
        obj.insert(format!("{SLICE_PREFIX}{name}"), Value::Bool(*member));
    }
    for (k, v) in &ex.metadata {
        obj.insert(k.clone(), v.clone());
    }
    obj
}

/// Writes a dataset in the given format. Loading the result yields an equal
/// dataset (modulo the name, which comes from the file stem).
pub fn write_dataset(dataset: &Dataset, path: &Path, format: DataFormat) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.display().to_string(), source };
    let file = File::create(path).map_err(io_err)?;
    match format {
        DataFormat::Jsonl => {
            let mut w = BufWriter::new(file);
            for ex in dataset.examples() {
                let line = serde_json::to_string(&example_to_json(ex)).expect("JSON values always serialize");
                writeln!(w, "{line}").map_err(io_err)?;
            }
            w.flush().map_err(io_err)?;
        }
        DataFormat::Csv => {
            let mut columns: BTreeSet<String> = BTreeSet::new();
            for ex in dataset.examples() {
                columns.extend(example_to_json(ex).into_iter().map(|(k, _)| k));
            }
            let mut header = vec!["id".to_string(), "text".to_string()];
            header.extend(columns.into_iter().filter(|c| c != "id" && c != "text"));
            let mut w = csv::Writer::from_writer(file);
            let csv_err = |e: csv::Error| CorpusError::Parse { line: 0, message: e.to_string() };
            w.write_record(&header).map_err(csv_err)?;
            for ex in dataset.examples() {
                let obj = example_to_json(ex);
                let row: Vec<String> = header
                    .iter()
                    .map(|c| obj.get(c).and_then(scalar_to_string).unwrap_or_default())
                    .collect();
                w.write_record(&row).map_err(csv_err)?;
            }
            w.flush().map_err(io_err)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(ext: &str, body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn jsonl_preserves_order() {
        let f = write_tmp(
            ".jsonl",
            "{\"id\":\"a\",\"text\":\"one\"}\n{\"id\":\"b\",\"text\":\"two\"}\n{\"id\":\"c\",\"text\":\"three\"}\n",
        );
        let d = load_dataset(f.path(), DataFormat::Jsonl).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.ids().collect::<Vec<_>>(), vec!["a", "b", "c"]);
        assert!(d.examples()[0].task_label.is_none());
    }

    #[test]
    fn empty_text_names_line() {
        let f = write_tmp(".jsonl", "{\"id\":\"x\",\"text\":\"\"}\n");
        let err = load_dataset(f.path(), DataFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyText { line: 1 }));
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn whitespace_text_rejected() {
        let f = write_tmp(".jsonl", "{\"id\":\"x\",\"text\":\"ok\"}\n{\"id\":\"y\",\"text\":\"  \\n\"}\n");
        let err = load_dataset(f.path(), DataFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyText { line: 2 }));
    }

    #[test]
    fn csv_induces_slice_schema() {
        let f =
            write_tmp(".csv", "id,text,label,slice:muslim\n1,hello,ok,true\n2,\"multi, comma\",bad,false\n");
        let d = load_dataset(f.path(), DataFormat::Csv).unwrap();
        assert_eq!(d.gold_slice_names().iter().cloned().collect::<Vec<_>>(), vec!["muslim".to_string()]);
        assert_eq!(d.examples()[1].text, "multi, comma");
        assert_eq!(d.examples()[1].task_label.as_deref(), Some("bad"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = write_tmp(".jsonl", "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n");
        let err = load_dataset(f.path(), DataFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn non_boolean_slice_rejected() {
        let f = write_tmp(".jsonl", "{\"id\":\"a\",\"text\":\"x\",\"slice:y\":3}\n");
        let err = load_dataset(f.path(), DataFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::NonBooleanSlice { line: 1, .. }));
        let f = write_tmp(".csv", "text,slice:y\nhello,maybe\n");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Csv).unwrap_err(),
            CorpusError::NonBooleanSlice { .. }
        ));
    }

    #[test]
    fn missing_ids_are_synthesized() {
        let f = write_tmp(".jsonl", "{\"text\":\"x\"}\n{\"text\":\"y\"}\n");
        let d = load_dataset(f.path(), DataFormat::Jsonl).unwrap();
        assert_eq!(d.ids().collect::<Vec<_>>(), vec!["row-0", "row-1"]);
    }

    #[test]
    fn missing_text_column() {
        let f = write_tmp(".csv", "id,label\n1,a\n");
        assert!(matches!(load_dataset(f.path(), DataFormat::Csv).unwrap_err(), CorpusError::MissingText));
    }

    #[test]
    fn unreadable_file() {
        let err = load_dataset(Path::new("/nonexistent/x.jsonl"), DataFormat::Jsonl).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn gold_slice_contract() {
        let d = Dataset::new(
            "d",
            vec![
                Example::new("a", "t").with_gold("x", false).with_gold("z", false),
                Example::new("b", "t").with_gold("x", true).with_gold("z", false),
                Example::new("c", "t").with_gold("x", false).with_gold("z", false),
            ],
        )
        .unwrap();
        let s = d.gold_slice("x").unwrap();
        assert_eq!(s.member_ids, vec!["b"]);
        assert_eq!(s.source, SliceSource::Gold);
        assert!(d.gold_slice("z").unwrap().is_empty());
        assert!(matches!(d.gold_slice("y"), Err(CorpusError::UnknownSlice(_))));
    }

    #[test]
    fn check_slice_rejects_foreign_and_reordered_ids() {
        let d = Dataset::new("d", vec![Example::new("a", "t"), Example::new("b", "t")]).unwrap();
        let mut s = d.slice_where("s", SliceSource::Predicted, |_| true);
        assert!(d.check_slice(&s).is_ok());
        s.member_ids = vec!["b".into(), "a".into()];
        assert!(d.check_slice(&s).is_err());
        s.member_ids = vec!["q".into()];
        assert!(d.check_slice(&s).is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        let f = write_tmp(".jsonl", "\n");
        assert!(matches!(load_dataset(f.path(), DataFormat::Jsonl).unwrap_err(), CorpusError::Empty(_)));
    }
}
