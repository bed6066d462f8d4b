//! Labeled text corpora in the `id,text,generated` CSV schema.
//!
//! Label 0 marks human-written text and label 1 marks AI-generated text.
//! Records keep file order; duplicate or non-contiguous ids are preserved.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Column names of the corpus CSV header, in output order.
pub const HEADER: [&str; 3] = ["id", "text", "generated"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: missing header or column `{column}` (expected `id,text,generated`)")]
    MissingHeader { line: u64, column: String },
    #[error("line {line}: label must be 0 or 1, got {value:?}")]
    BadLabel { line: u64, value: String },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("validation fraction {fraction} of {records} records leaves an empty side")]
    DegenerateSplit { fraction: f64, records: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Human = 0,
    Ai = 1,
}

impl Label {
    pub fn from_digit(value: u8) -> Option<Label> {
        match value {
            0 => Some(Label::Human),
            1 => Some(Label::Ai),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    /// Thresholded decision: `p >= 0.5` is AI.
    pub fn from_probability(p: f64) -> Label {
        if p >= 0.5 {
            Label::Ai
        } else {
            Label::Human
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledRecord {
    pub id: u64,
    pub text: String,
    pub label: Label,
}

impl LabeledRecord {
    pub fn new(id: u64, text: impl Into<String>, label: Label) -> Self {
        Self {
            id,
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledCorpus {
    records: Vec<LabeledRecord>,
}

impl LabeledCorpus {
    pub fn new(records: Vec<LabeledRecord>) -> Self {
        Self { records }
    }

    pub fn records(&self) -> &[LabeledRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LabeledRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledRecord> {
        self.records.iter()
    }
}

impl FromIterator<LabeledRecord> for LabeledCorpus {
    fn from_iter<I: IntoIterator<Item = LabeledRecord>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Reads a corpus CSV file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledCorpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(file)
}

/// Parses corpus CSV from any reader. Line numbers in errors are 1-based
/// and count the header as line 1.
pub fn read_dataset<R: Read>(reader: R) -> Result<LabeledCorpus, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut rows = rdr.records();

    let header = match rows.next() {
        Some(row) => row?,
        None => {
            return Err(CorpusError::MissingHeader {
                line: 1,
                column: HEADER[0].to_string(),
            })
        }
    };
    let header_line = header.position().map_or(1, |p| p.line());
    let mut columns = [0usize; 3];
    for (slot, name) in columns.iter_mut().zip(HEADER) {
        *slot = header
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or_else(|| CorpusError::MissingHeader {
                line: header_line,
                column: name.to_string(),
            })?;
    }
    let width = header.len();
    let [id_col, text_col, label_col] = columns;

    let mut records = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != width {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected {width} fields, found {}", row.len()),
            });
        }
        let id_field = row[id_col].trim();
        let id = id_field.parse::<u64>().map_err(|_| CorpusError::MalformedRow {
            line,
            reason: format!("id {id_field:?} is not a non-negative integer"),
        })?;
        let label_field = row[label_col].trim();
        let label = match label_field {
            "0" => Label::Human,
            "1" => Label::Ai,
            other => {
                return Err(CorpusError::BadLabel {
                    line,
                    value: other.to_string(),
                })
            }
        };
        records.push(LabeledRecord {
            id,
            text: row[text_col].to_string(),
            label,
        });
    }
    Ok(LabeledCorpus { records })
}

/// Writes a corpus in the canonical `id,text,generated` layout.
pub fn write_dataset<W: Write>(corpus: &LabeledCorpus, writer: W) -> Result<(), CorpusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(HEADER)?;
    for r in corpus.iter() {
        wtr.write_record([
            r.id.to_string().as_str(),
            r.text.as_str(),
            if r.label == Label::Ai { "1" } else { "0" },
        ])?;
    }
    wtr.flush().map_err(|source| CorpusError::Io {
        path: "<output>".to_string(),
        source,
    })?;
    Ok(())
}

pub fn save_dataset(corpus: &LabeledCorpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_dataset(corpus, std::io::BufWriter::new(file))
}

/// Returns `(count_human, count_ai)`.
pub fn class_counts(corpus: &LabeledCorpus) -> (usize, usize) {
    let ai = corpus.iter().filter(|r| r.label == Label::Ai).count();
    (corpus.len() - ai, ai)
}

/// Seeded shuffle, then the last `floor(val_fraction * N)` records become
/// the validation set.
pub fn split_validation(
    corpus: &LabeledCorpus,
    val_fraction: f64,
    seed: u64,
) -> Result<(LabeledCorpus, LabeledCorpus), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(CorpusError::DegenerateSplit {
            fraction: val_fraction,
            records: corpus.len(),
        });
    }
    let n = corpus.len();
    let n_val = (val_fraction * n as f64).floor() as usize;
    if val_fraction > 0.0 && (n_val == 0 || n_val == n) {
        return Err(CorpusError::DegenerateSplit {
            fraction: val_fraction,
            records: n,
        });
    }
    if n_val == 0 {
        return Ok((corpus.clone(), LabeledCorpus::default()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| -> LabeledCorpus { idx.iter().map(|&i| corpus.records[i].clone()).collect() };
    let (train_idx, val_idx) = order.split_at(n - n_val);
    Ok((pick(train_idx), pick(val_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<LabeledCorpus, CorpusError> {
        read_dataset(s.as_bytes())
    }

    #[test]
    fn table_one_row() {
        let c = parse("id,text,generated\n0,\"Cars. Cars have been around since they became ...\",0\n").unwrap();
        assert_eq!(
            c.records(),
            &[LabeledRecord::new(
                0,
                "Cars. Cars have been around since they became ...",
                Label::Human
            )]
        );
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse("id,text,generated\n").unwrap().is_empty());
        assert!(parse("ID,Text,Generated\r\n").unwrap().is_empty());
    }

    #[test]
    fn bad_label_names_line() {
        match parse("id,text,generated\n7,\"hello, world\",2\n") {
            Err(CorpusError::BadLabel { line, value }) => {
                assert_eq!(line, 2);
                assert_eq!(value, "2");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_header_and_malformed_rows() {
        assert!(matches!(parse(""), Err(CorpusError::MissingHeader { .. })));
        assert!(matches!(
            parse("id,body,generated\n1,x,0\n"),
            Err(CorpusError::MissingHeader { column, .. }) if column == "text"
        ));
        assert!(matches!(
            parse("id,text,generated\n1,x,0\n2,y\n"),
            Err(CorpusError::MalformedRow { line: 3, .. })
        ));
        assert!(matches!(
            parse("id,text,generated\n-1,x,0\n"),
            Err(CorpusError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn quoted_newlines_and_crlf() {
        let c = parse("id,text,generated\r\n1,\"a\nb, c\",1\r\n1,,0\r\n").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.records()[0].text, "a\nb, c");
        assert_eq!(c.records()[1].text, "");
        // duplicate ids are preserved
        assert_eq!(c.records()[1].id, 1);
    }

    #[test]
    fn counts() {
        assert_eq!(class_counts(&LabeledCorpus::default()), (0, 0));
        let c: LabeledCorpus = [Label::Ai, Label::Ai, Label::Human]
            .into_iter()
            .enumerate()
            .map(|(i, l)| LabeledRecord::new(i as u64, "", l))
            .collect();
        assert_eq!(class_counts(&c), (1, 2));
    }

    fn corpus_of(n: usize) -> LabeledCorpus {
        (0..n)
            .map(|i| LabeledRecord::new(i as u64, format!("t{i}"), Label::from_digit((i % 2) as u8).unwrap()))
            .collect()
    }

    #[test]
    fn split_sizes() {
        let (train, val) = split_validation(&corpus_of(1378), 0.1, 0).unwrap();
        assert_eq!((train.len(), val.len()), (1241, 137));
        let c = corpus_of(5);
        let (train, val) = split_validation(&c, 0.0, 3).unwrap();
        assert_eq!(train, c);
        assert!(val.is_empty());
    }

    #[test]
    fn split_is_deterministic() {
        let c = corpus_of(20);
        let a = split_validation(&c, 0.1, 42).unwrap();
        let b = split_validation(&c, 0.1, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_validation(&LabeledCorpus::default(), 0.1, 0),
            Err(CorpusError::EmptyCorpus)
        ));
        assert!(matches!(
            split_validation(&corpus_of(5), 0.1, 0),
            Err(CorpusError::DegenerateSplit { .. })
        ));
    }

    #[test]
    fn write_then_read() {
        let c = corpus_of(4);
        let mut buf = Vec::new();
        write_dataset(&c, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), c);
    }
}
