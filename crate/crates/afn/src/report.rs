//! Report types and their JSON/CSV encodings.
//!
//! JSON output has sorted keys and every float printed with six decimals, so
//! reruns on the same input are byte-identical. CSV column orders are fixed
//! (see `docs/report-format.md`).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::error::{AfnError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenRow {
    pub index: usize,
    pub token: String,
    pub strength: f64,
    pub is_special: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub index: usize,
    pub token: String,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub index: usize,
    pub token: String,
    pub strength: f64,
    pub bucket: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketSummary {
    pub threshold: f64,
    pub filter: &'static str,
    pub high_set: Vec<usize>,
    pub assignments: Vec<BucketRow>,
}

/// Strengths of one sentence at one layer.
///
/// `activations` lists every token; `top_k` and `buckets` only cover tokens
/// kept by the configured filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SentenceReport {
    pub sentence: String,
    pub layer: usize,
    pub activations: Vec<TokenRow>,
    pub top_k: Vec<RankRow>,
    pub buckets: BucketSummary,
}

impl SentenceReport {
    pub fn activation(&self, index: usize) -> Option<&TokenRow> {
        self.activations.get(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    pub index: usize,
    pub token_a: String,
    pub token_b: String,
    pub delta: f64,
    /// Bucket of the token in sentence A, when it passed the filter.
    pub bucket_a: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContributionSummary {
    pub c_high: f64,
    pub c_low: f64,
    pub ratio: f64,
    pub threshold: f64,
    pub filter: &'static str,
    pub high_set: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairShiftReport {
    pub sentence_a: String,
    pub sentence_b: String,
    pub layer: usize,
    pub records: Vec<ShiftRow>,
    pub total_shift: f64,
    pub contribution: ContributionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuffixShiftRow {
    pub index_a: usize,
    pub index_b: usize,
    pub token_a: String,
    pub token_b: String,
    pub delta: f64,
}

/// Drift between two prompt-prefixed copies of the same sentence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptShiftReport {
    pub input_sentence: String,
    pub prompt_a: String,
    pub prompt_b: String,
    pub layer: usize,
    pub cls_shift: f64,
    pub suffix_shifts: Vec<SuffixShiftRow>,
    /// `cls_shift` plus the sum of suffix deltas.
    pub sentence_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptShiftSet {
    pub input_sentence: String,
    pub layer: usize,
    pub prompts: Vec<String>,
    pub pairs: Vec<PromptShiftReport>,
    /// Symmetric, zero diagonal; `[i][j]` is the drift between prompts i and j.
    pub drift_matrix: Vec<Vec<f64>>,
    /// Flags the suffix alignment as an extension over the [CLS] comparison.
    pub alignment: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusFailure {
    pub line: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusEntry {
    pub line: usize,
    pub report: SentenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopTokens {
    pub line: usize,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub sentence_count: usize,
    pub failed_count: usize,
    pub failures: Vec<CorpusFailure>,
    pub top_tokens: Vec<TopTokens>,
    /// Share of HIGH-bucket tokens that are non-special, non-punctuation.
    pub high_bucket_word_fraction: Option<f64>,
    pub mean_cls_strength: Option<f64>,
    pub mean_sep_strength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport {
    pub layer: usize,
    pub sentences: Vec<CorpusEntry>,
    pub summary: CorpusSummary,
}

/// Top-level JSON document written by every command.
#[derive(Debug, Clone, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema_version: u32,
    pub command: &'static str,
    pub filter: &'static str,
    pub top_k: usize,
    pub result: &'a T,
}

/// Pretty printer that writes every float with exactly six decimals.
struct FixedFloat<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for FixedFloat<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.6}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{value:.6}")
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

fn sort_keys(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, sort_keys(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

/// Deterministic JSON text: sorted keys, 6-decimal floats, trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let value = sort_keys(serde_json::to_value(value).expect("report types serialize"));
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedFloat(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser).expect("writing to a Vec cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

/// Collects CSV rows and writes them in one go.
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
    }
}

/// Label/value pairs for a bar plot.
pub fn plot_table<'a>(points: impl IntoIterator<Item = (String, f64)> + 'a) -> CsvTable {
    let mut t = CsvTable::new(&["label", "value"]);
    for (label, value) in points {
        t.push(vec![label, fmt_f64(value)]);
    }
    t
}

/// Output files of one command run, written together.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, String)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<String>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|source| AfnError::Write {
            path: dir.to_owned(),
            source,
        })?;
        let mut written = Vec::new();
        for (name, contents) in &self.files {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|source| AfnError::Write {
                path: path.clone(),
                source,
            })?;
            f.write_all(contents.as_bytes()).map_err(|source| AfnError::Write {
                path: path.clone(),
                source,
            })?;
            written.push(path);
        }
        Ok(written)
    }
}
