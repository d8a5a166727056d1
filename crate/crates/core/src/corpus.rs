//! Policy corpora: loading from CSV/JSONL, gold-label validation, and
//! few-shot exemplar selection.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::taxonomy::{
    Canonical, EffectiveYear, FoodCategory, FoodFlags, LegalStrategy, PolicyType, StateName,
    StrategySet, Taxonomy,
};

pub const ID: &str = "id";
pub const TITLE: &str = "title";
pub const SUMMARY: &str = "summary";
pub const STATE: &str = "state";
pub const EFFECT_YEAR: &str = "effect_year";
pub const POLICY_TYPE: &str = "policy_type";
pub const STRATEGY_1: &str = "strategy_1";
pub const STRATEGY_2: &str = "strategy_2";

/// Fixed CSV header, in order.
pub const CSV_COLUMNS: [&str; 14] = [
    ID,
    TITLE,
    SUMMARY,
    STATE,
    EFFECT_YEAR,
    POLICY_TYPE,
    STRATEGY_1,
    STRATEGY_2,
    "grow",
    "process",
    "distribute",
    "get",
    "make",
    "surplus",
];

const GOLD_COLUMNS: &[&str] = &[
    STATE,
    EFFECT_YEAR,
    POLICY_TYPE,
    STRATEGY_1,
    STRATEGY_2,
    "grow",
    "process",
    "distribute",
    "get",
    "make",
    "surplus",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub state: StateName,
    pub effect_year: EffectiveYear,
    pub policy_type: PolicyType,
    pub strategies: StrategySet,
    pub food: FoodFlags,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyRecord {
    pub id: String,
    pub title: String,
    pub summary: String,
    pub gold: Option<GoldAnnotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Option<CorpusFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(CorpusFormat::Csv),
            "jsonl" | "ndjson" => Some(CorpusFormat::Jsonl),
            _ => None,
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CorpusFormat::Csv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(format!(
                "unknown corpus format {other:?} (expected csv or jsonl)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed corpus at row {row}: {message}")]
    MalformedFile { row: usize, message: String },
    #[error("duplicate id {id:?} at row {row}")]
    DuplicateId { id: String, row: usize },
    #[error("invalid gold label at row {row}, column {column}: {value:?}")]
    InvalidGoldLabel {
        row: usize,
        column: String,
        value: String,
    },
    #[error("record {0:?} has no gold annotation")]
    InsufficientGold(String),
    #[error("exemplar count {k} must satisfy 1 <= k < {corpus_len}")]
    InvalidExemplarCount { k: usize, corpus_len: usize },
}

/// A loaded corpus. Records keep file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    records: Vec<PolicyRecord>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(records: Vec<PolicyRecord>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    id: r.id.clone(),
                    row: i + 1,
                });
            }
        }
        Ok(Corpus { records, index })
    }

    pub fn records(&self) -> &[PolicyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PolicyRecord> {
        self.index.get(id).map(|i| &self.records[*i])
    }

    /// SHA-256 over the canonical JSONL serialization, so the same records
    /// loaded from CSV or JSONL share a digest.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        write_jsonl(self, &mut buf).expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}

pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    taxonomy: &Taxonomy,
) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        CorpusFormat::Csv => parse_csv(&text, taxonomy),
        CorpusFormat::Jsonl => parse_jsonl(&text, taxonomy),
    }
}

/// One row's raw cells, keyed by column name.
struct RawRow<'a> {
    row: usize,
    cells: Vec<(&'a str, String)>,
}

impl RawRow<'_> {
    fn cell(&self, column: &str) -> Option<&str> {
        self.cells
            .iter()
            .find(|(c, _)| *c == column)
            .map(|(_, v)| v.as_str())
    }

    fn into_record(self, taxonomy: &Taxonomy) -> Result<PolicyRecord, CorpusError> {
        let row = self.row;
        let id = self.cell(ID).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(CorpusError::MalformedFile {
                row,
                message: "empty id".into(),
            });
        }
        let title = self.cell(TITLE).unwrap_or("").to_string();
        if title.trim().is_empty() {
            return Err(CorpusError::MalformedFile {
                row,
                message: format!("record {id:?} has an empty title"),
            });
        }
        let summary = self.cell(SUMMARY).unwrap_or("").to_string();
        let has_gold = GOLD_COLUMNS
            .iter()
            .any(|c| self.cell(c).is_some_and(|v| !v.trim().is_empty()));
        let gold = if has_gold {
            Some(self.gold(taxonomy)?)
        } else {
            None
        };
        Ok(PolicyRecord {
            id,
            title,
            summary,
            gold,
        })
    }

    fn invalid(&self, column: &str, value: &str) -> CorpusError {
        CorpusError::InvalidGoldLabel {
            row: self.row,
            column: column.to_string(),
            value: value.to_string(),
        }
    }

    fn gold(&self, taxonomy: &Taxonomy) -> Result<GoldAnnotation, CorpusError> {
        let get = |c: &str| self.cell(c).unwrap_or("").trim();

        let state = match taxonomy.canonicalize_state(get(STATE)) {
            Canonical::Known(s) => s,
            Canonical::Unrecognized => return Err(self.invalid(STATE, get(STATE))),
        };
        let effect_year = get(EFFECT_YEAR)
            .parse::<i64>()
            .ok()
            .and_then(|y| EffectiveYear::new(y).ok())
            .ok_or_else(|| self.invalid(EFFECT_YEAR, get(EFFECT_YEAR)))?;
        let policy_type = PolicyType::canonicalize(get(POLICY_TYPE))
            .known()
            .ok_or_else(|| self.invalid(POLICY_TYPE, get(POLICY_TYPE)))?;
        let mut strategies = StrategySet::empty();
        for column in [STRATEGY_1, STRATEGY_2] {
            let raw = get(column);
            if raw.is_empty() {
                continue;
            }
            let s = LegalStrategy::canonicalize(raw)
                .known()
                .ok_or_else(|| self.invalid(column, raw))?;
            if !strategies
                .insert(s)
                .map_err(|_| self.invalid(column, raw))?
            {
                return Err(self.invalid(column, raw));
            }
        }
        let mut food = FoodFlags::default();
        for c in FoodCategory::ALL {
            match get(c.key()) {
                "0" => {}
                "1" => food.set(c, true),
                other => return Err(self.invalid(c.key(), other)),
            }
        }
        Ok(GoldAnnotation {
            state,
            effect_year,
            policy_type,
            strategies,
            food,
        })
    }
}

fn collect_records<'a>(
    rows: impl Iterator<Item = Result<RawRow<'a>, CorpusError>>,
    taxonomy: &Taxonomy,
) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for raw in rows {
        let raw = raw?;
        let row = raw.row;
        let record = raw.into_record(taxonomy)?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId { id: record.id, row });
        }
        records.push(record);
    }
    Corpus::new(records)
}

fn parse_csv(text: &str, taxonomy: &Taxonomy) -> Result<Corpus, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::MalformedFile {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut columns = Vec::with_capacity(headers.len());
    for h in headers.iter() {
        let name = CSV_COLUMNS
            .iter()
            .find(|c| **c == h.trim())
            .ok_or_else(|| CorpusError::MalformedFile {
                row: 1,
                message: format!("unknown column {h:?}"),
            })?;
        columns.push(*name);
    }
    for required in [ID, TITLE] {
        if !columns.contains(&required) {
            return Err(CorpusError::MalformedFile {
                row: 1,
                message: format!("missing required column {required:?}"),
            });
        }
    }
    let rows = reader.records().enumerate().map(|(i, rec)| {
        // header is row 1
        let row = i + 2;
        let rec = rec.map_err(|e| CorpusError::MalformedFile {
            row,
            message: e.to_string(),
        })?;
        Ok(RawRow {
            row,
            cells: columns
                .iter()
                .zip(rec.iter())
                .map(|(c, v)| (*c, v.to_string()))
                .collect(),
        })
    });
    collect_records(rows, taxonomy)
}

fn json_cell(value: &Value) -> Option<String> {
    match value {
        Value::Null => Some(String::new()),
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(u8::from(*b).to_string()),
        _ => None,
    }
}

fn parse_jsonl(text: &str, taxonomy: &Taxonomy) -> Result<Corpus, CorpusError> {
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            let row = i + 1;
            let obj: serde_json::Map<String, Value> =
                serde_json::from_str(line).map_err(|e| CorpusError::MalformedFile {
                    row,
                    message: e.to_string(),
                })?;
            let mut cells = Vec::with_capacity(obj.len());
            for (key, value) in &obj {
                let column = CSV_COLUMNS.iter().find(|c| **c == key).ok_or_else(|| {
                    CorpusError::MalformedFile {
                        row,
                        message: format!("unknown field {key:?}"),
                    }
                })?;
                let cell = json_cell(value).ok_or_else(|| CorpusError::MalformedFile {
                    row,
                    message: format!("field {key:?} must be a scalar"),
                })?;
                cells.push((*column, cell));
            }
            Ok(RawRow { row, cells })
        });
    collect_records(rows, taxonomy)
}

fn record_cells(r: &PolicyRecord) -> Vec<String> {
    let mut cells = vec![r.id.clone(), r.title.clone(), r.summary.clone()];
    match &r.gold {
        Some(g) => {
            let mut strategies = g.strategies.iter().map(|s| s.display().to_string());
            cells.push(g.state.to_string());
            cells.push(g.effect_year.to_string());
            cells.push(g.policy_type.display().to_string());
            cells.push(strategies.next().unwrap_or_default());
            cells.push(strategies.next().unwrap_or_default());
            cells.extend(FoodCategory::ALL.map(|c| u8::from(g.food.get(c)).to_string()));
        }
        None => cells.extend(std::iter::repeat_n(String::new(), GOLD_COLUMNS.len())),
    }
    cells
}

pub fn write_csv<W: Write>(corpus: &Corpus, out: W) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_COLUMNS)?;
    for r in &corpus.records {
        writer.write_record(record_cells(r))?;
    }
    writer.flush()
}

/// One flat object per line with the CSV column names. Records without gold
/// omit the gold fields.
pub fn write_jsonl<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    for r in &corpus.records {
        let width = if r.gold.is_some() {
            CSV_COLUMNS.len()
        } else {
            3
        };
        // written by hand to keep column order
        let fields = CSV_COLUMNS
            .iter()
            .zip(record_cells(r))
            .take(width)
            .map(|(column, cell)| {
                let value = match *column {
                    EFFECT_YEAR => Value::from(cell.parse::<u64>().expect("year is numeric")),
                    c if FoodCategory::canonicalize(c).is_known() => {
                        Value::from(cell.parse::<u8>().expect("flag is numeric"))
                    }
                    _ => Value::String(cell),
                };
                format!("{}:{}", Value::from(*column), value)
            })
            .collect::<Vec<_>>();
        writeln!(out, "{{{}}}", fields.join(","))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Exemplar selection

/// Disjoint evaluation / exemplar partition of a corpus. Both sets hold ids
/// in corpus order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub exemplar_ids: Vec<String>,
    pub eval_ids: Vec<String>,
}

/// A coverage label: a policy type or a legal strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CoverageLabel {
    Type(PolicyType),
    Strategy(LegalStrategy),
}

impl fmt::Display for CoverageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoverageLabel::Type(t) => write!(f, "type:{t}"),
            CoverageLabel::Strategy(s) => write!(f, "strategy:{}", s.code()),
        }
    }
}

pub fn coverage_labels(gold: &GoldAnnotation) -> BTreeSet<CoverageLabel> {
    std::iter::once(CoverageLabel::Type(gold.policy_type))
        .chain(gold.strategies.iter().map(CoverageLabel::Strategy))
        .collect()
}

/// Greedy coverage selection of `k` exemplars. Each step takes the record
/// contributing the most uncovered policy-type and strategy labels; ties are
/// broken by a draw from a ChaCha8 stream seeded with `seed`.
pub fn select_exemplars(corpus: &Corpus, k: usize, seed: u64) -> Result<CorpusSplit, CorpusError> {
    if k == 0 || k >= corpus.len() {
        return Err(CorpusError::InvalidExemplarCount {
            k,
            corpus_len: corpus.len(),
        });
    }
    let labels = corpus
        .records
        .iter()
        .map(|r| {
            r.gold
                .as_ref()
                .map(coverage_labels)
                .ok_or_else(|| CorpusError::InsufficientGold(r.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut covered = BTreeSet::new();
    let mut chosen = vec![false; corpus.len()];
    for _ in 0..k {
        let gains: Vec<(usize, usize)> = (0..corpus.len())
            .filter(|i| !chosen[*i])
            .map(|i| (i, labels[i].difference(&covered).count()))
            .collect();
        let best = gains
            .iter()
            .map(|(_, g)| *g)
            .max()
            .expect("k < corpus length");
        let tied: Vec<usize> = gains
            .iter()
            .filter(|(_, g)| *g == best)
            .map(|(i, _)| *i)
            .collect();
        let pick = *tied.choose(&mut rng).expect("at least one candidate");
        chosen[pick] = true;
        covered.extend(labels[pick].iter().copied());
    }

    let (exemplars, eval): (Vec<_>, Vec<_>) =
        corpus.records.iter().zip(&chosen).partition(|(_, c)| **c);
    Ok(CorpusSplit {
        exemplar_ids: exemplars.into_iter().map(|(r, _)| r.id.clone()).collect(),
        eval_ids: eval.into_iter().map(|(r, _)| r.id.clone()).collect(),
    })
}
