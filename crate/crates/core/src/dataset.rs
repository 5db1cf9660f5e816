//! Benchmark ingestion, query templates and few-shot support selection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sqltext::{self, LexError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read benchmark {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("benchmark {path} is not a JSON list: {source}")]
    NotAList {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("benchmark item {index}: {reason}")]
    BadItem { index: usize, reason: String },
    #[error("cannot derive template: {0}")]
    Template(#[from] LexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    /// Guesses the split from a file name such as `train_spider.json`.
    pub fn from_file_name(path: &Path) -> Split {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if stem.contains("train") {
            Split::Train
        } else if stem.contains("test") {
            Split::Test
        } else {
            Split::Dev
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub example_id: String,
    pub db_id: String,
    pub question: String,
    pub gold_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
}

pub fn example_id_for(index: usize) -> String {
    format!("e{index:04}")
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub name: String,
    pub split: Split,
    pub examples: Vec<ExampleRecord>,
    pub db_root: PathBuf,
    /// Non-fatal ingestion problems, e.g. database files that do not exist.
    pub warnings: Vec<String>,
}

impl Benchmark {
    /// Spider layout: `<db_root>/<db_id>/<db_id>.sqlite`.
    pub fn db_path(&self, db_id: &str) -> PathBuf {
        db_path(&self.db_root, db_id)
    }

    pub fn get(&self, example_id: &str) -> Option<&ExampleRecord> {
        self.examples.iter().find(|e| e.example_id == example_id)
    }
}

pub fn db_path(db_root: &Path, db_id: &str) -> PathBuf {
    db_root.join(db_id).join(format!("{db_id}.sqlite"))
}

#[derive(Deserialize)]
struct RawItem {
    db_id: Option<String>,
    question: Option<String>,
    query: Option<String>,
    #[serde(default)]
    template_id: Option<serde_json::Value>,
}

pub fn load_benchmark(path: &Path, db_root: &Path) -> Result<Benchmark, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let items: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|source| DatasetError::NotAList {
            path: path.to_owned(),
            source,
        })?;

    let mut examples = Vec::with_capacity(items.len());
    let mut warnings = Vec::new();
    for (index, item) in items.into_iter().enumerate() {
        let raw: RawItem = serde_json::from_value(item).map_err(|e| DatasetError::BadItem {
            index,
            reason: e.to_string(),
        })?;
        let missing = |field: &str| DatasetError::BadItem {
            index,
            reason: format!("missing \"{field}\""),
        };
        let db_id = raw.db_id.ok_or_else(|| missing("db_id"))?;
        let question = raw.question.ok_or_else(|| missing("question"))?;
        let gold_sql = raw.query.ok_or_else(|| missing("query"))?;
        if gold_sql.trim().is_empty() {
            return Err(DatasetError::BadItem {
                index,
                reason: "empty \"query\"".into(),
            });
        }
        let template_id = raw.template_id.and_then(|v| match v {
            serde_json::Value::String(s) => Some(s),
            serde_json::Value::Null => None,
            other => Some(other.to_string()),
        });
        let file = db_path(db_root, &db_id);
        if !file.exists() {
            warnings.push(format!(
                "item {index}: database file {} does not exist",
                file.display()
            ));
        }
        examples.push(ExampleRecord {
            example_id: example_id_for(index),
            db_id,
            question,
            gold_sql,
            template_id,
        });
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(Benchmark {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        split: Split::from_file_name(path),
        examples,
        db_root: db_root.to_owned(),
        warnings,
    })
}

/// Query template: literals replaced by placeholders, words uppercased,
/// whitespace collapsed.
pub fn canonical_template(sql: &str) -> Result<String, DatasetError> {
    Ok(sqltext::anonymize(sql)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportSet {
    pub n: usize,
    pub seed: u64,
    pub examples: Vec<ExampleRecord>,
    /// Template of each chosen example, parallel to `examples`.
    pub templates: Vec<String>,
}

impl SupportSet {
    pub fn empty(seed: u64) -> Self {
        SupportSet {
            n: 0,
            seed,
            examples: Vec::new(),
            templates: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// The first `k` examples in rank order.
    pub fn prefix(&self, k: usize) -> SupportSet {
        let k = k.min(self.examples.len());
        SupportSet {
            n: self.n,
            seed: self.seed,
            examples: self.examples[..k].to_vec(),
            templates: self.templates[..k].to_vec(),
        }
    }

    pub fn export(&self) -> SupportExport {
        SupportExport {
            n: self.n,
            seed: self.seed,
            examples: self
                .examples
                .iter()
                .zip(&self.templates)
                .map(|(e, t)| SupportEntry {
                    question: e.question.clone(),
                    gold_sql: e.gold_sql.clone(),
                    template: t.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub question: String,
    pub gold_sql: String,
    pub template: String,
}

/// Audit form of a support set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportExport {
    pub n: usize,
    pub seed: u64,
    pub examples: Vec<SupportEntry>,
}

/// Groups examples by template, in descending frequency with ties broken by
/// ascending template string. Members keep file order. Examples whose gold
/// query cannot be lexed are skipped with a warning.
pub fn template_groups(examples: &[ExampleRecord]) -> Vec<(String, Vec<&ExampleRecord>)> {
    let mut groups: BTreeMap<String, Vec<&ExampleRecord>> = BTreeMap::new();
    for ex in examples {
        let template = match &ex.template_id {
            Some(t) => t.clone(),
            None => match canonical_template(&ex.gold_sql) {
                Ok(t) => t,
                Err(e) => {
                    log::warn!("{}: excluded from template grouping: {e}", ex.example_id);
                    continue;
                }
            },
        };
        groups.entry(template).or_default().push(ex);
    }
    let mut groups: Vec<_> = groups.into_iter().collect();
    // BTreeMap iteration is ascending by template, so a stable sort on
    // frequency alone keeps the tie-break.
    groups.sort_by_key(|g| std::cmp::Reverse(g.1.len()));
    groups
}

fn template_rng(seed: u64, template: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(template.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// One example from each of the `n` most frequent templates of `train`,
/// ordered by template rank.
pub fn select_support(train: &Benchmark, n: usize, seed: u64) -> SupportSet {
    let mut set = SupportSet::empty(seed);
    set.n = n;
    if n == 0 {
        return set;
    }
    for (template, members) in template_groups(&train.examples).into_iter().take(n) {
        let pick = template_rng(seed, &template).gen_range(0..members.len());
        set.examples.push(members[pick].clone());
        set.templates.push(template);
    }
    set
}
