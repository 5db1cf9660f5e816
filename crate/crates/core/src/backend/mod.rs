//! Completion backends and completion post-processing.

mod http;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ExampleRecord;
use crate::sqltext;

pub use http::{HttpBackend, HttpConfig, RateLimiter, RetryPolicy};

/// Stop strings that end a completion: comment markers, a blank line and
/// the statement terminator.
pub const DEFAULT_STOP: [&str; 4] = ["--", "\n\n", ";", "#"];
pub const DEFAULT_MAX_TOKENS: u32 = 200;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{example_id}: completion request failed after {attempts} attempt(s): {message}")]
    Http {
        example_id: String,
        attempts: u32,
        message: String,
    },
    #[error("{0}: no completion in the replay file")]
    MissingFixture(String),
    #[error("cannot load replay file {path}: {message}")]
    Replay { path: PathBuf, message: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
}

impl CompletionRequest {
    /// Greedy decoding with the default stop strings.
    pub fn greedy(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
            stop: DEFAULT_STOP.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::Config(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if self.stop.is_empty() || self.stop.iter().any(String::is_empty) {
            return Err(BackendError::Config("stop list must hold non-empty strings".into()));
        }
        Ok(())
    }
}

/// One finalized model answer. An empty `sql` marks a completion that was
/// empty after truncation; it is scored as invalid SQL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub example_id: String,
    pub raw_completion: String,
    pub sql: String,
}

impl Prediction {
    pub fn from_completion(example_id: impl Into<String>, raw: String, stop: &[String]) -> Self {
        let sql = finalize_sql_with(&raw, stop).unwrap_or_default();
        Prediction {
            example_id: example_id.into(),
            raw_completion: raw,
            sql,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sql.is_empty()
    }
}

/// Cuts the completion at the first stop string, trims it, joins lines and
/// reattaches the `SELECT` that ended the prompt. Returns `None` when nothing
/// is left.
pub fn finalize_sql(raw_completion: &str) -> Option<String> {
    let stops: Vec<String> = DEFAULT_STOP.iter().map(|s| s.to_string()).collect();
    finalize_sql_with(raw_completion, &stops)
}

pub fn finalize_sql_with(raw_completion: &str, stop: &[String]) -> Option<String> {
    let cut = stop
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| raw_completion.find(s.as_str()))
        .min()
        .unwrap_or(raw_completion.len());
    let body = raw_completion[..cut].trim();
    if body.is_empty() {
        return None;
    }
    let mut joined = String::with_capacity(body.len() + 7);
    joined.push_str("SELECT ");
    let mut lines = body.lines().map(str::trim).filter(|l| !l.is_empty());
    if let Some(first) = lines.next() {
        joined.push_str(first);
    }
    for line in lines {
        joined.push(' ');
        joined.push_str(line);
    }
    Some(joined)
}

/// The gold query minus its leading `SELECT`, matched case-insensitively.
pub fn strip_select_prefix(sql: &str) -> String {
    let trimmed = sql.trim_start();
    match trimmed.get(..6) {
        Some(head) if head.eq_ignore_ascii_case("select") => trimmed[6..].to_owned(),
        _ => trimmed.to_owned(),
    }
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, example: &ExampleRecord, request: &CompletionRequest) -> Result<String, BackendError>;

    /// Label used in run descriptors.
    fn label(&self) -> String;

    /// Upper bound on concurrent requests.
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
}

/// Answers with the gold query body. A test backend.
#[derive(Debug, Default, Clone, Copy)]
pub struct GoldOracle;

impl CompletionBackend for GoldOracle {
    fn complete(&self, example: &ExampleRecord, _: &CompletionRequest) -> Result<String, BackendError> {
        Ok(strip_select_prefix(&example.gold_sql))
    }

    fn label(&self) -> String {
        "gold-oracle".into()
    }
}

/// Answers with the gold query after swapping every AND with OR and vice
/// versa. Produces executable but semantically different SQL.
#[derive(Debug, Default, Clone, Copy)]
pub struct AndOrMutation;

impl CompletionBackend for AndOrMutation {
    fn complete(&self, example: &ExampleRecord, _: &CompletionRequest) -> Result<String, BackendError> {
        let swapped = sqltext::swap_and_or(&example.gold_sql).unwrap_or_else(|_| example.gold_sql.clone());
        Ok(strip_select_prefix(&swapped))
    }

    fn label(&self) -> String {
        "mutate-and-or".into()
    }
}

#[derive(Deserialize)]
struct ReplayLine {
    example_id: String,
    #[serde(alias = "raw_completion")]
    completion: String,
}

/// Serves recorded completions keyed by example id.
#[derive(Debug, Clone)]
pub struct Replay {
    source: PathBuf,
    completions: HashMap<String, String>,
}

impl Replay {
    /// Reads JSONL lines of `{example_id, completion}`; a prediction file
    /// (`raw_completion`) is accepted too.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let err = |message: String| BackendError::Replay {
            path: path.to_owned(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut completions = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: ReplayLine =
                serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            completions.insert(parsed.example_id, parsed.completion);
        }
        Ok(Replay {
            source: path.to_owned(),
            completions,
        })
    }

    pub fn from_map(completions: HashMap<String, String>) -> Self {
        Replay {
            source: PathBuf::new(),
            completions,
        }
    }
}

impl CompletionBackend for Replay {
    fn complete(&self, example: &ExampleRecord, _: &CompletionRequest) -> Result<String, BackendError> {
        self.completions
            .get(&example.example_id)
            .cloned()
            .ok_or_else(|| BackendError::MissingFixture(example.example_id.clone()))
    }

    fn label(&self) -> String {
        format!("replay:{}", self.source.display())
    }
}

/// Backend selection as written on the command line or in a config file:
/// `oracle`, `mutate`, `replay:<path>` or `http`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendKind {
    Oracle,
    Mutate,
    Replay(PathBuf),
    Http,
}

impl FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" | "gold-oracle" => Ok(BackendKind::Oracle),
            "mutate" | "mutate-and-or" => Ok(BackendKind::Mutate),
            "http" => Ok(BackendKind::Http),
            other => match other.strip_prefix("replay:") {
                Some(path) if !path.is_empty() => Ok(BackendKind::Replay(PathBuf::from(path))),
                _ => Err(BackendError::Config(format!("unknown backend {other:?}"))),
            },
        }
    }
}

impl TryFrom<String> for BackendKind {
    type Error = BackendError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendKind> for String {
    fn from(k: BackendKind) -> String {
        k.to_string()
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::Oracle => f.write_str("oracle"),
            BackendKind::Mutate => f.write_str("mutate"),
            BackendKind::Replay(p) => write!(f, "replay:{}", p.display()),
            BackendKind::Http => f.write_str("http"),
        }
    }
}

pub fn build_backend(kind: &BackendKind, http: &HttpConfig) -> Result<Box<dyn CompletionBackend>, BackendError> {
    Ok(match kind {
        BackendKind::Oracle => Box::new(GoldOracle),
        BackendKind::Mutate => Box::new(AndOrMutation),
        BackendKind::Replay(path) => Box::new(Replay::load(path)?),
        BackendKind::Http => Box::new(HttpBackend::new(http.clone())?),
    })
}
