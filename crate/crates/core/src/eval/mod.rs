//! Execution-based scoring: validity, execution accuracy and test-suite
//! accuracy.

mod compare;
mod exec;
pub mod suite;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use compare::{compare_results, compare_rows, rows_eq};
pub use exec::{execute_sql, execute_on, strip_terminator, ExecError, ExecResult};
pub use suite::{build_test_suite, SuiteCache, SuiteError, SuiteOrigin, TestSuite};

use crate::backend::Prediction;
use crate::dataset::ExampleRecord;
use crate::triage::{classify_invalid, detect_extra_columns, ErrorCategory, ErrorKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub example_id: String,
    pub valid: bool,
    pub invalid_reason: Option<String>,
    pub ex: bool,
    pub ts: bool,
    pub timing_ms: u64,
    #[serde(default)]
    pub gold_broken: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_category: Option<ErrorCategory>,
}

/// How a prediction that exceeds the timeout on the original database counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeoutPolicy {
    #[default]
    Invalid,
    /// Counted as valid but incorrect.
    ValidUnknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub timeout: Duration,
    pub timeout_policy: TimeoutPolicy,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            timeout: Duration::from_millis(DEFAULT_TIMEOUT_MS),
            timeout_policy: TimeoutPolicy::Invalid,
        }
    }
}

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

pub fn evaluate(example: &ExampleRecord, prediction: &Prediction, suite: &TestSuite, opts: &EvalOptions) -> EvalOutcome {
    let start = Instant::now();
    let mut outcome = EvalOutcome {
        example_id: example.example_id.clone(),
        valid: false,
        invalid_reason: None,
        ex: false,
        ts: false,
        timing_ms: 0,
        gold_broken: false,
        auto_category: None,
    };
    let finish = |mut o: EvalOutcome| {
        o.timing_ms = start.elapsed().as_millis() as u64;
        o
    };

    let gold = match execute_sql(suite.original(), &example.gold_sql, opts.timeout) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{}: gold query fails: {e}", example.example_id);
            outcome.gold_broken = true;
            outcome.invalid_reason = Some(format!("gold: {e}"));
            return finish(outcome);
        }
    };
    let pred = match execute_sql(suite.original(), &prediction.sql, opts.timeout) {
        Ok(r) => r,
        Err(ExecError::Timeout) if opts.timeout_policy == TimeoutPolicy::ValidUnknown => {
            outcome.valid = true;
            outcome.invalid_reason = Some("timeout".into());
            return finish(outcome);
        }
        Err(e) => {
            let reason = e.reason();
            outcome.auto_category = Some(classify_invalid(&reason));
            outcome.invalid_reason = Some(reason);
            return finish(outcome);
        }
    };
    outcome.valid = true;
    outcome.ex = compare_results(&gold, &pred);
    if !outcome.ex {
        if detect_extra_columns(&gold, &pred) {
            outcome.auto_category = Some(ErrorCategory::auto(ErrorKind::SelectExtraColumns));
        }
        return finish(outcome);
    }
    outcome.ts = suite.variants[1..].iter().all(|variant| {
        let gold = match execute_sql(variant, &example.gold_sql, opts.timeout) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("{}: gold fails on {}: {e}; variant skipped", example.example_id, variant.display());
                return true;
            }
        };
        execute_sql(variant, &prediction.sql, opts.timeout).is_ok_and(|pred| compare_results(&gold, &pred))
    });
    finish(outcome)
}

/// One example to score, with the database its suite is built from.
pub struct EvalItem<'a> {
    pub example: &'a ExampleRecord,
    pub prediction: &'a Prediction,
    pub db_file: PathBuf,
}

/// Scores `items` on up to `jobs` threads, preserving input order. Suites
/// come from `cache`, built once per database.
pub fn evaluate_all(
    items: &[EvalItem<'_>],
    cache: &SuiteCache,
    opts: &EvalOptions,
    jobs: usize,
) -> Result<Vec<EvalOutcome>, SuiteError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SuiteError::Shared(e.to_string()))?;
    pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                let (suite, _) = cache.get(&item.example.db_id, &item.db_file)?;
                Ok(evaluate(item.example, item.prediction, &suite, opts))
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rusqlite::Connection;

    fn example(gold: &str) -> ExampleRecord {
        ExampleRecord {
            example_id: "e0000".into(),
            db_id: "t".into(),
            question: "q".into(),
            gold_sql: gold.into(),
            template_id: None,
        }
    }

    fn prediction(sql: &str) -> Prediction {
        Prediction {
            example_id: "e0000".into(),
            raw_completion: String::new(),
            sql: sql.into(),
        }
    }

    fn suite(dir: &std::path::Path, contents: &[&str]) -> TestSuite {
        let variants = contents
            .iter()
            .enumerate()
            .map(|(i, sql)| {
                let p = dir.join(format!("v{i}.db"));
                let c = Connection::open(&p).unwrap();
                c.execute_batch("CREATE TABLE t (a int, b int)").unwrap();
                c.execute_batch(sql).unwrap();
                p
            })
            .collect();
        TestSuite {
            db_id: "t".into(),
            seed: 0,
            k: contents.len() - 1,
            variants,
        }
    }

    #[test]
    fn ts_requires_agreement_on_every_variant() {
        let dir = tempfile::tempdir().unwrap();
        let s = suite(
            dir.path(),
            &["INSERT INTO t VALUES (1, 1), (2, 2)", "INSERT INTO t VALUES (2, 3), (3, 3)"],
        );
        let ex = example("SELECT a FROM t WHERE a = b OR a > 1");
        let o = evaluate(&ex, &prediction("SELECT a FROM t WHERE a = b"), &s, &EvalOptions::default());
        assert!(o.valid && o.ex && !o.ts);
        let o = evaluate(&ex, &prediction(&ex.gold_sql), &s, &EvalOptions::default());
        assert!(o.valid && o.ex && o.ts);
    }

    #[test]
    fn invalid_prediction_carries_engine_reason() {
        let dir = tempfile::tempdir().unwrap();
        let s = suite(dir.path(), &["INSERT INTO t VALUES (1, 1)"]);
        let o = evaluate(&example("SELECT a FROM t"), &prediction("SELECT nocol FROM t"), &s, &EvalOptions::default());
        assert!(!o.valid && !o.ex && !o.ts);
        assert_eq!(o.invalid_reason.as_deref(), Some("no such column: nocol"));
        assert_eq!(o.auto_category.unwrap().kind, ErrorKind::InvalidNoSuchColumn);
        let o = evaluate(&example("SELECT a FROM t"), &prediction(""), &s, &EvalOptions::default());
        assert_eq!(o.invalid_reason.as_deref(), Some("empty prediction"));
    }

    #[test]
    fn broken_gold_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let s = suite(dir.path(), &[""]);
        let o = evaluate(&example("SELECT zz FROM t"), &prediction("SELECT a FROM t"), &s, &EvalOptions::default());
        assert!(o.gold_broken && !o.valid);
    }

    #[test]
    fn timeout_policy() {
        let dir = tempfile::tempdir().unwrap();
        let s = suite(dir.path(), &[""]);
        let runaway = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c";
        let mut opts = EvalOptions {
            timeout: Duration::from_millis(50),
            ..EvalOptions::default()
        };
        let o = evaluate(&example("SELECT 1"), &prediction(runaway), &s, &opts);
        assert!(!o.valid);
        assert_eq!(o.invalid_reason.as_deref(), Some("timeout"));
        opts.timeout_policy = TimeoutPolicy::ValidUnknown;
        let o = evaluate(&example("SELECT 1"), &prediction(runaway), &s, &opts);
        assert!(o.valid && !o.ex);
    }

    #[test]
    fn extra_columns_are_flagged_automatically() {
        let dir = tempfile::tempdir().unwrap();
        let s = suite(dir.path(), &["INSERT INTO t VALUES (1, 5), (2, 6)"]);
        let o = evaluate(&example("SELECT a FROM t"), &prediction("SELECT a, b FROM t"), &s, &EvalOptions::default());
        assert!(o.valid && !o.ex);
        assert_eq!(o.auto_category.unwrap().kind, ErrorKind::SelectExtraColumns);
    }
}
