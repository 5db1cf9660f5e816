//! Read-only, time-limited query execution.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::{Connection, ErrorCode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::open_read_only;
use crate::sqltext;
use crate::value::Value;

/// Virtual machine instructions between wall-clock checks.
const PROGRESS_STEPS: i32 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    /// The query has a top-level ORDER BY, so row order is part of its meaning.
    pub order_sensitive: bool,
}

impl ExecResult {
    pub fn arity(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExecError {
    /// Engine message, verbatim.
    #[error("{0}")]
    Engine(String),
    #[error("timeout")]
    Timeout,
    #[error("forbidden: statement would modify the database")]
    Forbidden,
    #[error("empty prediction")]
    Empty,
    #[error("cannot open database: {0}")]
    Open(String),
}

impl ExecError {
    /// Short reason recorded in outcome files.
    pub fn reason(&self) -> String {
        self.to_string()
    }
}

/// Drops trailing semicolons and whitespace.
pub fn strip_terminator(sql: &str) -> &str {
    sql.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace())
}

pub fn execute_sql(db_file: &Path, sql: &str, timeout: Duration) -> Result<ExecResult, ExecError> {
    let conn = open_read_only(db_file).map_err(|e| ExecError::Open(format!("{}: {e}", db_file.display())))?;
    execute_on(&conn, sql, timeout)
}

pub fn execute_on(conn: &Connection, sql: &str, timeout: Duration) -> Result<ExecResult, ExecError> {
    let sql = strip_terminator(sql);
    if sql.is_empty() {
        return Err(ExecError::Empty);
    }
    let timed_out = Arc::new(AtomicBool::new(false));
    let flag = timed_out.clone();
    let start = Instant::now();
    conn.progress_handler(
        PROGRESS_STEPS,
        Some(move || {
            let expired = start.elapsed() > timeout;
            if expired {
                flag.store(true, Ordering::Relaxed);
            }
            expired
        }),
    );
    let result = run(conn, sql, &timed_out);
    conn.progress_handler(0, None::<fn() -> bool>);
    result
}

fn engine(e: rusqlite::Error) -> ExecError {
    match e {
        rusqlite::Error::SqliteFailure(_, Some(msg)) => ExecError::Engine(msg),
        rusqlite::Error::SqlInputError { msg, .. } => ExecError::Engine(msg),
        other => ExecError::Engine(other.to_string()),
    }
}

fn classify(e: rusqlite::Error, timed_out: &AtomicBool) -> ExecError {
    let interrupted = match &e {
        rusqlite::Error::SqliteFailure(f, _) | rusqlite::Error::SqlInputError { error: f, .. } => {
            f.code == ErrorCode::OperationInterrupted
        }
        _ => false,
    };
    if interrupted && timed_out.load(Ordering::Relaxed) {
        ExecError::Timeout
    } else {
        engine(e)
    }
}

fn run(conn: &Connection, sql: &str, timed_out: &AtomicBool) -> Result<ExecResult, ExecError> {
    let mut stmt = conn.prepare(sql).map_err(|e| classify(e, timed_out))?;
    if !stmt.readonly() {
        return Err(ExecError::Forbidden);
    }
    let columns: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let width = columns.len();
    let mut rows = Vec::new();
    let mut cursor = stmt.query([]).map_err(|e| classify(e, timed_out))?;
    while let Some(row) = cursor.next().map_err(|e| classify(e, timed_out))? {
        let mut tuple = Vec::with_capacity(width);
        for i in 0..width {
            tuple.push(Value::from_sql(row.get_ref(i).map_err(engine)?));
        }
        rows.push(tuple);
    }
    Ok(ExecResult {
        columns,
        rows,
        order_sensitive: sqltext::has_top_level_order_by(sql),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conn() -> Connection {
        let c = Connection::open_in_memory().unwrap();
        c.execute_batch("CREATE TABLE t (a int, b text); INSERT INTO t VALUES (1, 'x'), (2, NULL);")
            .unwrap();
        c
    }

    const SECOND: Duration = Duration::from_secs(1);

    #[test]
    fn rows_come_back_typed() {
        let r = execute_on(&conn(), "SELECT a, b FROM t;", SECOND).unwrap();
        assert_eq!(r.columns, vec!["a", "b"]);
        assert_eq!(
            r.rows,
            vec![
                vec![Value::Integer(1), Value::Text("x".into())],
                vec![Value::Integer(2), Value::Null]
            ]
        );
        assert!(!r.order_sensitive);
        assert!(execute_on(&conn(), "SELECT a FROM t ORDER BY a", SECOND).unwrap().order_sensitive);
    }

    #[test]
    fn engine_messages_are_verbatim() {
        let err = execute_on(&conn(), "SELECT nocol FROM t", SECOND).unwrap_err();
        assert_eq!(err, ExecError::Engine("no such column: nocol".into()));
    }

    #[test]
    fn writes_are_forbidden() {
        for sql in ["DELETE FROM t", "INSERT INTO t VALUES (3, 'z')", "DROP TABLE t"] {
            assert_eq!(execute_on(&conn(), sql, SECOND).unwrap_err(), ExecError::Forbidden, "{sql}");
        }
    }

    #[test]
    fn runaway_query_times_out() {
        let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c";
        let start = Instant::now();
        let err = execute_on(&conn(), sql, Duration::from_millis(100)).unwrap_err();
        assert_eq!(err, ExecError::Timeout);
        assert!(start.elapsed() < Duration::from_secs(5));
        // The handler is removed afterwards.
        assert!(execute_on(&conn(), "SELECT 1", SECOND).is_ok());
    }

    #[test]
    fn empty_sql() {
        assert_eq!(execute_on(&conn(), " ; ", SECOND).unwrap_err(), ExecError::Empty);
    }
}
