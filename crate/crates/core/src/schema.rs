//! Database introspection and row sampling.

use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::value::Value;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot introspect {path}: {source}")]
    Sqlite {
        path: PathBuf,
        source: rusqlite::Error,
    },
    #[error("no table named {table:?} in {path}")]
    UnknownTable { path: PathBuf, table: String },
    #[error("row sample size must be at least 1")]
    ZeroLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub declared_type: String,
    pub is_primary_key: bool,
    pub not_null: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    /// Groups the columns of one (possibly composite) constraint.
    pub constraint: i64,
    pub from_column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnSchema>,
    pub foreign_keys: Vec<ForeignKey>,
    pub create_sql: String,
}

impl TableSchema {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn primary_key(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].is_primary_key)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub tables: Vec<TableSchema>,
    /// Constraint problems found while introspecting, e.g. dangling foreign keys.
    pub warnings: Vec<String>,
}

impl DatabaseSchema {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables
            .iter()
            .position(|t| t.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSample {
    pub table: String,
    pub limit: usize,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

pub fn open_read_only(path: &Path) -> rusqlite::Result<Connection> {
    Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
}

pub fn introspect(db_file: &Path) -> Result<DatabaseSchema, SchemaError> {
    let wrap = |source| SchemaError::Sqlite {
        path: db_file.to_owned(),
        source,
    };
    let conn = open_read_only(db_file).map_err(wrap)?;
    introspect_conn(&conn).map_err(wrap)
}

pub fn introspect_conn(conn: &Connection) -> rusqlite::Result<DatabaseSchema> {
    let mut stmt = conn.prepare(
        "SELECT name, sql FROM sqlite_master \
         WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY rowid",
    )?;
    let entries: Vec<(String, Option<String>)> = stmt
        .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?
        .collect::<Result<_, _>>()?;

    let mut tables = Vec::with_capacity(entries.len());
    for (name, sql) in entries {
        let quoted = quote_ident(&name);
        let columns = conn
            .prepare(&format!("PRAGMA table_info({quoted})"))?
            .query_map([], |r| {
                Ok(ColumnSchema {
                    name: r.get(1)?,
                    declared_type: r.get::<_, Option<String>>(2)?.unwrap_or_default(),
                    not_null: r.get::<_, i64>(3)? != 0,
                    is_primary_key: r.get::<_, i64>(5)? != 0,
                })
            })?
            .collect::<Result<Vec<_>, _>>()?;
        let raw_fks = conn
            .prepare(&format!("PRAGMA foreign_key_list({quoted})"))?
            .query_map([], |r| {
                Ok((
                    r.get::<_, i64>(0)?,
                    r.get::<_, i64>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, Option<String>>(4)?,
                ))
            })?
            .collect::<Result<Vec<_>, _>>()?;
        let mut raw_fks = raw_fks;
        raw_fks.sort_by_key(|fk| (fk.0, fk.1));
        tables.push((
            TableSchema {
                name,
                columns,
                foreign_keys: Vec::new(),
                create_sql: sql.unwrap_or_default(),
            },
            raw_fks,
        ));
    }

    // Resolve implicit FK targets (`REFERENCES t` with no column list) to the
    // referenced table's primary key, then validate every reference.
    let snapshot: Vec<TableSchema> = tables.iter().map(|(t, _)| t.clone()).collect();
    let find = |name: &str| snapshot.iter().find(|t| t.name.eq_ignore_ascii_case(name));
    let mut warnings = Vec::new();
    for (table, raw_fks) in &mut tables {
        for (constraint, seq, ref_table, from, to) in raw_fks.drain(..) {
            let target = find(&ref_table);
            let ref_column = match to {
                Some(c) => c,
                None => target
                    .and_then(|t| t.primary_key().get(seq as usize).map(|&i| t.columns[i].name.clone()))
                    .unwrap_or_default(),
            };
            match target {
                None => warnings.push(format!(
                    "{}.{from} references missing table {ref_table}",
                    table.name
                )),
                Some(t) if t.column_index(&ref_column).is_none() => warnings.push(format!(
                    "{}.{from} references missing column {ref_table}.{ref_column}",
                    table.name
                )),
                Some(_) => {}
            }
            if table.column_index(&from).is_none() {
                warnings.push(format!("{} has a foreign key on missing column {from}", table.name));
            }
            table.foreign_keys.push(ForeignKey {
                constraint,
                from_column: from,
                ref_table,
                ref_column,
            });
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    Ok(DatabaseSchema {
        tables: tables.into_iter().map(|(t, _)| t).collect(),
        warnings,
    })
}

pub fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// First `x` rows of `table` in the engine's natural order.
pub fn sample_rows(db_file: &Path, table: &str, x: usize) -> Result<RowSample, SchemaError> {
    let wrap = |source| SchemaError::Sqlite {
        path: db_file.to_owned(),
        source,
    };
    let conn = open_read_only(db_file).map_err(wrap)?;
    sample_rows_conn(&conn, table, x).map_err(|e| match e {
        SampleError::Unknown => SchemaError::UnknownTable {
            path: db_file.to_owned(),
            table: table.to_owned(),
        },
        SampleError::ZeroLimit => SchemaError::ZeroLimit,
        SampleError::Sqlite(source) => wrap(source),
    })
}

#[derive(Debug)]
pub enum SampleError {
    Unknown,
    ZeroLimit,
    Sqlite(rusqlite::Error),
}

impl From<rusqlite::Error> for SampleError {
    fn from(e: rusqlite::Error) -> Self {
        SampleError::Sqlite(e)
    }
}

pub fn sample_rows_conn(conn: &Connection, table: &str, x: usize) -> Result<RowSample, SampleError> {
    if x == 0 {
        return Err(SampleError::ZeroLimit);
    }
    let name: Option<String> = conn
        .query_row(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name = ?1 COLLATE NOCASE",
            [table],
            |r| r.get(0),
        )
        .ok();
    let Some(name) = name else {
        return Err(SampleError::Unknown);
    };
    let mut stmt = conn.prepare(&format!("SELECT * FROM {} LIMIT {x}", quote_ident(&name)))?;
    let header: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
    let width = header.len();
    let rows = stmt
        .query_map([], |r| {
            (0..width)
                .map(|i| r.get_ref(i).map(Value::from_sql))
                .collect::<Result<Vec<_>, _>>()
        })?
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RowSample {
        table: name,
        limit: x,
        header,
        rows,
    })
}

/// Samples every table of `schema` in catalog order.
pub fn sample_all(db_file: &Path, schema: &DatabaseSchema, x: usize) -> Result<Vec<RowSample>, SchemaError> {
    schema
        .tables
        .iter()
        .map(|t| sample_rows(db_file, &t.name, x))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db_with(sql: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sqlite");
        Connection::open(&path).unwrap().execute_batch(sql).unwrap();
        (dir, path)
    }

    #[test]
    fn empty_database_has_no_tables() {
        let (_d, path) = db_with("");
        let s = introspect(&path).unwrap();
        assert!(s.tables.is_empty());
    }

    #[test]
    fn dangling_foreign_key_is_a_warning() {
        let (_d, path) = db_with(
            "CREATE TABLE a (id int primary key, b_id int, foreign key (b_id) references ghost(id));",
        );
        let s = introspect(&path).unwrap();
        assert_eq!(s.tables.len(), 1);
        assert_eq!(s.tables[0].foreign_keys.len(), 1);
        assert_eq!(s.warnings.len(), 1);
        assert!(s.warnings[0].contains("ghost"), "{:?}", s.warnings);
    }

    #[test]
    fn implicit_reference_resolves_to_primary_key() {
        let (_d, path) = db_with(
            "CREATE TABLE p (code text primary key);
             CREATE TABLE c (p_code text references p);",
        );
        let s = introspect(&path).unwrap();
        assert_eq!(s.table("C").unwrap().foreign_keys[0].ref_column, "code");
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn corrupt_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.sqlite");
        std::fs::write(&path, vec![7u8; 4096]).unwrap();
        let err = introspect(&path).unwrap_err();
        assert!(err.to_string().contains("junk.sqlite"), "{err}");
    }

    #[test]
    fn sample_limits_and_errors() {
        let (_d, path) = db_with(
            "CREATE TABLE one (a int, b text); INSERT INTO one VALUES (1, NULL);
             CREATE TABLE none (a int);",
        );
        let s = sample_rows(&path, "one", 10).unwrap();
        assert_eq!(s.rows, vec![vec![Value::Integer(1), Value::Null]]);
        let s = sample_rows(&path, "none", 3).unwrap();
        assert_eq!(s.header, vec!["a"]);
        assert!(s.rows.is_empty());
        assert!(matches!(sample_rows(&path, "one", 0), Err(SchemaError::ZeroLimit)));
        assert!(matches!(
            sample_rows(&path, "nope", 1),
            Err(SchemaError::UnknownTable { .. })
        ));
    }
}
