//! Test suites: the original database plus `k` fuzzed variants that keep its
//! schema, primary-key uniqueness and foreign-key integrity.
//!
//! Variants are regenerated table by table in foreign-key order. Cell values
//! come from the original column's value pool, from boundary mutations of
//! pool values, or are freshly drawn. The last variant of every suite holds
//! empty copies of all tables.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::{introspect_conn, open_read_only, quote_ident, DatabaseSchema};
use crate::value::Value;

pub const GENERATOR_VERSION: &str = "1";
pub const DEFAULT_K: usize = 32;
pub const MAX_ROWS: usize = 64;
const ROW_ATTEMPTS: usize = 30;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("a test suite needs at least one fuzzed variant")]
    ZeroVariants,
    #[error("cannot read source database {path}: {message}")]
    Source { path: PathBuf, message: String },
    #[error("variant {variant} violates integrity after deferred assignment: {detail}")]
    Integrity { variant: usize, detail: String },
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("{0}")]
    Shared(String),
}

fn write_err(path: &Path) -> impl Fn(rusqlite::Error) -> SuiteError + '_ {
    move |e| SuiteError::Write {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Affinity {
    Integer,
    Real,
    Text,
    Numeric,
    Blob,
}

impl Affinity {
    /// SQLite's type-name affinity rules.
    fn of(declared: &str) -> Affinity {
        let t = declared.to_ascii_uppercase();
        if t.contains("INT") {
            Affinity::Integer
        } else if t.contains("CHAR") || t.contains("CLOB") || t.contains("TEXT") {
            Affinity::Text
        } else if t.is_empty() || t.contains("BLOB") {
            Affinity::Blob
        } else if t.contains("REAL") || t.contains("FLOA") || t.contains("DOUB") {
            Affinity::Real
        } else {
            Affinity::Numeric
        }
    }
}

#[derive(Debug, Clone)]
struct ColumnPlan {
    /// Distinct non-null original values in first-seen order.
    pool: Vec<Value>,
    has_null: bool,
    not_null: bool,
    affinity: Affinity,
    int_range: (i64, i64),
    real_range: (f64, f64),
    /// Every text value in the pool parses as an integer.
    numeric_text: Option<(i64, i64)>,
}

impl ColumnPlan {
    fn build(values: impl Iterator<Item = Value>, declared: &str, not_null: bool) -> Self {
        let mut pool = Vec::new();
        let mut seen = HashSet::new();
        let mut has_null = false;
        for v in values {
            if v.is_null() {
                has_null = true;
            } else if seen.insert(value_key(&v)) {
                pool.push(v);
            }
        }
        let ints: Vec<i64> = pool
            .iter()
            .filter_map(|v| match v {
                Value::Integer(i) => Some(*i),
                _ => None,
            })
            .collect();
        let reals: Vec<f64> = pool
            .iter()
            .filter_map(|v| match v {
                Value::Real(r) if r.is_finite() => Some(*r),
                Value::Integer(i) => Some(*i as f64),
                _ => None,
            })
            .collect();
        let texts: Vec<&String> = pool
            .iter()
            .filter_map(|v| match v {
                Value::Text(t) => Some(t),
                _ => None,
            })
            .collect();
        let text_ints: Vec<i64> = texts.iter().filter_map(|t| t.trim().parse().ok()).collect();
        let span = |xs: &[i64]| -> Option<(i64, i64)> {
            Some((*xs.iter().min()?, *xs.iter().max()?))
        };
        ColumnPlan {
            has_null,
            not_null,
            affinity: Affinity::of(declared),
            int_range: span(&ints).unwrap_or((0, 100)),
            real_range: if reals.is_empty() {
                (0.0, 100.0)
            } else {
                (
                    reals.iter().copied().fold(f64::INFINITY, f64::min),
                    reals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            },
            numeric_text: if !texts.is_empty() && text_ints.len() == texts.len() {
                span(&text_ints)
            } else {
                None
            },
            pool,
        }
    }

    fn null_probability(&self) -> f64 {
        if self.not_null {
            0.0
        } else if self.has_null {
            0.15
        } else {
            0.02
        }
    }

    fn fresh(&self, rng: &mut ChaCha8Rng) -> Value {
        let template = self.pool.choose(rng).cloned();
        let kind = match template {
            Some(Value::Integer(_)) => Affinity::Integer,
            Some(Value::Real(_)) => Affinity::Real,
            Some(Value::Text(_)) => Affinity::Text,
            Some(Value::Blob(_)) => Affinity::Blob,
            _ => self.affinity,
        };
        match kind {
            Affinity::Integer | Affinity::Numeric => {
                let (lo, hi) = self.int_range;
                Value::Integer(rng.gen_range(lo.saturating_sub(10)..=hi.saturating_add(10)))
            }
            Affinity::Real => {
                let (lo, hi) = self.real_range;
                let x = rng.gen_range((lo - 10.0)..=(hi + 10.0));
                Value::Real((x * 100.0).round() / 100.0)
            }
            Affinity::Text => match self.numeric_text {
                Some((lo, hi)) => Value::Text(
                    rng.gen_range(lo.saturating_sub(10)..=hi.saturating_add(10))
                        .to_string(),
                ),
                None => Value::Text(random_word(rng)),
            },
            Affinity::Blob => Value::Blob((0..4).map(|_| rng.gen()).collect()),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, allow_null: bool) -> Value {
        if allow_null && rng.gen_bool(self.null_probability()) {
            return Value::Null;
        }
        if self.pool.is_empty() {
            return self.fresh(rng);
        }
        let r: f64 = rng.gen();
        let picked = self.pool.choose(rng).unwrap().clone();
        if r < 0.6 {
            picked
        } else if r < 0.8 {
            mutate(&picked, rng)
        } else {
            self.fresh(rng)
        }
    }

    /// A value outside everything drawn so far, for key columns that keep
    /// colliding.
    fn unique_fallback(&self, counter: usize) -> Value {
        let c = counter as i64;
        match self.pool.first() {
            Some(Value::Real(_)) => Value::Real(self.real_range.1 + 1.0 + c as f64),
            Some(Value::Text(t)) => match self.numeric_text {
                Some((_, hi)) => Value::Text((hi + 11 + c).to_string()),
                None => Value::Text(format!("{t}_{c}")),
            },
            Some(Value::Blob(b)) => {
                let mut b = b.clone();
                b.extend_from_slice(&c.to_le_bytes());
                Value::Blob(b)
            }
            _ => match self.affinity {
                Affinity::Text => Value::Text(format!("key_{c}")),
                Affinity::Real => Value::Real(self.real_range.1 + 11.0 + c as f64),
                _ => Value::Integer(self.int_range.1.saturating_add(11 + c)),
            },
        }
    }
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(3..=8);
    let mut w: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
    if rng.gen_bool(0.3) {
        w[..1].make_ascii_uppercase();
    }
    w
}

/// Boundary mutations: off-by-one numbers, empty strings and case flips.
fn mutate(v: &Value, rng: &mut ChaCha8Rng) -> Value {
    let delta: i64 = if rng.gen_bool(0.5) { 1 } else { -1 };
    match v {
        Value::Integer(i) => Value::Integer(i.saturating_add(delta)),
        Value::Real(r) => Value::Real(r + delta as f64),
        Value::Text(t) => {
            if let Ok(n) = t.trim().parse::<i64>() {
                return Value::Text(n.saturating_add(delta).to_string());
            }
            let flipped = if t.chars().any(char::is_lowercase) {
                t.to_uppercase()
            } else {
                t.to_lowercase()
            };
            if rng.gen_bool(0.5) || flipped == *t {
                Value::Text(String::new())
            } else {
                Value::Text(flipped)
            }
        }
        Value::Blob(_) => Value::Blob(Vec::new()),
        Value::Null => Value::Null,
    }
}

/// Hashable identity of a value, distinguishing storage classes.
fn value_key(v: &Value) -> String {
    match v {
        Value::Null => "n".into(),
        Value::Integer(i) => format!("i{i}"),
        Value::Real(r) => format!("r{:016x}", r.to_bits()),
        Value::Text(t) => format!("t{t}"),
        Value::Blob(b) => format!("b{}", hex::encode(b)),
    }
}

fn tuple_key(row: &[Value], cols: &[usize]) -> String {
    let parts: Vec<String> = cols.iter().map(|&c| value_key(&row[c])).collect();
    parts.join("\u{1f}")
}

/// One resolved foreign-key constraint.
#[derive(Debug, Clone)]
struct FkGroup {
    from: Vec<usize>,
    parent: usize,
    to: Vec<usize>,
}

#[derive(Debug, Clone)]
struct TablePlan {
    columns: Vec<ColumnPlan>,
    /// Primary key first, then other unique constraints.
    unique_sets: Vec<Vec<usize>>,
    fks: Vec<FkGroup>,
    fk_columns: HashSet<usize>,
    pk: Vec<usize>,
}

/// Contents and constraints of the original database.
#[derive(Debug, Clone)]
pub struct SourceData {
    pub schema: DatabaseSchema,
    pub rows: Vec<Vec<Vec<Value>>>,
    /// Index and view definitions recreated in every variant.
    extra_sql: Vec<String>,
    plans: Vec<TablePlan>,
    order: Vec<usize>,
}

impl SourceData {
    pub fn read(db_file: &Path) -> Result<Self, SuiteError> {
        let conn = open_read_only(db_file).map_err(|e| SuiteError::Source {
            path: db_file.to_owned(),
            message: e.to_string(),
        })?;
        Self::load(&conn).map_err(|e| SuiteError::Source {
            path: db_file.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn load(conn: &Connection) -> rusqlite::Result<Self> {
        let schema = introspect_conn(conn)?;
        let mut rows = Vec::with_capacity(schema.tables.len());
        let mut plans = Vec::with_capacity(schema.tables.len());
        for table in &schema.tables {
            let mut stmt = conn.prepare(&format!("SELECT * FROM {}", quote_ident(&table.name)))?;
            let width = stmt.column_count();
            let data: Vec<Vec<Value>> = stmt
                .query_map([], |r| {
                    (0..width)
                        .map(|i| r.get_ref(i).map(Value::from_sql))
                        .collect::<Result<Vec<_>, _>>()
                })?
                .collect::<Result<_, _>>()?;
            let columns = table
                .columns
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    ColumnPlan::build(
                        data.iter().map(|r| r[i].clone()),
                        &c.declared_type,
                        c.not_null || c.is_primary_key,
                    )
                })
                .collect();

            let pk = table.primary_key();
            let mut unique_sets = Vec::new();
            if !pk.is_empty() {
                unique_sets.push(pk.clone());
            }
            for set in unique_indexes(conn, &table.name)? {
                let cols: Option<Vec<usize>> = set.iter().map(|c| table.column_index(c)).collect();
                if let Some(cols) = cols.filter(|c| !c.is_empty() && *c != pk) {
                    unique_sets.push(cols);
                }
            }

            let mut by_constraint: Vec<(i64, FkGroup)> = Vec::new();
            for fk in &table.foreign_keys {
                let Some(parent) = schema.table_index(&fk.ref_table) else {
                    continue;
                };
                let (Some(from), Some(to)) = (
                    table.column_index(&fk.from_column),
                    schema.tables[parent].column_index(&fk.ref_column),
                ) else {
                    continue;
                };
                match by_constraint.iter_mut().find(|(id, _)| *id == fk.constraint) {
                    Some((_, g)) => {
                        g.from.push(from);
                        g.to.push(to);
                    }
                    None => by_constraint.push((
                        fk.constraint,
                        FkGroup {
                            from: vec![from],
                            parent,
                            to: vec![to],
                        },
                    )),
                }
            }
            // A column constrained twice keeps its first constraint.
            let mut fk_columns = HashSet::new();
            let mut fks = Vec::new();
            for (_, g) in by_constraint {
                if g.from.iter().all(|c| !fk_columns.contains(c)) {
                    fk_columns.extend(g.from.iter().copied());
                    fks.push(g);
                }
            }

            plans.push(TablePlan {
                columns,
                unique_sets,
                fks,
                fk_columns,
                pk,
            });
            rows.push(data);
        }

        let extra_sql = conn
            .prepare(
                "SELECT sql FROM sqlite_master WHERE type IN ('index', 'view') \
                 AND sql IS NOT NULL ORDER BY CASE type WHEN 'index' THEN 0 ELSE 1 END, rowid",
            )?
            .query_map([], |r| r.get(0))?
            .collect::<Result<_, _>>()?;
        let order = fk_order(&plans);
        Ok(SourceData {
            schema,
            rows,
            extra_sql,
            plans,
            order,
        })
    }
}

fn unique_indexes(conn: &Connection, table: &str) -> rusqlite::Result<Vec<Vec<String>>> {
    let names: Vec<(String, bool)> = conn
        .prepare(&format!("PRAGMA index_list({})", quote_ident(table)))?
        .query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, i64>(2)? != 0)))?
        .collect::<Result<_, _>>()?;
    let mut sets = Vec::new();
    for (name, unique) in names.into_iter().filter(|(_, u)| *u) {
        let _ = unique;
        let cols: Vec<Option<String>> = conn
            .prepare(&format!("PRAGMA index_info({})", quote_ident(&name)))?
            .query_map([], |r| r.get(2))?
            .collect::<Result<_, _>>()?;
        // Expression indexes have no column names; they are skipped.
        if let Some(cols) = cols.into_iter().collect::<Option<Vec<_>>>() {
            sets.push(cols);
        }
    }
    Ok(sets)
}

/// Parents before children; tables caught in cycles follow in catalog order.
fn fk_order(plans: &[TablePlan]) -> Vec<usize> {
    let n = plans.len();
    let mut placed = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        let ready = (0..n).find(|&t| {
            !placed[t]
                && plans[t]
                    .fks
                    .iter()
                    .all(|g| g.parent == t || placed[g.parent])
        });
        match ready {
            Some(t) => {
                placed[t] = true;
                order.push(t);
            }
            None => break,
        }
    }
    order.extend((0..n).filter(|&t| !placed[t]));
    order
}

/// Rows of every table of one variant, in catalog order.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantData {
    pub tables: Vec<Vec<Vec<Value>>>,
}

fn variant_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"test-suite");
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn empty_variant(source: &SourceData) -> VariantData {
    VariantData {
        tables: vec![Vec::new(); source.schema.tables.len()],
    }
}

pub fn row_count_range(original: usize) -> (usize, usize) {
    let lo = original.div_ceil(2).clamp(1, MAX_ROWS);
    let hi = (2 * original).min(MAX_ROWS).max(lo);
    (lo, hi)
}

/// Generates fuzzed variant `index` (1-based) of a suite seeded with `seed`.
pub fn generate_variant(source: &SourceData, seed: u64, index: usize) -> Result<VariantData, SuiteError> {
    let mut rng = variant_rng(seed, index);
    let n = source.schema.tables.len();
    let mut tables: Vec<Vec<Vec<Value>>> = vec![Vec::new(); n];
    let mut generated = vec![false; n];
    // (table, row, fk group index) still waiting for a parent.
    let mut deferred: Vec<(usize, usize, usize)> = Vec::new();

    for &t in &source.order {
        let plan = &source.plans[t];
        let (lo, hi) = row_count_range(source.rows[t].len());
        let target = rng.gen_range(lo..=hi);
        let mut seen: Vec<HashSet<String>> = vec![HashSet::new(); plan.unique_sets.len()];
        let mut fallback_counter = 0usize;
        let mut rows = Vec::with_capacity(target);

        'rows: for _ in 0..target {
            for attempt in 0..ROW_ATTEMPTS {
                let mut row = vec![Value::Null; plan.columns.len()];
                let mut waiting = Vec::new();
                for (gi, g) in plan.fks.iter().enumerate() {
                    if g.parent == t || !generated[g.parent] {
                        waiting.push(gi);
                        continue;
                    }
                    let nullable = g.from.iter().all(|&c| !plan.columns[c].not_null);
                    let parents = &tables[g.parent];
                    let want_null = nullable
                        && g.from.iter().any(|&c| plan.columns[c].has_null)
                        && rng.gen_bool(0.15);
                    if parents.is_empty() || want_null {
                        if !nullable {
                            break 'rows;
                        }
                        continue;
                    }
                    let parent = parents.choose(&mut rng).unwrap();
                    for (&from, &to) in g.from.iter().zip(&g.to) {
                        row[from] = parent[to].clone();
                    }
                }
                for (c, col) in plan.columns.iter().enumerate() {
                    if plan.fk_columns.contains(&c) {
                        continue;
                    }
                    let is_key = plan.pk.contains(&c);
                    row[c] = if is_key && plan.pk.len() == 1 && attempt >= ROW_ATTEMPTS / 2 {
                        fallback_counter += 1;
                        col.unique_fallback(fallback_counter)
                    } else {
                        col.draw(&mut rng, !is_key)
                    };
                }
                let keys: Vec<Option<String>> = plan
                    .unique_sets
                    .iter()
                    .map(|set| {
                        let pending = set.iter().any(|c| {
                            waiting.iter().any(|&gi| plan.fks[gi].from.contains(c))
                        });
                        // NULLs never collide in UNIQUE constraints, except in
                        // the primary key where none are generated.
                        let has_null = set.iter().any(|&c| row[c].is_null());
                        (!pending && !has_null).then(|| tuple_key(&row, set))
                    })
                    .collect();
                if keys
                    .iter()
                    .zip(&seen)
                    .any(|(k, s)| k.as_ref().is_some_and(|k| s.contains(k)))
                {
                    continue;
                }
                for (k, s) in keys.into_iter().zip(seen.iter_mut()) {
                    if let Some(k) = k {
                        s.insert(k);
                    }
                }
                let r = rows.len();
                deferred.extend(waiting.into_iter().map(|gi| (t, r, gi)));
                rows.push(row);
                continue 'rows;
            }
            // Key space exhausted; keep the rows we have.
            break;
        }
        tables[t] = rows;
        generated[t] = true;
    }

    // Second pass: foreign keys into tables that were not ready (cycles and
    // self references).
    for (t, r, gi) in deferred {
        let g = &source.plans[t].fks[gi];
        let nullable = g.from.iter().all(|&c| !source.plans[t].columns[c].not_null);
        if tables[g.parent].is_empty() {
            if !nullable {
                return Err(SuiteError::Integrity {
                    variant: index,
                    detail: format!(
                        "{} needs a row of empty table {}",
                        source.schema.tables[t].name, source.schema.tables[g.parent].name
                    ),
                });
            }
            continue;
        }
        let pick = rng.gen_range(0..tables[g.parent].len());
        let values: Vec<Value> = g.to.iter().map(|&c| tables[g.parent][pick][c].clone()).collect();
        for (&from, v) in g.from.iter().zip(values) {
            tables[t][r][from] = v;
        }
    }

    let data = VariantData { tables };
    let violations = integrity_violations(source, &data);
    if let Some(first) = violations.first() {
        return Err(SuiteError::Integrity {
            variant: index,
            detail: first.clone(),
        });
    }
    Ok(data)
}

/// Primary-key duplicates and dangling foreign keys in `data`.
pub fn integrity_violations(source: &SourceData, data: &VariantData) -> Vec<String> {
    let mut out = Vec::new();
    for (t, plan) in source.plans.iter().enumerate() {
        let name = &source.schema.tables[t].name;
        let rows = &data.tables[t];
        if !plan.pk.is_empty() {
            let mut seen = HashSet::new();
            for row in rows {
                if plan.pk.iter().any(|&c| row[c].is_null()) {
                    out.push(format!("{name}: NULL primary key"));
                } else if !seen.insert(tuple_key(row, &plan.pk)) {
                    out.push(format!("{name}: duplicate primary key {}", tuple_key(row, &plan.pk)));
                }
            }
        }
        for g in &plan.fks {
            let parent_keys: HashSet<String> = data.tables[g.parent]
                .iter()
                .map(|p| tuple_key(p, &g.to))
                .collect();
            for row in rows {
                if g.from.iter().any(|&c| row[c].is_null()) {
                    continue;
                }
                if !parent_keys.contains(&tuple_key(row, &g.from)) {
                    out.push(format!(
                        "{name}: dangling reference {} into {}",
                        tuple_key(row, &g.from),
                        source.schema.tables[g.parent].name
                    ));
                }
            }
        }
    }
    out
}

/// Writes a variant as a fresh database file at `path`.
pub fn write_variant(source: &SourceData, data: &VariantData, path: &Path) -> Result<(), SuiteError> {
    let tmp = path.with_extension("db.partial");
    let _ = std::fs::remove_file(&tmp);
    {
        let mut conn = Connection::open(&tmp).map_err(write_err(&tmp))?;
        // Rows go in catalog order, which may put children before parents.
        conn.execute_batch("PRAGMA foreign_keys = OFF").map_err(write_err(&tmp))?;
        for table in &source.schema.tables {
            conn.execute_batch(&table.create_sql).map_err(write_err(&tmp))?;
        }
        for sql in &source.extra_sql {
            if let Err(e) = conn.execute_batch(sql) {
                log::warn!("{}: skipping {sql:?}: {e}", path.display());
            }
        }
        let tx = conn.transaction().map_err(write_err(&tmp))?;
        for (t, table) in source.schema.tables.iter().enumerate() {
            if data.tables[t].is_empty() {
                continue;
            }
            let marks = vec!["?"; table.columns.len()].join(", ");
            let mut stmt = tx
                .prepare(&format!("INSERT INTO {} VALUES ({marks})", quote_ident(&table.name)))
                .map_err(write_err(&tmp))?;
            for row in &data.tables[t] {
                if let Err(e) = stmt.execute(rusqlite::params_from_iter(row.iter())) {
                    log::warn!("{}: dropped a generated {} row: {e}", path.display(), table.name);
                }
            }
        }
        tx.commit().map_err(write_err(&tmp))?;
        remove_dangling(&conn).map_err(write_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| SuiteError::Write {
        path: path.to_owned(),
        message: e.to_string(),
    })
}

/// Deletes rows whose references broke because an insert was rejected,
/// repeating until the database is consistent.
fn remove_dangling(conn: &Connection) -> rusqlite::Result<()> {
    loop {
        let broken: Vec<(String, i64)> = conn
            .prepare("PRAGMA foreign_key_check")?
            .query_map([], |r| Ok((r.get(0)?, r.get::<_, Option<i64>>(1)?.unwrap_or(-1))))?
            .collect::<Result<_, _>>()?;
        if broken.is_empty() {
            return Ok(());
        }
        for (table, rowid) in broken {
            log::warn!("removing dangling row {rowid} of {table}");
            conn.execute(&format!("DELETE FROM {} WHERE rowid = ?1", quote_ident(&table)), [rowid])?;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub db_id: String,
    pub seed: u64,
    pub k: usize,
    pub generator_version: String,
    pub source_sha256: String,
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestSuite {
    pub db_id: String,
    pub seed: u64,
    pub k: usize,
    /// Variant 0 is the original database.
    pub variants: Vec<PathBuf>,
}

impl TestSuite {
    pub fn original(&self) -> &Path {
        &self.variants[0]
    }
}

fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn db_id_of(db_file: &Path) -> String {
    db_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Generates `k` variants of `db_file` into `dir` and writes the manifest.
pub fn build_test_suite(db_file: &Path, k: usize, seed: u64, dir: &Path) -> Result<TestSuite, SuiteError> {
    if k == 0 {
        return Err(SuiteError::ZeroVariants);
    }
    std::fs::create_dir_all(dir).map_err(|e| SuiteError::Write {
        path: dir.to_owned(),
        message: e.to_string(),
    })?;
    let source = SourceData::read(db_file)?;
    let mut variants = vec![db_file.to_owned()];
    let mut names = Vec::with_capacity(k);
    for i in 1..=k {
        let data = if i == k {
            empty_variant(&source)
        } else {
            generate_variant(&source, seed, i)?
        };
        let name = format!("variant_{i}.db");
        let path = dir.join(&name);
        write_variant(&source, &data, &path)?;
        variants.push(path);
        names.push(name);
    }
    let manifest = SuiteManifest {
        db_id: db_id_of(db_file),
        seed,
        k,
        generator_version: GENERATOR_VERSION.into(),
        source_sha256: file_sha256(db_file).map_err(|e| SuiteError::Source {
            path: db_file.to_owned(),
            message: e.to_string(),
        })?,
        variants: names,
    };
    let manifest_path = dir.join(MANIFEST);
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).unwrap()).map_err(|e| {
        SuiteError::Write {
            path: manifest_path.clone(),
            message: e.to_string(),
        }
    })?;
    Ok(TestSuite {
        db_id: manifest.db_id,
        seed,
        k,
        variants,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteOrigin {
    Cached,
    Generated,
}

/// Loads a persisted suite if its manifest matches, otherwise rebuilds it.
pub fn load_or_build(
    db_file: &Path,
    k: usize,
    seed: u64,
    dir: &Path,
) -> Result<(TestSuite, SuiteOrigin), SuiteError> {
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        match std::fs::read(&manifest_path)
            .map_err(|e| e.to_string())
            .and_then(|b| serde_json::from_slice::<SuiteManifest>(&b).map_err(|e| e.to_string()))
        {
            Ok(m) => {
                let source_hash = file_sha256(db_file).unwrap_or_default();
                let files_ok = m.variants.len() == k && m.variants.iter().all(|v| dir.join(v).is_file());
                if m.seed == seed
                    && m.k == k
                    && m.generator_version == GENERATOR_VERSION
                    && m.source_sha256 == source_hash
                    && files_ok
                {
                    log::info!("reusing test suite {}", dir.display());
                    let mut variants = vec![db_file.to_owned()];
                    variants.extend(m.variants.iter().map(|v| dir.join(v)));
                    return Ok((
                        TestSuite {
                            db_id: m.db_id,
                            seed,
                            k,
                            variants,
                        },
                        SuiteOrigin::Cached,
                    ));
                }
                log::warn!("test suite {} is stale; regenerating", dir.display());
            }
            Err(e) => log::warn!("corrupt suite manifest {}: {e}; regenerating", manifest_path.display()),
        }
        let _ = std::fs::remove_file(&manifest_path);
    }
    build_test_suite(db_file, k, seed, dir).map(|s| (s, SuiteOrigin::Generated))
}

type Slot = Arc<OnceLock<Result<(Arc<TestSuite>, SuiteOrigin), String>>>;

/// Suites under `<root>/<db_id>/<seed>/`, generated at most once per
/// database even with concurrent callers.
pub struct SuiteCache {
    root: PathBuf,
    k: usize,
    seed: u64,
    slots: Mutex<HashMap<String, Slot>>,
}

impl SuiteCache {
    pub fn new(root: impl Into<PathBuf>, k: usize, seed: u64) -> Self {
        SuiteCache {
            root: root.into(),
            k,
            seed,
            slots: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self, db_id: &str) -> PathBuf {
        self.root.join(db_id).join(self.seed.to_string())
    }

    pub fn get(&self, db_id: &str, db_file: &Path) -> Result<(Arc<TestSuite>, SuiteOrigin), SuiteError> {
        let slot = {
            let mut slots = self.slots.lock().unwrap_or_else(|e| e.into_inner());
            slots.entry(db_id.to_owned()).or_default().clone()
        };
        slot.get_or_init(|| {
            load_or_build(db_file, self.k, self.seed, &self.dir(db_id))
                .map(|(s, o)| (Arc::new(s), o))
                .map_err(|e| e.to_string())
        })
        .clone()
        .map_err(SuiteError::Shared)
    }
}
