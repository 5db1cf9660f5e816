//! Failure triage: automatic categories for invalid SQL and extra selected
//! columns, and merging of manual annotations into a breakdown table.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{compare_rows, EvalOutcome, ExecResult};
use crate::value::Value;

/// Widest gold result searched for an extra-column projection.
pub const MAX_PROJECTION_ARITY: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorKind {
    TestSuiteCorrect,
    Shortcuts,
    GroupByConvention,
    OtherSemanticIncorrect,
    SelectExtraColumns,
    SelectConvention,
    Argmax,
    OtherAmbiguousCorrect,
    InvalidAmbiguousColumn,
    InvalidNoSuchColumn,
    InvalidOther,
}

impl ErrorKind {
    pub fn is_invalid(self) -> bool {
        matches!(
            self,
            ErrorKind::InvalidAmbiguousColumn | ErrorKind::InvalidNoSuchColumn | ErrorKind::InvalidOther
        )
    }

    pub fn is_semantic(self) -> bool {
        matches!(
            self,
            ErrorKind::Shortcuts | ErrorKind::GroupByConvention | ErrorKind::OtherSemanticIncorrect
        )
    }

    pub fn is_ambiguous(self) -> bool {
        matches!(
            self,
            ErrorKind::SelectExtraColumns
                | ErrorKind::SelectConvention
                | ErrorKind::Argmax
                | ErrorKind::OtherAmbiguousCorrect
        )
    }

    /// Categories a human may assign to a valid but test-suite-incorrect
    /// prediction.
    pub fn is_annotatable(self) -> bool {
        self.is_semantic() || self.is_ambiguous()
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategorySource {
    Auto,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCategory {
    pub kind: ErrorKind,
    pub source: CategorySource,
}

impl ErrorCategory {
    pub fn auto(kind: ErrorKind) -> Self {
        ErrorCategory {
            kind,
            source: CategorySource::Auto,
        }
    }
}

pub fn classify_invalid(error_message: &str) -> ErrorCategory {
    let msg = error_message.to_lowercase();
    let kind = if msg.contains("ambiguous column name") {
        ErrorKind::InvalidAmbiguousColumn
    } else if msg.contains("no such column") {
        ErrorKind::InvalidNoSuchColumn
    } else {
        ErrorKind::InvalidOther
    };
    ErrorCategory::auto(kind)
}

/// True when the prediction returns every gold column plus extra ones:
/// some assignment of distinct prediction columns to the gold columns, in
/// gold order, reproduces the gold denotation.
pub fn detect_extra_columns(gold: &ExecResult, pred: &ExecResult) -> bool {
    let (g, p) = (gold.arity(), pred.arity());
    if p <= g || g == 0 || gold.rows.len() != pred.rows.len() {
        return false;
    }
    if g > MAX_PROJECTION_ARITY {
        log::warn!("gold result has {g} columns; extra-column search is limited to {MAX_PROJECTION_ARITY}");
        return false;
    }
    // A prediction column can stand for a gold column only if the two hold
    // the same multiset of values.
    let column = |rows: &[Vec<Value>], c: usize| {
        let mut col: Vec<Value> = rows.iter().map(|r| r[c].clone()).collect();
        col.sort_by(|a, b| a.total_cmp(b));
        col
    };
    let candidates: Vec<Vec<usize>> = (0..g)
        .map(|gc| {
            let gold_col = column(&gold.rows, gc);
            (0..p)
                .filter(|&pc| {
                    let pred_col = column(&pred.rows, pc);
                    gold_col.iter().zip(&pred_col).all(|(a, b)| a.cell_eq(b))
                })
                .collect()
        })
        .collect();
    let mut chosen = Vec::with_capacity(g);
    search_projection(gold, pred, &candidates, &mut chosen)
}

fn search_projection(gold: &ExecResult, pred: &ExecResult, candidates: &[Vec<usize>], chosen: &mut Vec<usize>) -> bool {
    if chosen.len() == candidates.len() {
        let projected: Vec<Vec<Value>> = pred
            .rows
            .iter()
            .map(|r| chosen.iter().map(|&c| r[c].clone()).collect())
            .collect();
        let g = gold.arity();
        return compare_rows(&gold.rows, &projected, g, g, gold.order_sensitive);
    }
    for &c in &candidates[chosen.len()] {
        if chosen.contains(&c) {
            continue;
        }
        chosen.push(c);
        if search_projection(gold, pred, candidates, chosen) {
            return true;
        }
        chosen.pop();
    }
    false
}

/// Valid predictions that failed the test suite, in outcome order.
pub fn annotation_population(outcomes: &[EvalOutcome]) -> Vec<&EvalOutcome> {
    outcomes
        .iter()
        .filter(|o| !o.gold_broken && o.valid && !o.ts)
        .collect()
}

/// Uniform sample of `n` ids from the annotation population, returned in
/// outcome order.
pub fn sample_for_annotation(outcomes: &[EvalOutcome], n: usize, seed: u64) -> Vec<String> {
    let population = annotation_population(outcomes);
    if n >= population.len() {
        if n > population.len() {
            log::warn!(
                "requested {n} annotation samples but only {} valid incorrect predictions exist",
                population.len()
            );
        }
        return population.iter().map(|o| o.example_id.clone()).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, population.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| population[i].example_id.clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub example_id: String,
    /// `None` in freshly emitted skeletons.
    pub category: Option<ErrorKind>,
    #[serde(default)]
    pub note: String,
}

/// Skeleton records for the sampled ids, pre-filled with any automatic
/// category as a hint in the note.
pub fn annotation_skeleton(outcomes: &[EvalOutcome], ids: &[String]) -> Vec<AnnotationRecord> {
    let by_id: HashMap<&str, &EvalOutcome> = outcomes.iter().map(|o| (o.example_id.as_str(), o)).collect();
    ids.iter()
        .map(|id| AnnotationRecord {
            example_id: id.clone(),
            category: None,
            note: by_id
                .get(id.as_str())
                .and_then(|o| o.auto_category)
                .map(|c| format!("auto: {}", c.kind))
                .unwrap_or_default(),
        })
        .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TriageError {
    #[error("conflicting annotations for: {}", .0.join(", "))]
    Conflicting(Vec<String>),
    #[error("annotations reference unknown examples: {}", .0.join(", "))]
    UnknownExamples(Vec<String>),
    #[error("{example_id}: {kind} cannot be assigned to a valid but incorrect prediction")]
    NotAnnotatable { example_id: String, kind: ErrorKind },
    #[error("no outcomes to break down")]
    Empty,
}

/// Collapses annotation records to one category per example. Unfilled
/// records are skipped; repeated identical records are tolerated.
pub fn merge_annotations(records: &[AnnotationRecord]) -> Result<BTreeMap<String, ErrorKind>, TriageError> {
    let mut merged: BTreeMap<String, ErrorKind> = BTreeMap::new();
    let mut conflicts = Vec::new();
    for r in records {
        let Some(kind) = r.category else { continue };
        if !kind.is_annotatable() {
            return Err(TriageError::NotAnnotatable {
                example_id: r.example_id.clone(),
                kind,
            });
        }
        match merged.get(&r.example_id) {
            Some(existing) if *existing != kind => {
                if !conflicts.contains(&r.example_id) {
                    conflicts.push(r.example_id.clone());
                }
            }
            _ => {
                merged.insert(r.example_id.clone(), kind);
            }
        }
    }
    if conflicts.is_empty() {
        Ok(merged)
    } else {
        conflicts.sort();
        Err(TriageError::Conflicting(conflicts))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownRow {
    pub label: String,
    /// Share of all predictions.
    pub pct: f64,
    /// Share of annotated erroneous predictions; absent for rows outside
    /// the annotated population.
    pub e_pct: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Breakdown {
    pub total: usize,
    pub errors: usize,
    pub annotated: usize,
    /// Error shares were extrapolated from a manual sample.
    pub extrapolated: bool,
    pub rows: Vec<BreakdownRow>,
}

impl Breakdown {
    pub fn row(&self, label: &str) -> Option<&BreakdownRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("annotation,pct,e_pct,count\n");
        for r in &self.rows {
            let e = r.e_pct.map_or(String::new(), |e| format!("{:.1}", round1(e)));
            out.push_str(&format!("{},{:.1},{e},{}\n", r.label, round1(r.pct), r.count));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.clone(),
                    format!("{:.1}", round1(r.pct)),
                    r.e_pct.map_or("--".into(), |e| format!("{:.1}", round1(e))),
                ]
            })
            .collect();
        crate::report::markdown_table(&["Annotation", "%", "E%"], &cells)
    }
}

fn round1(x: f64) -> f64 {
    crate::report::round_half_up(x, 1)
}

const SEMANTIC: [(ErrorKind, &str); 3] = [
    (ErrorKind::Shortcuts, "-- Shortcuts"),
    (ErrorKind::GroupByConvention, "-- GROUP BY Convention"),
    (ErrorKind::OtherSemanticIncorrect, "-- Other"),
];
const AMBIGUOUS: [(ErrorKind, &str); 4] = [
    (ErrorKind::SelectExtraColumns, "-- SELECT Extra Columns"),
    (ErrorKind::SelectConvention, "-- SELECT Convention"),
    (ErrorKind::Argmax, "-- Argmax"),
    (ErrorKind::OtherAmbiguousCorrect, "-- Other"),
];
const INVALID: [(ErrorKind, &str); 3] = [
    (ErrorKind::InvalidAmbiguousColumn, "-- Ambiguous column name"),
    (ErrorKind::InvalidNoSuchColumn, "-- No such column"),
    (ErrorKind::InvalidOther, "-- Other"),
];

/// Table of prediction categories.
///
/// Without manual annotations every valid but incorrect prediction takes
/// its automatic category, or semantic "Other". With annotations, the
/// category shares among annotated errors are scaled to the whole error
/// population.
pub fn breakdown(outcomes: &[EvalOutcome], annotations: &[AnnotationRecord]) -> Result<Breakdown, TriageError> {
    if outcomes.is_empty() {
        return Err(TriageError::Empty);
    }
    let merged = merge_annotations(annotations)?;
    let known: HashSet<&str> = outcomes.iter().map(|o| o.example_id.as_str()).collect();
    let unknown: Vec<String> = merged.keys().filter(|id| !known.contains(id.as_str())).cloned().collect();
    if !unknown.is_empty() {
        return Err(TriageError::UnknownExamples(unknown));
    }

    let total = outcomes.len();
    let gold_broken = outcomes.iter().filter(|o| o.gold_broken).count();
    let correct = outcomes.iter().filter(|o| !o.gold_broken && o.ts).count();
    let mut invalid: HashMap<ErrorKind, usize> = HashMap::new();
    for o in outcomes.iter().filter(|o| !o.gold_broken && !o.valid) {
        let kind = o
            .auto_category
            .map(|c| c.kind)
            .filter(|k| k.is_invalid())
            .unwrap_or_else(|| classify_invalid(o.invalid_reason.as_deref().unwrap_or("")).kind);
        *invalid.entry(kind).or_default() += 1;
    }

    let population = annotation_population(outcomes);
    let errors = population.len();
    let mut annotated_counts: HashMap<ErrorKind, usize> = HashMap::new();
    let mut annotated = 0;
    for o in &population {
        if let Some(kind) = merged.get(&o.example_id) {
            *annotated_counts.entry(*kind).or_default() += 1;
            annotated += 1;
        }
    }
    if merged.len() > annotated {
        log::warn!(
            "{} annotations refer to predictions outside the valid-incorrect population and are ignored",
            merged.len() - annotated
        );
    }
    let extrapolated = annotated > 0;
    let (error_counts, basis) = if extrapolated {
        (annotated_counts, annotated)
    } else {
        let mut counts: HashMap<ErrorKind, usize> = HashMap::new();
        for o in &population {
            let kind = o
                .auto_category
                .map(|c| c.kind)
                .filter(|k| k.is_annotatable())
                .unwrap_or(ErrorKind::OtherSemanticIncorrect);
            *counts.entry(kind).or_default() += 1;
        }
        (counts, errors)
    };

    let pct_of_total = |n: usize| 100.0 * n as f64 / total as f64;
    let e_pct = |kind: ErrorKind| {
        if basis == 0 {
            0.0
        } else {
            100.0 * *error_counts.get(&kind).unwrap_or(&0) as f64 / basis as f64
        }
    };
    // Estimated share of all predictions for an error category.
    let error_pct = |kind: ErrorKind| e_pct(kind) * errors as f64 / total as f64;
    let error_count = |kind: ErrorKind| *error_counts.get(&kind).unwrap_or(&0);

    let mut rows = vec![BreakdownRow {
        label: "Test-Suite Correct".into(),
        pct: pct_of_total(correct),
        e_pct: None,
        count: correct,
    }];
    for (title, group) in [("Semantic Incorrect", &SEMANTIC[..]), ("Ambiguous Correct", &AMBIGUOUS[..])] {
        rows.push(BreakdownRow {
            label: title.into(),
            pct: group.iter().map(|(k, _)| error_pct(*k)).sum(),
            e_pct: Some(group.iter().map(|(k, _)| e_pct(*k)).sum()),
            count: group.iter().map(|(k, _)| error_count(*k)).sum(),
        });
        rows.extend(group.iter().map(|(k, label)| BreakdownRow {
            label: (*label).into(),
            pct: error_pct(*k),
            e_pct: Some(e_pct(*k)),
            count: error_count(*k),
        }));
    }
    let invalid_total: usize = invalid.values().sum();
    rows.push(BreakdownRow {
        label: "Invalid SQL".into(),
        pct: pct_of_total(invalid_total),
        e_pct: None,
        count: invalid_total,
    });
    rows.extend(INVALID.iter().map(|(k, label)| {
        let n = *invalid.get(k).unwrap_or(&0);
        BreakdownRow {
            label: (*label).into(),
            pct: pct_of_total(n),
            e_pct: None,
            count: n,
        }
    }));
    rows.push(BreakdownRow {
        label: "Gold Broken".into(),
        pct: pct_of_total(gold_broken),
        e_pct: None,
        count: gold_broken,
    });

    Ok(Breakdown {
        total,
        errors,
        annotated,
        extrapolated,
        rows,
    })
}

/// Top-level rows whose % column partitions all predictions.
pub const TOP_LEVEL_ROWS: [&str; 5] = [
    "Test-Suite Correct",
    "Semantic Incorrect",
    "Ambiguous Correct",
    "Invalid SQL",
    "Gold Broken",
];
