//! Prompt serialization in the six supported styles, token budgeting and
//! few-shot fitting.

mod rows;
mod tokens;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SupportSet;
use crate::schema::{DatabaseSchema, RowSample};

pub use rows::format_rows;
pub use tokens::{estimate_tokens, word_pieces, HeuristicCounter, TokenCounter, DEFAULT_INFLATION};

pub const INSTRUCTION: &str = "Using valid SQLite, answer the following questions.";
pub const INSTRUCTION_WITH_TABLES: &str =
    "Using valid SQLite, answer the following questions for the tables provided above.";
const API_DOCS_HEADER: &str = "### SQLite SQL tables, with their properties:";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("invalid prompt style {0:?}")]
    InvalidStyle(String),
    #[error("style {0} needs row samples")]
    MissingSamples(String),
    #[error("style {0} does not take row samples")]
    UnexpectedSamples(String),
    #[error("no row sample for table {0}")]
    MissingTableSample(String),
    #[error("few-shot style needs a support set")]
    MissingSupport,
    #[error("style {0} does not take a support set")]
    UnexpectedSupport(String),
    #[error("prompt needs {needed} tokens but the budget allows {allowed}")]
    OverBudget { needed: usize, allowed: usize },
    #[error("completion reserve {reserve} must be smaller than the context window {context}")]
    BadBudget { context: usize, reserve: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptStyle {
    Question,
    ApiDocs,
    SelectX(usize),
    CreateTable,
    CreateTableSelectX(usize),
    /// Support pairs appended to a zero-shot base style.
    FewShot(Box<PromptStyle>),
}

impl PromptStyle {
    pub fn few_shot(base: PromptStyle) -> Result<Self, PromptError> {
        if matches!(base, PromptStyle::FewShot(_)) {
            return Err(PromptError::InvalidStyle("few-shot of few-shot".into()));
        }
        Ok(PromptStyle::FewShot(Box::new(base)))
    }

    /// Number of sample rows per table, if the style shows rows.
    pub fn rows(&self) -> Option<usize> {
        match self {
            PromptStyle::SelectX(x) | PromptStyle::CreateTableSelectX(x) => Some(*x),
            PromptStyle::FewShot(base) => base.rows(),
            _ => None,
        }
    }

    pub fn base(&self) -> &PromptStyle {
        match self {
            PromptStyle::FewShot(base) => base,
            other => other,
        }
    }

    pub fn is_few_shot(&self) -> bool {
        matches!(self, PromptStyle::FewShot(_))
    }

    /// Flag form accepted by `FromStr`, without the shot count.
    pub fn flag(&self) -> String {
        match self.base() {
            PromptStyle::Question => "question".into(),
            PromptStyle::ApiDocs => "apidocs".into(),
            PromptStyle::SelectX(x) => format!("select:{x}"),
            PromptStyle::CreateTable => "create".into(),
            PromptStyle::CreateTableSelectX(x) => format!("create+select:{x}"),
            PromptStyle::FewShot(_) => unreachable!("nested few-shot"),
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptStyle::Question => f.write_str("Question"),
            PromptStyle::ApiDocs => f.write_str("API Docs"),
            PromptStyle::SelectX(x) => write!(f, "Select {x}"),
            PromptStyle::CreateTable => f.write_str("Create Table"),
            PromptStyle::CreateTableSelectX(x) => write!(f, "Create Table + Select {x}"),
            PromptStyle::FewShot(base) => write!(f, "Few-shot {base}"),
        }
    }
}

impl FromStr for PromptStyle {
    type Err = PromptError;

    /// `question | apidocs | select:<X> | create | create+select:<X>`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PromptError::InvalidStyle(s.to_owned());
        let rows = |x: &str| match x.parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(bad()),
        };
        match s.trim().to_ascii_lowercase().as_str() {
            "question" => Ok(PromptStyle::Question),
            "apidocs" | "api-docs" => Ok(PromptStyle::ApiDocs),
            "create" => Ok(PromptStyle::CreateTable),
            other => {
                if let Some(x) = other.strip_prefix("create+select:") {
                    Ok(PromptStyle::CreateTableSelectX(rows(x)?))
                } else if let Some(x) = other.strip_prefix("select:") {
                    Ok(PromptStyle::SelectX(rows(x)?))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    pub context_tokens: usize,
    pub completion_reserve: usize,
}

impl PromptBudget {
    pub fn new(context_tokens: usize, completion_reserve: usize) -> Result<Self, PromptError> {
        if completion_reserve >= context_tokens {
            return Err(PromptError::BadBudget {
                context: context_tokens,
                reserve: completion_reserve,
            });
        }
        Ok(PromptBudget {
            context_tokens,
            completion_reserve,
        })
    }

    /// Tokens left for the prompt itself.
    pub fn prompt_allowance(&self) -> usize {
        self.context_tokens - self.completion_reserve
    }
}

impl Default for PromptBudget {
    fn default() -> Self {
        PromptBudget {
            context_tokens: 4096,
            completion_reserve: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub est_tokens: usize,
    pub fits_budget: bool,
}

/// Renders prompts and measures them against a budget.
pub struct Renderer {
    pub budget: PromptBudget,
    pub counter: Box<dyn TokenCounter>,
}

impl Default for Renderer {
    fn default() -> Self {
        Renderer {
            budget: PromptBudget::default(),
            counter: Box::new(HeuristicCounter::default()),
        }
    }
}

impl Renderer {
    pub fn new(budget: PromptBudget) -> Self {
        Renderer {
            budget,
            ..Renderer::default()
        }
    }

    pub fn measure(&self, text: String) -> RenderedPrompt {
        let est_tokens = self.counter.count(&text);
        RenderedPrompt {
            fits_budget: est_tokens <= self.budget.prompt_allowance(),
            est_tokens,
            text,
        }
    }

    pub fn render(
        &self,
        style: &PromptStyle,
        schema: &DatabaseSchema,
        samples: &[RowSample],
        question: &str,
        support: Option<&SupportSet>,
    ) -> Result<RenderedPrompt, PromptError> {
        render_text(style, schema, samples, question, support).map(|t| self.measure(t))
    }

    /// Renders with the longest prefix of `support` that fits the budget and
    /// returns the prompt together with the number of support pairs kept.
    /// Pairs are dropped from the least frequent template end.
    pub fn fit_support(
        &self,
        style: &PromptStyle,
        schema: &DatabaseSchema,
        samples: &[RowSample],
        question: &str,
        support: &SupportSet,
    ) -> Result<(RenderedPrompt, usize), PromptError> {
        let fits = |k: usize| -> Result<RenderedPrompt, PromptError> {
            self.render(style, schema, samples, question, Some(&support.prefix(k)))
        };
        // Prompt length grows with every added pair, so the fitting
        // prefixes form a contiguous range starting at zero.
        let empty = fits(0)?;
        if !empty.fits_budget {
            return Err(PromptError::OverBudget {
                needed: empty.est_tokens,
                allowed: self.budget.prompt_allowance(),
            });
        }
        let (mut lo, mut hi) = (0usize, support.len());
        let mut best = empty;
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            let candidate = fits(mid)?;
            if candidate.fits_budget {
                lo = mid;
                best = candidate;
            } else {
                hi = mid - 1;
            }
        }
        Ok((best, lo))
    }
}

/// Renders with the default 4096-token budget and heuristic token counter.
pub fn render_prompt(
    style: &PromptStyle,
    schema: &DatabaseSchema,
    samples: &[RowSample],
    question: &str,
    support: Option<&SupportSet>,
) -> Result<RenderedPrompt, PromptError> {
    Renderer::default().render(style, schema, samples, question, support)
}

fn sample_for<'a>(samples: &'a [RowSample], table: &str) -> Result<&'a RowSample, PromptError> {
    samples
        .iter()
        .find(|s| s.table.eq_ignore_ascii_case(table))
        .ok_or_else(|| PromptError::MissingTableSample(table.to_owned()))
}

fn select_block(x: usize, sample: &RowSample, table: &str) -> String {
    format!(
        "/*\n{x} example rows from table {table}:\nSELECT * FROM {table} LIMIT {x};\nTable: {table}\n{}\n*/",
        format_rows(&sample.header, &sample.rows)
    )
}

fn create_select_block(x: usize, sample: &RowSample, table: &str, create_sql: &str) -> String {
    format!(
        "{create_sql}\n/*\n{x} example rows:\nSELECT * FROM {table} LIMIT {x};\n{}\n*/",
        format_rows(&sample.header, &sample.rows)
    )
}

/// Strips trailing semicolons and whitespace, then terminates with " ;".
fn support_sql(gold: &str) -> String {
    let body = gold.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace());
    format!("{body} ;")
}

/// The schema portion of a style, before any question text.
fn schema_section(
    style: &PromptStyle,
    schema: &DatabaseSchema,
    samples: &[RowSample],
) -> Result<Option<String>, PromptError> {
    let blocks: Vec<String> = match style {
        PromptStyle::Question => return Ok(None),
        PromptStyle::ApiDocs => {
            let mut s = format!("{API_DOCS_HEADER}\n#\n");
            for t in &schema.tables {
                let cols: Vec<&str> = t.columns.iter().map(|c| c.name.as_str()).collect();
                s.push_str(&format!("# {}({})\n", t.name, cols.join(", ")));
            }
            s.push('#');
            return Ok(Some(s));
        }
        PromptStyle::SelectX(x) => schema
            .tables
            .iter()
            .map(|t| Ok(select_block(*x, sample_for(samples, &t.name)?, &t.name)))
            .collect::<Result<_, PromptError>>()?,
        PromptStyle::CreateTable => schema.tables.iter().map(|t| t.create_sql.clone()).collect(),
        PromptStyle::CreateTableSelectX(x) => schema
            .tables
            .iter()
            .map(|t| {
                Ok(create_select_block(
                    *x,
                    sample_for(samples, &t.name)?,
                    &t.name,
                    &t.create_sql,
                ))
            })
            .collect::<Result<_, PromptError>>()?,
        PromptStyle::FewShot(_) => unreachable!("schema_section takes a base style"),
    };
    Ok(Some(blocks.join("\n\n")))
}

pub fn render_text(
    style: &PromptStyle,
    schema: &DatabaseSchema,
    samples: &[RowSample],
    question: &str,
    support: Option<&SupportSet>,
) -> Result<String, PromptError> {
    let base = style.base();
    if matches!(base, PromptStyle::FewShot(_)) {
        return Err(PromptError::InvalidStyle("few-shot of few-shot".into()));
    }
    match (base.rows().is_some(), samples.is_empty()) {
        (true, true) => return Err(PromptError::MissingSamples(style.to_string())),
        (false, false) => return Err(PromptError::UnexpectedSamples(style.to_string())),
        _ => {}
    }
    let support = match (style.is_few_shot(), support) {
        (true, None) => return Err(PromptError::MissingSupport),
        (false, Some(_)) => return Err(PromptError::UnexpectedSupport(style.to_string())),
        (_, s) => s,
    };

    let section = schema_section(base, schema, samples)?;
    let marker = if *base == PromptStyle::ApiDocs { "###" } else { "--" };
    let mut text = String::new();
    match (&section, base) {
        (None, _) => text.push_str(&format!("-- {INSTRUCTION}\n")),
        (Some(s), PromptStyle::ApiDocs) => {
            text.push_str(s);
            text.push('\n');
        }
        (Some(s), _) if support.is_some() => {
            text.push_str(s);
            text.push_str(&format!("\n\n-- {INSTRUCTION_WITH_TABLES}\n"));
        }
        (Some(s), _) => {
            text.push_str(s);
            text.push_str(&format!("\n\n\n-- {INSTRUCTION_WITH_TABLES}\n"));
        }
    }
    match support {
        Some(set) => {
            for ex in &set.examples {
                text.push_str(&format!("{marker} {}\n{}\n\n", ex.question, support_sql(&ex.gold_sql)));
            }
        }
        // Zero-shot styles leave a blank line between the instruction and
        // the question, except API Docs which has no instruction line.
        None if *base != PromptStyle::ApiDocs => text.push('\n'),
        None => {}
    }
    text.push_str(&format!("{marker} {question}\nSELECT"));
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ExampleRecord;
    use crate::schema::{ColumnSchema, TableSchema};
    use crate::value::Value;

    fn tiny_schema() -> DatabaseSchema {
        DatabaseSchema {
            tables: vec![TableSchema {
                name: "t".into(),
                columns: vec![ColumnSchema {
                    name: "a".into(),
                    declared_type: "int".into(),
                    is_primary_key: false,
                    not_null: false,
                }],
                foreign_keys: vec![],
                create_sql: "CREATE TABLE t (a int)".into(),
            }],
            warnings: vec![],
        }
    }

    fn tiny_sample() -> Vec<RowSample> {
        vec![RowSample {
            table: "t".into(),
            limit: 1,
            header: vec!["a".into()],
            rows: vec![vec![Value::Integer(1)]],
        }]
    }

    fn support(n: usize) -> SupportSet {
        let mut s = SupportSet::empty(0);
        s.n = n;
        for i in 0..n {
            s.examples.push(ExampleRecord {
                example_id: format!("s{i}"),
                db_id: "t".into(),
                question: format!("question number {i}"),
                gold_sql: format!("SELECT a FROM t WHERE a = {i};"),
                template_id: None,
            });
            s.templates.push(format!("T{i}"));
        }
        s
    }

    #[test]
    fn style_flags_round_trip() {
        for flag in ["question", "apidocs", "select:3", "create", "create+select:5"] {
            assert_eq!(flag.parse::<PromptStyle>().unwrap().flag(), flag);
        }
        assert!("select:0".parse::<PromptStyle>().is_err());
        assert!("rows".parse::<PromptStyle>().is_err());
    }

    #[test]
    fn contract_errors() {
        let schema = tiny_schema();
        let e = render_text(&PromptStyle::SelectX(1), &schema, &[], "q", None);
        assert!(matches!(e, Err(PromptError::MissingSamples(_))));
        let e = render_text(&PromptStyle::CreateTable, &schema, &tiny_sample(), "q", None);
        assert!(matches!(e, Err(PromptError::UnexpectedSamples(_))));
        let fs = PromptStyle::few_shot(PromptStyle::CreateTable).unwrap();
        let e = render_text(&fs, &schema, &[], "q", None);
        assert_eq!(e, Err(PromptError::MissingSupport));
        let e = render_text(&PromptStyle::CreateTable, &schema, &[], "q", Some(&support(1)));
        assert!(matches!(e, Err(PromptError::UnexpectedSupport(_))));
    }

    #[test]
    fn support_pairs_are_terminated_with_space_semicolon() {
        let fs = PromptStyle::few_shot(PromptStyle::CreateTable).unwrap();
        let text = render_text(&fs, &tiny_schema(), &[], "final?", Some(&support(2))).unwrap();
        assert_eq!(
            text,
            "CREATE TABLE t (a int)\n\n-- Using valid SQLite, answer the following questions for the tables provided above.\n\
             -- question number 0\nSELECT a FROM t WHERE a = 0 ;\n\n\
             -- question number 1\nSELECT a FROM t WHERE a = 1 ;\n\n\
             -- final?\nSELECT"
        );
    }

    #[test]
    fn fit_support_keeps_longest_prefix() {
        let fs = PromptStyle::few_shot(PromptStyle::CreateTable).unwrap();
        let schema = tiny_schema();
        let set = support(10);
        let generous = Renderer::new(PromptBudget::new(100_000, 200).unwrap());
        let (_, kept) = generous.fit_support(&fs, &schema, &[], "q", &set).unwrap();
        assert_eq!(kept, 10);

        let zero_len = generous.render(&fs, &schema, &[], "q", Some(&set.prefix(0))).unwrap().est_tokens;
        let tight = Renderer::new(PromptBudget::new(zero_len + 200, 200).unwrap());
        let (p, kept) = tight.fit_support(&fs, &schema, &[], "q", &set).unwrap();
        assert_eq!(kept, 0);
        assert!(p.text.ends_with("-- q\nSELECT"));

        let too_tight = Renderer::new(PromptBudget::new(zero_len + 199, 200).unwrap());
        assert!(matches!(
            too_tight.fit_support(&fs, &schema, &[], "q", &set),
            Err(PromptError::OverBudget { .. })
        ));
    }

    #[test]
    fn budget_rejects_reserve_above_window() {
        assert!(PromptBudget::new(200, 200).is_err());
        assert_eq!(PromptBudget::new(2048, 200).unwrap().prompt_allowance(), 1848);
    }
}
