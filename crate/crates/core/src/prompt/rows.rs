//! Column-aligned rendering of sampled rows.
//!
//! Every cell is right-aligned and columns are joined by one space. A
//! column whose sampled values are all numeric reserves one extra leading
//! space in front of its header, which is how tabular dumps of numeric
//! columns line up in the reference prompts. Text renders bare and NULL
//! renders as an empty cell.

use crate::value::Value;

const FLOAT_DECIMALS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ColumnKind {
    Integer,
    Real,
    Text,
}

fn column_kind<'a>(cells: impl Iterator<Item = &'a Value>) -> ColumnKind {
    let mut kind = None;
    for v in cells {
        kind = match (kind, v) {
            (_, Value::Null) => kind,
            (None | Some(ColumnKind::Integer), Value::Integer(_)) => Some(ColumnKind::Integer),
            (None | Some(ColumnKind::Integer | ColumnKind::Real), Value::Real(_))
            | (Some(ColumnKind::Real), Value::Integer(_)) => Some(ColumnKind::Real),
            _ => return ColumnKind::Text,
        };
    }
    kind.unwrap_or(ColumnKind::Text)
}

/// Fixed six-decimal rendering with trailing zeros trimmed uniformly across
/// the column, keeping at least one decimal digit.
fn format_real_column(values: &[Option<f64>]) -> Vec<String> {
    let mut out: Vec<String> = values
        .iter()
        .map(|v| v.map_or_else(String::new, |f| format!("{f:.FLOAT_DECIMALS$}")))
        .collect();
    let trim = out
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            let frac = &s[s.find('.').map_or(s.len(), |i| i + 1)..];
            let zeros = frac.len() - frac.trim_end_matches('0').len();
            zeros.min(frac.len().saturating_sub(1))
        })
        .min()
        .unwrap_or(0);
    for s in out.iter_mut().filter(|s| !s.is_empty()) {
        s.truncate(s.len() - trim);
    }
    out
}

fn format_column(cells: &[&Value], kind: ColumnKind) -> Vec<String> {
    match kind {
        ColumnKind::Real => {
            let floats: Vec<Option<f64>> = cells
                .iter()
                .map(|v| match v {
                    Value::Integer(i) => Some(*i as f64),
                    Value::Real(r) => Some(*r),
                    _ => None,
                })
                .collect();
            format_real_column(&floats)
        }
        _ => cells.iter().map(|v| v.to_string()).collect(),
    }
}

/// Header line followed by one line per row, no trailing newline.
pub fn format_rows(header: &[String], rows: &[Vec<Value>]) -> String {
    let mut columns: Vec<Vec<String>> = Vec::with_capacity(header.len());
    let mut widths = Vec::with_capacity(header.len());
    for (c, name) in header.iter().enumerate() {
        let cells: Vec<&Value> = rows.iter().map(|r| &r[c]).collect();
        let kind = column_kind(cells.iter().copied());
        let rendered = format_column(&cells, kind);
        let header_width = name.chars().count() + usize::from(kind != ColumnKind::Text);
        let width = rendered
            .iter()
            .map(|s| s.chars().count())
            .fold(header_width, usize::max);
        widths.push(width);
        columns.push(rendered);
    }

    let line = |cells: &mut dyn Iterator<Item = &str>| -> String {
        cells
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:>w$}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut lines = Vec::with_capacity(rows.len() + 1);
    lines.push(line(&mut header.iter().map(String::as_str)));
    for r in 0..rows.len() {
        lines.push(line(&mut columns.iter().map(|col| col[r].as_str())));
    }
    lines.join("\n")
}
