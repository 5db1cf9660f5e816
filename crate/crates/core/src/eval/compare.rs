use std::cmp::Ordering;

use super::exec::ExecResult;
use crate::value::Value;

fn row_cmp(a: &[Value], b: &[Value]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

pub fn rows_eq(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.cell_eq(y))
}

/// Denotation equality. Sequence equality when the gold query orders its
/// output, multiset equality otherwise. Column names are ignored.
pub fn compare_results(gold: &ExecResult, pred: &ExecResult) -> bool {
    compare_rows(&gold.rows, &pred.rows, gold.arity(), pred.arity(), gold.order_sensitive)
}

pub fn compare_rows(
    gold: &[Vec<Value>],
    pred: &[Vec<Value>],
    gold_arity: usize,
    pred_arity: usize,
    ordered: bool,
) -> bool {
    if gold_arity != pred_arity || gold.len() != pred.len() {
        return false;
    }
    if ordered {
        return gold.iter().zip(pred).all(|(g, p)| rows_eq(g, p));
    }
    let mut g: Vec<&Vec<Value>> = gold.iter().collect();
    let mut p: Vec<&Vec<Value>> = pred.iter().collect();
    g.sort_by(|a, b| row_cmp(a, b));
    p.sort_by(|a, b| row_cmp(a, b));
    g.iter().zip(&p).all(|(a, b)| rows_eq(a, b))
}
