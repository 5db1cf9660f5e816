//! Metric tables and learning curves built from outcome files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::EvalOutcome;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("run {0:?} has no evaluable outcomes")]
    Empty(String),
    #[error("no runs given")]
    NoRuns,
    #[error("runs cover different benchmarks ({0}); pass --allow-mixed to combine them")]
    MixedBenchmarks(String),
    #[error("a learning curve needs at least two distinct shot counts, got {0}")]
    TooFewPoints(usize),
    #[error("runs with {0} shots disagree; pass --average to pool them")]
    DuplicateShots(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub benchmark: String,
    pub backend: String,
    pub prompt: String,
    pub shots: usize,
    pub suite_seed: u64,
    pub suite_k: usize,
    /// Informational only; never rendered into reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl RunDescriptor {
    pub fn label(&self) -> String {
        format!("{} | {} | {}", self.benchmark, self.backend, self.prompt)
    }
}

/// `x` rounded to `digits` decimals, halves away from zero.
pub fn round_half_up(x: f64, digits: i32) -> f64 {
    let scale = 10f64.powi(digits);
    // The nudge absorbs representation error in values such as 0.15.
    (x * scale + 0.5 + 1e-9).floor() / scale
}

/// `100 * num / den` to one decimal, half up, in exact integer arithmetic.
pub fn pct1(num: usize, den: usize) -> f64 {
    if den == 0 {
        return 0.0;
    }
    let tenths = (2000 * num as u128 + den as u128) / (2 * den as u128);
    tenths as f64 / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub n_evaluated: usize,
    pub n_gold_broken: usize,
    pub n_valid: usize,
    pub n_ex: usize,
    pub n_ts: usize,
}

impl Counts {
    pub fn of(outcomes: &[EvalOutcome]) -> Counts {
        let mut c = Counts::default();
        for o in outcomes {
            if o.gold_broken {
                c.n_gold_broken += 1;
                continue;
            }
            c.n_evaluated += 1;
            c.n_valid += o.valid as usize;
            c.n_ex += o.ex as usize;
            c.n_ts += o.ts as usize;
        }
        c
    }

    fn add(&mut self, other: Counts) {
        self.n_evaluated += other.n_evaluated;
        self.n_gold_broken += other.n_gold_broken;
        self.n_valid += other.n_valid;
        self.n_ex += other.n_ex;
        self.n_ts += other.n_ts;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub run: RunDescriptor,
    pub va_pct: f64,
    pub ex_pct: f64,
    pub ts_pct: f64,
    pub n_evaluated: usize,
    pub n_gold_broken: usize,
}

impl MetricsRow {
    pub fn from_counts(run: RunDescriptor, c: Counts) -> Self {
        MetricsRow {
            run,
            va_pct: pct1(c.n_valid, c.n_evaluated),
            ex_pct: pct1(c.n_ex, c.n_evaluated),
            ts_pct: pct1(c.n_ts, c.n_evaluated),
            n_evaluated: c.n_evaluated,
            n_gold_broken: c.n_gold_broken,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

pub fn metrics_table(runs: &[(RunDescriptor, Vec<EvalOutcome>)], allow_mixed: bool) -> Result<MetricsTable, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::NoRuns);
    }
    if !allow_mixed {
        let mut names: Vec<&str> = runs.iter().map(|(d, _)| d.benchmark.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() > 1 {
            return Err(ReportError::MixedBenchmarks(names.join(", ")));
        }
    }
    let rows = runs
        .iter()
        .map(|(d, outcomes)| {
            let c = Counts::of(outcomes);
            if c.n_evaluated == 0 {
                return Err(ReportError::Empty(d.label()));
            }
            Ok(MetricsRow::from_counts(d.clone(), c))
        })
        .collect::<Result<_, _>>()?;
    Ok(MetricsTable { rows })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// Pipe table with columns padded to equal width.
pub fn markdown_table<S: AsRef<str>>(header: &[&str], rows: &[impl AsRef<[S]>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count().max(3)).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row.as_ref()) {
            *w = (*w).max(cell.as_ref().chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header.to_vec());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("| {} |\n", rule.join(" | ")));
    for row in rows {
        out.push_str(&line(row.as_ref().iter().map(AsRef::as_ref).collect()));
    }
    out
}

impl MetricsTable {
    fn multi_engine(&self) -> bool {
        self.rows.iter().any(|r| r.run.backend != self.rows[0].run.backend)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("benchmark,engine,prompt,shots,suite_k,suite_seed,va,ex,ts,n_evaluated,n_gold_broken\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.1},{:.1},{:.1},{},{}\n",
                csv_field(&r.run.benchmark),
                csv_field(&r.run.backend),
                csv_field(&r.run.prompt),
                r.run.shots,
                r.run.suite_k,
                r.run.suite_seed,
                r.va_pct,
                r.ex_pct,
                r.ts_pct,
                r.n_evaluated,
                r.n_gold_broken
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "benchmark": r.run.benchmark,
                    "engine": r.run.backend,
                    "prompt": r.run.prompt,
                    "shots": r.run.shots,
                    "suite_k": r.run.suite_k,
                    "suite_seed": r.run.suite_seed,
                    "va": r.va_pct,
                    "ex": r.ex_pct,
                    "ts": r.ts_pct,
                    "n_evaluated": r.n_evaluated,
                    "n_gold_broken": r.n_gold_broken,
                })
            })
            .collect();
        let mut s = serde_json::to_string_pretty(&rows).expect("plain values serialize");
        s.push('\n');
        s
    }

    /// Prompt/VA/EX/TS table, with a leading Engine column when runs come
    /// from more than one backend.
    pub fn to_markdown(&self) -> String {
        let engines = self.multi_engine();
        let mut header = vec!["Prompt", "VA", "EX", "TS"];
        if engines {
            header.insert(0, "Engine");
        }
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![
                    r.run.prompt.clone(),
                    format!("{:.1}", r.va_pct),
                    format!("{:.1}", r.ex_pct),
                    format!("{:.1}", r.ts_pct),
                ];
                if engines {
                    cells.insert(0, r.run.backend.clone());
                }
                cells
            })
            .collect();
        markdown_table(&header, &rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n: usize,
    pub ts_pct: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    /// Horizontal reference line, e.g. a fully supervised baseline.
    pub reference: Option<f64>,
}

fn denotation_key(outcomes: &[EvalOutcome]) -> Vec<(String, bool, bool, bool, bool)> {
    let mut key: Vec<_> = outcomes
        .iter()
        .map(|o| (o.example_id.clone(), o.gold_broken, o.valid, o.ex, o.ts))
        .collect();
    key.sort();
    key
}

pub fn learning_curve(
    runs: &[(RunDescriptor, Vec<EvalOutcome>)],
    average: bool,
    reference: Option<f64>,
) -> Result<LearningCurve, ReportError> {
    let mut by_n: BTreeMap<usize, Vec<&[EvalOutcome]>> = BTreeMap::new();
    for (d, outcomes) in runs {
        by_n.entry(d.shots).or_default().push(outcomes);
    }
    if by_n.len() < 2 {
        return Err(ReportError::TooFewPoints(by_n.len()));
    }
    let mut points = Vec::with_capacity(by_n.len());
    for (n, group) in by_n {
        let identical = group.windows(2).all(|w| denotation_key(w[0]) == denotation_key(w[1]));
        if !identical && !average {
            return Err(ReportError::DuplicateShots(n));
        }
        let used: &[&[EvalOutcome]] = if identical { &group[..1] } else { &group };
        let mut pooled = Counts::default();
        for outcomes in used {
            pooled.add(Counts::of(outcomes));
        }
        if pooled.n_evaluated == 0 {
            return Err(ReportError::Empty(format!("{n} shots")));
        }
        points.push(CurvePoint {
            n,
            ts_pct: pct1(pooled.n_ts, pooled.n_evaluated),
            runs: group.len(),
        });
    }
    Ok(LearningCurve { points, reference })
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,n,ts\n");
        for p in &self.points {
            out.push_str(&format!("curve,{},{:.1}\n", p.n, p.ts_pct));
        }
        if let Some(r) = self.reference {
            out.push_str(&format!("reference,,{:.1}\n", round_half_up(r, 1)));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain values serialize");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(prompt: &str, shots: usize) -> RunDescriptor {
        RunDescriptor {
            benchmark: "dev".into(),
            backend: "oracle".into(),
            prompt: prompt.into(),
            shots,
            suite_seed: 0,
            suite_k: 32,
            timestamp: None,
        }
    }

    fn outcome(id: usize, valid: bool, ex: bool, ts: bool) -> EvalOutcome {
        EvalOutcome {
            example_id: format!("e{id:04}"),
            valid,
            invalid_reason: None,
            ex,
            ts,
            timing_ms: 3,
            gold_broken: false,
            auto_category: None,
        }
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(pct1(1, 8), 12.5);
        assert_eq!(pct1(1, 3), 33.3);
        assert_eq!(pct1(2, 3), 66.7);
        assert_eq!(pct1(1, 16), 6.3);
        assert_eq!(pct1(1, 400), 0.3);
        assert_eq!(round_half_up(0.15, 1), 0.2);
        assert_eq!(round_half_up(85.7, 1), 85.7);
    }

    #[test]
    fn arithmetic_forced_row() {
        let outcomes = vec![
            outcome(0, true, true, true),
            outcome(1, true, true, false),
            outcome(2, true, false, false),
            outcome(3, false, false, false),
        ];
        let t = metrics_table(&[(run("Question", 0), outcomes)], false).unwrap();
        let r = &t.rows[0];
        assert_eq!((r.va_pct, r.ex_pct, r.ts_pct), (75.0, 50.0, 25.0));
        assert_eq!(
            t.to_markdown(),
            "| Prompt   | VA   | EX   | TS   |\n| -------- | ---- | ---- | ---- |\n| Question | 75.0 | 50.0 | 25.0 |\n"
        );
    }

    #[test]
    fn gold_broken_leaves_the_denominator() {
        let mut broken = outcome(1, false, false, false);
        broken.gold_broken = true;
        let t = metrics_table(&[(run("Question", 0), vec![outcome(0, true, true, true), broken])], false).unwrap();
        assert_eq!(t.rows[0].va_pct, 100.0);
        assert_eq!(t.rows[0].n_gold_broken, 1);
    }

    #[test]
    fn empty_and_mixed_runs_are_errors() {
        assert!(matches!(
            metrics_table(&[(run("Question", 0), vec![])], false),
            Err(ReportError::Empty(_))
        ));
        let mut other = run("Question", 0);
        other.benchmark = "geo".into();
        let runs = [
            (run("Question", 0), vec![outcome(0, true, true, true)]),
            (other, vec![outcome(0, true, true, true)]),
        ];
        assert!(matches!(metrics_table(&runs, false), Err(ReportError::MixedBenchmarks(_))));
        assert!(metrics_table(&runs, true).is_ok());
    }

    #[test]
    fn curve_sorted_with_reference() {
        let runs = [
            (run("f", 10), vec![outcome(0, true, true, true)]),
            (run("f", 0), vec![outcome(0, true, true, false)]),
            (run("f", 5), vec![outcome(0, true, true, true), outcome(1, true, false, false)]),
        ];
        let c = learning_curve(&runs, false, Some(85.7)).unwrap();
        assert_eq!(c.points.iter().map(|p| p.n).collect::<Vec<_>>(), vec![0, 5, 10]);
        assert_eq!(
            c.to_csv(),
            "series,n,ts\ncurve,0,0.0\ncurve,5,50.0\ncurve,10,100.0\nreference,,85.7\n"
        );
        assert_eq!(
            learning_curve(&runs[..1], false, None).unwrap_err(),
            ReportError::TooFewPoints(1)
        );
    }

    #[test]
    fn duplicate_shots_need_average() {
        let runs = [
            (run("f", 0), vec![outcome(0, true, true, true)]),
            (run("f", 0), vec![outcome(0, true, true, false)]),
            (run("f", 1), vec![outcome(0, true, true, true)]),
        ];
        assert_eq!(learning_curve(&runs, false, None).unwrap_err(), ReportError::DuplicateShots(0));
        let c = learning_curve(&runs, true, None).unwrap();
        assert_eq!(c.points[0].ts_pct, 50.0);
    }
}
