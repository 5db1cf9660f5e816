use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use textsql_core::artifact::{manifest_path, read_jsonl, write_jsonl, Manifest, CODE_VERSION};
use textsql_core::backend::{build_backend, strip_select_prefix, AndOrMutation, CompletionBackend, CompletionRequest, Prediction};
use textsql_core::dataset::{load_benchmark, select_support, Benchmark, SupportSet};
use textsql_core::eval::{evaluate_all, EvalItem, EvalOutcome, SuiteCache, SuiteOrigin};
use textsql_core::fixtures;
use textsql_core::prompt::{PromptError, Renderer};
use textsql_core::report::{learning_curve, metrics_table, Counts, MetricsRow, RunDescriptor};
use textsql_core::schema::{introspect, sample_all, DatabaseSchema, RowSample};
use textsql_core::triage::{annotation_skeleton, breakdown, merge_annotations, sample_for_annotation, AnnotationRecord};

use crate::config::{Overrides, RunConfig};
use crate::Format;

/// Commands return the number of per-example hard errors.
type Outcome = Result<usize>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptRecord {
    pub example_id: String,
    pub db_id: String,
    pub prompt: String,
    pub est_tokens: usize,
    pub n_support: usize,
}

fn manifest(cfg: &RunConfig, artifact: &str) -> Manifest {
    Manifest {
        artifact: artifact.into(),
        code_version: CODE_VERSION.into(),
        config_hash: cfg.config_hash(),
        prompt_hash: cfg.prompt_hash(),
        seeds: BTreeMap::from([("seed".into(), cfg.seed), ("suite_seed".into(), cfg.suite_seed)]),
        config: serde_json::to_value(cfg).expect("config serializes"),
    }
}

/// Loads an upstream artifact's manifest and checks it was produced for the
/// same prompts as the current configuration.
fn check_upstream(cfg: &RunConfig, path: &Path, expected: &str) -> Result<Manifest> {
    let m = Manifest::read_for(path)?;
    if m.artifact != expected {
        bail!("{} holds {}, expected {expected}", path.display(), m.artifact);
    }
    if m.prompt_hash != cfg.prompt_hash() {
        bail!(
            "{} was produced for different prompts (manifest {} vs configuration {}); \
             rerun the earlier stages or pass the matching --config",
            path.display(),
            &m.prompt_hash[..12],
            &cfg.prompt_hash()[..12]
        );
    }
    Ok(m)
}

fn load_bench(cfg: &RunConfig) -> Result<Benchmark> {
    let bench = load_benchmark(&cfg.benchmark, &cfg.db_root)?;
    for w in &bench.warnings {
        log::warn!("{w}");
    }
    Ok(bench)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn demo_data(out: &Path) -> Outcome {
    let layout = fixtures::materialize(out)?;
    let dev = load_benchmark(&layout.benchmark("dev.json"), &layout.db_root)?;
    let request = CompletionRequest::greedy("");
    let mut oracle = Vec::new();
    let mut mutated = Vec::new();
    for e in &dev.examples {
        oracle.push(serde_json::json!({"example_id": e.example_id, "completion": strip_select_prefix(&e.gold_sql)}));
        mutated.push(serde_json::json!({"example_id": e.example_id, "completion": AndOrMutation.complete(e, &request)?}));
    }
    write_jsonl(&out.join("replay_oracle.jsonl"), &oracle)?;
    write_jsonl(&out.join("replay_mutate.jsonl"), &mutated)?;
    println!("demo data written to {}", out.display());
    Ok(0)
}

struct DbContext {
    schema: DatabaseSchema,
    samples: Vec<RowSample>,
}

pub fn prompt(o: &Overrides, out: Option<PathBuf>, support_out: Option<PathBuf>) -> Outcome {
    let cfg = RunConfig::load(o)?;
    let out = out.unwrap_or_else(|| cfg.out_dir.join("prompts.jsonl"));
    let bench = load_bench(&cfg)?;
    let style = cfg.style()?;
    let renderer = Renderer::new(cfg.budget()?);
    let support = match &cfg.train {
        Some(train) if cfg.shots > 0 => {
            let train = load_benchmark(train, &cfg.db_root)?;
            let s = select_support(&train, cfg.shots, cfg.seed);
            if s.len() < cfg.shots {
                log::warn!("training split has only {} templates; using {} support pairs", s.len(), s.len());
            }
            Some(s)
        }
        _ => None,
    };
    if let (Some(path), Some(s)) = (&support_out, &support) {
        write_text(Some(path), &(serde_json::to_string_pretty(&s.export())? + "\n"))?;
    }

    let mut contexts: HashMap<String, Result<DbContext, String>> = HashMap::new();
    for e in &bench.examples {
        contexts.entry(e.db_id.clone()).or_insert_with(|| {
            let db = bench.db_path(&e.db_id);
            let schema = introspect(&db).map_err(|err| err.to_string())?;
            let samples = match style.rows() {
                Some(x) => sample_all(&db, &schema, x).map_err(|err| err.to_string())?,
                None => Vec::new(),
            };
            Ok(DbContext { schema, samples })
        });
    }

    let rendered: Vec<Result<Option<PromptRecord>, String>> = bench
        .examples
        .par_iter()
        .map(|e| {
            let ctx = contexts[&e.db_id].as_ref().map_err(|err| format!("{}: {err}", e.example_id))?;
            let fail = |err: PromptError| format!("{}: {err}", e.example_id);
            let (p, n_support) = match &support {
                Some(s) => match renderer.fit_support(&style, &ctx.schema, &ctx.samples, &e.question, s) {
                    Ok(r) => r,
                    Err(err @ PromptError::OverBudget { .. }) => {
                        log::warn!("{}: skipped, {err}", e.example_id);
                        return Ok(None);
                    }
                    Err(err) => return Err(fail(err)),
                },
                None => {
                    let p = renderer
                        .render(&style, &ctx.schema, &ctx.samples, &e.question, None::<&SupportSet>)
                        .map_err(fail)?;
                    if !p.fits_budget {
                        log::warn!(
                            "{}: skipped, prompt needs {} tokens but the budget allows {}",
                            e.example_id,
                            p.est_tokens,
                            renderer.budget.prompt_allowance()
                        );
                        return Ok(None);
                    }
                    (p, 0)
                }
            };
            if support.as_ref().is_some_and(|s| n_support < s.len()) {
                log::info!("{}: kept {n_support} support pairs within budget", e.example_id);
            }
            Ok(Some(PromptRecord {
                example_id: e.example_id.clone(),
                db_id: e.db_id.clone(),
                prompt: p.text,
                est_tokens: p.est_tokens,
                n_support,
            }))
        })
        .collect();

    let mut records = Vec::new();
    let (mut errors, mut skipped) = (0, 0);
    for r in rendered {
        match r {
            Ok(Some(rec)) => records.push(rec),
            Ok(None) => skipped += 1,
            Err(msg) => {
                log::error!("{msg}");
                errors += 1;
            }
        }
    }
    write_jsonl(&out, &records)?;
    manifest(&cfg, "prompts").write_for(&out)?;
    println!(
        "{} prompts written to {} ({skipped} over budget, {errors} failed)",
        records.len(),
        out.display()
    );
    Ok(errors)
}

pub fn predict(o: &Overrides, prompts: Option<PathBuf>, out: Option<PathBuf>, sql_out: Option<PathBuf>) -> Outcome {
    let cfg = RunConfig::load(o)?;
    let prompts = prompts.unwrap_or_else(|| cfg.out_dir.join("prompts.jsonl"));
    let out = out.unwrap_or_else(|| cfg.out_dir.join("predictions.jsonl"));
    check_upstream(&cfg, &prompts, "prompts")?;
    let records: Vec<PromptRecord> = read_jsonl(&prompts)?;
    let bench = load_bench(&cfg)?;
    let backend = build_backend(&cfg.backend_kind()?, &cfg.http())?;
    let threads = backend.max_in_flight().min(cfg.jobs.max(1));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let results: Vec<Result<Prediction, String>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                let example = bench
                    .get(&r.example_id)
                    .ok_or_else(|| format!("{}: not in {}", r.example_id, cfg.benchmark.display()))?;
                let request = CompletionRequest {
                    prompt: r.prompt.clone(),
                    max_tokens: cfg.max_tokens,
                    temperature: cfg.temperature,
                    ..CompletionRequest::greedy("")
                };
                let raw = backend
                    .complete(example, &request)
                    .map_err(|e| format!("{}: {e}", r.example_id))?;
                Ok(Prediction::from_completion(&r.example_id, raw, &request.stop))
            })
            .collect()
    });
    let mut predictions = Vec::new();
    let mut errors = 0;
    for r in results {
        match r {
            Ok(p) => {
                if p.is_empty() {
                    log::warn!("{}: empty completion", p.example_id);
                }
                predictions.push(p);
            }
            Err(msg) => {
                log::error!("{msg}");
                errors += 1;
            }
        }
    }
    write_jsonl(&out, &predictions)?;
    manifest(&cfg, "predictions").write_for(&out)?;
    if let Some(path) = sql_out {
        let text: String = predictions.iter().map(|p| format!("{}\n", p.sql)).collect();
        write_text(Some(&path), &text)?;
    }
    println!(
        "{} predictions from {} written to {}",
        predictions.len(),
        backend.label(),
        out.display()
    );
    Ok(errors)
}

fn summary(row: &MetricsRow) -> String {
    format!(
        "VA {:.1}  EX {:.1}  TS {:.1}  ({} evaluated, {} gold broken)",
        row.va_pct, row.ex_pct, row.ts_pct, row.n_evaluated, row.n_gold_broken
    )
}

pub fn eval(o: &Overrides, predictions: Option<PathBuf>, out: Option<PathBuf>) -> Outcome {
    let cfg = RunConfig::load(o)?;
    let predictions = predictions.unwrap_or_else(|| cfg.out_dir.join("predictions.jsonl"));
    let out = out.unwrap_or_else(|| cfg.out_dir.join("outcomes.jsonl"));
    let upstream = check_upstream(&cfg, &predictions, "predictions")?;
    if upstream.config.get("backend") != Some(&serde_json::Value::String(cfg.backend.clone())) {
        log::warn!("predictions came from a different backend than the current configuration names");
    }
    let preds: Vec<Prediction> = read_jsonl(&predictions)?;
    let bench = load_bench(&cfg)?;
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.example_id.as_str(), p)).collect();

    let mut errors = 0;
    let mut items = Vec::new();
    for e in &bench.examples {
        let db_file = bench.db_path(&e.db_id);
        match by_id.get(e.example_id.as_str()) {
            None => {
                log::error!("{}: no prediction", e.example_id);
                errors += 1;
            }
            Some(_) if !db_file.is_file() => {
                log::error!("{}: database {} not found", e.example_id, db_file.display());
                errors += 1;
            }
            Some(p) => items.push(EvalItem {
                example: e,
                prediction: p,
                db_file,
            }),
        }
    }

    let cache = SuiteCache::new(&cfg.cache_dir, cfg.suite_k, cfg.suite_seed);
    let db_ids: BTreeSet<&str> = items.iter().map(|i| i.example.db_id.as_str()).collect();
    for db_id in db_ids {
        let (suite, origin) = cache.get(db_id, &bench.db_path(db_id))?;
        match origin {
            SuiteOrigin::Cached => log::info!("{db_id}: reusing cached suite ({} variants)", suite.k),
            SuiteOrigin::Generated => log::info!("{db_id}: generated suite ({} variants)", suite.k),
        }
    }
    let outcomes = evaluate_all(&items, &cache, &cfg.eval_options(), cfg.jobs)?;
    write_jsonl(&out, &outcomes)?;
    manifest(&cfg, "outcomes").write_for(&out)?;
    if Counts::of(&outcomes).n_evaluated > 0 {
        let row = MetricsRow::from_counts(cfg.descriptor(), Counts::of(&outcomes));
        println!("{}", summary(&row));
    }
    println!("{} outcomes written to {}", outcomes.len(), out.display());
    Ok(errors)
}

pub fn suite(o: &Overrides, only: &[String]) -> Outcome {
    let cfg = RunConfig::load(o)?;
    let bench = load_bench(&cfg)?;
    let cache = SuiteCache::new(&cfg.cache_dir, cfg.suite_k, cfg.suite_seed);
    let db_ids: BTreeSet<&str> = bench
        .examples
        .iter()
        .map(|e| e.db_id.as_str())
        .filter(|id| only.is_empty() || only.iter().any(|o| o == id))
        .collect();
    let mut errors = 0;
    for db_id in db_ids {
        match cache.get(db_id, &bench.db_path(db_id)) {
            Ok((_, origin)) => println!(
                "{db_id}: {} {}",
                if origin == SuiteOrigin::Cached { "cached" } else { "generated" },
                cache.dir(db_id).display()
            ),
            Err(e) => {
                log::error!("{db_id}: {e}");
                errors += 1;
            }
        }
    }
    Ok(errors)
}

fn expand_runs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for pattern in patterns {
        let mut matched: Vec<PathBuf> = glob::glob(pattern)
            .with_context(|| format!("bad pattern {pattern:?}"))?
            .filter_map(Result::ok)
            .filter(|p| !p.to_string_lossy().ends_with(".manifest.json"))
            .collect();
        if matched.is_empty() {
            bail!("no outcome files match {pattern:?}");
        }
        matched.sort();
        files.extend(matched);
    }
    Ok(files)
}

fn load_runs(patterns: &[String]) -> Result<Vec<(RunDescriptor, Vec<EvalOutcome>)>> {
    expand_runs(patterns)?
        .into_iter()
        .map(|path| {
            let m = Manifest::read_for(&path)
                .with_context(|| format!("{} needs {}", path.display(), manifest_path(&path).display()))?;
            let cfg: RunConfig = serde_json::from_value(m.config)
                .with_context(|| format!("configuration in {}", manifest_path(&path).display()))?;
            let outcomes: Vec<EvalOutcome> = read_jsonl(&path)?;
            Ok((cfg.descriptor(), outcomes))
        })
        .collect()
}

pub fn report_metrics(runs: &[String], format: Format, out: Option<PathBuf>, allow_mixed: bool) -> Outcome {
    let table = metrics_table(&load_runs(runs)?, allow_mixed)?;
    let text = match format {
        Format::Md => table.to_markdown(),
        Format::Csv => table.to_csv(),
        Format::Json => table.to_json(),
    };
    write_text(out.as_deref(), &text)?;
    Ok(0)
}

pub fn report_curve(runs: &[String], out: &Path, average: bool, reference: Option<f64>) -> Outcome {
    let curve = learning_curve(&load_runs(runs)?, average, reference)?;
    let text = if out.extension().is_some_and(|e| e == "json") {
        curve.to_json()
    } else {
        curve.to_csv()
    };
    write_text(Some(out), &text)?;
    println!("{} points written to {}", curve.points.len(), out.display());
    Ok(0)
}

pub fn annotate_sample(outcomes: &Path, n: usize, seed: u64, out: &Path) -> Outcome {
    let outcomes: Vec<EvalOutcome> = read_jsonl(outcomes)?;
    let ids = sample_for_annotation(&outcomes, n, seed);
    write_jsonl(out, &annotation_skeleton(&outcomes, &ids))?;
    println!("{} examples to annotate written to {}", ids.len(), out.display());
    Ok(0)
}

fn read_annotations(paths: &[PathBuf]) -> Result<Vec<AnnotationRecord>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_jsonl::<AnnotationRecord>(p)?);
    }
    Ok(all)
}

pub fn annotate_merge(paths: &[PathBuf], out: &Path) -> Outcome {
    let merged = merge_annotations(&read_annotations(paths)?)?;
    let notes: HashMap<String, String> = read_annotations(paths)?
        .into_iter()
        .filter(|r| r.category.is_some() && !r.note.is_empty())
        .map(|r| (r.example_id, r.note))
        .collect();
    let records: Vec<AnnotationRecord> = merged
        .into_iter()
        .map(|(id, kind)| AnnotationRecord {
            note: notes.get(&id).cloned().unwrap_or_default(),
            example_id: id,
            category: Some(kind),
        })
        .collect();
    write_jsonl(out, &records)?;
    println!("{} annotations written to {}", records.len(), out.display());
    Ok(0)
}

pub fn annotate_breakdown(outcomes: &Path, annotations: &[PathBuf], format: Format, out: Option<PathBuf>) -> Outcome {
    let outcomes: Vec<EvalOutcome> = read_jsonl(outcomes)?;
    let b = breakdown(&outcomes, &read_annotations(annotations)?)?;
    let text = match format {
        Format::Md => b.to_markdown(),
        Format::Csv => b.to_csv(),
        Format::Json => serde_json::to_string_pretty(&b)? + "\n",
    };
    write_text(out.as_deref(), &text)?;
    Ok(0)
}
