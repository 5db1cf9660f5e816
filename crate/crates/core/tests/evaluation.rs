use std::path::Path;
use std::time::Duration;

use rusqlite::Connection;
use textsql_core::backend::{AndOrMutation, CompletionBackend, CompletionRequest, Prediction};
use textsql_core::dataset::load_benchmark;
use textsql_core::eval::suite::{load_or_build, SourceData};
use textsql_core::eval::{
    build_test_suite, evaluate, execute_sql, EvalOptions, SuiteCache, SuiteOrigin,
};
use textsql_core::fixtures;

const T: Duration = Duration::from_secs(5);

fn fixture_db(dir: &Path, db_id: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{db_id}.sqlite"));
    fixtures::create_database(db_id, &path).unwrap();
    path
}

fn dump(path: &Path) -> Vec<String> {
    let conn = Connection::open(path).unwrap();
    let src = SourceData::load(&conn).unwrap();
    src.rows
        .iter()
        .zip(&src.schema.tables)
        .map(|(rows, t)| format!("{}: {:?}", t.name, rows))
        .collect()
}

#[test]
fn same_seed_gives_identical_variants() {
    let dir = tempfile::tempdir().unwrap();
    let db = fixture_db(dir.path(), "network_1");
    let a = build_test_suite(&db, 2, 11, &dir.path().join("a")).unwrap();
    let b = build_test_suite(&db, 2, 11, &dir.path().join("b")).unwrap();
    for (x, y) in a.variants[1..].iter().zip(&b.variants[1..]) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let c = build_test_suite(&db, 2, 12, &dir.path().join("c")).unwrap();
    assert_ne!(dump(&a.variants[1]), dump(&c.variants[1]));
}

#[test]
fn friends_reference_existing_students() {
    let dir = tempfile::tempdir().unwrap();
    let db = fixture_db(dir.path(), "network_1");
    let suite = build_test_suite(&db, 8, 3, &dir.path().join("s")).unwrap();
    for v in &suite.variants[1..] {
        let dangling = execute_sql(
            v,
            "SELECT count(*) FROM Friend WHERE student_id NOT IN (SELECT ID FROM Highschooler) \
             OR friend_id NOT IN (SELECT ID FROM Highschooler)",
            T,
        )
        .unwrap();
        assert_eq!(dangling.rows[0][0], textsql_core::value::Value::Integer(0));
    }
    // The last variant is the empty-table probe.
    let empty = execute_sql(suite.variants.last().unwrap(), "SELECT count(*) FROM Highschooler", T).unwrap();
    assert_eq!(empty.rows[0][0], textsql_core::value::Value::Integer(0));
}

#[test]
fn max_and_order_by_limit_differ_only_on_empty_tables() {
    let dir = tempfile::tempdir().unwrap();
    let db = fixture_db(dir.path(), "car_1");
    let suite = build_test_suite(&db, 6, 1, &dir.path().join("s")).unwrap();
    let gold = "SELECT max(mpg) FROM cars_data";
    let pred = "SELECT mpg FROM cars_data ORDER BY mpg DESC LIMIT 1";
    for v in &suite.variants {
        let g = execute_sql(v, gold, T).unwrap();
        let p = execute_sql(v, pred, T).unwrap();
        let nonempty = !execute_sql(v, "SELECT 1 FROM cars_data LIMIT 1", T).unwrap().rows.is_empty();
        // Brute force: MAX yields one row; LIMIT yields the same value or nothing.
        assert_eq!(g.rows.len(), 1);
        assert_eq!(p.rows.len(), usize::from(nonempty));
        if nonempty {
            assert_eq!(g.rows, p.rows);
        }
        assert_eq!(textsql_core::eval::compare_results(&g, &p), nonempty);
    }
    let example = textsql_core::dataset::ExampleRecord {
        example_id: "x".into(),
        db_id: "car_1".into(),
        question: "q".into(),
        gold_sql: gold.into(),
        template_id: None,
    };
    let prediction = Prediction {
        example_id: "x".into(),
        raw_completion: String::new(),
        sql: pred.into(),
    };
    let o = evaluate(&example, &prediction, &suite, &EvalOptions::default());
    assert!(o.ex && !o.ts);
}

#[test]
fn and_or_swap_is_caught_by_the_suite() {
    let dir = tempfile::tempdir().unwrap();
    let layout = fixtures::materialize(dir.path()).unwrap();
    let dev = load_benchmark(&layout.benchmark("dev.json"), &layout.db_root).unwrap();
    let example = dev.examples.iter().find(|e| e.gold_sql.contains("or year")).unwrap();
    let raw = AndOrMutation
        .complete(example, &CompletionRequest::greedy(""))
        .unwrap();
    let prediction = Prediction::from_completion(&example.example_id, raw, &CompletionRequest::greedy("").stop);
    assert!(prediction.sql.to_lowercase().contains("and year"));
    let suite = build_test_suite(&layout.db("car_1"), 32, 0, &dir.path().join("suite")).unwrap();
    let o = evaluate(example, &prediction, &suite, &EvalOptions::default());
    assert!(o.valid && o.ex && !o.ts, "{o:?}");
    // Independent check: some variant holds a car that satisfies exactly one
    // of the two predicates.
    let separating = suite.variants[1..].iter().any(|v| {
        let r = execute_sql(
            v,
            "SELECT count(*) FROM cars_data WHERE (cylinders = 8) != (year < 1980)",
            T,
        )
        .unwrap();
        r.rows[0][0] != textsql_core::value::Value::Integer(0)
    });
    assert!(separating);
}

#[test]
fn cached_suites_are_reused_and_corrupt_ones_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let db = fixture_db(dir.path(), "orchestra");
    let suite_dir = dir.path().join("cache/orchestra/5");
    let (_, origin) = load_or_build(&db, 3, 5, &suite_dir).unwrap();
    assert_eq!(origin, SuiteOrigin::Generated);
    let (_, origin) = load_or_build(&db, 3, 5, &suite_dir).unwrap();
    assert_eq!(origin, SuiteOrigin::Cached);
    std::fs::write(suite_dir.join("manifest.json"), "{ not json").unwrap();
    let (suite, origin) = load_or_build(&db, 3, 5, &suite_dir).unwrap();
    assert_eq!(origin, SuiteOrigin::Generated);
    assert_eq!(suite.variants.len(), 4);
    // A different k invalidates the cache too.
    let (_, origin) = load_or_build(&db, 2, 5, &suite_dir).unwrap();
    assert_eq!(origin, SuiteOrigin::Generated);
}

#[test]
fn concurrent_callers_share_one_generation() {
    let dir = tempfile::tempdir().unwrap();
    let db = fixture_db(dir.path(), "network_1");
    let cache = SuiteCache::new(dir.path().join("cache"), 4, 9);
    let origins: Vec<SuiteOrigin> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..4).map(|_| s.spawn(|| cache.get("network_1", &db).unwrap().1)).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(origins.iter().all(|o| *o == SuiteOrigin::Generated));
    assert!(cache.dir("network_1").join("manifest.json").is_file());
    let fresh = SuiteCache::new(dir.path().join("cache"), 4, 9);
    assert_eq!(fresh.get("network_1", &db).unwrap().1, SuiteOrigin::Cached);
}
