use std::collections::BTreeMap;

use dersens::analyzer::{build_plan, AnalyzeError, AnalyzeOptions, SensitivityPlan};
use dersens::engine::{run_initial, run_modified, run_sensitivity};
use dersens::norm::eval_norm_map;
use dersens::sql::{parse_query, parse_schema, validate, Context, Database, Schema, TableData};
use dersens::sqlread::{eval_scalar_query, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SCHEMA: &str = "
table t
col x int
col y int
col z real
col k text
norm lp 1 x (scaled 2 y) z
table u
col w int
col v real
norm scaled 0.5 v
";

fn schema() -> Schema {
    parse_schema(SCHEMA).unwrap()
}

fn fixture(rng: &mut ChaCha8Rng, n: usize, m: usize, integer: bool) -> Database {
    let mut t = TableData {
        name: "t".into(),
        columns: ["ID", "x", "y", "z", "k"].iter().map(|s| s.to_string()).collect(),
        rows: Vec::new(),
        sensitive: Vec::new(),
    };
    for i in 0..n {
        let z = if integer { rng.gen_range(-2..=3) as f64 } else { rng.gen_range(-2.0..3.0) };
        t.rows.push(vec![
            Value::Num(i as f64 + 1.0),
            Value::Num(rng.gen_range(0..5) as f64),
            Value::Num(rng.gen_range(0..5) as f64),
            Value::Num(z),
            Value::Str(if rng.gen_bool(0.5) { "a" } else { "b" }.into()),
        ]);
        t.sensitive.push(rng.gen_bool(0.8));
    }
    let mut u = TableData {
        name: "u".into(),
        columns: ["ID", "w", "v"].iter().map(|s| s.to_string()).collect(),
        rows: Vec::new(),
        sensitive: Vec::new(),
    };
    for i in 0..m {
        u.rows.push(vec![Value::Num(i as f64 + 1.0), Value::Num(rng.gen_range(0..3) as f64), Value::Num(rng.gen_range(0.0..3.0))]);
        u.sensitive.push(rng.gen_bool(0.5));
    }
    let mut db = Database::default();
    db.insert(t);
    db.insert(u);
    db
}

fn context(q: &str) -> Context {
    validate(&parse_query(q).unwrap(), &schema()).unwrap()
}

fn plan(ctx: &Context, opts: &AnalyzeOptions) -> SensitivityPlan {
    match build_plan(ctx, opts) {
        Ok(p) => p,
        Err(AnalyzeError::Infeasible { min_beta, .. }) => {
            build_plan(ctx, &AnalyzeOptions { beta: min_beta * 1.01, ..opts.clone() }).unwrap()
        }
        Err(e) => panic!("{e}"),
    }
}

const EXACT: [&str; 5] = [
    "SELECT sum(t.x) FROM t WHERE t.y < 3 AND t.x <> 2",
    "SELECT count(*) FROM t WHERE t.x >= 2 OR t.y = 1",
    "SELECT product(t.x + 1) FROM t WHERE t.y <= 2",
    "SELECT min(t.x * t.y) FROM t WHERE t.x > 1 AND NOT t.y = 3",
    "SELECT max(t.x - t.y) FROM t WHERE t.y BETWEEN 1 AND 3 AND t.k = 'a'",
];

#[test]
fn precise_lowering_is_exact_on_integers() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = AnalyzeOptions { precise: Some(1.0), beta: 10.0, ..Default::default() };
    let mut compared = 0;
    for _ in 0..20 {
        let db = fixture(&mut rng, 8, 3, true);
        for q in EXACT {
            let ctx = context(q);
            let p = build_plan(&ctx, &opts).unwrap();
            let Ok(exact) = run_initial(&ctx, &db) else { continue };
            assert_eq!(run_modified(&p, &db).unwrap(), exact, "{q}");
            compared += 1;
        }
    }
    assert!(compared >= 90);
}

const SMOOTH: [&str; 8] = [
    "SELECT sum(t.z) FROM t WHERE t.y < 3 AND t.k = 'a'",
    "SELECT sum(t.x * t.z) FROM t WHERE t.z > 0.5 OR t.y = 2",
    "SELECT count(*) FROM t WHERE t.x >= 2 AND NOT t.z < 1",
    "SELECT min(t.z) FROM t WHERE t.y > 1",
    "SELECT max(t.x + t.z) FROM t WHERE t.z < 2",
    "SELECT product(1 + 0.1 * t.z) FROM t WHERE t.y < 3",
    "SELECT sum(t.z * u.v) FROM t, u WHERE t.x = u.w AND u.w > 0",
    "SELECT sum(t.z + u.v) FROM t, u WHERE u.w = 1 AND t.y < 3",
];

/// Moves one sensitive row by distance `d` under its table norm.
fn neighbour(db: &Database, s: &Schema, rng: &mut ChaCha8Rng, d: f64) -> Database {
    let mut out = db.clone();
    let name = if rng.gen_bool(0.5) { "t" } else { "u" };
    let norm = &s.table(name).unwrap().norm;
    let t = out.table_mut(name).unwrap();
    let rows: Vec<usize> = (0..t.rows.len()).filter(|&r| t.sensitive[r]).collect();
    if rows.is_empty() {
        return out;
    }
    let r = rows[rng.gen_range(0..rows.len())];
    let dir: BTreeMap<String, f64> = norm.vars().into_iter().map(|v| (v, rng.gen_range(-1.0..1.0))).collect();
    let len = eval_norm_map(norm, &dir).unwrap();
    for (c, v) in dir {
        let i = t.col_index(&c).unwrap();
        let old = t.rows[r][i].as_num().unwrap();
        t.rows[r][i] = Value::Num(old + v / len * d);
    }
    out
}

#[test]
fn sensitivity_is_sound_and_smooth_on_neighbours() {
    let s = schema();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = AnalyzeOptions { alpha: 0.5, beta: 1.0, ..Default::default() };
    let mut pairs = 0;
    for q in SMOOTH {
        let p = plan(&context(q), &opts);
        for _ in 0..70 {
            let db = fixture(&mut rng, 6, 3, false);
            let d = rng.gen_range(1e-3..1.0);
            let nb = neighbour(&db, &s, &mut rng, d);
            let (m1, m2) = (run_modified(&p, &db).unwrap(), run_modified(&p, &nb).unwrap());
            let (c1, c2) = (run_sensitivity(&p, &db).unwrap().value, run_sensitivity(&p, &nb).unwrap().value);
            let slack = (p.beta * d).exp() * (1.0 + 1e-9);
            assert!((m1 - m2).abs() <= d * c1.max(c2) * slack + 1e-12, "{q}: |{m1} - {m2}| > {d}·{c1}/{c2}");
            assert!(c1 <= c2 * slack + 1e-300 && c2 <= c1 * slack + 1e-300, "{q}: {c1} vs {c2} at d = {d}");
            pairs += 1;
        }
    }
    assert!(pairs >= 500);
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12)
}

#[test]
fn emitted_sql_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let opts = AnalyzeOptions { alpha: 0.5, beta: 1.0, ..Default::default() };
    for q in SMOOTH.iter().chain(EXACT.iter()) {
        let p = plan(&context(q), &opts);
        for _ in 0..5 {
            let db = fixture(&mut rng, 6, 3, false);
            let Ok(e) = run_modified(&p, &db) else { continue };
            // SQL aggregates over no rows are NULL
            let m = eval_scalar_query(&p.modified_sql(), &db).unwrap().unwrap_or(e);
            assert!(close(m, e), "{q}: modified {m} vs {e}\n{}", p.modified_sql());
            let s = eval_scalar_query(&p.sensitivity_sql(), &db).unwrap().unwrap_or(0.0);
            let e = run_sensitivity(&p, &db).unwrap().value;
            assert!(close(s, e), "{q}: sensitivity {s} vs {e}\n{}", p.sensitivity_sql());
        }
    }
}

#[test]
fn join_groups_use_only_sensitive_table_ids() {
    let s = parse_schema(&SCHEMA.replace("norm scaled 0.5 v", "")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut db = fixture(&mut rng, 4, 3, false);
    db.table_mut("t").unwrap().sensitive = vec![true; 4];
    let ctx = validate(&parse_query("SELECT sum(t.z * u.v) FROM t, u WHERE u.w >= 0").unwrap(), &s).unwrap();
    let p = plan(&ctx, &AnalyzeOptions::default());
    let rep = run_sensitivity(&p, &db).unwrap();
    assert!(rep.groups.iter().all(|g| g.table == "t"));
    assert_eq!(rep.groups.len(), 4);
    // u is public, so each group sums |∂(z·v)/∂z| = |v| over the three u rows
    let u = db.table("u").unwrap();
    let total: f64 = u.rows.iter().map(|r| r[2].as_num().unwrap().abs()).sum();
    for g in &rep.groups {
        assert!((g.value - total).abs() < 1e-12, "{} vs {total}", g.value);
    }
}

#[test]
fn count_sensitivity_matches_finite_differences() {
    // with one sigmoid on one column the per-row bound is the exact derivative
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let db = fixture(&mut rng, 4, 1, false);
    let ctx = context("SELECT count(*) FROM t WHERE t.z < 1");
    let p = plan(&ctx, &AnalyzeOptions { alpha: 0.5, beta: 1.0, ..Default::default() });
    let rep = run_sensitivity(&p, &db).unwrap();
    let t = db.table("t").unwrap();
    let zi = t.col_index("z").unwrap();
    for g in &rep.groups {
        let r = (g.id - 1.0) as usize;
        let h = 1e-5;
        let at = |dz: f64| {
            let mut db2 = db.clone();
            let row = &mut db2.table_mut("t").unwrap().rows[r];
            row[zi] = Value::Num(row[zi].as_num().unwrap() + dz);
            run_modified(&p, &db2).unwrap()
        };
        let fd = ((at(h) - at(-h)) / (2.0 * h)).abs();
        assert!((g.value - fd).abs() <= 1e-7 * fd.max(1e-3), "{} vs {fd}", g.value);
    }
}

#[test]
fn larger_alpha_is_no_worse_when_margins_exceed_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let ctx = context("SELECT sum(t.x) FROM t WHERE 4 * t.y < 10");
    for case in 0..10 {
        let mut db = fixture(&mut rng, 10, 1, false);
        // all rows pass, or all rows fail, so per-row errors cannot cancel
        let ys = if case % 2 == 0 { 0..3 } else { 3..5 };
        for row in &mut db.table_mut("t").unwrap().rows {
            row[2] = Value::Num(rng.gen_range(ys.clone()) as f64);
        }
        let exact = run_initial(&ctx, &db).unwrap();
        let mut last = f64::INFINITY;
        for a in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let p = plan(&ctx, &AnalyzeOptions { alpha: a, beta: 100.0, ..Default::default() });
            let err = (run_modified(&p, &db).unwrap() - exact).abs();
            assert!(err <= last + 1e-12, "α = {a}: {err} > {last}");
            last = err;
        }
    }
}
