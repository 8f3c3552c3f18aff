use std::collections::BTreeMap;

use dersens::analyzer::{build_plan, AnalyzeOptions};
use dersens::dp::{ddp_check, privatize, GenCauchy, NoiseParams};
use dersens::engine::{run_modified, run_sensitivity};
use dersens::norm::{compare, eval_norm_map, parse_norm};
use dersens::sql::{parse_query, parse_schema, validate, Database, Schema};
use dersens::sqlread::Value;
use dersens::tpch;
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn density_integrates_to_one() {
    let g = GenCauchy::new(4.0).unwrap();
    // [0, 1] directly, [1, 1e6] after x = e^s
    let near = simpson(|x| g.density(x), 0.0, 1.0, 2000);
    let far = simpson(|s| g.density(s.exp()) * s.exp(), 0.0, 1e6f64.ln(), 20000);
    assert!((2.0 * (near + far) - 1.0).abs() < 1e-8);
}

#[test]
fn gamma_two_is_the_cauchy_distribution() {
    let g = GenCauchy::new(2.0).unwrap();
    for x in [-100.0, -3.0, -0.5, 0.0, 0.1, 1.0, 7.0, 1e4] {
        let exact = 0.5 + f64::atan(x) / std::f64::consts::PI;
        assert!((g.cdf(x) - exact).abs() < 1e-11, "{x}");
    }
    for p in [0.01, 0.25, 0.6, 0.95] {
        let exact = (std::f64::consts::PI * (p - 0.5)).tan();
        assert!((g.quantile(p) - exact).abs() < 1e-9 * exact.abs().max(1.0));
    }
}

#[test]
fn samples_follow_the_cdf() {
    let g = GenCauchy::new(4.0).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let mut xs: Vec<f64> = (0..100_000).map(|_| g.sample(&mut rng)).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = g.cdf(x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks <= 0.006, "KS = {ks}");
    let inside = xs.iter().filter(|x| x.abs() <= 1.0).count() as f64 / n;
    assert!((inside - 0.78).abs() <= 0.01, "{inside}");
    assert!(xs[xs.len() / 2].abs() <= 0.02);
}

fn lineitem_db(seed: u64) -> Database {
    let mut db = Database::default();
    db.insert(tpch::lineitem(40, (160.0, 227.0), seed));
    db
}

fn perturb(db: &Database, s: &Schema, rng: &mut ChaCha8Rng, d: f64) -> Database {
    let mut out = db.clone();
    let norm = &s.tables[0].norm;
    let t = out.table_mut("lineitem").unwrap();
    let r = rng.gen_range(0..t.rows.len());
    let dir: BTreeMap<String, f64> = norm.vars().into_iter().map(|v| (v, rng.gen_range(-1.0..1.0))).collect();
    let len = eval_norm_map(norm, &dir).unwrap();
    for (c, v) in dir {
        let i = t.col_index(&c).unwrap();
        t.rows[r][i] = Value::Num(t.rows[r][i].as_num().unwrap() + v / len * d);
    }
    out
}

#[test]
fn releases_on_neighbours_are_epsilon_close() {
    let s = parse_schema(tpch::LINEITEM_SCHEMA).unwrap();
    let ctx = validate(&parse_query(tpch::B1_1).unwrap(), &s).unwrap();
    let params = NoiseParams::new(1.0, 0.1, 4.0).unwrap();
    let plan = build_plan(&ctx, &AnalyzeOptions { alpha: 0.1, beta: params.beta, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for i in 0..100 {
        let db = lineitem_db(i);
        let d = rng.gen_range(0.01..1.0);
        let nb = perturb(&db, &s, &mut rng, d);
        let r1 = privatize(run_modified(&plan, &db).unwrap(), run_sensitivity(&plan, &db).unwrap().value, params, i).unwrap();
        let r2 = privatize(run_modified(&plan, &nb).unwrap(), run_sensitivity(&plan, &nb).unwrap().value, params, i).unwrap();
        let (c1, c2) = (r1.sensitivity / params.b, r2.sensitivity / params.b);
        let ddp = ddp_check(r1.raw, c1, r2.raw, c2, params.gamma).unwrap();
        assert!(ddp <= params.epsilon * d * (1.0 + 1e-4), "ddp {ddp} > ε·{d}");
    }
}

#[test]
fn larger_norm_never_needs_more_noise() {
    let base = "table t\ncol x int\ncol y real\nnorm ";
    let pairs = [("linf x y", "lp 1 x y"), ("lp 1 x y", "lp 1 (scaled 2 x) (scaled 3 y)"), ("lp 2 x y", "lp 1 x y")];
    let queries = [
        "SELECT count(*) FROM t WHERE t.y < 2",
        "SELECT sum(t.x) FROM t",
        "SELECT sum(t.x + 2 * t.y) FROM t",
        "SELECT count(*) FROM t WHERE t.x > 1 AND t.y < 2",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for (small, large) in pairs {
        assert!(compare(&parse_norm(small).unwrap(), &parse_norm(large).unwrap()).unwrap().is_proof());
        let sn = parse_schema(&format!("{base}{small}\n")).unwrap();
        let sm = parse_schema(&format!("{base}{large}\n")).unwrap();
        for q in queries {
            let opts = AnalyzeOptions { alpha: 0.2, beta: 1.0, ..Default::default() };
            let pn = build_plan(&validate(&parse_query(q).unwrap(), &sn).unwrap(), &opts).unwrap();
            let pm = build_plan(&validate(&parse_query(q).unwrap(), &sm).unwrap(), &opts).unwrap();
            for _ in 0..10 {
                let mut db = Database::default();
                db.insert(dersens::sql::TableData {
                    name: "t".into(),
                    columns: vec!["ID".into(), "x".into(), "y".into()],
                    rows: (0..8)
                        .map(|i| vec![Value::Num(i as f64 + 1.0), Value::Num(rng.gen_range(0..4) as f64), Value::Num(rng.gen_range(0.0..4.0))])
                        .collect(),
                    sensitive: vec![true; 8],
                });
                let (a, b) = (run_sensitivity(&pn, &db).unwrap().value, run_sensitivity(&pm, &db).unwrap().value);
                assert!(b <= a * (1.0 + 1e-12), "{q} under {large}: {b} > {a}");
            }
        }
    }
}
