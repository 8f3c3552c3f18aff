use chrono::NaiveDate;
use dersens::sql::{months_since_1980, months_to_year_month, parse_date_months, parse_query, parse_schema, validate};
use dersens::sqlread::same_expr;
use proptest::prelude::*;

const SCHEMA: &str = "
table t
col x int
col y real
col k text
col d date
norm lp 1 x y
table u
col w int
col s text
";

fn num_term() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("t.x".to_string()),
        Just("t.y".to_string()),
        Just("u.w".to_string()),
        Just("t.d".to_string()),
        (0u32..500).prop_map(|n| format!("{}", n as f64 / 4.0)),
    ];
    leaf.prop_recursive(3, 12, 2, |inner| {
        (inner.clone(), prop_oneof![Just("+"), Just("-"), Just("*")], inner)
            .prop_map(|(a, op, b)| format!("({a} {op} {b})"))
    })
}

fn atom() -> impl Strategy<Value = String> {
    prop_oneof![
        (num_term(), prop_oneof![Just("<"), Just("<="), Just(">"), Just(">="), Just("="), Just("<>")], num_term())
            .prop_map(|(a, op, b)| format!("{a} {op} {b}")),
        prop_oneof![Just("'a'"), Just("'b%'")].prop_map(|s| format!("t.k LIKE {s}")),
        Just("t.k = u.s".to_string()),
        (num_term(), 0u32..5, 5u32..9).prop_map(|(a, l, h)| format!("{a} BETWEEN {l} AND {h}")),
        num_term().prop_map(|a| format!("{a} IN (1, 2, 3)")),
    ]
}

fn predicate() -> impl Strategy<Value = String> {
    atom().prop_recursive(3, 10, 3, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} AND {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} OR {b})")),
            inner.prop_map(|a| format!("NOT ({a})")),
        ]
    })
}

fn query() -> impl Strategy<Value = String> {
    (prop_oneof![Just("sum"), Just("min"), Just("max"), Just("product")], num_term(), predicate())
        .prop_map(|(agg, e, p)| format!("SELECT {agg}({e}) FROM t, u WHERE {p}"))
}

proptest! {
    #[test]
    fn print_then_parse_is_identity(q in query()) {
        let ast = parse_query(&q).unwrap();
        let printed = ast.to_string();
        let back = parse_query(&printed).unwrap();
        // source positions differ, everything else must not
        prop_assert_eq!(back.to_string(), printed.clone());
        prop_assert_eq!(back.aggregator, ast.aggregator);
        prop_assert_eq!(&back.tables, &ast.tables);
        prop_assert!(same_expr(&back.select, &ast.select, 0.0).is_ok());
        let p = |q: &dersens::sql::QuerySpec| q.predicate.as_ref().map(|p| p.to_string());
        prop_assert_eq!(p(&back), p(&ast));
    }

    #[test]
    fn classification_ignores_and_grouping(a in atom(), b in atom(), c in atom()) {
        let s = parse_schema(SCHEMA).unwrap();
        let left = validate(&parse_query(&format!("SELECT sum(t.x) FROM t, u WHERE ({a} AND {b}) AND {c}")).unwrap(), &s).unwrap();
        let right = validate(&parse_query(&format!("SELECT sum(t.x) FROM t, u WHERE {a} AND ({b} AND {c})")).unwrap(), &s).unwrap();
        let key = |ctx: &dersens::sql::Context| {
            let mut p: Vec<String> = ctx.public.iter().map(|p| p.to_sql().to_string()).collect();
            p.sort();
            (p, ctx.sensitive.as_ref().map(|p| p.to_sql().to_string()))
        };
        prop_assert_eq!(key(&left), key(&right));
    }
}

#[test]
fn dates_are_monotone_and_invertible() {
    let mut last = f64::NEG_INFINITY;
    for y in 1980..=2020 {
        for m in 1..=12 {
            for d in [1, 10, 28] {
                let date = NaiveDate::from_ymd_opt(y, m, d).unwrap();
                let v = months_since_1980(date);
                assert!(v > last);
                last = v;
                assert_eq!(months_to_year_month(v), (y, m));
                assert_eq!(parse_date_months(&date.format("%Y-%m-%d").to_string()), Some(v));
            }
        }
    }
    assert_eq!(parse_date_months("1980-02-01"), Some(1.0));
}

#[test]
fn paper_shaped_inputs() {
    let q = parse_query(dersens::tpch::B1_5).unwrap();
    assert_eq!(q.aggregator, dersens::Aggregator::Count);
    assert_eq!(q.tables.len(), 1);
    assert_eq!(q.predicate.as_ref().unwrap().conjuncts().len(), 3);
    assert!(parse_query("SELECT avg(x) FROM t").is_err());
    let s = parse_schema(dersens::tpch::LINEITEM_SCHEMA).unwrap();
    let n = dersens::norm::parse_norm(
        "lp 1 l_quantity (scaled 0.0001 l_extendedprice) (scaled 50 l_discount) (scaled 30 (linf l_shipdateG l_commitdateG l_receiptdateG))",
    )
    .unwrap();
    assert_eq!(s.tables[0].norm, n);
}
