use dersens::analyzer::{build_plan, AnalyzeOptions};
use dersens::sql::{parse_query, parse_schema, validate, Schema};
use dersens::sqlread::{parse_expr, parse_select, same_expr, same_select, Expr, FromItem, Select};
use dersens::tpch;

const B1_1_MOD: &str = include_str!("golden/b1_1_modified.sql");
const B1_1_SENS: &str = include_str!("golden/b1_1_sensitivity.sql");
const B1_5_MOD: &str = include_str!("golden/b1_5_modified.sql");
const B1_5_SENS: &str = include_str!("golden/b1_5_sensitivity.sql");
const B16_TERM: &str = include_str!("golden/b16_term.sql");
const B16_ITEM: &str = include_str!("golden/b16_modified_item.sql");

fn lineitem_schema(date_weight: &str) -> Schema {
    parse_schema(&tpch::LINEITEM_SCHEMA.replace("scaled 30 ", &format!("scaled {date_weight} "))).unwrap()
}

fn emit(q: &str, s: &Schema, opts: &AnalyzeOptions) -> (String, String) {
    let ctx = validate(&parse_query(q).unwrap(), s).unwrap();
    let plan = build_plan(&ctx, opts).unwrap();
    (plan.modified_sql(), plan.sensitivity_sql())
}

fn alpha(a: f64) -> AnalyzeOptions {
    AnalyzeOptions { alpha: a, ..Default::default() }
}

fn check(ours: &str, golden: &str) {
    let a = parse_select(ours).unwrap();
    let b = parse_select(golden).unwrap();
    if let Err(e) = same_select(&a, &b, 1e-12) {
        panic!("{e}\nours:   {ours}\ngolden: {golden}");
    }
}

#[test]
fn b1_1_matches() {
    let (m, s) = emit(tpch::B1_1, &lineitem_schema("33.333333333333336"), &alpha(0.1));
    check(&m, B1_1_MOD);
    check(&s, B1_1_SENS);
}

#[test]
fn b1_5_matches() {
    let (m, s) = emit(tpch::B1_5, &lineitem_schema("33.333333333333336"), &alpha(0.1));
    check(&m, B1_5_MOD);
    check(&s, B1_5_SENS);
}

#[test]
fn date_weight_thirty_gives_one_thirtieth() {
    let (_, s) = emit(tpch::B1_1, &lineitem_schema("30"), &alpha(0.1));
    check(&s, &B1_1_SENS.replace("* 0.03)", &format!("* {:?})", 1.0 / 30.0)));
}

fn inner(sel: &Select) -> &Select {
    match &sel.from[0] {
        FromItem::Sub { query, .. } => query,
        f => panic!("expected subquery, got {f:?}"),
    }
}

fn table_names(sel: &Select) -> Vec<String> {
    sel.from
        .iter()
        .map(|f| match f {
            FromItem::Table { name, .. } => name.clone(),
            FromItem::Sub { alias, .. } => alias.clone(),
        })
        .collect()
}

fn agg_arg(e: &Expr) -> &Expr {
    // sum(abs(x)) -> x
    match e {
        Expr::Func(_, args, _) => match &args[0] {
            Expr::Func(n, inner, _) if n == "abs" => &inner[0],
            x => x,
        },
        e => panic!("expected aggregate, got {e}"),
    }
}

#[test]
fn b16_select_and_from_match() {
    let s = parse_schema(tpch::PART_SCHEMA).unwrap();
    let opts = AnalyzeOptions { alpha: 0.1, xor: true, ..Default::default() };
    let (m, sens) = emit(tpch::B16, &s, &opts);
    let sens = parse_select(&sens).unwrap();
    let sub = inner(&sens);
    assert_eq!(table_names(sub), ["part", "partsupp", "supplier", "part_sensRows"]);
    if let Err(e) = same_expr(agg_arg(&sub.items[0].0), &parse_expr(B16_TERM).unwrap(), 1e-12) {
        panic!("{e}");
    }
    let m = parse_select(&m).unwrap();
    assert_eq!(table_names(&m), ["part", "partsupp", "supplier"]);
    same_expr(agg_arg(&m.items[0].0), &parse_expr(B16_ITEM).unwrap(), 1e-12).unwrap();
}

#[test]
fn goldens_are_fast() {
    let t = std::time::Instant::now();
    let s = lineitem_schema("33.333333333333336");
    for _ in 0..10 {
        emit(tpch::B1_1, &s, &alpha(0.1));
    }
    assert!(t.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn comparison_detects_a_changed_constant() {
    let (_, s) = emit(tpch::B1_1, &lineitem_schema("33.333333333333336"), &alpha(0.1));
    let other = parse_select(&B1_1_SENS.replace("* 0.03)", "* 0.04)")).unwrap();
    assert!(same_select(&parse_select(&s).unwrap(), &other, 1e-12).is_err());
}
