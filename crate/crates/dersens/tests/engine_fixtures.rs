use dersens::analyzer::{build_plan, AnalyzeOptions};
use dersens::engine::{run_initial, run_modified, run_sensitivity};
use dersens::sql::{parse_query, parse_schema, validate, Context, Database, Schema, TableData};
use dersens::sqlread::Value;
use dersens::tpch;

fn schema() -> Schema {
    parse_schema(tpch::LINEITEM_SCHEMA).unwrap()
}

fn ctx(q: &str) -> Context {
    validate(&parse_query(q).unwrap(), &schema()).unwrap()
}

// (quantity, returnflag, linestatus, shipdate, sensitive)
type Line = (f64, &'static str, &'static str, f64, bool);

fn lineitem(rows: &[Line]) -> Database {
    let mut t = tpch::lineitem(rows.len(), (150.0, 150.0), 0);
    for (row, &(q, flag, status, ship, _)) in t.rows.iter_mut().zip(rows) {
        row[3] = Value::Num(q);
        row[7] = Value::Str(flag.into());
        row[8] = Value::Str(status.into());
        row[9] = Value::Num(ship);
    }
    t.sensitive = rows.iter().map(|r| r.4).collect();
    let mut db = Database::default();
    db.insert(t);
    db
}

const TEN: [Line; 10] = [
    (17.0, "R", "F", 150.0, true),
    (36.0, "R", "F", 200.0, true),
    (8.0, "R", "F", 200.3, false),
    (28.0, "R", "F", 200.4, true),
    (24.0, "A", "F", 120.0, true),
    (32.0, "R", "O", 130.0, true),
    (50.0, "R", "F", 10.0, true),
    (1.0, "N", "O", 220.0, false),
    (45.0, "R", "F", 226.0, true),
    (3.0, "R", "F", 199.9, true),
];

#[test]
fn b1_1_exact_on_ten_rows() {
    // rows 1, 2, 3, 7 and 10 pass every filter
    let db = lineitem(&TEN);
    assert_eq!(run_initial(&ctx(tpch::B1_1), &db).unwrap(), 17.0 + 36.0 + 8.0 + 50.0 + 3.0);
    assert_eq!(run_initial(&ctx(tpch::B1_5), &db).unwrap(), 5.0);
}

#[test]
fn sigmoid_with_wide_margins_is_within_one_percent() {
    let rows: Vec<Line> = TEN
        .iter()
        .map(|&(q, f, s, d, sens)| (q, f, s, if d <= 200.3 { d.min(150.3) } else { d.max(250.3) }, sens))
        .collect();
    let db = lineitem(&rows);
    let c = ctx(tpch::B1_1);
    let plan = build_plan(&c, &AnalyzeOptions { alpha: 0.1, ..Default::default() }).unwrap();
    let (m, e) = (run_modified(&plan, &db).unwrap(), run_initial(&c, &db).unwrap());
    // every row is off by at most 1 − σ(5) of its value
    let bound = 1.0 / (1.0 + 5f64.exp());
    let total: f64 = rows.iter().filter(|r| r.1 == "R" && r.2 == "F").map(|r| r.0).sum();
    assert!((m - e).abs() <= bound * total);
    assert!((m - e).abs() / e < 0.01);
}

#[test]
fn deep_row_gives_sensitivity_one() {
    let mut rows = TEN.to_vec();
    rows[6].3 = 200.3 - 150.0;
    let db = lineitem(&rows);
    let plan = build_plan(&ctx(tpch::B1_1), &AnalyzeOptions { alpha: 0.1, ..Default::default() }).unwrap();
    let rep = run_sensitivity(&plan, &db).unwrap();
    assert!((rep.value - 1.0).abs() < 1e-6, "{}", rep.value);
    assert_eq!(rep.argmax.unwrap().id, 7.0);
}

#[test]
fn empty_tables() {
    let db = lineitem(&[]);
    let opts = AnalyzeOptions { alpha: 0.1, ..Default::default() };
    let c = ctx(tpch::B1_1);
    let plan = build_plan(&c, &opts).unwrap();
    assert_eq!(run_modified(&plan, &db).unwrap(), 0.0);
    assert_eq!(run_sensitivity(&plan, &db).unwrap().value, 0.0);
    let c = ctx("SELECT product(lineitem.l_quantity) FROM lineitem WHERE lineitem.l_quantity < 3");
    let plan = build_plan(&c, &AnalyzeOptions { alpha: 0.01, beta: 1.0, ..Default::default() }).unwrap();
    assert_eq!(run_modified(&plan, &db).unwrap(), 1.0);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let mut db = Database::default();
    db.insert(tpch::lineitem(2000, (144.0, 227.0), 9));
    let c = ctx(tpch::B1_1);
    let plan = build_plan(&c, &AnalyzeOptions { alpha: 0.1, ..Default::default() }).unwrap();
    let a = (run_modified(&plan, &db).unwrap(), run_sensitivity(&plan, &db).unwrap());
    let b = (run_modified(&plan, &db).unwrap(), run_sensitivity(&plan, &db).unwrap());
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn join_cardinality_is_product_of_filtered_counts() {
    let db = tpch::part_fixture(30, 10, 2);
    let s = parse_schema(tpch::PART_SCHEMA).unwrap();
    let q = "SELECT count(*) FROM part, supplier WHERE part.p_brand = 'Brand#14' AND supplier.s_comment LIKE '%Compl%'";
    let c = validate(&parse_query(q).unwrap(), &s).unwrap();
    let n = |t: &TableData, col: usize, f: &dyn Fn(&str) -> bool| {
        t.rows.iter().filter(|r| matches!(&r[col], Value::Str(x) if f(x))).count() as f64
    };
    let parts = n(db.table("part").unwrap(), 2, &|x| x == "Brand#14");
    let sups = n(db.table("supplier").unwrap(), 3, &|x| x.contains("Compl"));
    assert!(parts > 0.0 && sups > 0.0);
    assert_eq!(run_initial(&c, &db).unwrap(), parts * sups);
}
