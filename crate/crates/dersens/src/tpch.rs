//! Small seeded TPC-H-like fixtures and benchmark queries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::sql::{Database, TableData};
use crate::sqlread::Value;

pub const LINEITEM_SCHEMA: &str = "\
table lineitem
col l_orderkey int
col l_partkey int
col l_quantity int
col l_extendedprice real
col l_discount real
col l_tax real
col l_returnflag text
col l_linestatus text
col l_shipdateG date
col l_commitdateG date
col l_receiptdateG date
norm lp 1 l_quantity (scaled 0.0001 l_extendedprice) (scaled 50 l_discount) (scaled 30 (linf l_shipdateG l_commitdateG l_receiptdateG))
";

/// Part, partsupp and supplier with their row norms.
pub const PART_SCHEMA: &str = "\
table part
col p_partkey int
col p_brand text
col p_type text
col p_size int
col p_container text
col p_retailprice real
norm lp 1 p_size (scaled 0.01 p_retailprice)

table partsupp
col ps_partkey int
col ps_suppkey int
col ps_availqty int
col ps_supplycost real
norm lp 1 ps_availqty (scaled 0.01 ps_supplycost)

table supplier
col s_suppkey int
col s_name text
col s_comment text
col s_acctbal real
norm scaled 0.01 s_acctbal
";

pub const B1_1: &str = "select sum(lineitem.l_quantity) from lineitem \
where lineitem.l_shipdateG <= 230.3 - 30 and lineitem.l_returnflag = 'R' and lineitem.l_linestatus = 'F'";

pub const B1_5: &str = "select count(*) from lineitem \
where lineitem.l_shipdateG <= 230.3 - 30 and lineitem.l_returnflag = 'R' and lineitem.l_linestatus = 'F'";

pub const B16: &str = "select count(partsupp.ps_suppkey) from partsupp, part, supplier \
where part.p_partkey = partsupp.ps_partkey and partsupp.ps_suppkey = supplier.s_suppkey \
and part.p_brand <> 'Brand#34' and part.p_size in (5, 10, 15, 20, 25, 30, 35, 40) \
and not (supplier.s_comment like '%Customer%Complaints%')";

fn num(x: f64) -> Value {
    Value::Num(x)
}

fn text(s: &str) -> Value {
    Value::Str(s.to_string())
}

fn lineitem_columns() -> Vec<String> {
    [
        "ID",
        "l_orderkey",
        "l_partkey",
        "l_quantity",
        "l_extendedprice",
        "l_discount",
        "l_tax",
        "l_returnflag",
        "l_linestatus",
        "l_shipdateG",
        "l_commitdateG",
        "l_receiptdateG",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

/// Lineitem rows with ship dates uniform over `[dates.0, dates.1]` months;
/// every row is sensitive.
pub fn lineitem(n: usize, dates: (f64, f64), seed: u64) -> TableData {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let q = rng.gen_range(1..=50) as f64;
        let price = q * rng.gen_range(900.0..2000.0f64);
        let ship = rng.gen_range(dates.0..=dates.1);
        let flag = ["A", "N", "R"][rng.gen_range(0..3)];
        let status = if rng.gen_bool(0.5) { "F" } else { "O" };
        rows.push(vec![
            num(i as f64 + 1.0),
            num(rng.gen_range(1..=n as i64 / 4 + 1) as f64),
            num(rng.gen_range(1..=200) as f64),
            num(q),
            num((price * 100.0).round() / 100.0),
            num(rng.gen_range(0..=10) as f64 / 100.0),
            num(rng.gen_range(0..=8) as f64 / 100.0),
            text(flag),
            text(status),
            num(ship),
            num(ship + rng.gen_range(-3.0..3.0)),
            num(ship + rng.gen_range(0.0..1.0)),
        ]);
    }
    TableData { name: "lineitem".into(), columns: lineitem_columns(), sensitive: vec![true; n], rows }
}

/// Rows matching the b1_1 public filters keep ship dates at least
/// `margin` months below the threshold; others are spread around it.
pub fn b1_1_fixture(n: usize, margin: f64, seed: u64) -> Database {
    let mut t = lineitem(n, (144.0, 227.0), seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    for row in &mut t.rows {
        if row[7] == text("R") && row[8] == text("F") {
            let d = 200.3 - margin - rng.gen_range(0.0..20.0);
            row[9] = num(d);
            row[10] = num(d);
            row[11] = num(d);
        }
    }
    let mut db = Database::default();
    db.insert(t);
    db
}

/// Part, partsupp and supplier tables; parts are the sensitive rows.
pub fn part_fixture(parts: usize, suppliers: usize, seed: u64) -> Database {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let brands = ["Brand#14", "Brand#22", "Brand#34"];
    let types = ["LARGE ANODIZED TIN", "SMALL BRUSHED COPPER", "MEDIUM POLISHED STEEL"];
    let containers = ["MED BAG", "LG CASE", "JUMBO PKG"];
    let mut part = TableData {
        name: "part".into(),
        columns: ["ID", "p_partkey", "p_brand", "p_type", "p_size", "p_container", "p_retailprice"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: Vec::new(),
        sensitive: Vec::new(),
    };
    for i in 0..parts {
        part.rows.push(vec![
            num(i as f64 + 1.0),
            num(i as f64 + 1.0),
            text(brands[rng.gen_range(0..3)]),
            text(types[rng.gen_range(0..3)]),
            num(rng.gen_range(1..=50) as f64),
            text(containers[rng.gen_range(0..3)]),
            num(rng.gen_range(900.0..2000.0f64).round()),
        ]);
        part.sensitive.push(rng.gen_bool(0.7));
    }
    let mut supplier = TableData {
        name: "supplier".into(),
        columns: ["ID", "s_suppkey", "s_name", "s_comment", "s_acctbal"].iter().map(|s| s.to_string()).collect(),
        rows: Vec::new(),
        sensitive: vec![false; suppliers],
    };
    for i in 0..suppliers {
        let comment = if rng.gen_bool(0.2) { "slow Customer service Complaints" } else { "reliable" };
        supplier.rows.push(vec![
            num(i as f64 + 1.0),
            num(i as f64 + 1.0),
            text(&format!("Supplier#{:03}", i + 1)),
            text(comment),
            num(rng.gen_range(-999.0..9999.0f64).round()),
        ]);
    }
    let mut partsupp = TableData {
        name: "partsupp".into(),
        columns: ["ID", "ps_partkey", "ps_suppkey", "ps_availqty", "ps_supplycost"].iter().map(|s| s.to_string()).collect(),
        rows: Vec::new(),
        sensitive: Vec::new(),
    };
    let mut id = 0.0;
    for p in 0..parts {
        for _ in 0..2 {
            id += 1.0;
            partsupp.rows.push(vec![
                num(id),
                num(p as f64 + 1.0),
                num(rng.gen_range(1..=suppliers) as f64),
                num(rng.gen_range(1..=9999) as f64),
                num(rng.gen_range(1.0..1000.0f64).round()),
            ]);
            partsupp.sensitive.push(false);
        }
    }
    let mut db = Database::default();
    db.insert(part);
    db.insert(partsupp);
    db.insert(supplier);
    db
}
