//! Query, schema and data front end.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::Serialize;

use crate::norm::{self, NormError, NormExpr, INF};
use crate::smooth::{eval_scalar, mk_prod, ScalarExpr};
use crate::sqlread::{self, BinOp, Catalog, Expr, FromItem, Pos, ReadError, Relation, Select, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SqlError {
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error("unsupported at {pos}: {what}")]
    Unsupported { pos: Pos, what: String },
    #[error("schema line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Data { path: PathBuf, line: usize, msg: String },
    #[error(transparent)]
    Norm(#[from] NormError),
}

pub type Result<T> = std::result::Result<T, SqlError>;

// ---------------------------------------------------------------- schema

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColType {
    Int,
    Real,
    DateMonths,
    Text,
}

impl ColType {
    fn parse(s: &str) -> Option<ColType> {
        Some(match s.to_ascii_lowercase().as_str() {
            "int" | "integer" | "identifier" => ColType::Int,
            "real" | "float" | "double" | "numeric" => ColType::Real,
            "date" | "date-months" => ColType::DateMonths,
            "text" | "string" => ColType::Text,
            _ => return None,
        })
    }

    pub fn is_numeric(self) -> bool {
        self != ColType::Text
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<(String, ColType)>,
    /// Exponent combining the per-row norms of this table.
    pub rows_p: f64,
    /// Per-row norm over this table's sensitive columns; empty if none.
    pub norm: NormExpr,
}

impl TableSchema {
    pub fn column(&self, name: &str) -> Option<(&str, ColType)> {
        self.columns.iter().find(|(c, _)| c.eq_ignore_ascii_case(name)).map(|(c, t)| (c.as_str(), *t))
    }

    pub fn sensitive_columns(&self) -> BTreeSet<String> {
        self.norm.vars()
    }

    fn check_norm(&self, line: usize) -> Result<()> {
        for v in self.norm.vars() {
            match self.column(&v) {
                None => return Err(SqlError::Schema { line, msg: format!("norm of `{}` uses unknown column `{v}`", self.name) }),
                Some((c, _)) if c != v => {
                    return Err(SqlError::Schema { line, msg: format!("norm column `{v}` must be spelled `{c}`") })
                }
                Some((_, ColType::Text)) => {
                    return Err(SqlError::Schema { line, msg: format!("norm of `{}` uses text column `{v}`", self.name) })
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub tables: Vec<TableSchema>,
    /// Exponent combining the tables (default ℓ∞).
    pub db_p: f64,
}

impl Schema {
    pub fn table(&self, name: &str) -> Option<&TableSchema> {
        self.tables.iter().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    fn table_mut(&mut self, name: &str) -> Option<&mut TableSchema> {
        self.tables.iter_mut().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    /// Replaces table norms from a file of `<table> <norm-expr>` lines.
    pub fn apply_norm_file(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let t = self
                .table_mut(name)
                .ok_or_else(|| SqlError::Schema { line: i + 1, msg: format!("unknown table `{name}` in norm spec") })?;
            t.norm = parse_table_norm(rest.trim(), i + 1)?;
            t.check_norm(i + 1)?;
        }
        Ok(())
    }
}

fn parse_exponent(words: &[&str], line: usize) -> Result<f64> {
    match words {
        ["linf"] => Ok(INF),
        ["lp", p] => {
            let p: f64 = if p.eq_ignore_ascii_case("inf") {
                INF
            } else {
                p.parse().map_err(|_| SqlError::Schema { line, msg: format!("bad exponent `{p}`") })?
            };
            if p >= 1.0 {
                Ok(p)
            } else {
                Err(SqlError::Schema { line, msg: format!("exponent {p} is below 1") })
            }
        }
        _ => Err(SqlError::Schema { line, msg: "expected `lp <p>` or `linf`".into() }),
    }
}

fn parse_table_norm(text: &str, line: usize) -> Result<NormExpr> {
    if text.is_empty() || text == "none" {
        return Ok(NormExpr::empty());
    }
    norm::parse_norm(text).map_err(|e| SqlError::Schema { line, msg: e.to_string() })
}

/// Schema file: `table`, `col <name> <type>`, `rows lp <p>|linf`,
/// `norm <expr>` and an optional `database lp <p>|linf`; `#` starts a comment.
pub fn parse_schema(text: &str) -> Result<Schema> {
    let mut s = Schema { tables: Vec::new(), db_p: INF };
    let mut norm_lines: Vec<usize> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let need_table = |s: &mut Schema| -> Result<usize> {
            if s.tables.is_empty() {
                Err(SqlError::Schema { line: ln, msg: format!("`{}` before any `table`", words[0]) })
            } else {
                Ok(s.tables.len() - 1)
            }
        };
        match words[0] {
            "table" => {
                let [_, name] = words[..] else {
                    return Err(SqlError::Schema { line: ln, msg: "expected `table <name>`".into() });
                };
                if s.table(name).is_some() {
                    return Err(SqlError::Schema { line: ln, msg: format!("table `{name}` declared twice") });
                }
                s.tables.push(TableSchema { name: name.into(), columns: Vec::new(), rows_p: 1.0, norm: NormExpr::empty() });
                norm_lines.push(ln);
            }
            "col" => {
                let t = need_table(&mut s)?;
                let [_, name, ty] = words[..] else {
                    return Err(SqlError::Schema { line: ln, msg: "expected `col <name> <type>`".into() });
                };
                let ty = ColType::parse(ty).ok_or_else(|| SqlError::Schema { line: ln, msg: format!("unknown type `{ty}`") })?;
                if name.eq_ignore_ascii_case("ID") {
                    continue;
                }
                if s.tables[t].column(name).is_some() {
                    return Err(SqlError::Schema { line: ln, msg: format!("column `{name}` declared twice") });
                }
                s.tables[t].columns.push((name.into(), ty));
            }
            "rows" => {
                let t = need_table(&mut s)?;
                s.tables[t].rows_p = parse_exponent(&words[1..], ln)?;
            }
            "norm" => {
                let t = need_table(&mut s)?;
                s.tables[t].norm = parse_table_norm(line[4..].trim(), ln)?;
                norm_lines[t] = ln;
            }
            "database" => s.db_p = parse_exponent(&words[1..], ln)?,
            w => return Err(SqlError::Schema { line: ln, msg: format!("unknown directive `{w}`") }),
        }
    }
    for (t, ln) in s.tables.iter().zip(norm_lines) {
        t.check_norm(ln)?;
    }
    Ok(s)
}

// ---------------------------------------------------------------- dates

const DAYS_PER_MONTH: f64 = 30.4375;

/// Months since 1980-01-01, with days as fractions of a 30.4375-day month.
pub fn months_since_1980(d: NaiveDate) -> f64 {
    ((d.year() - 1980) * 12 + d.month0() as i32) as f64 + d.day0() as f64 / DAYS_PER_MONTH
}

pub fn parse_date_months(s: &str) -> Option<f64> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok().map(months_since_1980)
}

/// Year and month of a month count (inverse to month precision).
pub fn months_to_year_month(m: f64) -> (i32, u32) {
    let whole = m.floor() as i32;
    (1980 + whole.div_euclid(12), whole.rem_euclid(12) as u32 + 1)
}

// ---------------------------------------------------------------- data

#[derive(Clone, Debug, PartialEq)]
pub struct TableData {
    pub name: String,
    /// `ID` followed by the schema columns.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub sensitive: Vec<bool>,
}

impl TableData {
    pub fn col_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.eq_ignore_ascii_case(name))
    }

    pub fn id(&self, row: usize) -> f64 {
        self.rows[row][0].as_num().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Database {
    pub tables: BTreeMap<String, TableData>,
}

impl Database {
    pub fn table(&self, name: &str) -> Option<&TableData> {
        self.tables.values().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn table_mut(&mut self, name: &str) -> Option<&mut TableData> {
        self.tables.values_mut().find(|t| t.name.eq_ignore_ascii_case(name))
    }

    pub fn insert(&mut self, t: TableData) {
        self.tables.insert(t.name.clone(), t);
    }

    /// Writes `<t>.csv` and `<t>_sensRows.csv` for every table.
    pub fn save(&self, dir: &Path, schema: &Schema) -> Result<()> {
        let io = |path: &Path, e: &dyn fmt::Display| SqlError::Io { path: path.into(), msg: e.to_string() };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
        for t in self.tables.values() {
            let path = dir.join(format!("{}.csv", t.name));
            let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, &e))?;
            w.write_record(&t.columns).map_err(|e| io(&path, &e))?;
            let types: Vec<Option<ColType>> =
                t.columns.iter().map(|c| schema.table(&t.name).and_then(|s| s.column(c)).map(|x| x.1)).collect();
            for r in &t.rows {
                let rec: Vec<String> = r
                    .iter()
                    .zip(&types)
                    .map(|(v, ty)| match (v, ty) {
                        (Value::Num(x), Some(ColType::Int)) | (Value::Num(x), None) if x.fract() == 0.0 => {
                            format!("{}", *x as i64)
                        }
                        (Value::Num(x), _) => format!("{x:?}"),
                        (Value::Str(s), _) => s.clone(),
                        (Value::Bool(b), _) => (*b as u8).to_string(),
                        (Value::Null, _) => String::new(),
                    })
                    .collect();
                w.write_record(&rec).map_err(|e| io(&path, &e))?;
            }
            w.flush().map_err(|e| io(&path, &e))?;
            let path = dir.join(format!("{}_sensRows.csv", t.name));
            let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, &e))?;
            w.write_record(["ID", "sensitive"]).map_err(|e| io(&path, &e))?;
            for (i, s) in t.sensitive.iter().enumerate() {
                w.write_record([format!("{}", t.id(i) as i64), (*s as u8).to_string()]).map_err(|e| io(&path, &e))?;
            }
            w.flush().map_err(|e| io(&path, &e))?;
        }
        Ok(())
    }
}

const SENS_SUFFIX: &str = "_sensRows";

impl Catalog for Database {
    fn relation(&self, name: &str) -> Option<Relation> {
        if let Some(t) = self.table(name) {
            return Some(Relation { columns: t.columns.clone(), rows: t.rows.clone() });
        }
        let lower = name.to_ascii_lowercase();
        let base = lower.strip_suffix(&SENS_SUFFIX.to_ascii_lowercase())?;
        let t = self.table(base)?;
        Some(Relation {
            columns: vec!["ID".into(), "sensitive".into()],
            rows: t.rows.iter().zip(&t.sensitive).map(|(r, s)| vec![r[0].clone(), Value::Bool(*s)]).collect(),
        })
    }
}

fn parse_cell(raw: &str, ty: ColType) -> Option<Value> {
    let s = raw.trim();
    Some(match ty {
        ColType::Text => Value::Str(raw.to_string()),
        ColType::Int => {
            let x: f64 = s.parse().ok()?;
            if x.fract() != 0.0 {
                return None;
            }
            Value::Num(x)
        }
        ColType::Real => Value::Num(s.parse().ok()?),
        ColType::DateMonths => Value::Num(s.parse().ok().or_else(|| parse_date_months(s))?),
    })
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" => Some(true),
        "0" | "false" | "f" | "no" => Some(false),
        _ => None,
    }
}

/// Loads `<table>.csv` and `<table>_sensRows.csv` for every schema table.
pub fn load_database(dir: &Path, schema: &Schema) -> Result<Database> {
    let mut db = Database::default();
    for ts in &schema.tables {
        let path = dir.join(format!("{}.csv", ts.name));
        let mut rd = csv::Reader::from_path(&path).map_err(|e| SqlError::Io { path: path.clone(), msg: e.to_string() })?;
        let data_err = |line: usize, msg: String| SqlError::Data { path: path.clone(), line, msg };
        let header: Vec<String> = rd.headers().map_err(|e| data_err(1, e.to_string()))?.iter().map(String::from).collect();
        if !header.first().is_some_and(|h| h.eq_ignore_ascii_case("ID")) {
            return Err(data_err(1, "first column must be ID".into()));
        }
        // schema column -> csv position
        let mut pos = Vec::new();
        for (c, _) in &ts.columns {
            let p = header
                .iter()
                .position(|h| h.eq_ignore_ascii_case(c))
                .ok_or_else(|| data_err(1, format!("missing column `{c}`")))?;
            pos.push(p);
        }
        let mut rows = Vec::new();
        let mut ids: BTreeMap<i64, usize> = BTreeMap::new();
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| data_err(line, e.to_string()))?;
            let id = parse_cell(&rec[0], ColType::Int).ok_or_else(|| data_err(line, format!("bad ID `{}`", &rec[0])))?;
            let key = id.as_num().unwrap() as i64;
            if ids.insert(key, rows.len()).is_some() {
                return Err(data_err(line, format!("duplicate ID {key}")));
            }
            let mut row = vec![id];
            for ((c, ty), p) in ts.columns.iter().zip(&pos) {
                let raw = rec.get(*p).ok_or_else(|| data_err(line, format!("missing value for `{c}`")))?;
                row.push(parse_cell(raw, *ty).ok_or_else(|| data_err(line, format!("`{raw}` is not a valid {ty:?} for `{c}`")))?);
            }
            rows.push(row);
        }
        let mut sensitive = vec![false; rows.len()];
        let spath = dir.join(format!("{}{SENS_SUFFIX}.csv", ts.name));
        let mut rd = csv::Reader::from_path(&spath).map_err(|e| SqlError::Io { path: spath.clone(), msg: e.to_string() })?;
        let serr = |line: usize, msg: String| SqlError::Data { path: spath.clone(), line, msg };
        for (i, rec) in rd.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| serr(line, e.to_string()))?;
            if rec.len() < 2 {
                return Err(serr(line, "expected ID,sensitive".into()));
            }
            let id: i64 = rec[0].trim().parse().map_err(|_| serr(line, format!("bad ID `{}`", &rec[0])))?;
            let flag = parse_flag(&rec[1]).ok_or_else(|| serr(line, format!("bad flag `{}`", &rec[1])))?;
            let r = *ids.get(&id).ok_or_else(|| serr(line, format!("ID {id} does not exist in {}", ts.name)))?;
            sensitive[r] = flag;
        }
        let mut columns = vec!["ID".to_string()];
        columns.extend(ts.columns.iter().map(|c| c.0.clone()));
        db.insert(TableData { name: ts.name.clone(), columns, rows, sensitive });
    }
    Ok(db)
}

// ---------------------------------------------------------------- queries

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Aggregator {
    Sum,
    Count,
    Product,
    Min,
    Max,
}

impl Aggregator {
    pub fn sql(self) -> &'static str {
        match self {
            Aggregator::Sum => "sum",
            Aggregator::Count => "count",
            Aggregator::Product => "product",
            Aggregator::Min => "min",
            Aggregator::Max => "max",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRef {
    pub name: String,
    pub alias: String,
}

/// Boolean structure over comparison atoms. Atoms are reader expressions
/// with qualified columns; `<>` is stored as `NOT (=)`.
#[derive(Clone, Debug, PartialEq)]
pub enum BoolExpr {
    Atom(Expr),
    And(Vec<BoolExpr>),
    Or(Vec<BoolExpr>),
    Not(Box<BoolExpr>),
}

impl BoolExpr {
    pub fn and(xs: Vec<BoolExpr>) -> BoolExpr {
        let mut out = Vec::new();
        for x in xs {
            match x {
                BoolExpr::And(ys) => out.extend(ys),
                y => out.push(y),
            }
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            BoolExpr::And(out)
        }
    }

    pub fn or(xs: Vec<BoolExpr>) -> BoolExpr {
        let mut out = Vec::new();
        for x in xs {
            match x {
                BoolExpr::Or(ys) => out.extend(ys),
                y => out.push(y),
            }
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            BoolExpr::Or(out)
        }
    }

    pub fn conjuncts(&self) -> Vec<&BoolExpr> {
        match self {
            BoolExpr::And(xs) => xs.iter().flat_map(|x| x.conjuncts()).collect(),
            x => vec![x],
        }
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, xs: &[BoolExpr], op: &str| {
            write!(f, "(")?;
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{x}")?;
            }
            write!(f, ")")
        };
        match self {
            BoolExpr::Atom(e) => write!(f, "{e}"),
            BoolExpr::And(xs) => join(f, xs, "AND"),
            BoolExpr::Or(xs) => join(f, xs, "OR"),
            BoolExpr::Not(x) => write!(f, "not({x})"),
        }
    }
}

/// A parsed query of the shape `SELECT aggr(expr) FROM tables WHERE pred`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySpec {
    pub aggregator: Aggregator,
    /// Aggregated expression; `1.0` for count.
    pub select: Expr,
    pub tables: Vec<TableRef>,
    pub predicate: Option<BoolExpr>,
}

impl fmt::Display for QuerySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.aggregator {
            Aggregator::Count => write!(f, "SELECT count(*)")?,
            a => write!(f, "SELECT {}({})", a.sql(), self.select)?,
        }
        write!(f, " FROM ")?;
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            if t.name == t.alias {
                write!(f, "{}", t.name)?;
            } else {
                write!(f, "{} {}", t.name, t.alias)?;
            }
        }
        if let Some(p) = &self.predicate {
            write!(f, " WHERE {p}")?;
        }
        write!(f, ";")
    }
}

fn unsupported<T>(pos: Pos, what: impl Into<String>) -> Result<T> {
    Err(SqlError::Unsupported { pos, what: what.into() })
}

fn first_subquery(e: &Expr) -> Option<Pos> {
    match e {
        Expr::Subquery(q) => Some(q.at),
        Expr::Neg(x) | Expr::Not(x) => first_subquery(x),
        Expr::Bin(_, a, b) => first_subquery(a).or_else(|| first_subquery(b)),
        Expr::Func(_, xs, _) => xs.iter().find_map(first_subquery),
        Expr::Case(ws, e) => ws
            .iter()
            .find_map(|(a, b)| first_subquery(a).or_else(|| first_subquery(b)))
            .or_else(|| e.as_deref().and_then(first_subquery)),
        Expr::In(x, xs, _) => first_subquery(x).or_else(|| xs.iter().find_map(first_subquery)),
        Expr::Between(x, l, h, _) => first_subquery(x).or_else(|| first_subquery(l)).or_else(|| first_subquery(h)),
        _ => None,
    }
}

struct Qualifier<'a> {
    tables: &'a [TableRef],
}

impl Qualifier<'_> {
    fn qualify(&self, e: &Expr) -> Result<Expr> {
        let q = |x: &Expr| self.qualify(x).map(Box::new);
        Ok(match e {
            Expr::Col(t, c, pos) => {
                let alias = match t {
                    Some(t) => self
                        .tables
                        .iter()
                        .find(|r| r.alias.eq_ignore_ascii_case(t))
                        .map(|r| r.alias.clone())
                        .ok_or_else(|| SqlError::Resolve(format!("table alias `{t}` at {pos}")))?,
                    None if self.tables.len() == 1 => self.tables[0].alias.clone(),
                    None => return Err(SqlError::Resolve(format!("column `{c}` at {pos} must be qualified"))),
                };
                Expr::Col(Some(alias), c.clone(), *pos)
            }
            Expr::Neg(x) => Expr::Neg(q(x)?),
            Expr::Not(x) => Expr::Not(q(x)?),
            Expr::Bin(op, a, b) => Expr::Bin(*op, q(a)?, q(b)?),
            Expr::Func(n, xs, p) => Expr::Func(n.clone(), xs.iter().map(|x| self.qualify(x)).collect::<Result<_>>()?, *p),
            Expr::Case(ws, els) => Expr::Case(
                ws.iter().map(|(a, b)| Ok((self.qualify(a)?, self.qualify(b)?))).collect::<Result<_>>()?,
                els.as_ref().map(|x| q(x)).transpose()?,
            ),
            Expr::In(x, xs, n) => Expr::In(q(x)?, xs.iter().map(|x| self.qualify(x)).collect::<Result<_>>()?, *n),
            Expr::Between(x, l, h, n) => Expr::Between(q(x)?, q(l)?, q(h)?, *n),
            other => other.clone(),
        })
    }

    fn boolean(&self, e: &Expr) -> Result<BoolExpr> {
        Ok(match e {
            Expr::Bin(BinOp::And, a, b) => BoolExpr::and(vec![self.boolean(a)?, self.boolean(b)?]),
            Expr::Bin(BinOp::Or, a, b) => BoolExpr::or(vec![self.boolean(a)?, self.boolean(b)?]),
            Expr::Not(x) => BoolExpr::Not(Box::new(self.boolean(x)?)),
            Expr::Bin(BinOp::Ne, a, b) => BoolExpr::Not(Box::new(BoolExpr::Atom(Expr::Bin(BinOp::Eq, q2(self, a)?, q2(self, b)?)))),
            Expr::Bin(op, ..) if op.is_comparison() => BoolExpr::Atom(self.qualify(e)?),
            Expr::Bool(_) => BoolExpr::Atom(e.clone()),
            Expr::In(x, xs, neg) => {
                let x = self.qualify(x)?;
                let alts = xs
                    .iter()
                    .map(|y| Ok(BoolExpr::Atom(Expr::Bin(BinOp::Eq, Box::new(x.clone()), Box::new(self.qualify(y)?)))))
                    .collect::<Result<Vec<_>>>()?;
                let b = BoolExpr::or(alts);
                if *neg {
                    BoolExpr::Not(Box::new(b))
                } else {
                    b
                }
            }
            Expr::Between(x, l, h, neg) => {
                let x = self.qualify(x)?;
                let b = BoolExpr::and(vec![
                    BoolExpr::Atom(Expr::Bin(BinOp::Ge, Box::new(x.clone()), Box::new(self.qualify(l)?))),
                    BoolExpr::Atom(Expr::Bin(BinOp::Le, Box::new(x), Box::new(self.qualify(h)?))),
                ]);
                if *neg {
                    BoolExpr::Not(Box::new(b))
                } else {
                    b
                }
            }
            Expr::Col(..) => return Err(SqlError::Type(format!("boolean column `{e}` in WHERE"))),
            other => return Err(SqlError::Type(format!("`{other}` is not a condition"))),
        })
    }
}

fn q2(q: &Qualifier<'_>, e: &Expr) -> Result<Box<Expr>> {
    q.qualify(e).map(Box::new)
}

/// Parses one query of the supported shape.
pub fn parse_query(sql: &str) -> Result<QuerySpec> {
    let q: Select = sqlread::parse_select(sql)?;
    if let Some(p) = q.distinct_at {
        return unsupported(p, "DISTINCT");
    }
    if let Some(p) = q.group_by_at {
        return unsupported(p, "GROUP BY");
    }
    let mut tables: Vec<TableRef> = Vec::new();
    for it in &q.from {
        match it {
            FromItem::Sub { query, .. } => return unsupported(query.at, "subquery in FROM"),
            FromItem::Table { name, alias, pos } => {
                if tables.iter().any(|t| t.alias.eq_ignore_ascii_case(alias)) {
                    return unsupported(*pos, format!("alias `{alias}` used twice"));
                }
                tables.push(TableRef { name: name.clone(), alias: alias.clone() });
            }
        }
    }
    if tables.is_empty() {
        return unsupported(q.at, "query without FROM");
    }
    for e in q.items.iter().map(|i| &i.0).chain(q.filter.as_ref()) {
        if let Some(p) = first_subquery(e) {
            return unsupported(p, "subquery");
        }
    }
    if q.items.len() != 1 {
        return unsupported(q.at, "exactly one aggregated select item is required");
    }
    let (aggregator, arg) = match &q.items[0].0 {
        Expr::Func(name, args, pos) => {
            let agg = match name.as_str() {
                "sum" => Aggregator::Sum,
                "count" => Aggregator::Count,
                "product" => Aggregator::Product,
                "min" => Aggregator::Min,
                "max" => Aggregator::Max,
                other => return unsupported(*pos, format!("aggregator `{other}`")),
            };
            match (agg, args.as_slice()) {
                (Aggregator::Count, [_]) => (agg, Expr::Num(1.0)),
                (_, [Expr::Star]) => return unsupported(*pos, format!("{name}(*)")),
                (_, [x]) => (agg, x.clone()),
                _ => return unsupported(*pos, format!("{name} needs one argument")),
            }
        }
        _ => return unsupported(q.at, "select item must be an aggregate"),
    };
    let ql = Qualifier { tables: &tables };
    let select = ql.qualify(&arg)?;
    let predicate = q.filter.as_ref().map(|w| ql.boolean(w)).transpose()?;
    Ok(QuerySpec { aggregator, select, tables, predicate })
}

// ---------------------------------------------------------------- validation

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn from_bin(op: BinOp) -> Option<CmpOp> {
        Some(match op {
            BinOp::Lt => CmpOp::Lt,
            BinOp::Le => CmpOp::Le,
            BinOp::Gt => CmpOp::Gt,
            BinOp::Ge => CmpOp::Ge,
            BinOp::Eq => CmpOp::Eq,
            _ => return None,
        })
    }

    pub fn holds(self, o: std::cmp::Ordering) -> bool {
        match self {
            CmpOp::Lt => o.is_lt(),
            CmpOp::Le => o.is_le(),
            CmpOp::Gt => o.is_gt(),
            CmpOp::Ge => o.is_ge(),
            CmpOp::Eq => o.is_eq(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TextTerm {
    Col(String),
    Lit(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum AtomKind {
    Num { op: CmpOp, lhs: ScalarExpr, rhs: ScalarExpr },
    Text { op: CmpOp, lhs: TextTerm, rhs: TextTerm },
    Like { lhs: TextTerm, pattern: String },
    Const(bool),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    /// Rendering with canonical qualified column names.
    pub sql: Expr,
    pub kind: AtomKind,
    pub columns: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Pred {
    Atom(Atom),
    And(Vec<Pred>),
    Or(Vec<Pred>),
    Not(Box<Pred>),
}

impl Pred {
    pub fn columns(&self) -> BTreeSet<String> {
        match self {
            Pred::Atom(a) => a.columns.clone(),
            Pred::And(xs) | Pred::Or(xs) => xs.iter().flat_map(Pred::columns).collect(),
            Pred::Not(x) => x.columns(),
        }
    }

    pub fn to_sql(&self) -> Expr {
        match self {
            Pred::Atom(a) => a.sql.clone(),
            Pred::And(xs) | Pred::Or(xs) => {
                let op = if matches!(self, Pred::And(_)) { BinOp::And } else { BinOp::Or };
                let mut it = xs.iter().map(Pred::to_sql);
                let first = it.next().unwrap_or(Expr::Bool(true));
                it.fold(first, |a, b| Expr::Bin(op, Box::new(a), Box::new(b)))
            }
            Pred::Not(x) => Expr::Not(Box::new(x.to_sql())),
        }
    }
}

/// Row access for predicate evaluation.
pub trait RowLookup {
    fn num(&self, col: &str) -> Option<f64>;
    fn text(&self, col: &str) -> Option<&str>;
}

fn text_value<'a>(t: &'a TextTerm, row: &'a dyn RowLookup) -> Option<&'a str> {
    match t {
        TextTerm::Col(c) => row.text(c),
        TextTerm::Lit(s) => Some(s),
    }
}

/// Exact boolean semantics.
pub fn eval_pred(p: &Pred, row: &dyn RowLookup) -> std::result::Result<bool, String> {
    Ok(match p {
        Pred::Atom(a) => match &a.kind {
            AtomKind::Const(b) => *b,
            AtomKind::Num { op, lhs, rhs } => {
                let env = |c: &str| row.num(c);
                let x = eval_scalar(lhs, &env).map_err(|e| e.to_string())?;
                let y = eval_scalar(rhs, &env).map_err(|e| e.to_string())?;
                x.partial_cmp(&y).is_some_and(|o| op.holds(o))
            }
            AtomKind::Text { op, lhs, rhs } => {
                let x = text_value(lhs, row).ok_or("missing text value")?;
                let y = text_value(rhs, row).ok_or("missing text value")?;
                op.holds(x.cmp(y))
            }
            AtomKind::Like { lhs, pattern } => sqlread::like(text_value(lhs, row).ok_or("missing text value")?, pattern),
        },
        Pred::And(xs) => {
            for x in xs {
                if !eval_pred(x, row)? {
                    return Ok(false);
                }
            }
            true
        }
        Pred::Or(xs) => {
            for x in xs {
                if eval_pred(x, row)? {
                    return Ok(true);
                }
            }
            false
        }
        Pred::Not(x) => !eval_pred(x, row)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundTable {
    pub alias: String,
    pub schema: TableSchema,
}

/// A query checked against a schema, with its predicate split into
/// data-independent row filters and the part that depends on sensitive
/// columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Context {
    pub query: QuerySpec,
    pub tables: Vec<BoundTable>,
    /// Aggregated expression over `alias.col` columns.
    pub select: ScalarExpr,
    /// Top-level conjuncts that mention no sensitive column.
    pub public: Vec<Pred>,
    /// Conjunction of the remaining conjuncts, if any.
    pub sensitive: Option<Pred>,
    /// `alias.col` for every column in a table norm.
    pub sensitive_columns: BTreeSet<String>,
    /// Full predicate for exact evaluation.
    pub predicate: Option<Pred>,
    /// Exponent combining the tables of the database norm.
    pub db_p: f64,
}

impl Context {
    pub fn is_public(&self, p: &Pred) -> bool {
        p.columns().is_disjoint(&self.sensitive_columns)
    }

    pub fn table(&self, alias: &str) -> Option<&BoundTable> {
        self.tables.iter().find(|t| t.alias == alias)
    }

    /// Table norm with variables renamed to `alias.col`.
    pub fn alias_norm(&self, alias: &str) -> NormExpr {
        let t = self.table(alias).expect("alias of this query");
        t.schema.norm.rename(&|v| format!("{alias}.{v}"))
    }

    /// Type of a qualified column.
    pub fn column_type(&self, qualified: &str) -> Option<ColType> {
        let (a, c) = qualified.split_once('.')?;
        self.table(a)?.schema.column(c).map(|x| x.1)
    }
}

enum Typed {
    Num(ScalarExpr),
    Text(TextTerm),
}

struct Typer<'a> {
    tables: &'a [BoundTable],
}

fn fold(e: ScalarExpr) -> ScalarExpr {
    if e.is_const().is_none() && e.columns().is_empty() {
        if let Ok(v) = eval_scalar(&e, &|_| None) {
            return ScalarExpr::Const(v);
        }
    }
    e
}

impl Typer<'_> {
    fn col(&self, t: &Option<String>, c: &str) -> Result<(String, ColType)> {
        let alias = t.as_deref().unwrap_or_default();
        let bt = self
            .tables
            .iter()
            .find(|b| b.alias == alias)
            .ok_or_else(|| SqlError::Resolve(format!("table alias `{alias}`")))?;
        let (name, ty) = bt
            .schema
            .column(c)
            .ok_or_else(|| SqlError::Resolve(format!("column `{alias}.{c}` (table {})", bt.schema.name)))?;
        Ok((format!("{alias}.{name}"), ty))
    }

    fn canon(&self, e: &Expr) -> Result<Expr> {
        Ok(match e {
            Expr::Col(t, c, p) => {
                let (q, _) = self.col(t, c)?;
                let (a, n) = q.split_once('.').unwrap();
                Expr::Col(Some(a.into()), n.into(), *p)
            }
            Expr::Neg(x) => Expr::Neg(Box::new(self.canon(x)?)),
            Expr::Not(x) => Expr::Not(Box::new(self.canon(x)?)),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(self.canon(a)?), Box::new(self.canon(b)?)),
            Expr::Func(n, xs, p) => Expr::Func(n.clone(), xs.iter().map(|x| self.canon(x)).collect::<Result<_>>()?, *p),
            other => other.clone(),
        })
    }

    fn term(&self, e: &Expr) -> Result<Typed> {
        use ScalarExpr as S;
        let num = |e: &Expr| -> Result<ScalarExpr> {
            match self.term(e)? {
                Typed::Num(x) => Ok(x),
                Typed::Text(_) => Err(SqlError::Type(format!("`{e}` is text where a number is needed"))),
            }
        };
        Ok(Typed::Num(fold(match e {
            Expr::Num(x) => S::Const(*x),
            Expr::Str(s) => return Ok(Typed::Text(TextTerm::Lit(s.clone()))),
            Expr::Col(t, c, _) => {
                let (q, ty) = self.col(t, c)?;
                if ty == ColType::Text {
                    return Ok(Typed::Text(TextTerm::Col(q)));
                }
                S::Col(q)
            }
            Expr::Neg(x) => mk_prod(vec![S::Const(-1.0), num(x)?]),
            Expr::Bin(BinOp::Add, a, b) => S::Sum(vec![num(a)?, num(b)?]),
            Expr::Bin(BinOp::Sub, a, b) => minus(num(a)?, num(b)?),
            Expr::Bin(BinOp::Mul, a, b) => S::Prod(vec![num(a)?, num(b)?]),
            Expr::Bin(BinOp::Div, a, b) => {
                let (a, b) = (num(a)?, num(b)?);
                match b.is_const() {
                    Some(c) => S::Prod(vec![a, S::Const(1.0 / c)]),
                    None => a.div(b),
                }
            }
            Expr::Bin(BinOp::Pow, a, b) => power(num(a)?, num(b)?, e)?,
            Expr::Func(name, args, pos) => {
                let xs: Vec<ScalarExpr> = args.iter().map(num).collect::<Result<_>>()?;
                match (name.as_str(), xs.len()) {
                    ("exp", 1) => S::Exp(1.0, Box::new(xs[0].clone())),
                    ("abs", 1) => xs[0].clone().abs(),
                    ("ln", 1) => S::Ln(Box::new(xs[0].clone())),
                    ("sqrt", 1) => S::Power(Box::new(xs[0].clone()), 0.5),
                    ("power", 2) => power(xs[0].clone(), xs[1].clone(), e)?,
                    ("greatest", n) if n > 0 => S::Max(xs),
                    ("least", n) if n > 0 => S::Min(xs),
                    _ => return unsupported(*pos, format!("function `{name}` with {} arguments", xs.len())),
                }
            }
            other => return Err(SqlError::Type(format!("unsupported expression `{other}`"))),
        })))
    }

    fn pred(&self, b: &BoolExpr) -> Result<Pred> {
        Ok(match b {
            BoolExpr::And(xs) => Pred::And(xs.iter().map(|x| self.pred(x)).collect::<Result<_>>()?),
            BoolExpr::Or(xs) => Pred::Or(xs.iter().map(|x| self.pred(x)).collect::<Result<_>>()?),
            BoolExpr::Not(x) => Pred::Not(Box::new(self.pred(x)?)),
            BoolExpr::Atom(e) => {
                let sql = self.canon(e)?;
                let kind = match e {
                    Expr::Bool(v) => AtomKind::Const(*v),
                    Expr::Bin(BinOp::Like, a, p) => {
                        let lhs = match self.term(a)? {
                            Typed::Text(t) => t,
                            Typed::Num(_) => return Err(SqlError::Type(format!("LIKE on numeric expression `{a}`"))),
                        };
                        match p.as_ref() {
                            Expr::Str(s) => AtomKind::Like { lhs, pattern: s.clone() },
                            _ => return Err(SqlError::Type("LIKE pattern must be a string literal".into())),
                        }
                    }
                    Expr::Bin(op, a, c) => {
                        let op = CmpOp::from_bin(*op).ok_or_else(|| SqlError::Type(format!("`{e}` is not a comparison")))?;
                        match (self.term(a)?, self.term(c)?) {
                            (Typed::Num(x), Typed::Num(y)) => AtomKind::Num { op, lhs: x, rhs: y },
                            (Typed::Text(x), Typed::Text(y)) => AtomKind::Text { op, lhs: x, rhs: y },
                            (Typed::Num(x), Typed::Text(TextTerm::Lit(s))) => {
                                AtomKind::Num { op, lhs: x, rhs: ScalarExpr::Const(date_literal(&s)?) }
                            }
                            (Typed::Text(TextTerm::Lit(s)), Typed::Num(y)) => {
                                AtomKind::Num { op, lhs: ScalarExpr::Const(date_literal(&s)?), rhs: y }
                            }
                            _ => return Err(SqlError::Type(format!("`{e}` compares text with a number"))),
                        }
                    }
                    other => return Err(SqlError::Type(format!("`{other}` is not a condition"))),
                };
                let columns = match &kind {
                    AtomKind::Num { lhs, rhs, .. } => lhs.columns().into_iter().chain(rhs.columns()).collect(),
                    AtomKind::Text { lhs, rhs, .. } => [lhs, rhs]
                        .into_iter()
                        .filter_map(|t| if let TextTerm::Col(c) = t { Some(c.clone()) } else { None })
                        .collect(),
                    AtomKind::Like { lhs: TextTerm::Col(c), .. } => [c.clone()].into(),
                    _ => BTreeSet::new(),
                };
                Pred::Atom(Atom { sql, kind, columns })
            }
        })
    }
}

fn date_literal(s: &str) -> Result<f64> {
    parse_date_months(s).ok_or_else(|| SqlError::Type(format!("'{s}' is neither a number nor a date")))
}

/// `a − b` with a constant `b` folded into a negative constant term.
pub fn minus(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr {
    match b.is_const() {
        Some(c) => ScalarExpr::Sum(vec![a, ScalarExpr::Const(-c)]),
        None => ScalarExpr::Sum(vec![a, ScalarExpr::Prod(vec![ScalarExpr::Const(-1.0), b])]),
    }
}

fn power(a: ScalarExpr, b: ScalarExpr, e: &Expr) -> Result<ScalarExpr> {
    let r = b.is_const().ok_or_else(|| SqlError::Type(format!("exponent in `{e}` must be constant")))?;
    Ok(if r >= 0.0 {
        ScalarExpr::Power(Box::new(a), r)
    } else {
        ScalarExpr::Exp(r, Box::new(ScalarExpr::Ln(Box::new(a))))
    })
}

/// Checks a query against the schema and splits its predicate.
pub fn validate(q: &QuerySpec, s: &Schema) -> Result<Context> {
    let mut tables = Vec::new();
    for t in &q.tables {
        let schema = s.table(&t.name).ok_or_else(|| SqlError::Resolve(format!("table `{}`", t.name)))?;
        if !schema.norm.is_empty() && tables.iter().any(|b: &BoundTable| b.schema.name == schema.name) {
            return unsupported(Pos::default(), format!("self-join of sensitive table `{}`", schema.name));
        }
        tables.push(BoundTable { alias: t.alias.clone(), schema: schema.clone() });
    }
    let typer = Typer { tables: &tables };
    let select = match typer.term(&q.select)? {
        Typed::Num(x) => x,
        Typed::Text(_) => return Err(SqlError::Type("aggregated expression is text".into())),
    };
    let sensitive_columns: BTreeSet<String> = tables
        .iter()
        .flat_map(|t| t.schema.sensitive_columns().into_iter().map(move |c| format!("{}.{c}", t.alias)))
        .collect();
    let predicate = q.predicate.as_ref().map(|p| typer.pred(p)).transpose()?;
    let mut public = Vec::new();
    let mut sens = Vec::new();
    if let Some(p) = &predicate {
        let conj: Vec<Pred> = match p {
            Pred::And(xs) => xs.clone(),
            x => vec![x.clone()],
        };
        for c in conj {
            if c.columns().is_disjoint(&sensitive_columns) {
                public.push(c);
            } else {
                sens.push(c);
            }
        }
    }
    let sensitive = match sens.len() {
        0 => None,
        1 => sens.pop(),
        _ => Some(Pred::And(sens)),
    };
    Ok(Context { query: q.clone(), tables, select, public, sensitive, sensitive_columns, predicate, db_p: s.db_p })
}
