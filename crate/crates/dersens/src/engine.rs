//! In-process evaluator for initial queries, modified queries and
//! sensitivity plans.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::analyzer::{GlobalKind, SensitivityPlan};
use crate::norm::INF;
use crate::smooth::{eval_scalar, ScalarExpr};
use crate::sql::{eval_pred, Aggregator, Context, Database, Pred, RowLookup, TableData, TableRef};
use crate::sqlread::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("table `{0}` is not loaded")]
    MissingTable(String),
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error("{0} over an empty set of rows")]
    EmptyAggregate(&'static str),
    #[error("result overflowed to {0}")]
    Overflow(f64),
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Sum by recursive halving.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Filtered cross product of the query tables, as row indices.
pub struct Join<'a> {
    pub tables: Vec<&'a TableData>,
    pub aliases: Vec<String>,
    cols: HashMap<String, (usize, usize)>,
    pub rows: Vec<Vec<usize>>,
}

struct Row<'a, 'b> {
    join: &'b Join<'a>,
    idx: &'b [usize],
    extra: &'b HashMap<String, f64>,
}

impl Join<'_> {
    fn locate(&self, col: &str) -> Option<(usize, usize)> {
        self.cols.get(col).or_else(|| self.cols.get(&col.to_ascii_lowercase())).copied()
    }

    fn value(&self, idx: &[usize], col: &str) -> Option<&Value> {
        let (t, c) = self.locate(col)?;
        idx.get(t).map(|&r| &self.tables[t].rows[r][c])
    }
}

impl RowLookup for Row<'_, '_> {
    fn num(&self, col: &str) -> Option<f64> {
        match self.join.value(self.idx, col) {
            Some(v) => v.as_num(),
            None => self.extra.get(col).copied(),
        }
    }

    fn text(&self, col: &str) -> Option<&str> {
        match self.join.value(self.idx, col)? {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

fn alias_of(col: &str) -> &str {
    col.split_once('.').map_or(col, |(a, _)| a)
}

/// Nested-loop join; each filter runs as soon as its last table is bound.
pub fn join<'a>(db: &'a Database, refs: &[TableRef], filters: &[Pred]) -> Result<Join<'a>> {
    let mut tables = Vec::new();
    let mut cols = HashMap::new();
    for (i, r) in refs.iter().enumerate() {
        let t = db.table(&r.name).ok_or_else(|| EngineError::MissingTable(r.name.clone()))?;
        for (c, name) in t.columns.iter().enumerate() {
            let key = format!("{}.{}", r.alias, name);
            cols.insert(key.to_ascii_lowercase(), (i, c));
            cols.insert(key, (i, c));
        }
        tables.push(t);
    }
    let aliases: Vec<String> = refs.iter().map(|r| r.alias.clone()).collect();
    let mut at_depth: Vec<Vec<&Pred>> = vec![Vec::new(); refs.len().max(1)];
    for f in filters {
        let d = f
            .columns()
            .iter()
            .filter_map(|c| aliases.iter().position(|a| a == alias_of(c)))
            .max()
            .unwrap_or(0);
        at_depth[d].push(f);
    }
    let mut j = Join { tables, aliases, cols, rows: Vec::new() };
    if refs.is_empty() {
        return Ok(j);
    }
    let mut out = Vec::new();
    let mut idx = Vec::with_capacity(refs.len());
    let empty = HashMap::new();
    walk(&j, &at_depth, &mut idx, &empty, &mut out)?;
    j.rows = out;
    Ok(j)
}

fn walk(
    j: &Join<'_>,
    at_depth: &[Vec<&Pred>],
    idx: &mut Vec<usize>,
    empty: &HashMap<String, f64>,
    out: &mut Vec<Vec<usize>>,
) -> Result<()> {
    let d = idx.len();
    if d == j.tables.len() {
        out.push(idx.clone());
        return Ok(());
    }
    for r in 0..j.tables[d].rows.len() {
        idx.push(r);
        let row = Row { join: j, idx, extra: empty };
        let mut pass = true;
        for f in &at_depth[d] {
            if !eval_pred(f, &row).map_err(EngineError::Eval)? {
                pass = false;
                break;
            }
        }
        if pass {
            walk(j, at_depth, idx, empty, out)?;
        }
        idx.pop();
    }
    Ok(())
}

fn eval(e: &ScalarExpr, row: &Row<'_, '_>) -> Result<f64> {
    eval_scalar(e, &|c| row.num(c)).map_err(|err| EngineError::Eval(err.to_string()))
}

fn finite(x: f64) -> Result<f64> {
    if x.is_infinite() {
        Err(EngineError::Overflow(x))
    } else {
        Ok(x)
    }
}

fn aggregate(aggr: Aggregator, xs: &[f64]) -> Result<f64> {
    let v = match aggr {
        Aggregator::Sum | Aggregator::Count => pairwise_sum(xs),
        Aggregator::Product => xs.iter().product(),
        Aggregator::Min if xs.is_empty() => return Err(EngineError::EmptyAggregate("MIN")),
        Aggregator::Max if xs.is_empty() => return Err(EngineError::EmptyAggregate("MAX")),
        Aggregator::Min => xs.iter().copied().fold(INF, f64::min),
        Aggregator::Max => xs.iter().copied().fold(-INF, f64::max),
    };
    finite(v)
}

/// Exact value of the original query.
pub fn run_initial(ctx: &Context, db: &Database) -> Result<f64> {
    let j = join(db, &ctx.query.tables, &ctx.public)?;
    let empty = HashMap::new();
    let mut xs = Vec::new();
    for idx in &j.rows {
        let row = Row { join: &j, idx, extra: &empty };
        if let Some(p) = &ctx.sensitive {
            if !eval_pred(p, &row).map_err(EngineError::Eval)? {
                continue;
            }
        }
        xs.push(match ctx.query.aggregator {
            Aggregator::Count => 1.0,
            _ => eval(&ctx.select, &row)?,
        });
    }
    aggregate(ctx.query.aggregator, &xs)
}

/// Joined rows with per-row pseudo-columns and the plan's globals.
struct Prepared<'a> {
    join: Join<'a>,
    extras: Vec<HashMap<String, f64>>,
}

fn prepare<'a>(plan: &SensitivityPlan, db: &'a Database) -> Result<Prepared<'a>> {
    let j = join(db, &plan.tables, &plan.public)?;
    let mut extras = Vec::with_capacity(j.rows.len());
    let empty = HashMap::new();
    for idx in &j.rows {
        let row = Row { join: &j, idx, extra: &empty };
        let mut m = HashMap::new();
        for (name, p) in &plan.pseudo {
            let v = eval_pred(p, &row).map_err(EngineError::Eval)?;
            m.insert(name.clone(), if v { 1.0 } else { 0.0 });
        }
        extras.push(m);
    }
    for g in &plan.globals {
        let e = match &g.kind {
            GlobalKind::Spread(e) | GlobalKind::TwiceMax(e) | GlobalKind::Product(e) => e,
        };
        let mut xs = Vec::with_capacity(j.rows.len());
        for (idx, extra) in j.rows.iter().zip(&extras) {
            xs.push(eval(e, &Row { join: &j, idx, extra })?);
        }
        let v = match &g.kind {
            GlobalKind::Spread(_) if xs.is_empty() => 0.0,
            GlobalKind::Spread(_) => {
                xs.iter().copied().fold(-INF, f64::max) - xs.iter().copied().fold(INF, f64::min)
            }
            GlobalKind::TwiceMax(_) => 2.0 * xs.iter().copied().fold(0.0, f64::max),
            GlobalKind::Product(_) => xs.iter().product(),
        };
        let v = finite(v)?;
        for m in &mut extras {
            m.insert(g.name.clone(), v);
        }
    }
    Ok(Prepared { join: j, extras })
}

/// Value of the modified query.
pub fn run_modified(plan: &SensitivityPlan, db: &Database) -> Result<f64> {
    let p = prepare(plan, db)?;
    let mut xs = Vec::with_capacity(p.join.rows.len());
    for (idx, extra) in p.join.rows.iter().zip(&p.extras) {
        xs.push(eval(&plan.row, &Row { join: &p.join, idx, extra })?);
    }
    aggregate(plan.aggregator, &xs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupValue {
    pub table: String,
    pub id: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub value: f64,
    /// Sensitivity contributed by each sensitive table.
    pub per_table: Vec<(String, f64)>,
    /// Summed bound for each sensitive row.
    pub groups: Vec<GroupValue>,
    pub argmax: Option<GroupValue>,
}

fn combine(xs: &[f64], q: f64) -> f64 {
    if q == INF {
        xs.iter().copied().fold(0.0, f64::max)
    } else if q == 1.0 {
        pairwise_sum(xs)
    } else {
        let ys: Vec<f64> = xs.iter().map(|x| x.powf(q)).collect();
        pairwise_sum(&ys).powf(1.0 / q)
    }
}

/// Derivative-sensitivity bound of the modified query on `db`.
pub fn run_sensitivity(plan: &SensitivityPlan, db: &Database) -> Result<SensitivityReport> {
    let p = prepare(plan, db)?;
    let mut per_table = Vec::new();
    let mut groups = Vec::new();
    for part in &plan.parts {
        let t = p.join.aliases.iter().position(|a| *a == part.alias).expect("plan alias in join");
        let table = p.join.tables[t];
        let mut acc: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (idx, extra) in p.join.rows.iter().zip(&p.extras) {
            if !table.sensitive[idx[t]] {
                continue;
            }
            let v = eval(&part.term, &Row { join: &p.join, idx, extra })?;
            acc.entry(idx[t]).or_default().push(v.abs());
        }
        let sums: Vec<GroupValue> = acc
            .into_iter()
            .map(|(r, xs)| GroupValue { table: table.name.clone(), id: table.id(r), value: pairwise_sum(&xs) })
            .collect();
        let vals: Vec<f64> = sums.iter().map(|g| g.value).collect();
        per_table.push((table.name.clone(), finite(combine(&vals, part.rows_q))?));
        groups.extend(sums);
    }
    let vals: Vec<f64> = per_table.iter().map(|(_, v)| *v).collect();
    let value = finite(combine(&vals, plan.db_q))?;
    let argmax = groups.iter().fold(None::<&GroupValue>, |m, g| match m {
        Some(b) if b.value >= g.value => Some(b),
        _ => Some(g),
    });
    Ok(SensitivityReport { value, per_table, argmax: argmax.cloned(), groups })
}
