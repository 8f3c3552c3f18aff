//! Rewrites a validated query into a continuous modified query and a
//! per-sensitive-row sensitivity plan.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::norm::{self, dual_exponent, Comparison, NormExpr, ScalingWitness, INF};
use crate::smooth::{self, mk_prod, BoundContext, ScalarExpr, SmoothError};
use crate::sql::{minus, AtomKind, CmpOp, Context, Pred, TableRef};

pub use crate::sql::Aggregator;

use ScalarExpr as E;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyzeError {
    #[error("requested β = {requested} is not achievable; the smallest achievable β is {min_beta}")]
    Infeasible { requested: f64, min_beta: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
    #[error(transparent)]
    Norm(#[from] norm::NormError),
}

pub type Result<T> = std::result::Result<T, AnalyzeError>;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalyzeOptions {
    /// Sigmoid and tauoid precision.
    pub alpha: f64,
    /// Requested smoothness of the sensitivity bound.
    pub beta: f64,
    /// Lower OR as x + y (caller asserts mutually exclusive alternatives).
    pub xor: bool,
    /// Exact clamped comparisons for data whose values differ by at least
    /// `1/k` (`k = 1` for integers).
    pub precise: Option<f64>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions { alpha: 5.0, beta: 0.1, xor: false, precise: None }
    }
}

// ---------------------------------------------------------------- lowering

fn sort_by_text(mut xs: Vec<ScalarExpr>) -> Vec<ScalarExpr> {
    xs.sort_by_cached_key(|x| x.to_string());
    xs
}

fn clamp01(x: ScalarExpr) -> ScalarExpr {
    E::Min(vec![E::Const(1.0), E::Max(vec![E::Const(0.0), x])])
}

/// Continuous indicator of a numeric comparison.
pub fn lower_comparison(op: CmpOp, lhs: &ScalarExpr, rhs: &ScalarExpr, opts: &AnalyzeOptions) -> ScalarExpr {
    let a = opts.alpha;
    // d > 0 (or d = 0) exactly when the comparison holds
    let d = match op {
        CmpOp::Lt | CmpOp::Le => minus(rhs.clone(), lhs.clone()),
        CmpOp::Gt | CmpOp::Ge | CmpOp::Eq => minus(lhs.clone(), rhs.clone()),
    };
    match (opts.precise, op) {
        (None, CmpOp::Eq) => E::Tauoid(a, Box::new(d)),
        (None, _) => E::Sigmoid(a, Box::new(d)),
        (Some(k), CmpOp::Eq) => clamp01(mk_prod(vec![E::Const(k), d.abs()])).one_minus(),
        (Some(k), CmpOp::Lt | CmpOp::Gt) => clamp01(mk_prod(vec![E::Const(k), d])),
        (Some(k), _) => clamp01(E::Sum(vec![mk_prod(vec![E::Const(k), d]), E::Const(1.0)])),
    }
}

/// Lowers boolean predicates to [0,1]-valued expressions. Maximal
/// subformulas over public columns become pseudo-columns whose values are
/// computed exactly per row.
pub struct Lowerer<'a> {
    pub opts: &'a AnalyzeOptions,
    pub sensitive: &'a BTreeSet<String>,
    pub pseudo: Vec<(String, Pred)>,
}

impl<'a> Lowerer<'a> {
    pub fn new(opts: &'a AnalyzeOptions, sensitive: &'a BTreeSet<String>) -> Self {
        Lowerer { opts, sensitive, pseudo: Vec::new() }
    }

    fn public(&self, p: &Pred) -> bool {
        p.columns().is_disjoint(self.sensitive)
    }

    fn pseudo_col(&mut self, p: Pred) -> ScalarExpr {
        let name = format!("__pub{}__", self.pseudo.len());
        self.pseudo.push((name.clone(), p));
        E::Col(name)
    }

    pub fn lower(&mut self, p: &Pred) -> ScalarExpr {
        if self.public(p) && !matches!(p, Pred::Atom(a) if matches!(a.kind, AtomKind::Const(_))) {
            return self.pseudo_col(p.clone());
        }
        match p {
            Pred::Atom(a) => match &a.kind {
                AtomKind::Const(b) => E::Const(if *b { 1.0 } else { 0.0 }),
                AtomKind::Num { op, lhs, rhs } => lower_comparison(*op, lhs, rhs, self.opts),
                // text atoms never mention sensitive columns
                _ => unreachable!("text atom on sensitive data"),
            },
            Pred::And(xs) => {
                let (pubs, rest): (Vec<&Pred>, Vec<&Pred>) = xs.iter().partition(|x| self.public(x));
                let mut fs: Vec<ScalarExpr> = rest.into_iter().map(|x| self.lower(x)).collect();
                match pubs.len() {
                    0 => {}
                    1 => fs.push(self.pseudo_col(pubs[0].clone())),
                    _ => fs.push(self.pseudo_col(Pred::And(pubs.into_iter().cloned().collect()))),
                }
                let fs = sort_by_text(fs);
                if fs.len() == 1 {
                    fs.into_iter().next().unwrap()
                } else {
                    E::Prod(fs)
                }
            }
            Pred::Or(xs) => {
                let fs: Vec<ScalarExpr> = xs.iter().map(|x| self.lower(x)).collect();
                if self.opts.xor {
                    let fs = sort_by_text(fs);
                    if fs.len() == 1 {
                        return fs.into_iter().next().unwrap();
                    }
                    return E::Sum(fs);
                }
                let mut it = fs.into_iter();
                let first = it.next().expect("non-empty OR");
                it.fold(first, |acc, y| E::Sum(vec![acc.clone(), y.clone(), E::Prod(vec![E::Const(-1.0), acc, y])]))
            }
            Pred::Not(x) => self.lower(x).one_minus(),
        }
    }
}

/// Lowers a predicate with every atom treated as sensitive.
pub fn lower_predicate(p: &Pred, opts: &AnalyzeOptions) -> ScalarExpr {
    let all: BTreeSet<String> = p.columns();
    let mut l = Lowerer::new(opts, &all);
    let cols = p.columns();
    if cols.is_empty() {
        // constant predicates
        if let Pred::Atom(a) = p {
            if let AtomKind::Const(b) = a.kind {
                return E::Const(if b { 1.0 } else { 0.0 });
            }
        }
    }
    l.lower(p)
}

pub const DELTA: &str = "__delta__";
pub const BIG_D: &str = "__bound2__";
pub const PROD: &str = "__produb__";

/// Row term of the modified query for a row value `f` and indicator `σ`.
pub fn lower_aggregation(aggr: Aggregator, f: ScalarExpr, sigma: Option<ScalarExpr>) -> ScalarExpr {
    let Some(s) = sigma else {
        return match aggr {
            Aggregator::Count => E::Const(1.0).abs(),
            _ => f,
        };
    };
    match aggr {
        Aggregator::Sum => E::Prod(vec![f, s]),
        Aggregator::Count => s.abs(),
        Aggregator::Product => E::Sum(vec![E::Prod(vec![s.clone(), f]), s.one_minus()]),
        Aggregator::Min => E::Sum(vec![f, E::Prod(vec![s.one_minus(), E::col(DELTA)])]),
        Aggregator::Max => E::Sum(vec![f, E::Prod(vec![E::Const(-1.0), s.one_minus(), E::col(DELTA)])]),
    }
}

// ---------------------------------------------------------------- norms

/// Scaling that makes the query norm a lower bound of the database norm.
pub fn align_norms(query: &NormExpr, db: &NormExpr) -> Result<ScalingWitness> {
    if let Comparison::Proof(_) = norm::compare(query, db)? {
        return Ok(ScalingWitness::identity(query.vars()));
    }
    let e = norm::scale_elaborate(query, db)?;
    let s = norm::scale_straightforward(query, db)?;
    Ok(if e.dominates(&s) { e } else { s })
}

/// ℓ1 norm over the occurrences of `db`'s columns in `f`, each leaf scaled
/// by the column's weight in `db`.
pub fn occurrence_norm(f: &ScalarExpr, db: &NormExpr) -> NormExpr {
    let w = norm::normalize(db).leaf_weights();
    let mut leaves = Vec::new();
    for (c, k) in f.column_occurrences() {
        if let Some(&wc) = w.get(&c) {
            for _ in 0..k {
                leaves.push(NormExpr::scaled(wc, NormExpr::var(&c)));
            }
        }
    }
    NormExpr::lp(1.0, leaves)
}

/// Per-column derivative factors of `f` w.r.t. `db` and the witness used.
pub fn diff_factors(f: &ScalarExpr, db: &NormExpr) -> Result<(BTreeMap<String, f64>, ScalingWitness)> {
    let nq = occurrence_norm(f, db);
    if nq.is_empty() {
        return Ok((BTreeMap::new(), ScalingWitness::identity(Vec::new())));
    }
    let w = align_norms(&nq, db)?;
    let weights = norm::normalize(db).leaf_weights();
    let factors = nq.vars().into_iter().map(|c| (c.clone(), 1.0 / (weights[&c] * w.effective(&c)))).collect();
    Ok((factors, w))
}

// ---------------------------------------------------------------- plan

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum GlobalKind {
    /// `max f − min f` over the joined rows.
    Spread(#[serde(skip)] ScalarExpr),
    /// `2·max e` over the joined rows.
    TwiceMax(#[serde(skip)] ScalarExpr),
    /// `Π e` over the joined rows.
    Product(#[serde(skip)] ScalarExpr),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Global {
    pub name: String,
    pub kind: GlobalKind,
}

/// Sensitivity contribution of one sensitive table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TablePlan {
    pub alias: String,
    pub table: String,
    /// Bound on the derivative sensitivity of one joined row w.r.t. the
    /// row of this table it contains; summed per sensitive row.
    #[serde(skip)]
    pub term: ScalarExpr,
    pub factors: BTreeMap<String, f64>,
    pub witness: ScalingWitness,
    pub beta: f64,
    /// Exponent combining the per-row sums (dual of the rows exponent).
    pub rows_q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityPlan {
    pub aggregator: Aggregator,
    pub tables: Vec<TableRef>,
    /// Exact row filters applied before anything else.
    pub public: Vec<Pred>,
    /// Pseudo-columns holding public subformulas of the lowered predicate.
    pub pseudo: Vec<(String, Pred)>,
    /// Aggregated expression and exact predicate of the original query.
    pub select: ScalarExpr,
    pub predicate: Option<Pred>,
    pub sigma: Option<ScalarExpr>,
    /// Row term of the modified query.
    pub row: ScalarExpr,
    pub globals: Vec<Global>,
    pub parts: Vec<TablePlan>,
    /// Exponent combining the tables (dual of the database exponent).
    pub db_q: f64,
    pub beta: f64,
    pub options: AnalyzeOptions,
    pub warnings: Vec<String>,
}

fn smoothness_norm(ctx: &Context) -> NormExpr {
    let parts: Vec<NormExpr> =
        ctx.tables.iter().filter(|t| !t.schema.norm.is_empty()).map(|t| ctx.alias_norm(&t.alias)).collect();
    let n = norm::normalize(&NormExpr::lp(ctx.db_p, parts));
    if n.is_tree() {
        n
    } else {
        norm::hammer_bounds(&n).0.to_norm()
    }
}

struct Bounds {
    ubf: ScalarExpr,
    ubds: ScalarExpr,
    beta: f64,
}

fn bound(f: &ScalarExpr, beta: f64, tnorm: &NormExpr, diff: &BTreeMap<String, f64>, min_beta: &mut f64, scale: f64) -> Result<Option<Bounds>> {
    let sb = smooth::smooth_bound_ctx(f, &BoundContext { beta, smooth_norm: tnorm.clone(), diff: diff.clone() })?;
    if !sb.feasible {
        *min_beta = min_beta.max(sb.beta * scale);
        return Ok(None);
    }
    Ok(Some(Bounds { ubf: sb.ubf, ubds: sb.ubds, beta: sb.beta }))
}

/// Builds the modified query and the sensitivity plan.
pub fn build_plan(ctx: &Context, opts: &AnalyzeOptions) -> Result<SensitivityPlan> {
    if !(opts.beta > 0.0) || !(opts.alpha > 0.0) {
        return Err(AnalyzeError::Unsupported("α and β must be positive".into()));
    }
    let mut low = Lowerer::new(opts, &ctx.sensitive_columns);
    let sigma = ctx.sensitive.as_ref().map(|p| low.lower(p));
    let aggr = ctx.query.aggregator;
    let f = ctx.select.clone();
    let row = lower_aggregation(aggr, f.clone(), sigma.clone());
    let tnorm = smoothness_norm(ctx);
    let mut globals = Vec::new();
    let mut parts = Vec::new();
    let mut warnings = Vec::new();
    let mut min_beta: f64 = 0.0;
    let sensitive_tables: Vec<_> = ctx.tables.iter().filter(|t| !t.schema.norm.is_empty()).collect();
    if sensitive_tables.is_empty() {
        warnings.push("no table has sensitive columns; sensitivity is 0".into());
    }
    if matches!(aggr, Aggregator::Min | Aggregator::Max) {
        globals.push(Global { name: DELTA.into(), kind: GlobalKind::Spread(f.clone()) });
    }
    if aggr == Aggregator::Product && !sensitive_tables.is_empty() {
        if ctx.tables.len() != 1 || sensitive_tables[0].schema.rows_p != 1.0 {
            return Err(AnalyzeError::Unsupported(
                "PRODUCT sensitivity needs a single table whose rows are combined by ℓ1".into(),
            ));
        }
    }
    for t in sensitive_tables {
        let n = ctx.alias_norm(&t.alias);
        let rows_q = dual_exponent(t.schema.rows_p);
        let (term, factors, witness, beta) = match aggr {
            Aggregator::Sum | Aggregator::Count | Aggregator::Product => {
                let (factors, witness) = diff_factors(&row, &n)?;
                let Some(b) = bound(&row, opts.beta, &tnorm, &factors, &mut min_beta, 1.0)? else { continue };
                let term = if aggr == Aggregator::Product {
                    if globals.is_empty() {
                        globals.push(Global { name: PROD.into(), kind: GlobalKind::Product(b.ubf.clone()) });
                    }
                    if b.ubds.is_const() == Some(0.0) {
                        b.ubds
                    } else {
                        E::Prod(vec![b.ubds, E::col(PROD), E::Power(Box::new(b.ubf), -1.0)])
                    }
                } else {
                    b.ubds
                };
                (term, factors, witness, b.beta)
            }
            Aggregator::Min | Aggregator::Max => {
                // three bounds multiplied pairwise at most: each gets β/2
                let half = opts.beta / 2.0;
                let (ff, wf) = diff_factors(&f, &n)?;
                let Some(bf) = bound(&f, half, &tnorm, &ff, &mut min_beta, 2.0)? else { continue };
                let mut factors = ff;
                let mut terms = vec![mk_prod(vec![E::Const(3.0), bf.ubds])];
                let mut beta = bf.beta;
                if let Some(s) = &sigma {
                    let (fs, _) = diff_factors(s, &n)?;
                    let Some(bs) = bound(s, half, &tnorm, &fs, &mut min_beta, 2.0)? else { continue };
                    if bs.ubds.is_const() != Some(0.0) {
                        if !globals.iter().any(|g| g.name == BIG_D) {
                            globals.push(Global { name: BIG_D.into(), kind: GlobalKind::TwiceMax(bf.ubf.clone()) });
                        }
                        terms.push(E::ZeroGuard(Box::new(bs.ubds), Box::new(E::col(BIG_D))));
                        beta = beta.max(bs.beta + bf.beta);
                    }
                    for (c, k) in fs {
                        let e = factors.entry(c).or_insert(0.0);
                        *e = e.max(k);
                    }
                }
                let terms: Vec<_> = terms.into_iter().filter(|t| t.is_const() != Some(0.0)).collect();
                let term = match terms.len() {
                    0 => E::Const(0.0),
                    1 => terms.into_iter().next().unwrap(),
                    _ => E::Sum(terms),
                };
                (term, factors, wf, beta)
            }
        };
        if term.is_const() == Some(0.0) {
            continue;
        }
        parts.push(TablePlan { alias: t.alias.clone(), table: t.schema.name.clone(), term, factors, witness, beta, rows_q });
    }
    if min_beta > 0.0 {
        return Err(AnalyzeError::Infeasible { requested: opts.beta, min_beta });
    }
    let beta = parts.iter().map(|p| p.beta).fold(0.0, f64::max);
    Ok(SensitivityPlan {
        aggregator: aggr,
        tables: ctx.query.tables.clone(),
        public: ctx.public.clone(),
        pseudo: low.pseudo,
        select: f,
        predicate: ctx.predicate.clone(),
        sigma,
        row,
        globals,
        parts,
        db_q: dual_exponent(ctx.db_p),
        beta,
        options: opts.clone(),
        warnings,
    })
}

// ---------------------------------------------------------------- SQL text

fn from_list(tables: &[TableRef]) -> Vec<String> {
    let mut xs: Vec<String> = tables
        .iter()
        .map(|t| if t.name == t.alias { t.name.clone() } else { format!("{} {}", t.name, t.alias) })
        .collect();
    xs.sort();
    xs
}

fn filters(public: &[Pred]) -> Vec<String> {
    let mut xs: Vec<String> = public.iter().map(|p| p.to_sql().to_string()).collect();
    xs.sort();
    xs
}

impl SensitivityPlan {
    fn where_clause(&self) -> String {
        let fs = filters(&self.public);
        if fs.is_empty() {
            String::new()
        } else {
            format!(" WHERE {}", fs.join(" AND "))
        }
    }

    fn base(&self) -> String {
        format!("FROM {}{}", from_list(&self.tables).join(", "), self.where_clause())
    }

    /// Renders a row expression with pseudo-columns and globals inlined.
    pub fn render(&self, e: &ScalarExpr) -> String {
        let mut s = e.to_string();
        for (name, p) in self.pseudo.iter().rev() {
            s = s.replace(name, &format!("(case when {} then 1.0 else 0.0 end)", p.to_sql()));
        }
        for g in &self.globals {
            if !s.contains(&g.name) {
                continue;
            }
            let sub = match &g.kind {
                GlobalKind::Spread(f) => {
                    let f = self.render(f);
                    format!("(SELECT (max({f}) - min({f})) {})", self.base())
                }
                GlobalKind::TwiceMax(f) => format!("(SELECT (2.0 * max({})) {})", self.render(f), self.base()),
                GlobalKind::Product(f) => format!("(SELECT exp(sum(ln({}))) {})", self.render(f), self.base()),
            };
            s = s.replace(&g.name, &sub);
        }
        s
    }

    pub fn modified_sql(&self) -> String {
        let agg = match self.aggregator {
            Aggregator::Sum | Aggregator::Count => "sum",
            Aggregator::Product => "product",
            Aggregator::Min => "min",
            Aggregator::Max => "max",
        };
        format!("SELECT {agg}({}) {};", self.render(&self.row), self.base())
    }

    fn part_sql(&self, p: &TablePlan) -> String {
        let sens = format!("{}_sensRows", p.table);
        let mut from = from_list(&self.tables);
        from.push(sens.clone());
        let mut conds = filters(&self.public);
        conds.push(format!("{sens}.ID = {}.ID", p.alias));
        let g = if self.aggregator == Aggregator::Count { "sdsg".to_string() } else { "abs(sdsg)".to_string() };
        let outer = if p.rows_q == INF {
            format!("max({g})")
        } else if p.rows_q == 1.0 {
            format!("sum({g})")
        } else {
            format!("(sum(({g} ^ {:?})) ^ {:?})", p.rows_q, 1.0 / p.rows_q)
        };
        format!(
            "SELECT {outer} FROM (SELECT sum(abs({})) AS sdsg FROM {} WHERE ({}) AND {sens}.sensitive GROUP BY {sens}.ID) AS sub",
            self.render(&p.term),
            from.join(", "),
            conds.join(" AND ")
        )
    }

    pub fn sensitivity_sql(&self) -> String {
        match self.parts.len() {
            0 => "SELECT 0.0;".into(),
            1 => format!("{};", self.part_sql(&self.parts[0])),
            _ => {
                let subs: Vec<String> = self.parts.iter().map(|p| format!("coalesce(({}), 0.0)", self.part_sql(p))).collect();
                if self.db_q == INF {
                    format!("SELECT greatest({});", subs.join(", "))
                } else if self.db_q == 1.0 {
                    format!("SELECT ({});", subs.join(" + "))
                } else {
                    let q = self.db_q;
                    let pw: Vec<String> = subs.iter().map(|s| format!("({s} ^ {q:?})")).collect();
                    format!("SELECT (({}) ^ {:?});", pw.join(" + "), 1.0 / q)
                }
            }
        }
    }
}

/// Modified-query and sensitivity-query text.
pub fn emit_sql(plan: &SensitivityPlan) -> (String, String) {
    (plan.modified_sql(), plan.sensitivity_sql())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smooth::eval_map;
    use crate::sql::{parse_query, parse_schema, validate};

    fn at(e: &ScalarExpr, vals: &[(&str, f64)]) -> f64 {
        eval_map(e, &vals.iter().map(|(k, v)| (k.to_string(), *v)).collect()).unwrap()
    }

    #[test]
    fn precise_comparisons_are_exact_on_integers() {
        let opts = AnalyzeOptions { precise: Some(1.0), ..Default::default() };
        let (x, y) = (E::col("x"), E::col("y"));
        let gt = lower_comparison(CmpOp::Gt, &x, &y, &opts);
        assert_eq!(at(&gt, &[("x", 5.0), ("y", 3.0)]), 1.0);
        assert_eq!(at(&gt, &[("x", 3.0), ("y", 3.0)]), 0.0);
        let ge = lower_comparison(CmpOp::Ge, &x, &y, &opts);
        assert_eq!(at(&ge, &[("x", 3.0), ("y", 3.0)]), 1.0);
        assert_eq!(at(&ge, &[("x", 2.0), ("y", 3.0)]), 0.0);
        let eq = lower_comparison(CmpOp::Eq, &x, &y, &opts);
        assert_eq!(at(&eq, &[("x", 3.0), ("y", 3.0)]), 1.0);
        assert_eq!(at(&eq, &[("x", 4.0), ("y", 3.0)]), 0.0);
        let sig = lower_comparison(CmpOp::Lt, &x, &y, &AnalyzeOptions::default());
        assert_eq!(at(&sig, &[("x", 3.0), ("y", 3.0)]), 0.5);
    }

    #[test]
    fn aggregation_lowering() {
        let s = E::col("s");
        let f = E::col("f");
        let count = lower_aggregation(Aggregator::Count, f.clone(), Some(s.clone()));
        let total: f64 = [1.0, 1.0, 0.0].iter().map(|v| at(&count, &[("s", *v)])).sum();
        assert_eq!(total, 2.0);
        let min = lower_aggregation(Aggregator::Min, f.clone(), Some(s.clone()));
        let rows = [(10.0, 0.0), (20.0, 1.0), (30.0, 1.0)];
        let m = rows.iter().map(|(fv, sv)| at(&min, &[("f", *fv), ("s", *sv), (DELTA, 20.0)])).fold(INF, f64::min);
        assert_eq!(m, 20.0);
        let prod = lower_aggregation(Aggregator::Product, f, Some(s));
        let p: f64 = [3.0, 7.0].iter().map(|fv| at(&prod, &[("f", *fv), ("s", 0.0)])).product();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn identical_norms_align_by_identity() {
        let n = norm::parse_norm("lp 1 x (scaled 0.01 y)").unwrap();
        assert_eq!(align_norms(&n, &n).unwrap().method, norm::ScalingMethod::Identity);
        let (f, w) = diff_factors(&E::Prod(vec![E::col("x"), E::col("y")]), &n).unwrap();
        assert_eq!(w.method, norm::ScalingMethod::Identity);
        assert_eq!(f["x"], 1.0);
        assert!((f["y"] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn public_subformulas_become_pseudo_columns() {
        let s = parse_schema("table t\ncol x int\ncol k text\nnorm x\n").unwrap();
        let q = parse_query("SELECT sum(t.x) FROM t WHERE (t.k = 'a' AND t.x > 3) OR t.x < 1").unwrap();
        let ctx = validate(&q, &s).unwrap();
        assert!(ctx.public.is_empty());
        let plan = build_plan(&ctx, &AnalyzeOptions { alpha: 0.01, ..Default::default() }).unwrap();
        assert_eq!(plan.pseudo.len(), 1);
        assert!(plan.modified_sql().contains("(case when (t.k = 'a') then 1.0 else 0.0 end)"));
    }

    #[test]
    fn no_sensitive_columns_means_zero() {
        let s = parse_schema("table t\ncol x int\n").unwrap();
        let q = parse_query("SELECT count(*) FROM t").unwrap();
        let plan = build_plan(&validate(&q, &s).unwrap(), &AnalyzeOptions::default()).unwrap();
        assert!(plan.parts.is_empty());
        assert_eq!(plan.sensitivity_sql(), "SELECT 0.0;");
        assert_eq!(plan.warnings.len(), 1);
    }

    #[test]
    fn infeasible_beta_reports_minimum() {
        let s = parse_schema("table t\ncol x int\ncol d real\nnorm lp 1 x d\n").unwrap();
        let q = parse_query("SELECT sum(t.x) FROM t WHERE t.d < 10").unwrap();
        let ctx = validate(&q, &s).unwrap();
        let err = build_plan(&ctx, &AnalyzeOptions { alpha: 5.0, beta: 0.1, ..Default::default() }).unwrap_err();
        match err {
            AnalyzeError::Infeasible { min_beta, .. } => assert!((min_beta - 5.0).abs() < 1e-9, "{min_beta}"),
            e => panic!("{e:?}"),
        }
    }
}
