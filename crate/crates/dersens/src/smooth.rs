//! Scalar expression IR, symbolic derivative sensitivity and β-smooth upper
//! bounds on a function and on its derivative sensitivity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::norm::{self, NormExpr, INF};

#[derive(Clone, Debug, PartialEq)]
pub enum ScalarExpr {
    Const(f64),
    /// Column reference, usually `alias.column`.
    Col(String),
    /// `g^r`.
    Power(Box<ScalarExpr>, f64),
    /// `e^{r·g}`.
    Exp(f64, Box<ScalarExpr>),
    /// `e^{αg}/(e^{αg}+1)`.
    Sigmoid(f64, Box<ScalarExpr>),
    /// `2/(e^{-αg}+e^{αg})`.
    Tauoid(f64, Box<ScalarExpr>),
    Sum(Vec<ScalarExpr>),
    Prod(Vec<ScalarExpr>),
    Min(Vec<ScalarExpr>),
    Max(Vec<ScalarExpr>),
    /// ℓp norm of the children; `INF` for the max of absolute values.
    LpNorm(f64, Vec<ScalarExpr>),
    /// `a·g`, the function measured in a norm scaled by `a`.
    ScaleNorm(f64, Box<ScalarExpr>),
    /// Natural logarithm; only produced by the division desugaring.
    Ln(Box<ScalarExpr>),
    /// `α·σ(g)·(1-σ(g))`, the sigmoid derivative.
    SigmoidDeriv(f64, Box<ScalarExpr>),
    /// Smooth upper bound of `|arg|`: `|arg|` above `1/b`, `e^{b|arg|-1}/b` below.
    IdentityUbf { b: f64, arg: Box<ScalarExpr> },
    /// `g·v`, but 0 when `g = 0` whatever `v` is.
    ZeroGuard(Box<ScalarExpr>, Box<ScalarExpr>),
    /// Value at the first argmin (or argmax) of `keys`.
    Pick { min: bool, keys: Vec<ScalarExpr>, values: Vec<ScalarExpr> },
    Sign(Box<ScalarExpr>),
}

use ScalarExpr as E;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SmoothError {
    #[error("no value bound for column `{0}`")]
    MissingBinding(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("column `{0}` is not covered by the norm")]
    ColumnNotInNorm(String),
    #[error("variable blocks overlap on `{0}`")]
    Overlap(String),
    #[error("requested smoothness {requested} is infeasible; the smallest achievable is {min_beta}")]
    Infeasible { requested: f64, min_beta: f64 },
    #[error(transparent)]
    Norm(#[from] norm::NormError),
}

pub type Result<T> = std::result::Result<T, SmoothError>;

// ---------------------------------------------------------------- builders

impl ScalarExpr {
    pub fn col(name: &str) -> Self {
        E::Col(name.to_string())
    }

    pub fn is_const(&self) -> Option<f64> {
        match self {
            E::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn neg(self) -> Self {
        mk_prod(vec![E::Const(-1.0), self])
    }

    /// `1 - self`.
    pub fn one_minus(self) -> Self {
        E::Sum(vec![E::Const(1.0), E::Prod(vec![E::Const(-1.0), self])])
    }

    /// `x/y` desugared as `x·e^{-ln y}`.
    pub fn div(self, y: ScalarExpr) -> Self {
        mk_prod(vec![self, E::Exp(-1.0, Box::new(E::Ln(Box::new(y))))])
    }

    pub fn abs(self) -> Self {
        E::LpNorm(1.0, vec![self])
    }

    /// `g^r`, with negative exponents desugared through `e^{r·ln g}`.
    pub fn pow(self, r: f64) -> Self {
        if r < 0.0 {
            E::Exp(r, Box::new(E::Ln(Box::new(self))))
        } else {
            E::Power(Box::new(self), r)
        }
    }
}

/// Sum with zero terms dropped; all-constant sums are folded.
pub fn mk_sum(terms: Vec<ScalarExpr>) -> ScalarExpr {
    let terms: Vec<_> = terms.into_iter().filter(|t| t.is_const() != Some(0.0)).collect();
    if terms.iter().all(|t| t.is_const().is_some()) {
        return E::Const(terms.iter().filter_map(E::is_const).sum());
    }
    if terms.len() == 1 {
        return terms.into_iter().next().unwrap();
    }
    E::Sum(terms)
}

/// Product with constant factors folded into the position of the first
/// constant; a unit constant is dropped. Nested products are kept.
pub fn mk_prod(factors: Vec<ScalarExpr>) -> ScalarExpr {
    let k: f64 = factors.iter().filter_map(E::is_const).product();
    if k == 0.0 {
        return E::Const(0.0);
    }
    let mut out = Vec::with_capacity(factors.len());
    let mut placed = false;
    for f in factors {
        if f.is_const().is_some() {
            if !placed && k != 1.0 {
                out.push(E::Const(k));
            }
            placed = true;
        } else {
            out.push(f);
        }
    }
    match out.len() {
        0 => E::Const(k),
        1 => out.pop().unwrap(),
        _ => E::Prod(out),
    }
}

fn mk_lp(p: f64, mut xs: Vec<ScalarExpr>) -> ScalarExpr {
    if xs.iter().all(|x| x.is_const().is_some()) {
        return E::Const(norm::lp(p, xs.iter().filter_map(E::is_const)));
    }
    if xs.len() == 1 && p == INF {
        return E::LpNorm(1.0, vec![xs.pop().unwrap()]);
    }
    E::LpNorm(p, xs)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn tauoid(x: f64) -> f64 {
    // 2/(e^{-x}+e^{x}) = 1/cosh(x), computed without overflow
    let a = x.abs();
    2.0 * (-a).exp() / (1.0 + (-2.0 * a).exp())
}

// ---------------------------------------------------------------- evaluation

pub type Binding<'a> = &'a dyn Fn(&str) -> Option<f64>;

/// Evaluates `f` with column values supplied by `env`.
pub fn eval_scalar(f: &ScalarExpr, env: Binding<'_>) -> Result<f64> {
    let ev = |g: &ScalarExpr| eval_scalar(g, env);
    let all = |gs: &[ScalarExpr]| gs.iter().map(|g| eval_scalar(g, env)).collect::<Result<Vec<f64>>>();
    Ok(match f {
        E::Const(c) => *c,
        E::Col(c) => env(c).ok_or_else(|| SmoothError::MissingBinding(c.clone()))?,
        E::Power(g, r) => {
            let x = ev(g)?;
            if x < 0.0 && r.fract() != 0.0 {
                return Err(SmoothError::Domain(format!("{x} ^ {r}")));
            }
            x.powf(*r)
        }
        E::Exp(r, g) => (r * ev(g)?).exp(),
        E::Sigmoid(a, g) => sigmoid(a * ev(g)?),
        E::Tauoid(a, g) => tauoid(a * ev(g)?),
        E::Sum(gs) => all(gs)?.iter().sum(),
        E::Prod(gs) => all(gs)?.iter().product(),
        E::Min(gs) => all(gs)?.into_iter().fold(f64::INFINITY, f64::min),
        E::Max(gs) => all(gs)?.into_iter().fold(f64::NEG_INFINITY, f64::max),
        E::LpNorm(p, gs) => norm::lp(*p, all(gs)?),
        E::ScaleNorm(a, g) => a * ev(g)?,
        E::Ln(g) => {
            let x = ev(g)?;
            if x <= 0.0 {
                return Err(SmoothError::Domain(format!("ln({x})")));
            }
            x.ln()
        }
        E::SigmoidDeriv(a, g) => {
            let s = sigmoid(a * ev(g)?);
            a * s * (1.0 - s)
        }
        E::IdentityUbf { b, arg } => {
            let x = ev(arg)?.abs();
            if x >= 1.0 / b {
                x
            } else {
                (b * x - 1.0).exp() / b
            }
        }
        E::ZeroGuard(g, v) => {
            let x = ev(g)?;
            if x == 0.0 {
                0.0
            } else {
                x * ev(v)?
            }
        }
        E::Pick { min, keys, values } => {
            let ks = all(keys)?;
            let mut best = 0;
            for (i, k) in ks.iter().enumerate() {
                if (*min && *k < ks[best]) || (!*min && *k > ks[best]) {
                    best = i;
                }
            }
            ev(&values[best])?
        }
        E::Sign(g) => {
            let x = ev(g)?;
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
    })
}

pub fn eval_map(f: &ScalarExpr, row: &BTreeMap<String, f64>) -> Result<f64> {
    eval_scalar(f, &|c| row.get(c).copied())
}

impl ScalarExpr {
    pub fn children(&self) -> Vec<&ScalarExpr> {
        match self {
            E::Const(_) | E::Col(_) => vec![],
            E::Power(g, _)
            | E::Exp(_, g)
            | E::Sigmoid(_, g)
            | E::Tauoid(_, g)
            | E::ScaleNorm(_, g)
            | E::Ln(g)
            | E::SigmoidDeriv(_, g)
            | E::Sign(g)
            | E::IdentityUbf { arg: g, .. } => vec![g],
            E::Sum(gs) | E::Prod(gs) | E::Min(gs) | E::Max(gs) | E::LpNorm(_, gs) => gs.iter().collect(),
            E::ZeroGuard(g, v) => vec![g, v],
            E::Pick { keys, values, .. } => keys.iter().chain(values).collect(),
        }
    }

    /// Columns referenced anywhere in the expression.
    pub fn columns(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        fn go(e: &ScalarExpr, out: &mut BTreeSet<String>) {
            if let E::Col(c) = e {
                out.insert(c.clone());
            }
            e.children().into_iter().for_each(|c| go(c, out));
        }
        go(self, &mut out);
        out
    }

    /// Number of occurrences of each column.
    pub fn column_occurrences(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        fn go(e: &ScalarExpr, out: &mut BTreeMap<String, usize>) {
            if let E::Col(c) = e {
                *out.entry(c.clone()).or_insert(0) += 1;
            }
            e.children().into_iter().for_each(|c| go(c, out));
        }
        go(self, &mut out);
        out
    }

    /// Replaces columns through `f` (a column maps to an arbitrary expression).
    pub fn map_cols(&self, f: &impl Fn(&str) -> ScalarExpr) -> ScalarExpr {
        let m = |g: &ScalarExpr| Box::new(g.map_cols(f));
        let ms = |gs: &[ScalarExpr]| gs.iter().map(|g| g.map_cols(f)).collect::<Vec<_>>();
        match self {
            E::Const(c) => E::Const(*c),
            E::Col(c) => f(c),
            E::Power(g, r) => E::Power(m(g), *r),
            E::Exp(r, g) => E::Exp(*r, m(g)),
            E::Sigmoid(a, g) => E::Sigmoid(*a, m(g)),
            E::Tauoid(a, g) => E::Tauoid(*a, m(g)),
            E::Sum(gs) => E::Sum(ms(gs)),
            E::Prod(gs) => E::Prod(ms(gs)),
            E::Min(gs) => E::Min(ms(gs)),
            E::Max(gs) => E::Max(ms(gs)),
            E::LpNorm(p, gs) => E::LpNorm(*p, ms(gs)),
            E::ScaleNorm(a, g) => E::ScaleNorm(*a, m(g)),
            E::Ln(g) => E::Ln(m(g)),
            E::SigmoidDeriv(a, g) => E::SigmoidDeriv(*a, m(g)),
            E::IdentityUbf { b, arg } => E::IdentityUbf { b: *b, arg: m(arg) },
            E::ZeroGuard(g, v) => E::ZeroGuard(m(g), m(v)),
            E::Pick { min, keys, values } => E::Pick { min: *min, keys: ms(keys), values: ms(values) },
            E::Sign(g) => E::Sign(m(g)),
        }
    }

    /// Conservative sign analysis: true only if the value is never negative.
    pub fn nonneg(&self) -> bool {
        match self {
            E::Const(c) => *c >= 0.0,
            E::Col(_) | E::Ln(_) | E::Sign(_) => false,
            E::Exp(..) | E::Sigmoid(..) | E::Tauoid(..) | E::LpNorm(..) | E::IdentityUbf { .. } => true,
            E::SigmoidDeriv(a, _) => *a >= 0.0,
            E::Power(g, r) => g.nonneg() || (r.fract() == 0.0 && (*r as i64) % 2 == 0),
            E::Sum(gs) | E::Prod(gs) | E::Min(gs) => gs.iter().all(E::nonneg),
            E::Max(gs) => gs.iter().any(E::nonneg),
            E::ScaleNorm(a, g) => *a >= 0.0 && g.nonneg(),
            E::ZeroGuard(g, v) => g.nonneg() && v.nonneg(),
            E::Pick { values, .. } => values.iter().all(E::nonneg),
        }
    }
}

// ---------------------------------------------------------------- derivatives

/// Symbolic partial derivative with respect to column `var`.
pub fn partial(f: &ScalarExpr, var: &str) -> ScalarExpr {
    let d = |g: &ScalarExpr| partial(g, var);
    let depends = |g: &ScalarExpr| g.columns().contains(var);
    if !depends(f) {
        return E::Const(0.0);
    }
    match f {
        E::Const(_) | E::Sign(_) => E::Const(0.0),
        E::Col(c) => E::Const(if c == var { 1.0 } else { 0.0 }),
        E::Power(g, r) => {
            if *r == 1.0 {
                return d(g);
            }
            mk_prod(vec![E::Const(*r), E::Power(g.clone(), r - 1.0), d(g)])
        }
        E::Exp(r, g) => mk_prod(vec![E::Const(*r), f.clone(), d(g)]),
        E::Sigmoid(a, g) => mk_prod(vec![E::SigmoidDeriv(*a, g.clone()), d(g)]),
        E::Tauoid(a, g) => {
            // τ' = -α·τ·tanh(αg), tanh(y) = 2σ(2y) - 1
            let tanh = E::Sum(vec![mk_prod(vec![E::Const(2.0), E::Sigmoid(2.0 * a, g.clone())]), E::Const(-1.0)]);
            mk_prod(vec![E::Const(-a), f.clone(), tanh, d(g)])
        }
        E::Sum(gs) => mk_sum(gs.iter().map(d).collect()),
        E::Prod(gs) => {
            let mut terms = Vec::new();
            for (i, gi) in gs.iter().enumerate() {
                if !depends(gi) {
                    continue;
                }
                let mut fs = vec![d(gi)];
                fs.extend(gs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, g)| g.clone()));
                terms.push(mk_prod(fs));
            }
            mk_sum(terms)
        }
        E::Min(gs) | E::Max(gs) => E::Pick {
            min: matches!(f, E::Min(_)),
            keys: gs.clone(),
            values: gs.iter().map(d).collect(),
        },
        E::LpNorm(p, gs) => {
            let signed = |g: &ScalarExpr| mk_prod(vec![E::Sign(Box::new(g.clone())), d(g)]);
            if *p == INF {
                E::Pick {
                    min: false,
                    keys: gs.iter().map(|g| g.clone().abs()).collect(),
                    values: gs.iter().map(signed).collect(),
                }
            } else if *p == 1.0 {
                mk_sum(gs.iter().filter(|g| depends(g)).map(signed).collect())
            } else {
                // Σ (|g_i|/‖g‖)^{p-1}·sign(g_i)·g_i'
                let terms = gs
                    .iter()
                    .filter(|g| depends(g))
                    .map(|g| {
                        let ratio = g.clone().abs().div(f.clone());
                        mk_prod(vec![E::Power(Box::new(ratio), p - 1.0), signed(g)])
                    })
                    .collect();
                mk_sum(terms)
            }
        }
        E::ScaleNorm(a, g) => mk_prod(vec![E::Const(*a), d(g)]),
        E::Ln(g) => mk_prod(vec![d(g), E::Exp(-1.0, Box::new(E::Ln(g.clone())))]),
        E::SigmoidDeriv(a, g) => {
            // (ασ(1-σ))' = ασ(1-σ)·α(1-2σ)·g'
            let one_minus_2s = E::Sum(vec![E::Const(1.0), mk_prod(vec![E::Const(-2.0), E::Sigmoid(*a, g.clone())])]);
            mk_prod(vec![E::Const(*a), f.clone(), one_minus_2s, d(g)])
        }
        E::IdentityUbf { b, arg } => {
            let abs = arg.as_ref().clone().abs();
            let slope = E::Min(vec![
                E::Const(1.0),
                E::Exp(1.0, Box::new(E::Sum(vec![mk_prod(vec![E::Const(*b), abs]), E::Const(-1.0)]))),
            ]);
            mk_prod(vec![E::Sign(arg.clone()), d(arg), slope])
        }
        E::ZeroGuard(g, v) => partial(&E::Prod(vec![g.as_ref().clone(), v.as_ref().clone()]), var),
        E::Pick { min, keys, values } => E::Pick { min: *min, keys: keys.clone(), values: values.iter().map(d).collect() },
    }
}

fn dual_expr(n: &NormExpr, grads: &BTreeMap<String, ScalarExpr>) -> ScalarExpr {
    match n {
        NormExpr::Var(v) => grads.get(v).cloned().map(|g| mk_lp(1.0, vec![g])).unwrap_or(E::Const(0.0)),
        NormExpr::Scale(a, c) => mk_prod(vec![E::Const(1.0 / a), dual_expr(c, grads)]),
        NormExpr::Combine(p, cs) => {
            let parts: Vec<_> = cs.iter().map(|c| dual_expr(c, grads)).filter(|e| e.is_const() != Some(0.0)).collect();
            match parts.len() {
                0 => E::Const(0.0),
                1 => parts.into_iter().next().unwrap(),
                _ => mk_lp(norm::dual_exponent(*p), parts),
            }
        }
    }
}

fn norm_covers(f: &ScalarExpr, n: &NormExpr) -> Result<()> {
    let vars = n.vars();
    match f.columns().into_iter().find(|c| !vars.contains(c)) {
        Some(c) => Err(SmoothError::ColumnNotInNorm(c)),
        None => Ok(()),
    }
}

/// Derivative sensitivity of `f` w.r.t. `n`: the dual norm of the symbolic
/// gradient. `n` must be tree-shaped after normalization.
pub fn ds_expr(f: &ScalarExpr, n: &NormExpr) -> Result<ScalarExpr> {
    norm_covers(f, n)?;
    let n = norm::normalize(n);
    if !n.is_tree() {
        let v = n.leaves().into_iter().map(|l| l.0).next().unwrap_or_default();
        return Err(norm::NormError::NotTree(v).into());
    }
    // the ℓp norm is 1-Lipschitz in its own ℓp metric
    if let (E::LpNorm(p, gs), NormExpr::Combine(q, leaves)) = (f, &n) {
        let cols: Option<BTreeSet<&str>> = gs.iter().map(|g| if let E::Col(c) = g { Some(c.as_str()) } else { None }).collect();
        let unit: Option<BTreeSet<&str>> =
            leaves.iter().map(|l| if let NormExpr::Var(v) = l { Some(v.as_str()) } else { None }).collect();
        if p == q && cols.is_some() && cols.as_ref().map(|c| c.len()) == Some(gs.len()) && cols == unit {
            return Ok(E::Const(1.0));
        }
    }
    let grads: BTreeMap<String, ScalarExpr> = f.columns().into_iter().map(|c| {
        let d = partial(f, &c);
        (c, d)
    }).collect();
    Ok(dual_expr(&n, &grads))
}

/// Combines derivative sensitivities of blocks over disjoint variable sets
/// that are joined by an ℓp norm.
pub fn combine_ds(parts: Vec<(ScalarExpr, BTreeSet<String>)>, p: f64) -> Result<ScalarExpr> {
    let mut seen = BTreeSet::new();
    for (_, vars) in &parts {
        for v in vars {
            if !seen.insert(v.clone()) {
                return Err(SmoothError::Overlap(v.clone()));
            }
        }
    }
    let mut exprs: Vec<_> = parts.into_iter().map(|p| p.0).collect();
    if exprs.len() == 1 {
        return Ok(exprs.pop().unwrap());
    }
    Ok(mk_lp(norm::dual_exponent(p), exprs))
}

/// Dual norm of the central-difference gradient of `f` at `point`.
pub fn finite_diff_ds(f: &ScalarExpr, n: &NormExpr, point: &BTreeMap<String, f64>, h: f64) -> Result<f64> {
    let mut grad = BTreeMap::new();
    for v in n.vars() {
        let mut hi = point.clone();
        let mut lo = point.clone();
        *hi.entry(v.clone()).or_insert(0.0) += h;
        *lo.entry(v.clone()).or_insert(0.0) -= h;
        grad.insert(v, (eval_map(f, &hi)? - eval_map(f, &lo)?) / (2.0 * h));
    }
    Ok(norm::dual_eval(&norm::normalize(n), &|v| grad.get(v).copied().unwrap_or(0.0))?)
}

// ---------------------------------------------------------------- smooth bounds

/// Per-column bound on a log-derivative, symbolic in the leaf parameter `t`.
#[derive(Clone, Debug, PartialEq)]
pub enum SvTerm {
    Fixed(f64),
    /// `coef·t`.
    T(f64),
    Add(Vec<SvTerm>),
    Max(Vec<SvTerm>),
    /// No finite bound.
    Inf,
}

impl SvTerm {
    pub fn at(&self, t: f64, with_fixed: bool) -> f64 {
        match self {
            SvTerm::Fixed(x) => {
                if with_fixed {
                    *x
                } else {
                    0.0
                }
            }
            SvTerm::T(c) => c * t,
            SvTerm::Add(xs) => xs.iter().map(|x| x.at(t, with_fixed)).sum(),
            SvTerm::Max(xs) => xs.iter().map(|x| x.at(t, with_fixed)).fold(0.0, f64::max),
            SvTerm::Inf => INF,
        }
    }
}

/// Per-column log-Lipschitz bounds.
pub type Sv = BTreeMap<String, SvTerm>;

fn sv_join(parts: Vec<&Sv>, add: bool) -> Sv {
    let mut out: BTreeMap<String, Vec<SvTerm>> = BTreeMap::new();
    for p in parts {
        for (c, t) in p {
            out.entry(c.clone()).or_default().push(t.clone());
        }
    }
    out.into_iter()
        .map(|(c, mut ts)| {
            let t = if ts.len() == 1 {
                ts.pop().unwrap()
            } else if add {
                SvTerm::Add(ts)
            } else {
                SvTerm::Max(ts)
            };
            (c, t)
        })
        .collect()
}

fn sv_scale(k: f64, s: &Sv) -> Sv {
    s.iter().map(|(c, t)| (c.clone(), SvTerm::Add(vec![t.clone()]).scaled(k))).collect()
}

impl SvTerm {
    fn scaled(self, k: f64) -> SvTerm {
        match self {
            SvTerm::Fixed(x) => SvTerm::Fixed(k * x),
            SvTerm::T(c) => SvTerm::T(k * c),
            SvTerm::Add(xs) => SvTerm::Add(xs.into_iter().map(|x| x.scaled(k)).collect()),
            SvTerm::Max(xs) => SvTerm::Max(xs.into_iter().map(|x| x.scaled(k)).collect()),
            SvTerm::Inf => if k == 0.0 { SvTerm::Fixed(0.0) } else { SvTerm::Inf },
        }
    }
}

/// Per-column Lipschitz constants; `None` when no finite bound is known.
type Lip = Option<BTreeMap<String, f64>>;

fn lip_join(parts: Vec<&Lip>, add: bool) -> Lip {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for p in parts {
        for (c, l) in p.as_ref()? {
            let e = out.entry(c.clone()).or_insert(0.0);
            *e = if add { *e + l } else { e.max(*l) };
        }
    }
    Some(out)
}

fn lip_scale(k: f64, l: &Lip) -> Lip {
    l.as_ref().map(|m| m.iter().map(|(c, x)| (c.clone(), k.abs() * x)).collect())
}

/// Inputs of the recursive bound construction.
#[derive(Clone, Debug)]
pub struct BoundContext {
    /// Requested smoothness.
    pub beta: f64,
    /// Norm in which smoothness is measured; must be tree-shaped.
    pub smooth_norm: NormExpr,
    /// Columns the derivative is taken in, with the sensitivity of a single
    /// occurrence (the reciprocal of its weight in the query norm).
    pub diff: BTreeMap<String, f64>,
}

impl BoundContext {
    fn smooth_vars(&self) -> BTreeSet<String> {
        self.smooth_norm.vars()
    }
}

#[derive(Clone, Debug)]
struct Node {
    ubf: ScalarExpr,
    ubf_sv: Sv,
    /// `None` when the derivative sensitivity is identically 0.
    ubds: Option<(ScalarExpr, Sv)>,
    lip: Lip,
    /// Diff columns the node depends on.
    dvars: BTreeSet<String>,
}

struct Builder<'a> {
    ctx: &'a BoundContext,
    smooth: BTreeSet<String>,
    weights: BTreeMap<String, f64>,
    t: f64,
}

fn disjoint(sets: &[&BTreeSet<String>]) -> bool {
    let mut seen = BTreeSet::new();
    sets.iter().all(|s| s.iter().all(|v| seen.insert(v)))
}

impl Builder<'_> {
    fn constant(&self, f: &ScalarExpr) -> Node {
        Node {
            ubf: mk_lp(1.0, vec![f.clone()]),
            ubf_sv: Sv::new(),
            ubds: None,
            lip: Some(BTreeMap::new()),
            dvars: BTreeSet::new(),
        }
    }

    /// `greatest` of the terms when their diff columns are disjoint, else
    /// their sum.
    fn combine(&self, terms: Vec<(ScalarExpr, Sv, &BTreeSet<String>)>, sum_op: impl Fn(Vec<ScalarExpr>) -> ScalarExpr) -> Option<(ScalarExpr, Sv)> {
        if terms.is_empty() {
            return None;
        }
        if terms.len() == 1 {
            let (e, s, _) = terms.into_iter().next().unwrap();
            return Some((e, s));
        }
        let sets: Vec<_> = terms.iter().map(|t| t.2).collect();
        let indep = disjoint(&sets);
        let sv = sv_join(terms.iter().map(|t| &t.1).collect(), false);
        let es: Vec<_> = terms.into_iter().map(|t| t.0).collect();
        Some((if indep { mk_lp(INF, es) } else { sum_op(es) }, sv))
    }

    fn node(&self, f: &ScalarExpr) -> Result<Node> {
        let cols = f.columns();
        if cols.is_disjoint(&self.smooth) {
            return Ok(self.constant(f));
        }
        let dvars: BTreeSet<String> = cols.iter().filter(|c| self.ctx.diff.contains_key(*c)).cloned().collect();
        let kids = |gs: &[ScalarExpr]| gs.iter().map(|g| self.node(g)).collect::<Result<Vec<_>>>();
        Ok(match f {
            E::Const(_) => unreachable!(),
            E::Col(c) => {
                let w = self.weights.get(c).copied().unwrap_or(1.0);
                let mut sv = Sv::new();
                sv.insert(c.clone(), SvTerm::T(w));
                Node {
                    ubf: E::IdentityUbf { b: self.t * w, arg: Box::new(f.clone()) },
                    ubf_sv: sv,
                    ubds: self.ctx.diff.get(c).map(|k| (E::Const(*k), Sv::new())),
                    lip: Some([(c.clone(), 1.0)].into()),
                    dvars,
                }
            }
            E::Sum(gs) => {
                let ns = kids(gs)?;
                let ubf = mk_sum(ns.iter().map(|n| n.ubf.clone()).collect());
                let ubf_sv = sv_join(ns.iter().map(|n| &n.ubf_sv).collect(), false);
                let terms = ns.iter().filter_map(|n| n.ubds.clone().map(|(e, s)| (e, s, &n.dvars))).collect();
                let ubds = self.combine(terms, E::Sum);
                Node { ubf, ubf_sv, ubds, lip: lip_join(ns.iter().map(|n| &n.lip).collect(), true), dvars }
            }
            E::Prod(gs) => {
                let ns = kids(gs)?;
                let ubf = mk_prod(ns.iter().map(|n| n.ubf.clone()).collect());
                let ubf_sv = sv_join(ns.iter().map(|n| &n.ubf_sv).collect(), true);
                let mut terms = Vec::new();
                for (i, n) in ns.iter().enumerate() {
                    let Some((d, dsv)) = &n.ubds else { continue };
                    let others: Vec<&Node> = ns.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, m)| m).collect();
                    let rest = mk_prod(others.iter().map(|m| m.ubf.clone()).collect());
                    let term = if d.is_const().is_some() || rest.is_const().is_some() {
                        mk_prod(vec![d.clone(), rest])
                    } else {
                        E::ZeroGuard(Box::new(d.clone()), Box::new(rest))
                    };
                    let mut svs = vec![dsv];
                    svs.extend(others.iter().map(|m| &m.ubf_sv));
                    terms.push((term, sv_join(svs, true), &n.dvars));
                }
                let ubds = self.combine(terms, E::Sum);
                // Lipschitz only through constant factors
                let mut k = 1.0;
                let mut var_lip: Lip = Some(BTreeMap::new());
                let mut varying = 0;
                for (g, n) in gs.iter().zip(&ns) {
                    match g.is_const() {
                        Some(c) => k *= c,
                        None if g.columns().is_disjoint(&self.smooth) => varying += 2,
                        None => {
                            varying += 1;
                            var_lip = n.lip.clone();
                        }
                    }
                }
                let lip = if varying <= 1 { lip_scale(k, &var_lip) } else { None };
                Node { ubf, ubf_sv, ubds, lip, dvars }
            }
            E::Power(g, r) => {
                let n = self.node(g)?;
                if *r < 0.0 || r.is_nan() {
                    return Err(SmoothError::Unsupported(format!("power with exponent {r}")));
                }
                if *r == 0.0 {
                    return Ok(self.constant(&E::Const(1.0)));
                }
                let ubf = if *r == 1.0 { n.ubf.clone() } else { E::Power(Box::new(n.ubf.clone()), *r) };
                let ubf_sv = sv_scale(*r, &n.ubf_sv);
                let ubds = match &n.ubds {
                    None => None,
                    Some(_) if *r < 1.0 => {
                        return Err(SmoothError::Unsupported(format!(
                            "sensitivity bound of a power with exponent {r} < 1"
                        )))
                    }
                    Some((d, dsv)) => {
                        let mut fs = vec![E::Const(*r)];
                        if *r != 1.0 {
                            let base = n.ubf.clone();
                            fs.push(if *r == 2.0 { base } else { E::Power(Box::new(base), r - 1.0) });
                        }
                        fs.push(d.clone());
                        Some((mk_prod(fs), sv_join(vec![&sv_scale(r - 1.0, &n.ubf_sv), dsv], true)))
                    }
                };
                let lip = if *r == 1.0 { n.lip.clone() } else { None };
                Node { ubf, ubf_sv, ubds, lip, dvars }
            }
            E::Exp(r, g) => {
                let n = self.node(g)?;
                let sv: Sv = match &n.lip {
                    Some(l) => l.iter().map(|(c, x)| (c.clone(), SvTerm::Fixed(r.abs() * x))).collect(),
                    None => g.columns().intersection(&self.smooth).map(|c| (c.clone(), SvTerm::Inf)).collect(),
                };
                let ubds = n.ubds.as_ref().map(|(d, dsv)| {
                    (mk_prod(vec![E::Const(r.abs()), f.clone(), d.clone()]), sv_join(vec![&sv, dsv], true))
                });
                Node { ubf: f.clone(), ubf_sv: sv, ubds, lip: None, dvars }
            }
            E::Sigmoid(a, g) | E::Tauoid(a, g) => {
                let n = self.node(g)?;
                let sv: Sv = match &n.lip {
                    Some(l) => l.iter().map(|(c, x)| (c.clone(), SvTerm::Fixed(a * x))).collect(),
                    None => g.columns().intersection(&self.smooth).map(|c| (c.clone(), SvTerm::Inf)).collect(),
                };
                let sig = matches!(f, E::Sigmoid(..));
                let ubds = n.ubds.as_ref().map(|(d, dsv)| {
                    let head = if sig {
                        E::SigmoidDeriv(*a, g.clone())
                    } else {
                        E::Prod(vec![E::Const(*a), f.clone()])
                    };
                    (mk_prod(vec![head, d.clone()]), sv_join(vec![&sv, dsv], true))
                });
                let slope = if sig { a / 4.0 } else { a / 2.0 };
                Node { ubf: f.clone(), ubf_sv: sv, ubds, lip: lip_scale(slope, &n.lip), dvars }
            }
            E::Min(gs) | E::Max(gs) => {
                let ns = kids(gs)?;
                let ubfs: Vec<_> = ns.iter().map(|n| n.ubf.clone()).collect();
                let ubf = if matches!(f, E::Min(_)) && gs.iter().all(E::nonneg) { E::Min(ubfs) } else { E::Max(ubfs) };
                let ubf_sv = sv_join(ns.iter().map(|n| &n.ubf_sv).collect(), false);
                let terms: Vec<_> = ns.iter().filter_map(|n| n.ubds.clone()).collect();
                let ubds = match terms.len() {
                    0 => None,
                    1 => terms.into_iter().next(),
                    _ => {
                        let sv = sv_join(terms.iter().map(|t| &t.1).collect(), false);
                        Some((mk_lp(INF, terms.into_iter().map(|t| t.0).collect()), sv))
                    }
                };
                Node { ubf, ubf_sv, ubds, lip: lip_join(ns.iter().map(|n| &n.lip).collect(), false), dvars }
            }
            E::LpNorm(p, gs) => {
                let ns = kids(gs)?;
                let ubf = E::LpNorm(*p, ns.iter().map(|n| n.ubf.clone()).collect());
                let ubf_sv = sv_join(ns.iter().map(|n| &n.ubf_sv).collect(), false);
                let terms = ns.iter().filter_map(|n| n.ubds.clone().map(|(e, s)| (e, s, &n.dvars))).collect();
                let p = *p;
                let ubds = self.combine(terms, |es| if p == 1.0 { E::Sum(es) } else { E::LpNorm(p, es) });
                Node { ubf, ubf_sv, ubds, lip: lip_join(ns.iter().map(|n| &n.lip).collect(), true), dvars }
            }
            E::ScaleNorm(a, g) => {
                let n = self.node(g)?;
                Node {
                    ubf: mk_prod(vec![E::Const(a.abs()), n.ubf]),
                    ubf_sv: n.ubf_sv,
                    ubds: n.ubds.map(|(d, s)| (mk_prod(vec![E::Const(a.abs()), d]), s)),
                    lip: lip_scale(*a, &n.lip),
                    dvars,
                }
            }
            E::Ln(_) => {
                return Err(SmoothError::Unsupported(
                    "logarithm (division or negative power) of a sensitive expression".into(),
                ))
            }
            _ => return Err(SmoothError::Unsupported(format!("bound-only form in input: {f}"))),
        })
    }
}

/// Result of [`smooth_bound`].
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothBound {
    pub ubf: ScalarExpr,
    /// Upper bound of the derivative sensitivity (`Const(0)` if it is 0).
    pub ubds: ScalarExpr,
    /// Achieved smoothness of both bounds; the smallest achievable β when
    /// infeasible.
    pub beta: f64,
    pub feasible: bool,
    /// Leaf parameter: identity bounds use `b = t·w_c`.
    pub t: f64,
}

/// Bounds `f` in the given context. Infeasibility is reported through the
/// `feasible` flag.
pub fn smooth_bound_ctx(f: &ScalarExpr, ctx: &BoundContext) -> Result<SmoothBound> {
    if !(ctx.beta > 0.0) {
        return Err(SmoothError::Domain(format!("β must be positive, got {}", ctx.beta)));
    }
    let smooth_norm = norm::normalize(&ctx.smooth_norm);
    if !smooth_norm.is_tree() {
        return Err(norm::NormError::NotTree(String::new()).into());
    }
    let mut b = Builder { ctx, smooth: ctx.smooth_vars(), weights: smooth_norm.leaf_weights(), t: 1.0 };
    let probe = b.node(f)?;
    let sv = match &probe.ubds {
        Some((_, s)) => sv_join(vec![&probe.ubf_sv, s], false),
        None => probe.ubf_sv.clone(),
    };
    if sv.values().any(|s| s.at(1.0, true) == INF) {
        return Err(SmoothError::Unsupported("no Lipschitz bound for an exponent argument".into()));
    }
    let achieved = |t: f64, fixed: bool| norm::dual_eval(&smooth_norm, &|c| sv.get(c).map_or(0.0, |s| s.at(t, fixed)));
    let floor = achieved(0.0, true)?;
    let slope = achieved(1.0, false)?;
    let ok = |x: f64| x <= ctx.beta * (1.0 + 1e-12);
    if !ok(floor) {
        return Ok(SmoothBound { ubf: probe.ubf, ubds: E::Const(0.0), beta: floor, feasible: false, t: 0.0 });
    }
    let t = if slope == 0.0 {
        ctx.beta
    } else {
        let t0 = ctx.beta / slope;
        if ok(achieved(t0, true)?) {
            t0
        } else {
            let (mut lo, mut hi) = (0.0, t0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if ok(achieved(mid, true)?) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };
    b.t = t;
    let node = b.node(f)?;
    Ok(SmoothBound {
        ubf: node.ubf,
        ubds: node.ubds.map(|d| d.0).unwrap_or(E::Const(0.0)),
        beta: achieved(t, true)?,
        feasible: true,
        t,
    })
}

/// β-smooth upper bounds of `|f|` and of its derivative sensitivity w.r.t.
/// `n`. Every column of `f` must occur in `n`.
pub fn smooth_bound(f: &ScalarExpr, beta: f64, n: &NormExpr) -> Result<SmoothBound> {
    norm_covers(f, n)?;
    let ctx = BoundContext { beta, smooth_norm: norm::normalize(n), diff: occurrence_factors(f, n)? };
    smooth_bound_ctx(f, &ctx)
}

/// Sensitivity factors per column of `n`: the ℓ1 norm over the occurrences
/// of each such column (weighted by its leaf scale in `n`) is aligned with
/// `n`. Columns outside `n` are constants.
pub fn occurrence_factors(f: &ScalarExpr, n: &NormExpr) -> Result<BTreeMap<String, f64>> {
    let n = norm::normalize(n);
    let w = n.leaf_weights();
    let mut leaves = Vec::new();
    for (c, k) in f.column_occurrences() {
        let Some(&wc) = w.get(&c) else { continue };
        for _ in 0..k {
            leaves.push(norm::NormExpr::scaled(wc, NormExpr::var(&c)));
        }
    }
    if leaves.is_empty() {
        return Ok(BTreeMap::new());
    }
    let nq = NormExpr::lp(1.0, leaves);
    let witness = match norm::compare(&nq, &n)? {
        norm::Comparison::Proof(_) => norm::ScalingWitness::identity(nq.vars()),
        norm::Comparison::Failure(_) => norm::scale_elaborate(&nq, &n)?,
    };
    Ok(w.iter()
        .filter(|(c, _)| nq.vars().contains(*c))
        .map(|(c, wc)| (c.clone(), 1.0 / (wc * witness.effective(c))))
        .collect())
}

// ---------------------------------------------------------------- SQL text

fn num(x: f64) -> String {
    if x < 0.0 {
        format!("({x:?})")
    } else {
        format!("{x:?}")
    }
}

fn join_left(op: &str, parts: Vec<String>) -> String {
    let mut it = parts.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for p in it {
        acc = format!("({acc} {op} {p})");
    }
    acc
}

/// PostgreSQL rendering, fully parenthesised.
impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let exp = |a: f64, g: &ScalarExpr| {
            if a == 1.0 {
                format!("exp({g})")
            } else {
                format!("exp(({} * {g}))", num(a))
            }
        };
        let s = match self {
            E::Const(c) => num(*c),
            E::Col(c) => c.clone(),
            E::Power(g, r) => format!("({g} ^ {})", num(*r)),
            E::Exp(r, g) => exp(*r, g),
            E::Sigmoid(a, g) => format!("({} / ({} + 1.0))", exp(*a, g), exp(*a, g)),
            E::Tauoid(a, g) => format!("(2.0 / ({} + {}))", exp(-a, g), exp(*a, g)),
            E::Sum(gs) => {
                let mut it = gs.iter();
                let mut acc = it.next().map(|g| g.to_string()).unwrap_or_else(|| "0.0".into());
                for g in it {
                    acc = match g {
                        E::Const(c) if *c < 0.0 => format!("({acc} - {:?})", -c),
                        _ => format!("({acc} + {g})"),
                    };
                }
                acc
            }
            E::Prod(gs) if gs.is_empty() => "1.0".into(),
            E::Prod(gs) => join_left("*", gs.iter().map(|g| g.to_string()).collect()),
            E::Min(gs) => format!("least({})", gs.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", ")),
            E::Max(gs) => format!("greatest({})", gs.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(", ")),
            E::LpNorm(p, gs) => {
                let abs: Vec<String> = gs.iter().map(|g| format!("abs({g})")).collect();
                if abs.len() == 1 {
                    abs.into_iter().next().unwrap()
                } else if *p == INF {
                    format!("greatest({})", abs.join(", "))
                } else if *p == 1.0 {
                    join_left("+", abs)
                } else {
                    let pw = abs.into_iter().map(|a| format!("({a} ^ {})", num(*p))).collect();
                    format!("({} ^ {})", join_left("+", pw), num(1.0 / p))
                }
            }
            E::ScaleNorm(a, g) => format!("({} * {g})", num(*a)),
            E::Ln(g) => format!("ln({g})"),
            E::SigmoidDeriv(a, g) => {
                format!("(({} * {}) / (({} + 1.0) ^ 2.0))", num(*a), exp(*a, g), exp(*a, g))
            }
            E::IdentityUbf { b, arg } => format!(
                "case when (abs({arg}) >= {}) then abs({arg}) else (exp((({} * abs({arg})) - 1.0)) / {}) end",
                num(1.0 / b),
                num(*b),
                num(*b)
            ),
            E::ZeroGuard(g, v) => format!("case when ({g} = 0.0) then 0.0 else ({g} * {v}) end"),
            E::Pick { min, keys, values } => {
                let op = if *min { "<=" } else { ">=" };
                let mut s = String::from("case");
                for i in 0..keys.len().saturating_sub(1) {
                    let conds: Vec<String> =
                        (i + 1..keys.len()).map(|j| format!("({} {op} {})", keys[i], keys[j])).collect();
                    s += &format!(" when {} then {}", join_left("AND", conds), values[i]);
                }
                s += &format!(" else {} end", values.last().map(|v| v.to_string()).unwrap_or_else(|| "0.0".into()));
                s
            }
            E::Sign(g) => format!("sign({g})"),
        };
        f.write_str(&s)
    }
}
