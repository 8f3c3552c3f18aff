//! Composite seminorms over named variables: parsing, evaluation,
//! normalization, comparison and rescaling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::hungarian;

/// Exponent value used for the max-combination.
pub const INF: f64 = f64::INFINITY;

const TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum NormExpr {
    Var(String),
    Scale(f64, Box<NormExpr>),
    /// ℓp combination of the children; `p` is `INF` for the max-norm.
    Combine(f64, Vec<NormExpr>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NormError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("exponent must be at least 1, got {0}")]
    BadExponent(f64),
    #[error("no value bound for variable `{0}`")]
    MissingVar(String),
    #[error("variable `{0}` does not occur in the database norm")]
    FreeVariable(String),
    #[error("variable `{0}` occurs in several subnorms; the norm is not tree-shaped")]
    NotTree(String),
}

pub type Result<T> = std::result::Result<T, NormError>;

/// `q = p/(p-1)`, with 1 and ∞ swapped.
pub fn dual_exponent(p: f64) -> f64 {
    if p == INF {
        1.0
    } else if p <= 1.0 {
        INF
    } else {
        p / (p - 1.0)
    }
}

/// ℓp norm of a list of reals (absolute values are taken).
pub fn lp(p: f64, values: impl IntoIterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.into_iter().map(f64::abs).collect();
    if p == INF {
        return vals.into_iter().fold(0.0, f64::max);
    }
    if p == 1.0 {
        return vals.iter().sum();
    }
    let m = vals.iter().cloned().fold(0.0, f64::max);
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * vals.iter().map(|v| (v / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

fn same_exp(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= TOL
}

impl NormExpr {
    pub fn var(name: &str) -> Self {
        NormExpr::Var(name.to_string())
    }

    pub fn scaled(a: f64, child: NormExpr) -> Self {
        NormExpr::Scale(a, Box::new(child))
    }

    pub fn lp(p: f64, children: Vec<NormExpr>) -> Self {
        NormExpr::Combine(p, children)
    }

    pub fn linf(children: Vec<NormExpr>) -> Self {
        NormExpr::Combine(INF, children)
    }

    /// Seminorm with no variables (evaluates to 0).
    pub fn empty() -> Self {
        NormExpr::Combine(1.0, Vec::new())
    }

    pub fn is_empty(&self) -> bool {
        self.vars().is_empty()
    }

    pub fn vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            NormExpr::Var(v) => {
                out.insert(v.clone());
            }
            NormExpr::Scale(_, c) => c.collect_vars(out),
            NormExpr::Combine(_, cs) => cs.iter().for_each(|c| c.collect_vars(out)),
        }
    }

    /// Checks the structural invariants (positive scales, exponents ≥ 1).
    pub fn check(&self) -> Result<()> {
        match self {
            NormExpr::Var(_) => Ok(()),
            NormExpr::Scale(a, c) => {
                if !(*a > 0.0) || !a.is_finite() {
                    return Err(NormError::NonPositiveScale(*a));
                }
                c.check()
            }
            NormExpr::Combine(p, cs) => {
                if !(*p >= 1.0) {
                    return Err(NormError::BadExponent(*p));
                }
                cs.iter().try_for_each(|c| c.check())
            }
        }
    }

    /// Renames every variable through `f`.
    pub fn rename(&self, f: &impl Fn(&str) -> String) -> NormExpr {
        match self {
            NormExpr::Var(v) => NormExpr::Var(f(v)),
            NormExpr::Scale(a, c) => NormExpr::Scale(*a, Box::new(c.rename(f))),
            NormExpr::Combine(p, cs) => NormExpr::Combine(*p, cs.iter().map(|c| c.rename(f)).collect()),
        }
    }

    /// Drops every variable not in `keep` (sets it to zero).
    pub fn restrict(&self, keep: &BTreeSet<String>) -> NormExpr {
        fn go(n: &NormExpr, keep: &BTreeSet<String>) -> Option<NormExpr> {
            match n {
                NormExpr::Var(v) => keep.contains(v).then(|| n.clone()),
                NormExpr::Scale(a, c) => go(c, keep).map(|c| NormExpr::Scale(*a, Box::new(c))),
                NormExpr::Combine(p, cs) => {
                    let kept: Vec<_> = cs.iter().filter_map(|c| go(c, keep)).collect();
                    (!kept.is_empty()).then_some(NormExpr::Combine(*p, kept))
                }
            }
        }
        go(self, keep).unwrap_or_else(NormExpr::empty)
    }

    /// Leaves of a normalized norm as `(variable, coefficient)` in DFS order.
    pub fn leaves(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        fn go(n: &NormExpr, m: f64, out: &mut Vec<(String, f64)>) {
            match n {
                NormExpr::Var(v) => out.push((v.clone(), m)),
                NormExpr::Scale(a, c) => go(c, m * a, out),
                NormExpr::Combine(_, cs) => cs.iter().for_each(|c| go(c, m, out)),
            }
        }
        go(self, 1.0, &mut out);
        out
    }

    /// Per-variable product of the scalings on the path to its leaf; the
    /// largest one when a variable occurs several times.
    pub fn leaf_weights(&self) -> BTreeMap<String, f64> {
        let mut w: BTreeMap<String, f64> = BTreeMap::new();
        for (v, a) in self.leaves() {
            let e = w.entry(v).or_insert(0.0);
            *e = e.max(a);
        }
        w
    }

    /// True if no variable occurs twice.
    pub fn is_tree(&self) -> bool {
        let leaves = self.leaves();
        let set: BTreeSet<_> = leaves.iter().map(|l| &l.0).collect();
        set.len() == leaves.len()
    }

    fn exponents(&self, out: &mut Vec<f64>) {
        if let NormExpr::Combine(p, cs) = self {
            if cs.len() > 1 {
                out.push(*p);
            }
            cs.iter().for_each(|c| c.exponents(out));
        } else if let NormExpr::Scale(_, c) = self {
            c.exponents(out);
        }
    }
}

fn leaf_parts(n: &NormExpr) -> Option<(&str, f64)> {
    match n {
        NormExpr::Var(v) => Some((v, 1.0)),
        NormExpr::Scale(a, c) => match &**c {
            NormExpr::Var(v) => Some((v, *a)),
            _ => None,
        },
        _ => None,
    }
}

fn make_leaf(v: &str, a: f64) -> NormExpr {
    if a == 1.0 {
        NormExpr::Var(v.to_string())
    } else {
        NormExpr::Scale(a, Box::new(NormExpr::Var(v.to_string())))
    }
}

// ---------------------------------------------------------------- text form

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Open,
    Close,
    Word(String),
}

fn tokenize(text: &str) -> Vec<(Tok, usize, usize)> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
            } else if c == '(' || c == ')' {
                out.push((if c == '(' { Tok::Open } else { Tok::Close }, li + 1, i + 1));
                i += 1;
            } else {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '(' && chars[i] != ')' {
                    i += 1;
                }
                out.push((Tok::Word(chars[start..i].iter().collect()), li + 1, start + 1));
            }
        }
    }
    out
}

struct NormParser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
    end: (usize, usize),
}

impl NormParser {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let (line, col) = self.toks.get(self.pos).map(|t| (t.1, t.2)).unwrap_or(self.end);
        Err(NormError::Syntax { line, col, msg: msg.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn number(&mut self) -> Result<f64> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                let v = match w.as_str() {
                    "inf" | "infinity" => INF,
                    _ => match w.parse::<f64>() {
                        Ok(v) => v,
                        Err(_) => return self.err(format!("expected a number, found `{w}`")),
                    },
                };
                self.pos += 1;
                Ok(v)
            }
            _ => self.err("expected a number"),
        }
    }

    fn norm(&mut self) -> Result<NormExpr> {
        match self.peek().cloned() {
            None => self.err("unexpected end of input"),
            Some(Tok::Close) => self.err("unexpected `)`"),
            Some(Tok::Open) => {
                self.pos += 1;
                let n = self.norm()?;
                if self.peek() != Some(&Tok::Close) {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(n)
            }
            Some(Tok::Word(w)) => match w.as_str() {
                "lp" => {
                    self.pos += 1;
                    let p = self.number()?;
                    if !(p >= 1.0) {
                        return Err(NormError::BadExponent(p));
                    }
                    Ok(NormExpr::Combine(p, self.items()?))
                }
                "linf" => {
                    self.pos += 1;
                    Ok(NormExpr::Combine(INF, self.items()?))
                }
                "scaled" => {
                    self.pos += 1;
                    let a = self.number()?;
                    if !(a > 0.0) || !a.is_finite() {
                        return Err(NormError::NonPositiveScale(a));
                    }
                    Ok(NormExpr::Scale(a, Box::new(self.norm()?)))
                }
                _ => {
                    self.pos += 1;
                    Ok(NormExpr::Var(w))
                }
            },
        }
    }

    fn items(&mut self) -> Result<Vec<NormExpr>> {
        let mut out = Vec::new();
        loop {
            match self.peek().cloned() {
                None | Some(Tok::Close) => break,
                Some(Tok::Open) => out.push(self.norm()?),
                Some(Tok::Word(w)) => {
                    if matches!(w.as_str(), "lp" | "linf" | "scaled") {
                        return self.err(format!("nested `{w}` must be parenthesised"));
                    }
                    self.pos += 1;
                    out.push(NormExpr::Var(w));
                }
            }
        }
        if out.is_empty() {
            return self.err("combination needs at least one argument");
        }
        Ok(out)
    }
}

/// Parses the s-expression norm syntax, e.g. `linf(scaled 30.0 (lp 1.0 a b))`.
pub fn parse_norm(text: &str) -> Result<NormExpr> {
    let toks = tokenize(text);
    let end = text
        .lines()
        .enumerate()
        .last()
        .map(|(i, l)| (i + 1, l.chars().count() + 1))
        .unwrap_or((1, 1));
    let mut p = NormParser { toks, pos: 0, end };
    let n = p.norm()?;
    if p.pos < p.toks.len() {
        return p.err("trailing input after norm");
    }
    Ok(n)
}

fn fmt_num(x: f64) -> String {
    if x == INF {
        "inf".into()
    } else {
        format!("{x:?}")
    }
}

impl fmt::Display for NormExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn item(n: &NormExpr) -> String {
            match n {
                NormExpr::Var(v) => v.clone(),
                other => format!("({other})"),
            }
        }
        match self {
            NormExpr::Var(v) => write!(f, "{v}"),
            NormExpr::Scale(a, c) => write!(f, "scaled {} {}", fmt_num(*a), item(c)),
            NormExpr::Combine(p, cs) => {
                if *p == INF {
                    write!(f, "linf")?;
                } else {
                    write!(f, "lp {}", fmt_num(*p))?;
                }
                for c in cs {
                    write!(f, " {}", item(c))?;
                }
                Ok(())
            }
        }
    }
}

// ---------------------------------------------------------------- evaluation

/// Value of the seminorm under a variable assignment.
pub fn eval_norm(n: &NormExpr, lookup: &impl Fn(&str) -> Option<f64>) -> Result<f64> {
    match n {
        NormExpr::Var(v) => lookup(v).map(f64::abs).ok_or_else(|| NormError::MissingVar(v.clone())),
        NormExpr::Scale(a, c) => Ok(a * eval_norm(c, lookup)?),
        NormExpr::Combine(p, cs) => {
            let vals = cs.iter().map(|c| eval_norm(c, lookup)).collect::<Result<Vec<_>>>()?;
            Ok(lp(*p, vals))
        }
    }
}

pub fn eval_norm_map(n: &NormExpr, x: &BTreeMap<String, f64>) -> Result<f64> {
    eval_norm(n, &|v| x.get(v).copied())
}

/// Dual norm of a per-variable vector (missing entries are 0). Requires a
/// tree-shaped norm.
pub fn dual_eval(n: &NormExpr, g: &impl Fn(&str) -> f64) -> Result<f64> {
    if !n.is_tree() {
        let v = n.leaves().into_iter().map(|l| l.0).find(|v| n.leaves().iter().filter(|l| &l.0 == v).count() > 1);
        return Err(NormError::NotTree(v.unwrap_or_default()));
    }
    fn go(n: &NormExpr, g: &impl Fn(&str) -> f64) -> f64 {
        match n {
            NormExpr::Var(v) => g(v).abs(),
            NormExpr::Scale(a, c) => go(c, g) / a,
            NormExpr::Combine(p, cs) => lp(dual_exponent(*p), cs.iter().map(|c| go(c, g))),
        }
    }
    Ok(go(n, g))
}

// ---------------------------------------------------------------- normalize

/// Pushes scalings to the leaves, flattens nested combinations with equal
/// exponent and merges repeated variables of one combination.
pub fn normalize(n: &NormExpr) -> NormExpr {
    fn push(n: &NormExpr, m: f64) -> NormExpr {
        match n {
            NormExpr::Var(v) => make_leaf(v, m),
            NormExpr::Scale(a, c) => push(c, m * a),
            NormExpr::Combine(p, cs) => NormExpr::Combine(*p, cs.iter().map(|c| push(c, m)).collect()),
        }
    }
    fn rec(n: NormExpr) -> NormExpr {
        let NormExpr::Combine(p, cs) = n else { return n };
        let mut flat = Vec::new();
        for c in cs {
            match rec(c) {
                NormExpr::Combine(q, gs) if same_exp(p, q) => flat.extend(gs),
                other => flat.push(other),
            }
        }
        let mut out: Vec<NormExpr> = Vec::new();
        let mut at: HashMap<String, usize> = HashMap::new();
        for c in flat {
            if let Some((v, a)) = leaf_parts(&c) {
                if let Some(&i) = at.get(v) {
                    let (_, b) = leaf_parts(&out[i]).unwrap();
                    let merged = if p == INF { a.max(b) } else { (a.powf(p) + b.powf(p)).powf(1.0 / p) };
                    out[i] = make_leaf(v, merged);
                    continue;
                }
                at.insert(v.to_string(), out.len());
            }
            out.push(c);
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            NormExpr::Combine(p, out)
        }
    }
    rec(push(n, 1.0))
}

// ---------------------------------------------------------------- hammer

/// Flat bound `‖(α_i x_i)‖_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct HammerBound {
    pub p: f64,
    pub alpha: BTreeMap<String, f64>,
}

impl HammerBound {
    pub fn eval(&self, lookup: &impl Fn(&str) -> Option<f64>) -> Result<f64> {
        let vals = self
            .alpha
            .iter()
            .map(|(v, a)| lookup(v).map(|x| a * x).ok_or_else(|| NormError::MissingVar(v.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(lp(self.p, vals))
    }

    /// The bound as a flat norm expression.
    pub fn to_norm(&self) -> NormExpr {
        let cs: Vec<_> = self.alpha.iter().map(|(v, a)| make_leaf(v, *a)).collect();
        NormExpr::Combine(self.p, cs)
    }
}

fn merge_coeffs(leaves: &[(String, f64)], p: f64) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, f64> = BTreeMap::new();
    for (v, a) in leaves {
        let e = acc.entry(v.clone()).or_insert(0.0);
        if p == INF {
            *e = e.max(*a);
        } else {
            *e += a.powf(p);
        }
    }
    if p != INF {
        for a in acc.values_mut() {
            *a = a.powf(1.0 / p);
        }
    }
    acc
}

/// `(lower, upper)` flat bounds: every exponent replaced by the largest
/// (resp. smallest) one used in the norm.
pub fn hammer_bounds(n: &NormExpr) -> (HammerBound, HammerBound) {
    let n = normalize(n);
    let mut ps = Vec::new();
    n.exponents(&mut ps);
    let pmax = ps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pmin = ps.iter().cloned().fold(f64::INFINITY, f64::min);
    let (pmax, pmin) = if ps.is_empty() { (1.0, 1.0) } else { (pmax, pmin) };
    let leaves = n.leaves();
    (
        HammerBound { p: pmax, alpha: merge_coeffs(&leaves, pmax) },
        HammerBound { p: pmin, alpha: merge_coeffs(&leaves, pmin) },
    )
}

// ---------------------------------------------------------------- compare

/// Derivation of `nq ⪯ ndb`.
#[derive(Debug, Clone, PartialEq)]
pub enum Derivation {
    /// Identical terms.
    Same,
    /// `a·x ⪯ b·x` with `a ≤ b`.
    ScaleLe { var: String, a: f64, b: f64 },
    /// The query term is bounded by one argument of the database combination.
    Embed { index: usize, inner: Box<Derivation> },
    /// Injective matching of arguments with `p ≥ q`.
    Match { p: f64, q: f64, pairs: Vec<(usize, usize, Derivation)> },
    /// Nested combinations were flattened first.
    Ungroup(Box<Derivation>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareHint {
    pub query: NormExpr,
    pub db: NormExpr,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Comparison {
    Proof(Derivation),
    Failure(CompareHint),
}

impl Comparison {
    pub fn is_proof(&self) -> bool {
        matches!(self, Comparison::Proof(_))
    }
}

fn lift(p: f64, node: &NormExpr, ge: bool, out: &mut Vec<NormExpr>) {
    if let NormExpr::Combine(r, gs) = node {
        let ok = if ge { *r >= p - TOL } else { *r <= p + TOL };
        if ok {
            gs.iter().for_each(|g| lift(p, g, ge, out));
            return;
        }
    }
    out.push(node.clone());
}

/// Upper bound of a query combination: children with exponent ≥ p lifted.
fn ungroup_upper(n: &NormExpr) -> NormExpr {
    match n {
        NormExpr::Combine(p, cs) => {
            let mut out = Vec::new();
            cs.iter().for_each(|c| lift(*p, c, true, &mut out));
            NormExpr::Combine(*p, out)
        }
        _ => n.clone(),
    }
}

/// Lower bound of a database combination: children with exponent ≤ q lifted.
fn ungroup_lower(n: &NormExpr) -> NormExpr {
    match n {
        NormExpr::Combine(q, cs) => {
            let mut out = Vec::new();
            cs.iter().for_each(|c| lift(*q, c, false, &mut out));
            NormExpr::Combine(*q, out)
        }
        _ => n.clone(),
    }
}

fn le(a: &NormExpr, b: &NormExpr) -> Option<Derivation> {
    if a == b {
        return Some(Derivation::Same);
    }
    if let (Some((x, ca)), Some((y, cb))) = (leaf_parts(a), leaf_parts(b)) {
        return (x == y && ca <= cb * (1.0 + TOL) + TOL)
            .then(|| Derivation::ScaleLe { var: x.to_string(), a: ca, b: cb });
    }
    let NormExpr::Combine(q, ws) = b else { return None };
    if let NormExpr::Combine(p, vs) = a {
        if let Some(d) = le_match(*p, vs, *q, ws) {
            return Some(d);
        }
        let (a2, b2) = (ungroup_upper(a), ungroup_lower(b));
        if a2 != *a || b2 != *b {
            if let (NormExpr::Combine(p2, vs2), NormExpr::Combine(q2, ws2)) = (&a2, &b2) {
                if let Some(d) = le_match(*p2, vs2, *q2, ws2) {
                    return Some(Derivation::Ungroup(Box::new(d)));
                }
            }
        }
    }
    for (j, w) in ws.iter().enumerate() {
        if let Some(d) = le(a, w) {
            return Some(Derivation::Embed { index: j, inner: Box::new(d) });
        }
    }
    None
}

fn le_match(p: f64, vs: &[NormExpr], q: f64, ws: &[NormExpr]) -> Option<Derivation> {
    if p < q - TOL || vs.len() > ws.len() {
        return None;
    }
    let proofs: Vec<Vec<Option<Derivation>>> = vs.iter().map(|v| ws.iter().map(|w| le(v, w)).collect()).collect();
    // Kuhn's augmenting paths
    let mut owner: Vec<Option<usize>> = vec![None; ws.len()];
    fn augment(i: usize, proofs: &[Vec<Option<Derivation>>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for j in 0..owner.len() {
            if proofs[i][j].is_some() && !seen[j] {
                seen[j] = true;
                if owner[j].is_none() || augment(owner[j].unwrap(), proofs, seen, owner) {
                    owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    for i in 0..vs.len() {
        let mut seen = vec![false; ws.len()];
        if !augment(i, &proofs, &mut seen, &mut owner) {
            return None;
        }
    }
    let mut pairs: Vec<(usize, usize, Derivation)> = owner
        .iter()
        .enumerate()
        .filter_map(|(j, o)| o.map(|i| (i, j, proofs[i][j].clone().unwrap())))
        .collect();
    pairs.sort_by_key(|t| t.0);
    Some(Derivation::Match { p, q, pairs })
}

fn check_vars(nq: &NormExpr, ndb: &NormExpr) -> Result<()> {
    let dbv = ndb.vars();
    match nq.vars().into_iter().find(|v| !dbv.contains(v)) {
        Some(v) => Err(NormError::FreeVariable(v)),
        None => Ok(()),
    }
}

/// Tries to derive `nq ⪯ ndb` (pointwise `nq(x) ≤ ndb(x)`).
pub fn compare(nq: &NormExpr, ndb: &NormExpr) -> Result<Comparison> {
    check_vars(nq, ndb)?;
    let (a, b) = (normalize(nq), normalize(ndb));
    if let Some(d) = le(&a, &b) {
        return Ok(Comparison::Proof(d));
    }
    let reason = match (&a, &b) {
        (NormExpr::Combine(p, _), NormExpr::Combine(q, _)) if p < q => {
            format!("exponent {} is below {}; needs a scaling factor", fmt_num(*p), fmt_num(*q))
        }
        (NormExpr::Combine(_, vs), NormExpr::Combine(_, ws)) if vs.len() > ws.len() => {
            "more query arguments than database arguments".to_string()
        }
        (_, _) if leaf_parts(&a).is_some() => "query leaf is not dominated by any database term".to_string(),
        _ => "no injective matching of arguments".to_string(),
    };
    Ok(Comparison::Failure(CompareHint { query: a, db: b, reason }))
}

// ---------------------------------------------------------------- scaling

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMethod {
    Identity,
    Straightforward,
    Elaborate,
}

/// Multipliers `s_i` and `γ` with `γ·nq(s ⊙ x) ≤ ndb(x)` for all `x`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScalingWitness {
    pub scale: BTreeMap<String, f64>,
    pub gamma: f64,
    pub method: ScalingMethod,
}

impl ScalingWitness {
    pub fn identity(vars: impl IntoIterator<Item = String>) -> Self {
        ScalingWitness {
            scale: vars.into_iter().map(|v| (v, 1.0)).collect(),
            gamma: 1.0,
            method: ScalingMethod::Identity,
        }
    }

    /// Overall multiplier of variable `v` (`γ·s_v`).
    pub fn effective(&self, v: &str) -> f64 {
        self.gamma * self.scale.get(v).copied().unwrap_or(1.0)
    }

    /// `γ·nq(s ⊙ x)`.
    pub fn eval_scaled(&self, nq: &NormExpr, lookup: &impl Fn(&str) -> Option<f64>) -> Result<f64> {
        let f = |v: &str| lookup(v).map(|x| x * self.scale.get(v).copied().unwrap_or(1.0));
        Ok(self.gamma * eval_norm(nq, &f)?)
    }

    /// No variable gets a smaller overall multiplier than in `other`.
    pub fn dominates(&self, other: &ScalingWitness) -> bool {
        other.scale.keys().all(|v| self.effective(v) >= other.effective(v) * (1.0 - 1e-12))
    }
}

/// Flat-bound method: upper hammer on the query norm, lower hammer on the
/// database norm, per-variable `min` and a Fact 1 factor.
pub fn scale_straightforward(nq: &NormExpr, ndb: &NormExpr) -> Result<ScalingWitness> {
    check_vars(nq, ndb)?;
    let (_, up) = hammer_bounds(nq);
    let (low, _) = hammer_bounds(ndb);
    let mut scale = BTreeMap::new();
    for (v, a) in &up.alpha {
        let b = low.alpha.get(v).copied().unwrap_or(0.0);
        let g = a.min(b);
        scale.insert(v.clone(), g / a);
    }
    let m = up.alpha.len().max(1) as f64;
    let inv = |p: f64| if p == INF { 0.0 } else { 1.0 / p };
    let gamma = if up.p < low.p { m.powf(inv(low.p) - inv(up.p)) } else { 1.0 };
    Ok(ScalingWitness { scale, gamma, method: ScalingMethod::Straightforward })
}

/// Per-leaf scalings of `a` (DFS order) with total weight Σ −ln s.
type LeafScales = (Vec<f64>, f64);

fn count_leaves(n: &NormExpr) -> usize {
    n.leaves().len()
}

fn sc(a: &NormExpr, b: &NormExpr) -> Option<LeafScales> {
    if let (Some((x, ca)), Some((y, cb))) = (leaf_parts(a), leaf_parts(b)) {
        if x != y {
            return None;
        }
        let s = (cb / ca).min(1.0);
        return Some((vec![s], -s.ln()));
    }
    let NormExpr::Combine(q, ws) = b else { return None };
    let mut best: Option<LeafScales> = None;
    let mut consider = |cand: Option<LeafScales>| {
        if let Some(c) = cand {
            if best.as_ref().is_none_or(|b| c.1 < b.1 - 1e-12) {
                best = Some(c);
            }
        }
    };
    if let NormExpr::Combine(p, vs) = a {
        consider(sc_match(*p, vs, *q, ws));
        let (a2, b2) = (ungroup_upper(a), ungroup_lower(b));
        if a2 != *a || b2 != *b {
            if let (NormExpr::Combine(p2, vs2), NormExpr::Combine(q2, ws2)) = (&a2, &b2) {
                consider(sc_match(*p2, vs2, *q2, ws2));
            }
        }
    }
    for w in ws {
        consider(sc(a, w));
    }
    best
}

fn sc_match(p: f64, vs: &[NormExpr], q: f64, ws: &[NormExpr]) -> Option<LeafScales> {
    if vs.len() > ws.len() {
        return None;
    }
    let subs: Vec<Vec<Option<LeafScales>>> = vs.iter().map(|v| ws.iter().map(|w| sc(v, w)).collect()).collect();
    let cost: Vec<Vec<f64>> = subs
        .iter()
        .map(|row| row.iter().map(|c| c.as_ref().map_or(hungarian::FORBIDDEN, |c| c.1)).collect())
        .collect();
    let (assign, _) = hungarian::min_cost_assignment(&cost)?;
    let m = vs.len() as f64;
    let inv = |p: f64| if p == INF { 0.0 } else { 1.0 / p };
    let factor = if p < q { m.powf(inv(q) - inv(p)) } else { 1.0 };
    let mut scales = Vec::new();
    let mut weight = 0.0;
    for (i, j) in assign.into_iter().enumerate() {
        let (s, w) = subs[i][j].clone().unwrap();
        weight += w - factor.ln() * s.len() as f64;
        scales.extend(s.into_iter().map(|x| x * factor));
    }
    debug_assert_eq!(scales.len(), vs.iter().map(count_leaves).sum::<usize>());
    Some((scales, weight))
}

/// Structural method: recursive matching of subterms, each edge weighted by
/// −ln of the scaling it forces. Falls back to the flat method when no
/// matching exists or when it would scale some variable down further.
pub fn scale_elaborate(nq: &NormExpr, ndb: &NormExpr) -> Result<ScalingWitness> {
    let flat = scale_straightforward(nq, ndb)?;
    let (a, b) = (normalize(nq), normalize(ndb));
    let Some((scales, _)) = sc(&a, &b) else { return Ok(flat) };
    let mut per_var: BTreeMap<String, f64> = BTreeMap::new();
    for ((v, _), s) in a.leaves().into_iter().zip(scales) {
        let e = per_var.entry(v).or_insert(f64::INFINITY);
        *e = e.min(s);
    }
    let w = ScalingWitness { scale: per_var, gamma: 1.0, method: ScalingMethod::Elaborate };
    Ok(if w.dominates(&flat) { w } else { flat })
}
