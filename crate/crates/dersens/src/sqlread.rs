//! A small reader and interpreter for the SQL dialect used here: the input
//! queries and the emitted PostgreSQL text. It is deliberately separate from
//! the emitter so that emitted queries can be checked by re-evaluation.

use std::collections::BTreeMap;
use std::fmt;

/// 1-based line and column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReadError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error("evaluation error: {0}")]
    Eval(String),
}

pub type Result<T> = std::result::Result<T, ReadError>;

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    Quoted(String),
    Num(f64),
    Str(String),
    Sym(&'static str),
}

const SYMS: [&str; 16] = ["<=", ">=", "<>", "!=", "(", ")", ",", ".", ";", "=", "<", ">", "+", "-", "*", "/"];

pub fn tokenize(text: &str) -> Result<Vec<(Tok, Pos)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let adv = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            adv(&mut i, &mut line, &mut col, 1);
        } else if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                adv(&mut i, &mut line, &mut col, 1);
            }
        } else if c == '\'' || c == '"' {
            let mut s = String::new();
            let mut j = i + 1;
            loop {
                match chars.get(j) {
                    None => return Err(ReadError::Syntax { pos, msg: "unterminated quote".into() }),
                    Some(&q) if q == c => {
                        if chars.get(j + 1) == Some(&c) {
                            s.push(c);
                            j += 2;
                        } else {
                            j += 1;
                            break;
                        }
                    }
                    Some(&ch) => {
                        s.push(ch);
                        j += 1;
                    }
                }
            }
            let n = j - i;
            adv(&mut i, &mut line, &mut col, n);
            out.push((if c == '\'' { Tok::Str(s) } else { Tok::Quoted(s) }, pos));
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    j = k;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
            }
            let s: String = chars[i..j].iter().collect();
            let v = s.parse().map_err(|_| ReadError::Syntax { pos, msg: format!("bad number `{s}`") })?;
            let n = j - i;
            adv(&mut i, &mut line, &mut col, n);
            out.push((Tok::Num(v), pos));
        } else if c.is_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '#') {
                j += 1;
            }
            let s: String = chars[i..j].iter().collect();
            let n = j - i;
            adv(&mut i, &mut line, &mut col, n);
            out.push((Tok::Ident(s), pos));
        } else if c == '^' {
            adv(&mut i, &mut line, &mut col, 1);
            out.push((Tok::Sym("^"), pos));
        } else {
            let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            match SYMS.iter().find(|s| rest.starts_with(**s)) {
                Some(s) => {
                    adv(&mut i, &mut line, &mut col, s.len());
                    out.push((Tok::Sym(s), pos));
                }
                None => return Err(ReadError::Syntax { pos, msg: format!("unexpected character `{c}`") }),
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
    Like,
}

impl BinOp {
    pub fn sql(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
            BinOp::Eq => "=",
            BinOp::Ne => "<>",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "AND",
            BinOp::Or => "OR",
            BinOp::Like => "LIKE",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Like)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Str(String),
    Bool(bool),
    /// Optional qualifier and column name.
    Col(Option<String>, String, Pos),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    /// Function or aggregate call with lower-cased name.
    Func(String, Vec<Expr>, Pos),
    Star,
    Case(Vec<(Expr, Expr)>, Option<Box<Expr>>),
    In(Box<Expr>, Vec<Expr>, bool),
    Between(Box<Expr>, Box<Expr>, Box<Expr>, bool),
    Subquery(Box<Select>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum FromItem {
    Table { name: String, alias: String, pos: Pos },
    Sub { query: Box<Select>, alias: String },
}

impl FromItem {
    pub fn alias(&self) -> &str {
        match self {
            FromItem::Table { alias, .. } | FromItem::Sub { alias, .. } => alias,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Select {
    pub at: Pos,
    pub distinct_at: Option<Pos>,
    pub items: Vec<(Expr, Option<String>)>,
    pub from: Vec<FromItem>,
    pub filter: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub group_by_at: Option<Pos>,
    /// Position of the first token the parser does not support, if any.
    pub trailing: Option<(Pos, String)>,
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    end: Pos,
}

fn kw(t: &Tok, k: &str) -> bool {
    matches!(t, Tok::Ident(s) if s.eq_ignore_ascii_case(k))
}

const RESERVED: [&str; 22] = [
    "select", "from", "where", "group", "by", "and", "or", "not", "like", "in", "between", "case", "when", "then",
    "else", "end", "as", "distinct", "having", "order", "limit", "union",
];

impl Parser {
    fn pos(&self) -> Pos {
        self.toks.get(self.i).map(|t| t.1).unwrap_or(self.end)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.0)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.i + k).map(|t| &t.0)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(ReadError::Syntax { pos: self.pos(), msg: msg.into() })
    }

    fn is_kw(&self, k: &str) -> bool {
        self.peek().is_some_and(|t| kw(t, k))
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.peek() == Some(&Tok::Sym(match SYMS.iter().chain(["^"].iter()).find(|x| **x == s) {
            Some(x) => x,
            None => return false,
        })) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn expect_kw(&mut self, k: &str) -> Result<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            self.err(format!("expected `{}`", k.to_uppercase()))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) if !RESERVED.iter().any(|r| s.eq_ignore_ascii_case(r)) => {
                self.i += 1;
                Ok(s)
            }
            Some(Tok::Quoted(s)) => {
                self.i += 1;
                Ok(s)
            }
            _ => self.err("expected an identifier"),
        }
    }

    fn select(&mut self) -> Result<Select> {
        let at = self.pos();
        self.expect_kw("select")?;
        let distinct_at = if self.is_kw("distinct") {
            let p = self.pos();
            self.i += 1;
            Some(p)
        } else {
            None
        };
        let mut items = Vec::new();
        loop {
            let e = self.expr()?;
            let alias = if self.eat_kw("as") || matches!(self.peek(), Some(Tok::Ident(s)) if !RESERVED.iter().any(|r| s.eq_ignore_ascii_case(r))) {
                Some(self.ident()?)
            } else {
                None
            };
            items.push((e, alias));
            if !self.eat_sym(",") {
                break;
            }
        }
        let mut from = Vec::new();
        if self.eat_kw("from") {
            loop {
                if self.peek() == Some(&Tok::Sym("(")) {
                    self.i += 1;
                    let q = self.select()?;
                    self.expect_sym(")")?;
                    self.eat_kw("as");
                    let alias = self.ident()?;
                    from.push(FromItem::Sub { query: Box::new(q), alias });
                } else {
                    let pos = self.pos();
                    let name = self.ident()?;
                    let alias = if self.eat_kw("as") || matches!(self.peek(), Some(Tok::Ident(s)) if !RESERVED.iter().any(|r| s.eq_ignore_ascii_case(r))) {
                        self.ident()?
                    } else {
                        name.clone()
                    };
                    from.push(FromItem::Table { name, alias, pos });
                }
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let filter = if self.eat_kw("where") { Some(self.expr()?) } else { None };
        let mut group_by = Vec::new();
        let mut group_by_at = None;
        if self.is_kw("group") {
            group_by_at = Some(self.pos());
            self.i += 1;
            self.expect_kw("by")?;
            loop {
                group_by.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        let trailing = match self.peek() {
            Some(t) if !matches!(t, Tok::Sym(";") | Tok::Sym(")")) => Some((self.pos(), format!("{t:?}"))),
            _ => None,
        };
        Ok(Select { at, distinct_at, items, from, filter, group_by, group_by_at, trailing })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut l = self.and()?;
        while self.eat_kw("or") {
            let r = self.and()?;
            l = Expr::Bin(BinOp::Or, Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn and(&mut self) -> Result<Expr> {
        let mut l = self.not()?;
        while self.eat_kw("and") {
            let r = self.not()?;
            l = Expr::Bin(BinOp::And, Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn not(&mut self) -> Result<Expr> {
        if self.eat_kw("not") {
            return Ok(Expr::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr> {
        let l = self.add()?;
        let op = match self.peek() {
            Some(Tok::Sym("=")) => Some(BinOp::Eq),
            Some(Tok::Sym("<>")) | Some(Tok::Sym("!=")) => Some(BinOp::Ne),
            Some(Tok::Sym("<")) => Some(BinOp::Lt),
            Some(Tok::Sym("<=")) => Some(BinOp::Le),
            Some(Tok::Sym(">")) => Some(BinOp::Gt),
            Some(Tok::Sym(">=")) => Some(BinOp::Ge),
            _ => None,
        };
        if let Some(op) = op {
            self.i += 1;
            let r = self.add()?;
            return Ok(Expr::Bin(op, Box::new(l), Box::new(r)));
        }
        let negated = self.is_kw("not")
            && self.peek_at(1).is_some_and(|t| kw(t, "like") || kw(t, "in") || kw(t, "between"));
        if negated {
            self.i += 1;
        }
        let wrap = |e: Expr| if negated { Expr::Not(Box::new(e)) } else { e };
        if self.eat_kw("like") {
            let r = self.add()?;
            return Ok(wrap(Expr::Bin(BinOp::Like, Box::new(l), Box::new(r))));
        }
        if self.eat_kw("in") {
            self.expect_sym("(")?;
            let mut xs = Vec::new();
            loop {
                xs.push(self.expr()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
            return Ok(Expr::In(Box::new(l), xs, negated));
        }
        if self.eat_kw("between") {
            let lo = self.add()?;
            self.expect_kw("and")?;
            let hi = self.add()?;
            return Ok(Expr::Between(Box::new(l), Box::new(lo), Box::new(hi), negated));
        }
        if negated {
            return self.err("expected LIKE, IN or BETWEEN after NOT");
        }
        Ok(l)
    }

    fn add(&mut self) -> Result<Expr> {
        let mut l = self.mul()?;
        loop {
            let op = if self.eat_sym("+") {
                BinOp::Add
            } else if self.eat_sym("-") {
                BinOp::Sub
            } else {
                break;
            };
            let r = self.mul()?;
            l = Expr::Bin(op, Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn mul(&mut self) -> Result<Expr> {
        let mut l = self.pow()?;
        loop {
            let op = if self.eat_sym("*") {
                BinOp::Mul
            } else if self.eat_sym("/") {
                BinOp::Div
            } else {
                break;
            };
            let r = self.pow()?;
            l = Expr::Bin(op, Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn pow(&mut self) -> Result<Expr> {
        let mut l = self.unary()?;
        while self.eat_sym("^") {
            let r = self.unary()?;
            l = Expr::Bin(BinOp::Pow, Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_sym("-") {
            return Ok(match self.unary()? {
                Expr::Num(x) => Expr::Num(-x),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat_sym("+") {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        let pos = self.pos();
        match self.peek().cloned() {
            None => self.err("unexpected end of input"),
            Some(Tok::Num(x)) => {
                self.i += 1;
                Ok(Expr::Num(x))
            }
            Some(Tok::Str(s)) => {
                self.i += 1;
                Ok(Expr::Str(s))
            }
            Some(Tok::Sym("(")) => {
                self.i += 1;
                if self.is_kw("select") {
                    let q = self.select()?;
                    self.expect_sym(")")?;
                    return Ok(Expr::Subquery(Box::new(q)));
                }
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Some(Tok::Sym("*")) => {
                self.i += 1;
                Ok(Expr::Star)
            }
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("true") || s.eq_ignore_ascii_case("false") => {
                self.i += 1;
                Ok(Expr::Bool(s.eq_ignore_ascii_case("true")))
            }
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("case") => {
                self.i += 1;
                let mut whens = Vec::new();
                while self.eat_kw("when") {
                    let c = self.expr()?;
                    self.expect_kw("then")?;
                    whens.push((c, self.expr()?));
                }
                if whens.is_empty() {
                    return self.err("CASE needs at least one WHEN");
                }
                let els = if self.eat_kw("else") { Some(Box::new(self.expr()?)) } else { None };
                self.expect_kw("end")?;
                Ok(Expr::Case(whens, els))
            }
            Some(Tok::Ident(_)) | Some(Tok::Quoted(_)) => {
                let name = self.ident()?;
                if self.peek() == Some(&Tok::Sym("(")) {
                    self.i += 1;
                    let mut args = Vec::new();
                    if !self.eat_sym(")") {
                        if self.is_kw("distinct") {
                            return self.err("DISTINCT inside an aggregate is not supported");
                        }
                        loop {
                            args.push(self.expr()?);
                            if !self.eat_sym(",") {
                                break;
                            }
                        }
                        self.expect_sym(")")?;
                    }
                    return Ok(Expr::Func(name.to_lowercase(), args, pos));
                }
                if self.eat_sym(".") {
                    let col = self.ident()?;
                    return Ok(Expr::Col(Some(name), col, pos));
                }
                Ok(Expr::Col(None, name, pos))
            }
            Some(t) => self.err(format!("unexpected token {t:?}")),
        }
    }
}

/// Parses one SELECT statement (an optional trailing `;` is accepted).
pub fn parse_select(text: &str) -> Result<Select> {
    let toks = tokenize(text)?;
    let end = toks.last().map(|t| t.1).unwrap_or(Pos { line: 1, col: 1 });
    let mut p = Parser { toks, i: 0, end };
    let q = p.select()?;
    if let Some((pos, t)) = &q.trailing {
        return Err(ReadError::Syntax { pos: *pos, msg: format!("unsupported or unexpected token {t}") });
    }
    p.eat_sym(";");
    if p.i < p.toks.len() {
        return p.err("trailing input after statement");
    }
    Ok(q)
}

/// Parses a bare expression.
pub fn parse_expr(text: &str) -> Result<Expr> {
    let toks = tokenize(text)?;
    let end = toks.last().map(|t| t.1).unwrap_or(Pos { line: 1, col: 1 });
    let mut p = Parser { toks, i: 0, end };
    let e = p.expr()?;
    if p.i < p.toks.len() {
        return p.err("trailing input after expression");
    }
    Ok(e)
}

// ---------------------------------------------------------------- printing

fn num(x: f64) -> String {
    if x < 0.0 {
        format!("({x:?})")
    } else {
        format!("{x:?}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{}", num(*x)),
            Expr::Str(s) => write!(f, "'{}'", s.replace('\'', "''")),
            Expr::Bool(b) => write!(f, "{}", if *b { "true" } else { "false" }),
            Expr::Col(Some(t), c, _) => write!(f, "{t}.{c}"),
            Expr::Col(None, c, _) => write!(f, "{c}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Not(e) => write!(f, "not({e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.sql()),
            Expr::Func(n, args, _) => {
                write!(f, "{n}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Expr::Star => write!(f, "*"),
            Expr::Case(ws, e) => {
                write!(f, "case")?;
                for (c, v) in ws {
                    write!(f, " when {c} then {v}")?;
                }
                if let Some(e) = e {
                    write!(f, " else {e}")?;
                }
                write!(f, " end")
            }
            Expr::In(e, xs, neg) => {
                write!(f, "({e} {}IN (", if *neg { "NOT " } else { "" })?;
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, "))")
            }
            Expr::Between(e, lo, hi, neg) => {
                write!(f, "({e} {}BETWEEN {lo} AND {hi})", if *neg { "NOT " } else { "" })
            }
            Expr::Subquery(q) => write!(f, "({q})"),
        }
    }
}

impl fmt::Display for Select {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SELECT ")?;
        if self.distinct_at.is_some() {
            write!(f, "DISTINCT ")?;
        }
        for (i, (e, a)) in self.items.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{e}")?;
            if let Some(a) = a {
                write!(f, " AS {a}")?;
            }
        }
        if !self.from.is_empty() {
            write!(f, " FROM ")?;
        }
        for (i, it) in self.from.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match it {
                FromItem::Table { name, alias, .. } if name == alias => write!(f, "{name}")?,
                FromItem::Table { name, alias, .. } => write!(f, "{name} {alias}")?,
                FromItem::Sub { query, alias } => write!(f, "({query}) AS {alias}")?,
            }
        }
        if let Some(w) = &self.filter {
            write!(f, " WHERE {w}")?;
        }
        if !self.group_by.is_empty() {
            write!(f, " GROUP BY ")?;
            for (i, g) in self.group_by.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{g}")?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- tree comparison

fn and_chain<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::Bin(BinOp::And, a, b) => {
            and_chain(a, out);
            and_chain(b, out);
        }
        _ => out.push(e),
    }
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
}

/// Operator-tree equality: constants compared with relative tolerance `rel`,
/// identifiers case-insensitively, AND chains flattened.
pub fn same_expr(a: &Expr, b: &Expr, rel: f64) -> std::result::Result<(), String> {
    let fail = || Err(format!("`{a}` differs from `{b}`"));
    let all = |xs: &[Expr], ys: &[Expr]| -> std::result::Result<(), String> {
        if xs.len() != ys.len() {
            return Err(format!("argument count {} vs {}", xs.len(), ys.len()));
        }
        xs.iter().zip(ys).try_for_each(|(x, y)| same_expr(x, y, rel))
    };
    let ieq = |x: &str, y: &str| x.eq_ignore_ascii_case(y);
    match (a, b) {
        (Expr::Num(x), Expr::Num(y)) if close(*x, *y, rel) => Ok(()),
        (Expr::Str(x), Expr::Str(y)) if x == y => Ok(()),
        (Expr::Bool(x), Expr::Bool(y)) if x == y => Ok(()),
        (Expr::Col(t1, c1, _), Expr::Col(t2, c2, _))
            if ieq(c1, c2) && t1.as_deref().map(str::to_lowercase) == t2.as_deref().map(str::to_lowercase) =>
        {
            Ok(())
        }
        (Expr::Neg(x), Expr::Neg(y)) | (Expr::Not(x), Expr::Not(y)) => same_expr(x, y, rel),
        (Expr::Bin(BinOp::And, ..), Expr::Bin(BinOp::And, ..)) => {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            and_chain(a, &mut xs);
            and_chain(b, &mut ys);
            if xs.len() != ys.len() {
                return Err(format!("AND chain of {} vs {} conjuncts", xs.len(), ys.len()));
            }
            xs.iter().zip(&ys).try_for_each(|(x, y)| same_expr(x, y, rel))
        }
        (Expr::Bin(o1, a1, b1), Expr::Bin(o2, a2, b2)) if o1 == o2 => {
            same_expr(a1, a2, rel)?;
            same_expr(b1, b2, rel)
        }
        (Expr::Func(n1, x, _), Expr::Func(n2, y, _)) if n1 == n2 => all(x, y),
        (Expr::Star, Expr::Star) => Ok(()),
        (Expr::Case(w1, e1), Expr::Case(w2, e2)) if w1.len() == w2.len() => {
            for ((c1, v1), (c2, v2)) in w1.iter().zip(w2) {
                same_expr(c1, c2, rel)?;
                same_expr(v1, v2, rel)?;
            }
            match (e1, e2) {
                (Some(x), Some(y)) => same_expr(x, y, rel),
                (None, None) => Ok(()),
                _ => fail(),
            }
        }
        (Expr::In(x, xs, n1), Expr::In(y, ys, n2)) if n1 == n2 => {
            same_expr(x, y, rel)?;
            all(xs, ys)
        }
        (Expr::Between(x, l1, h1, n1), Expr::Between(y, l2, h2, n2)) if n1 == n2 => {
            same_expr(x, y, rel)?;
            same_expr(l1, l2, rel)?;
            same_expr(h1, h2, rel)
        }
        (Expr::Subquery(x), Expr::Subquery(y)) => same_select(x, y, rel),
        _ => fail(),
    }
}

pub fn same_select(a: &Select, b: &Select, rel: f64) -> std::result::Result<(), String> {
    if a.items.len() != b.items.len() {
        return Err("different number of select items".into());
    }
    for ((x, _), (y, _)) in a.items.iter().zip(&b.items) {
        same_expr(x, y, rel)?;
    }
    same_from(&a.from, &b.from, rel)?;
    match (&a.filter, &b.filter) {
        (Some(x), Some(y)) => same_expr(x, y, rel)?,
        (None, None) => {}
        _ => return Err("WHERE clause present on one side only".into()),
    }
    if a.group_by.len() != b.group_by.len() {
        return Err("GROUP BY differs".into());
    }
    a.group_by.iter().zip(&b.group_by).try_for_each(|(x, y)| same_expr(x, y, rel))
}

pub fn same_from(a: &[FromItem], b: &[FromItem], rel: f64) -> std::result::Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("FROM lists of length {} vs {}", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (FromItem::Table { name: n1, alias: a1, .. }, FromItem::Table { name: n2, alias: a2, .. })
                if n1.eq_ignore_ascii_case(n2) && a1.eq_ignore_ascii_case(a2) => {}
            (FromItem::Sub { query: q1, alias: a1 }, FromItem::Sub { query: q2, alias: a2 })
                if a1.eq_ignore_ascii_case(a2) =>
            {
                same_select(q1, q2, rel)?
            }
            _ => return Err(format!("FROM item `{}` vs `{}`", x.alias(), y.alias())),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- evaluation

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Null,
    Num(f64),
    Str(String),
    Bool(bool),
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    fn truthy(&self) -> bool {
        match self {
            Value::Bool(b) => *b,
            Value::Num(x) => *x != 0.0,
            _ => false,
        }
    }
}

/// A materialized table: column names and rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Relation {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

/// Source of base tables for [`eval_select`].
pub trait Catalog {
    fn relation(&self, name: &str) -> Option<Relation>;
}

impl Catalog for BTreeMap<String, Relation> {
    fn relation(&self, name: &str) -> Option<Relation> {
        self.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Agg {
    Sum,
    Count,
    Max,
    Min,
    Avg,
    Product,
}

#[derive(Clone, Debug)]
enum B {
    Lit(Value),
    Col(usize, usize),
    Neg(Box<B>),
    Not(Box<B>),
    Bin(BinOp, Box<B>, Box<B>),
    Func(String, Vec<B>),
    Agg(Agg, Option<Box<B>>),
    Case(Vec<(B, B)>, Option<Box<B>>),
    In(Box<B>, Vec<B>, bool),
    Between(Box<B>, Box<B>, Box<B>, bool),
}

impl B {
    fn max_item(&self) -> Option<usize> {
        let m = |xs: &mut dyn Iterator<Item = &B>| xs.filter_map(B::max_item).max();
        match self {
            B::Lit(_) => None,
            B::Col(i, _) => Some(*i),
            B::Neg(x) | B::Not(x) => x.max_item(),
            B::Bin(_, a, b) => a.max_item().max(b.max_item()),
            B::Func(_, xs) => m(&mut xs.iter()),
            B::Agg(_, x) => x.as_ref().and_then(|x| x.max_item()),
            B::Case(ws, e) => m(&mut ws.iter().flat_map(|(a, b)| [a, b]).chain(e.as_deref())),
            B::In(x, xs, _) => x.max_item().max(m(&mut xs.iter())),
            B::Between(x, l, h, _) => x.max_item().max(l.max_item()).max(h.max_item()),
        }
    }

    fn has_agg(&self) -> bool {
        match self {
            B::Agg(..) => true,
            B::Lit(_) | B::Col(..) => false,
            B::Neg(x) | B::Not(x) => x.has_agg(),
            B::Bin(_, a, b) => a.has_agg() || b.has_agg(),
            B::Func(_, xs) => xs.iter().any(B::has_agg),
            B::Case(ws, e) => ws.iter().any(|(a, b)| a.has_agg() || b.has_agg()) || e.as_ref().is_some_and(|e| e.has_agg()),
            B::In(x, xs, _) => x.has_agg() || xs.iter().any(B::has_agg),
            B::Between(x, l, h, _) => x.has_agg() || l.has_agg() || h.has_agg(),
        }
    }
}

struct Binder<'a> {
    scope: &'a [(String, Vec<String>)],
    cat: &'a dyn Catalog,
}

impl Binder<'_> {
    fn col(&self, t: &Option<String>, c: &str) -> Result<B> {
        let mut found = None;
        for (i, (alias, cols)) in self.scope.iter().enumerate() {
            if t.as_ref().is_some_and(|t| !t.eq_ignore_ascii_case(alias)) {
                continue;
            }
            if let Some(j) = cols.iter().position(|x| x.eq_ignore_ascii_case(c)) {
                if found.is_some() {
                    return Err(ReadError::Resolve(format!("ambiguous column `{c}`")));
                }
                found = Some(B::Col(i, j));
            }
        }
        found.ok_or_else(|| {
            ReadError::Resolve(match t {
                Some(t) => format!("column `{t}.{c}`"),
                None => format!("column `{c}`"),
            })
        })
    }

    fn bind(&self, e: &Expr) -> Result<B> {
        let bx = |e: &Expr| self.bind(e).map(Box::new);
        Ok(match e {
            Expr::Num(x) => B::Lit(Value::Num(*x)),
            Expr::Str(s) => B::Lit(Value::Str(s.clone())),
            Expr::Bool(b) => B::Lit(Value::Bool(*b)),
            Expr::Col(t, c, _) => self.col(t, c)?,
            Expr::Neg(x) => B::Neg(bx(x)?),
            Expr::Not(x) => B::Not(bx(x)?),
            Expr::Bin(op, a, b) => B::Bin(*op, bx(a)?, bx(b)?),
            Expr::Func(name, args, _) => {
                let agg = match name.as_str() {
                    "sum" => Some(Agg::Sum),
                    "count" => Some(Agg::Count),
                    "max" => Some(Agg::Max),
                    "min" => Some(Agg::Min),
                    "avg" => Some(Agg::Avg),
                    "product" => Some(Agg::Product),
                    _ => None,
                };
                match agg {
                    Some(a) => {
                        let arg = match args.as_slice() {
                            [Expr::Star] => None,
                            [x] => Some(bx(x)?),
                            _ => return Err(ReadError::Eval(format!("{name} takes one argument"))),
                        };
                        B::Agg(a, arg)
                    }
                    None => B::Func(name.clone(), args.iter().map(|a| self.bind(a)).collect::<Result<_>>()?),
                }
            }
            Expr::Star => return Err(ReadError::Eval("`*` outside count(*)".into())),
            Expr::Case(ws, e) => B::Case(
                ws.iter().map(|(c, v)| Ok((self.bind(c)?, self.bind(v)?))).collect::<Result<_>>()?,
                e.as_ref().map(|e| bx(e)).transpose()?,
            ),
            Expr::In(x, xs, n) => B::In(bx(x)?, xs.iter().map(|x| self.bind(x)).collect::<Result<_>>()?, *n),
            Expr::Between(x, l, h, n) => B::Between(bx(x)?, bx(l)?, bx(h)?, *n),
            Expr::Subquery(q) => {
                let r = eval_select(q, self.cat)?;
                let v = match (r.rows.as_slice(), r.columns.len()) {
                    ([row], 1) => row[0].clone(),
                    ([], 1) => Value::Null,
                    _ => return Err(ReadError::Eval("scalar subquery must return one value".into())),
                };
                B::Lit(v)
            }
        })
    }
}

pub fn like(s: &str, pat: &str) -> bool {
    let s: Vec<char> = s.chars().collect();
    let p: Vec<char> = pat.chars().collect();
    // dp over (pattern, string) prefixes
    let mut dp = vec![vec![false; s.len() + 1]; p.len() + 1];
    dp[0][0] = true;
    for i in 1..=p.len() {
        for j in 0..=s.len() {
            dp[i][j] = match p[i - 1] {
                '%' => dp[i - 1][j] || (j > 0 && dp[i][j - 1]),
                '_' => j > 0 && dp[i - 1][j - 1],
                c => j > 0 && s[j - 1] == c && dp[i - 1][j - 1],
            };
        }
    }
    dp[p.len()][s.len()]
}

fn cmp_values(a: &Value, b: &Value) -> Option<std::cmp::Ordering> {
    match (a, b) {
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        (Value::Null, _) | (_, Value::Null) => None,
        _ => a.as_num()?.partial_cmp(&b.as_num()?),
    }
}

type Row<'a> = [&'a [Value]];

fn eval_b(e: &B, row: &Row<'_>, group: Option<&[Vec<&[Value]>]>) -> Result<Value> {
    let ev = |x: &B| eval_b(x, row, group);
    let numv = |x: &B| -> Result<Option<f64>> {
        match ev(x)? {
            Value::Null => Ok(None),
            v => v.as_num().map(Some).ok_or_else(|| ReadError::Eval(format!("not a number: {v:?}"))),
        }
    };
    Ok(match e {
        B::Lit(v) => v.clone(),
        B::Col(i, j) => row[*i][*j].clone(),
        B::Neg(x) => numv(x)?.map_or(Value::Null, |v| Value::Num(-v)),
        B::Not(x) => match ev(x)? {
            Value::Null => Value::Null,
            v => Value::Bool(!v.truthy()),
        },
        B::Bin(BinOp::And, a, b) => Value::Bool(ev(a)?.truthy() && ev(b)?.truthy()),
        B::Bin(BinOp::Or, a, b) => Value::Bool(ev(a)?.truthy() || ev(b)?.truthy()),
        B::Bin(BinOp::Like, a, b) => match (ev(a)?, ev(b)?) {
            (Value::Str(s), Value::Str(p)) => Value::Bool(like(&s, &p)),
            _ => Value::Null,
        },
        B::Bin(op, a, b) if op.is_comparison() => {
            let (x, y) = (ev(a)?, ev(b)?);
            match cmp_values(&x, &y) {
                None => Value::Null,
                Some(o) => Value::Bool(match op {
                    BinOp::Eq => o.is_eq(),
                    BinOp::Ne => o.is_ne(),
                    BinOp::Lt => o.is_lt(),
                    BinOp::Le => o.is_le(),
                    BinOp::Gt => o.is_gt(),
                    _ => o.is_ge(),
                }),
            }
        }
        B::Bin(op, a, b) => match (numv(a)?, numv(b)?) {
            (Some(x), Some(y)) => Value::Num(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                _ => x.powf(y),
            }),
            _ => Value::Null,
        },
        B::Func(name, args) => {
            let mut xs = Vec::new();
            for a in args {
                xs.push(numv(a)?);
            }
            let one = |f: fn(f64) -> f64| -> Result<Value> {
                match xs.as_slice() {
                    [Some(x)] => Ok(Value::Num(f(*x))),
                    [None] => Ok(Value::Null),
                    _ => Err(ReadError::Eval(format!("{name} takes one argument"))),
                }
            };
            match name.as_str() {
                "exp" => one(f64::exp)?,
                "abs" => one(f64::abs)?,
                "ln" => one(f64::ln)?,
                "sqrt" => one(f64::sqrt)?,
                "sign" => one(|x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })?,
                "greatest" | "least" => {
                    let vals: Vec<f64> = xs.into_iter().flatten().collect();
                    if vals.is_empty() {
                        Value::Null
                    } else if name == "greatest" {
                        Value::Num(vals.into_iter().fold(f64::NEG_INFINITY, f64::max))
                    } else {
                        Value::Num(vals.into_iter().fold(f64::INFINITY, f64::min))
                    }
                }
                "coalesce" => xs.into_iter().flatten().next().map_or(Value::Null, Value::Num),
                "power" => match xs.as_slice() {
                    [Some(x), Some(y)] => Value::Num(x.powf(*y)),
                    _ => Value::Null,
                },
                _ => return Err(ReadError::Eval(format!("unknown function `{name}`"))),
            }
        }
        B::Agg(kind, arg) => {
            let rows = group.ok_or_else(|| ReadError::Eval("aggregate outside a grouped context".into()))?;
            let mut vals = Vec::new();
            for r in rows {
                match arg {
                    None => vals.push(1.0),
                    Some(x) => match eval_b(x, r, None)? {
                        Value::Null => {}
                        v => vals.push(v.as_num().ok_or_else(|| ReadError::Eval(format!("cannot aggregate {v:?}")))?),
                    },
                }
            }
            match kind {
                Agg::Count => Value::Num(vals.len() as f64),
                _ if vals.is_empty() => Value::Null,
                Agg::Sum => Value::Num(vals.iter().sum()),
                Agg::Avg => Value::Num(vals.iter().sum::<f64>() / vals.len() as f64),
                Agg::Product => Value::Num(vals.iter().product()),
                Agg::Max => Value::Num(vals.into_iter().fold(f64::NEG_INFINITY, f64::max)),
                Agg::Min => Value::Num(vals.into_iter().fold(f64::INFINITY, f64::min)),
            }
        }
        B::Case(ws, els) => {
            for (c, v) in ws {
                if ev(c)?.truthy() {
                    return ev(v);
                }
            }
            match els {
                Some(e) => ev(e)?,
                None => Value::Null,
            }
        }
        B::In(x, xs, neg) => {
            let v = ev(x)?;
            let mut hit = false;
            for y in xs {
                if cmp_values(&v, &ev(y)?).is_some_and(|o| o.is_eq()) {
                    hit = true;
                    break;
                }
            }
            Value::Bool(hit != *neg)
        }
        B::Between(x, l, h, neg) => {
            let v = ev(x)?;
            let inside = cmp_values(&v, &ev(l)?).is_some_and(|o| o.is_ge()) && cmp_values(&v, &ev(h)?).is_some_and(|o| o.is_le());
            Value::Bool(inside != *neg)
        }
    })
}

/// Evaluates a SELECT over the catalog with plain SQL semantics (nested-loop
/// joins, NULL for aggregates other than count over no rows).
pub fn eval_select(q: &Select, cat: &dyn Catalog) -> Result<Relation> {
    let mut rels = Vec::new();
    let mut scope = Vec::new();
    for it in &q.from {
        let r = match it {
            FromItem::Table { name, .. } => cat.relation(name).ok_or_else(|| ReadError::Resolve(format!("table `{name}`")))?,
            FromItem::Sub { query, .. } => eval_select(query, cat)?,
        };
        scope.push((it.alias().to_string(), r.columns.clone()));
        rels.push(r);
    }
    let binder = Binder { scope: &scope, cat };
    let mut conj = Vec::new();
    if let Some(w) = &q.filter {
        and_chain(w, &mut conj);
    }
    // conjuncts checked as soon as the last relation they use is bound
    let mut at_depth: Vec<Vec<B>> = vec![Vec::new(); rels.len().max(1)];
    for c in conj {
        let b = binder.bind(c)?;
        at_depth[b.max_item().unwrap_or(0)].push(b);
    }
    let mut passing: Vec<Vec<usize>> = Vec::new();
    let mut idx = vec![0usize; rels.len()];
    fn walk(
        d: usize,
        rels: &[Relation],
        at_depth: &[Vec<B>],
        idx: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) -> Result<()> {
        if d == rels.len() {
            out.push(idx.clone());
            return Ok(());
        }
        for r in 0..rels[d].rows.len() {
            idx[d] = r;
            let row: Vec<&[Value]> = (0..=d).map(|k| rels[k].rows[idx[k]].as_slice()).collect();
            let mut ok = true;
            for c in &at_depth[d] {
                if !eval_b(c, &row, None)?.truthy() {
                    ok = false;
                    break;
                }
            }
            if ok {
                walk(d + 1, rels, at_depth, idx, out)?;
            }
        }
        Ok(())
    }
    walk(0, &rels, &at_depth, &mut idx, &mut passing)?;
    let items: Vec<B> = q.items.iter().map(|(e, _)| binder.bind(e)).collect::<Result<_>>()?;
    let keys: Vec<B> = q.group_by.iter().map(|e| binder.bind(e)).collect::<Result<_>>()?;
    let columns = q
        .items
        .iter()
        .enumerate()
        .map(|(i, (e, a))| match (a, e) {
            (Some(a), _) => a.clone(),
            (None, Expr::Col(_, c, _)) => c.clone(),
            _ => format!("col{i}"),
        })
        .collect();
    let materialize = |ix: &Vec<usize>| -> Vec<&[Value]> { ix.iter().enumerate().map(|(k, &r)| rels[k].rows[r].as_slice()).collect() };
    let mut rows = Vec::new();
    if keys.is_empty() && !items.iter().any(B::has_agg) {
        for ix in &passing {
            let row = materialize(ix);
            rows.push(items.iter().map(|b| eval_b(b, &row, None)).collect::<Result<Vec<_>>>()?);
        }
    } else {
        let mut groups: Vec<(Vec<String>, Vec<Vec<&[Value]>>)> = Vec::new();
        let mut index: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for ix in &passing {
            let row = materialize(ix);
            let key: Vec<String> = keys.iter().map(|k| eval_b(k, &row, None).map(|v| format!("{v:?}"))).collect::<Result<_>>()?;
            let g = *index.entry(key.clone()).or_insert_with(|| {
                groups.push((key, Vec::new()));
                groups.len() - 1
            });
            groups[g].1.push(row);
        }
        if groups.is_empty() && keys.is_empty() {
            groups.push((Vec::new(), Vec::new()));
        }
        let empty: Vec<&[Value]> = Vec::new();
        for (_, g) in &groups {
            let first = g.first().unwrap_or(&empty);
            let mut out = Vec::new();
            for b in &items {
                out.push(if first.is_empty() && !b.has_agg() { Value::Null } else { eval_b(b, first, Some(g))? });
            }
            rows.push(out);
        }
    }
    Ok(Relation { columns, rows })
}

/// Evaluates a query expected to return a single number.
pub fn eval_scalar_query(text: &str, cat: &dyn Catalog) -> Result<Option<f64>> {
    let q = parse_select(text)?;
    let r = eval_select(&q, cat)?;
    match r.rows.as_slice() {
        [row] if row.len() == 1 => Ok(row[0].as_num()),
        _ => Err(ReadError::Eval(format!("expected one value, got {} rows", r.rows.len()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat() -> BTreeMap<String, Relation> {
        let t = Relation {
            columns: vec!["ID".into(), "x".into(), "s".into()],
            rows: (0..4)
                .map(|i| vec![Value::Num(i as f64), Value::Num(i as f64 * 1.5), Value::Str(format!("v{i}"))])
                .collect(),
        };
        let m = Relation {
            columns: vec!["ID".into(), "sensitive".into()],
            rows: (0..4).map(|i| vec![Value::Num(i as f64), Value::Bool(i % 2 == 1)]).collect(),
        };
        [("t".to_string(), t), ("t_sensRows".to_string(), m)].into()
    }

    #[test]
    fn parses_and_prints() {
        let q = parse_select("select sum(t.x) from t where t.x <= 230.3 - 30 and t.s = 'a' ;").unwrap();
        assert_eq!(q.to_string(), "SELECT sum(t.x) FROM t WHERE ((t.x <= (230.3 - 30.0)) AND (t.s = 'a'))");
        let e = parse_expr("not((a = b)) AND x IN (1, 2) AND y NOT LIKE 'q%'").unwrap();
        assert!(matches!(e, Expr::Bin(BinOp::And, ..)));
        assert_eq!(parse_expr("((-1.0) * x)").unwrap().to_string(), "((-1.0) * x)");
        let err = parse_select("select sum(x) from t group by y having 1").unwrap_err();
        assert!(matches!(err, ReadError::Syntax { pos: Pos { line: 1, col: 33 }, .. }), "{err:?}");
    }

    #[test]
    fn evaluates_grouped_subquery() {
        let q = "SELECT max(abs(sdsg)) FROM (SELECT sum(abs(t.x * 2.0)) AS sdsg FROM t, t_sensRows \
                 WHERE (t.x >= 0.0 AND t_sensRows.ID = t.ID) AND t_sensRows.sensitive GROUP BY t_sensRows.ID) AS sub;";
        assert_eq!(eval_scalar_query(q, &cat()).unwrap(), Some(9.0));
        assert_eq!(eval_scalar_query("SELECT count(*) FROM t WHERE t.s LIKE 'v%'", &cat()).unwrap(), Some(4.0));
        assert_eq!(eval_scalar_query("SELECT sum(t.x) FROM t WHERE t.x > 100", &cat()).unwrap(), None);
        assert_eq!(
            eval_scalar_query("SELECT ((SELECT count(*) FROM t) + (SELECT max(t.x) FROM t))", &cat()).unwrap(),
            Some(8.5)
        );
        let v = eval_scalar_query(
            "SELECT greatest(case when (t.x = 0.0) then 0.0 else exp(t.x) end, 2.0 ^ 3.0) FROM t WHERE t.ID = 0",
            &cat(),
        );
        assert_eq!(v.unwrap(), Some(8.0));
    }

    #[test]
    fn tree_equality_tolerates_formatting() {
        let a = parse_expr("((a = 'F') AND(b = 'R') AND s.ID = t.ID) AND s.sensitive").unwrap();
        let b = parse_expr("(a = 'F') AND ((b = 'R') AND (s.ID = t.ID)) AND s.sensitive").unwrap();
        assert!(same_expr(&a, &b, 0.0).is_ok());
        let a = parse_expr("x * 0.03").unwrap();
        let b = parse_expr("X * 0.030000000000000002").unwrap();
        assert!(same_expr(&a, &b, 1e-9).is_ok());
        assert!(same_expr(&a, &parse_expr("x * 0.031").unwrap(), 1e-9).is_err());
        assert!(same_expr(&parse_expr("a + b").unwrap(), &parse_expr("b + a").unwrap(), 0.0).is_err());
    }

    #[test]
    fn like_patterns() {
        assert!(like("MEDIUM POLISHED TIN", "MEDIUM POLISHED%"));
        assert!(like("xCustomeryyComplaints", "%Customer%Complaints%"));
        assert!(!like("abc", "a_"));
        assert!(like("abc", "a_c"));
    }
}
