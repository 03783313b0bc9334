//! Bounded signal temporal logic with boolean semantics over discrete
//! traces, and a small prefix-expression parser for it.
//!
//! A trace shorter than a formula needs is padded with its last state.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Cmp {
    fn symbol(self) -> &'static str {
        match self {
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Lt => "<",
        }
    }
}

/// `coeffs · state + constant  <op>  0`
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub coeffs: Vec<f64>,
    pub constant: f64,
    pub op: Cmp,
}

impl Predicate {
    pub fn holds(&self, state: &[f64]) -> bool {
        let v: f64 = self
            .coeffs
            .iter()
            .zip(state)
            .map(|(c, s)| c * s)
            .sum::<f64>()
            + self.constant;
        match self.op {
            Cmp::Ge => v >= 0.0,
            Cmp::Gt => v > 0.0,
            Cmp::Le => v <= 0.0,
            Cmp::Lt => v < 0.0,
        }
    }

    /// `state[var] <op> threshold`
    pub fn threshold(dims: usize, var: usize, op: Cmp, threshold: f64) -> Self {
        let mut coeffs = vec![0.0; dims];
        coeffs[var] = 1.0;
        Predicate {
            coeffs,
            constant: -threshold,
            op,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StlFormula {
    Pred(Predicate),
    Not(Box<StlFormula>),
    And(Vec<StlFormula>),
    Or(Vec<StlFormula>),
    Eventually(usize, usize, Box<StlFormula>),
    Always(usize, usize, Box<StlFormula>),
}

impl StlFormula {
    pub fn eventually(lo: usize, hi: usize, body: StlFormula) -> Result<Self> {
        check_bounds(lo, hi)?;
        Ok(StlFormula::Eventually(lo, hi, Box::new(body)))
    }

    pub fn always(lo: usize, hi: usize, body: StlFormula) -> Result<Self> {
        check_bounds(lo, hi)?;
        Ok(StlFormula::Always(lo, hi, Box::new(body)))
    }

    /// Number of steps past `t` the formula can look at.
    pub fn horizon(&self) -> usize {
        match self {
            StlFormula::Pred(_) => 0,
            StlFormula::Not(f) => f.horizon(),
            StlFormula::And(fs) | StlFormula::Or(fs) => {
                fs.iter().map(StlFormula::horizon).max().unwrap_or(0)
            }
            StlFormula::Eventually(_, hi, f) | StlFormula::Always(_, hi, f) => hi + f.horizon(),
        }
    }

    /// For `F[0, b] p` with `p` a state formula, the goal `p`.
    pub fn goal(&self) -> Option<&StlFormula> {
        match self {
            StlFormula::Eventually(0, _, body) if body.horizon() == 0 => Some(body),
            _ => None,
        }
    }

    /// Boolean satisfaction at time `t`.
    pub fn holds_at(&self, trace: &[Vec<f64>], t: usize) -> Result<bool> {
        if trace.is_empty() {
            return Err(Error::Contract("cannot evaluate a formula on an empty trace".into()));
        }
        Ok(self.eval(trace, t))
    }

    pub fn holds(&self, trace: &[Vec<f64>]) -> Result<bool> {
        self.holds_at(trace, 0)
    }

    fn eval(&self, trace: &[Vec<f64>], t: usize) -> bool {
        match self {
            StlFormula::Pred(p) => p.holds(&trace[t.min(trace.len() - 1)]),
            StlFormula::Not(f) => !f.eval(trace, t),
            StlFormula::And(fs) => fs.iter().all(|f| f.eval(trace, t)),
            StlFormula::Or(fs) => fs.iter().any(|f| f.eval(trace, t)),
            StlFormula::Eventually(lo, hi, f) => {
                Self::window(trace, t, *lo, *hi).any(|tau| f.eval(trace, tau))
            }
            StlFormula::Always(lo, hi, f) => {
                Self::window(trace, t, *lo, *hi).all(|tau| f.eval(trace, tau))
            }
        }
    }

    // Past the end of the trace every instant sees the same padded state,
    // so the window can stop one step after the last recorded sample.
    fn window(trace: &[Vec<f64>], t: usize, lo: usize, hi: usize) -> impl Iterator<Item = usize> {
        let start = t + lo;
        let end = (t + hi).min(start.max(trace.len() - 1));
        start..=end
    }

    pub fn parse(src: &str, vars: &[&str]) -> Result<Self> {
        let tokens = tokenize(src);
        let mut pos = 0;
        let sexp = parse_sexp(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Parse(format!("trailing input after position {pos}")));
        }
        to_formula(&sexp, vars)
    }

    pub fn display_with<'a>(&'a self, vars: &'a [&'a str]) -> impl fmt::Display + 'a {
        Show { f: self, vars }
    }
}

fn check_bounds(lo: usize, hi: usize) -> Result<()> {
    if lo > hi {
        return Err(Error::Parse(format!("time bounds [{lo}, {hi}] are reversed")));
    }
    Ok(())
}

struct Show<'a> {
    f: &'a StlFormula,
    vars: &'a [&'a str],
}

impl fmt::Display for Show<'_> {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vars = self.vars;
        let sub = |f: &'_ StlFormula| Show { f, vars }.to_string();
        match self.f {
            StlFormula::Pred(p) => {
                write!(out, "({} (+", p.op.symbol())?;
                for (c, v) in p.coeffs.iter().zip(self.vars) {
                    if *c != 0.0 {
                        write!(out, " (* {c} {v})")?;
                    }
                }
                write!(out, " {}) 0)", p.constant)
            }
            StlFormula::Not(f) => write!(out, "(not {})", sub(f)),
            StlFormula::And(fs) | StlFormula::Or(fs) => {
                let head = if matches!(self.f, StlFormula::And(_)) { "and" } else { "or" };
                write!(out, "({head}")?;
                for f in fs {
                    write!(out, " {}", sub(f))?;
                }
                write!(out, ")")
            }
            StlFormula::Eventually(lo, hi, f) => write!(out, "(F {lo} {hi} {})", sub(f)),
            StlFormula::Always(lo, hi, f) => write!(out, "(G {lo} {hi} {})", sub(f)),
        }
    }
}

#[derive(Debug)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(src: &str) -> Vec<String> {
    src.replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn parse_sexp(tokens: &[String], pos: &mut usize) -> Result<Sexp> {
    let tok = tokens
        .get(*pos)
        .ok_or_else(|| Error::Parse("unexpected end of expression".into()))?;
    *pos += 1;
    match tok.as_str() {
        "(" => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos).map(String::as_str) {
                    Some(")") => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    Some(_) => items.push(parse_sexp(tokens, pos)?),
                    None => return Err(Error::Parse("unbalanced parenthesis".into())),
                }
            }
        }
        ")" => Err(Error::Parse("unexpected `)`".into())),
        atom => Ok(Sexp::Atom(atom.to_owned())),
    }
}

/// Affine expression over the state: `coeffs · x + constant`.
struct Affine {
    coeffs: Vec<f64>,
    constant: f64,
}

impl Affine {
    fn scale(mut self, k: f64) -> Self {
        self.coeffs.iter_mut().for_each(|c| *c *= k);
        self.constant *= k;
        self
    }

    fn add(mut self, other: Affine) -> Self {
        self.coeffs
            .iter_mut()
            .zip(other.coeffs)
            .for_each(|(a, b)| *a += b);
        self.constant += other.constant;
        self
    }

    fn as_constant(&self) -> Option<f64> {
        self.coeffs.iter().all(|c| *c == 0.0).then_some(self.constant)
    }
}

fn to_affine(s: &Sexp, vars: &[&str]) -> Result<Affine> {
    match s {
        Sexp::Atom(a) => {
            if let Some(k) = vars.iter().position(|v| v == a) {
                let mut coeffs = vec![0.0; vars.len()];
                coeffs[k] = 1.0;
                return Ok(Affine {
                    coeffs,
                    constant: 0.0,
                });
            }
            let c: f64 = a
                .parse()
                .map_err(|_| Error::Parse(format!("unknown variable or number `{a}`")))?;
            Ok(Affine {
                coeffs: vec![0.0; vars.len()],
                constant: c,
            })
        }
        Sexp::List(items) => {
            let (head, args) = split_head(items)?;
            let args: Vec<Affine> = args.iter().map(|a| to_affine(a, vars)).collect::<Result<_>>()?;
            match (head, args.len()) {
                ("+", n) if n >= 1 => Ok(args.into_iter().reduce(Affine::add).unwrap()),
                ("-", 1) => Ok(args.into_iter().next().unwrap().scale(-1.0)),
                ("-", 2) => {
                    let mut it = args.into_iter();
                    let a = it.next().unwrap();
                    Ok(a.add(it.next().unwrap().scale(-1.0)))
                }
                ("*", 2) => {
                    let mut it = args.into_iter();
                    let (a, b) = (it.next().unwrap(), it.next().unwrap());
                    if let Some(k) = a.as_constant() {
                        Ok(b.scale(k))
                    } else if let Some(k) = b.as_constant() {
                        Ok(a.scale(k))
                    } else {
                        Err(Error::Parse("only linear products are allowed".into()))
                    }
                }
                (op, n) => Err(Error::Parse(format!("bad arithmetic form `{op}` with {n} arguments"))),
            }
        }
    }
}

fn split_head(items: &[Sexp]) -> Result<(&str, &[Sexp])> {
    match items.split_first() {
        Some((Sexp::Atom(h), rest)) => Ok((h.as_str(), rest)),
        _ => Err(Error::Parse("expected an operator at the head of a list".into())),
    }
}

fn parse_time(s: &Sexp) -> Result<usize> {
    match s {
        Sexp::Atom(a) => a
            .parse()
            .map_err(|_| Error::Parse(format!("time bound `{a}` is not a nonnegative integer"))),
        _ => Err(Error::Parse("time bound must be an integer".into())),
    }
}

fn to_formula(s: &Sexp, vars: &[&str]) -> Result<StlFormula> {
    let items = match s {
        Sexp::List(items) => items,
        Sexp::Atom(a) => return Err(Error::Parse(format!("expected a formula, found `{a}`"))),
    };
    let (head, args) = split_head(items)?;
    let cmp = match head {
        ">=" => Some(Cmp::Ge),
        ">" => Some(Cmp::Gt),
        "<=" => Some(Cmp::Le),
        "<" => Some(Cmp::Lt),
        _ => None,
    };
    if let Some(op) = cmp {
        if args.len() != 2 {
            return Err(Error::Parse(format!("`{head}` takes two arguments")));
        }
        let diff = to_affine(&args[0], vars)?.add(to_affine(&args[1], vars)?.scale(-1.0));
        return Ok(StlFormula::Pred(Predicate {
            coeffs: diff.coeffs,
            constant: diff.constant,
            op,
        }));
    }
    match (head, args.len()) {
        ("not", 1) => Ok(StlFormula::Not(Box::new(to_formula(&args[0], vars)?))),
        ("and", n) if n >= 1 => Ok(StlFormula::And(
            args.iter().map(|a| to_formula(a, vars)).collect::<Result<_>>()?,
        )),
        ("or", n) if n >= 1 => Ok(StlFormula::Or(
            args.iter().map(|a| to_formula(a, vars)).collect::<Result<_>>()?,
        )),
        ("F", 3) => StlFormula::eventually(
            parse_time(&args[0])?,
            parse_time(&args[1])?,
            to_formula(&args[2], vars)?,
        ),
        ("G", 3) => StlFormula::always(
            parse_time(&args[0])?,
            parse_time(&args[1])?,
            to_formula(&args[2], vars)?,
        ),
        (h, n) => Err(Error::Parse(format!("unknown form `{h}` with {n} arguments"))),
    }
}
