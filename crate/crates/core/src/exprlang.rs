//! Scalar expression language used for Lagrangians, gauge functions,
//! transition functions, curves and variation fields.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Builtins: `sin cos tan exp log sqrt abs` (unary) and `pow` (binary).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::autodiff::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Builtin {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Pow,
}

impl Builtin {
    pub const ALL: [Builtin; 8] = [
        Builtin::Sin,
        Builtin::Cos,
        Builtin::Tan,
        Builtin::Exp,
        Builtin::Log,
        Builtin::Sqrt,
        Builtin::Abs,
        Builtin::Pow,
    ];

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Sin => "sin",
            Builtin::Cos => "cos",
            Builtin::Tan => "tan",
            Builtin::Exp => "exp",
            Builtin::Log => "log",
            Builtin::Sqrt => "sqrt",
            Builtin::Abs => "abs",
            Builtin::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::Pow => 2,
            _ => 1,
        }
    }
}

/// Parsed expression tree. Literals produced by the parser are never negative;
/// a leading minus is always a [`Ast::Neg`] node.
#[derive(Clone, Debug, PartialEq)]
pub enum Ast {
    Number(f64),
    Var(String),
    Neg(Box<Ast>),
    Binary(BinOp, Box<Ast>, Box<Ast>),
    Call(Builtin, Vec<Ast>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` at byte {offset} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("domain error: {0}")]
    Domain(String),
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

pub fn parse(src: &str) -> Result<Ast, ParseError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    let ast = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.expected("operator or end of input"));
    }
    Ok(ast)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expected(&self, what: &str) -> ParseError {
        ParseError::Syntax { offset: self.pos, expected: what.to_string() }
    }

    fn expr(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Ast::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Ast::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Ast, ParseError> {
        if self.eat(b'-') {
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast, ParseError> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Ast::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Ast, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.expected("`)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            _ => Err(self.expected("number, identifier or `(`")),
        }
    }

    fn number(&mut self) -> Result<Ast, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut mantissa = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            mantissa += digits(self);
        }
        if mantissa == 0 {
            self.pos = start;
            return Err(self.expected("digits"));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                return Err(self.expected("exponent digits"));
            }
        }
        // The scanned slice is ASCII digits, '.', 'e' and signs only.
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii literal");
        text.parse::<f64>()
            .map(Ast::Number)
            .map_err(|_| ParseError::Syntax { offset: start, expected: "numeric literal".into() })
    }

    fn identifier(&mut self) -> Result<Ast, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
        if self.peek() != Some(b'(') {
            return Ok(Ast::Var(name.to_string()));
        }
        let builtin = Builtin::from_name(name).ok_or_else(|| ParseError::UnknownFunction {
            name: name.to_string(),
            offset: start,
        })?;
        self.pos += 1;
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(self.expected("`,` or `)`"));
        }
        if args.len() != builtin.arity() {
            return Err(ParseError::Arity {
                name: name.to_string(),
                offset: start,
                expected: builtin.arity(),
                found: args.len(),
            });
        }
        Ok(Ast::Call(builtin, args))
    }
}

// ---------------------------------------------------------------------------
// Canonical printing
// ---------------------------------------------------------------------------

/// Fully parenthesized canonical text; re-parsing yields an identical tree.
impl std::ops::Add for Ast {
    type Output = Ast;

    fn add(self, rhs: Ast) -> Ast {
        Ast::Binary(BinOp::Add, Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Mul for Ast {
    type Output = Ast;

    fn mul(self, rhs: Ast) -> Ast {
        Ast::Binary(BinOp::Mul, Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Neg for Ast {
    type Output = Ast;

    fn neg(self) -> Ast {
        Ast::Neg(Box::new(self))
    }
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ast::Number(x) if *x < 0.0 => write!(f, "(-{})", -x),
            Ast::Number(x) => write!(f, "{x}"),
            Ast::Var(name) => f.write_str(name),
            Ast::Neg(c) => write!(f, "(-{c})"),
            Ast::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Ast::Call(b, args) => {
                write!(f, "{}(", b.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Tree utilities
// ---------------------------------------------------------------------------

impl Ast {
    pub fn free_variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Ast::Number(_) => {}
            Ast::Var(n) => {
                out.insert(n.clone());
            }
            Ast::Neg(c) => c.collect_vars(out),
            Ast::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Ast::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Replaces every occurrence of variable `name` by `with`.
    pub fn substitute(&self, name: &str, with: &Ast) -> Ast {
        match self {
            Ast::Var(n) if n == name => with.clone(),
            Ast::Number(_) | Ast::Var(_) => self.clone(),
            Ast::Neg(c) => Ast::Neg(Box::new(c.substitute(name, with))),
            Ast::Binary(op, l, r) => Ast::Binary(
                *op,
                Box::new(l.substitute(name, with)),
                Box::new(r.substitute(name, with)),
            ),
            Ast::Call(b, args) => {
                Ast::Call(*b, args.iter().map(|a| a.substitute(name, with)).collect())
            }
        }
    }

    /// Evaluates with variables looked up by name.
    pub fn evaluate<S: Scalar>(&self, env: &EvalEnv<S>) -> Result<S, EvalError> {
        match self {
            Ast::Number(x) => Ok(S::constant(*x)),
            Ast::Var(n) => env.get(n).ok_or_else(|| EvalError::UnboundVariable(n.clone())),
            Ast::Neg(c) => Ok(-c.evaluate(env)?),
            Ast::Binary(op, l, r) => apply_binary(*op, l.evaluate(env)?, r.evaluate(env)?),
            Ast::Call(b, args) => {
                let a = args[0].evaluate(env)?;
                let second = match args.get(1) {
                    Some(e) => Some(e.evaluate(env)?),
                    None => None,
                };
                apply_builtin(*b, a, second)
            }
        }
    }
}

/// Variable bindings for [`Ast::evaluate`].
#[derive(Clone, Debug, Default)]
pub struct EvalEnv<S> {
    vars: HashMap<String, S>,
}

impl<S: Scalar> EvalEnv<S> {
    pub fn new() -> Self {
        Self { vars: HashMap::new() }
    }

    pub fn bind(&mut self, name: impl Into<String>, value: S) -> &mut Self {
        self.vars.insert(name.into(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<S> {
        self.vars.get(name).copied()
    }
}

impl<S: Scalar, K: Into<String>> FromIterator<(K, S)> for EvalEnv<S> {
    fn from_iter<I: IntoIterator<Item = (K, S)>>(iter: I) -> Self {
        Self { vars: iter.into_iter().map(|(k, v)| (k.into(), v)).collect() }
    }
}

fn apply_binary<S: Scalar>(op: BinOp, a: S, b: S) -> Result<S, EvalError> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b.value() == 0.0 {
                return Err(EvalError::Domain("division by zero".into()));
            }
            a / b
        }
        BinOp::Pow => checked_pow(a, b)?,
    })
}

fn checked_pow<S: Scalar>(a: S, b: S) -> Result<S, EvalError> {
    let (base, exp) = (a.value(), b.value());
    if base < 0.0 && exp.fract() != 0.0 {
        return Err(EvalError::Domain(format!(
            "negative base {base} raised to non-integer exponent {exp}"
        )));
    }
    if !b.is_constant() && base <= 0.0 {
        return Err(EvalError::Domain(format!(
            "non-positive base {base} raised to a differentiated exponent"
        )));
    }
    Ok(a.pow(b))
}

fn apply_builtin<S: Scalar>(b: Builtin, a: S, second: Option<S>) -> Result<S, EvalError> {
    Ok(match b {
        Builtin::Sin => a.sin(),
        Builtin::Cos => a.cos(),
        Builtin::Tan => a.tan(),
        Builtin::Exp => a.exp(),
        Builtin::Log => {
            if a.value() <= 0.0 {
                return Err(EvalError::Domain(format!("log of non-positive {}", a.value())));
            }
            a.ln()
        }
        Builtin::Sqrt => {
            if a.value() < 0.0 {
                return Err(EvalError::Domain(format!("sqrt of negative {}", a.value())));
            }
            a.sqrt()
        }
        Builtin::Abs => a.abs(),
        Builtin::Pow => checked_pow(a, second.expect("pow arity checked at parse"))?,
    })
}

// ---------------------------------------------------------------------------
// Compiled form
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum Node {
    Num(f64),
    Slot(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Builtin, Vec<Node>),
}

/// Named constants substituted into expressions when they are compiled.
#[derive(Clone, Debug, PartialEq)]
pub struct Constants {
    entries: Vec<(String, f64)>,
}

impl Default for Constants {
    fn default() -> Self {
        Self { entries: vec![("pi".to_string(), std::f64::consts::PI)] }
    }
}

impl Constants {
    /// Only `pi` is predefined; user entries shadow it.
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((name, value)),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|e| e.1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}

/// An expression compiled against a fixed argument order. Variables listed in
/// `args` become positional slots; remaining names must be constants.
#[derive(Clone, Debug)]
pub struct Expr {
    ast: Ast,
    code: Node,
    arity: usize,
}

impl Expr {
    pub fn compile(ast: Ast, args: &[&str], constants: &Constants) -> Result<Self, EvalError> {
        let code = lower(&ast, args, constants)?;
        Ok(Self { ast, code, arity: args.len() })
    }

    pub fn parse(src: &str, args: &[&str], constants: &Constants) -> Result<Self, ExprError> {
        Ok(Self::compile(parse(src)?, args, constants)?)
    }

    pub fn ast(&self) -> &Ast {
        &self.ast
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn eval<S: Scalar>(&self, args: &[S]) -> Result<S, EvalError> {
        debug_assert_eq!(args.len(), self.arity);
        eval_node(&self.code, args)
    }
}

/// Parse or compile failure.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn lower(ast: &Ast, args: &[&str], constants: &Constants) -> Result<Node, EvalError> {
    Ok(match ast {
        Ast::Number(x) => Node::Num(*x),
        Ast::Var(n) => match args.iter().position(|a| a == n) {
            Some(i) => Node::Slot(i),
            None => Node::Num(
                constants.get(n).ok_or_else(|| EvalError::UnboundVariable(n.clone()))?,
            ),
        },
        Ast::Neg(c) => Node::Neg(Box::new(lower(c, args, constants)?)),
        Ast::Binary(op, l, r) => Node::Binary(
            *op,
            Box::new(lower(l, args, constants)?),
            Box::new(lower(r, args, constants)?),
        ),
        Ast::Call(b, xs) => Node::Call(
            *b,
            xs.iter().map(|x| lower(x, args, constants)).collect::<Result<_, _>>()?,
        ),
    })
}

fn eval_node<S: Scalar>(node: &Node, args: &[S]) -> Result<S, EvalError> {
    match node {
        Node::Num(x) => Ok(S::constant(*x)),
        Node::Slot(i) => Ok(args[*i]),
        Node::Neg(c) => Ok(-eval_node(c, args)?),
        Node::Binary(op, l, r) => apply_binary(*op, eval_node(l, args)?, eval_node(r, args)?),
        Node::Call(b, xs) => {
            let a = eval_node(&xs[0], args)?;
            let second = match xs.get(1) {
                Some(e) => Some(eval_node(e, args)?),
                None => None,
            };
            apply_builtin(*b, a, second)
        }
    }
}

/// Coordinate argument names `x1..xn`.
pub fn coordinate_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

/// Phase-space argument names `x1..xn, v1..vn`.
pub fn phase_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).chain((1..=n).map(|i| format!("v{i}"))).collect()
}

/// Borrowed view of a name list, for [`Expr::compile`].
pub fn as_strs(names: &[String]) -> Vec<&str> {
    names.iter().map(String::as_str).collect()
}
