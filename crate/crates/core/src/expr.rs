//! Small arithmetic expression language.
//!
//! User reaction fields, per-axis growth laws and initial data are written as
//! strings such as `"alpha*u2 - u2^2*u1"` or `"1 + 0.5*cos(pi*x)"`. They are
//! parsed once into an [`Expr`] tree whose variables are resolved to slot
//! indices, so evaluation is a plain tree walk over a `&[f64]`.
//!
//! Grammar (usual precedence, `^` right associative, unary minus binds looser
//! than `^`):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("unexpected character '{ch}' at offset {pos} in \"{src}\"")]
    UnexpectedChar { src: String, pos: usize, ch: char },
    #[error("unexpected end of expression \"{0}\"")]
    UnexpectedEnd(String),
    #[error("unexpected token at offset {pos} in \"{src}\"")]
    UnexpectedToken { src: String, pos: usize },
    #[error("unknown identifier '{name}' in \"{src}\"")]
    UnknownIdent { src: String, name: String },
    #[error("unknown function '{name}' in \"{src}\"")]
    UnknownFunction { src: String, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tanh => x.tanh(),
        }
    }
}

/// Parsed expression. `Var(i)` reads slot `i` of the evaluation vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Names visible to the parser: variable slots and named constants.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    vars: Vec<(String, usize)>,
    constants: BTreeMap<String, f64>,
}

impl Scope {
    pub fn new<S: AsRef<str>>(vars: &[S]) -> Self {
        let mut constants = BTreeMap::new();
        constants.insert("pi".to_string(), std::f64::consts::PI);
        Self {
            vars: vars
                .iter()
                .enumerate()
                .map(|(i, v)| (v.as_ref().to_string(), i))
                .collect(),
            constants,
        }
    }

    /// Scope with `u1..um` bound to slots `0..m`.
    pub fn components(m: usize) -> Self {
        let names: Vec<String> = (1..=m).map(|i| format!("u{i}")).collect();
        Self::new(&names)
    }

    pub fn with_constants(mut self, constants: &BTreeMap<String, f64>) -> Self {
        for (k, v) in constants {
            self.constants.insert(k.clone(), *v);
        }
        self
    }

    /// Second name for an existing slot (`x` for `x1`).
    pub fn alias(&mut self, name: &str, slot: usize) {
        self.vars.push((name.to_string(), slot));
    }

    fn lookup(&self, name: &str) -> Option<Expr> {
        self.vars
            .iter()
            .find(|(v, _)| v == name)
            .map(|&(_, slot)| Expr::Var(slot))
            .or_else(|| self.constants.get(name).map(|&c| Expr::Const(c)))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                i += 1;
            }
            // exponent part: 1e-3, 2.5E+4
            if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = bytes[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| ExprError::UnexpectedChar {
                src: src.to_string(),
                pos: start,
                ch: c,
            })?;
            out.push((start, Tok::Num(value)));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_alphanumeric() || bytes[i] == '_') {
                i += 1;
            }
            out.push((start, Tok::Ident(bytes[start..i].iter().collect())));
        } else {
            let tok = match c {
                '+' | '-' | '/' | '^' => Tok::Op(c),
                '*' | '·' => Tok::Op('*'),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    return Err(ExprError::UnexpectedChar {
                        src: src.to_string(),
                        pos: i,
                        ch: c,
                    })
                }
            };
            out.push((i, tok));
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(usize, Tok)>,
    pos: usize,
    scope: &'a Scope,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn next(&mut self) -> Result<Tok, ExprError> {
        let tok = self
            .toks
            .get(self.pos)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| ExprError::UnexpectedEnd(self.src.to_string()))?;
        self.pos += 1;
        Ok(tok)
    }

    fn unexpected(&self) -> ExprError {
        match self.toks.get(self.pos) {
            Some((p, _)) => ExprError::UnexpectedToken {
                src: self.src.to_string(),
                pos: *p,
            },
            None => ExprError::UnexpectedEnd(self.src.to_string()),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.next()? {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let e = self.expr()?;
                match self.next()? {
                    Tok::RParen => Ok(e),
                    _ => {
                        self.pos -= 1;
                        Err(self.unexpected())
                    }
                }
            }
            Tok::Ident(name) => {
                if let Some(Tok::LParen) = self.peek() {
                    let func =
                        Func::from_name(&name).ok_or_else(|| ExprError::UnknownFunction {
                            src: self.src.to_string(),
                            name: name.clone(),
                        })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    match self.next()? {
                        Tok::RParen => Ok(Expr::Call(func, Box::new(arg))),
                        _ => {
                            self.pos -= 1;
                            Err(self.unexpected())
                        }
                    }
                } else {
                    self.scope
                        .lookup(&name)
                        .ok_or_else(|| ExprError::UnknownIdent {
                            src: self.src.to_string(),
                            name,
                        })
                }
            }
            _ => {
                self.pos -= 1;
                Err(self.unexpected())
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str, scope: &Scope) -> Result<Expr, ExprError> {
        let toks = tokenize(src)?;
        let mut p = Parser {
            src,
            toks,
            pos: 0,
            scope,
        };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(p.unexpected());
        }
        Ok(e)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => vars[*i],
            Expr::Neg(a) => -a.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(a, b) => {
                let base = a.eval(vars);
                match **b {
                    // integer powers via powi keep negative bases well defined
                    Expr::Const(e) if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 => {
                        base.powi(e as i32)
                    }
                    _ => base.powf(b.eval(vars)),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(vars)),
        }
    }

    /// Highest variable slot referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn contains_division(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Div(_, _) => true,
            Expr::Neg(a) | Expr::Call(_, a) => a.contains_division(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Pow(a, b) => {
                a.contains_division() || b.contains_division()
            }
        }
    }

    /// Symbolic derivative with respect to slot `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        use Expr::*;
        let b = Box::new;
        match self {
            Const(_) => Const(0.0),
            Var(i) => Const(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => Neg(b(a.derivative(var))),
            Add(x, y) => Add(b(x.derivative(var)), b(y.derivative(var))),
            Sub(x, y) => Sub(b(x.derivative(var)), b(y.derivative(var))),
            Mul(x, y) => Add(
                b(Mul(b(x.derivative(var)), y.clone())),
                b(Mul(x.clone(), b(y.derivative(var)))),
            ),
            Div(x, y) => Div(
                b(Sub(
                    b(Mul(b(x.derivative(var)), y.clone())),
                    b(Mul(x.clone(), b(y.derivative(var)))),
                )),
                b(Mul(y.clone(), y.clone())),
            ),
            Pow(x, y) => {
                if !y.depends_on(var) {
                    // d(x^c) = c x^(c-1) x'
                    Mul(
                        b(Mul(
                            y.clone(),
                            b(Pow(x.clone(), b(Sub(y.clone(), b(Const(1.0)))))),
                        )),
                        b(x.derivative(var)),
                    )
                } else {
                    // d(x^y) = x^y (y' ln x + y x'/x)
                    Mul(
                        b(self.clone()),
                        b(Add(
                            b(Mul(b(y.derivative(var)), b(Call(Func::Log, x.clone())))),
                            b(Div(b(Mul(y.clone(), b(x.derivative(var)))), x.clone())),
                        )),
                    )
                }
            }
            Call(f, a) => {
                let inner = a.derivative(var);
                let outer = match f {
                    Func::Exp => self.clone(),
                    Func::Log => Div(b(Const(1.0)), a.clone()),
                    Func::Sqrt => Div(b(Const(0.5)), b(self.clone())),
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => Neg(b(Call(Func::Sin, a.clone()))),
                    Func::Tanh => Sub(
                        b(Const(1.0)),
                        b(Mul(b(self.clone()), b(self.clone()))),
                    ),
                };
                Mul(b(outer), b(inner))
            }
        }
    }

    fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == var,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(var),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "${i}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}
