//! A small arithmetic expression language for warping functions, boundary
//! functions and stationary metric data.
//!
//! Supported syntax: numbers, named variables, `+ - * / ^`, unary minus,
//! parentheses, the constants `pi` and `e`, and the functions `exp`, `log`
//! (alias `ln`), `sqrt`, `sin`, `cos`, `tan`, `sinh`, `cosh`, `tanh`,
//! `atan`, `abs` and `pow(a, b)`.
//!
//! Expressions can be differentiated symbolically, which is how the boundary
//! and metric modules get exact gradients and Hessians.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("unexpected character '{0}' at offset {1}")]
    UnexpectedChar(char, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token '{0}'")]
    UnexpectedToken(String),
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("function '{0}' expects {1} argument(s)")]
    Arity(String, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
    Atan,
    Abs,
    Sign,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "atan" => Func::Atan,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
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
            Func::Tan => "tan",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
            Func::Atan => x.atan(),
            Func::Abs => x.abs(),
            Func::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression over a fixed, ordered list of variables.
#[derive(Clone, PartialEq)]
pub struct Expr {
    root: Node,
    vars: Arc<[String]>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({})", self)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, &self.vars, f)
    }
}

fn write_node(n: &Node, vars: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match n {
        Node::Num(v) => write!(f, "{v}"),
        Node::Var(i) => write!(f, "{}", vars[*i]),
        Node::Neg(a) => {
            write!(f, "(-")?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            let op = match n {
                Node::Add(..) => "+",
                Node::Sub(..) => "-",
                Node::Mul(..) => "*",
                Node::Div(..) => "/",
                _ => "^",
            };
            write!(f, "(")?;
            write_node(a, vars, f)?;
            write!(f, " {op} ")?;
            write_node(b, vars, f)?;
            write!(f, ")")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, vars, f)?;
            write!(f, ")")
        }
    }
}

impl Expr {
    /// Parses `src`, resolving identifiers against `vars` (by position).
    pub fn parse(src: &str, vars: &[&str]) -> Result<Self, ExprError> {
        let tokens = tokenize(src)?;
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            vars,
        };
        let root = p.expr(0)?;
        if let Some(t) = p.peek() {
            return Err(ExprError::UnexpectedToken(t.to_string()));
        }
        Ok(Expr {
            root,
            vars: vars.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Constant expression.
    pub fn constant(value: f64, vars: &[&str]) -> Self {
        Expr {
            root: Node::Num(value),
            vars: vars.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval(&self.root, x)
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        Expr {
            root: diff(&self.root, var),
            vars: self.vars.clone(),
        }
    }

    /// True if the expression does not depend on variable `var`.
    pub fn is_independent_of(&self, var: usize) -> bool {
        !depends(&self.root, var)
    }

    pub fn is_constant(&self) -> bool {
        (0..self.vars.len()).all(|v| self.is_independent_of(v))
    }
}

/// An expression bundled with its symbolic gradient and Hessian.
#[derive(Debug, Clone)]
pub struct DiffExpr {
    pub value: Expr,
    pub grad: Vec<Expr>,
    pub hess: Vec<Vec<Expr>>,
}

impl DiffExpr {
    pub fn new(value: Expr) -> Self {
        let n = value.variables().len();
        let grad: Vec<Expr> = (0..n).map(|i| value.derivative(i)).collect();
        let hess = grad.iter().map(|g| (0..n).map(|j| g.derivative(j)).collect()).collect();
        DiffExpr { value, grad, hess }
    }

    pub fn parse(src: &str, vars: &[&str]) -> Result<Self, ExprError> {
        Ok(Self::new(Expr::parse(src, vars)?))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.value.eval(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|g| g.eval(x)).collect()
    }

    pub fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.hess
            .iter()
            .map(|row| row.iter().map(|h| h.eval(x)).collect())
            .collect()
    }
}

fn eval(n: &Node, x: &[f64]) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(i) => x[*i],
        Node::Neg(a) => -eval(a, x),
        Node::Add(a, b) => eval(a, x) + eval(b, x),
        Node::Sub(a, b) => eval(a, x) - eval(b, x),
        Node::Mul(a, b) => eval(a, x) * eval(b, x),
        Node::Div(a, b) => eval(a, x) / eval(b, x),
        Node::Pow(a, b) => {
            let base = eval(a, x);
            match **b {
                Node::Num(e) if e.fract() == 0.0 && e.abs() < 64.0 => base.powi(e as i32),
                _ => base.powf(eval(b, x)),
            }
        }
        Node::Call(f, a) => f.apply(eval(a, x)),
    }
}

fn depends(n: &Node, var: usize) -> bool {
    match n {
        Node::Num(_) => false,
        Node::Var(i) => *i == var,
        Node::Neg(a) | Node::Call(_, a) => depends(a, var),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            depends(a, var) || depends(b, var)
        }
    }
}

fn num(n: &Node) -> Option<f64> {
    match n {
        Node::Num(v) => Some(*v),
        _ => None,
    }
}

fn add(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => Node::Num(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Node::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => Node::Num(x - y),
        (Some(0.0), _) => neg(b),
        (_, Some(0.0)) => a,
        _ => Node::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => Node::Num(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Node::Num(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        _ => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => Node::Num(x / y),
        (Some(0.0), _) => Node::Num(0.0),
        (_, Some(1.0)) => a,
        _ => Node::Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Node) -> Node {
    match a {
        Node::Num(x) => Node::Num(-x),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn pow(a: Node, b: Node) -> Node {
    match (num(&a), num(&b)) {
        (Some(x), Some(y)) => Node::Num(x.powf(y)),
        (_, Some(0.0)) => Node::Num(1.0),
        (_, Some(1.0)) => a,
        _ => Node::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Node) -> Node {
    match num(&a) {
        Some(x) => Node::Num(f.apply(x)),
        None => Node::Call(f, Box::new(a)),
    }
}

fn diff(n: &Node, var: usize) -> Node {
    if !depends(n, var) {
        return Node::Num(0.0);
    }
    match n {
        Node::Num(_) => Node::Num(0.0),
        Node::Var(i) => Node::Num(if *i == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(diff(a, var)),
        Node::Add(a, b) => add(diff(a, var), diff(b, var)),
        Node::Sub(a, b) => sub(diff(a, var), diff(b, var)),
        Node::Mul(a, b) => add(mul(diff(a, var), (**b).clone()), mul((**a).clone(), diff(b, var))),
        Node::Div(a, b) => div(
            sub(mul(diff(a, var), (**b).clone()), mul((**a).clone(), diff(b, var))),
            pow((**b).clone(), Node::Num(2.0)),
        ),
        Node::Pow(a, b) => {
            if !depends(b, var) {
                // b * a^(b-1) * a'
                mul(
                    mul((**b).clone(), pow((**a).clone(), sub((**b).clone(), Node::Num(1.0)))),
                    diff(a, var),
                )
            } else {
                // a^b * (b' ln a + b a' / a)
                mul(
                    n.clone(),
                    add(
                        mul(diff(b, var), call(Func::Log, (**a).clone())),
                        div(mul((**b).clone(), diff(a, var)), (**a).clone()),
                    ),
                )
            }
        }
        Node::Call(f, a) => {
            let u = (**a).clone();
            let du = diff(a, var);
            let outer = match f {
                Func::Exp => call(Func::Exp, u),
                Func::Log => div(Node::Num(1.0), u),
                Func::Sqrt => div(Node::Num(0.5), call(Func::Sqrt, u)),
                Func::Sin => call(Func::Cos, u),
                Func::Cos => neg(call(Func::Sin, u)),
                Func::Tan => div(Node::Num(1.0), pow(call(Func::Cos, u), Node::Num(2.0))),
                Func::Sinh => call(Func::Cosh, u),
                Func::Cosh => call(Func::Sinh, u),
                Func::Tanh => sub(Node::Num(1.0), pow(call(Func::Tanh, u), Node::Num(2.0))),
                Func::Atan => div(Node::Num(1.0), add(Node::Num(1.0), pow(u, Node::Num(2.0)))),
                Func::Abs => call(Func::Sign, u),
                Func::Sign => Node::Num(0.0),
            };
            mul(outer, du)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "{v}"),
            Token::Ident(s) => write!(f, "{s}"),
            Token::Op(c) => write!(f, "{c}"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
            Token::Comma => write!(f, ","),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| ExprError::UnexpectedToken(text.clone()))?;
            out.push(Token::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            let t = match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                ',' => Token::Comma,
                _ => return Err(ExprError::UnexpectedChar(c, i)),
            };
            out.push(t);
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<Token, ExprError> {
        let t = self.tokens.get(self.pos).cloned().ok_or(ExprError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, want: Token) -> Result<(), ExprError> {
        let t = self.next()?;
        if t == want {
            Ok(())
        } else {
            Err(ExprError::UnexpectedToken(t.to_string()))
        }
    }

    // Precedence climbing: + - (1), * / (2), unary minus (3), ^ (4, right assoc).
    fn expr(&mut self, min_prec: u8) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c)) = self.peek() {
            let op = *c;
            let (prec, right_assoc) = match op {
                '+' | '-' => (1, false),
                '*' | '/' => (2, false),
                '^' => (4, true),
                _ => break,
            };
            if prec < min_prec {
                break;
            }
            self.pos += 1;
            let next_min = if right_assoc { prec } else { prec + 1 };
            let rhs = if op == '^' {
                self.power_rhs()?
            } else {
                self.expr(next_min)?
            };
            lhs = match op {
                '+' => Node::Add(Box::new(lhs), Box::new(rhs)),
                '-' => Node::Sub(Box::new(lhs), Box::new(rhs)),
                '*' => Node::Mul(Box::new(lhs), Box::new(rhs)),
                '/' => Node::Div(Box::new(lhs), Box::new(rhs)),
                _ => Node::Pow(Box::new(lhs), Box::new(rhs)),
            };
        }
        Ok(lhs)
    }

    // Exponent operand: allows a leading unary minus, binds tighter than * /.
    fn power_rhs(&mut self) -> Result<Node, ExprError> {
        if let Some(Token::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.power_rhs()?)));
        }
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let e = self.power_rhs()?;
            return Ok(Node::Pow(Box::new(base), Box::new(e)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                // -x^2 parses as -(x^2)
                Ok(Node::Neg(Box::new(self.expr(3)?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.expr(3)
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.next()? {
            Token::Num(v) => Ok(Node::Num(v)),
            Token::LParen => {
                let e = self.expr(0)?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Token::Ident(name) => {
                if let Some(Token::LParen) = self.peek() {
                    self.pos += 1;
                    let mut args = vec![self.expr(0)?];
                    while let Some(Token::Comma) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr(0)?);
                    }
                    self.expect(Token::RParen)?;
                    if name == "pow" {
                        if args.len() != 2 {
                            return Err(ExprError::Arity(name, 2));
                        }
                        let b = args.pop().unwrap();
                        let a = args.pop().unwrap();
                        return Ok(Node::Pow(Box::new(a), Box::new(b)));
                    }
                    let f = Func::from_name(&name).ok_or_else(|| ExprError::UnknownFunction(name.clone()))?;
                    if args.len() != 1 {
                        return Err(ExprError::Arity(name, 1));
                    }
                    Ok(Node::Call(f, Box::new(args.pop().unwrap())))
                } else if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    Ok(Node::Var(i))
                } else {
                    match name.as_str() {
                        "pi" => Ok(Node::Num(std::f64::consts::PI)),
                        "e" => Ok(Node::Num(std::f64::consts::E)),
                        _ => Err(ExprError::UnknownVariable(name)),
                    }
                }
            }
            t => Err(ExprError::UnexpectedToken(t.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, vars: &[&str], x: &[f64]) -> f64 {
        Expr::parse(src, vars).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[], &[]), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[], &[]), 512.0);
        assert_eq!(ev("-2 ^ 2", &[], &[]), -4.0);
        assert_eq!(ev("2 ^ -1", &[], &[]), 0.5);
        assert_eq!(ev("(1 + 2) * 3", &[], &[]), 9.0);
        assert_eq!(ev("8 / 2 / 2", &[], &[]), 2.0);
        assert_eq!(ev("1 - 2 - 3", &[], &[]), -4.0);
        assert_eq!(ev("2 * x ^ 2", &["x"], &[3.0]), 18.0);
        assert_eq!(ev("1e-3 * 1E2", &[], &[]), 0.1);
    }

    #[test]
    fn functions_and_constants() {
        let v = ev("exp(t) + log(e) + pow(t, 2) + cos(pi)", &["t"], &[0.0]);
        assert!((v - 1.0).abs() < 1e-15);
        assert!((ev("sqrt(x*x + y*y)", &["x", "y"], &[3.0, 4.0]) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(Expr::parse("foo(1)", &[]), Err(ExprError::UnknownFunction(_))));
        assert!(matches!(
            Expr::parse("q + 1", &["t"]),
            Err(ExprError::UnknownVariable(_))
        ));
        assert!(matches!(Expr::parse("1 +", &[]), Err(ExprError::UnexpectedEnd)));
        assert!(matches!(
            Expr::parse("1 $ 2", &[]),
            Err(ExprError::UnexpectedChar('$', 2))
        ));
        assert!(Expr::parse("(1", &[]).is_err());
        assert!(Expr::parse("1 2", &[]).is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let srcs = [
            "exp(t) * sin(2*t)",
            "1 / (1 + t^2)",
            "sqrt(2 + cos(t)) ^ 3",
            "log(1 + t*t) - atan(t) + tanh(t)",
            "pow(2 + sin(t), 1.5 + 0.1*t)",
            "cosh(t)/sinh(t + 3) + tan(0.3*t)",
        ];
        for src in srcs {
            let e = Expr::parse(src, &["t"]).unwrap();
            let d = e.derivative(0);
            for &t in &[-0.7, 0.1, 0.9, 1.3] {
                let h = 1e-5;
                let fd = (e.eval(&[t + h]) - e.eval(&[t - h])) / (2.0 * h);
                let exact = d.eval(&[t]);
                assert!(
                    (fd - exact).abs() < 1e-7 * (1.0 + exact.abs()),
                    "{src} at {t}: {exact} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn hessian_of_quadratic_is_exact() {
        let phi = DiffExpr::parse("1 - x^2 - y^2 + 3*x*y", &["x", "y"]).unwrap();
        let h = phi.hessian(&[0.3, -0.2]);
        assert_eq!(h, vec![vec![-2.0, 3.0], vec![3.0, -2.0]]);
        assert_eq!(phi.gradient(&[1.0, 0.0]), vec![-2.0, 3.0]);
    }

    #[test]
    fn constant_detection() {
        assert!(Expr::parse("2 * pi", &["t"]).unwrap().is_constant());
        assert!(!Expr::parse("t", &["t"]).unwrap().is_constant());
        assert!(Expr::parse("x + 1", &["t", "x"]).unwrap().is_independent_of(0));
    }
}
