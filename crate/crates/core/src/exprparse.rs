//! Closed-form coefficient formulas.
//!
//! Grammar (highest binding first):
//!
//! ```text
//! primary := number | x<k> | t | func '(' expr ')' | '(' expr ')'
//! power   := primary ('^' unary)?          right associative
//! unary   := '-' unary | power
//! product := unary (('*' | '/') unary)*
//! expr    := product (('+' | '-') product)*
//! ```
//!
//! so `-2^2` is `-(2^2)` and `2^-1` is `0.5`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at position {pos}")]
pub struct ParseError {
    pub pos: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedToken(String),
    UnexpectedEnd,
    UnknownIdentifier(String),
    VariableOutOfRange { index: usize, dim: usize },
    BadNumber(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnexpectedChar(c) => write!(f, "unexpected character '{c}'"),
            Self::UnexpectedToken(t) => write!(f, "unexpected token '{t}'"),
            Self::UnexpectedEnd => write!(f, "unexpected end of input"),
            Self::UnknownIdentifier(s) => write!(f, "unknown identifier '{s}'"),
            Self::VariableOutOfRange { index, dim } => {
                write!(f, "variable index x{index} out of range for dimension {dim}")
            }
            Self::BadNumber(s) => write!(f, "malformed number '{s}'"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("expected {expected} spatial coordinates, got {got}")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Abs,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "tanh" => Self::Tanh,
            "abs" => Self::Abs,
            "sqrt" => Self::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Tanh => "tanh",
            Self::Abs => "abs",
            Self::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
            Self::Add => '+',
            Self::Sub => '-',
            Self::Mul => '*',
            Self::Div => '/',
            Self::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    /// Zero-based spatial coordinate.
    Var(usize),
    Time,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression over `x1..xn` and `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    dim: usize,
    root: Node,
}

impl Expr {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// True when the tree contains no variable at all.
    pub fn is_constant(&self) -> bool {
        fn walk(n: &Node) -> bool {
            match n {
                Node::Num(_) => true,
                Node::Var(_) | Node::Time => false,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Bin(_, a, b) => walk(a) && walk(b),
            }
        }
        walk(&self.root)
    }

    /// Zero-based indices of the spatial variables referenced, and whether `t` is.
    pub fn free_vars(&self) -> (Vec<usize>, bool) {
        fn walk(n: &Node, xs: &mut Vec<usize>, t: &mut bool) {
            match n {
                Node::Num(_) => {}
                Node::Var(i) => {
                    if !xs.contains(i) {
                        xs.push(*i);
                    }
                }
                Node::Time => *t = true,
                Node::Neg(a) | Node::Call(_, a) => walk(a, xs, t),
                Node::Bin(_, a, b) => {
                    walk(a, xs, t);
                    walk(b, xs, t);
                }
            }
        }
        let mut xs = Vec::new();
        let mut t = false;
        walk(&self.root, &mut xs, &mut t);
        xs.sort_unstable();
        (xs, t)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64, EvalError> {
        if x.len() != self.dim {
            return Err(EvalError::Arity {
                expected: self.dim,
                got: x.len(),
            });
        }
        eval_node(&self.root, x, t)
    }
}

fn eval_node(node: &Node, x: &[f64], t: f64) -> Result<f64, EvalError> {
    Ok(match node {
        Node::Num(v) => *v,
        Node::Var(i) => x[*i],
        Node::Time => t,
        Node::Neg(a) => -eval_node(a, x, t)?,
        Node::Bin(op, a, b) => {
            let l = eval_node(a, x, t)?;
            let r = eval_node(b, x, t)?;
            match op {
                BinOp::Add => l + r,
                BinOp::Sub => l - r,
                BinOp::Mul => l * r,
                BinOp::Div => {
                    if r == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    l / r
                }
                BinOp::Pow => {
                    if l < 0.0 && r.fract() != 0.0 {
                        return Err(EvalError::Domain(format!(
                            "negative base {l} raised to non-integer power {r}"
                        )));
                    }
                    if l == 0.0 && r < 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    l.powf(r)
                }
            }
        }
        Node::Call(f, a) => {
            let v = eval_node(a, x, t)?;
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => {
                    let r = v.exp();
                    if !r.is_finite() {
                        return Err(EvalError::Domain(format!("exp({v}) overflows")));
                    }
                    r
                }
                Func::Tanh => v.tanh(),
                Func::Abs => v.abs(),
                Func::Sqrt => {
                    if v < 0.0 {
                        return Err(EvalError::Domain(format!("sqrt of negative value {v}")));
                    }
                    v.sqrt()
                }
            }
        }
    })
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

/// Fully parenthesised, so printing and reparsing preserves the tree.
impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{:?}` keeps a round-trippable representation of the literal.
            Node::Num(v) => {
                if *v < 0.0 {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Time => write!(f, "t"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
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

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        while let Some((p, tok)) = lx.next_token()? {
            out.push((p, tok));
        }
        Ok(out)
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn next_token(&mut self) -> Result<Option<(usize, Tok)>, ParseError> {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        let start = self.pos;
        let Some(c) = self.peek() else {
            return Ok(None);
        };
        let tok = if c.is_ascii_digit() || c == '.' {
            self.number(start)?
        } else if c.is_ascii_alphabetic() || c == '_' {
            while let Some(c) = self.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            Tok::Ident(self.src[start..self.pos].to_string())
        } else {
            self.pos += c.len_utf8();
            match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                other => {
                    return Err(ParseError {
                        pos: start,
                        kind: ParseErrorKind::UnexpectedChar(other),
                    })
                }
            }
        };
        Ok(Some((start, tok)))
    }

    fn number(&mut self, start: usize) -> Result<Tok, ParseError> {
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
            i += 1;
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if j < bytes.len() && bytes[j].is_ascii_digit() {
                while j < bytes.len() && bytes[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        self.pos = i;
        let text = &self.src[start..i];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Tok::Num(v)),
            _ => Err(ParseError {
                pos: start,
                kind: ParseErrorKind::BadNumber(text.to_string()),
            }),
        }
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    end: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(_, t)| t.clone());
        self.idx += 1;
        t
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        ParseError {
            pos: self.pos(),
            kind,
        }
    }

    fn unexpected(&self) -> ParseError {
        match self.peek() {
            None => self.err(ParseErrorKind::UnexpectedEnd),
            Some(t) => self.err(ParseErrorKind::UnexpectedToken(tok_text(t))),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.bump();
            let rhs = self.product()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.bump();
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.bump();
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.bump();
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Node::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => self.ident(pos, name),
            _ => {
                self.idx -= 1;
                Err(self.unexpected())
            }
        }
    }

    fn ident(&mut self, pos: usize, name: String) -> Result<Node, ParseError> {
        if name == "t" {
            return Ok(Node::Time);
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits.parse().unwrap_or(0);
                if index == 0 || index > self.dim {
                    return Err(ParseError {
                        pos,
                        kind: ParseErrorKind::VariableOutOfRange {
                            index,
                            dim: self.dim,
                        },
                    });
                }
                return Ok(Node::Var(index - 1));
            }
        }
        let Some(func) = Func::from_name(&name) else {
            return Err(ParseError {
                pos,
                kind: ParseErrorKind::UnknownIdentifier(name),
            });
        };
        match self.peek() {
            Some(Tok::LParen) => {
                self.bump();
            }
            _ => return Err(self.unexpected()),
        }
        let arg = self.expr()?;
        self.expect_rparen()?;
        Ok(Node::Call(func, Box::new(arg)))
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::RParen) => {
                self.bump();
                Ok(())
            }
            _ => Err(self.unexpected()),
        }
    }
}

fn tok_text(t: &Tok) -> String {
    match t {
        Tok::Num(v) => v.to_string(),
        Tok::Ident(s) => s.clone(),
        Tok::Op(c) => c.to_string(),
        Tok::LParen => "(".into(),
        Tok::RParen => ")".into(),
    }
}

/// Parses `text` as an expression over `x1..x{dim}` and `t`.
pub fn parse(text: &str, dim: usize) -> Result<Expr, ParseError> {
    let toks = Lexer::tokens(text)?;
    let mut p = Parser {
        toks,
        idx: 0,
        end: text.len(),
        dim,
    };
    let root = p.expr()?;
    if p.idx < p.toks.len() {
        return Err(p.unexpected());
    }
    Ok(Expr { dim, root })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str) -> f64 {
        parse(s, 2).unwrap().eval(&[0.0, 0.0], 0.0).unwrap()
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("2+3*4"), 14.0);
        assert_eq!(ev("2^3^2"), 512.0);
        assert_eq!(ev("-2^2"), -4.0);
        assert_eq!(ev("2^-1"), 0.5);
        assert_eq!(ev("10-4-3"), 3.0);
        assert_eq!(ev("12/3/2"), 2.0);
        assert_eq!(ev("(2+3)*4"), 20.0);
        assert_eq!(ev("--3"), 3.0);
        assert_eq!(ev("1.5e2 + 2E-1"), 150.2);
    }

    #[test]
    fn functions_and_constants() {
        assert_eq!(ev("sin(0)"), 0.0);
        assert!((ev("exp(1)") - std::f64::consts::E).abs() < 1e-12);
        assert_eq!(ev("abs(-3) + sqrt(16)"), 7.0);
        assert!((ev("tanh(0) + cos(0)") - 1.0).abs() < 1e-15);
    }

    #[test]
    fn free_variables() {
        let e = parse("2+0.5*sin(x1)*cos(t)", 1).unwrap();
        assert_eq!(e.free_vars(), (vec![0], true));
        assert!(!e.is_constant());
        assert!(parse("3*(1+2)", 1).unwrap().is_constant());
        let v = e.eval(&[std::f64::consts::FRAC_PI_2], 0.0).unwrap();
        assert!((v - 2.5).abs() < 1e-15);
    }

    #[test]
    fn variable_out_of_range() {
        let err = parse("x3", 2).unwrap_err();
        assert_eq!(err.pos, 0);
        assert_eq!(
            err.kind,
            ParseErrorKind::VariableOutOfRange { index: 3, dim: 2 }
        );
        assert!(matches!(
            parse("1 + x0", 2).unwrap_err().kind,
            ParseErrorKind::VariableOutOfRange { index: 0, .. }
        ));
    }

    #[test]
    fn positioned_errors() {
        assert_eq!(parse("1 + foo(2)", 1).unwrap_err().pos, 4);
        let e = parse("2 * (3 + 4", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnexpectedEnd);
        assert_eq!(e.pos, 10);
        let e = parse("2 $ 3", 1).unwrap_err();
        assert_eq!((e.pos, e.kind), (2, ParseErrorKind::UnexpectedChar('$')));
        assert_eq!(parse("2 3", 1).unwrap_err().pos, 2);
        assert_eq!(parse("", 1).unwrap_err().kind, ParseErrorKind::UnexpectedEnd);
        assert!(matches!(
            parse("sin 2", 1).unwrap_err().kind,
            ParseErrorKind::UnexpectedToken(_)
        ));
    }

    #[test]
    fn eval_diagnostics() {
        let e = parse("1/x1", 1).unwrap();
        assert_eq!(e.eval(&[0.0], 0.0), Err(EvalError::DivisionByZero));
        let e = parse("sqrt(x1)", 1).unwrap();
        assert!(matches!(e.eval(&[-1.0], 0.0), Err(EvalError::Domain(_))));
        let e = parse("x1^0.5", 1).unwrap();
        assert!(matches!(e.eval(&[-1.0], 0.0), Err(EvalError::Domain(_))));
        assert!(matches!(
            e.eval(&[1.0, 2.0], 0.0),
            Err(EvalError::Arity { .. })
        ));
    }

    #[test]
    fn printing_round_trips() {
        for s in ["2^3^2", "-x1*t + 3", "sin(x2)/(1 + x1^2)", "-(-2.5e-3)"] {
            let e = parse(s, 2).unwrap();
            let again = parse(&e.to_string(), 2).unwrap();
            assert_eq!(e, again, "{s} printed as {e}");
        }
    }
}
