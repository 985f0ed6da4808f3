//! Arithmetic expressions for limit states and cost models.
//!
//! Grammar, loosest binding first: `+ -` (left), `* /` (left), unary `-`,
//! `^` (right). Calls: `ln exp sqrt abs` take one argument, `min max` two or
//! more. Identifiers are case-sensitive.

use std::fmt;

use crate::error::{Error, Result};

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
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Ln,
    Exp,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "ln" => Func::Ln,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Ln => "ln",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

/// Expression tree. Parsed literals are always finite and nonnegative;
/// negation is an explicit node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Distinct variable names in order of first appearance.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        self.variables().iter().any(|v| v == name)
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized, so the output reparses to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => f.write_str(&crate::fmt_f64(*x)),
            Expr::Var(v) => f.write_str(v),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
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
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next(&mut self) -> Result<(Tok, usize)> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        let tok = match c {
            b'0'..=b'9' | b'.' => {
                let mut end = start;
                while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                    end += 1;
                }
                if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                    let mut e = end + 1;
                    if e < bytes.len() && (bytes[e] == b'+' || bytes[e] == b'-') {
                        e += 1;
                    }
                    if e < bytes.len() && bytes[e].is_ascii_digit() {
                        while e < bytes.len() && bytes[e].is_ascii_digit() {
                            e += 1;
                        }
                        end = e;
                    }
                }
                let text = &self.src[start..end];
                let v: f64 = text.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Syntax { offset: start, message: format!("number `{text}` overflows") });
                }
                self.pos = end;
                Tok::Num(v)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = start;
                while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                    end += 1;
                }
                self.pos = end;
                Tok::Ident(self.src[start..end].to_string())
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                self.pos += 1;
                Tok::Op(c as char)
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(Error::Syntax { offset: start, message: format!("unexpected character `{ch}`") });
            }
        };
        Ok((tok, start))
    }
}

const UNARY_BP: u8 = 5;

fn infix_bp(op: char) -> Option<(u8, u8, BinOp)> {
    Some(match op {
        '+' => (1, 2, BinOp::Add),
        '-' => (1, 2, BinOp::Sub),
        '*' => (3, 4, BinOp::Mul),
        '/' => (3, 4, BinOp::Div),
        '^' => (8, 7, BinOp::Pow),
        _ => return None,
    })
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    at: usize,
}

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<()> {
        let (t, at) = self.lexer.next()?;
        self.tok = t;
        self.at = at;
        Ok(())
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax { offset: self.at, message: message.into() })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if self.tok != want {
            return self.err(format!("expected {what}"));
        }
        self.bump()
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr> {
        let mut lhs = self.prefix()?;
        loop {
            let op = match self.tok {
                Tok::Op(c) => c,
                _ => break,
            };
            let (lbp, rbp, bin) = infix_bp(op).expect("lexer emits known operators");
            if lbp < min_bp {
                break;
            }
            self.bump()?;
            let rhs = self.expr(rbp)?;
            lhs = Expr::Bin(bin, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(Expr::Num(v))
            }
            Tok::Op('-') => {
                self.bump()?;
                Ok(Expr::Neg(Box::new(self.expr(UNARY_BP)?)))
            }
            Tok::LParen => {
                self.bump()?;
                let e = self.expr(0)?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.at;
                self.bump()?;
                if self.tok != Tok::LParen {
                    return Ok(Expr::Var(name));
                }
                let func = Func::from_name(&name).ok_or(Error::UnknownFunction { name: name.clone(), offset: at })?;
                self.bump()?;
                let mut args = vec![self.expr(0)?];
                while self.tok == Tok::Comma {
                    self.bump()?;
                    args.push(self.expr(0)?);
                }
                self.expect(Tok::RParen, "`)` or `,`")?;
                let ok = if func.variadic() { args.len() >= 2 } else { args.len() == 1 };
                if !ok {
                    return Err(Error::Syntax {
                        offset: at,
                        message: format!("`{name}` called with {} argument(s)", args.len()),
                    });
                }
                Ok(Expr::Call(func, args))
            }
            Tok::End => self.err("unexpected end of expression"),
            _ => self.err("expected a number, name, `-` or `(`"),
        }
    }
}

pub fn parse(text: &str) -> Result<Expr> {
    let mut p = Parser { lexer: Lexer { src: text, pos: 0 }, tok: Tok::End, at: 0 };
    p.bump()?;
    if p.tok == Tok::End {
        return p.err("empty expression");
    }
    let e = p.expr(0)?;
    if p.tok != Tok::End {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

/// Expression with variables resolved to slots of an input vector, plus an
/// optional slot for the design parameter.
#[derive(Debug, Clone)]
pub struct Compiled {
    root: Node,
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Input(usize),
    Design,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Compiled {
    /// Resolves every variable to a position in `names` or to `design`.
    pub fn bind(expr: &Expr, names: &[String], design: Option<&str>) -> Result<Self> {
        Ok(Compiled { root: bind_node(expr, names, design)? })
    }

    /// Evaluates; domain violations come back as a message only.
    pub fn eval(&self, x: &[f64], a: f64) -> std::result::Result<f64, String> {
        let v = eval_node(&self.root, x, a)?;
        if v.is_nan() {
            return Err("result is NaN".into());
        }
        Ok(v)
    }
}

fn bind_node(e: &Expr, names: &[String], design: Option<&str>) -> Result<Node> {
    Ok(match e {
        Expr::Num(v) => Node::Const(*v),
        Expr::Var(v) => {
            if let Some(i) = names.iter().position(|n| n == v) {
                Node::Input(i)
            } else if design == Some(v.as_str()) {
                Node::Design
            } else {
                return Err(Error::UnknownIdentifier(v.clone()));
            }
        }
        Expr::Neg(a) => Node::Neg(Box::new(bind_node(a, names, design)?)),
        Expr::Bin(op, a, b) => Node::Bin(
            *op,
            Box::new(bind_node(a, names, design)?),
            Box::new(bind_node(b, names, design)?),
        ),
        Expr::Call(f, args) => Node::Call(
            *f,
            args.iter().map(|a| bind_node(a, names, design)).collect::<Result<_>>()?,
        ),
    })
}

fn eval_node(n: &Node, x: &[f64], a: f64) -> std::result::Result<f64, String> {
    Ok(match n {
        Node::Const(v) => *v,
        Node::Input(i) => x[*i],
        Node::Design => a,
        Node::Neg(e) => -eval_node(e, x, a)?,
        Node::Bin(op, l, r) => op.apply(eval_node(l, x, a)?, eval_node(r, x, a)?),
        Node::Call(f, args) => {
            let v = eval_node(&args[0], x, a)?;
            match f {
                Func::Ln => {
                    if !(v > 0.0) {
                        return Err(format!("ln of nonpositive value {v}"));
                    }
                    v.ln()
                }
                Func::Sqrt => {
                    if v < 0.0 {
                        return Err(format!("sqrt of negative value {v}"));
                    }
                    v.sqrt()
                }
                Func::Exp => v.exp(),
                Func::Abs => v.abs(),
                Func::Min | Func::Max => {
                    let mut acc = v;
                    for arg in &args[1..] {
                        let w = eval_node(arg, x, a)?;
                        acc = if *f == Func::Min { acc.min(w) } else { acc.max(w) };
                    }
                    acc
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("-x^2").unwrap();
        assert_eq!(e.to_string(), "(-(x ^ 2))");
        assert_eq!(parse("2^3^2").unwrap().to_string(), "(2 ^ (3 ^ 2))");
        assert_eq!(parse("a-b-c").unwrap().to_string(), "((a - b) - c)");
        assert_eq!(parse("a/b*c").unwrap().to_string(), "((a / b) * c)");
        assert_eq!(parse("1+2*3").unwrap().to_string(), "(1 + (2 * 3))");
        assert_eq!(parse("2^-1*4").unwrap().to_string(), "((2 ^ (-1)) * 4)");
    }

    #[test]
    fn evaluates_arithmetic() {
        let c = Compiled::bind(&parse("max(x, 2, -y) + sqrt(abs(-9)) * exp(0) - ln(1)").unwrap(), &names(&["x", "y"]), None)
            .unwrap();
        assert_eq!(c.eval(&[1.0, -5.0], 0.0).unwrap(), 8.0);
        let p = Compiled::bind(&parse("-2^2 + 1e-1 * 10").unwrap(), &[], None).unwrap();
        assert_eq!(p.eval(&[], 0.0).unwrap(), -3.0);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse("1 + * 2") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match parse("ln(x") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse(""), Err(Error::Syntax { .. })));
        assert!(matches!(parse("x y"), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(parse("1e999"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("min(x)"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn unknown_function_named() {
        match parse("1 + log(x)") {
            Err(Error::UnknownFunction { name, offset }) => {
                assert_eq!(name, "log");
                assert_eq!(offset, 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_at_bind() {
        let e = parse("1 - M1/(s1*Y)").unwrap();
        match Compiled::bind(&e, &names(&["M1", "Y"]), Some("a")) {
            Err(Error::UnknownIdentifier(v)) => assert_eq!(v, "s1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identifiers_are_case_sensitive() {
        let e = parse("r + 1").unwrap();
        assert!(Compiled::bind(&e, &names(&["R"]), None).is_err());
    }

    #[test]
    fn domain_errors() {
        let c = Compiled::bind(&parse("ln(x)").unwrap(), &names(&["x"]), None).unwrap();
        assert!(c.eval(&[0.0], 0.0).is_err());
        let c = Compiled::bind(&parse("x^0.5").unwrap(), &names(&["x"]), None).unwrap();
        assert!(c.eval(&[-1.0], 0.0).is_err());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(Expr::Num),
            (0u32..1000).prop_map(|k| Expr::Num(k as f64)),
            prop::sample::select(vec!["x", "y", "Z_1", "a", "ln_x"]).prop_map(|s| Expr::Var(s.to_string())),
        ];
        leaf.prop_recursive(6, 64, 4, |inner| {
            let op = prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]);
            let unary = prop::sample::select(vec![Func::Ln, Func::Exp, Func::Sqrt, Func::Abs]);
            let vari = prop::sample::select(vec![Func::Min, Func::Max]);
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::Bin(o, Box::new(a), Box::new(b))),
                (unary, inner.clone()).prop_map(|(f, a)| Expr::Call(f, vec![a])),
                (vari, prop::collection::vec(inner, 2..4)).prop_map(|(f, a)| Expr::Call(f, a)),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            let back = parse(&printed).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(back.to_string(), printed);
        }
    }
}
