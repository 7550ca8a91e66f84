//! Text front end: a recursive-descent parser for the expression language,
//! a parser for variable-declaration files, and a minimal-parenthesis
//! printer for closed forms.
//!
//! ```text
//! expr   := term (("+"|"-") term)*
//! term   := factor (("*"|"/") factor)*
//! factor := "-" factor | power
//! power  := atom ("^" factor)?
//! atom   := NUMBER | IDENT | IDENT "(" args ")" | "(" expr ")"
//! ```
//!
//! `^` binds tighter than prefix `-` and is right-associative, so `-x^2`
//! is `-(x^2)` and `2^3^2` is `2^9`.

mod lexer;
mod printer;

use std::fmt;

use thiserror::Error;

use crate::bounds::Interval;
use crate::expr::{BinaryOp, ExprError, ExprGraph, NodeId, Relation, Role, UnaryOp, VarSpec};
use lexer::{tokenize, Tok};

pub use printer::{format_constant, print_expr};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Located parse failure; line and column are 1-based.
#[derive(Clone, Debug, PartialEq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    fn new(pos: Pos, message: impl Into<String>) -> Self {
        ParseError { line: pos.line, col: pos.col, message: message.into() }
    }
}

/// Nesting limit for parentheses, calls and prefix operators.
const MAX_DEPTH: usize = 256;

struct Parser<'g> {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    graph: &'g mut ExprGraph,
    depth: usize,
}

impl<'g> Parser<'g> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<Pos, ParseError> {
        if *self.peek() == want {
            Ok(self.bump().1)
        } else {
            Err(ParseError::new(self.pos(), format!("expected {}, found {}", want.describe(), self.peek().describe())))
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ParseError::new(self.pos(), "expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<NodeId, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            let (_, pos) = self.bump();
            let rhs = self.term()?;
            lhs = located(pos, self.graph.binary(op, lhs, rhs))?;
        }
    }

    fn term(&mut self) -> Result<NodeId, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            let (_, pos) = self.bump();
            let rhs = self.factor()?;
            lhs = located(pos, self.graph.binary(op, lhs, rhs))?;
        }
    }

    fn factor(&mut self) -> Result<NodeId, ParseError> {
        self.enter()?;
        let out = if *self.peek() == Tok::Minus {
            let (_, pos) = self.bump();
            let inner = self.factor()?;
            located(pos, self.graph.neg(inner))
        } else {
            self.power()
        };
        self.depth -= 1;
        out
    }

    fn power(&mut self) -> Result<NodeId, ParseError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Caret {
            let (_, pos) = self.bump();
            let exp = self.factor()?;
            return located(pos, self.graph.pow(base, exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<NodeId, ParseError> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Num(v) => located(pos, self.graph.constant(v)),
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    self.call(&name, pos)
                } else {
                    located(pos, self.graph.var(&name))
                }
            }
            Tok::LParen => {
                self.enter()?;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                self.depth -= 1;
                Ok(e)
            }
            other => Err(ParseError::new(pos, format!("unexpected {}", other.describe()))),
        }
    }

    fn call(&mut self, name: &str, pos: Pos) -> Result<NodeId, ParseError> {
        self.enter()?;
        self.expect(Tok::LParen)?;
        let out = if name == "piecewise" {
            self.piecewise_call(pos)?
        } else {
            let mut args = vec![self.expr()?];
            while *self.peek() == Tok::Comma {
                self.bump();
                args.push(self.expr()?);
            }
            self.expect(Tok::RParen)?;
            self.apply_function(name, &args, pos)?
        };
        self.depth -= 1;
        Ok(out)
    }

    fn piecewise_call(&mut self, pos: Pos) -> Result<NodeId, ParseError> {
        let lhs = self.expr()?;
        let rel = match self.peek() {
            Tok::Lt => Relation::Lt,
            Tok::Le => Relation::Le,
            other => {
                return Err(ParseError::new(
                    self.pos(),
                    format!("expected '<' or '<=' in piecewise condition, found {}", other.describe()),
                ))
            }
        };
        self.bump();
        let rhs = self.expr()?;
        self.expect(Tok::Comma)?;
        let then = self.expr()?;
        self.expect(Tok::Comma)?;
        let otherwise = self.expr()?;
        if *self.peek() == Tok::Comma {
            return Err(ParseError::new(self.pos(), "piecewise expects 3 arguments"));
        }
        self.expect(Tok::RParen)?;
        located(pos, self.graph.piecewise(lhs, rel, rhs, then, otherwise))
    }

    fn apply_function(&mut self, name: &str, args: &[NodeId], pos: Pos) -> Result<NodeId, ParseError> {
        let unary = UnaryOp::ALL.iter().copied().find(|op| op.name() == Some(name));
        let arity = match (name, unary) {
            (_, Some(_)) | ("relu", _) => 1,
            ("min" | "max", _) => 2,
            _ => return Err(ParseError::new(pos, format!("unknown function '{name}'"))),
        };
        if args.len() != arity {
            return Err(ParseError::new(pos, format!("{name} expects {arity} argument(s), got {}", args.len())));
        }
        let g = &mut *self.graph;
        let r = match (name, unary) {
            (_, Some(op)) => g.unary(op, args[0]),
            ("relu", _) => g.relu(args[0]),
            ("min", _) => g.binary(BinaryOp::Min, args[0], args[1]),
            _ => g.binary(BinaryOp::Max, args[0], args[1]),
        };
        located(pos, r)
    }
}

fn located(pos: Pos, r: Result<NodeId, ExprError>) -> Result<NodeId, ParseError> {
    r.map_err(|e| ParseError::new(pos, e.to_string()))
}

/// Parses `text` into `graph`, returning the root. Unknown identifiers
/// become unbounded feature variables.
pub fn parse_into(graph: &mut ExprGraph, text: &str) -> Result<NodeId, ParseError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, at: 0, graph, depth: 0 };
    let root = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(ParseError::new(p.pos(), format!("unexpected {}", p.peek().describe())));
    }
    Ok(root)
}

/// Parses a standalone expression. The root is registered on the graph.
pub fn parse(text: &str) -> Result<(ExprGraph, NodeId), ParseError> {
    parse_with_declarations(text, &[])
}

/// Parses with variables pre-declared (and optionally bounded) in order.
pub fn parse_with_declarations(text: &str, decls: &[VarSpec]) -> Result<(ExprGraph, NodeId), ParseError> {
    let mut graph = ExprGraph::new();
    for d in decls {
        graph.declare(d.clone()).map_err(|e| ParseError::new(Pos { line: 1, col: 1 }, e.to_string()))?;
    }
    let root = parse_into(&mut graph, text)?;
    graph.add_root(root);
    Ok((graph, root))
}

/// Parses a declaration file: one `name in [lo, hi]` or bare `name` per
/// line; `#` starts a comment.
pub fn parse_declarations(text: &str) -> Result<Vec<VarSpec>, ParseError> {
    let mut out: Vec<VarSpec> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let toks = tokenize(line).map_err(|e| ParseError { line: line_no, ..e })?;
        let at = |k: usize| toks[k.min(toks.len() - 1)].clone();
        let err = |p: Pos, m: String| ParseError { line: line_no, col: p.col, message: m };
        let (name, pos) = match at(0) {
            (Tok::Ident(n), p) => (n, p),
            (t, p) => return Err(err(p, format!("expected variable name, found {}", t.describe()))),
        };
        if out.iter().any(|v| v.name == name) {
            return Err(err(pos, format!("variable '{name}' declared twice")));
        }
        let mut spec = VarSpec::new(name.clone(), Role::Feature);
        match at(1) {
            (Tok::Eof, _) => {}
            (Tok::Ident(kw), _) if kw == "in" => {
                let mut k = 2;
                let expect = |want: Tok, k: &mut usize| -> Result<(), ParseError> {
                    let (t, p) = at(*k);
                    if t == want {
                        *k += 1;
                        Ok(())
                    } else {
                        Err(err(p, format!("expected {}, found {}", want.describe(), t.describe())))
                    }
                };
                expect(Tok::LBracket, &mut k)?;
                let lo = signed_number(&toks, &mut k).map_err(|(p, m)| err(p, m))?;
                expect(Tok::Comma, &mut k)?;
                let hi = signed_number(&toks, &mut k).map_err(|(p, m)| err(p, m))?;
                expect(Tok::RBracket, &mut k)?;
                expect(Tok::Eof, &mut k)?;
                spec.bounds = Some(
                    Interval::new(lo, hi)
                        .ok_or_else(|| err(pos, format!("bounds for '{name}' must satisfy lo <= hi")))?,
                );
            }
            (t, p) => return Err(err(p, format!("expected 'in' or end of line, found {}", t.describe()))),
        }
        out.push(spec);
    }
    Ok(out)
}

fn signed_number(toks: &[(Tok, Pos)], k: &mut usize) -> Result<f64, (Pos, String)> {
    let mut sign = 1.0;
    if toks[*k].0 == Tok::Minus {
        sign = -1.0;
        *k += 1;
    }
    match &toks[*k] {
        (Tok::Num(v), _) => {
            *k += 1;
            Ok(sign * v)
        }
        (t, p) => Err((*p, format!("expected number, found {}", t.describe()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(text: &str, env: &[(&str, f64)]) -> f64 {
        let (g, root) = parse(text).unwrap();
        g.evaluate(root, env).unwrap()
    }

    #[test]
    fn bmi_expression() {
        let v = eval("a*w/h^2", &[("a", 30.0), ("w", 70.0), ("h", 1.75)]);
        assert_eq!(v, 30.0 * 70.0 / (1.75 * 1.75));
    }

    #[test]
    fn relu_is_piecewise() {
        let (g, root) = parse("relu(x)").unwrap();
        assert!(matches!(g.node(root), crate::expr::Node::Piecewise { .. }));
        assert_eq!(g.evaluate(root, &[("x", -1.0)]).unwrap(), 0.0);
        assert_eq!(g.evaluate(root, &[("x", 1.0)]).unwrap(), 1.0);
    }

    #[test]
    fn power_is_right_associative() {
        assert_eq!(eval("2^3^2", &[]), 512.0);
    }

    #[test]
    fn precedence() {
        assert_eq!(eval("-2^2", &[]), -4.0);
        assert_eq!(eval("2^-1", &[]), 0.5);
        assert_eq!(eval("1 - 2 - 3", &[]), -4.0);
        assert_eq!(eval("8 / 2 / 2", &[]), 2.0);
        assert_eq!(eval("1 + 2 * 3", &[]), 7.0);
        assert_eq!(eval("-x*3", &[("x", 2.0)]), -6.0);
    }

    #[test]
    fn functions() {
        assert_eq!(eval("min(3, x)", &[("x", 1.0)]), 1.0);
        assert_eq!(eval("max(3, x)", &[("x", 1.0)]), 3.0);
        assert_eq!(eval("piecewise(x <= 1, 10, 20)", &[("x", 1.0)]), 10.0);
        assert_eq!(eval("piecewise(x < 1, 10, 20)", &[("x", 1.0)]), 20.0);
        assert_eq!(eval("abs(-x)", &[("x", 4.0)]), 4.0);
        assert!((eval("sigmoid(0)", &[]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn errors_are_located() {
        let e = parse("a +\n  * b").unwrap_err();
        assert_eq!((e.line, e.col), (2, 3));
        let e = parse("foo(x)").unwrap_err();
        assert!(e.message.contains("unknown function 'foo'"), "{e}");
        let e = parse("exp(x, y)").unwrap_err();
        assert!(e.message.contains("expects 1 argument"), "{e}");
        let e = parse("min(x)").unwrap_err();
        assert!(e.message.contains("expects 2 argument"), "{e}");
        let e = parse("(x").unwrap_err();
        assert_eq!((e.line, e.col), (1, 3));
        let e = parse("x y").unwrap_err();
        assert_eq!((e.line, e.col), (1, 3));
        let e = parse("1/0").unwrap_err();
        assert!(e.message.contains("division by zero"), "{e}");
        assert!(parse("").is_err());
        assert!(parse("piecewise(x, 1, 2)").is_err());
    }

    #[test]
    fn deep_nesting_is_rejected_not_crashing() {
        let text = "(".repeat(100_000) + "x" + &")".repeat(100_000);
        assert!(parse(&text).is_err());
        let text = "-".repeat(100_000) + "x";
        assert!(parse(&text).is_err());
        let ok = "(".repeat(100) + "x" + &")".repeat(100);
        assert!(parse(&ok).is_ok());
    }

    #[test]
    fn declarations() {
        let src = "# bounds\na in [20, 80]\nw in [40, 150]  # kg\n\nh in [1.4, 2.1]\nz\nt in [-1, -0.5]\n";
        let decls = parse_declarations(src).unwrap();
        assert_eq!(decls.len(), 5);
        assert_eq!(decls[0].bounds, Interval::new(20.0, 80.0));
        assert_eq!(decls[3].name, "z");
        assert_eq!(decls[3].bounds, None);
        assert_eq!(decls[4].bounds, Interval::new(-1.0, -0.5));
    }

    #[test]
    fn declaration_errors() {
        let e = parse_declarations("a in [2, 1]").unwrap_err();
        assert!(e.message.contains("lo <= hi"));
        let e = parse_declarations("a in [0, 1]\nb in (0, 1)").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_declarations("a\na").unwrap_err();
        assert!(e.message.contains("twice"));
    }

    #[test]
    fn declared_bounds_reach_graph() {
        let decls = parse_declarations("h in [1.4, 2.1]").unwrap();
        let (g, _) = parse_with_declarations("a*w/h^2", &decls).unwrap();
        assert_eq!(g.vars()[0].name, "h");
        assert!(g.vars()[0].bounds.is_some());
        assert!(g.vars()[1].bounds.is_none());
    }
}
