use crate::expr::{BinaryOp, ExprGraph, Node, NodeId, UnaryOp};

const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const UNARY: u8 = 3;
const POWER: u8 = 4;
const ATOM: u8 = 5;

/// Shortest text that parses back to exactly `c`.
pub fn format_constant(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{c}")
    } else {
        format!("{c:?}")
    }
}

fn wrap(out: &mut String, (text, level): &(String, u8), min: u8) {
    if *level < min {
        out.push('(');
        out.push_str(text);
        out.push(')');
    } else {
        out.push_str(text);
    }
}

/// Prints `root` with the fewest parentheses needed for the text to parse
/// back to the same graph. Shared subexpressions are written out in full.
pub fn print_expr(graph: &ExprGraph, root: NodeId) -> String {
    let order = graph.topo_order(root);
    let mut text: Vec<Option<(String, u8)>> = vec![None; root.index() + 1];
    for id in order {
        let get = |n: NodeId| text[n.index()].as_ref().expect("child printed first");
        let mut s = String::new();
        let level = match graph.node(id) {
            Node::Const(c) => {
                s = format_constant(c);
                if c.is_sign_negative() {
                    UNARY
                } else {
                    ATOM
                }
            }
            Node::Var(v) => {
                s.push_str(&graph.var_spec(v).name);
                ATOM
            }
            Node::Unary(UnaryOp::Neg, a) => {
                s.push('-');
                wrap(&mut s, get(a), POWER);
                UNARY
            }
            Node::Unary(op, a) => {
                s.push_str(op.name().expect("named function"));
                s.push('(');
                s.push_str(&get(a).0);
                s.push(')');
                ATOM
            }
            Node::Binary(op @ (BinaryOp::Min | BinaryOp::Max), a, b) => {
                s.push_str(if op == BinaryOp::Min { "min(" } else { "max(" });
                s.push_str(&get(a).0);
                s.push_str(", ");
                s.push_str(&get(b).0);
                s.push(')');
                ATOM
            }
            Node::Binary(op, a, b) => {
                let (sym, level, left, right) = match op {
                    BinaryOp::Add => (" + ", SUM, SUM, PRODUCT),
                    BinaryOp::Sub => (" - ", SUM, SUM, PRODUCT),
                    BinaryOp::Mul => ("*", PRODUCT, PRODUCT, UNARY),
                    BinaryOp::Div => ("/", PRODUCT, PRODUCT, UNARY),
                    _ => ("^", POWER, ATOM, UNARY),
                };
                wrap(&mut s, get(a), left);
                s.push_str(sym);
                wrap(&mut s, get(b), right);
                level
            }
            Node::Piecewise { lhs, rel, rhs, then, otherwise } => {
                s.push_str("piecewise(");
                s.push_str(&get(lhs).0);
                s.push(' ');
                s.push_str(rel.symbol());
                s.push(' ');
                s.push_str(&get(rhs).0);
                s.push_str(", ");
                s.push_str(&get(then).0);
                s.push_str(", ");
                s.push_str(&get(otherwise).0);
                s.push(')');
                ATOM
            }
        };
        text[id.index()] = Some((s, level));
    }
    text[root.index()].take().expect("root printed").0
}
