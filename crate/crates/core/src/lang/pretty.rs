//! Source printer for the surface tree. Output re-parses to the same tree.

use std::fmt::Write;

use super::ast::*;

pub fn program(p: &Program) -> String {
    let mut out = String::new();
    for item in &p.items {
        match item {
            Item::Stmt(s) => stmt(&mut out, s, 0),
            Item::Func(f) => func(&mut out, f),
        }
    }
    out
}

pub fn statements(body: &[Stmt]) -> String {
    let mut out = String::new();
    for s in body {
        stmt(&mut out, s, 0);
    }
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn func(out: &mut String, f: &FuncDef) {
    let ret = f.ret.map_or("void", |k| k.keyword());
    let params: Vec<String> = f
        .params
        .iter()
        .map(|p| format!("{} {}[]", p.kind.keyword(), p.name))
        .collect();
    let _ = writeln!(out, "{ret} {}({}) {{", f.name, params.join(", "));
    for s in &f.body {
        stmt(out, s, 1);
    }
    out.push_str("}\n");
}

fn block(out: &mut String, body: &[Stmt], depth: usize) {
    out.push_str("{\n");
    for s in body {
        stmt(out, s, depth + 1);
    }
    indent(out, depth);
    out.push('}');
}

/// Assignment-like statements without the trailing `;`.
fn simple(s: &Stmt) -> String {
    match &s.kind {
        StmtKind::Assign {
            name,
            indices,
            value,
        } => format!("{} = {}", lvalue(name, indices), expr(value)),
        StmtKind::Call { name, args } => call(name, args),
        _ => unreachable!("not a simple statement"),
    }
}

fn stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match &s.kind {
        StmtKind::Decl { name, kind, dims } => {
            let _ = write!(out, "{} {name}", kind.keyword());
            for d in dims {
                match d {
                    Some(n) => {
                        let _ = write!(out, "[{n}]");
                    }
                    None => out.push_str("[]"),
                }
            }
            out.push(';');
        }
        StmtKind::Assign { .. } | StmtKind::Call { .. } => {
            out.push_str(&simple(s));
            out.push(';');
        }
        StmtKind::Async(body) => {
            out.push_str("async ");
            block(out, body, depth);
        }
        StmtKind::Sem { op, sem, val } => {
            let _ = write!(out, "{}({}, {});", op.keyword(), expr(sem), expr(val));
        }
        StmtKind::While { cond, body } => {
            let _ = write!(out, "while ({}) ", expr(cond));
            block(out, body, depth);
        }
        StmtKind::If {
            cond,
            then_body,
            else_body,
        } => {
            let _ = write!(out, "if ({}) ", expr(cond));
            block(out, then_body, depth);
            if !else_body.is_empty() {
                out.push_str(" else ");
                block(out, else_body, depth);
            }
        }
        StmtKind::Block(body) => block(out, body, depth),
        StmtKind::For {
            init,
            cond,
            step,
            body,
        } => {
            let init = init.as_deref().map(simple).unwrap_or_default();
            let step = step.as_deref().map(simple).unwrap_or_default();
            let _ = write!(out, "for ({init}; {}; {step}) ", expr(cond));
            block(out, body, depth);
        }
        StmtKind::Return(v) => match v {
            Some(v) => {
                let _ = write!(out, "return {};", expr(v));
            }
            None => out.push_str("return;"),
        },
    }
    out.push('\n');
}

fn lvalue(name: &str, indices: &[Expr]) -> String {
    let mut s = name.to_string();
    for i in indices {
        let _ = write!(s, "[{}]", expr(i));
    }
    s
}

fn call(name: &str, args: &[Expr]) -> String {
    let args: Vec<String> = args.iter().map(expr).collect();
    format!("{name}({})", args.join(", "))
}

const TERNARY_PREC: u8 = 0;
const UNARY_PREC: u8 = 11;
const ATOM_PREC: u8 = 13;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Ternary(..) => TERNARY_PREC,
        Expr::Binary(BinOp::Min | BinOp::Max, ..) => ATOM_PREC,
        Expr::Binary(op, ..) => op.precedence(),
        // negative literals print with a leading `-`
        Expr::Int(v) if *v < 0 => UNARY_PREC,
        Expr::Float(v) if v.is_sign_negative() => UNARY_PREC,
        Expr::Unary(..) => UNARY_PREC,
        _ => ATOM_PREC,
    }
}

fn wrap(e: &Expr, min: u8) -> String {
    if prec(e) < min {
        format!("({})", expr(e))
    } else {
        expr(e)
    }
}

fn float_lit(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

pub fn expr(e: &Expr) -> String {
    match e {
        Expr::Int(v) => v.to_string(),
        Expr::Float(v) => float_lit(*v),
        Expr::Load { name, indices } => lvalue(name, indices),
        Expr::Var(name) => name.clone(),
        Expr::Unary(op, a) => {
            let inner = wrap(a, UNARY_PREC);
            // keep `- -x` from lexing as `--x`
            if matches!(op, UnOp::Neg) && inner.starts_with('-') {
                format!("-({inner})")
            } else {
                format!("{}{inner}", op.symbol())
            }
        }
        Expr::Binary(op @ (BinOp::Min | BinOp::Max), a, b) => {
            format!("{}({}, {})", op.symbol(), expr(a), expr(b))
        }
        Expr::Binary(op, a, b) => {
            let p = op.precedence();
            // left-associative: the right operand needs strictly higher binding
            format!("{} {} {}", wrap(a, p), op.symbol(), wrap(b, p + 1))
        }
        Expr::Ternary(c, a, b) => {
            format!("{} ? {} : {}", wrap(c, 1), expr(a), expr(b))
        }
        Expr::Call { name, args } => call(name, args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_str;

    fn roundtrip(src: &str) {
        let a = parse_str(src).unwrap();
        let printed = program(&a);
        let b = parse_str(&printed).unwrap_or_else(|e| panic!("{e}\n{printed}"));
        assert_eq!(strip_lines(&a), strip_lines(&b), "\n{printed}");
    }

    fn strip_lines(p: &Program) -> String {
        // line numbers legitimately differ after reformatting
        format!("{:?}", p)
            .split("line: ")
            .map(|s| s.trim_start_matches(char::is_numeric))
            .collect()
    }

    #[test]
    fn roundtrip_samples() {
        roundtrip("int A[16][16]; A[0][1] = (1 + 2) * 3 - -4;");
        roundtrip("x[0] = a[0] - (b[0] - c[0]); y[0] = a[0] ? b[0] : c[0] ? d[0] : e[0];");
        roundtrip("while (e[0]) { async { set(s[i[0]], 1); } if (a[0]) { b[0] = 1; } else { b[0] = 2; } }");
        roundtrip("for (i[0] = 0; i[0] < 4; i[0]++) { A[i[0]] = min(A[i[0]], 3) << 2; }");
        roundtrip("int f(int a[]) { return a[0] * 2.5; } X[0] = f(X, 1);");
        roundtrip("A[0] = -(-B[0]); C[0] = !(a[0] && b[0]) || ~c[0];");
    }
}
