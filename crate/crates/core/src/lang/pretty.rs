use std::fmt::Write;

use super::{Command, Expr, Program, Rhs, Value, MASK_ONES};

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Ternary(..) => 1,
        Expr::BitAnd(..) => 2,
        Expr::Lt(..) => 3,
        Expr::Add(..) => 4,
        _ => 5,
    }
}

fn lit(v: &Value, out: &mut String) {
    match v {
        Value::Nat(n) if *n == MASK_ONES => out.push_str("0xffffffffffffffff"),
        v => write!(out, "{v}").unwrap(),
    }
}

fn expr_at(e: &Expr, min: u8, out: &mut String) {
    let paren = prec(e) < min;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Lit(v) => lit(v, out),
        Expr::Var(x) => out.push_str(x),
        Expr::Add(a, b) => {
            expr_at(a, 4, out);
            out.push_str(" + ");
            expr_at(b, 5, out);
        }
        Expr::Lt(a, b) => {
            expr_at(a, 4, out);
            out.push_str(" < ");
            expr_at(b, 4, out);
        }
        Expr::BitAnd(a, b) => {
            expr_at(a, 2, out);
            out.push_str(" & ");
            expr_at(b, 3, out);
        }
        Expr::Ternary(c, t, f) => {
            expr_at(c, 2, out);
            out.push_str(" ? ");
            expr_at(t, 1, out);
            out.push_str(" : ");
            expr_at(f, 1, out);
        }
        Expr::Length(a) => {
            out.push_str("length(");
            expr_at(a, 0, out);
            out.push(')');
        }
        Expr::Base(a) => {
            out.push_str("base(");
            expr_at(a, 0, out);
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
}

pub fn pretty_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr_at(e, 0, &mut s);
    s
}

pub fn pretty_rhs(r: &Rhs) -> String {
    match r {
        Rhs::Pure(e) => pretty_expr(e),
        Rhs::PtrRead(l, e) => format!("*{l}({})", pretty_expr(e)),
        Rhs::ArrayRead(a, e) => format!("{}[{}]", a.name, pretty_expr(e)),
    }
}

fn indent(depth: usize, out: &mut String) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn block(c: &Command, depth: usize, out: &mut String) {
    out.push_str("{\n");
    stmts(c, depth + 1, out);
    indent(depth, out);
    out.push('}');
}

fn stmts(c: &Command, depth: usize, out: &mut String) {
    let mut c = c;
    loop {
        match c {
            Command::Seq(a, b) => {
                if matches!(**a, Command::Seq(_, _)) {
                    indent(depth, out);
                    block(a, depth, out);
                    out.push('\n');
                } else {
                    stmt(a, depth, out);
                }
                c = b;
            }
            _ => {
                stmt(c, depth, out);
                return;
            }
        }
    }
}

fn stmt(c: &Command, depth: usize, out: &mut String) {
    indent(depth, out);
    match c {
        Command::Skip => out.push_str("skip;"),
        Command::Fail => out.push_str("fail;"),
        Command::Assign(x, r) => write!(out, "{x} := {};", pretty_rhs(r)).unwrap(),
        Command::Protect(x, r) => write!(out, "{x} := protect({});", pretty_rhs(r)).unwrap(),
        Command::PtrWrite(l, a, v) => write!(out, "*{l}({}) := {};", pretty_expr(a), pretty_expr(v)).unwrap(),
        Command::ArrayWrite(a, i, v) => write!(out, "{}[{}] := {};", a.name, pretty_expr(i), pretty_expr(v)).unwrap(),
        Command::If(e, t, f) => {
            write!(out, "if ({}) ", pretty_expr(e)).unwrap();
            block(t, depth, out);
            out.push_str(" else ");
            block(f, depth, out);
        }
        Command::While(e, b) => {
            write!(out, "while ({}) ", pretty_expr(e)).unwrap();
            block(b, depth, out);
        }
        Command::Seq(_, _) => block(c, depth, out),
    }
    out.push('\n');
}

/// Multi-line rendering of a command, one statement per line.
pub fn pretty_command(c: &Command) -> String {
    let mut s = String::new();
    stmts(c, 0, &mut s);
    s
}

/// Full program text, including declarations; parses back to the same program.
pub fn pretty_program(p: &Program) -> String {
    let mut s = String::new();
    for a in &p.arrays {
        write!(s, "array {} base={} len={} label={}", a.name, a.base, a.len, a.label).unwrap();
        if let Some(cells) = p.array_init.get(&a.name) {
            let cells: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
            write!(s, " = [{}]", cells.join(", ")).unwrap();
        }
        s.push_str(";\n");
    }
    for (x, v) in &p.vars.0 {
        writeln!(s, "var {x} = {v};").unwrap();
    }
    let public: Vec<&str> = p.policy.public_vars.iter().chain(p.policy.public_arrays.iter()).map(|n| &**n).collect();
    if !public.is_empty() {
        writeln!(s, "public {};", public.join(", ")).unwrap();
    }
    if !s.is_empty() {
        s.push('\n');
    }
    s.push_str(&pretty_command(&p.body));
    s
}
