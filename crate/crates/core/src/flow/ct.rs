use super::Violation;
use crate::lang::{pretty_expr, ArrayDecl, Command, Expr, Label, Policy, Rhs, Value};

use Label::{H, L};

struct Checker<'a> {
    policy: &'a Policy,
    node: usize,
    out: Vec<Violation>,
}

impl Checker<'_> {
    fn report(&mut self, rule: &'static str, msg: String) {
        self.out.push(Violation { node: self.node, rule, msg });
    }

    fn array(&mut self, a: &ArrayDecl) -> Label {
        let declared = if self.policy.public_arrays.contains(&a.name) { L } else { H };
        if declared != a.label {
            self.report(
                "Array",
                format!("array `{}` is labelled {} but the policy makes it {declared}", a.name, a.label),
            );
        }
        declared
    }

    /// Least label of `e`.
    fn expr(&mut self, e: &Expr) -> Label {
        match e {
            Expr::Lit(Value::Array(a)) => self.array(a),
            Expr::Lit(_) => L,
            Expr::Var(x) => self.policy.var_label(x),
            Expr::Length(a) | Expr::Base(a) => {
                self.expr(a);
                L
            }
            Expr::Add(a, b) | Expr::Lt(a, b) | Expr::BitAnd(a, b) => self.expr(a).join(self.expr(b)),
            Expr::Ternary(c, t, f) => {
                self.public(c, "Select", "condition");
                self.expr(t).join(self.expr(f))
            }
        }
    }

    fn public(&mut self, e: &Expr, rule: &'static str, what: &str) {
        if self.expr(e) == H {
            self.report(rule, format!("{what} `{}` is secret", pretty_expr(e)));
        }
    }

    fn rhs(&mut self, r: &Rhs) -> Label {
        match r {
            Rhs::Pure(e) => self.expr(e),
            Rhs::PtrRead(l, e) => {
                self.public(e, "Ptr-Read", "address");
                *l
            }
            Rhs::ArrayRead(a, e) => {
                let l = self.array(a);
                self.public(e, "Array-Read", "index");
                l
            }
        }
    }

    fn command(&mut self, c: &Command) {
        match c {
            Command::Skip | Command::Fail | Command::Seq(..) => {}
            Command::Assign(x, r) | Command::Protect(x, r) => {
                let l = self.rhs(r);
                if !l.flows_to(self.policy.var_label(x)) {
                    let rule = if matches!(c, Command::Assign(..)) { "Asgn" } else { "Protect" };
                    self.report(rule, format!("secret value assigned to public `{x}`"));
                }
            }
            Command::ArrayWrite(a, i, v) => {
                let l = self.array(a);
                self.public(i, "Array-Write", "index");
                if !self.expr(v).flows_to(l) {
                    self.report(
                        "Array-Write",
                        format!("secret value `{}` stored in public array `{}`", pretty_expr(v), a.name),
                    );
                }
            }
            Command::PtrWrite(l, a, v) => {
                self.public(a, "Ptr-Write", "address");
                if !self.expr(v).flows_to(*l) {
                    self.report(
                        "Ptr-Write",
                        format!("secret value `{}` stored through a public pointer", pretty_expr(v)),
                    );
                }
            }
            Command::If(e, _, _) => self.public(e, "If", "condition"),
            Command::While(e, _) => self.public(e, "While", "condition"),
        }
    }
}

/// `Γ ⊢ct c` with `Γ` read off the policy: public names are `L`, the rest `H`.
pub fn typecheck_ct(policy: &Policy, c: &Command) -> Result<(), Vec<Violation>> {
    let mut ch = Checker { policy, node: 0, out: Vec::new() };
    c.walk(&mut |id, c| {
        ch.node = id;
        ch.command(c);
    });
    if ch.out.is_empty() {
        Ok(())
    } else {
        Err(ch.out)
    }
}
