use super::{FlowType, Mode, ProtectedSet, TypingEnv, Violation};
use crate::lang::{pretty_expr, pretty_rhs, Command, Expr, Rhs};
use crate::machine::{Config, Instr};

use FlowType::{S, T};

/// Least flow type of `e` under `env`.
pub fn expr_type(env: &TypingEnv, e: &Expr) -> FlowType {
    match e {
        Expr::Lit(_) => S,
        Expr::Var(x) => env.get(x),
        Expr::Add(a, b) | Expr::Lt(a, b) | Expr::BitAnd(a, b) => expr_type(env, a).join(expr_type(env, b)),
        Expr::Ternary(c, t, f) => expr_type(env, c).join(expr_type(env, t)).join(expr_type(env, f)),
        Expr::Length(a) | Expr::Base(a) => expr_type(env, a),
    }
}

struct Checker<'a> {
    env: &'a TypingEnv,
    prot: &'a ProtectedSet,
    mode: Mode,
    out: Vec<Violation>,
}

impl Checker<'_> {
    fn stable(&mut self, node: usize, rule: &'static str, e: &Expr, what: &str) {
        if expr_type(self.env, e) == T {
            self.out.push(Violation { node, rule, msg: format!("{what} `{}` is transient", pretty_expr(e)) });
        }
    }

    fn rhs(&mut self, node: usize, r: &Rhs) -> FlowType {
        match r {
            Rhs::Pure(e) => expr_type(self.env, e),
            Rhs::PtrRead(_, e) => {
                self.stable(node, "Ptr-Read", e, "address");
                T
            }
            Rhs::ArrayRead(_, e) => {
                self.stable(node, "Array-Read", e, "index");
                T
            }
        }
    }

    fn command(&mut self, id: usize, c: &Command) {
        match c {
            Command::Skip | Command::Fail | Command::Seq(..) => {}
            Command::Assign(x, r) => {
                let t = self.rhs(id, r);
                if !t.flows_to(self.env.get(x)) && !self.prot.contains(x) {
                    self.out.push(Violation {
                        node: id,
                        rule: "Asgn",
                        msg: format!("transient `{}` assigned to stable `{x}`", pretty_rhs(r)),
                    });
                }
            }
            Command::Protect(_, r) => {
                self.rhs(id, r);
            }
            Command::PtrWrite(_, a, v) => {
                self.stable(id, "Ptr-Write", a, "address");
                if self.mode.spectre_v1_1 {
                    self.stable(id, "Ptr-Write-Spectre-1.1", v, "stored value");
                }
            }
            Command::ArrayWrite(_, i, v) => {
                self.stable(id, "Array-Write", i, "index");
                if self.mode.spectre_v1_1 {
                    self.stable(id, "Array-Write-Spectre-1.1", v, "stored value");
                }
            }
            Command::If(e, _, _) => self.stable(id, "If-Then-Else", e, "condition"),
            Command::While(e, _) => self.stable(id, "While", e, "condition"),
        }
    }
}

/// `Γ, Prot ⊢ c`. On rejection returns every violated premise in program order.
pub fn typecheck_transient(
    env: &TypingEnv,
    prot: &ProtectedSet,
    c: &Command,
    mode: Mode,
) -> Result<(), Vec<Violation>> {
    let mut ch = Checker { env, prot, mode, out: Vec::new() };
    c.walk(&mut |id, c| ch.command(id, c));
    if ch.out.is_empty() {
        Ok(())
    } else {
        Err(ch.out)
    }
}

fn instr_ok(env: &TypingEnv, i: &Instr, mode: Mode) -> bool {
    let none = ProtectedSet::new();
    match i {
        Instr::Nop | Instr::Fail(_) | Instr::Stored(..) | Instr::Protect(..) | Instr::ProtectVal(..) => true,
        Instr::Assign(x, e) => expr_type(env, e).flows_to(env.get(x)),
        Instr::Load(_, _, e) => expr_type(env, e) == S,
        Instr::Store(_, a, v) => expr_type(env, a) == S && (!mode.spectre_v1_1 || expr_type(env, v) == S),
        Instr::Guard { cond, rollback, .. } => {
            expr_type(env, cond) == S && rollback.iter().all(|c| typecheck_transient(env, &none, c, mode).is_ok())
        }
    }
}

/// `Γ ⊢ ⟨is, cs, μ, ρ⟩`: every buffered instruction and every stacked
/// command is well typed, commands with no implicitly protected variables.
pub fn config_well_typed(env: &TypingEnv, conf: &Config, mode: Mode) -> bool {
    let none = ProtectedSet::new();
    conf.buffer.iter().all(|i| instr_ok(env, i, mode))
        && conf.stack.iter().all(|c| typecheck_transient(env, &none, c, mode).is_ok())
}
