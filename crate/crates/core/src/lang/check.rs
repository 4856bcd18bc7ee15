use std::collections::BTreeMap;

use super::{Command, Expr, Name, Program, Rhs, Value};

/// Result of the single-assignment check.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SsaReport {
    /// Variables assigned by more than one syntactic `Assign`/`Protect` node.
    pub violations: Vec<Name>,
}

impl SsaReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Counts syntactic assignment nodes per variable. A single assignment inside
/// a loop body counts once.
pub fn check_ssa(c: &Command) -> SsaReport {
    let mut counts: BTreeMap<Name, usize> = BTreeMap::new();
    c.walk(&mut |_, c| {
        if let Command::Assign(x, _) | Command::Protect(x, _) = c {
            *counts.entry(x.clone()).or_default() += 1;
        }
    });
    SsaReport { violations: counts.into_iter().filter(|(_, n)| *n > 1).map(|(x, _)| x).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Nat,
    Bool,
    Array,
}

/// A static type error at the command with the given pre-order id.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("type error at node {node}: {msg}")]
pub struct TypeError {
    pub node: usize,
    pub msg: String,
}

fn value_ty(v: &Value) -> Ty {
    match v {
        Value::Nat(_) => Ty::Nat,
        Value::Bool(_) => Ty::Bool,
        Value::Array(_) => Ty::Array,
    }
}

fn ty_name(t: Ty) -> &'static str {
    match t {
        Ty::Nat => "nat",
        Ty::Bool => "bool",
        Ty::Array => "array",
    }
}

/// `Ok(None)` means some variable's type is not known yet.
fn expr_ty(e: &Expr, env: &BTreeMap<Name, Ty>) -> Result<Option<Ty>, String> {
    let want = |t: Option<Ty>, w: Ty, what: &str| -> Result<(), String> {
        match t {
            Some(t) if t != w => Err(format!("{what} must be {}, found {}", ty_name(w), ty_name(t))),
            _ => Ok(()),
        }
    };
    Ok(match e {
        Expr::Lit(v) => Some(value_ty(v)),
        Expr::Var(x) => env.get(x).copied(),
        Expr::Add(a, b) | Expr::BitAnd(a, b) | Expr::Lt(a, b) => {
            let op = match e {
                Expr::Add(..) => "+",
                Expr::BitAnd(..) => "&",
                _ => "<",
            };
            want(expr_ty(a, env)?, Ty::Nat, &format!("operand of `{op}`"))?;
            want(expr_ty(b, env)?, Ty::Nat, &format!("operand of `{op}`"))?;
            Some(if op == "<" { Ty::Bool } else { Ty::Nat })
        }
        Expr::Ternary(c, t, f) => {
            want(expr_ty(c, env)?, Ty::Bool, "condition of `?:`")?;
            let (tt, ft) = (expr_ty(t, env)?, expr_ty(f, env)?);
            match (tt, ft) {
                (Some(a), Some(b)) if a != b => {
                    return Err(format!("branches of `?:` differ: {} and {}", ty_name(a), ty_name(b)))
                }
                (Some(a), _) | (_, Some(a)) => Some(a),
                _ => None,
            }
        }
        Expr::Length(a) | Expr::Base(a) => {
            want(expr_ty(a, env)?, Ty::Array, "argument of `length`/`base`")?;
            Some(Ty::Nat)
        }
    })
}

fn rhs_ty(r: &Rhs, env: &BTreeMap<Name, Ty>) -> Result<Option<Ty>, String> {
    match r {
        Rhs::Pure(e) => expr_ty(e, env),
        Rhs::PtrRead(_, e) | Rhs::ArrayRead(_, e) => {
            match expr_ty(e, env)? {
                Some(t) if t != Ty::Nat => return Err(format!("address must be nat, found {}", ty_name(t))),
                _ => {}
            }
            Ok(Some(Ty::Nat))
        }
    }
}

/// Front-end type check: variables hold a single scalar type; `<`, `+`, `&`
/// take naturals; conditions are booleans; memory holds naturals.
pub fn static_check(p: &Program) -> Result<(), TypeError> {
    let mut env: BTreeMap<Name, Ty> = p.vars.0.iter().map(|(k, v)| (k.clone(), value_ty(v))).collect();
    for v in p.vars.0.values() {
        if matches!(v, Value::Array(_)) {
            return Err(TypeError { node: 0, msg: "variables cannot hold arrays".into() });
        }
    }

    // Infer types of assigned variables to a fixpoint.
    loop {
        let mut changed = false;
        let mut err = None;
        p.body.walk(&mut |id, c| {
            if let Command::Assign(x, r) | Command::Protect(x, r) = c {
                if let Ok(Some(t)) = rhs_ty(r, &env) {
                    match env.get(x) {
                        None => {
                            env.insert(x.clone(), t);
                            changed = true;
                        }
                        Some(old) if *old != t && err.is_none() => {
                            err = Some(TypeError {
                                node: id,
                                msg: format!("`{x}` holds {} but is assigned {}", ty_name(*old), ty_name(t)),
                            });
                        }
                        _ => {}
                    }
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if !changed {
            break;
        }
    }
    for x in p.body.vars() {
        env.entry(x).or_insert(Ty::Nat);
    }

    let mut result = Ok(());
    p.body.walk(&mut |id, c| {
        if result.is_err() {
            return;
        }
        let check = |e: &Expr, want: Ty, what: &str| -> Result<(), String> {
            match expr_ty(e, &env)? {
                Some(t) if t == want => Ok(()),
                Some(t) => Err(format!("{what} must be {}, found {}", ty_name(want), ty_name(t))),
                None => Ok(()),
            }
        };
        let r = match c {
            Command::Assign(x, r) | Command::Protect(x, r) => match rhs_ty(r, &env) {
                Ok(Some(Ty::Array)) => Err(format!("`{x}` cannot hold an array")),
                Ok(Some(t)) if env.get(x) != Some(&t) => Err(format!("`{x}` is assigned {}", ty_name(t))),
                Ok(_) => Ok(()),
                Err(e) => Err(e),
            },
            Command::PtrWrite(_, a, v) | Command::ArrayWrite(_, a, v) => {
                check(a, Ty::Nat, "address").and_then(|_| check(v, Ty::Nat, "stored value"))
            }
            Command::If(e, _, _) | Command::While(e, _) => check(e, Ty::Bool, "condition"),
            _ => Ok(()),
        };
        if let Err(msg) = r {
            result = Err(TypeError { node: id, msg });
        }
    });
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    #[test]
    fn ssa_examples() {
        let p = parse_program("array a base=1 len=2 label=L; x := a[i1]; y := a[i2]; z := x + y; w := a[z];").unwrap();
        assert!(check_ssa(&p.body).is_ok());
        let p = parse_program("x := 1; x := 2;").unwrap();
        assert_eq!(check_ssa(&p.body).violations, vec![Name::from("x")]);
        let p = parse_program("array a base=1 len=2 label=L; while (i < 2) { x := a[i]; }").unwrap();
        assert!(check_ssa(&p.body).is_ok());
    }

    #[test]
    fn protect_counts_as_assignment() {
        let p = parse_program("x := 1; x := protect(2);").unwrap();
        assert!(!check_ssa(&p.body).is_ok());
    }

    #[test]
    fn type_errors() {
        assert!(parse_program("if (1) { skip; } else { skip; }").is_err());
        assert!(parse_program("x := true; y := x + 1;").is_err());
        assert!(parse_program("x := true; x := 1;").is_err());
        assert!(parse_program("array a base=1 len=1 label=L; x := a;").is_err());
        assert!(parse_program("var t = true; x := t ? 1 : 2; y := x + 1;").is_ok());
    }
}
