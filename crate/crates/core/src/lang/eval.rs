use thiserror::Error;

use super::{Expr, Value};

/// Variable lookup that may yield `⊥` (returned as `None`).
pub trait Lookup {
    fn lookup(&self, x: &str) -> Option<Value>;
}

impl<F: Fn(&str) -> Option<Value>> Lookup for F {
    fn lookup(&self, x: &str) -> Option<Value> {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("ill-typed expression: {0}")]
    IllTyped(String),
}

fn ill(op: &str, v: &Value) -> EvalError {
    EvalError::IllTyped(format!("{op} applied to {v}"))
}

/// Evaluates `e`. `Ok(None)` is `⊥`: some needed operand was undefined.
pub fn eval(e: &Expr, rho: &impl Lookup) -> Result<Option<Value>, EvalError> {
    Ok(match e {
        Expr::Lit(v) => Some(v.clone()),
        Expr::Var(x) => rho.lookup(x),
        Expr::Add(a, b) | Expr::Lt(a, b) | Expr::BitAnd(a, b) => {
            let (Some(va), Some(vb)) = (eval(a, rho)?, eval(b, rho)?) else {
                return Ok(None);
            };
            let (Value::Nat(na), Value::Nat(nb)) = (&va, &vb) else {
                let op = match e {
                    Expr::Add(..) => "+",
                    Expr::Lt(..) => "<",
                    _ => "&",
                };
                let bad = if va.as_nat().is_none() { &va } else { &vb };
                return Err(ill(op, bad));
            };
            Some(match e {
                Expr::Add(..) => Value::Nat(na.wrapping_add(*nb)),
                Expr::Lt(..) => Value::Bool(na < nb),
                _ => Value::Nat(na & nb),
            })
        }
        Expr::Ternary(c, t, f) => match eval(c, rho)? {
            None => None,
            Some(Value::Bool(true)) => eval(t, rho)?,
            Some(Value::Bool(false)) => eval(f, rho)?,
            Some(v) => return Err(ill("?:", &v)),
        },
        Expr::Length(a) | Expr::Base(a) => match eval(a, rho)? {
            None => None,
            Some(Value::Array(arr)) => Some(Value::Nat(match e {
                Expr::Length(_) => arr.len,
                _ => arr.base,
            })),
            Some(v) => return Err(ill(if matches!(e, Expr::Length(_)) { "length" } else { "base" }, &v)),
        },
    })
}
