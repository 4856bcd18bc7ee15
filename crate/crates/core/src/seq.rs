//! Sequential big-step semantics with observations.

use std::fmt;

use thiserror::Error;

use crate::lang::{eval, Command, EvalError, Expr, Memory, Rhs, Value, VarMap};

/// Default number of rule applications before giving up.
pub const DEFAULT_BUDGET: usize = 1_000_000;

/// Observation of a sequential run. Also the id-erased form of speculative
/// observations after filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SeqObs {
    Read(u64),
    Write(u64),
    Fail,
}

impl fmt::Display for SeqObs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SeqObs::Read(n) => write!(f, "read({n})"),
            SeqObs::Write(n) => write!(f, "write({n})"),
            SeqObs::Fail => f.write_str("fail"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeqError {
    #[error("budget of {0} steps exhausted")]
    Budget(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("expected {expected}, found {found}")]
    Type { expected: &'static str, found: Value },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqOutcome {
    pub mem: Memory,
    pub vars: VarMap,
    pub trace: Vec<SeqObs>,
}

impl SeqOutcome {
    pub fn failed(&self) -> bool {
        self.trace.last() == Some(&SeqObs::Fail)
    }
}

struct Run {
    mem: Memory,
    vars: VarMap,
    trace: Vec<SeqObs>,
    budget: usize,
    steps: usize,
}

enum Flow {
    Continue,
    Halt,
}

impl Run {
    fn tick(&mut self) -> Result<(), SeqError> {
        self.steps += 1;
        if self.steps > self.budget {
            Err(SeqError::Budget(self.budget))
        } else {
            Ok(())
        }
    }

    fn value(&self, e: &Expr) -> Result<Value, SeqError> {
        // Sequential maps are total, so evaluation never yields ⊥.
        Ok(eval(e, &self.vars)?.expect("total variable map"))
    }

    fn nat(&self, e: &Expr) -> Result<u64, SeqError> {
        match self.value(e)? {
            Value::Nat(n) => Ok(n),
            v => Err(SeqError::Type { expected: "nat", found: v }),
        }
    }

    fn bool(&self, e: &Expr) -> Result<bool, SeqError> {
        match self.value(e)? {
            Value::Bool(b) => Ok(b),
            v => Err(SeqError::Type { expected: "bool", found: v }),
        }
    }

    fn assign(&mut self, x: &crate::lang::Name, r: &Rhs) -> Result<Flow, SeqError> {
        let v = match r {
            Rhs::Pure(e) => self.value(e)?,
            Rhs::PtrRead(_, e) => {
                let n = self.nat(e)?;
                self.trace.push(SeqObs::Read(n));
                self.mem.read(n)
            }
            Rhs::ArrayRead(a, e) => {
                let n = self.nat(e)?;
                if n >= a.len {
                    self.trace.push(SeqObs::Fail);
                    return Ok(Flow::Halt);
                }
                self.trace.push(SeqObs::Read(a.base + n));
                self.mem.read(a.base + n)
            }
        };
        self.vars.set(x.clone(), v);
        Ok(Flow::Continue)
    }

    fn exec(&mut self, c: &Command) -> Result<Flow, SeqError> {
        self.tick()?;
        match c {
            Command::Skip => Ok(Flow::Continue),
            Command::Fail => {
                self.trace.push(SeqObs::Fail);
                Ok(Flow::Halt)
            }
            Command::Assign(x, r) | Command::Protect(x, r) => self.assign(x, r),
            Command::PtrWrite(_, a, v) => {
                let n = self.nat(a)?;
                let v = self.value(v)?;
                self.trace.push(SeqObs::Write(n));
                self.mem.write(n, v);
                Ok(Flow::Continue)
            }
            Command::ArrayWrite(a, i, v) => {
                let n = self.nat(i)?;
                let v = self.value(v)?;
                if n >= a.len {
                    self.trace.push(SeqObs::Fail);
                    return Ok(Flow::Halt);
                }
                self.trace.push(SeqObs::Write(a.base + n));
                self.mem.write(a.base + n, v);
                Ok(Flow::Continue)
            }
            Command::If(e, t, f) => {
                if self.bool(e)? {
                    self.exec(t)
                } else {
                    self.exec(f)
                }
            }
            Command::While(e, body) => {
                while self.bool(e)? {
                    if let Flow::Halt = self.exec(body)? {
                        return Ok(Flow::Halt);
                    }
                    self.tick()?;
                }
                Ok(Flow::Continue)
            }
            Command::Seq(a, b) => match self.exec(a)? {
                Flow::Halt => Ok(Flow::Halt),
                Flow::Continue => self.exec(b),
            },
        }
    }
}

/// Runs `c` to completion under the sequential semantics.
pub fn run_sequential(c: &Command, mem: &Memory, vars: &VarMap, budget: usize) -> Result<SeqOutcome, SeqError> {
    let mut run = Run { mem: mem.clone(), vars: vars.clone(), trace: Vec::new(), budget, steps: 0 };
    run.exec(c)?;
    Ok(SeqOutcome { mem: run.mem, vars: run.vars, trace: run.trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_program;

    fn run(src: &str) -> SeqOutcome {
        let p = parse_program(src).unwrap();
        run_sequential(&p.body, &p.initial_memory(), &p.vars, DEFAULT_BUDGET).unwrap()
    }

    #[test]
    fn skip_is_silent() {
        let p = parse_program("skip;").unwrap();
        let out = run_sequential(&p.body, &p.initial_memory(), &p.vars, 10).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.mem, p.initial_memory());
        assert_eq!(out.vars, p.vars);
    }

    #[test]
    fn out_of_bounds_read_fails_without_state_change() {
        let out = run("array a base=1 len=2 label=L; var k = 2; x := a[k]; y := 1;");
        assert_eq!(out.trace, vec![SeqObs::Fail]);
        assert_eq!(out.vars.0.get("x"), None);
        assert_eq!(out.vars.0.get("y"), None);
    }

    #[test]
    fn loops_and_writes() {
        let out = run("array a base=1 len=3 label=L; var i = 0; while (i < 3) { a[i] := i + 10; i := i + 1; }");
        assert_eq!(out.trace, vec![SeqObs::Write(1), SeqObs::Write(2), SeqObs::Write(3)]);
        assert_eq!(out.mem.read(3), Value::Nat(12));
        assert_eq!(out.vars.get("i"), Value::Nat(3));
    }

    #[test]
    fn pointer_accesses_are_unchecked() {
        let out = run("*L(100) := 7; x := *H(100);");
        assert_eq!(out.trace, vec![SeqObs::Write(100), SeqObs::Read(100)]);
        assert_eq!(out.vars.get("x"), Value::Nat(7));
    }

    #[test]
    fn divergence_hits_budget() {
        let p = parse_program("while (true) { skip; }").unwrap();
        let err = run_sequential(&p.body, &p.initial_memory(), &p.vars, 100).unwrap_err();
        assert_eq!(err, SeqError::Budget(100));
    }
}
