//! Speculative out-of-order processor driven by attacker directives.
//!
//! Commands are fetched from a command stack into a reorder buffer of
//! instructions, executed out of order and retired in order. Each step emits
//! one observation.

mod schedule;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

use crate::lang::{
    eval, pretty_command, pretty_expr, Command, EvalError, Expr, Label, Lookup, Memory, Name, Rhs, Value, VarMap,
    MASK_ONES, MASK_ZEROS,
};

pub use schedule::{
    drain, enumerate_from, enumerate_schedules, random_schedule, run_schedule, sequential_schedule,
    speculative_schedule, EnumLimits, Enumeration, ScheduleError, ScheduleRun, Tracked,
};
pub use trace::{erase, filter_trace, traces_equivalent};

/// Identifier of a fetched guard or fail instruction.
pub type PredId = u64;

/// Which implementation of `protect` the processor uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtectMode {
    /// Fence-like: the value is released once all earlier guards resolve.
    Hardware,
    /// Speculative load hardening: array reads are masked by their bounds check.
    Slh,
}

/// Persistent command stack; cloning is O(1).
#[derive(Clone, Default)]
pub struct Stack(Option<Arc<StackNode>>);

struct StackNode {
    head: Arc<Command>,
    tail: Stack,
}

impl Stack {
    pub fn new() -> Self {
        Stack(None)
    }

    pub fn push(&self, c: Arc<Command>) -> Stack {
        Stack(Some(Arc::new(StackNode { head: c, tail: self.clone() })))
    }

    pub fn pop(&self) -> Option<(Arc<Command>, Stack)> {
        self.0.as_ref().map(|n| (n.head.clone(), n.tail.clone()))
    }

    pub fn peek(&self) -> Option<&Command> {
        self.0.as_ref().map(|n| &*n.head)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Command> {
        let mut cur = self.0.as_deref();
        std::iter::from_fn(move || {
            let n = cur?;
            cur = n.tail.0.as_deref();
            Some(&*n.head)
        })
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }
}

impl FromIterator<Command> for Stack {
    /// The first item ends up on top.
    fn from_iter<I: IntoIterator<Item = Command>>(iter: I) -> Self {
        let items: Vec<Command> = iter.into_iter().collect();
        items.into_iter().rev().fold(Stack::new(), |s, c| s.push(Arc::new(c)))
    }
}

impl PartialEq for Stack {
    fn eq(&self, other: &Self) -> bool {
        let mut a = self.iter();
        let mut b = other.iter();
        loop {
            match (a.next(), b.next()) {
                (None, None) => return true,
                (Some(x), Some(y)) if x == y => {}
                _ => return false,
            }
        }
    }
}

impl Eq for Stack {}

impl fmt::Debug for Stack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.iter()).finish()
    }
}

/// Reorder-buffer instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instr {
    Nop,
    Fail(PredId),
    /// `x := e`; resolved once `e` is a literal.
    Assign(Name, Expr),
    Load(Name, Label, Expr),
    Store(Label, Expr, Expr),
    /// A store whose address and value have been computed.
    Stored(u64, Value),
    Protect(Name, Expr),
    /// A protect whose operand is computed but not yet released.
    ProtectVal(Name, Value),
    Guard {
        cond: Expr,
        predicted: bool,
        rollback: Stack,
        id: PredId,
    },
}

impl Instr {
    pub fn is_guard(&self) -> bool {
        matches!(self, Instr::Guard { .. })
    }

    pub fn is_store(&self) -> bool {
        matches!(self, Instr::Store(..) | Instr::Stored(..))
    }

    /// Id of a pending guard or fail.
    pub fn pending_id(&self) -> Option<PredId> {
        match self {
            Instr::Guard { id, .. } | Instr::Fail(id) => Some(*id),
            _ => None,
        }
    }

    pub fn can_retire(&self) -> bool {
        matches!(self, Instr::Nop | Instr::Fail(_) | Instr::Stored(..) | Instr::Assign(_, Expr::Lit(_)))
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Nop => f.write_str("nop"),
            Instr::Fail(p) => write!(f, "fail({p})"),
            Instr::Assign(x, e) => write!(f, "{x} := {}", pretty_expr(e)),
            Instr::Load(x, l, e) => write!(f, "{x} := load_{l}({})", pretty_expr(e)),
            Instr::Store(l, a, v) => write!(f, "store_{l}({}, {})", pretty_expr(a), pretty_expr(v)),
            Instr::Stored(n, v) => write!(f, "store({n}, {v})"),
            Instr::Protect(x, e) => write!(f, "{x} := protect({})", pretty_expr(e)),
            Instr::ProtectVal(x, v) => write!(f, "{x} := protect({v})"),
            Instr::Guard { cond, predicted, rollback, id } => {
                let rb: Vec<String> =
                    rollback.iter().map(|c| pretty_command(c).trim_end().replace('\n', " ")).collect();
                write!(f, "guard({}^{predicted}, [{}], {id})", pretty_expr(cond), rb.join(" : "))
            }
        }
    }
}

/// Attacker directive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Directive {
    Fetch,
    FetchBranch(bool),
    /// 1-based buffer index.
    Exec(usize),
    Retire,
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Fetch => f.write_str("fetch"),
            Directive::FetchBranch(b) => write!(f, "fetch {b}"),
            Directive::Exec(n) => write!(f, "exec {n}"),
            Directive::Retire => f.write_str("retire"),
        }
    }
}

impl FromStr for Directive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["fetch"] => Ok(Directive::Fetch),
            ["fetch", "true"] => Ok(Directive::FetchBranch(true)),
            ["fetch", "false"] => Ok(Directive::FetchBranch(false)),
            ["retire"] => Ok(Directive::Retire),
            ["exec", n] => match n.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Directive::Exec(n)),
                _ => Err(format!("bad buffer index `{n}`")),
            },
            _ => Err(format!("unknown directive `{}`", s.trim())),
        }
    }
}

/// Parses a schedule file: one directive per line, `#` comments and blank lines ignored.
pub fn parse_schedule(text: &str) -> Result<Vec<Directive>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        out.push(line.parse().map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

/// Observation emitted by one step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Observation {
    Silent,
    Read(u64, Vec<PredId>),
    Write(u64, Vec<PredId>),
    Fail(PredId),
    Rollback(PredId),
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids = |ps: &[PredId]| ps.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",");
        match self {
            Observation::Silent => f.write_str("."),
            Observation::Read(n, ps) => write!(f, "read({n},[{}])", ids(ps)),
            Observation::Write(n, ps) => write!(f, "write({n},[{}])", ids(ps)),
            Observation::Fail(p) => write!(f, "fail({p})"),
            Observation::Rollback(p) => write!(f, "rollback({p})"),
        }
    }
}

/// Why a directive does not apply.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Stuck {
    #[error("fetch on an empty command stack")]
    EmptyStack,
    #[error("plain fetch on a conditional; a prediction is required")]
    NeedsPrediction,
    #[error("predicted fetch on a command that is not a conditional")]
    NotConditional,
    #[error("buffer slot {0} was already executed")]
    AlreadyExecuted(usize),
    #[error("gave up after {0} directives")]
    Budget(usize),
    #[error("no instruction at buffer index {0}")]
    NoInstruction(usize),
    #[error("operand of `{0}` is undefined in the transient map")]
    Undefined(String),
    #[error("load blocked by an earlier store")]
    LoadBlocked,
    #[error("protect blocked by an earlier guard")]
    ProtectBlocked,
    #[error("`{0}` has nothing to execute")]
    NotExecutable(String),
    #[error("retire on an empty buffer")]
    EmptyBuffer,
    #[error("head `{0}` is not resolved")]
    NotRetirable(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("expected {0}, found {1}")]
    Type(&'static str, Value),
}

/// Variable map in which pending assignments are undefined (`None`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransientMap<'a> {
    base: &'a VarMap,
    overlay: BTreeMap<Name, Option<Value>>,
}

impl<'a> TransientMap<'a> {
    pub fn get(&self, x: &str) -> Option<Value> {
        match self.overlay.get(x) {
            Some(v) => v.clone(),
            None => Some(self.base.get(x)),
        }
    }

    /// Every binding that differs from the underlying map.
    pub fn overrides(&self) -> &BTreeMap<Name, Option<Value>> {
        &self.overlay
    }
}

impl Lookup for TransientMap<'_> {
    fn lookup(&self, x: &str) -> Option<Value> {
        self.get(x)
    }
}

/// Applies the pending assignments of `prefix` to `rho`.
pub fn transient_map<'a>(rho: &'a VarMap, prefix: &[Instr]) -> TransientMap<'a> {
    let mut overlay = BTreeMap::new();
    for i in prefix {
        match i {
            Instr::Assign(x, Expr::Lit(v)) => {
                overlay.insert(x.clone(), Some(v.clone()));
            }
            Instr::Assign(x, _) | Instr::Load(x, _, _) | Instr::Protect(x, _) | Instr::ProtectVal(x, _) => {
                overlay.insert(x.clone(), None);
            }
            _ => {}
        }
    }
    TransientMap { base: rho, overlay }
}

/// Name of the fresh variable holding a protected read before release.
pub fn protect_temp(x: &str) -> Name {
    format!("__prot_{x}").into()
}

/// Name of the fresh mask variable of a hardened read.
pub fn slh_temp(x: &str) -> Name {
    format!("__slh_{x}").into()
}

/// Processor configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    pub buffer: Vec<Instr>,
    pub stack: Stack,
    pub mem: Memory,
    pub vars: VarMap,
    pub next_pred: PredId,
}

fn defined(v: Option<Value>, what: &dyn fmt::Display) -> Result<Value, Stuck> {
    v.ok_or_else(|| Stuck::Undefined(what.to_string()))
}

fn nat(v: Value) -> Result<u64, Stuck> {
    match v {
        Value::Nat(n) => Ok(n),
        v => Err(Stuck::Type("nat", v)),
    }
}

impl Config {
    pub fn new(c: Command, mem: Memory, vars: VarMap) -> Self {
        Config { buffer: Vec::new(), stack: Stack::new().push(Arc::new(c)), mem, vars, next_pred: 1 }
    }

    pub fn is_terminal(&self) -> bool {
        self.buffer.is_empty() && self.stack.is_empty()
    }

    fn fresh(&mut self) -> PredId {
        let p = self.next_pred;
        self.next_pred += 1;
        p
    }

    /// Pending guard and fail ids among the first `n` instructions.
    pub fn pending(&self, n: usize) -> Vec<PredId> {
        self.buffer[..n].iter().filter_map(Instr::pending_id).collect()
    }

    /// Applies `d`. On `Err` the configuration is unchanged.
    pub fn step(&mut self, d: Directive, mode: ProtectMode) -> Result<Observation, Stuck> {
        match d {
            Directive::Fetch => self.fetch(mode),
            Directive::FetchBranch(b) => self.fetch_branch(b),
            Directive::Exec(n) => self.exec(n),
            Directive::Retire => self.retire(),
        }
    }

    fn fetch(&mut self, mode: ProtectMode) -> Result<Observation, Stuck> {
        let (c, rest) = self.stack.pop().ok_or(Stuck::EmptyStack)?;
        let replace = |s: &Stack, c: Command| s.push(Arc::new(c));
        match &*c {
            Command::Skip => {
                self.buffer.push(Instr::Nop);
                self.stack = rest;
            }
            Command::Fail => {
                let p = self.fresh();
                self.buffer.push(Instr::Fail(p));
                self.stack = rest;
            }
            Command::Assign(x, Rhs::Pure(e)) => {
                self.buffer.push(Instr::Assign(x.clone(), e.clone()));
                self.stack = rest;
            }
            Command::Assign(x, Rhs::PtrRead(l, e)) => {
                self.buffer.push(Instr::Load(x.clone(), *l, e.clone()));
                self.stack = rest;
            }
            Command::Assign(x, Rhs::ArrayRead(a, e)) => {
                let guarded = Command::if_(
                    Expr::lt(e.clone(), Expr::Length(Box::new(Expr::array(a)))),
                    Command::Assign(
                        x.clone(),
                        Rhs::PtrRead(a.label, Expr::add(Expr::Base(Box::new(Expr::array(a))), e.clone())),
                    ),
                    Command::Fail,
                );
                self.stack = replace(&rest, guarded);
            }
            Command::PtrWrite(l, a, v) => {
                self.buffer.push(Instr::Store(*l, a.clone(), v.clone()));
                self.stack = rest;
            }
            Command::ArrayWrite(a, i, v) => {
                let guarded = Command::if_(
                    Expr::lt(i.clone(), Expr::Length(Box::new(Expr::array(a)))),
                    Command::PtrWrite(a.label, Expr::add(Expr::Base(Box::new(Expr::array(a))), i.clone()), v.clone()),
                    Command::Fail,
                );
                self.stack = replace(&rest, guarded);
            }
            Command::Protect(x, Rhs::ArrayRead(a, e)) if mode == ProtectMode::Slh => {
                let m = slh_temp(x);
                let mask = Command::Assign(
                    m.clone(),
                    Rhs::Pure(Expr::ternary(Expr::Var(m.clone()), Expr::nat(MASK_ONES), Expr::nat(MASK_ZEROS))),
                );
                let load = Command::Assign(
                    x.clone(),
                    Rhs::PtrRead(
                        a.label,
                        Expr::bitand(Expr::add(Expr::Base(Box::new(Expr::array(a))), e.clone()), Expr::Var(m.clone())),
                    ),
                );
                let hardened = Command::seq(
                    Command::Assign(m.clone(), Rhs::Pure(Expr::lt(e.clone(), Expr::Length(Box::new(Expr::array(a)))))),
                    Command::if_(Expr::Var(m), Command::seq(mask, load), Command::Fail),
                );
                self.stack = replace(&rest, hardened);
            }
            Command::Protect(x, r @ (Rhs::ArrayRead(..) | Rhs::PtrRead(..))) => {
                let t = protect_temp(x);
                let read = Command::Assign(t.clone(), r.clone());
                let release = Command::Protect(x.clone(), Rhs::Pure(Expr::Var(t)));
                self.stack = replace(&replace(&rest, release), read);
            }
            Command::Protect(x, Rhs::Pure(e)) => {
                self.buffer.push(Instr::Protect(x.clone(), e.clone()));
                self.stack = rest;
            }
            Command::If(..) => return Err(Stuck::NeedsPrediction),
            Command::While(e, body) => {
                let unrolled = Command::if_(e.clone(), Command::seq((**body).clone(), (*c).clone()), Command::Skip);
                self.stack = replace(&rest, unrolled);
            }
            Command::Seq(a, b) => {
                self.stack = replace(&replace(&rest, (**b).clone()), (**a).clone());
            }
        }
        Ok(Observation::Silent)
    }

    fn fetch_branch(&mut self, b: bool) -> Result<Observation, Stuck> {
        let (c, rest) = self.stack.pop().ok_or(Stuck::EmptyStack)?;
        let Command::If(e, t, f) = &*c else {
            return Err(Stuck::NotConditional);
        };
        let (taken, other) = if b { (t, f) } else { (f, t) };
        let id = self.fresh();
        self.buffer.push(Instr::Guard {
            cond: e.clone(),
            predicted: b,
            rollback: rest.push(Arc::new((**other).clone())),
            id,
        });
        self.stack = rest.push(Arc::new((**taken).clone()));
        Ok(Observation::Silent)
    }

    fn exec(&mut self, n: usize) -> Result<Observation, Stuck> {
        if n == 0 || n > self.buffer.len() {
            return Err(Stuck::NoInstruction(n));
        }
        let k = n - 1;
        let (prefix, rest) = self.buffer.split_at(k);
        let instr = &rest[0];
        let rho = transient_map(&self.vars, prefix);
        let ev = |e: &Expr| -> Result<Value, Stuck> { defined(eval(e, &rho)?, &pretty_expr(e)) };
        let (new, obs) = match instr {
            Instr::Assign(x, e) => (Instr::Assign(x.clone(), Expr::Lit(ev(e)?)), Observation::Silent),
            Instr::Load(x, _, e) => {
                if prefix.iter().any(Instr::is_store) {
                    return Err(Stuck::LoadBlocked);
                }
                let addr = nat(ev(e)?)?;
                (Instr::Assign(x.clone(), Expr::Lit(self.mem.read(addr))), Observation::Read(addr, self.pending(k)))
            }
            Instr::Store(_, a, v) => {
                let addr = nat(ev(a)?)?;
                let v = ev(v)?;
                (Instr::Stored(addr, v), Observation::Write(addr, self.pending(k)))
            }
            Instr::Protect(x, e) => (Instr::ProtectVal(x.clone(), ev(e)?), Observation::Silent),
            Instr::ProtectVal(x, v) => {
                if prefix.iter().any(Instr::is_guard) {
                    return Err(Stuck::ProtectBlocked);
                }
                (Instr::Assign(x.clone(), Expr::Lit(v.clone())), Observation::Silent)
            }
            Instr::Guard { cond, predicted, rollback, id } => {
                let b = match ev(cond)? {
                    Value::Bool(b) => b,
                    v => return Err(Stuck::Type("bool", v)),
                };
                if b == *predicted {
                    (Instr::Nop, Observation::Silent)
                } else {
                    let (id, rollback) = (*id, rollback.clone());
                    self.buffer.truncate(k);
                    self.buffer.push(Instr::Nop);
                    self.stack = rollback;
                    return Ok(Observation::Rollback(id));
                }
            }
            Instr::Nop | Instr::Fail(_) | Instr::Stored(..) => return Err(Stuck::NotExecutable(instr.to_string())),
        };
        self.buffer[k] = new;
        Ok(obs)
    }

    fn retire(&mut self) -> Result<Observation, Stuck> {
        let head = self.buffer.first().ok_or(Stuck::EmptyBuffer)?;
        let obs = match head {
            Instr::Nop => Observation::Silent,
            Instr::Assign(x, Expr::Lit(v)) => {
                self.vars.set(x.clone(), v.clone());
                Observation::Silent
            }
            Instr::Stored(n, v) => {
                self.mem.write(*n, v.clone());
                Observation::Silent
            }
            Instr::Fail(p) => {
                let p = *p;
                self.buffer.clear();
                self.stack = Stack::new();
                return Ok(Observation::Fail(p));
            }
            i => return Err(Stuck::NotRetirable(i.to_string())),
        };
        self.buffer.remove(0);
        Ok(obs)
    }
}

/// Functional form of [`Config::step`].
pub fn step(c: &Config, d: Directive, mode: ProtectMode) -> Result<(Config, Observation), Stuck> {
    let mut next = c.clone();
    let o = next.step(d, mode)?;
    Ok((next, o))
}
