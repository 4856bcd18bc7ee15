//! Source language: values, arrays, expressions, commands and programs.

mod check;
mod eval;
mod parse;
mod pretty;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

pub use check::{check_ssa, static_check, SsaReport, TypeError};
pub use eval::{eval, EvalError, Lookup};
pub use parse::{parse_program, ParseError};
pub use pretty::{pretty_command, pretty_expr, pretty_program, pretty_rhs};

/// Variable identifier.
pub type Name = Arc<str>;

/// All-ones bit mask.
pub const MASK_ONES: u64 = u64::MAX;
/// All-zeros bit mask.
pub const MASK_ZEROS: u64 = 0;

/// Two-point security lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    L,
    H,
}

impl Label {
    pub fn flows_to(self, other: Label) -> bool {
        self <= other
    }

    pub fn join(self, other: Label) -> Label {
        self.max(other)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::L => f.write_str("L"),
            Label::H => f.write_str("H"),
        }
    }
}

/// A statically allocated array occupying `[base, base + len)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArrayDecl {
    pub name: Name,
    pub base: u64,
    pub len: u64,
    pub label: Label,
}

impl ArrayDecl {
    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr - self.base < self.len
    }
}

pub type ArrayRef = Arc<ArrayDecl>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Nat(u64),
    Bool(bool),
    Array(ArrayRef),
}

impl Value {
    pub fn as_nat(&self) -> Option<u64> {
        match self {
            Value::Nat(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Nat(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Array(a) => f.write_str(&a.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Lit(Value),
    Var(Name),
    Add(Box<Expr>, Box<Expr>),
    Lt(Box<Expr>, Box<Expr>),
    BitAnd(Box<Expr>, Box<Expr>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Length(Box<Expr>),
    Base(Box<Expr>),
}

#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn nat(n: u64) -> Expr {
        Expr::Lit(Value::Nat(n))
    }

    pub fn var(x: &str) -> Expr {
        Expr::Var(x.into())
    }

    pub fn array(a: &ArrayRef) -> Expr {
        Expr::Lit(Value::Array(a.clone()))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn lt(a: Expr, b: Expr) -> Expr {
        Expr::Lt(Box::new(a), Box::new(b))
    }

    pub fn bitand(a: Expr, b: Expr) -> Expr {
        Expr::BitAnd(Box::new(a), Box::new(b))
    }

    pub fn ternary(c: Expr, t: Expr, e: Expr) -> Expr {
        Expr::Ternary(Box::new(c), Box::new(t), Box::new(e))
    }

    pub fn is_lit(&self) -> bool {
        matches!(self, Expr::Lit(_))
    }

    /// Variables mentioned by the expression, in first-occurrence order.
    pub fn vars(&self, out: &mut Vec<Name>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Var(x) => {
                if !out.contains(x) {
                    out.push(x.clone());
                }
            }
            Expr::Add(a, b) | Expr::Lt(a, b) | Expr::BitAnd(a, b) => {
                a.vars(out);
                b.vars(out);
            }
            Expr::Ternary(c, t, e) => {
                c.vars(out);
                t.vars(out);
                e.vars(out);
            }
            Expr::Length(e) | Expr::Base(e) => e.vars(out),
        }
    }
}

/// Right-hand side of an assignment.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Rhs {
    Pure(Expr),
    PtrRead(Label, Expr),
    ArrayRead(ArrayRef, Expr),
}

impl Rhs {
    pub fn is_read(&self) -> bool {
        !matches!(self, Rhs::Pure(_))
    }

    pub fn vars(&self, out: &mut Vec<Name>) {
        match self {
            Rhs::Pure(e) | Rhs::PtrRead(_, e) | Rhs::ArrayRead(_, e) => e.vars(out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Command {
    Skip,
    Fail,
    Assign(Name, Rhs),
    PtrWrite(Label, Expr, Expr),
    ArrayWrite(ArrayRef, Expr, Expr),
    Protect(Name, Rhs),
    If(Expr, Box<Command>, Box<Command>),
    While(Expr, Box<Command>),
    Seq(Box<Command>, Box<Command>),
}

impl Command {
    pub fn assign(x: &str, r: Rhs) -> Command {
        Command::Assign(x.into(), r)
    }

    pub fn seq(a: Command, b: Command) -> Command {
        Command::Seq(Box::new(a), Box::new(b))
    }

    /// Right-nested sequence of `cs`; `Skip` when empty.
    pub fn seq_all(cs: Vec<Command>) -> Command {
        let mut it = cs.into_iter().rev();
        let Some(mut acc) = it.next() else {
            return Command::Skip;
        };
        for c in it {
            acc = Command::seq(c, acc);
        }
        acc
    }

    pub fn if_(e: Expr, t: Command, f: Command) -> Command {
        Command::If(e, Box::new(t), Box::new(f))
    }

    pub fn while_(e: Expr, body: Command) -> Command {
        Command::While(e, Box::new(body))
    }

    /// Pre-order visit; node ids handed to `f` match [`Command::node_count`] numbering.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(usize, &'a Command)) {
        fn go<'a>(c: &'a Command, next: &mut usize, f: &mut impl FnMut(usize, &'a Command)) {
            let id = *next;
            *next += 1;
            f(id, c);
            match c {
                Command::If(_, t, e) => {
                    go(t, next, f);
                    go(e, next, f);
                }
                Command::While(_, b) => go(b, next, f),
                Command::Seq(a, b) => {
                    go(a, next, f);
                    go(b, next, f);
                }
                _ => {}
            }
        }
        let mut next = 0;
        go(self, &mut next, f);
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_, _| n += 1);
        n
    }

    /// Variables mentioned anywhere (read or written), in first-occurrence order.
    pub fn vars(&self) -> Vec<Name> {
        let mut out = Vec::new();
        self.walk(&mut |_, c| match c {
            Command::Assign(x, r) | Command::Protect(x, r) => {
                r.vars(&mut out);
                if !out.contains(x) {
                    out.push(x.clone());
                }
            }
            Command::PtrWrite(_, a, v) | Command::ArrayWrite(_, a, v) => {
                a.vars(&mut out);
                v.vars(&mut out);
            }
            Command::If(e, _, _) | Command::While(e, _) => e.vars(&mut out),
            Command::Skip | Command::Fail | Command::Seq(_, _) => {}
        });
        out
    }

    /// Variables that are the target of some `Assign` or `Protect`.
    pub fn assigned_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        self.walk(&mut |_, c| {
            if let Command::Assign(x, _) | Command::Protect(x, _) = c {
                out.insert(x.clone());
            }
        });
        out
    }

    pub fn protect_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_, c| {
            if matches!(c, Command::Protect(_, _)) {
                n += 1;
            }
        });
        n
    }
}

/// Security policy: the public variables and arrays.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Policy {
    pub public_vars: BTreeSet<Name>,
    pub public_arrays: BTreeSet<Name>,
}

impl Policy {
    pub fn var_label(&self, x: &str) -> Label {
        if self.public_vars.contains(x) {
            Label::L
        } else {
            Label::H
        }
    }
}

/// Total variable map. Unbound variables read as `0`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarMap(pub BTreeMap<Name, Value>);

impl VarMap {
    pub fn get(&self, x: &str) -> Value {
        self.0.get(x).cloned().unwrap_or(Value::Nat(0))
    }

    pub fn set(&mut self, x: Name, v: Value) {
        self.0.insert(x, v);
    }

    /// Drops bindings whose names start with `__` (machine temporaries).
    pub fn without_temporaries(&self) -> VarMap {
        VarMap(self.0.iter().filter(|(k, _)| !k.starts_with("__")).map(|(k, v)| (k.clone(), v.clone())).collect())
    }
}

impl Lookup for VarMap {
    fn lookup(&self, x: &str) -> Option<Value> {
        Some(self.get(x))
    }
}

/// Partial memory. Uncovered cells read as `0`; cell 0 is reserved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Memory(pub BTreeMap<u64, Value>);

impl Default for Memory {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert(0, Value::Nat(0));
        Memory(m)
    }
}

impl Memory {
    pub fn read(&self, addr: u64) -> Value {
        self.0.get(&addr).cloned().unwrap_or(Value::Nat(0))
    }

    pub fn write(&mut self, addr: u64, v: Value) {
        self.0.insert(addr, v);
    }
}

/// Line/column of a command in the source text (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// A parsed program: declarations, initial state, policy and body.
#[derive(Debug, Clone)]
pub struct Program {
    pub arrays: Vec<ArrayRef>,
    /// Initial array contents, one entry per declared array with an initializer.
    pub array_init: BTreeMap<Name, Vec<u64>>,
    pub vars: VarMap,
    pub policy: Policy,
    pub body: Command,
    /// Source position per command node, indexed by pre-order id.
    pub positions: Vec<Pos>,
}

impl Program {
    pub fn from_parts(arrays: Vec<ArrayRef>, vars: VarMap, policy: Policy, body: Command) -> Self {
        Program { arrays, array_init: BTreeMap::new(), vars, policy, body, positions: Vec::new() }
    }

    pub fn array(&self, name: &str) -> Option<&ArrayRef> {
        self.arrays.iter().find(|a| &*a.name == name)
    }

    pub fn initial_memory(&self) -> Memory {
        let mut mem = Memory::default();
        for a in &self.arrays {
            if let Some(cells) = self.array_init.get(&a.name) {
                for (i, v) in cells.iter().enumerate() {
                    mem.write(a.base + i as u64, Value::Nat(*v));
                }
            }
        }
        mem
    }

    /// Every variable of the program: declared ones first, then the rest in occurrence order.
    pub fn var_universe(&self) -> Vec<Name> {
        let mut out: Vec<Name> = self.vars.0.keys().cloned().collect();
        for x in self.body.vars() {
            if !out.contains(&x) {
                out.push(x);
            }
        }
        out
    }

    pub fn position(&self, node: usize) -> Option<Pos> {
        self.positions.get(node).copied()
    }

    /// Same declarations and initial state with a different body.
    pub fn with_body(&self, body: Command) -> Program {
        let positions = if body.node_count() == self.body.node_count() { self.positions.clone() } else { Vec::new() };
        Program { body, positions, ..self.clone() }
    }
}
