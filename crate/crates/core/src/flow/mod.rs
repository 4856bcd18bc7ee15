//! Transient-flow typing, constant-time typing and constraint generation.

mod constraints;
mod ct;
mod transient;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::lang::{Name, Pos, Program};

pub use constraints::{generate_constraints, satisfiable, solve, Atom, ConstraintSet, Unsatisfiable};
pub use ct::typecheck_ct;
pub use transient::{config_well_typed, expr_type, typecheck_transient};

/// Transient-flow lattice: `S ⊑ T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FlowType {
    S,
    T,
}

impl FlowType {
    pub fn flows_to(self, other: FlowType) -> bool {
        self <= other
    }

    pub fn join(self, other: FlowType) -> FlowType {
        self.max(other)
    }
}

impl fmt::Display for FlowType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowType::S => "S",
            FlowType::T => "T",
        })
    }
}

/// Flow type per variable. Variables without an entry are stable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypingEnv(pub BTreeMap<Name, FlowType>);

impl TypingEnv {
    /// Every variable of `vars` typed `t`.
    pub fn uniform<'a>(vars: impl IntoIterator<Item = &'a Name>, t: FlowType) -> Self {
        TypingEnv(vars.into_iter().map(|x| (x.clone(), t)).collect())
    }

    pub fn get(&self, x: &str) -> FlowType {
        self.0.get(x).copied().unwrap_or(FlowType::S)
    }

    pub fn set(&mut self, x: Name, t: FlowType) {
        self.0.insert(x, t);
    }
}

/// Implicitly protected variables.
pub type ProtectedSet = BTreeSet<Name>;

/// Analysis flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Mode {
    /// Treat stored values as sinks.
    pub spectre_v1_1: bool,
    /// Only variables assigned from memory reads may be cut.
    pub slh_only_cuts: bool,
}

impl Mode {
    pub const V1: Mode = Mode { spectre_v1_1: false, slh_only_cuts: false };
    pub const V1_1: Mode = Mode { spectre_v1_1: true, slh_only_cuts: false };

    pub fn with_slh_only(self, on: bool) -> Mode {
        Mode { slh_only_cuts: on, ..self }
    }
}

/// A rejected typing premise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    /// Pre-order id of the offending command.
    pub node: usize,
    pub rule: &'static str,
    pub msg: String,
}

impl Violation {
    /// `Rule at line:col: message`, falling back to the node id without positions.
    pub fn render(&self, p: &Program) -> String {
        match p.position(self.node) {
            Some(Pos { line, col }) => format!("{} at {line}:{col}: {}", self.rule, self.msg),
            None => format!("{} at node {}: {}", self.rule, self.node, self.msg),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at node {}: {}", self.rule, self.node, self.msg)
    }
}
