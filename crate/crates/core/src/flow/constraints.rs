use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use super::{FlowType, Mode};
use crate::lang::{pretty_expr, pretty_rhs, Command, Expr, Name, Rhs};

/// Node of the constraint graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    /// The transient source.
    T,
    /// The stable sink.
    S,
    /// The type variable of a program variable; shared by all its occurrences.
    Var(Name),
    /// One syntactic occurrence of a compound expression, literal or read,
    /// keyed by command id and child path.
    Expr { node: usize, path: Vec<u8>, text: String },
}

impl Atom {
    pub fn var(&self) -> Option<&Name> {
        match self {
            Atom::Var(x) => Some(x),
            _ => None,
        }
    }

    /// Identifier usable in DOT output.
    pub fn dot_id(&self) -> String {
        match self {
            Atom::T => "T".into(),
            Atom::S => "S".into(),
            Atom::Var(x) => format!("v_{x}"),
            Atom::Expr { node, path, .. } => {
                let p: Vec<String> = path.iter().map(|i| i.to_string()).collect();
                format!("e{node}_{}", p.join("_"))
            }
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::T => f.write_str("T"),
            Atom::S => f.write_str("S"),
            Atom::Var(x) => f.write_str(x),
            Atom::Expr { text, .. } => f.write_str(text),
        }
    }
}

/// Set of can-flow-to edges `a ⊑ b`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    pub edges: BTreeSet<(Atom, Atom)>,
}

impl ConstraintSet {
    pub fn insert(&mut self, a: Atom, b: Atom) {
        debug_assert!(b != Atom::T && a != Atom::S);
        self.edges.insert((a, b));
    }

    pub fn contains(&self, a: &Atom, b: &Atom) -> bool {
        self.edges.contains(&(a.clone(), b.clone()))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn is_subset(&self, other: &ConstraintSet) -> bool {
        self.edges.is_subset(&other.edges)
    }

    /// Every atom mentioned by some edge.
    pub fn atoms(&self) -> BTreeSet<Atom> {
        self.edges.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect()
    }

    pub fn successors(&self) -> BTreeMap<&Atom, Vec<&Atom>> {
        let mut m: BTreeMap<&Atom, Vec<&Atom>> = BTreeMap::new();
        for (a, b) in &self.edges {
            m.entry(a).or_default().push(b);
        }
        m
    }

    /// Atoms reachable from `from` without passing through `blocked`.
    /// A blocked start atom reaches nothing.
    pub fn reachable(&self, from: &Atom, blocked: &BTreeSet<Atom>) -> BTreeSet<Atom> {
        let succ = self.successors();
        let mut seen = BTreeSet::new();
        if blocked.contains(from) {
            return seen;
        }
        let mut queue = VecDeque::from([from.clone()]);
        seen.insert(from.clone());
        while let Some(a) = queue.pop_front() {
            for b in succ.get(&a).into_iter().flatten() {
                if !blocked.contains(*b) && seen.insert((*b).clone()) {
                    queue.push_back((*b).clone());
                }
            }
        }
        seen
    }

    /// A shortest `T`-to-`S` path avoiding `blocked`, if any.
    pub fn ts_path(&self, blocked: &BTreeSet<Atom>) -> Option<Vec<Atom>> {
        let succ = self.successors();
        let mut parent: BTreeMap<Atom, Atom> = BTreeMap::new();
        let mut queue = VecDeque::from([Atom::T]);
        let mut seen = BTreeSet::from([Atom::T]);
        while let Some(a) = queue.pop_front() {
            if a == Atom::S {
                let mut path = vec![Atom::S];
                let mut cur = &Atom::S;
                while let Some(p) = parent.get(cur) {
                    path.push(p.clone());
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for b in succ.get(&a).into_iter().flatten() {
                if !blocked.contains(*b) && seen.insert((*b).clone()) {
                    parent.insert((*b).clone(), a.clone());
                    queue.push_back((*b).clone());
                }
            }
        }
        None
    }

    /// Drops every edge into the variable atoms of `xs`.
    pub fn without_edges_into(&self, xs: &BTreeSet<Name>) -> ConstraintSet {
        ConstraintSet {
            edges: self.edges.iter().filter(|(_, b)| !matches!(b, Atom::Var(x) if xs.contains(x))).cloned().collect(),
        }
    }
}

struct Gen {
    mode: Mode,
    k: ConstraintSet,
}

impl Gen {
    fn expr(&mut self, e: &Expr, node: usize, path: &mut Vec<u8>) -> Atom {
        let me = |path: &Vec<u8>| Atom::Expr { node, path: path.clone(), text: pretty_expr(e) };
        match e {
            // Every occurrence of `x` denotes `α_x`, so the `x ⊑ α_x` edge is a self-loop.
            Expr::Var(x) => Atom::Var(x.clone()),
            Expr::Lit(_) => me(path),
            Expr::Add(a, b) | Expr::Lt(a, b) | Expr::BitAnd(a, b) => {
                let atom = me(path);
                for (i, sub) in [a, b].into_iter().enumerate() {
                    path.push(i as u8);
                    let s = self.expr(sub, node, path);
                    path.pop();
                    self.k.insert(s, atom.clone());
                }
                atom
            }
            Expr::Ternary(c, t, f) => {
                let atom = me(path);
                for (i, sub) in [c, t, f].into_iter().enumerate() {
                    path.push(i as u8);
                    let s = self.expr(sub, node, path);
                    path.pop();
                    self.k.insert(s, atom.clone());
                }
                atom
            }
            Expr::Length(a) | Expr::Base(a) => {
                let atom = me(path);
                path.push(0);
                let s = self.expr(a, node, path);
                path.pop();
                self.k.insert(s, atom.clone());
                atom
            }
        }
    }

    fn sub_expr(&mut self, e: &Expr, node: usize, slot: u8) -> Atom {
        self.expr(e, node, &mut vec![slot])
    }

    fn rhs(&mut self, r: &Rhs, node: usize) -> Atom {
        match r {
            Rhs::Pure(e) => self.sub_expr(e, node, 0),
            Rhs::PtrRead(_, e) | Rhs::ArrayRead(_, e) => {
                let idx = self.expr(e, node, &mut vec![0, 0]);
                self.k.insert(idx, Atom::S);
                let atom = Atom::Expr { node, path: vec![0], text: pretty_rhs(r) };
                self.k.insert(Atom::T, atom.clone());
                atom
            }
        }
    }

    fn command(&mut self, id: usize, c: &Command) {
        match c {
            Command::Skip | Command::Fail | Command::Seq(..) => {}
            Command::Assign(x, r) => {
                let a = self.rhs(r, id);
                self.k.insert(a, Atom::Var(x.clone()));
            }
            Command::Protect(_, r) => {
                self.rhs(r, id);
            }
            Command::PtrWrite(_, e1, e2) | Command::ArrayWrite(_, e1, e2) => {
                let a = self.sub_expr(e1, id, 0);
                self.k.insert(a, Atom::S);
                let v = self.sub_expr(e2, id, 1);
                if self.mode.spectre_v1_1 {
                    self.k.insert(v, Atom::S);
                }
            }
            Command::If(e, _, _) | Command::While(e, _) => {
                let a = self.sub_expr(e, id, 0);
                self.k.insert(a, Atom::S);
            }
        }
    }
}

/// Constraints of `c` under the all-stable environment with every variable
/// protected, so that generation itself never rejects.
pub fn generate_constraints(c: &Command, mode: Mode) -> ConstraintSet {
    let mut g = Gen { mode, k: ConstraintSet::default() };
    c.walk(&mut |id, c| g.command(id, c));
    g.k
}

pub fn satisfiable(k: &ConstraintSet) -> bool {
    !k.reachable(&Atom::T, &BTreeSet::new()).contains(&Atom::S)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("constraints are unsatisfiable: {}", path.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" -> "))]
pub struct Unsatisfiable {
    /// A witness `T`-to-`S` path.
    pub path: Vec<Atom>,
}

/// Least solution: `T` exactly on the atoms reachable from `T`.
pub fn solve(k: &ConstraintSet) -> Result<BTreeMap<Atom, FlowType>, Unsatisfiable> {
    if let Some(path) = k.ts_path(&BTreeSet::new()) {
        return Err(Unsatisfiable { path });
    }
    let hot = k.reachable(&Atom::T, &BTreeSet::new());
    let mut sol: BTreeMap<Atom, FlowType> = k
        .atoms()
        .into_iter()
        .map(|a| {
            let t = if hot.contains(&a) { FlowType::T } else { FlowType::S };
            (a, t)
        })
        .collect();
    sol.insert(Atom::T, FlowType::T);
    sol.insert(Atom::S, FlowType::S);
    Ok(sol)
}
