//! Def-use graph, node-capacity min-cut and typing-environment extraction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write;

use thiserror::Error;

use crate::flow::{generate_constraints, Atom, ConstraintSet, FlowType, Mode, ProtectedSet, TypingEnv};
use crate::lang::{Command, Name, Rhs};

/// The constraint graph together with the variables a cut may contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefUseGraph {
    pub constraints: ConstraintSet,
    /// Cut candidates in program order.
    pub candidates: Vec<Name>,
}

/// Variables assigned from an array read, in program order. These are the
/// only ones a hardened load can protect.
pub fn array_read_assigned(c: &Command) -> Vec<Name> {
    let mut out = Vec::new();
    c.walk(&mut |_, c| {
        if let Command::Assign(x, Rhs::ArrayRead(..)) | Command::Protect(x, Rhs::ArrayRead(..)) = c {
            if !out.contains(x) {
                out.push(x.clone());
            }
        }
    });
    out
}

/// Assigned variables in program order.
fn assigned_in_order(c: &Command) -> Vec<Name> {
    let mut out = Vec::new();
    c.walk(&mut |_, c| {
        if let Command::Assign(x, _) | Command::Protect(x, _) = c {
            if !out.contains(x) {
                out.push(x.clone());
            }
        }
    });
    out
}

impl DefUseGraph {
    pub fn new(c: &Command, mode: Mode) -> Self {
        let constraints = generate_constraints(c, mode);
        let present: BTreeSet<Name> = constraints.atoms().iter().filter_map(|a| a.var().cloned()).collect();
        let mut order = if mode.slh_only_cuts { array_read_assigned(c) } else { assigned_in_order(c) };
        if !mode.slh_only_cuts {
            // Input variables can sit on a path too; they follow the assigned ones.
            for x in c.vars() {
                if !order.contains(&x) {
                    order.push(x);
                }
            }
        }
        let candidates = order.into_iter().filter(|x| present.contains(x)).collect();
        DefUseGraph { constraints, candidates }
    }

    fn blocked(xs: &BTreeSet<Name>) -> BTreeSet<Atom> {
        xs.iter().map(|x| Atom::Var(x.clone())).collect()
    }

    /// Graphviz rendering; cut variables are filled.
    pub fn to_dot(&self, cut: &BTreeSet<Name>) -> String {
        let mut s = String::from("digraph constraints {\n    rankdir=LR;\n");
        for a in self.constraints.atoms() {
            let style = match &a {
                Atom::T => "shape=doublecircle, color=red".to_string(),
                Atom::S => "shape=doublecircle, color=blue".to_string(),
                Atom::Var(x) if cut.contains(x) => "shape=box, style=filled, fillcolor=orange".to_string(),
                Atom::Var(_) => "shape=box".to_string(),
                Atom::Expr { .. } => "shape=ellipse".to_string(),
            };
            let label = a.to_string().replace('"', "\\\"");
            writeln!(s, "    {} [label=\"{label}\", {style}];", a.dot_id()).unwrap();
        }
        for (a, b) in &self.constraints.edges {
            writeln!(s, "    {} -> {};", a.dot_id(), b.dot_id()).unwrap();
        }
        s.push_str("}\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CutError {
    /// Some `T`-to-`S` path has no cut candidate on it.
    #[error("no cut exists: path {} has no candidate variable", render_path(.path))]
    Infeasible { path: Vec<Atom> },
    #[error("not a cut: path {} survives", render_path(.path))]
    NotACut { path: Vec<Atom> },
}

pub fn render_path(path: &[Atom]) -> String {
    path.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" -> ")
}

/// A minimum cut and the value of the maximum flow that certifies it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinCut {
    pub cut: ProtectedSet,
    pub flow: u64,
}

struct Net {
    /// (to, capacity, reverse edge index)
    adj: Vec<Vec<(usize, u64, usize)>>,
}

impl Net {
    fn new(n: usize) -> Self {
        Net { adj: vec![Vec::new(); n] }
    }

    fn add(&mut self, a: usize, b: usize, cap: u64) {
        let ra = self.adj[b].len();
        let rb = self.adj[a].len();
        self.adj[a].push((b, cap, ra));
        self.adj[b].push((a, 0, rb));
    }

    /// Shortest augmenting paths; returns the flow value.
    fn max_flow(&mut self, s: usize, t: usize) -> u64 {
        let mut total = 0;
        loop {
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.adj.len()];
            let mut queue = VecDeque::from([s]);
            let mut seen = vec![false; self.adj.len()];
            seen[s] = true;
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for (i, &(v, cap, _)) in self.adj[u].iter().enumerate() {
                    if cap > 0 && !seen[v] {
                        seen[v] = true;
                        prev[v] = Some((u, i));
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut bottleneck = u64::MAX;
            let mut v = t;
            while let Some((u, i)) = prev[v] {
                bottleneck = bottleneck.min(self.adj[u][i].1);
                v = u;
            }
            let mut v = t;
            while let Some((u, i)) = prev[v] {
                self.adj[u][i].1 -= bottleneck;
                let (_, _, r) = self.adj[u][i];
                self.adj[v][r].1 += bottleneck;
                v = u;
            }
            total += bottleneck;
        }
    }

    fn residual_reachable(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &(v, cap, _) in &self.adj[u] {
                if cap > 0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

/// Minimum set of candidate variables whose removal disconnects `T` from `S`.
pub fn min_cut(g: &DefUseGraph) -> Result<MinCut, CutError> {
    let all = g.candidates.iter().cloned().collect();
    if let Some(path) = g.constraints.ts_path(&DefUseGraph::blocked(&all)) {
        return Err(CutError::Infeasible { path });
    }
    // Candidates first, in program order, so augmenting order is deterministic.
    let mut index: BTreeMap<Atom, usize> = BTreeMap::new();
    let mut atoms: Vec<Atom> = Vec::new();
    for a in g.candidates.iter().map(|x| Atom::Var(x.clone())).chain(g.constraints.atoms()) {
        if !index.contains_key(&a) {
            index.insert(a.clone(), atoms.len());
            atoms.push(a);
        }
    }
    let inf = g.candidates.len() as u64 + 1;
    let candidate: BTreeSet<&Name> = g.candidates.iter().collect();
    // Node i splits into 2i (in) and 2i + 1 (out).
    let mut net = Net::new(2 * atoms.len().max(1));
    for (i, a) in atoms.iter().enumerate() {
        let cap = match a {
            Atom::Var(x) if candidate.contains(x) => 1,
            _ => inf,
        };
        net.add(2 * i, 2 * i + 1, cap);
    }
    for (a, b) in &g.constraints.edges {
        net.add(2 * index[a] + 1, 2 * index[b], inf);
    }
    let (Some(&t), Some(&s)) = (index.get(&Atom::T), index.get(&Atom::S)) else {
        return Ok(MinCut { cut: ProtectedSet::new(), flow: 0 });
    };
    let flow = net.max_flow(2 * t + 1, 2 * s);
    let reach = net.residual_reachable(2 * t + 1);
    let cut = g
        .candidates
        .iter()
        .filter(|x| {
            let i = index[&Atom::Var((*x).clone())];
            reach[2 * i] && !reach[2 * i + 1]
        })
        .cloned()
        .collect();
    Ok(MinCut { cut, flow })
}

/// True iff removing `a` disconnects `T` from `S`.
pub fn is_cut(g: &DefUseGraph, a: &ProtectedSet) -> bool {
    g.constraints.ts_path(&DefUseGraph::blocked(a)).is_none()
}

/// `Γ(k, A)`: `x` is transient iff some path from `T` reaches `α_x` without
/// passing through `A`.
pub fn extract_env(k: &ConstraintSet, a: &ProtectedSet, universe: &[Name]) -> Result<TypingEnv, CutError> {
    if let Some(path) = k.ts_path(&DefUseGraph::blocked(a)) {
        return Err(CutError::NotACut { path });
    }
    Ok(propagate_env(k, a, universe))
}

/// Like [`extract_env`] but without requiring a cut: a checker run under the
/// result reports every sink a transient value reaches.
pub fn propagate_env(k: &ConstraintSet, a: &ProtectedSet, universe: &[Name]) -> TypingEnv {
    let mut env = TypingEnv::uniform(universe, FlowType::S);
    for atom in k.reachable(&Atom::T, &DefUseGraph::blocked(a)) {
        if let Atom::Var(x) = atom {
            env.set(x, FlowType::T);
        }
    }
    env
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::typecheck_transient;
    use crate::lang::parse_program;

    const EX1: &str = include_str!("../corpus/ex1.bl");

    fn names(xs: &[&str]) -> ProtectedSet {
        xs.iter().map(|x| Name::from(*x)).collect()
    }

    #[test]
    fn ex1_min_cut_is_z() {
        let p = parse_program(EX1).unwrap();
        let g = DefUseGraph::new(&p.body, Mode::V1);
        let m = min_cut(&g).unwrap();
        assert_eq!(m.cut, names(&["z"]));
        assert_eq!(m.flow, 1);
        assert!(is_cut(&g, &names(&["x", "y"])));
        assert!(!is_cut(&g, &names(&["x"])));
    }

    #[test]
    fn ex1_slh_only_cut_is_both_reads() {
        let p = parse_program(EX1).unwrap();
        let g = DefUseGraph::new(&p.body, Mode::V1.with_slh_only(true));
        assert_eq!(g.candidates, vec![Name::from("x"), Name::from("y"), Name::from("w")]);
        assert_eq!(min_cut(&g).unwrap().cut, names(&["x", "y"]));
    }

    #[test]
    fn slh_only_infeasible_path_is_reported() {
        let p = parse_program("array a base=1 len=2 label=L; var i = 0; x := *L(i); w := a[x];").unwrap();
        let g = DefUseGraph::new(&p.body, Mode::V1.with_slh_only(true));
        let Err(CutError::Infeasible { path }) = min_cut(&g) else { panic!("expected infeasible") };
        assert_eq!(render_path(&path), "T -> *L(i) -> x -> S");
        assert_eq!(min_cut(&DefUseGraph::new(&p.body, Mode::V1)).unwrap().cut, names(&["x"]));
    }

    #[test]
    fn no_path_means_empty_cut() {
        let p = parse_program("var i = 0; x := i + 1;").unwrap();
        let g = DefUseGraph::new(&p.body, Mode::V1);
        assert_eq!(min_cut(&g).unwrap(), MinCut { cut: ProtectedSet::new(), flow: 0 });
    }

    #[test]
    fn extract_env_examples() {
        let p = parse_program(EX1).unwrap();
        let k = generate_constraints(&p.body, Mode::V1);
        let u = p.var_universe();
        let env = extract_env(&k, &names(&["z"]), &u).unwrap();
        for (x, t) in [
            ("x", FlowType::T),
            ("y", FlowType::T),
            ("z", FlowType::S),
            ("i1", FlowType::S),
            ("i2", FlowType::S),
            ("w", FlowType::T),
        ] {
            assert_eq!(env.get(x), t, "{x}");
        }
        let env = extract_env(&k, &names(&["x", "y"]), &u).unwrap();
        for x in ["x", "y", "z", "i1", "i2"] {
            assert_eq!(env.get(x), FlowType::S, "{x}");
        }
        assert_eq!(env.get("w"), FlowType::T);
        assert!(matches!(extract_env(&k, &names(&["x"]), &u), Err(CutError::NotACut { .. })));
        let env = extract_env(&ConstraintSet::default(), &ProtectedSet::new(), &u).unwrap();
        assert!(env.0.values().all(|t| *t == FlowType::S));
    }

    #[test]
    fn extracted_env_types_the_program() {
        let p = parse_program(EX1).unwrap();
        let g = DefUseGraph::new(&p.body, Mode::V1);
        let a = min_cut(&g).unwrap().cut;
        let env = extract_env(&g.constraints, &a, &p.var_universe()).unwrap();
        assert_eq!(typecheck_transient(&env, &a, &p.body, Mode::V1), Ok(()));
    }

    #[test]
    fn dot_marks_cut_nodes() {
        let p = parse_program(EX1).unwrap();
        let g = DefUseGraph::new(&p.body, Mode::V1);
        let dot = g.to_dot(&names(&["z"]));
        assert!(dot.contains("v_z [label=\"z\", shape=box, style=filled"));
        assert!(dot.contains("T -> "));
    }
}
