#![allow(dead_code)]

use rand::Rng;
use tflow_core::corpus;
use tflow_core::cut::DefUseGraph;
use tflow_core::flow::{Atom, ConstraintSet, ProtectedSet};
use tflow_core::lang::{Name, Program};

pub fn corpus_programs() -> Vec<(String, Program)> {
    corpus::entries().iter().map(|e| (e.name.to_string(), e.program().unwrap())).collect()
}

pub fn load(name: &str) -> Program {
    corpus::find(name).unwrap().program().unwrap()
}

/// A random def-use graph with at most 12 candidate variables, some
/// non-candidate variables and some expression nodes. `T` only has out-edges
/// and `S` only in-edges.
pub fn random_graph(rng: &mut impl Rng) -> DefUseGraph {
    let n_vars = rng.gen_range(1..=14);
    let n_exprs = rng.gen_range(0..=6);
    let vars: Vec<Name> = (0..n_vars).map(|i| Name::from(format!("v{i}").as_str())).collect();
    let candidates: Vec<Name> = vars.iter().filter(|_| rng.gen_bool(0.85)).take(12).cloned().collect();
    let mut inner: Vec<Atom> = vars.iter().map(|v| Atom::Var(v.clone())).collect();
    inner.extend((0..n_exprs).map(|i| Atom::Expr { node: i, path: vec![], text: format!("e{i}") }));
    let density = rng.gen_range(0.05..0.35);
    let mut k = ConstraintSet::default();
    for a in &inner {
        if rng.gen_bool(0.3) {
            k.insert(Atom::T, a.clone());
        }
        if rng.gen_bool(0.3) {
            k.insert(a.clone(), Atom::S);
        }
        for b in &inner {
            if a != b && rng.gen_bool(density) {
                k.insert(a.clone(), b.clone());
            }
        }
    }
    DefUseGraph { constraints: k, candidates }
}

/// Size of the smallest candidate subset that cuts every T-S path, by
/// trying subsets in order of size.
pub fn brute_force_min_cut(g: &DefUseGraph) -> Option<usize> {
    let n = g.candidates.len();
    let mut masks: Vec<u32> = (0..1u32 << n).collect();
    masks.sort_by_key(|m| m.count_ones());
    masks.into_iter().find_map(|m| {
        let a: ProtectedSet = (0..n).filter(|i| m >> i & 1 == 1).map(|i| g.candidates[i].clone()).collect();
        (!reaches_sink(&g.constraints, &a)).then_some(a.len())
    })
}

/// Whether `S` is reachable from `T` without entering a variable of `a`.
pub fn reaches_sink(k: &ConstraintSet, a: &ProtectedSet) -> bool {
    let mut seen = vec![Atom::T];
    let mut todo = vec![Atom::T];
    while let Some(x) = todo.pop() {
        for (from, to) in &k.edges {
            if *from != x || seen.contains(to) || matches!(to, Atom::Var(v) if a.contains(v)) {
                continue;
            }
            if *to == Atom::S {
                return true;
            }
            seen.push(to.clone());
            todo.push(to.clone());
        }
    }
    false
}

/// Random well-typed, SSA, terminating source text. Arrays `a` and `b` are
/// public, `s` (addresses 9 and 10) is secret and is never read in-bounds;
/// pointer accesses are confined to addresses 0..=7.
pub struct ProgramGen<'r, R: Rng> {
    rng: &'r mut R,
    vars: Vec<String>,
    fresh: usize,
    assigned: Vec<String>,
}

impl<'r, R: Rng> ProgramGen<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        ProgramGen { rng, vars: vec!["i".into(), "j".into()], fresh: 0, assigned: Vec::new() }
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.fresh += 1;
        let x = format!("{prefix}{}", self.fresh);
        self.assigned.push(x.clone());
        x
    }

    pub fn nat(&mut self, depth: u32) -> String {
        let leaf = depth == 0 || self.rng.gen_bool(0.4);
        if leaf {
            return match self.rng.gen_range(0..5) {
                0 | 1 => self.rng.gen_range(0..8u64).to_string(),
                2 => format!("{}(a)", if self.rng.gen() { "length" } else { "base" }),
                _ => self.vars[self.rng.gen_range(0..self.vars.len())].clone(),
            };
        }
        match self.rng.gen_range(0..4) {
            0 | 1 => format!("({} + {})", self.nat(depth - 1), self.nat(depth - 1)),
            2 => format!("({} & {})", self.nat(depth - 1), self.nat(depth - 1)),
            _ => format!("({} ? {} : {})", self.boolean(depth - 1), self.nat(depth - 1), self.nat(depth - 1)),
        }
    }

    pub fn boolean(&mut self, depth: u32) -> String {
        if depth == 0 || self.rng.gen_bool(0.15) {
            return if self.rng.gen() { "true".into() } else { "false".into() };
        }
        format!("({} < {})", self.nat(depth - 1), self.nat(depth - 1))
    }

    fn rhs(&mut self) -> String {
        match self.rng.gen_range(0..6) {
            0..=2 => {
                // Indexing by the latest value builds read-to-address chains.
                let i = if self.rng.gen() { self.vars.last().cloned().unwrap_or_default() } else { self.nat(2) };
                format!("{}[{i}]", if self.rng.gen() { "a" } else { "b" })
            }
            3 => format!("*L(({}) & 7)", self.nat(1)),
            _ => self.nat(2),
        }
    }

    fn stmt(&mut self, depth: u32, out: &mut String, indent: usize) {
        let pad = " ".repeat(indent * 4);
        let roll = self.rng.gen_range(0..20);
        match roll {
            0..=8 => {
                let r = self.rhs();
                let x = self.fresh("v");
                if self.rng.gen_bool(0.15) {
                    out.push_str(&format!("{pad}{x} := protect({r});\n"));
                } else {
                    out.push_str(&format!("{pad}{x} := {r};\n"));
                }
                self.vars.push(x);
            }
            9 | 10 => {
                let (i, v) = (self.nat(1), self.nat(1));
                out.push_str(&format!("{pad}{}[{i}] := {v};\n", if self.rng.gen() { "a" } else { "b" }));
            }
            11 => {
                let (p, v) = (self.nat(1), self.nat(1));
                out.push_str(&format!("{pad}*L(({p}) & 7) := {v};\n"));
            }
            12..=14 if depth > 0 => {
                let c = self.boolean(2);
                out.push_str(&format!("{pad}if ({c}) {{\n"));
                self.block(depth - 1, out, indent + 1);
                out.push_str(&format!("{pad}}} else {{\n"));
                self.block(depth - 1, out, indent + 1);
                out.push_str(&format!("{pad}}}\n"));
            }
            15 | 16 if depth > 0 => {
                let k = self.fresh("n");
                let bound = self.rng.gen_range(1..=3);
                out.push_str(&format!("{pad}while ({k} < {bound}) {{\n"));
                self.block(depth - 1, out, indent + 1);
                out.push_str(&format!("{pad}    {k} := {k} + 1;\n{pad}}}\n"));
            }
            17 if depth < 2 => out.push_str(&format!("{pad}fail;\n")),
            _ => out.push_str(&format!("{pad}skip;\n")),
        }
    }

    fn block(&mut self, depth: u32, out: &mut String, indent: usize) {
        let saved = self.vars.len();
        for _ in 0..self.rng.gen_range(1..=3) {
            self.stmt(depth, out, indent);
        }
        // Names bound in a branch or loop body stay out of scope afterwards.
        self.vars.truncate(saved);
    }

    /// A complete program with `1..=max_stmts` top-level statements.
    pub fn program(&mut self, max_stmts: usize) -> String {
        let mut body = String::new();
        for _ in 0..self.rng.gen_range(1..=max_stmts) {
            self.stmt(2, &mut body, 0);
        }
        let cells = |rng: &mut R| (0..4).map(|_| rng.gen_range(0..8u64).to_string()).collect::<Vec<_>>().join(", ");
        let (a, b) = (cells(self.rng), cells(self.rng));
        let (i, j) = (self.rng.gen_range(0..6u64), self.rng.gen_range(0..6u64));
        let mut public: Vec<String> = vec!["a".into(), "b".into(), "i".into(), "j".into()];
        public.extend(self.assigned.iter().cloned());
        format!(
            "array a base=1 len=4 label=L = [{a}];\narray b base=5 len=4 label=L = [{b}];\n\
             array s base=9 len=2 label=H = [13, 17];\nvar i = {i};\nvar j = {j};\npublic {};\n\n{body}",
            public.join(", ")
        )
    }
}

pub fn random_program(seed: u64, max_stmts: usize) -> Program {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let src = ProgramGen::new(&mut rng).program(max_stmts);
    tflow_core::lang::parse_program(&src).unwrap_or_else(|e| panic!("{e}\n{src}"))
}
