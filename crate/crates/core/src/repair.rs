//! Inserting `protect` at the assignments of a cut-set.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::cut::{extract_env, min_cut, CutError, DefUseGraph};
use crate::flow::{typecheck_transient, Mode, ProtectedSet, TypingEnv, Violation};
use crate::lang::{check_ssa, Command, Expr, Name, Program, Rhs};
use crate::machine::ProtectMode;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepairError {
    #[error("`{0}` is assigned more than once")]
    NotSsa(Name),
    #[error("`{0}` is never assigned, so it cannot be protected")]
    Unrepairable(Name),
    #[error(transparent)]
    Cut(#[from] CutError),
}

/// Rewrites `x := r` into `x := protect(r)` for every `x` in `a`.
pub fn repair(c: &Command, a: &ProtectedSet) -> Result<Command, RepairError> {
    if a.is_empty() {
        return Ok(c.clone());
    }
    if let Some(x) = check_ssa(c).violations.into_iter().next() {
        return Err(RepairError::NotSsa(x));
    }
    let assigned = c.assigned_vars();
    if let Some(x) = a.iter().find(|x| !assigned.contains(*x)) {
        return Err(RepairError::Unrepairable(x.clone()));
    }
    Ok(rewrite(c, &|x, r| a.contains(x).then(|| Command::Protect(x.clone(), r.clone()))))
}

fn rewrite(c: &Command, f: &impl Fn(&Name, &Rhs) -> Option<Command>) -> Command {
    match c {
        Command::Assign(x, r) => f(x, r).unwrap_or_else(|| c.clone()),
        Command::If(e, t, el) => Command::if_(e.clone(), rewrite(t, f), rewrite(el, f)),
        Command::While(e, b) => Command::while_(e.clone(), rewrite(b, f)),
        Command::Seq(a, b) => Command::seq(rewrite(a, f), rewrite(b, f)),
        _ => c.clone(),
    }
}

/// Which protect implementation the repair targets and which attacks it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RepairMode {
    pub protect: ProtectMode,
    pub spectre_v1_1: bool,
}

impl RepairMode {
    pub fn flow_mode(self) -> Mode {
        Mode { spectre_v1_1: self.spectre_v1_1, slh_only_cuts: self.protect == ProtectMode::Slh }
    }
}

/// Summary of a pipeline run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RepairReport {
    /// The cut-set, sorted.
    pub cut: Vec<String>,
    /// Number of protects inserted (the cut size).
    pub inserted: usize,
    /// Protects in the repaired program, including any already present.
    pub protect_count: usize,
    /// Protects the baseline strategy would have used.
    pub baseline_count: usize,
    /// The extracted environment and the cut type the original program.
    pub typechecks_with_cut: bool,
    /// The extracted environment types the repaired program with nothing implicitly protected.
    pub repaired_typechecks: bool,
}

#[derive(Debug, Clone)]
pub struct Repaired {
    pub program: Program,
    pub cut: ProtectedSet,
    pub env: TypingEnv,
    pub report: RepairReport,
    /// Violations of the post-repair check, if any.
    pub violations: Vec<Violation>,
}

/// Constraints, min-cut, repair, then re-check.
pub fn pipeline(p: &Program, mode: RepairMode) -> Result<Repaired, RepairError> {
    let fm = mode.flow_mode();
    let g = DefUseGraph::new(&p.body, fm);
    let cut = min_cut(&g)?.cut;
    let body = repair(&p.body, &cut)?;
    let env = extract_env(&g.constraints, &cut, &p.var_universe())?;
    let typechecks_with_cut = typecheck_transient(&env, &cut, &p.body, fm).is_ok();
    let after = typecheck_transient(&env, &ProtectedSet::new(), &body, fm);
    let baseline_count = baseline_repair(&p.body, mode.spectre_v1_1)?.protect_count();
    let report = RepairReport {
        cut: cut.iter().map(|x| x.to_string()).collect(),
        inserted: cut.len(),
        protect_count: body.protect_count(),
        baseline_count,
        typechecks_with_cut,
        repaired_typechecks: after.is_ok(),
    };
    Ok(Repaired { program: p.with_body(body), cut, env, report, violations: after.err().unwrap_or_default() })
}

/// Protects every read (`v1_1`) or every read whose index is not a literal.
pub fn baseline_repair(c: &Command, v1_1: bool) -> Result<Command, RepairError> {
    let targets: BTreeSet<Name> = {
        let mut out = BTreeSet::new();
        c.walk(&mut |_, c| {
            if let Command::Assign(x, Rhs::ArrayRead(_, e) | Rhs::PtrRead(_, e)) = c {
                if v1_1 || !matches!(e, Expr::Lit(_)) {
                    out.insert(x.clone());
                }
            }
        });
        out
    };
    if let Some(x) = check_ssa(c).violations.into_iter().find(|x| targets.contains(x)) {
        return Err(RepairError::NotSsa(x));
    }
    Ok(rewrite(c, &|x, r| {
        let hit = match r {
            Rhs::ArrayRead(_, e) | Rhs::PtrRead(_, e) => v1_1 || !matches!(e, Expr::Lit(_)),
            Rhs::Pure(_) => false,
        };
        hit.then(|| Command::Protect(x.clone(), r.clone()))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{parse_program, pretty_command};

    const EX1: &str = include_str!("../corpus/ex1.bl");
    const HW: RepairMode = RepairMode { protect: ProtectMode::Hardware, spectre_v1_1: false };
    const SLH: RepairMode = RepairMode { protect: ProtectMode::Slh, spectre_v1_1: false };

    fn names(xs: &[&str]) -> ProtectedSet {
        xs.iter().map(|x| Name::from(*x)).collect()
    }

    #[test]
    fn repair_ex1_at_z() {
        let p = parse_program(EX1).unwrap();
        let r = repair(&p.body, &names(&["z"])).unwrap();
        assert_eq!(pretty_command(&r), "x := a[i1];\ny := a[i2];\nz := protect(x + y);\nw := b[z];\n");
        let r = repair(&p.body, &names(&["x", "y"])).unwrap();
        assert_eq!(pretty_command(&r), "x := protect(a[i1]);\ny := protect(a[i2]);\nz := x + y;\nw := b[z];\n");
        assert_eq!(repair(&p.body, &ProtectedSet::new()).unwrap(), p.body);
    }

    #[test]
    fn repair_errors() {
        let p = parse_program(EX1).unwrap();
        assert_eq!(repair(&p.body, &names(&["i1"])), Err(RepairError::Unrepairable("i1".into())));
        let p = parse_program("x := 1; x := 2;").unwrap();
        assert_eq!(repair(&p.body, &names(&["x"])), Err(RepairError::NotSsa("x".into())));
    }

    #[test]
    fn pipeline_counts() {
        let p = parse_program(EX1).unwrap();
        let r = pipeline(&p, HW).unwrap();
        assert_eq!(r.report.cut, vec!["z"]);
        assert_eq!(r.report.protect_count, 1);
        assert!(r.report.typechecks_with_cut && r.report.repaired_typechecks);
        let r = pipeline(&p, SLH).unwrap();
        assert_eq!(r.report.cut, vec!["x", "y"]);
        assert_eq!(r.report.protect_count, 2);
        let safe = parse_program("var i = 0; x := i + 1;").unwrap();
        let r = pipeline(&safe, HW).unwrap();
        assert_eq!(r.report.protect_count, 0);
        assert_eq!(r.program.body, safe.body);
    }

    #[test]
    fn pipeline_is_idempotent() {
        let p = parse_program(EX1).unwrap();
        let once = pipeline(&p, HW).unwrap();
        let twice = pipeline(&once.program, HW).unwrap();
        assert!(twice.cut.is_empty());
        assert_eq!(twice.program.body, once.program.body);
    }

    #[test]
    fn baseline_counts() {
        // All three reads of EX1 use a variable index.
        let p = parse_program(EX1).unwrap();
        assert_eq!(baseline_repair(&p.body, false).unwrap().protect_count(), 3);
        assert_eq!(baseline_repair(&p.body, true).unwrap().protect_count(), 3);
        let p = parse_program("array a base=1 len=2 label=L; x := a[0]; y := *L(1);").unwrap();
        assert_eq!(baseline_repair(&p.body, false).unwrap().protect_count(), 0);
        assert_eq!(baseline_repair(&p.body, true).unwrap().protect_count(), 2);
    }
}
