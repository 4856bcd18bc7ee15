mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tflow_core::cut::{extract_env, is_cut, min_cut, CutError, DefUseGraph};
use tflow_core::flow::{
    config_well_typed, generate_constraints, satisfiable, solve, typecheck_transient, Atom, ConstraintSet, FlowType,
    Mode, ProtectedSet, TypingEnv,
};
use tflow_core::harness::{
    consistency_suite, gen_lequiv_pairs, l_equivalent, sct_fuzz, ConsistencyOptions, SctOptions,
};
use tflow_core::lang::{eval, parse_program, pretty_program, Command, Expr, Name, Program, Rhs, Value};
use tflow_core::machine::{protect_temp, random_schedule, run_schedule, Config, ProtectMode, Tracked};
use tflow_core::repair::{pipeline, repair, RepairError, RepairMode};
use tflow_core::seq::run_sequential;

use common::{brute_force_min_cut, random_graph, random_program, reaches_sink, ProgramGen};

const BUDGET: usize = 100_000;

fn modes() -> [Mode; 4] {
    [Mode::V1, Mode::V1_1, Mode::V1.with_slh_only(true), Mode::V1_1.with_slh_only(true)]
}

/// Reference evaluator; `None` is an undefined operand.
fn oracle_eval(e: &Expr, rho: &BTreeMap<&str, Option<u64>>) -> Option<Value> {
    let nat = |e: &Expr| match oracle_eval(e, rho)? {
        Value::Nat(n) => Some(n),
        v => panic!("expected a number, got {v}"),
    };
    match e {
        Expr::Lit(v) => Some(v.clone()),
        Expr::Var(x) => rho.get(&**x).copied().unwrap_or(Some(0)).map(Value::Nat),
        Expr::Add(a, b) => Some(Value::Nat(nat(a)?.wrapping_add(nat(b)?))),
        Expr::BitAnd(a, b) => Some(Value::Nat(nat(a)? & nat(b)?)),
        Expr::Lt(a, b) => Some(Value::Bool(nat(a)? < nat(b)?)),
        Expr::Ternary(c, t, f) => match oracle_eval(c, rho)? {
            Value::Bool(true) => oracle_eval(t, rho),
            Value::Bool(false) => oracle_eval(f, rho),
            v => panic!("expected a boolean, got {v}"),
        },
        Expr::Length(a) | Expr::Base(a) => match oracle_eval(a, rho)? {
            Value::Array(arr) => Some(Value::Nat(if matches!(e, Expr::Length(_)) { arr.len } else { arr.base })),
            v => panic!("expected an array, got {v}"),
        },
    }
}

fn random_expr(seed: u64) -> Expr {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = ProgramGen::new(&mut rng).nat(4);
    let p = parse_program(&format!("array a base=1 len=4 label=L; x := {e};")).unwrap();
    match p.body {
        Command::Assign(_, Rhs::Pure(e)) => e,
        c => panic!("{c:?}"),
    }
}

fn random_env(p: &Program, rng: &mut impl Rng) -> TypingEnv {
    let mut env = TypingEnv::default();
    for x in p.var_universe() {
        env.set(x, if rng.gen() { FlowType::T } else { FlowType::S });
    }
    env
}

fn random_subset(xs: &BTreeSet<Name>, rng: &mut impl Rng) -> ProtectedSet {
    xs.iter().filter(|_| rng.gen_bool(0.4)).cloned().collect()
}

/// Least extension of `env` to expression atoms, then a check of every edge.
fn env_satisfies(k: &ConstraintSet, env: &TypingEnv) -> bool {
    let mut ty: BTreeMap<Atom, FlowType> = BTreeMap::new();
    let value = |ty: &BTreeMap<Atom, FlowType>, a: &Atom| match a {
        Atom::T => FlowType::T,
        Atom::S => FlowType::S,
        Atom::Var(x) => env.get(x),
        a => ty.get(a).copied().unwrap_or(FlowType::S),
    };
    loop {
        let mut changed = false;
        for (a, b) in &k.edges {
            if matches!(b, Atom::Expr { .. }) && value(&ty, a) == FlowType::T && value(&ty, b) == FlowType::S {
                ty.insert(b.clone(), FlowType::T);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    k.edges.iter().all(|(a, b)| value(&ty, a) == FlowType::S || value(&ty, b) == FlowType::T)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn eval_matches_reference(seed in any::<u64>(), i in any::<u64>(), j in any::<u64>(), undef in 0u8..3) {
        let e = random_expr(seed);
        let mut rho: BTreeMap<&str, Option<u64>> = BTreeMap::from([("i", Some(i)), ("j", Some(j))]);
        if undef == 1 {
            rho.insert("i", None);
        }
        let lookup = |x: &str| rho.get(x).copied().unwrap_or(Some(0)).map(Value::Nat);
        prop_assert_eq!(eval(&e, &lookup).unwrap(), oracle_eval(&e, &rho));
    }

    #[test]
    fn pretty_then_parse_is_identity(seed in any::<u64>()) {
        let p = random_program(seed, 8);
        let text = pretty_program(&p);
        let q = parse_program(&text).unwrap();
        prop_assert_eq!(&q.body, &p.body);
        prop_assert_eq!(&q.vars, &p.vars);
        prop_assert_eq!(&q.policy, &p.policy);
        prop_assert_eq!(pretty_program(&q), text);
    }

    #[test]
    fn runs_are_deterministic(seed in any::<u64>()) {
        let p = random_program(seed, 6);
        let a = run_sequential(&p.body, &p.initial_memory(), &p.vars, BUDGET);
        let b = run_sequential(&p.body, &p.initial_memory(), &p.vars, BUDGET);
        prop_assert_eq!(&a, &b);
        let start = Config::new(p.body.clone(), p.initial_memory(), p.vars.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_schedule(&start, ProtectMode::Hardware, 30, 10_000, &mut rng).unwrap();
        prop_assert_eq!(
            run_schedule(&start, &ds, ProtectMode::Hardware),
            run_schedule(&start, &ds, ProtectMode::Hardware)
        );
    }

    #[test]
    fn checker_agrees_with_constraints(seed in any::<u64>()) {
        let p = random_program(seed, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for mode in [Mode::V1, Mode::V1_1] {
            let env = random_env(&p, &mut rng);
            let prot = random_subset(&p.body.assigned_vars(), &mut rng);
            let mut k = generate_constraints(&p.body, mode);
            k.edges.retain(|(_, b)| !matches!(b, Atom::Var(x) if prot.contains(x)));
            prop_assert_eq!(typecheck_transient(&env, &prot, &p.body, mode).is_ok(), env_satisfies(&k, &env));
        }
    }

    #[test]
    fn solution_is_least(seed in any::<u64>()) {
        let p = random_program(seed, 6);
        let k = generate_constraints(&p.body, Mode::V1_1);
        let hot: BTreeSet<Atom> = {
            let mut seen = BTreeSet::from([Atom::T]);
            let mut todo = vec![Atom::T];
            while let Some(a) = todo.pop() {
                for (x, y) in &k.edges {
                    if *x == a && seen.insert(y.clone()) {
                        todo.push(y.clone());
                    }
                }
            }
            seen
        };
        prop_assert_eq!(satisfiable(&k), !hot.contains(&Atom::S));
        if let Ok(sol) = solve(&k) {
            for (a, t) in &sol {
                prop_assert_eq!(*t == FlowType::T, hot.contains(a), "{}", a);
            }
            for (a, b) in &k.edges {
                prop_assert!(sol[a].flows_to(sol[b]));
            }
        }
    }

    #[test]
    fn v1_1_constraints_extend_v1(seed in any::<u64>()) {
        let p = random_program(seed, 8);
        prop_assert!(generate_constraints(&p.body, Mode::V1).is_subset(&generate_constraints(&p.body, Mode::V1_1)));
    }

    #[test]
    fn min_cut_matches_brute_force(seed in any::<u64>()) {
        let g = random_graph(&mut ChaCha8Rng::seed_from_u64(seed));
        match (min_cut(&g), brute_force_min_cut(&g)) {
            (Ok(c), Some(n)) => {
                prop_assert_eq!(c.cut.len(), n);
                prop_assert_eq!(c.flow, n as u64);
                prop_assert!(is_cut(&g, &c.cut));
                prop_assert!(!reaches_sink(&g.constraints, &c.cut));
                prop_assert!(c.cut.iter().all(|x| g.candidates.contains(x)));
            }
            (Err(CutError::Infeasible { path }), None) => {
                prop_assert_eq!(path.first(), Some(&Atom::T));
                prop_assert_eq!(path.last(), Some(&Atom::S));
            }
            (got, want) => prop_assert!(false, "min_cut {:?}, brute force {:?}", got, want),
        }
    }

    #[test]
    fn extracted_env_types_the_program(seed in any::<u64>()) {
        let p = random_program(seed, 8);
        for mode in modes() {
            let g = DefUseGraph::new(&p.body, mode);
            let Ok(c) = min_cut(&g) else { continue };
            let env = extract_env(&g.constraints, &c.cut, &p.var_universe()).unwrap();
            prop_assert!(typecheck_transient(&env, &c.cut, &p.body, mode).is_ok());
        }
    }

    #[test]
    fn repair_preserves_sequential_semantics(seed in any::<u64>()) {
        let p = random_program(seed, 8);
        let a = random_subset(&p.body.assigned_vars(), &mut ChaCha8Rng::seed_from_u64(seed));
        let fixed = repair(&p.body, &a).unwrap();
        let mut already = BTreeSet::new();
        p.body.walk(&mut |_, c| {
            if let Command::Protect(x, _) = c {
                already.insert(x.clone());
            }
        });
        prop_assert_eq!(fixed.protect_count(), p.body.protect_count() + a.difference(&already).count());
        let before = run_sequential(&p.body, &p.initial_memory(), &p.vars, BUDGET).unwrap();
        let after = run_sequential(&fixed, &p.initial_memory(), &p.vars, BUDGET).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn repairing_twice_changes_nothing(seed in any::<u64>()) {
        let p = random_program(seed, 8);
        for protect in [ProtectMode::Hardware, ProtectMode::Slh] {
            for spectre_v1_1 in [false, true] {
                let m = RepairMode { protect, spectre_v1_1 };
                let once = match pipeline(&p, m) {
                    Ok(r) => r,
                    Err(RepairError::Cut(CutError::Infeasible { .. })) if protect == ProtectMode::Slh => continue,
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                };
                prop_assert!(once.report.repaired_typechecks);
                prop_assert_eq!(once.report.inserted, once.cut.len());
                prop_assert_eq!(once.report.protect_count, p.body.protect_count() + once.cut.len());
                let twice = pipeline(&once.program, m).unwrap();
                prop_assert!(twice.cut.is_empty());
                prop_assert_eq!(twice.program.body, once.program.body);
            }
        }
    }

    #[test]
    fn pair_generation_is_reproducible_and_l_equivalent(seed in any::<u64>(), count in 0usize..6) {
        let p = random_program(seed, 4);
        let pairs = gen_lequiv_pairs(&p, count, seed);
        prop_assert_eq!(pairs.len(), count);
        prop_assert_eq!(&pairs, &gen_lequiv_pairs(&p, count, seed));
        for q in &pairs {
            prop_assert!(l_equivalent(&p, &q.left.mem, &q.left.vars, &q.right.mem, &q.right.vars));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn random_schedules_agree_with_sequential_runs(seed in any::<u64>()) {
        let p = random_program(seed, 6);
        let hw = pipeline(&p, RepairMode { protect: ProtectMode::Hardware, spectre_v1_1: false }).unwrap().program;
        let programs = vec![("p".to_string(), p), ("hw".to_string(), hw)];
        for mode in [ProtectMode::Hardware, ProtectMode::Slh] {
            let r = consistency_suite(&programs, ConsistencyOptions::new(mode, 20, seed));
            prop_assert!(r.passed(), "{:?}", r.failures);
        }
    }

    #[test]
    fn typing_is_preserved_along_schedules(seed in any::<u64>()) {
        let p = random_program(seed, 6);
        let m = RepairMode { protect: ProtectMode::Hardware, spectre_v1_1: seed % 2 == 0 };
        let r = pipeline(&p, m).unwrap();
        let mut env = r.env.clone();
        for x in r.program.body.vars() {
            env.set(protect_temp(&x), FlowType::T);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tracked::new(Config::new(r.program.body.clone(), p.initial_memory(), p.vars.clone()));
        for _ in 0..60 {
            prop_assert!(config_well_typed(&env, &t.config, m.flow_mode()), "{:?}", t.config.buffer);
            let mut next = t.successors(ProtectMode::Hardware);
            if next.is_empty() {
                break;
            }
            t = next.swap_remove(rng.gen_range(0..next.len())).1;
        }
    }

    #[test]
    fn repaired_programs_are_speculatively_constant_time(seed in any::<u64>()) {
        let p = random_program(seed, 6);
        for protect in [ProtectMode::Hardware, ProtectMode::Slh] {
            for spectre_v1_1 in [false, true] {
                let Ok(r) = pipeline(&p, RepairMode { protect, spectre_v1_1 }) else { continue };
                let report = sct_fuzz(&r.program, SctOptions::random(protect, 10, 4, seed)).unwrap();
                prop_assert!(report.passed(), "{:?}\n{}", report.counterexample, pretty_program(&r.program));
            }
        }
    }

    #[test]
    fn fuzzing_is_reproducible(seed in any::<u64>()) {
        let p = random_program(seed, 5);
        let a = sct_fuzz(&p, SctOptions::random(ProtectMode::Hardware, 5, 3, seed)).unwrap();
        let b = sct_fuzz(&p, SctOptions::random(ProtectMode::Hardware, 5, 3, seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

/// The generator does produce leaky programs, so the property above is not vacuous.
#[test]
fn some_unrepaired_programs_leak() {
    let leaky = (0..200u64)
        .filter(|&seed| {
            let p = random_program(seed, 10);
            !sct_fuzz(&p, SctOptions::random(ProtectMode::Hardware, 100, 2, seed)).unwrap().passed()
        })
        .count();
    println!("{leaky} of 200 unrepaired programs leak");
    assert!(leaky >= 5, "only {leaky} of 200 unrepaired programs leak");
}
