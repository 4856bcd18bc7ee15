use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, Write as _};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use tflow_core::corpus;
use tflow_core::cut::{extract_env, min_cut, propagate_env, CutError, DefUseGraph};
use tflow_core::flow::{generate_constraints, typecheck_ct, typecheck_transient, Mode, ProtectedSet, Violation};
use tflow_core::harness::{consistency_suite, sct_fuzz, ConsistencyOptions, Schedules, SctOptions};
use tflow_core::lang::{check_ssa, parse_program, pretty_program, static_check, Program, Value};
use tflow_core::machine::{
    parse_schedule, random_schedule, run_schedule, sequential_schedule, Config, Directive, EnumLimits, ProtectMode,
};
use tflow_core::repair::{pipeline, RepairError, RepairMode};
use tflow_core::seq::{run_sequential, DEFAULT_BUDGET};

#[derive(Parser)]
#[command(name = "tflow", version, about = "Speculative execution, transient-flow typing and protect repair")]
struct Cli {
    /// Print a JSON report instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Step budget for sequential runs and schedule completion.
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    /// `hw` or `slh` picks the protect implementation, `v1` or `v1.1` the attack variant.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Treat stored values as sinks (same as `--mode=v1.1`).
    #[arg(long, global = true)]
    v11: bool,
    /// Only cut variables assigned from array reads, and repair with SLH.
    #[arg(long = "slh-only", global = true)]
    slh_only: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Hw,
    Slh,
    V1,
    #[value(name = "v1.1")]
    V11,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a program under the sequential semantics.
    RunSeq { program: String },
    /// Run a program on the speculative machine under one schedule.
    RunSpec {
        program: String,
        /// Schedule file, one directive per line; `ex1-attack` names the bundled EX1 attack.
        #[arg(long, group = "sched")]
        schedule: Option<String>,
        /// The in-order schedule (the default).
        #[arg(long, group = "sched")]
        seq: bool,
        /// A random prefix of this many directives, completed in order.
        #[arg(long, group = "sched")]
        random: Option<usize>,
    },
    /// Check constant-time and transient-flow typing; both when neither flag is given.
    Check {
        program: String,
        #[arg(long)]
        ct: bool,
        #[arg(long)]
        transient: bool,
    },
    /// Infer a minimum protect set and the typing environment it induces.
    Infer {
        program: String,
        /// Print the constraint graph with the cut highlighted instead.
        #[arg(long)]
        dot: bool,
    },
    /// Print the constraint graph in DOT.
    Graph {
        program: String,
        /// Accepted for symmetry with `infer`; DOT is the only text format.
        #[arg(long)]
        dot: bool,
    },
    /// Insert a minimum number of protects and re-check the result.
    Repair { program: String },
    /// Compare runs on pairs of states that agree on public data.
    FuzzSct {
        program: String,
        /// `exhaustive` or `random:N` (N schedules per pair).
        #[arg(long, default_value = "random:100", value_parser = parse_schedules)]
        schedules: Schedules,
        #[arg(long, default_value_t = 10)]
        pairs: usize,
    },
    /// Compare speculative runs against sequential ones; every bundled program when none is given.
    Consistency {
        programs: Vec<String>,
        /// Random schedules per program.
        #[arg(long, default_value_t = 100)]
        schedules: usize,
        /// Also enumerate schedules up to the default bounds.
        #[arg(long)]
        exhaustive: bool,
    },
    /// Bundled example programs.
    Corpus {
        #[command(subcommand)]
        action: Option<CorpusCmd>,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Name and summary of every program (the default).
    List,
    /// Parse, type-check and run every program.
    Validate,
    /// Print one program's source.
    Show { name: String },
}

fn parse_schedules(s: &str) -> Result<Schedules, String> {
    if s == "exhaustive" {
        // Depth and node bounds only: stopping after a fixed number of
        // schedules would leave later branches unexplored.
        return Ok(Schedules::Exhaustive(EnumLimits { max_schedules: usize::MAX, ..EnumLimits::default() }));
    }
    match s.strip_prefix("random:").map(str::parse::<usize>) {
        Some(Ok(n)) if n > 0 => Ok(Schedules::Random(n)),
        _ => Err(format!("expected `exhaustive` or `random:N`, got `{s}`")),
    }
}

/// A bad invocation; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Exit status of a completed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ok,
    Rejected,
}

impl Cli {
    fn protect(&self) -> ProtectMode {
        if self.mode == Some(ModeArg::Slh) || self.slh_only {
            ProtectMode::Slh
        } else {
            ProtectMode::Hardware
        }
    }

    fn v11(&self) -> bool {
        self.v11 || self.mode == Some(ModeArg::V11)
    }

    fn flow_mode(&self) -> Mode {
        Mode { spectre_v1_1: self.v11(), slh_only_cuts: self.protect() == ProtectMode::Slh }
    }

    fn emit(&self, report: Json, text: String) -> Result<()> {
        let text = if self.json { serde_json::to_string_pretty(&report)? + "\n" } else { text };
        match io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
            _ => Ok(()),
        }
    }
}

/// Reads `path`, falling back to the bundled program of the same name.
fn load(path: &str) -> Result<(String, Program)> {
    let (name, src) = match fs::read_to_string(path) {
        Ok(src) => (path.to_string(), src),
        Err(e) => match corpus::find(path) {
            Some(entry) => (entry.file_name(), entry.source.to_string()),
            None => return Err(Usage(format!("cannot read `{path}`: {e}")).into()),
        },
    };
    let p = parse_program(&src).with_context(|| format!("in {name}"))?;
    Ok((name, p))
}

fn value_json(v: &Value) -> Json {
    match v {
        Value::Nat(n) => json!(n),
        Value::Bool(b) => json!(b),
        Value::Array(a) => json!(a.name.as_ref()),
    }
}

fn mode_name(m: ProtectMode) -> &'static str {
    match m {
        ProtectMode::Hardware => "hw",
        ProtectMode::Slh => "slh",
    }
}

fn strings<T: ToString>(xs: impl IntoIterator<Item = T>) -> Vec<String> {
    xs.into_iter().map(|x| x.to_string()).collect()
}

fn braces(xs: &[String]) -> String {
    format!("{{{}}}", xs.join(", "))
}

fn violation_json(p: &Program, v: &Violation) -> Json {
    let pos = p.position(v.node);
    json!({
        "rule": v.rule,
        "line": pos.map(|p| p.line),
        "col": pos.map(|p| p.col),
        "message": v.msg,
    })
}

fn run_seq(cli: &Cli, path: &str) -> Result<Status> {
    let (_, p) = load(path)?;
    let out = run_sequential(&p.body, &p.initial_memory(), &p.vars, cli.budget)?;
    let trace = strings(&out.trace);
    let mut state = BTreeMap::new();
    for x in &p.policy.public_vars {
        if p.array(x).is_none() {
            state.insert(x.to_string(), value_json(&out.vars.get(x)));
        }
    }
    for a in p.arrays.iter().filter(|a| p.policy.public_arrays.contains(&a.name)) {
        let cells: Vec<Json> = (a.base..a.base + a.len).map(|n| value_json(&out.mem.read(n))).collect();
        state.insert(a.name.to_string(), Json::Array(cells));
    }
    let mut text = String::new();
    for o in &trace {
        writeln!(text, "{o}")?;
    }
    text.push_str("--\n");
    for (x, v) in &state {
        match v {
            Json::Array(cells) => writeln!(text, "{x} = [{}]", strings(cells).join(", "))?,
            v => writeln!(text, "{x} = {v}")?,
        }
    }
    cli.emit(json!({ "trace": trace, "failed": out.failed(), "public": state }), text)?;
    Ok(Status::Ok)
}

fn run_spec(cli: &Cli, path: &str, schedule: Option<&str>, random: Option<usize>) -> Result<Status> {
    let (_, p) = load(path)?;
    let mode = cli.protect();
    let start = Config::new(p.body.clone(), p.initial_memory(), p.vars.clone());
    let ds: Vec<Directive> = match (schedule, random) {
        (Some(file), _) => {
            let text = match fs::read_to_string(file) {
                Ok(t) => t,
                Err(_) if file == "ex1-attack" => corpus::EX1_ATTACK_SCHEDULE.to_string(),
                Err(e) => return Err(Usage(format!("cannot read `{file}`: {e}")).into()),
            };
            parse_schedule(&text).map_err(|e| anyhow::anyhow!("in {file}: {e}"))?
        }
        (None, Some(n)) => random_schedule(&start, mode, n, cli.budget, &mut ChaCha8Rng::seed_from_u64(cli.seed))?,
        (None, None) => sequential_schedule(&start, mode, cli.budget)?,
    };
    let (trace, stuck, terminal) = match run_schedule(&start, &ds, mode) {
        Ok(run) => (run.trace, None, run.config.is_terminal()),
        Err(e) => (e.trace.clone(), Some(e.to_string()), false),
    };
    let trace = strings(&trace);
    let mut text = String::new();
    for o in &trace {
        writeln!(text, "{o}")?;
    }
    let report = json!({
        "mode": mode_name(mode),
        "schedule": strings(&ds),
        "trace": trace,
        "terminal": terminal,
        "stuck": stuck,
    });
    cli.emit(report, text)?;
    match stuck {
        Some(msg) => {
            eprintln!("error: {msg}");
            Ok(Status::Rejected)
        }
        None => Ok(Status::Ok),
    }
}

fn check(cli: &Cli, path: &str, ct: bool, transient: bool) -> Result<Status> {
    let (_, p) = load(path)?;
    let both = !ct && !transient;
    let mut report = BTreeMap::new();
    let mut text = String::new();
    let mut rejected = false;
    let mut section = |name: &str, result: Result<(), Vec<Violation>>, text: &mut String| -> fmt::Result {
        let vs = result.err().unwrap_or_default();
        rejected |= !vs.is_empty();
        if vs.is_empty() {
            writeln!(text, "{name}: ok")?;
        }
        for v in &vs {
            writeln!(text, "{name}: {}", v.render(&p))?;
        }
        let list: Vec<Json> = vs.iter().map(|v| violation_json(&p, v)).collect();
        report.insert(name.to_string(), json!({ "ok": vs.is_empty(), "violations": list }));
        Ok(())
    };
    if ct || both {
        section("ct", typecheck_ct(&p.policy, &p.body), &mut text)?;
    }
    if transient || both {
        let fm = cli.flow_mode();
        let none = ProtectedSet::new();
        let env = propagate_env(&generate_constraints(&p.body, fm), &none, &p.var_universe());
        section("transient", typecheck_transient(&env, &none, &p.body, fm), &mut text)?;
    }
    cli.emit(json!(report), text)?;
    Ok(if rejected { Status::Rejected } else { Status::Ok })
}

fn infeasible(cli: &Cli, e: &CutError) -> Result<Status> {
    eprintln!("error: {e}");
    if cli.protect() == ProtectMode::Slh {
        eprintln!("hint: SLH cannot protect pointer reads; rerun with --mode=hw");
    }
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&json!({ "error": e.to_string() }))?);
    }
    Ok(Status::Rejected)
}

fn infer(cli: &Cli, path: &str, dot: bool) -> Result<Status> {
    let (_, p) = load(path)?;
    let g = DefUseGraph::new(&p.body, cli.flow_mode());
    let mc = match min_cut(&g) {
        Ok(mc) => mc,
        Err(e) => return infeasible(cli, &e),
    };
    let env = extract_env(&g.constraints, &mc.cut, &p.var_universe())?;
    let cut = strings(&mc.cut);
    let types: BTreeMap<String, String> = env.0.iter().map(|(x, t)| (x.to_string(), t.to_string())).collect();
    let text = if dot {
        g.to_dot(&mc.cut)
    } else {
        let mut s = format!("cut: {}\nflow: {}\n", braces(&cut), mc.flow);
        for (x, t) in &types {
            writeln!(s, "{x}: {t}")?;
        }
        s
    };
    let mut report = json!({ "cut": cut, "flow": mc.flow, "env": types });
    if dot {
        report["dot"] = json!(text);
    }
    cli.emit(report, text)?;
    Ok(Status::Ok)
}

fn graph(cli: &Cli, path: &str) -> Result<Status> {
    let (_, p) = load(path)?;
    let g = DefUseGraph::new(&p.body, cli.flow_mode());
    let dot = g.to_dot(&ProtectedSet::new());
    let edges: Vec<Json> = g.constraints.edges.iter().map(|(a, b)| json!([a.to_string(), b.to_string()])).collect();
    cli.emit(json!({ "candidates": strings(&g.candidates), "edges": edges, "dot": dot }), dot.clone())?;
    Ok(Status::Ok)
}

fn repair(cli: &Cli, path: &str) -> Result<Status> {
    let (_, p) = load(path)?;
    let mode = RepairMode { protect: cli.protect(), spectre_v1_1: cli.v11() };
    let r = match pipeline(&p, mode) {
        Ok(r) => r,
        Err(RepairError::Cut(e)) => return infeasible(cli, &e),
        Err(e) => return Err(e.into()),
    };
    let source = pretty_program(&r.program);
    let rep = &r.report;
    let mut text = String::new();
    writeln!(text, "// cut: {}", braces(&rep.cut))?;
    writeln!(text, "// inserted: {}", rep.inserted)?;
    writeln!(text, "// protect_count: {}", rep.protect_count)?;
    writeln!(text, "// baseline_count: {}", rep.baseline_count)?;
    writeln!(text, "// repaired_typechecks: {}", rep.repaired_typechecks)?;
    text.push_str(&source);
    let violations: Vec<Json> = r.violations.iter().map(|v| violation_json(&r.program, v)).collect();
    let report = json!({
        "mode": mode_name(mode.protect),
        "spectre_v1_1": mode.spectre_v1_1,
        "report": serde_json::to_value(rep)?,
        "program": source,
        "violations": violations,
    });
    cli.emit(report, text)?;
    for v in &r.violations {
        eprintln!("transient: {}", v.render(&r.program));
    }
    Ok(if rep.repaired_typechecks { Status::Ok } else { Status::Rejected })
}

fn fuzz_sct(cli: &Cli, path: &str, schedules: Schedules, pairs: usize) -> Result<Status> {
    let (_, p) = load(path)?;
    let mode = cli.protect();
    let opts = SctOptions { schedules, ..SctOptions::random(mode, 0, pairs, cli.seed) };
    let r = sct_fuzz(&p, opts)?;
    let mut text = String::new();
    let result = match (r.passed(), r.truncated) {
        (false, _) => "leak",
        (true, false) => "pass",
        (true, true) => "no leak within bounds",
    };
    writeln!(text, "result: {result}")?;
    writeln!(text, "mode: {}", mode_name(mode))?;
    writeln!(text, "trials: {}", r.trials)?;
    writeln!(text, "pairs: {}", r.pairs)?;
    writeln!(text, "truncated: {}", r.truncated)?;
    let mut report = json!({
        "mode": mode_name(mode),
        "passed": r.passed(),
        "trials": r.trials,
        "pairs": r.pairs,
        "truncated": r.truncated,
        "seed": cli.seed,
        "counterexample": null,
    });
    if let Some(cx) = &r.counterexample {
        writeln!(text, "pair: {}", cx.pair_index)?;
        writeln!(text, "divergence: {}", cx.divergence)?;
        for (title, items) in
            [("schedule", strings(&cx.schedule)), ("left", strings(&cx.left)), ("right", strings(&cx.right))]
        {
            writeln!(text, "{title}:")?;
            for i in items {
                writeln!(text, "  {i}")?;
            }
        }
        report["counterexample"] = json!({
            "pair": cx.pair_index,
            "divergence": cx.divergence.to_string(),
            "schedule": strings(&cx.schedule),
            "left": strings(&cx.left),
            "right": strings(&cx.right),
        });
    }
    cli.emit(report, text)?;
    Ok(if r.passed() { Status::Ok } else { Status::Rejected })
}

fn consistency(cli: &Cli, paths: &[String], schedules: usize, exhaustive: bool) -> Result<Status> {
    let programs: Vec<(String, Program)> = if paths.is_empty() {
        corpus::entries().iter().map(|e| Ok((e.file_name(), e.program()?))).collect::<Result<_>>()?
    } else {
        paths.iter().map(|x| load(x)).collect::<Result<_>>()?
    };
    let mode = cli.protect();
    let mut opts = ConsistencyOptions::new(mode, schedules, cli.seed);
    opts.seq_budget = cli.budget;
    if exhaustive {
        opts.exhaustive = Some(EnumLimits::default());
    }
    let r = consistency_suite(&programs, opts);
    let mut text = String::new();
    writeln!(text, "result: {}", if r.passed() { "pass" } else { "fail" })?;
    writeln!(text, "mode: {}", mode_name(mode))?;
    writeln!(text, "programs: {}", r.programs)?;
    writeln!(text, "schedules: {}", r.schedules)?;
    writeln!(text, "fully enumerated: {}", r.exhaustive.len())?;
    let mut failures = Vec::new();
    for f in &r.failures {
        let ds = strings(&f.schedule).join("; ");
        writeln!(text, "failure: {} (seed {}): {} [{ds}]", f.program, f.seed, f.reason)?;
        failures.push(
            json!({ "program": f.program, "seed": f.seed, "reason": f.reason, "schedule": strings(&f.schedule) }),
        );
    }
    let report = json!({
        "mode": mode_name(mode),
        "passed": r.passed(),
        "programs": r.programs,
        "schedules": r.schedules,
        "exhaustive": r.exhaustive,
        "failures": failures,
    });
    cli.emit(report, text)?;
    Ok(if r.passed() { Status::Ok } else { Status::Rejected })
}

/// The leading comment block, joined into one line.
fn summary(source: &str) -> String {
    let lines: Vec<&str> = source.lines().map_while(|l| l.strip_prefix("// ")).collect();
    lines.join(" ")
}

/// Every check a bundled program must pass.
fn validate(budget: usize, source: &str) -> Result<()> {
    let p = parse_program(source)?;
    static_check(&p)?;
    if let Some(x) = check_ssa(&p.body).violations.first() {
        anyhow::bail!("`{x}` is assigned more than once");
    }
    if let Err(vs) = typecheck_ct(&p.policy, &p.body) {
        anyhow::bail!("not constant time: {}", vs[0].render(&p));
    }
    run_sequential(&p.body, &p.initial_memory(), &p.vars, budget)?;
    Ok(())
}

fn corpus_cmd(cli: &Cli, action: &CorpusCmd) -> Result<Status> {
    match action {
        CorpusCmd::List => {
            let mut text = String::new();
            let mut list = Vec::new();
            for e in corpus::entries() {
                writeln!(text, "{:<20} {}", e.file_name(), summary(e.source))?;
                list.push(json!({ "name": e.name, "file": e.file_name(), "summary": summary(e.source) }));
            }
            cli.emit(json!({ "programs": list }), text)?;
            Ok(Status::Ok)
        }
        CorpusCmd::Validate => {
            let mut text = String::new();
            let mut list = Vec::new();
            let mut bad = false;
            for e in corpus::entries() {
                let res = validate(cli.budget, e.source);
                bad |= res.is_err();
                match &res {
                    Ok(()) => writeln!(text, "{}: ok", e.file_name())?,
                    Err(err) => writeln!(text, "{}: {err:#}", e.file_name())?,
                }
                list.push(
                    json!({ "file": e.file_name(), "ok": res.is_ok(), "error": res.err().map(|e| format!("{e:#}")) }),
                );
            }
            cli.emit(json!({ "programs": list }), text)?;
            Ok(if bad { Status::Rejected } else { Status::Ok })
        }
        CorpusCmd::Show { name } => {
            let e = corpus::find(name).ok_or_else(|| Usage(format!("no bundled program named `{name}`")))?;
            cli.emit(json!({ "file": e.file_name(), "source": e.source }), e.source.to_string())?;
            Ok(Status::Ok)
        }
    }
}

fn run(cli: &Cli) -> Result<Status> {
    match &cli.cmd {
        Cmd::RunSeq { program } => run_seq(cli, program),
        Cmd::RunSpec { program, schedule, seq: _, random } => run_spec(cli, program, schedule.as_deref(), *random),
        Cmd::Check { program, ct, transient } => check(cli, program, *ct, *transient),
        Cmd::Infer { program, dot } => infer(cli, program, *dot),
        Cmd::Graph { program, dot: _ } => graph(cli, program),
        Cmd::Repair { program } => repair(cli, program),
        Cmd::FuzzSct { program, schedules, pairs } => fuzz_sct(cli, program, *schedules, *pairs),
        Cmd::Consistency { programs, schedules, exhaustive } => consistency(cli, programs, *schedules, *exhaustive),
        Cmd::Corpus { action } => corpus_cmd(cli, action.as_ref().unwrap_or(&CorpusCmd::List)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Rejected) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<Usage>() { 2 } else { 1 })
        }
    }
}
