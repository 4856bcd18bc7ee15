use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mixed_schedule;
use crate::lang::Program;
use crate::machine::{
    enumerate_schedules, filter_trace, run_schedule, traces_equivalent, Config, Directive, EnumLimits, Observation,
    ProtectMode,
};
use crate::seq::{run_sequential, SeqOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsistencyOptions {
    pub mode: ProtectMode,
    /// Random complete schedules per program.
    pub random: usize,
    pub seed: u64,
    pub max_prefix: usize,
    pub max_steps: usize,
    /// Also sweep every schedule when the program has at most
    /// `limits.max_schedules` of them.
    pub exhaustive: Option<EnumLimits>,
    pub seq_budget: usize,
}

impl ConsistencyOptions {
    pub fn new(mode: ProtectMode, random: usize, seed: u64) -> Self {
        ConsistencyOptions {
            mode,
            random,
            seed,
            max_prefix: 48,
            max_steps: 10_000,
            exhaustive: None,
            seq_budget: crate::seq::DEFAULT_BUDGET,
        }
    }
}

/// A schedule whose run disagrees with the sequential semantics. Replay with
/// the program, `schedule` and `seed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsistencyFailure {
    pub program: String,
    pub schedule: Vec<Directive>,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsistencyReport {
    pub programs: usize,
    pub schedules: usize,
    /// Programs whose whole schedule space was checked.
    pub exhaustive: Vec<String>,
    pub failures: Vec<ConsistencyFailure>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn compare(seq: &SeqOutcome, conf: &Config, trace: &[Observation]) -> Result<(), String> {
    if !conf.is_terminal() {
        return Err("schedule ends in a non-terminal configuration".into());
    }
    if conf.mem != seq.mem {
        return Err("final memory differs from the sequential run".into());
    }
    if conf.vars.without_temporaries() != seq.vars.without_temporaries() {
        return Err("final variables differ from the sequential run".into());
    }
    let filtered = filter_trace(trace);
    if !traces_equivalent(&filtered, &seq.trace) {
        return Err(format!("filtered trace {filtered:?} is not a permutation of {:?}", seq.trace));
    }
    Ok(())
}

/// Runs `ds` from the initial state of `p` and compares it with `seq`.
pub fn check_schedule(p: &Program, mode: ProtectMode, ds: &[Directive], seq: &SeqOutcome) -> Result<(), String> {
    let run = run_schedule(&Config::new(p.body.clone(), p.initial_memory(), p.vars.clone()), ds, mode)
        .map_err(|e| e.to_string())?;
    compare(seq, &run.config, &run.trace)
}

/// Checks every program against its sequential run on random (and, when
/// small enough, all) complete valid schedules.
pub fn consistency_suite(programs: &[(String, Program)], opts: ConsistencyOptions) -> ConsistencyReport {
    let mut report = ConsistencyReport { programs: programs.len(), ..Default::default() };
    for (k, (name, p)) in programs.iter().enumerate() {
        let seed = opts.seed.wrapping_add(k as u64);
        let fail = |schedule: Vec<Directive>, reason: String| ConsistencyFailure {
            program: name.clone(),
            schedule,
            seed,
            reason,
        };
        let seq = match run_sequential(&p.body, &p.initial_memory(), &p.vars, opts.seq_budget) {
            Ok(s) => s,
            Err(e) => {
                report.failures.push(fail(Vec::new(), format!("sequential run: {e}")));
                continue;
            }
        };
        let start = Config::new(p.body.clone(), p.initial_memory(), p.vars.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..opts.random {
            report.schedules += 1;
            match mixed_schedule(&start, opts.mode, i, opts.max_prefix, opts.max_steps, &mut rng) {
                Ok(ds) => {
                    if let Err(reason) = check_schedule(p, opts.mode, &ds, &seq) {
                        report.failures.push(fail(ds, reason));
                    }
                }
                Err(e) => report.failures.push(fail(Vec::new(), format!("random schedule: {e}"))),
            }
        }
        if let Some(limits) = opts.exhaustive {
            let mut failures = Vec::new();
            let e = enumerate_schedules(&start, opts.mode, limits, |ds, trace, conf| {
                if let Err(reason) = compare(&seq, conf, trace) {
                    failures.push(fail(ds.to_vec(), reason));
                }
                true
            });
            report.schedules += e.schedules;
            report.failures.extend(failures);
            if !e.truncated {
                report.exhaustive.push(name.clone());
            }
        }
    }
    report
}
