use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{gen_lequiv_pairs_with, l_equivalent, mixed_schedule, Sampling, StatePair};
use crate::lang::Program;
use crate::machine::{
    run_schedule, Config, Directive, EnumLimits, Observation, ProtectMode, ScheduleError, Stuck, Tracked,
};

/// How schedules are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedules {
    /// Every valid schedule up to the limits, per pair, in lockstep.
    Exhaustive(EnumLimits),
    /// This many random schedules per pair.
    Random(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SctOptions {
    pub mode: ProtectMode,
    pub schedules: Schedules,
    pub pairs: usize,
    pub seed: u64,
    /// Longest schedule a random run may need to finish.
    pub max_steps: usize,
    /// Random schedules fetch or take up to this many directives before draining.
    pub max_prefix: usize,
    pub sampling: Sampling,
}

impl SctOptions {
    pub fn random(mode: ProtectMode, schedules: usize, pairs: usize, seed: u64) -> Self {
        SctOptions {
            mode,
            schedules: Schedules::Random(schedules),
            pairs,
            seed,
            max_steps: 10_000,
            max_prefix: 48,
            sampling: Sampling::default(),
        }
    }

    pub fn exhaustive(mode: ProtectMode, limits: EnumLimits, pairs: usize, seed: u64) -> Self {
        SctOptions { schedules: Schedules::Exhaustive(limits), ..Self::random(mode, 0, pairs, seed) }
    }
}

/// How the two runs of a pair came apart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Divergence {
    /// The observations at `index` differ.
    Observation { index: usize },
    /// The directive at `index` applies on one side only.
    Stuck { index: usize, left: Option<Stuck>, right: Option<Stuck> },
    /// Both runs finished with equal traces but public final states differ.
    Final,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |s: &Option<Stuck>| s.as_ref().map_or("ok".to_string(), |s| format!("stuck ({s})"));
        match self {
            Divergence::Observation { index } => write!(f, "observations differ at step {index}"),
            Divergence::Stuck { index, left, right } => {
                write!(f, "step {index} is {} on the left and {} on the right", side(left), side(right))
            }
            Divergence::Final => f.write_str("final states are not L-equivalent"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    /// Directives up to and including the diverging one.
    pub schedule: Vec<Directive>,
    pub pair_index: usize,
    pub pair: StatePair,
    pub left: Vec<Observation>,
    pub right: Vec<Observation>,
    pub divergence: Divergence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SctReport {
    /// Number of (schedule, pair) runs compared.
    pub trials: usize,
    pub pairs: usize,
    /// An exhaustive sweep hit its limits.
    pub truncated: bool,
    pub counterexample: Option<Counterexample>,
}

impl SctReport {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SctError {
    #[error("random schedule for pair {pair} did not finish: {source}")]
    Schedule {
        pair: usize,
        #[source]
        source: ScheduleError,
    },
}

/// Runs the program on both sides of L-equivalent pairs under identical
/// schedules and returns the first divergence, if any.
pub fn sct_fuzz(p: &Program, opts: SctOptions) -> Result<SctReport, SctError> {
    let pairs = gen_lequiv_pairs_with(p, opts.pairs, opts.seed, opts.sampling);
    let mut report = SctReport { trials: 0, pairs: pairs.len(), truncated: false, counterexample: None };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5c7f_0dd5_eed5_a11e);
    for (i, pair) in pairs.iter().enumerate() {
        let found = match opts.schedules {
            Schedules::Exhaustive(limits) => {
                let (found, trials, truncated) = lockstep(p, pair, opts.mode, limits);
                report.trials += trials;
                report.truncated |= truncated;
                found
            }
            Schedules::Random(n) => {
                let mut found = None;
                let left = pair.left.config(p);
                for k in 0..n {
                    let ds = mixed_schedule(&left, opts.mode, k, opts.max_prefix, opts.max_steps, &mut rng)
                        .map_err(|source| SctError::Schedule { pair: i, source })?;
                    report.trials += 1;
                    if let Some(f) = replay(p, pair, opts.mode, &ds) {
                        found = Some(f);
                        break;
                    }
                }
                found
            }
        };
        if let Some((schedule, left, right, divergence)) = found {
            report.counterexample =
                Some(Counterexample { schedule, pair_index: i, pair: pair.clone(), left, right, divergence });
            break;
        }
    }
    Ok(report)
}

type Found = (Vec<Directive>, Vec<Observation>, Vec<Observation>, Divergence);

/// Runs one schedule on both sides.
fn replay(p: &Program, pair: &StatePair, mode: ProtectMode, ds: &[Directive]) -> Option<Found> {
    let l = run_schedule(&pair.left.config(p), ds, mode);
    let r = run_schedule(&pair.right.config(p), ds, mode);
    match (l, r) {
        (Ok(l), Ok(r)) => {
            if let Some(index) = l.trace.iter().zip(&r.trace).position(|(a, b)| a != b) {
                let cut = index + 1;
                return Some((
                    ds[..cut].to_vec(),
                    l.trace[..cut].to_vec(),
                    r.trace[..cut].to_vec(),
                    Divergence::Observation { index },
                ));
            }
            let (lc, rc) = (&l.config, &r.config);
            (!l_equivalent(p, &lc.mem, &lc.vars, &rc.mem, &rc.vars))
                .then(|| (ds.to_vec(), l.trace, r.trace, Divergence::Final))
        }
        (Err(e), Err(f)) if e.index == f.index && e.trace == f.trace => None,
        (l, r) => {
            let (lt, le) = split(l);
            let (rt, re) = split(r);
            let index = le.as_ref().map_or(usize::MAX, |e| e.index).min(re.as_ref().map_or(usize::MAX, |e| e.index));
            if let Some(i) = lt.iter().zip(&rt).take(index).position(|(a, b)| a != b) {
                return Some((
                    ds[..=i].to_vec(),
                    lt[..=i].to_vec(),
                    rt[..=i].to_vec(),
                    Divergence::Observation { index: i },
                ));
            }
            let reason = |e: Option<ScheduleError>| e.filter(|e| e.index == index).map(|e| e.reason);
            Some((
                ds[..=index].to_vec(),
                lt[..index.min(lt.len())].to_vec(),
                rt[..index.min(rt.len())].to_vec(),
                Divergence::Stuck { index, left: reason(le), right: reason(re) },
            ))
        }
    }
}

fn split(r: Result<crate::machine::ScheduleRun, ScheduleError>) -> (Vec<Observation>, Option<ScheduleError>) {
    match r {
        Ok(run) => (run.trace, None),
        Err(e) => (e.trace.clone(), Some(e)),
    }
}

/// Depth-first search over the directives valid on either side.
fn lockstep(p: &Program, pair: &StatePair, mode: ProtectMode, limits: EnumLimits) -> (Option<Found>, usize, bool) {
    struct Search<'a> {
        p: &'a Program,
        mode: ProtectMode,
        limits: EnumLimits,
        ds: Vec<Directive>,
        left: Vec<Observation>,
        right: Vec<Observation>,
        nodes: usize,
        schedules: usize,
        truncated: bool,
        found: Option<Found>,
    }

    impl Search<'_> {
        fn done(&self) -> bool {
            self.found.is_some() || self.truncated
        }

        fn report(&mut self, d: Directive, divergence: Divergence) {
            let mut ds = self.ds.clone();
            ds.push(d);
            self.found = Some((ds, self.left.clone(), self.right.clone(), divergence));
        }

        fn go(&mut self, l: &Tracked, r: &Tracked) {
            self.nodes += 1;
            if self.nodes > self.limits.max_nodes {
                self.truncated = true;
                return;
            }
            if l.is_terminal() && r.is_terminal() {
                self.schedules += 1;
                let (lc, rc): (&Config, &Config) = (&l.config, &r.config);
                if !l_equivalent(self.p, &lc.mem, &lc.vars, &rc.mem, &rc.vars) {
                    self.found = Some((self.ds.clone(), self.left.clone(), self.right.clone(), Divergence::Final));
                } else if self.schedules >= self.limits.max_schedules {
                    self.truncated = true;
                }
                return;
            }
            if self.ds.len() == self.limits.max_len {
                return;
            }
            let slots = l.executed.len().max(r.executed.len());
            let pending = |t: &Tracked, i: usize| t.executed.get(i) == Some(&false);
            let mut cands = vec![Directive::Fetch, Directive::FetchBranch(true), Directive::FetchBranch(false)];
            cands.extend((0..slots).filter(|&i| pending(l, i) || pending(r, i)).map(|i| Directive::Exec(i + 1)));
            cands.push(Directive::Retire);
            for d in cands {
                let index = self.ds.len();
                let (mut l2, mut r2) = (l.clone(), r.clone());
                match (l2.step(d, self.mode), r2.step(d, self.mode)) {
                    (Err(_), Err(_)) => continue,
                    (Ok(a), Ok(b)) => {
                        self.left.push(a.clone());
                        self.right.push(b.clone());
                        if a != b {
                            self.ds.push(d);
                            self.found = Some((
                                self.ds.clone(),
                                self.left.clone(),
                                self.right.clone(),
                                Divergence::Observation { index },
                            ));
                            return;
                        }
                        self.ds.push(d);
                        self.go(&l2, &r2);
                        self.ds.pop();
                        self.left.pop();
                        self.right.pop();
                    }
                    (a, b) => {
                        self.report(d, Divergence::Stuck { index, left: a.err(), right: b.err() });
                    }
                }
                if self.done() {
                    return;
                }
            }
        }
    }

    let mut s = Search {
        p,
        mode,
        limits,
        ds: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
        nodes: 0,
        schedules: 0,
        truncated: false,
        found: None,
    };
    s.go(&Tracked::new(pair.left.config(p)), &Tracked::new(pair.right.config(p)));
    (s.found, s.schedules, s.truncated)
}
