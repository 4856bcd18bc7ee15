use rand::Rng;
use thiserror::Error;

use super::{Config, Directive, Instr, Observation, ProtectMode, Stuck};
use crate::lang::{eval, Command, Value};

/// A configuration together with the executed flag of every buffer slot, so
/// that only valid schedules (each instruction executed at most once) apply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tracked {
    pub config: Config,
    pub executed: Vec<bool>,
}

impl Tracked {
    pub fn new(config: Config) -> Self {
        let executed = vec![false; config.buffer.len()];
        Tracked { config, executed }
    }

    /// Like [`Config::step`] but also rejects re-execution of a slot.
    pub fn step(&mut self, d: Directive, mode: ProtectMode) -> Result<Observation, Stuck> {
        if let Directive::Exec(n) = d {
            if self.executed.get(n.wrapping_sub(1)) == Some(&true) {
                return Err(Stuck::AlreadyExecuted(n));
            }
        }
        let before = self.config.buffer.len();
        let obs = self.config.step(d, mode)?;
        let buf = &self.config.buffer;
        match d {
            Directive::Fetch | Directive::FetchBranch(_) => {
                if buf.len() > before {
                    self.executed.push(false);
                }
            }
            Directive::Exec(n) => {
                self.executed.truncate(buf.len());
                // The first half of a protect leaves the slot executable.
                if !matches!(buf[n - 1], Instr::ProtectVal(..)) {
                    self.executed[n - 1] = true;
                }
            }
            Directive::Retire => {
                if buf.is_empty() {
                    self.executed.clear();
                } else {
                    self.executed.remove(0);
                }
            }
        }
        Ok(obs)
    }

    /// Every applicable directive with its successor, in the order fetch,
    /// fetch true, fetch false, exec 1..n, retire.
    pub fn successors(&self, mode: ProtectMode) -> Vec<(Directive, Tracked, Observation)> {
        let mut cands = vec![Directive::Fetch, Directive::FetchBranch(true), Directive::FetchBranch(false)];
        for (i, done) in self.executed.iter().enumerate() {
            if !done {
                cands.push(Directive::Exec(i + 1));
            }
        }
        cands.push(Directive::Retire);
        cands
            .into_iter()
            .filter_map(|d| {
                let mut next = self.clone();
                next.step(d, mode).ok().map(|o| (d, next, o))
            })
            .collect()
    }

    pub fn is_terminal(&self) -> bool {
        self.config.is_terminal()
    }
}

/// The result of running a schedule to its end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleRun {
    pub config: Config,
    pub trace: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("directive {index} (`{directive}`) is stuck: {reason}")]
pub struct ScheduleError {
    /// 0-based position in the schedule.
    pub index: usize,
    pub directive: Directive,
    pub reason: Stuck,
    /// Observations emitted before getting stuck.
    pub trace: Vec<Observation>,
}

/// Folds the directives over `start`. Re-executing a buffer slot counts as stuck.
pub fn run_schedule(start: &Config, ds: &[Directive], mode: ProtectMode) -> Result<ScheduleRun, ScheduleError> {
    let mut t = Tracked::new(start.clone());
    let mut trace = Vec::with_capacity(ds.len());
    for (index, &d) in ds.iter().enumerate() {
        match t.step(d, mode) {
            Ok(o) => trace.push(o),
            Err(reason) => return Err(ScheduleError { index, directive: d, reason, trace }),
        }
    }
    Ok(ScheduleRun { config: t.config, trace })
}

/// Next directive of the in-order driver, or `None` at a terminal configuration.
fn next_in_order(t: &Tracked) -> Result<Option<Directive>, Stuck> {
    let c = &t.config;
    let Some(head) = c.buffer.first() else {
        return Ok(match c.stack.peek() {
            None => None,
            Some(Command::If(e, _, _)) => match eval(e, &c.vars)? {
                Some(Value::Bool(b)) => Some(Directive::FetchBranch(b)),
                Some(v) => return Err(Stuck::Type("bool", v)),
                None => unreachable!("committed variable maps are total"),
            },
            Some(_) => Some(Directive::Fetch),
        });
    };
    Ok(Some(if head.can_retire() { Directive::Retire } else { Directive::Exec(1) }))
}

/// Runs `t` to a terminal configuration by executing and retiring the head of
/// the buffer, and fetching only into an empty buffer with the branch outcome
/// as prediction. Gives up after `max_steps` directives.
pub fn drain(
    t: &mut Tracked,
    mode: ProtectMode,
    max_steps: usize,
) -> Result<(Vec<Directive>, Vec<Observation>), ScheduleError> {
    let mut ds = Vec::new();
    let mut trace = Vec::new();
    loop {
        let d = match next_in_order(t) {
            Ok(Some(d)) => d,
            Ok(None) => return Ok((ds, trace)),
            Err(reason) => return Err(ScheduleError { index: ds.len(), directive: Directive::Fetch, reason, trace }),
        };
        if ds.len() == max_steps {
            return Err(ScheduleError { index: ds.len(), directive: d, reason: Stuck::Budget(max_steps), trace });
        }
        match t.step(d, mode) {
            Ok(o) => trace.push(o),
            Err(reason) => return Err(ScheduleError { index: ds.len(), directive: d, reason, trace }),
        }
        ds.push(d);
    }
}

/// The sequential schedule of `start`: every instruction is executed and
/// retired right after it is fetched and no branch is mispredicted.
pub fn sequential_schedule(
    start: &Config,
    mode: ProtectMode,
    max_steps: usize,
) -> Result<Vec<Directive>, ScheduleError> {
    let mut t = Tracked::new(start.clone());
    drain(&mut t, mode, max_steps).map(|(ds, _)| ds)
}

/// A random valid schedule: up to `prefix_len` uniformly chosen applicable
/// directives, completed by [`drain`].
pub fn random_schedule<R: Rng>(
    start: &Config,
    mode: ProtectMode,
    prefix_len: usize,
    max_steps: usize,
    rng: &mut R,
) -> Result<Vec<Directive>, ScheduleError> {
    let mut t = Tracked::new(start.clone());
    let mut ds = Vec::new();
    while ds.len() < prefix_len {
        let mut succ = t.successors(mode);
        if succ.is_empty() {
            break;
        }
        let (d, next, _) = succ.swap_remove(rng.gen_range(0..succ.len()));
        ds.push(d);
        t = next;
    }
    let (rest, _) = drain(&mut t, mode, max_steps.saturating_sub(ds.len())).map_err(|mut e| {
        e.index += ds.len();
        e
    })?;
    ds.extend(rest);
    Ok(ds)
}

/// A random valid schedule biased towards deep speculation: fetch up to
/// `max_fetch` instructions with random branch predictions, execute slots in
/// random or program order while mostly leaving guards unresolved, then
/// [`drain`].
pub fn speculative_schedule<R: Rng>(
    start: &Config,
    mode: ProtectMode,
    max_fetch: usize,
    max_steps: usize,
    rng: &mut R,
) -> Result<Vec<Directive>, ScheduleError> {
    let mut t = Tracked::new(start.clone());
    let mut ds = Vec::new();
    for _ in 0..rng.gen_range(0..=max_fetch) {
        let d = match t.step(Directive::Fetch, mode) {
            Ok(_) => Directive::Fetch,
            Err(Stuck::NeedsPrediction) => {
                let d = Directive::FetchBranch(rng.gen());
                if t.step(d, mode).is_err() {
                    break;
                }
                d
            }
            Err(_) => break,
        };
        ds.push(d);
    }
    let n = t.executed.len();
    // Either random picks or in-order sweeps, which follow data dependencies.
    let order: Vec<usize> = if rng.gen() {
        (0..rng.gen_range(0..=2 * n)).map(|_| rng.gen_range(0..n.max(1))).collect()
    } else {
        (0..rng.gen_range(1..=2)).flat_map(|_| 0..n).collect()
    };
    for i in order {
        if i >= t.executed.len() || t.executed[i] {
            continue;
        }
        let skip = if t.config.buffer[i].is_guard() { 0.75 } else { 0.2 };
        if rng.gen_bool(skip) {
            continue;
        }
        let d = Directive::Exec(i + 1);
        if t.step(d, mode).is_ok() {
            ds.push(d);
        }
    }
    let (rest, _) = drain(&mut t, mode, max_steps.saturating_sub(ds.len())).map_err(|mut e| {
        e.index += ds.len();
        e
    })?;
    ds.extend(rest);
    Ok(ds)
}

/// Bounds for [`enumerate_schedules`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumLimits {
    /// Longest schedule considered.
    pub max_len: usize,
    /// Stop after this many complete schedules.
    pub max_schedules: usize,
    /// Stop after visiting this many configurations.
    pub max_nodes: usize,
}

impl Default for EnumLimits {
    fn default() -> Self {
        EnumLimits { max_len: 40, max_schedules: 5000, max_nodes: 2_000_000 }
    }
}

/// Summary of an enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Enumeration {
    pub schedules: usize,
    pub nodes: usize,
    /// True when a schedule or node limit cut the search short.
    pub truncated: bool,
}

/// Depth-first enumeration of the complete valid schedules of `start` no
/// longer than `limits.max_len`. `visit` receives each schedule with its trace
/// and final configuration and returns `false` to stop early.
pub fn enumerate_schedules(
    start: &Config,
    mode: ProtectMode,
    limits: EnumLimits,
    visit: impl FnMut(&[Directive], &[Observation], &Config) -> bool,
) -> Enumeration {
    enumerate_from(&Tracked::new(start.clone()), mode, limits, visit)
}

/// [`enumerate_schedules`] from an intermediate state; schedules are relative to `start`.
pub fn enumerate_from(
    start: &Tracked,
    mode: ProtectMode,
    limits: EnumLimits,
    mut visit: impl FnMut(&[Directive], &[Observation], &Config) -> bool,
) -> Enumeration {
    struct Search<'v, V> {
        mode: ProtectMode,
        limits: EnumLimits,
        visit: &'v mut V,
        ds: Vec<Directive>,
        obs: Vec<Observation>,
        out: Enumeration,
        stop: bool,
    }

    impl<V: FnMut(&[Directive], &[Observation], &Config) -> bool> Search<'_, V> {
        fn go(&mut self, t: &Tracked) {
            if self.stop {
                return;
            }
            self.out.nodes += 1;
            if self.out.nodes > self.limits.max_nodes {
                self.out.truncated = true;
                self.stop = true;
                return;
            }
            if t.is_terminal() {
                self.out.schedules += 1;
                if !(self.visit)(&self.ds, &self.obs, &t.config) {
                    self.stop = true;
                } else if self.out.schedules >= self.limits.max_schedules {
                    self.out.truncated = true;
                    self.stop = true;
                }
                return;
            }
            if self.ds.len() == self.limits.max_len {
                return;
            }
            for (d, next, o) in t.successors(self.mode) {
                self.ds.push(d);
                self.obs.push(o);
                self.go(&next);
                self.ds.pop();
                self.obs.pop();
                if self.stop {
                    return;
                }
            }
        }
    }

    let mut s = Search {
        mode,
        limits,
        visit: &mut visit,
        ds: Vec::new(),
        obs: Vec::new(),
        out: Enumeration { schedules: 0, nodes: 0, truncated: false },
        stop: false,
    };
    s.go(start);
    s.out
}
