//! Differential drivers over the speculative machine: L-equivalent state
//! pairs, speculative constant-time fuzzing and consistency with the
//! sequential semantics.

mod consistency;
mod sct;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lang::{Memory, Policy, Program, Value, VarMap};
use crate::machine::{random_schedule, speculative_schedule, Config, Directive, ProtectMode, ScheduleError};

pub use consistency::{check_schedule, consistency_suite, ConsistencyFailure, ConsistencyOptions, ConsistencyReport};
pub use sct::{sct_fuzz, Counterexample, Divergence, Schedules, SctError, SctOptions, SctReport};

/// Memory and variable map of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub mem: Memory,
    pub vars: VarMap,
}

impl State {
    pub fn initial(p: &Program) -> State {
        State { mem: p.initial_memory(), vars: p.vars.clone() }
    }

    pub fn config(&self, p: &Program) -> Config {
        Config::new(p.body.clone(), self.mem.clone(), self.vars.clone())
    }
}

/// Two states that agree on everything the policy makes public.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePair {
    pub left: State,
    pub right: State,
    pub policy: Policy,
}

/// Ranges secret inputs are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    /// Secret array cells are drawn from `[0, cell_bound)`.
    pub cell_bound: u64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling { cell_bound: 1 << 16 }
    }
}

/// `≈L` on memories and variable maps: public variables agree, and public
/// arrays agree cell by cell.
pub fn l_equivalent(p: &Program, m1: &Memory, v1: &VarMap, m2: &Memory, v2: &VarMap) -> bool {
    let vars = p.policy.public_vars.iter().all(|x| v1.get(x) == v2.get(x));
    vars && p
        .arrays
        .iter()
        .filter(|a| p.policy.public_arrays.contains(&a.name))
        .all(|a| (a.base..a.base + a.len).all(|n| m1.read(n) == m2.read(n)))
}

fn sample_secrets(p: &Program, sampling: Sampling, rng: &mut ChaCha8Rng) -> State {
    let mut s = State::initial(p);
    for (x, v) in &p.vars.0 {
        if p.policy.public_vars.contains(x) {
            continue;
        }
        let fresh = match v {
            Value::Nat(_) => Value::Nat(rng.gen()),
            Value::Bool(_) => Value::Bool(rng.gen()),
            Value::Array(_) => continue,
        };
        s.vars.set(x.clone(), fresh);
    }
    for a in p.arrays.iter().filter(|a| !p.policy.public_arrays.contains(&a.name)) {
        // Cell 0 is the reserved dummy of masked loads and stays public.
        for n in (a.base..a.base + a.len).filter(|&n| n != 0) {
            s.mem.write(n, Value::Nat(rng.gen_range(0..sampling.cell_bound)));
        }
    }
    s
}

/// The `k`-th random schedule: even ones favour deep speculation, odd ones
/// are uniform walks. Both end with the in-order driver.
fn mixed_schedule(
    start: &Config,
    mode: ProtectMode,
    k: usize,
    max_prefix: usize,
    max_steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Directive>, ScheduleError> {
    let prefix = rng.gen_range(0..=max_prefix);
    if k.is_multiple_of(2) {
        speculative_schedule(start, mode, prefix, max_steps, rng)
    } else {
        random_schedule(start, mode, prefix, max_steps, rng)
    }
}

/// `count` L-equivalent pairs. Public inputs are the program's declared
/// ones; secret variables and secret array cells are drawn per side.
pub fn gen_lequiv_pairs(p: &Program, count: usize, seed: u64) -> Vec<StatePair> {
    gen_lequiv_pairs_with(p, count, seed, Sampling::default())
}

pub fn gen_lequiv_pairs_with(p: &Program, count: usize, seed: u64, sampling: Sampling) -> Vec<StatePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| StatePair {
            left: sample_secrets(p, sampling, &mut rng),
            right: sample_secrets(p, sampling, &mut rng),
            policy: p.policy.clone(),
        })
        .collect()
}
