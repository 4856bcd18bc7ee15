use std::collections::BTreeSet;

use super::{Observation, PredId};
use crate::seq::SeqObs;

/// Drops the pending-id annotation. Silent and rollback observations have no
/// sequential counterpart.
pub fn erase(o: &Observation) -> Option<SeqObs> {
    match o {
        Observation::Read(n, _) => Some(SeqObs::Read(*n)),
        Observation::Write(n, _) => Some(SeqObs::Write(*n)),
        Observation::Fail(_) => Some(SeqObs::Fail),
        Observation::Silent | Observation::Rollback(_) => None,
    }
}

/// Silences rollbacks and every access issued under a guard that was
/// mispredicted or a fail that was retired, then erases ids and drops silent
/// observations.
pub fn filter_trace(trace: &[Observation]) -> Vec<SeqObs> {
    let squashed: BTreeSet<PredId> = trace
        .iter()
        .filter_map(|o| match o {
            Observation::Rollback(p) | Observation::Fail(p) => Some(*p),
            _ => None,
        })
        .collect();
    trace
        .iter()
        .filter(|o| match o {
            Observation::Read(_, ps) | Observation::Write(_, ps) => !ps.iter().any(|p| squashed.contains(p)),
            _ => true,
        })
        .filter_map(erase)
        .collect()
}

/// Equality up to permutation.
pub fn traces_equivalent(a: &[SeqObs], b: &[SeqObs]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    a == b
}
