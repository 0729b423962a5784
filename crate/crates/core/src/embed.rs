//! Admission of a specification by an execution.

use serde::Serialize;

use crate::error::EmbedError;
use crate::poset::{EventId, EventPoset};

/// Injective, label- and order-preserving map from spec events to
/// execution events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Embedding {
    /// `(spec event, execution event)` in spec topological order.
    pub pairs: Vec<(EventId, EventId)>,
}

impl Embedding {
    pub fn image(&self, spec_event: &EventId) -> Option<&EventId> {
        self.pairs
            .iter()
            .find(|(s, _)| s == spec_event)
            .map(|(_, e)| e)
    }
}

/// Searches for an embedding of `spec` into `exec`. The search is exhaustive;
/// the first embedding found (spec events in topological order, candidates by
/// id) is returned.
pub fn admits(spec: &EventPoset, exec: &EventPoset) -> Result<Option<Embedding>, EmbedError> {
    if let Some(e) = spec.events().iter().find(|e| e.label.is_adversary()) {
        return Err(EmbedError::AdversaryInSpec(e.id.clone()));
    }
    Ok(find_embedding(spec, exec).map(|map| Embedding {
        pairs: spec
            .topological_order()
            .into_iter()
            .map(|s| (spec.id(s).clone(), exec.id(map[s]).clone()))
            .collect(),
    }))
}

/// Index form of the search: `map[s]` is the execution event for spec event `s`.
pub(crate) fn find_embedding(spec: &EventPoset, exec: &EventPoset) -> Option<Vec<usize>> {
    let order = spec.topological_order();
    let mut by_id: Vec<usize> = (0..exec.len()).collect();
    by_id.sort_by(|&a, &b| exec.id(a).cmp(exec.id(b)));
    let candidates: Vec<Vec<usize>> = order
        .iter()
        .map(|&s| {
            by_id
                .iter()
                .copied()
                .filter(|&x| exec.label(x) == spec.label(s))
                .collect()
        })
        .collect();
    let mut map = vec![usize::MAX; spec.len()];
    let mut used = vec![false; exec.len()];
    if search(spec, exec, &order, &candidates, 0, &mut map, &mut used) {
        Some(map)
    } else {
        None
    }
}

fn search(
    spec: &EventPoset,
    exec: &EventPoset,
    order: &[usize],
    candidates: &[Vec<usize>],
    depth: usize,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let s = order[depth];
    for &x in &candidates[depth] {
        if used[x] {
            continue;
        }
        let consistent = spec.below(s).ones().all(|t| exec.precedes(map[t], x));
        if !consistent {
            continue;
        }
        map[s] = x;
        used[x] = true;
        if search(spec, exec, order, candidates, depth + 1, map, used) {
            return true;
        }
        used[x] = false;
        map[s] = usize::MAX;
    }
    false
}
