//! Quote bundles: extracting the measurement specification a bundle
//! attests to, the extension substructure behind it, the assumptions on
//! regular components, and the joint-strategy verdict.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;

use crate::embed::{admits, Embedding};
use crate::error::{BundleError, SemanticsError};
use crate::measurement::{full_support, measures_bottom_up};
use crate::model::{tpm_key, AttestationSystem, ObjectId, PcrId};
use crate::poset::{Event, EventId, EventLabel, EventPoset};
use crate::semantics::{CorruptionState, Semantics};
use crate::term::{seq_view, SeqView, Term};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct QuoteBundle {
    pub quotes: Vec<Term>,
}

impl QuoteBundle {
    pub fn new(quotes: Vec<Term>) -> QuoteBundle {
        QuoteBundle { quotes }
    }
}

/// A quote taken apart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuote {
    pub term: Term,
    pub nonce: Term,
    pub pcrs: Vec<PcrId>,
    /// Reported register contents, one per pcr.
    pub values: Vec<Term>,
}

fn pcr_list(t: &Term) -> Option<Vec<PcrId>> {
    let mut out = Vec::new();
    let mut cur = t;
    loop {
        match cur {
            Term::Public(name) => {
                out.push(name.parse().ok()?);
                return Some(out);
            }
            Term::Pair(head, rest) => match &**head {
                Term::Public(name) => {
                    out.push(name.parse().ok()?);
                    cur = rest;
                }
                _ => return None,
            },
            _ => return None,
        }
    }
}

/// Reads `t` as a quote signed by a TPM of `sys`. `None` when it is not one.
pub fn parse_quote(t: &Term, sys: &AttestationSystem) -> Option<ParsedQuote> {
    let Term::Sig(payload, key) = t else {
        return None;
    };
    let Term::Pair(nonce, rest) = &**payload else {
        return None;
    };
    let Term::Pair(pcrs_t, values_t) = &**rest else {
        return None;
    };
    let pcrs = pcr_list(pcrs_t)?;
    let tpm = pcrs[0].tpm.clone();
    if pcrs.iter().any(|p| p.tpm != tpm || !sys.has_pcr(p)) || **key != tpm_key(&tpm) {
        return None;
    }
    let values = values_t.untuple(pcrs.len())?;
    Some(ParsedQuote {
        term: t.clone(),
        nonce: (**nonce).clone(),
        pcrs,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Origin {
    /// 1-based index into [`ExtractedSpec::quotes`].
    pub quote: usize,
    pub pcr: PcrId,
    /// 1-based position in the register's chain.
    pub position: usize,
    pub value: Term,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Duplicate {
    pub kept: EventId,
    pub merged: EventId,
}

#[derive(Debug, Clone)]
pub struct ExtractedSpec {
    pub spec: EventPoset,
    pub origin: BTreeMap<EventId, Origin>,
    /// Quotes of the bundle followed by nested quotes discovered in chains.
    pub quotes: Vec<Term>,
    pub duplicates: Vec<Duplicate>,
    pub notes: Vec<String>,
    /// Some reported chain contains a bad measurement value.
    pub indicates_corruption: bool,
}

/// Builds `S(Q)`.
pub fn extract_specification(
    sys: &AttestationSystem,
    bundle: &QuoteBundle,
) -> Result<ExtractedSpec, BundleError> {
    let mut quotes: Vec<ParsedQuote> = Vec::new();
    let mut seen: HashMap<Term, usize> = HashMap::new();
    for t in &bundle.quotes {
        if seen.contains_key(t) {
            continue;
        }
        let q = parse_quote(t, sys).ok_or_else(|| BundleError::NotAQuote(t.clone()))?;
        seen.insert(t.clone(), quotes.len());
        quotes.push(q);
    }
    let mut notes = Vec::new();
    let mut views: Vec<Vec<SeqView>> = Vec::new();
    let mut qi = 0;
    while qi < quotes.len() {
        let mut qviews = Vec::new();
        for value in quotes[qi].values.clone() {
            let view = seq_view(&value).ok_or_else(|| BundleError::MalformedChain {
                quote: qi + 1,
                value: value.clone(),
            })?;
            for v in &view.values {
                if !matches!(v, Term::Sig(..)) || seen.contains_key(v) {
                    continue;
                }
                match parse_quote(v, sys) {
                    Some(nested) => {
                        seen.insert(v.clone(), quotes.len());
                        quotes.push(nested);
                    }
                    None => notes.push(format!("opaque signature {v} in quote {} ignored", qi + 1)),
                }
            }
            qviews.push(view);
        }
        views.push(qviews);
        qi += 1;
    }

    let mut events: Vec<Event> = Vec::new();
    let mut origin = BTreeMap::new();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); quotes.len()];
    let mut att: BTreeMap<Term, usize> = BTreeMap::new();
    let mut indicates_corruption = false;
    for (qi, q) in quotes.iter().enumerate() {
        let Term::Nonce(name) = &q.nonce else {
            return Err(BundleError::InputNotNonce {
                quote: qi + 1,
                input: q.nonce.clone(),
            });
        };
        let a = *att.entry(q.nonce.clone()).or_insert_with(|| {
            events.push(Event::new(
                format!("att:{name}"),
                EventLabel::AttStart(q.nonce.clone()),
            ));
            events.len() - 1
        });
        members[qi].push(a);
    }
    // (event, quote, pcr slot, position) for every measurement event.
    let mut placed: Vec<(usize, usize, usize, usize)> = Vec::new();
    for (qi, q) in quotes.iter().enumerate() {
        for (slot, (pcr, view)) in q.pcrs.iter().zip(&views[qi]).enumerate() {
            for (k, v) in view.values.iter().enumerate() {
                if let Some((target, good)) = sys.value_owner(v) {
                    indicates_corruption |= !good;
                    let candidates: Vec<ObjectId> = sys
                        .measurers_of(target)
                        .into_iter()
                        .filter(|o1| sys.may_extend(o1, pcr))
                        .collect();
                    let by = match candidates.len() {
                        0 => {
                            return Err(BundleError::Extraction {
                                quote: qi + 1,
                                pcr: pcr.clone(),
                                target: target.clone(),
                                value: v.clone(),
                            })
                        }
                        1 => candidates[0].clone(),
                        _ => {
                            return Err(BundleError::Ambiguous {
                                quote: qi + 1,
                                pcr: pcr.clone(),
                                target: target.clone(),
                                candidates,
                            })
                        }
                    };
                    let id = EventId::new(format!("Q{}:{}:{}", qi + 1, pcr, k + 1));
                    origin.insert(
                        id.clone(),
                        Origin {
                            quote: qi + 1,
                            pcr: pcr.clone(),
                            position: k + 1,
                            value: v.clone(),
                        },
                    );
                    events.push(Event {
                        id,
                        label: EventLabel::Meas {
                            by,
                            target: target.clone(),
                        },
                    });
                    let e = events.len() - 1;
                    members[qi].push(e);
                    placed.push((e, qi, slot, k));
                } else if !seen.contains_key(v) && !matches!(v, Term::Sig(..)) {
                    notes.push(format!(
                        "value {v} in quote {} is not a measurement value; ignored",
                        qi + 1
                    ));
                }
            }
        }
    }
    let mut edges = Vec::new();
    for &(e, qi, slot, k) in &placed {
        for earlier in &views[qi][slot].values[..k] {
            if let Some(&qj) = seen.get(earlier) {
                edges.extend(members[qj].iter().map(|&m| (m, e)));
            }
        }
    }
    let spec = EventPoset::from_parts(events, edges).expect("nested quotes are strictly smaller");
    let (spec, duplicates) = merge_duplicates(spec);
    for d in &duplicates {
        origin.remove(&d.merged);
    }
    Ok(ExtractedSpec {
        spec,
        origin,
        quotes: quotes.into_iter().map(|q| q.term).collect(),
        duplicates,
        notes,
        indicates_corruption,
    })
}

/// Drops events that repeat an earlier event's label with the same
/// predecessors and successors.
fn merge_duplicates(p: EventPoset) -> (EventPoset, Vec<Duplicate>) {
    let n = p.len();
    let above = |i: usize| -> Vec<usize> { (0..n).filter(|&j| p.precedes(i, j)).collect() };
    let mut dropped = vec![false; n];
    let mut dups = Vec::new();
    for i in 0..n {
        if dropped[i] {
            continue;
        }
        for j in i + 1..n {
            if !dropped[j]
                && p.label(i) == p.label(j)
                && p.below(i) == p.below(j)
                && above(i) == above(j)
            {
                dropped[j] = true;
                dups.push(Duplicate {
                    kept: p.id(i).clone(),
                    merged: p.id(j).clone(),
                });
            }
        }
    }
    if dups.is_empty() {
        return (p, dups);
    }
    let merged: BTreeSet<EventId> = dups.iter().map(|d| d.merged.clone()).collect();
    (p.restrict(|e| !merged.contains(&e.id)), dups)
}

pub fn complies_with_strategy(
    sys: &AttestationSystem,
    bundle: &QuoteBundle,
) -> Result<bool, BundleError> {
    let x = extract_specification(sys, bundle)?;
    Ok(measures_bottom_up(&x.spec, sys))
}

/// Keeps only the orderings that give support: `e_i < e_j` survives when
/// both are measurements and `e_i` supports `e_j`. Attestation starts stay
/// as unordered events.
pub fn core_of(spec: &EventPoset, sys: &AttestationSystem) -> Result<EventPoset, BundleError> {
    prune(spec, sys, false)
}

/// Like [`core_of`] but also keeps every ordering that involves an
/// attestation start.
pub fn core_keeping_att_start(
    spec: &EventPoset,
    sys: &AttestationSystem,
) -> Result<EventPoset, BundleError> {
    prune(spec, sys, true)
}

fn prune(
    spec: &EventPoset,
    sys: &AttestationSystem,
    keep_att: bool,
) -> Result<EventPoset, BundleError> {
    if !measures_bottom_up(spec, sys) {
        return Err(BundleError::NotBottomUp);
    }
    let mut edges = Vec::new();
    for (i, j) in spec.order_pairs() {
        let keep = match (spec.label(i), spec.label(j)) {
            (EventLabel::Meas { .. }, EventLabel::Meas { .. }) => full_support(spec, j, sys)
                .map(|s| s.contains(&i))
                .unwrap_or(false),
            _ => keep_att,
        };
        if keep {
            edges.push((i, j));
        }
    }
    Ok(EventPoset::from_parts(spec.events().to_vec(), edges).expect("sub-relation of an order"))
}

/// Quote events of `exec` producing each quote of `quotes`.
fn producers(sem: &Semantics<'_>, quotes: &[Term]) -> Result<Vec<usize>, BundleError> {
    let p = sem.poset();
    quotes
        .iter()
        .map(|q| {
            (0..p.len())
                .find(|&e| p.label(e).is_quote() && sem.output(e) == Some(q))
                .ok_or_else(|| BundleError::NotProduced(q.clone()))
        })
        .collect()
}

/// Extend events recording the measurement values of `quotes`, by index.
fn recorders(sem: &Semantics<'_>, quotes: &[Term]) -> Result<BTreeSet<usize>, BundleError> {
    let sys = sem.system();
    let p = sem.poset();
    let mut out = BTreeSet::new();
    for (q, e) in quotes.iter().zip(producers(sem, quotes)?) {
        let EventLabel::Quote { pcrs, .. } = p.label(e) else {
            unreachable!("producer is a quote event")
        };
        let parsed = parse_quote(q, sys).ok_or_else(|| BundleError::NotAQuote(q.clone()))?;
        for (pcr, value) in pcrs.iter().zip(&parsed.values) {
            let view = seq_view(value).ok_or_else(|| BundleError::MalformedChain {
                quote: 0,
                value: value.clone(),
            })?;
            let prior = sem.prior_extends(e, pcr);
            for (k, v) in view.values.iter().enumerate() {
                if sys.value_owner(v).is_none() {
                    continue;
                }
                let rec = prior
                    .get(k)
                    .copied()
                    .filter(|&x| matches!(p.label(x), EventLabel::Ext { value, .. } if value == v));
                match rec {
                    Some(x) => {
                        out.insert(x);
                    }
                    None => {
                        return Err(BundleError::MissingRecorder {
                            pcr: pcr.clone(),
                            value: v.clone(),
                        })
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The extend events recording every measurement value reported in the
/// bundle (nested quotes included).
pub fn extension_substructure(
    exec: &EventPoset,
    bundle: &QuoteBundle,
    sys: &AttestationSystem,
) -> Result<BTreeSet<EventId>, BundleError> {
    let sem = Semantics::new(sys, exec)?;
    let x = extract_specification(sys, bundle)?;
    Ok(recorders(&sem, &x.quotes)?
        .into_iter()
        .map(|i| exec.id(i).clone())
        .collect())
}

fn extend_well_supported(exec: &EventPoset, e: usize, sys: &AttestationSystem) -> bool {
    let EventLabel::Ext { by, value, .. } = exec.label(e) else {
        return true;
    };
    if by == sys.rtm() {
        return true;
    }
    let Some((target, _)) = sys.value_owner(value) else {
        return true;
    };
    let t = sys.object_index(target).expect("owner is an object");
    sys.dependency_indices(t, 1).ones().all(|o| {
        let obj = &sys.objects()[o];
        exec.below(e).ones().any(|x| match exec.label(x) {
            EventLabel::Ext { value: v, .. } => {
                matches!(sys.value_owner(v), Some((owner, _)) if owner == obj)
            }
            _ => false,
        })
    })
}

pub fn extends_bottom_up(
    exec: &EventPoset,
    x: &BTreeSet<EventId>,
    sys: &AttestationSystem,
) -> bool {
    x.iter().all(|id| match exec.index_of(id) {
        Some(e) => extend_well_supported(exec, e, sys),
        None => false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssumptionViolation {
    /// A regular extender reports a value it never measured.
    PriorMeasMissing {
        extend: EventId,
        extender: ObjectId,
        target: ObjectId,
    },
    /// The latest measurement before the extend produced another value.
    PriorMeasWrongValue {
        extend: EventId,
        measurement: EventId,
        output: Term,
        value: Term,
    },
    /// A dependency was measured but the extender did not remeasure after it.
    FreshMeas {
        measurement: EventId,
        extend: EventId,
        extender: ObjectId,
        target: ObjectId,
    },
}

impl AssumptionViolation {
    pub fn assumption(&self) -> &'static str {
        match self {
            AssumptionViolation::PriorMeasMissing { .. }
            | AssumptionViolation::PriorMeasWrongValue { .. } => "prior-meas",
            AssumptionViolation::FreshMeas { .. } => "fresh-meas",
        }
    }
}

impl fmt::Display for AssumptionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssumptionViolation::PriorMeasMissing {
                extend,
                extender,
                target,
            } => write!(
                f,
                "prior-meas: `{extend}` extends a value of `{target}` but `{extender}` never measured it before"
            ),
            AssumptionViolation::PriorMeasWrongValue {
                extend,
                measurement,
                output,
                value,
            } => write!(
                f,
                "prior-meas: `{extend}` extends {value} but the latest measurement `{measurement}` output {output}"
            ),
            AssumptionViolation::FreshMeas {
                measurement,
                extend,
                extender,
                target,
            } => write!(
                f,
                "fresh-meas: no meas {extender} {target} between `{measurement}` and `{extend}`"
            ),
        }
    }
}

fn measurements_of<'p>(
    p: &'p EventPoset,
    by: &'p ObjectId,
    target: &'p ObjectId,
) -> impl Iterator<Item = usize> + 'p {
    (0..p.len()).filter(move |&i| {
        matches!(p.label(i), EventLabel::Meas { by: b, target: t } if b == by && t == target)
    })
}

pub(crate) fn prior_meas_violations(sem: &Semantics<'_>) -> Vec<AssumptionViolation> {
    let p = sem.poset();
    let sys = sem.system();
    let mut out = Vec::new();
    for e in 0..p.len() {
        let EventLabel::Ext { by, value, .. } = p.label(e) else {
            continue;
        };
        let Some((target, _)) = sys.value_owner(value) else {
            continue;
        };
        let o = sys.object_index(by).expect("validated");
        if sem.state_at(e, o) != CorruptionState::Regular {
            continue;
        }
        let prior: Vec<usize> = measurements_of(p, by, target)
            .filter(|&m| p.precedes(m, e))
            .collect();
        if prior.is_empty() {
            out.push(AssumptionViolation::PriorMeasMissing {
                extend: p.id(e).clone(),
                extender: by.clone(),
                target: target.clone(),
            });
            continue;
        }
        for &m in &prior {
            let latest = prior.iter().all(|&x| x == m || !p.precedes(m, x));
            let output = sem.output(m).expect("measurements have outputs");
            if latest && output != value {
                out.push(AssumptionViolation::PriorMeasWrongValue {
                    extend: p.id(e).clone(),
                    measurement: p.id(m).clone(),
                    output: output.clone(),
                    value: value.clone(),
                });
            }
        }
    }
    out
}

pub(crate) fn fresh_meas_violations(sem: &Semantics<'_>) -> Vec<AssumptionViolation> {
    let p = sem.poset();
    let sys = sem.system();
    let mut out = Vec::new();
    for e in 0..p.len() {
        let EventLabel::Ext { by, value, .. } = p.label(e) else {
            continue;
        };
        let Some((target, _)) = sys.value_owner(value) else {
            continue;
        };
        let o = sys.object_index(by).expect("validated");
        if sem.state_at(e, o) == CorruptionState::Corrupt {
            continue;
        }
        let t = sys.object_index(target).expect("owner is an object");
        let d1 = sys.dependency_indices(t, 1);
        let remeasures: Vec<usize> = measurements_of(p, by, target).collect();
        for m in p.below(e).ones() {
            let EventLabel::Meas { target: o1, .. } = p.label(m) else {
                continue;
            };
            if !d1.contains(sys.object_index(o1).expect("validated")) {
                continue;
            }
            let fresh = remeasures
                .iter()
                .any(|&r| p.precedes(m, r) && p.precedes(r, e));
            if !fresh {
                out.push(AssumptionViolation::FreshMeas {
                    measurement: p.id(m).clone(),
                    extend: p.id(e).clone(),
                    extender: by.clone(),
                    target: target.clone(),
                });
            }
        }
    }
    out
}

/// Regular extenders only extend what their latest measurement output.
pub fn check_assumption_prior_meas(
    exec: &EventPoset,
    sys: &AttestationSystem,
) -> Result<Vec<AssumptionViolation>, SemanticsError> {
    Ok(prior_meas_violations(&Semantics::new(sys, exec)?))
}

/// Regular extenders remeasure after any of their target's dependencies
/// was measured.
pub fn check_assumption_fresh_meas(
    exec: &EventPoset,
    sys: &AttestationSystem,
) -> Result<Vec<AssumptionViolation>, SemanticsError> {
    Ok(fresh_meas_violations(&Semantics::new(sys, exec)?))
}

/// Per-extend outcome of the recent-or-deep check on bundles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum ExtendVerdict {
    /// The extend reports a well-supported measurement whose support is
    /// itself reflected by earlier extends.
    Reflects {
        extend: EventId,
        measurement: EventId,
    },
    Deep {
        extend: EventId,
        witness: JointWitness,
    },
    Recent {
        extend: EventId,
        witness: JointWitness,
    },
    Unclassified {
        extend: EventId,
    },
}

/// Evidence that the adversary paid a deep or recent corruption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum JointWitness {
    Deep {
        object: ObjectId,
        target: ObjectId,
        corrupted_at: EventId,
    },
    Recent {
        object: ObjectId,
        target: ObjectId,
        measured_at: EventId,
        corrupted_at: EventId,
    },
}

impl fmt::Display for JointWitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JointWitness::Deep {
                object,
                target,
                corrupted_at,
            } => write!(f, "deep: `{object}` (below `{target}`) corrupted at `{corrupted_at}`"),
            JointWitness::Recent {
                object,
                target,
                measured_at,
                corrupted_at,
            } => write!(
                f,
                "recent: `{object}` (below `{target}`) measured at `{measured_at}` then corrupted at `{corrupted_at}`"
            ),
        }
    }
}

fn corruptions_of<'p>(p: &'p EventPoset, o: &'p ObjectId) -> impl Iterator<Item = usize> + 'p {
    (0..p.len()).filter(move |&i| matches!(p.label(i), EventLabel::Corr(x) if x == o))
}

/// A deep corruption below `target`: some `D²(target)` member corrupted.
fn deep_below(p: &EventPoset, sys: &AttestationSystem, t: usize) -> Option<JointWitness> {
    for o in sys.dependency_indices(t, 2).ones() {
        let obj = &sys.objects()[o];
        if let Some(c) = corruptions_of(p, obj).next() {
            return Some(JointWitness::Deep {
                object: obj.clone(),
                target: sys.objects()[t].clone(),
                corrupted_at: p.id(c).clone(),
            });
        }
    }
    None
}

/// A recent corruption below `target`: some `D¹(target)` member corrupted
/// after being measured.
fn recent_below(p: &EventPoset, sys: &AttestationSystem, t: usize) -> Option<JointWitness> {
    for o in sys.dependency_indices(t, 1).ones() {
        let obj = &sys.objects()[o];
        for c in corruptions_of(p, obj) {
            let measured = p
                .below(c)
                .ones()
                .find(|&m| matches!(p.label(m), EventLabel::Meas { target, .. } if target == obj));
            if let Some(m) = measured {
                return Some(JointWitness::Recent {
                    object: obj.clone(),
                    target: sys.objects()[t].clone(),
                    measured_at: p.id(m).clone(),
                    corrupted_at: p.id(c).clone(),
                });
            }
        }
    }
    None
}

/// Per-extend classification for an extension substructure.
pub fn check_rd_bundle(
    exec: &EventPoset,
    x: &BTreeSet<EventId>,
    sys: &AttestationSystem,
) -> Result<Vec<ExtendVerdict>, SemanticsError> {
    let sem = Semantics::new(sys, exec)?;
    let mut out = Vec::new();
    for id in x {
        let e = sem.event_index(id)?;
        let EventLabel::Ext { by, value, .. } = exec.label(e) else {
            continue;
        };
        let Some((target, _)) = sys.value_owner(value) else {
            continue;
        };
        let t = sys.object_index(target).expect("owner is an object");
        // The latest measurement by the extender of the target that output
        // the value, if it is well-supported.
        let reflected = measurements_of(exec, by, target)
            .filter(|&m| exec.precedes(m, e) && sem.output(m) == Some(value))
            .filter(|&m| full_support(exec, m, sys).is_some())
            .max_by_key(|&m| exec.below(m).count_ones(..));
        let regular =
            sem.state_at(e, sys.object_index(by).expect("validated")) == CorruptionState::Regular;
        let verdict = match (regular, reflected) {
            (true, Some(m)) => ExtendVerdict::Reflects {
                extend: id.clone(),
                measurement: exec.id(m).clone(),
            },
            _ => match deep_below(exec, sys, t) {
                Some(w) => ExtendVerdict::Deep {
                    extend: id.clone(),
                    witness: w,
                },
                None => match recent_below(exec, sys, t) {
                    Some(w) => ExtendVerdict::Recent {
                        extend: id.clone(),
                        witness: w,
                    },
                    None => ExtendVerdict::Unclassified { extend: id.clone() },
                },
            },
        };
        out.push(verdict);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum JointVerdict {
    /// Some bundle quote is not output by the execution.
    NotProduced {
        quote: Term,
    },
    /// The extracted specification does not measure bottom-up.
    NotBottomUp,
    /// The bundle reports a bad measurement value.
    IndicatesCorruption,
    AssumptionsViolated {
        violations: Vec<AssumptionViolation>,
    },
    AdmitsCore {
        embedding: Embedding,
    },
    Deep {
        witness: JointWitness,
    },
    Recent {
        witness: JointWitness,
    },
    /// None of the guaranteed outcomes holds.
    TheoremFailure,
}

impl JointVerdict {
    pub fn name(&self) -> &'static str {
        match self {
            JointVerdict::NotProduced { .. } => "not-produced",
            JointVerdict::NotBottomUp => "not-bottom-up",
            JointVerdict::IndicatesCorruption => "indicates-corruption",
            JointVerdict::AssumptionsViolated { .. } => "assumptions-violated",
            JointVerdict::AdmitsCore { .. } => "admits-core",
            JointVerdict::Deep { .. } => "deep",
            JointVerdict::Recent { .. } => "recent",
            JointVerdict::TheoremFailure => "theorem-failure",
        }
    }

    /// The hypotheses held and the conclusion was reached.
    pub fn is_classified(&self) -> bool {
        matches!(
            self,
            JointVerdict::AdmitsCore { .. }
                | JointVerdict::Deep { .. }
                | JointVerdict::Recent { .. }
        )
    }

    /// The hypotheses did not hold, so the execution is out of scope.
    pub fn is_precondition_failure(&self) -> bool {
        matches!(
            self,
            JointVerdict::NotProduced { .. }
                | JointVerdict::NotBottomUp
                | JointVerdict::IndicatesCorruption
                | JointVerdict::AssumptionsViolated { .. }
        )
    }
}

/// Which hypotheses of the joint check to enforce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct JointOptions {
    pub prior_meas: bool,
    pub fresh_meas: bool,
    pub bottom_up: bool,
    /// Check against [`core_keeping_att_start`] instead of [`core_of`].
    pub keep_att_start: bool,
}

impl Default for JointOptions {
    fn default() -> JointOptions {
        JointOptions {
            prior_meas: true,
            fresh_meas: true,
            bottom_up: true,
            keep_att_start: false,
        }
    }
}

/// The specification the conclusion is checked against: the given one, or
/// the core of `S(Q)` (or `S(Q)` itself when it is not bottom-up).
pub fn reference_spec(
    sys: &AttestationSystem,
    extracted: &ExtractedSpec,
    reference: Option<&EventPoset>,
    keep_att_start: bool,
) -> EventPoset {
    match reference {
        Some(r) => r.clone(),
        None => {
            prune(&extracted.spec, sys, keep_att_start).unwrap_or_else(|_| extracted.spec.clone())
        }
    }
}

/// Deep or recent corruption below any object.
pub(crate) fn any_deep_or_recent(p: &EventPoset, sys: &AttestationSystem) -> Option<JointVerdict> {
    let n = sys.objects().len();
    if let Some(w) = (0..n).find_map(|t| deep_below(p, sys, t)) {
        return Some(JointVerdict::Deep { witness: w });
    }
    (0..n)
        .find_map(|t| recent_below(p, sys, t))
        .map(|w| JointVerdict::Recent { witness: w })
}

pub(crate) fn joint_with(
    sem: &Semantics<'_>,
    extracted: &ExtractedSpec,
    reference: &EventPoset,
    opts: JointOptions,
) -> Result<JointVerdict, BundleError> {
    let exec = sem.poset();
    let sys = sem.system();
    if let Some(q) = extracted
        .quotes
        .iter()
        .find(|q| producers(sem, std::slice::from_ref(q)).is_err())
    {
        return Ok(JointVerdict::NotProduced { quote: q.clone() });
    }
    if opts.bottom_up && !measures_bottom_up(&extracted.spec, sys) {
        return Ok(JointVerdict::NotBottomUp);
    }
    if extracted.indicates_corruption {
        return Ok(JointVerdict::IndicatesCorruption);
    }
    let mut violations = Vec::new();
    if opts.prior_meas {
        violations.extend(prior_meas_violations(sem));
    }
    if opts.fresh_meas {
        violations.extend(fresh_meas_violations(sem));
    }
    if !violations.is_empty() {
        return Ok(JointVerdict::AssumptionsViolated { violations });
    }
    if let Some(embedding) = admits(reference, exec).map_err(|_| BundleError::NotBottomUp)? {
        return Ok(JointVerdict::AdmitsCore { embedding });
    }
    Ok(any_deep_or_recent(exec, sys).unwrap_or(JointVerdict::TheoremFailure))
}

/// Checks the joint-strategy guarantee on one execution and bundle.
pub fn check_joint_strategy(
    sys: &AttestationSystem,
    exec: &EventPoset,
    bundle: &QuoteBundle,
) -> Result<JointVerdict, BundleError> {
    check_joint_strategy_with(sys, exec, bundle, None, JointOptions::default())
}

pub fn check_joint_strategy_with(
    sys: &AttestationSystem,
    exec: &EventPoset,
    bundle: &QuoteBundle,
    reference: Option<&EventPoset>,
    opts: JointOptions,
) -> Result<JointVerdict, BundleError> {
    let sem = Semantics::new(sys, exec)?;
    let extracted = extract_specification(sys, bundle)?;
    let reference = reference_spec(sys, &extracted, reference, opts.keep_att_start);
    joint_with(&sem, &extracted, &reference, opts)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::tests::o;
    use crate::model::MeasurementValues;
    use crate::term::seq_of;

    pub fn as1() -> AttestationSystem {
        let objs: Vec<ObjectId> = ["rtm", "A1", "A2", "vc", "ker", "sys"]
            .iter()
            .map(|s| o(s))
            .collect();
        let rel = |l: &[(&str, &str)]| l.iter().map(|(a, b)| (o(a), o(b))).collect::<Vec<_>>();
        let pcrs: Vec<PcrId> = ["p_r", "p1", "p2", "p_vc"]
            .iter()
            .map(|r| PcrId::new("t", r))
            .collect();
        let access = vec![
            (o("rtm"), pcrs[0].clone()),
            (o("A1"), pcrs[1].clone()),
            (o("A2"), pcrs[2].clone()),
            (o("vc"), pcrs[3].clone()),
        ];
        let mut mv = BTreeMap::new();
        for (obj, v) in [
            ("A1", "v1"),
            ("A2", "v2"),
            ("vc", "v3"),
            ("ker", "v4"),
            ("sys", "v5"),
        ] {
            mv.insert(
                o(obj),
                MeasurementValues {
                    good: vec![Term::public(v)],
                    bad: vec![Term::public(format!("b:{obj}"))],
                },
            );
        }
        AttestationSystem::new(
            objs,
            o("rtm"),
            rel(&[
                ("rtm", "A1"),
                ("rtm", "A2"),
                ("A1", "vc"),
                ("A2", "ker"),
                ("vc", "sys"),
            ]),
            rel(&[("ker", "vc")]),
            pcrs,
            access,
            mv,
        )
        .unwrap()
    }

    fn v(s: &str) -> Term {
        Term::public(s)
    }

    fn pcr(s: &str) -> Term {
        Term::public(format!("t.{s}"))
    }

    fn sk() -> Term {
        Term::key("sk_t")
    }

    fn n() -> Term {
        Term::nonce("n")
    }

    /// The three tiered quotes, built directly from their structure.
    pub fn strategy3_quotes() -> (Term, Term, Term) {
        let q1 = Term::sig(
            Term::pair(n(), Term::pair(pcr("p_r"), seq_of(&[v("v1"), v("v2")]))),
            sk(),
        );
        let q2 = Term::sig(
            Term::pair(
                n(),
                Term::pair(
                    Term::pair(pcr("p1"), pcr("p2")),
                    Term::pair(
                        seq_of(&[q1.clone(), v("v3")]),
                        seq_of(&[q1.clone(), v("v4")]),
                    ),
                ),
            ),
            sk(),
        );
        let q3 = Term::sig(
            Term::pair(n(), Term::pair(pcr("p_vc"), seq_of(&[q2.clone(), v("v5")]))),
            sk(),
        );
        (q1, q2, q3)
    }

    fn label_of(p: &EventPoset, id: &str) -> String {
        p.label(p.index_of(&EventId::new(id)).unwrap()).to_string()
    }

    fn idx(p: &EventPoset, id: &str) -> usize {
        p.index_of(&EventId::new(id)).unwrap()
    }

    fn ext(by: &str, reg: &str, value: Term) -> EventLabel {
        EventLabel::Ext {
            by: o(by),
            value,
            pcr: PcrId::new("t", reg),
        }
    }

    fn quote(regs: &[&str]) -> EventLabel {
        EventLabel::Quote {
            input: n(),
            pcrs: regs.iter().map(|r| PcrId::new("t", r)).collect(),
        }
    }

    /// The tiered execution: all measurements concurrent, then three rounds
    /// of extends and quotes.
    pub fn strategy3_exec() -> EventPoset {
        let (q1, q2, _) = strategy3_quotes();
        let events = vec![
            Event::new("m1", EventLabel::meas("rtm", "A1")),
            Event::new("m2", EventLabel::meas("rtm", "A2")),
            Event::new("m3", EventLabel::meas("A1", "vc")),
            Event::new("m4", EventLabel::meas("A2", "ker")),
            Event::new("m5", EventLabel::meas("vc", "sys")),
            Event::new("att", EventLabel::AttStart(n())),
            Event::new("x1", ext("rtm", "p_r", v("v1"))),
            Event::new("x2", ext("rtm", "p_r", v("v2"))),
            Event::new("q1", quote(&["p_r"])),
            Event::new("x3", ext("A1", "p1", q1.clone())),
            Event::new("x4", ext("A1", "p1", v("v3"))),
            Event::new("x5", ext("A2", "p2", q1)),
            Event::new("x6", ext("A2", "p2", v("v4"))),
            Event::new("q2", quote(&["p1", "p2"])),
            Event::new("x7", ext("vc", "p_vc", q2)),
            Event::new("x8", ext("vc", "p_vc", v("v5"))),
            Event::new("q3", quote(&["p_vc"])),
        ];
        let mut edges = vec![(0, 5), (1, 5), (2, 5), (3, 5), (4, 5)];
        edges.extend([(5, 6), (6, 7), (7, 8), (8, 9), (9, 10), (8, 11), (11, 12)]);
        edges.extend([(10, 13), (12, 13), (13, 14), (14, 15), (15, 16)]);
        EventPoset::from_parts(events, edges).unwrap()
    }

    #[test]
    fn tiered_execution_produces_the_quotes() {
        let sys = as1();
        let exec = strategy3_exec();
        let sem = Semantics::new(&sys, &exec).unwrap();
        let (q1, q2, q3) = strategy3_quotes();
        assert_eq!(sem.output(idx(&exec, "q1")), Some(&q1));
        assert_eq!(sem.output(idx(&exec, "q2")), Some(&q2));
        assert_eq!(sem.output(idx(&exec, "q3")), Some(&q3));
        let b = QuoteBundle::new(vec![q1, q2, q3]);
        let x = extension_substructure(&exec, &b, &sys).unwrap();
        let ids: Vec<&str> = x.iter().map(|e| e.as_str()).collect();
        assert_eq!(ids, vec!["x1", "x2", "x4", "x6", "x8"]);
        assert!(extends_bottom_up(&exec, &x, &sys));
    }

    #[test]
    fn concurrent_measurements_break_freshness() {
        let sys = as1();
        let exec = strategy3_exec();
        assert_eq!(check_assumption_prior_meas(&exec, &sys).unwrap(), vec![]);
        let fresh = check_assumption_fresh_meas(&exec, &sys).unwrap();
        assert!(fresh.contains(&AssumptionViolation::FreshMeas {
            measurement: "m1".into(),
            extend: "x4".into(),
            extender: o("A1"),
            target: o("vc"),
        }));
        let (q1, q2, q3) = strategy3_quotes();
        let verdict =
            check_joint_strategy(&sys, &exec, &QuoteBundle::new(vec![q1, q2, q3])).unwrap();
        assert_eq!(verdict.name(), "assumptions-violated");
    }

    #[test]
    fn layered_execution_admits_the_core() {
        let sys = as1();
        let base = strategy3_exec();
        // Serialize the measurements bottom-up, each ahead of the extends.
        let mut edges: Vec<(usize, usize)> = base
            .edges()
            .iter()
            .copied()
            .filter(|&(a, _)| a > 4)
            .collect();
        edges.extend([(0, 2), (1, 3), (2, 4), (3, 4), (4, 5)]);
        let exec = EventPoset::from_parts(base.events().to_vec(), edges).unwrap();
        let (q1, q2, q3) = strategy3_quotes();
        let b = QuoteBundle::new(vec![q1, q2, q3]);
        let x = extension_substructure(&exec, &b, &sys).unwrap();
        let verdicts = check_rd_bundle(&exec, &x, &sys).unwrap();
        assert!(verdicts
            .iter()
            .all(|v| matches!(v, ExtendVerdict::Reflects { .. })));
        assert_eq!(
            check_joint_strategy(&sys, &exec, &b).unwrap().name(),
            "admits-core"
        );
        // Every measurement precedes the nonce, so orderings from the
        // attestation start cannot be honoured.
        let literal = JointOptions {
            keep_att_start: true,
            ..JointOptions::default()
        };
        let v = check_joint_strategy_with(&sys, &exec, &b, None, literal).unwrap();
        assert_eq!(v, JointVerdict::TheoremFailure);
    }

    #[test]
    fn corrupted_layer_is_a_witness() {
        let sys = as1();
        let base = strategy3_exec();
        let mut events = base.events().to_vec();
        events.push(Event::new("c", EventLabel::corr("A1")));
        let mut edges: Vec<(usize, usize)> = base
            .edges()
            .iter()
            .copied()
            .filter(|&(a, _)| a > 4)
            .collect();
        edges.extend([(0, 2), (1, 3), (2, 4), (3, 4), (4, 5), (5, 17), (17, 6)]);
        let exec = EventPoset::from_parts(events, edges).unwrap();
        let (q1, q2, q3) = strategy3_quotes();
        let b = QuoteBundle::new(vec![q1, q2, q3]);
        // Still admits the core: the corruption came after all measurements.
        assert_eq!(
            check_joint_strategy(&sys, &exec, &b).unwrap().name(),
            "admits-core"
        );
        assert!(matches!(
            any_deep_or_recent(&exec, &sys),
            Some(JointVerdict::Deep { witness: JointWitness::Deep { ref object, .. } }) if object.as_str() == "A1"
        ));
    }

    #[test]
    fn strategy3_extraction() {
        let sys = as1();
        let (q1, q2, q3) = strategy3_quotes();
        let x = extract_specification(&sys, &QuoteBundle::new(vec![q1, q2, q3])).unwrap();
        let s = &x.spec;
        assert_eq!(s.len(), 6);
        assert_eq!(label_of(s, "Q1:t.p_r:1"), "meas rtm A1");
        assert_eq!(label_of(s, "Q1:t.p_r:2"), "meas rtm A2");
        assert_eq!(label_of(s, "Q2:t.p1:2"), "meas A1 vc");
        assert_eq!(label_of(s, "Q2:t.p2:2"), "meas A2 ker");
        assert_eq!(label_of(s, "Q3:t.p_vc:2"), "meas vc sys");
        assert_eq!(label_of(s, "att:n"), "att_start nonce:n");
        let a1 = idx(s, "Q1:t.p_r:1");
        let a2 = idx(s, "Q1:t.p_r:2");
        let vc = idx(s, "Q2:t.p1:2");
        let ker = idx(s, "Q2:t.p2:2");
        let sys_m = idx(s, "Q3:t.p_vc:2");
        let att = idx(s, "att:n");
        for (a, b) in [
            (a1, vc),
            (a2, vc),
            (a1, ker),
            (a2, ker),
            (vc, sys_m),
            (ker, sys_m),
            (att, vc),
            (att, sys_m),
        ] {
            assert!(s.precedes(a, b), "{} < {}", s.id(a), s.id(b));
        }
        assert!(!s.comparable(a1, a2));
        assert!(!s.comparable(vc, ker));
        assert!(!s.comparable(att, a1));
        assert!(measures_bottom_up(s, &sys));
        assert!(!x.indicates_corruption);
        assert!(x.duplicates.is_empty());
    }

    #[test]
    fn nested_quotes_are_discovered() {
        let sys = as1();
        let (_, _, q3) = strategy3_quotes();
        let x = extract_specification(&sys, &QuoteBundle::new(vec![q3])).unwrap();
        assert_eq!(x.quotes.len(), 3);
        assert_eq!(x.spec.len(), 6);
        assert!(complies_with_strategy(&sys, &QuoteBundle::new(x.quotes.clone())).unwrap());
    }

    #[test]
    fn core_drops_unsupporting_orderings() {
        let sys = as1();
        let (q1, q2, q3) = strategy3_quotes();
        let x = extract_specification(&sys, &QuoteBundle::new(vec![q1, q2, q3])).unwrap();
        let c = core_of(&x.spec, &sys).unwrap();
        let a1 = idx(&c, "Q1:t.p_r:1");
        let a2 = idx(&c, "Q1:t.p_r:2");
        let vc = idx(&c, "Q2:t.p1:2");
        let ker = idx(&c, "Q2:t.p2:2");
        let top = idx(&c, "Q3:t.p_vc:2");
        assert!(!c.precedes(a1, ker));
        assert!(!c.precedes(a2, vc));
        assert!(c.precedes(a1, vc));
        assert!(c.precedes(a2, ker));
        assert!(c.precedes(vc, top));
        assert!(c.precedes(ker, top));
        // Re-derived through vc.
        assert!(c.precedes(a1, top));
        let att = idx(&c, "att:n");
        assert!(!c.precedes(att, vc));
        assert_eq!(core_of(&c, &sys).unwrap(), c);
        let lit = core_keeping_att_start(&x.spec, &sys).unwrap();
        assert!(lit.precedes(idx(&lit, "att:n"), idx(&lit, "Q2:t.p1:2")));
        assert!(!lit.precedes(idx(&lit, "Q1:t.p_r:1"), idx(&lit, "Q2:t.p2:2")));
    }

    #[test]
    fn empty_bundle() {
        let sys = as1();
        let x = extract_specification(&sys, &QuoteBundle::default()).unwrap();
        assert!(x.spec.is_empty());
        assert!(complies_with_strategy(&sys, &QuoteBundle::default()).unwrap());
    }

    #[test]
    fn shared_pcr_chain_is_rejected() {
        let sys = as1();
        let q = Term::sig(
            Term::pair(
                n(),
                Term::pair(pcr("p_vc"), seq_of(&["v1", "v2", "v3", "v4", "v5"].map(v))),
            ),
            sk(),
        );
        let err = extract_specification(&sys, &QuoteBundle::new(vec![q])).unwrap_err();
        assert!(
            matches!(err, BundleError::Extraction { ref target, .. } if target.as_str() == "A1")
        );
    }

    #[test]
    fn separate_chains_are_not_bottom_up() {
        let sys = as1();
        let q = Term::sig(
            Term::pair(
                n(),
                Term::pair(
                    Term::tuple(&[pcr("p_r"), pcr("p1"), pcr("p2"), pcr("p_vc")]),
                    Term::tuple(&[
                        seq_of(&[v("v1"), v("v2")]),
                        seq_of(&[v("v3")]),
                        seq_of(&[v("v4")]),
                        seq_of(&[v("v5")]),
                    ]),
                ),
            ),
            sk(),
        );
        let b = QuoteBundle::new(vec![q]);
        let x = extract_specification(&sys, &b).unwrap();
        assert_eq!(x.spec.len(), 6);
        assert_eq!(x.spec.order_pairs(), vec![]);
        assert!(!complies_with_strategy(&sys, &b).unwrap());
    }

    #[test]
    fn non_quotes_and_bad_values() {
        let sys = as1();
        assert!(matches!(
            extract_specification(&sys, &QuoteBundle::new(vec![v("x")])),
            Err(BundleError::NotAQuote(_))
        ));
        let bad = Term::sig(
            Term::pair(n(), Term::pair(pcr("p1"), seq_of(&[v("b:vc")]))),
            sk(),
        );
        let x = extract_specification(&sys, &QuoteBundle::new(vec![bad])).unwrap();
        assert!(x.indicates_corruption);
        let wrong_key = Term::sig(
            Term::pair(n(), Term::pair(pcr("p1"), seq_of(&[v("v3")]))),
            Term::key("sk_u"),
        );
        assert!(extract_specification(&sys, &QuoteBundle::new(vec![wrong_key])).is_err());
    }

    #[test]
    fn duplicate_values_with_same_context_merge() {
        let sys = as1();
        let q = Term::sig(
            Term::pair(n(), Term::pair(pcr("p_r"), seq_of(&[v("v1"), v("v1")]))),
            sk(),
        );
        let x = extract_specification(&sys, &QuoteBundle::new(vec![q])).unwrap();
        assert_eq!(x.spec.len(), 2);
        assert_eq!(
            x.duplicates,
            vec![Duplicate {
                kept: "Q1:t.p_r:1".into(),
                merged: "Q1:t.p_r:2".into()
            }]
        );
    }
}
