//! Execution semantics: which events touch which objects and registers,
//! corruption state, measurement outputs, PCR contents and quote outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::error::{ModelError, SemanticsError};
use crate::model::{AttestationSystem, ObjectId, PcrId};
use crate::poset::{EventId, EventLabel, EventPoset};
use crate::term::{Knowledge, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionState {
    Undefined,
    Regular,
    Corrupt,
}

impl fmt::Display for CorruptionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionState::Undefined => "undefined",
            CorruptionState::Regular => "regular",
            CorruptionState::Corrupt => "corrupt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementClass {
    /// Bad value reported.
    Detects,
    /// Good value reported for a corrupt target.
    Avoidance,
    Clean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeasurementOutcome {
    pub value: Term,
    pub class: MeasurementClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuoteOutcome {
    pub term: Term,
    pub indicates_corruption: bool,
}

pub fn touches_object(label: &EventLabel, o: &ObjectId, sys: &AttestationSystem) -> bool {
    match label {
        EventLabel::Meas { by, target } => by == o || target == o || sys.in_context(o, by),
        EventLabel::Corr(x) | EventLabel::Rep(x) => x == o,
        EventLabel::Ext { by, .. } => by == o,
        EventLabel::AttStart(_) | EventLabel::Quote { .. } => false,
    }
}

pub fn touches_pcr(label: &EventLabel, p: &PcrId) -> bool {
    match label {
        EventLabel::Ext { pcr, .. } => pcr == p,
        EventLabel::Quote { pcrs, .. } => pcrs.contains(p),
        _ => false,
    }
}

fn touched_indices(label: &EventLabel, sys: &AttestationSystem) -> Result<Vec<usize>, ModelError> {
    let idx = |o: &ObjectId| {
        sys.object_index(o)
            .ok_or_else(|| ModelError::UnknownObject(o.clone()))
    };
    Ok(match label {
        EventLabel::Meas { by, target } => {
            let b = idx(by)?;
            let mut v: Vec<usize> = sys.support_indices(b).collect();
            let t = idx(target)?;
            if !v.contains(&t) {
                v.push(t);
            }
            v
        }
        EventLabel::Corr(x) | EventLabel::Rep(x) => vec![idx(x)?],
        EventLabel::Ext { by, .. } => vec![idx(by)?],
        EventLabel::AttStart(_) | EventLabel::Quote { .. } => Vec::new(),
    })
}

/// First pair of incomparable events on one object where one is an
/// adversary event, if any.
pub fn adversary_order_violation(
    p: &EventPoset,
    sys: &AttestationSystem,
) -> Option<(ObjectId, EventId, EventId)> {
    for o in sys.objects() {
        let on: Vec<usize> = (0..p.len())
            .filter(|&i| touches_object(p.label(i), o, sys))
            .collect();
        for &a in &on {
            if !p.label(a).is_adversary() {
                continue;
            }
            for &b in &on {
                if !p.comparable(a, b) {
                    return Some((o.clone(), p.id(a).clone(), p.id(b).clone()));
                }
            }
        }
    }
    None
}

pub fn is_adversary_ordered(p: &EventPoset, sys: &AttestationSystem) -> bool {
    adversary_order_violation(p, sys).is_none()
}

fn pcrs_of(p: &EventPoset) -> BTreeSet<PcrId> {
    let mut out = BTreeSet::new();
    for e in p.events() {
        match &e.label {
            EventLabel::Ext { pcr, .. } => {
                out.insert(pcr.clone());
            }
            EventLabel::Quote { pcrs, .. } => out.extend(pcrs.iter().cloned()),
            _ => {}
        }
    }
    out
}

/// First pair of incomparable events on one register that are not both
/// quotes, if any.
pub fn extend_order_violation(p: &EventPoset) -> Option<(PcrId, EventId, EventId)> {
    for pcr in pcrs_of(p) {
        let on: Vec<usize> = (0..p.len())
            .filter(|&i| touches_pcr(p.label(i), &pcr))
            .collect();
        for (x, &a) in on.iter().enumerate() {
            for &b in &on[x + 1..] {
                if !p.comparable(a, b) && !(p.label(a).is_quote() && p.label(b).is_quote()) {
                    return Some((pcr, p.id(a).clone(), p.id(b).clone()));
                }
            }
        }
    }
    None
}

pub fn is_extend_ordered(p: &EventPoset) -> bool {
    extend_order_violation(p).is_none()
}

/// Evaluated semantics of one adversary-ordered poset.
///
/// Corruption states and outputs are computed once at construction. PCR
/// values and quote outputs need the poset to be extend-ordered as well;
/// when it is not, those queries fail and quotes have no output.
pub struct Semantics<'a> {
    sys: &'a AttestationSystem,
    poset: &'a EventPoset,
    touched: Vec<Vec<usize>>,
    cs: Vec<Vec<CorruptionState>>,
    outputs: Vec<Option<Term>>,
    classes: Vec<Option<MeasurementClass>>,
    extend_violation: Option<(PcrId, EventId, EventId)>,
}

impl<'a> Semantics<'a> {
    pub fn new(sys: &'a AttestationSystem, poset: &'a EventPoset) -> Result<Self, SemanticsError> {
        let n = poset.len();
        let touched = (0..n)
            .map(|i| touched_indices(poset.label(i), sys))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some((object, a, b)) = adversary_order_violation(poset, sys) {
            return Err(SemanticsError::NotAdversaryOrdered { object, a, b });
        }
        let nobj = sys.objects().len();
        let mut adv_on: Vec<Vec<usize>> = vec![Vec::new(); nobj];
        for i in 0..n {
            if poset.label(i).is_adversary() {
                adv_on[touched[i][0]].push(i);
            }
        }
        let mut cs = vec![vec![CorruptionState::Undefined; nobj]; n];
        for e in 0..n {
            for &o in &touched[e] {
                cs[e][o] = match poset.label(e) {
                    EventLabel::Corr(_) => CorruptionState::Corrupt,
                    EventLabel::Rep(_) => CorruptionState::Regular,
                    _ => {
                        let prior: Vec<usize> = adv_on[o]
                            .iter()
                            .copied()
                            .filter(|&a| poset.precedes(a, e))
                            .collect();
                        match unique_maximum(poset, &prior) {
                            Ok(None) => CorruptionState::Regular,
                            Ok(Some(m)) => match poset.label(m) {
                                EventLabel::Corr(_) => CorruptionState::Corrupt,
                                _ => CorruptionState::Regular,
                            },
                            Err(()) => {
                                return Err(SemanticsError::NoUniqueMaximum {
                                    event: poset.id(e).clone(),
                                    object: sys.objects()[o].clone(),
                                })
                            }
                        }
                    }
                };
            }
        }
        let extend_violation = extend_order_violation(poset);
        let mut sem = Semantics {
            sys,
            poset,
            touched,
            cs,
            outputs: vec![None; n],
            classes: vec![None; n],
            extend_violation,
        };
        for e in 0..n {
            match poset.label(e) {
                EventLabel::Meas { by, target } => {
                    let out = sem.compute_measurement(by, target, e);
                    sem.outputs[e] = Some(out.value);
                    sem.classes[e] = Some(out.class);
                }
                EventLabel::AttStart(nonce) => sem.outputs[e] = Some(nonce.clone()),
                EventLabel::Quote { .. } if sem.extend_violation.is_none() => {
                    sem.outputs[e] = Some(sem.compute_quote(e)?.term);
                }
                _ => {}
            }
        }
        Ok(sem)
    }

    fn compute_measurement(
        &self,
        by: &ObjectId,
        target: &ObjectId,
        e: usize,
    ) -> MeasurementOutcome {
        let t = self.sys.object_index(target).expect("checked");
        let b = self.sys.object_index(by).expect("checked");
        let target_corrupt = self.cs[e][t] == CorruptionState::Corrupt;
        let support_regular = self
            .sys
            .support_indices(b)
            .all(|x| self.cs[e][x] == CorruptionState::Regular);
        if target_corrupt && support_regular {
            MeasurementOutcome {
                value: self.sys.bad_value(t).clone(),
                class: MeasurementClass::Detects,
            }
        } else {
            MeasurementOutcome {
                value: self.sys.good_value(t).clone(),
                class: if target_corrupt {
                    MeasurementClass::Avoidance
                } else {
                    MeasurementClass::Clean
                },
            }
        }
    }

    fn compute_quote(&self, e: usize) -> Result<QuoteOutcome, SemanticsError> {
        let EventLabel::Quote { input, pcrs } = self.poset.label(e) else {
            return Err(SemanticsError::WrongKind {
                event: self.poset.id(e).clone(),
                expected: "quote",
            });
        };
        let mut values = Vec::with_capacity(pcrs.len());
        for p in pcrs {
            values.push(self.pcr_value(e, p)?);
        }
        let atoms: Vec<Term> = pcrs.iter().map(PcrId::atom).collect();
        let indicates_corruption = values.iter().any(|v| {
            crate::term::seq_view(v)
                .map(|view| view.values.iter().any(|x| self.sys.is_bad_value(x)))
                .unwrap_or(false)
        });
        let payload = Term::pair(
            input.clone(),
            Term::pair(Term::tuple(&atoms), Term::tuple(&values)),
        );
        Ok(QuoteOutcome {
            term: Term::sig(payload, pcrs[0].signing_key()),
            indicates_corruption,
        })
    }

    pub fn system(&self) -> &'a AttestationSystem {
        self.sys
    }

    pub fn poset(&self) -> &'a EventPoset {
        self.poset
    }

    pub fn event_index(&self, id: &EventId) -> Result<usize, SemanticsError> {
        self.poset
            .index_of(id)
            .ok_or_else(|| SemanticsError::UnknownEvent(id.clone()))
    }

    /// Object indices touched by event `e`.
    pub fn touched(&self, e: usize) -> &[usize] {
        &self.touched[e]
    }

    pub fn state_at(&self, e: usize, o: usize) -> CorruptionState {
        self.cs[e][o]
    }

    pub fn state(&self, e: usize, o: &ObjectId) -> Result<CorruptionState, SemanticsError> {
        let oi = self
            .sys
            .object_index(o)
            .ok_or_else(|| ModelError::UnknownObject(o.clone()))?;
        Ok(self.cs[e][oi])
    }

    pub fn output(&self, e: usize) -> Option<&Term> {
        self.outputs[e].as_ref()
    }

    pub fn class(&self, e: usize) -> Option<MeasurementClass> {
        self.classes[e]
    }

    pub fn is_extend_ordered(&self) -> bool {
        self.extend_violation.is_none()
    }

    fn require_extend_ordered(&self) -> Result<(), SemanticsError> {
        match &self.extend_violation {
            None => Ok(()),
            Some((pcr, a, b)) => Err(SemanticsError::NotExtendOrdered {
                pcr: pcr.clone(),
                a: a.clone(),
                b: b.clone(),
            }),
        }
    }

    /// Extend events on `pcr` strictly before `e`, oldest first.
    pub fn prior_extends(&self, e: usize, pcr: &PcrId) -> Vec<usize> {
        let mut prior: Vec<usize> = (0..self.poset.len())
            .filter(|&i| {
                self.poset.precedes(i, e)
                    && matches!(self.poset.label(i), EventLabel::Ext { pcr: q, .. } if q == pcr)
            })
            .collect();
        prior.sort_by_key(|&i| self.poset.below(i).count_ones(..));
        prior
    }

    /// Contents of `pcr` at `e` (after `e` when it is an extend).
    pub fn pcr_value(&self, e: usize, pcr: &PcrId) -> Result<Term, SemanticsError> {
        self.require_extend_ordered()?;
        let label = self.poset.label(e);
        if !touches_pcr(label, pcr) {
            return Err(SemanticsError::DoesNotTouchPcr {
                event: self.poset.id(e).clone(),
                pcr: pcr.clone(),
            });
        }
        let mut acc = Term::Rst;
        for i in self.prior_extends(e, pcr) {
            if let EventLabel::Ext { value, .. } = self.poset.label(i) {
                acc = Term::extend(acc, value.clone());
            }
        }
        if let EventLabel::Ext { value, .. } = label {
            acc = Term::extend(acc, value.clone());
        }
        Ok(acc)
    }

    pub fn quote(&self, e: usize) -> Result<QuoteOutcome, SemanticsError> {
        self.require_extend_ordered()?;
        self.compute_quote(e)
    }

    /// Measurement events that report a bad value.
    pub fn detected(&self) -> Vec<usize> {
        (0..self.poset.len())
            .filter(|&i| self.classes[i] == Some(MeasurementClass::Detects))
            .collect()
    }

    pub fn avoidances(&self) -> Vec<usize> {
        (0..self.poset.len())
            .filter(|&i| self.classes[i] == Some(MeasurementClass::Avoidance))
            .collect()
    }

    /// Whether `goal` is derivable from the outputs strictly before `e`.
    pub fn derivable_before(&self, e: usize, goal: &Term) -> bool {
        matches!(goal, Term::Public(_) | Term::Rst)
            || self
                .poset
                .below(e)
                .ones()
                .any(|i| self.outputs[i].as_ref() == Some(goal))
            || self.knowledge_before(e).derives(goal)
    }

    /// Terms available to the environment strictly before `e`.
    pub fn knowledge_before(&self, e: usize) -> Knowledge {
        Knowledge::new(
            self.poset
                .below(e)
                .ones()
                .filter_map(|i| self.outputs[i].as_ref()),
        )
    }
}

/// `Ok(None)` for an empty set, `Err(())` when there are several maximal
/// elements.
fn unique_maximum(p: &EventPoset, set: &[usize]) -> Result<Option<usize>, ()> {
    if set.is_empty() {
        return Ok(None);
    }
    set.iter()
        .copied()
        .find(|&m| set.iter().all(|&x| x == m || p.precedes(x, m)))
        .map(Some)
        .ok_or(())
}

fn event_index(p: &EventPoset, id: &EventId) -> Result<usize, SemanticsError> {
    p.index_of(id)
        .ok_or_else(|| SemanticsError::UnknownEvent(id.clone()))
}

pub fn corruption_state(
    p: &EventPoset,
    e: &EventId,
    o: &ObjectId,
    sys: &AttestationSystem,
) -> Result<CorruptionState, SemanticsError> {
    let sem = Semantics::new(sys, p)?;
    sem.state(event_index(p, e)?, o)
}

pub fn measurement_output(
    p: &EventPoset,
    e: &EventId,
    sys: &AttestationSystem,
) -> Result<MeasurementOutcome, SemanticsError> {
    let sem = Semantics::new(sys, p)?;
    let i = event_index(p, e)?;
    match (sem.output(i), sem.class(i)) {
        (Some(v), Some(class)) => Ok(MeasurementOutcome {
            value: v.clone(),
            class,
        }),
        _ => Err(SemanticsError::WrongKind {
            event: e.clone(),
            expected: "measurement",
        }),
    }
}

pub fn pcr_value(
    p: &EventPoset,
    e: &EventId,
    pcr: &PcrId,
    sys: &AttestationSystem,
) -> Result<Term, SemanticsError> {
    let sem = Semantics::new(sys, p)?;
    sem.pcr_value(event_index(p, e)?, pcr)
}

pub fn quote_output(
    p: &EventPoset,
    e: &EventId,
    sys: &AttestationSystem,
) -> Result<QuoteOutcome, SemanticsError> {
    let sem = Semantics::new(sys, p)?;
    sem.quote(event_index(p, e)?)
}

pub fn detected_corruptions(
    p: &EventPoset,
    sys: &AttestationSystem,
) -> Result<BTreeSet<EventId>, SemanticsError> {
    let sem = Semantics::new(sys, p)?;
    Ok(sem
        .detected()
        .into_iter()
        .map(|i| p.id(i).clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutionIssue {
    LabelInvalid {
        event: EventId,
        reason: String,
    },
    DuplicateNonce {
        nonce: Term,
        events: Vec<EventId>,
    },
    NotAdversaryOrdered {
        object: ObjectId,
        a: EventId,
        b: EventId,
    },
    NotExtendOrdered {
        pcr: PcrId,
        a: EventId,
        b: EventId,
    },
    NoUniqueMaximum {
        event: EventId,
        object: ObjectId,
    },
    InputNotDerivable {
        event: EventId,
        input: Term,
    },
}

impl fmt::Display for ExecutionIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecutionIssue::LabelInvalid { event, reason } => write!(f, "`{event}`: {reason}"),
            ExecutionIssue::DuplicateNonce { nonce, events } => {
                write!(f, "nonce {nonce} started more than once ({events:?})")
            }
            ExecutionIssue::NotAdversaryOrdered { object, a, b } => write!(
                f,
                "not adversary-ordered: `{a}` and `{b}` are incomparable on `{object}`"
            ),
            ExecutionIssue::NotExtendOrdered { pcr, a, b } => write!(
                f,
                "not extend-ordered: `{a}` and `{b}` are incomparable on `{pcr}`"
            ),
            ExecutionIssue::NoUniqueMaximum { event, object } => write!(
                f,
                "no unique maximal prior adversary event on `{object}` at `{event}`"
            ),
            ExecutionIssue::InputNotDerivable { event, input } => {
                write!(f, "`{event}`: input {input} is not derivable")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExecutionReport {
    pub issues: Vec<ExecutionIssue>,
}

impl ExecutionReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Why a label is not allowed in `sys`, if it is not.
pub fn label_problem(label: &EventLabel, sys: &AttestationSystem) -> Option<String> {
    let unknown = |o: &ObjectId| (!sys.contains(o)).then(|| format!("unknown object `{o}`"));
    match label {
        EventLabel::Meas { by, target } => unknown(by).or_else(|| unknown(target)).or_else(|| {
            (!sys.measures(by, target)).then(|| format!("M({by}, {target}) does not hold"))
        }),
        EventLabel::Corr(o) | EventLabel::Rep(o) => unknown(o).or_else(|| {
            (o == sys.rtm()).then(|| "the rtm cannot be corrupted or repaired".to_string())
        }),
        EventLabel::AttStart(n) => (!n.is_nonce()).then(|| format!("{n} is not a nonce")),
        EventLabel::Ext { by, pcr, .. } => unknown(by)
            .or_else(|| (!sys.has_pcr(pcr)).then(|| format!("unknown pcr `{pcr}`")))
            .or_else(|| {
                (!sys.may_extend(by, pcr)).then(|| format!("L({by}, {pcr}) does not hold"))
            }),
        EventLabel::Quote { pcrs, .. } => {
            if pcrs.is_empty() {
                return Some("quote names no pcrs".into());
            }
            if let Some(p) = pcrs.iter().find(|p| !sys.has_pcr(p)) {
                return Some(format!("unknown pcr `{p}`"));
            }
            if pcrs.iter().any(|p| p.tpm != pcrs[0].tpm) {
                return Some("quoted pcrs belong to different TPMs".into());
            }
            None
        }
    }
}

/// Checks labels, orderings, nonce uniqueness and input derivability.
pub fn validate_execution(sys: &AttestationSystem, p: &EventPoset) -> ExecutionReport {
    validated(sys, p).0
}

/// The semantics of `p` when it is a valid execution.
pub(crate) fn semantics_if_valid<'a>(
    sys: &'a AttestationSystem,
    p: &'a EventPoset,
) -> Option<Semantics<'a>> {
    match validated(sys, p) {
        (r, Some(sem)) if r.is_valid() => Some(sem),
        _ => None,
    }
}

fn validated<'a>(
    sys: &'a AttestationSystem,
    p: &'a EventPoset,
) -> (ExecutionReport, Option<Semantics<'a>>) {
    let mut issues = Vec::new();
    for e in p.events() {
        if let Some(reason) = label_problem(&e.label, sys) {
            issues.push(ExecutionIssue::LabelInvalid {
                event: e.id.clone(),
                reason,
            });
        }
    }
    let mut nonces: BTreeMap<&Term, Vec<EventId>> = BTreeMap::new();
    for e in p.events() {
        if let EventLabel::AttStart(n) = &e.label {
            nonces.entry(n).or_default().push(e.id.clone());
        }
    }
    for (n, events) in nonces {
        if events.len() > 1 {
            issues.push(ExecutionIssue::DuplicateNonce {
                nonce: n.clone(),
                events,
            });
        }
    }
    if !issues.is_empty() {
        return (ExecutionReport { issues }, None);
    }
    if let Some((pcr, a, b)) = extend_order_violation(p) {
        issues.push(ExecutionIssue::NotExtendOrdered { pcr, a, b });
    }
    match Semantics::new(sys, p) {
        Err(SemanticsError::NotAdversaryOrdered { object, a, b }) => {
            issues.push(ExecutionIssue::NotAdversaryOrdered { object, a, b });
            (ExecutionReport { issues }, None)
        }
        Err(SemanticsError::NoUniqueMaximum { event, object }) => {
            issues.push(ExecutionIssue::NoUniqueMaximum { event, object });
            (ExecutionReport { issues }, None)
        }
        Err(other) => {
            issues.push(ExecutionIssue::LabelInvalid {
                event: EventId::new("?"),
                reason: other.to_string(),
            });
            (ExecutionReport { issues }, None)
        }
        Ok(sem) => {
            if sem.is_extend_ordered() {
                for e in 0..p.len() {
                    if let Some(input) = p.label(e).input() {
                        if !sem.derivable_before(e, input) {
                            issues.push(ExecutionIssue::InputNotDerivable {
                                event: p.id(e).clone(),
                                input: input.clone(),
                            });
                        }
                    }
                }
            }
            (ExecutionReport { issues }, Some(sem))
        }
    }
}
