//! Well-supported measurements, bottom-up specifications, and the
//! recent-or-deep classification of avoided detections.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::error::{ClassifyError, SemanticsError};
use crate::model::{AttestationSystem, ObjectId};
use crate::poset::{EventId, EventLabel, EventPoset};
use crate::semantics::{MeasurementClass, Semantics};

/// Position of each event in the id-tie-broken topological order.
fn topo_rank(p: &EventPoset) -> Vec<usize> {
    let mut rank = vec![0; p.len()];
    for (r, i) in p.topological_order().into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

fn meas_target(p: &EventPoset, i: usize) -> Option<(&ObjectId, &ObjectId)> {
    match p.label(i) {
        EventLabel::Meas { by, target } => Some((by, target)),
        _ => None,
    }
}

/// Every prior measurement of a `D¹(target)` member, or `None` when some
/// member has none. Empty for rtm measurements.
pub(crate) fn full_support(
    p: &EventPoset,
    e: usize,
    sys: &AttestationSystem,
) -> Option<Vec<usize>> {
    let (by, target) = meas_target(p, e)?;
    if by == sys.rtm() {
        return Some(Vec::new());
    }
    let t = sys.object_index(target)?;
    let d1 = sys.dependency_indices(t, 1);
    let mut out = Vec::new();
    for o in d1.ones() {
        let obj = &sys.objects()[o];
        let found: Vec<usize> = p
            .below(e)
            .ones()
            .filter(|&i| matches!(meas_target(p, i), Some((_, x)) if x == obj))
            .collect();
        if found.is_empty() {
            return None;
        }
        out.extend(found);
    }
    out.sort_unstable();
    out.dedup();
    Some(out)
}

/// One supporting measurement per `D¹(target)` member (the earliest in
/// topological order), `None` when not well-supported.
pub(crate) fn support_indices(
    p: &EventPoset,
    e: usize,
    sys: &AttestationSystem,
    rank: &[usize],
) -> Option<Vec<usize>> {
    let (by, target) = meas_target(p, e)?;
    if by == sys.rtm() {
        return Some(Vec::new());
    }
    let t = sys.object_index(target)?;
    let mut out = Vec::new();
    for o in sys.dependency_indices(t, 1).ones() {
        let obj = &sys.objects()[o];
        let first = p
            .below(e)
            .ones()
            .filter(|&i| matches!(meas_target(p, i), Some((_, x)) if x == obj))
            .min_by_key(|&i| rank[i])?;
        out.push(first);
    }
    Some(out)
}

/// The support of a measurement event; `None` when it is not well-supported.
pub fn support_of(
    p: &EventPoset,
    e: &EventId,
    sys: &AttestationSystem,
) -> Result<Option<BTreeSet<EventId>>, ClassifyError> {
    let i = p
        .index_of(e)
        .ok_or_else(|| SemanticsError::UnknownEvent(e.clone()))?;
    if !p.label(i).is_measurement() {
        return Err(ClassifyError::NotMeasurement(e.clone()));
    }
    let rank = topo_rank(p);
    Ok(support_indices(p, i, sys, &rank).map(|v| v.into_iter().map(|j| p.id(j).clone()).collect()))
}

pub(crate) fn is_well_supported(p: &EventPoset, e: usize, sys: &AttestationSystem) -> bool {
    full_support(p, e, sys).is_some()
}

/// Measurement events that are not well-supported.
pub fn unsupported_measurements(p: &EventPoset, sys: &AttestationSystem) -> Vec<EventId> {
    (0..p.len())
        .filter(|&i| p.label(i).is_measurement() && !is_well_supported(p, i, sys))
        .map(|i| p.id(i).clone())
        .collect()
}

pub fn measures_bottom_up(p: &EventPoset, sys: &AttestationSystem) -> bool {
    (0..p.len()).all(|i| !p.label(i).is_measurement() || is_well_supported(p, i, sys))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "clause", content = "object", rename_all = "snake_case")]
pub enum WitnessClass {
    Recent(ObjectId),
    Deep(ObjectId),
}

impl fmt::Display for WitnessClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WitnessClass::Recent(o) => write!(f, "recent-{o}"),
            WitnessClass::Deep(o) => write!(f, "deep-{o}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "clause", rename_all = "snake_case")]
pub enum Witness {
    /// `o` was measured, then corrupted, before the avoiding event.
    Recent {
        object: ObjectId,
        measured_at: EventId,
        corrupted_at: EventId,
        /// An attestation start precedes `measured_at`.
        since_nonce: bool,
    },
    /// A two-levels-down dependency was corrupted before the avoiding event.
    Deep {
        object: ObjectId,
        corrupted_at: EventId,
    },
}

impl Witness {
    pub fn class(&self) -> WitnessClass {
        match self {
            Witness::Recent { object, .. } => WitnessClass::Recent(object.clone()),
            Witness::Deep { object, .. } => WitnessClass::Deep(object.clone()),
        }
    }

    pub fn corrupted_at(&self) -> &EventId {
        match self {
            Witness::Recent { corrupted_at, .. } | Witness::Deep { corrupted_at, .. } => {
                corrupted_at
            }
        }
    }
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Witness::Recent {
                object,
                measured_at,
                corrupted_at,
                since_nonce,
            } => {
                write!(f, "recent({object}): {measured_at} < {corrupted_at}")?;
                if *since_nonce {
                    f.write_str(" [since nonce]")?;
                }
                Ok(())
            }
            Witness::Deep {
                object,
                corrupted_at,
            } => write!(f, "deep({object}): {corrupted_at}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AvoidanceVerdict {
    pub event: EventId,
    pub target: ObjectId,
    pub witnesses: Vec<Witness>,
}

/// Witnesses, by event index, for an avoidance at `e` measuring `target`.
pub(crate) fn witness_indices(
    p: &EventPoset,
    e: usize,
    target: &ObjectId,
    sys: &AttestationSystem,
) -> Vec<Witness> {
    let Some(t) = sys.object_index(target) else {
        return Vec::new();
    };
    let corr_before = |o: &ObjectId| -> Vec<usize> {
        p.below(e)
            .ones()
            .filter(|&i| matches!(p.label(i), EventLabel::Corr(x) if x == o))
            .collect()
    };
    let att_before = |m: usize| {
        p.below(m)
            .ones()
            .any(|i| matches!(p.label(i), EventLabel::AttStart(_)))
    };
    let mut out = Vec::new();
    for o in sys.dependency_indices(t, 1).ones() {
        let obj = &sys.objects()[o];
        let corrs = corr_before(obj);
        if corrs.is_empty() {
            continue;
        }
        for m in p.below(e).ones() {
            let Some((by, x)) = meas_target(p, m) else {
                continue;
            };
            if x != obj || !sys.measures(by, obj) {
                continue;
            }
            for &c in &corrs {
                if p.precedes(m, c) {
                    out.push(Witness::Recent {
                        object: obj.clone(),
                        measured_at: p.id(m).clone(),
                        corrupted_at: p.id(c).clone(),
                        since_nonce: att_before(m),
                    });
                }
            }
        }
    }
    for o in sys.dependency_indices(t, 2).ones() {
        let obj = &sys.objects()[o];
        for c in corr_before(obj) {
            out.push(Witness::Deep {
                object: obj.clone(),
                corrupted_at: p.id(c).clone(),
            });
        }
    }
    out
}

/// Classifies one avoidance event. Fails when the event is outside the
/// recent-or-deep hypotheses.
pub fn classify_avoidance(
    p: &EventPoset,
    e: &EventId,
    sys: &AttestationSystem,
) -> Result<AvoidanceVerdict, ClassifyError> {
    let sem = Semantics::new(sys, p)?;
    let i = sem.event_index(e)?;
    let Some((by, target)) = meas_target(p, i) else {
        return Err(ClassifyError::NotMeasurement(e.clone()));
    };
    if by == sys.rtm() {
        return Err(ClassifyError::MeasuredByRtm(e.clone()));
    }
    if !is_well_supported(p, i, sys) {
        return Err(ClassifyError::NotWellSupported(e.clone()));
    }
    let detected = sem.detected();
    if !detected.is_empty() {
        return Err(ClassifyError::DetectsCorruption(
            detected.into_iter().map(|d| p.id(d).clone()).collect(),
        ));
    }
    if sem.class(i) != Some(MeasurementClass::Avoidance) {
        return Err(ClassifyError::NotAvoidance(e.clone()));
    }
    Ok(AvoidanceVerdict {
        event: e.clone(),
        target: target.clone(),
        witnesses: witness_indices(p, i, target, sys),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RecentOrDeepReport {
    /// Detecting measurements. When non-empty the theorem does not apply
    /// and no verdicts are produced.
    pub detected: Vec<EventId>,
    pub verdicts: Vec<AvoidanceVerdict>,
    /// Avoidance events at rtm or non-well-supported measurements.
    pub outside_hypotheses: Vec<EventId>,
    /// Avoidance events within the hypotheses that have no witness.
    pub missing: Vec<EventId>,
}

impl RecentOrDeepReport {
    pub fn holds(&self) -> bool {
        self.missing.is_empty()
    }
}

pub(crate) fn recent_or_deep_with(sem: &Semantics<'_>) -> RecentOrDeepReport {
    let p = sem.poset();
    let sys = sem.system();
    let mut report = RecentOrDeepReport {
        detected: sem
            .detected()
            .into_iter()
            .map(|i| p.id(i).clone())
            .collect(),
        ..Default::default()
    };
    if !report.detected.is_empty() {
        return report;
    }
    for e in sem.avoidances() {
        let (by, target) = meas_target(p, e).expect("avoidance is a measurement");
        if by == sys.rtm() || !is_well_supported(p, e, sys) {
            report.outside_hypotheses.push(p.id(e).clone());
            continue;
        }
        let witnesses = witness_indices(p, e, target, sys);
        if witnesses.is_empty() {
            report.missing.push(p.id(e).clone());
        }
        report.verdicts.push(AvoidanceVerdict {
            event: p.id(e).clone(),
            target: target.clone(),
            witnesses,
        });
    }
    report
}

pub fn check_recent_or_deep(
    p: &EventPoset,
    sys: &AttestationSystem,
) -> Result<RecentOrDeepReport, SemanticsError> {
    let sem = Semantics::new(sys, p)?;
    Ok(recent_or_deep_with(&sem))
}
