//! Attestation systems: objects, the measures and context relations, TPM
//! registers, the access relation, and measurement-value classes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ModelError;
use crate::term::Term;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(Arc<str>);

impl ObjectId {
    pub fn new(name: impl AsRef<str>) -> ObjectId {
        ObjectId(Arc::from(name.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> ObjectId {
        ObjectId::new(s)
    }
}

impl Serialize for ObjectId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ObjectId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<ObjectId, D::Error> {
        Ok(ObjectId::new(String::deserialize(d)?))
    }
}

/// A register of a TPM, written `tpm.register`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PcrId {
    pub tpm: Arc<str>,
    pub register: Arc<str>,
}

impl PcrId {
    pub fn new(tpm: impl AsRef<str>, register: impl AsRef<str>) -> PcrId {
        PcrId {
            tpm: Arc::from(tpm.as_ref()),
            register: Arc::from(register.as_ref()),
        }
    }

    /// The public atom naming this register inside quotes.
    pub fn atom(&self) -> Term {
        Term::public(self.to_string())
    }

    /// Signing key of the owning TPM.
    pub fn signing_key(&self) -> Term {
        tpm_key(&self.tpm)
    }
}

pub fn tpm_key(tpm: &str) -> Term {
    Term::key(format!("sk_{tpm}"))
}

impl fmt::Display for PcrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.tpm, self.register)
    }
}

impl fmt::Debug for PcrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for PcrId {
    type Err = String;

    fn from_str(s: &str) -> Result<PcrId, String> {
        match s.split_once('.') {
            Some((t, r)) if !t.is_empty() && !r.is_empty() => Ok(PcrId::new(t, r)),
            _ => Err(format!("`{s}` is not of the form tpm.register")),
        }
    }
}

impl Serialize for PcrId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Good and bad measurement values of one object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeasurementValues {
    pub good: Vec<Term>,
    pub bad: Vec<Term>,
}

impl MeasurementValues {
    pub fn defaults(o: &ObjectId) -> MeasurementValues {
        MeasurementValues {
            good: vec![Term::public(format!("g:{o}"))],
            bad: vec![Term::public(format!("b:{o}"))],
        }
    }
}

/// One violated structural requirement of a system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemIssue {
    NotRooted {
        object: ObjectId,
    },
    MeasuresCyclic {
        object: ObjectId,
    },
    MeasuresIntoRtm {
        from: ObjectId,
    },
    ContextCyclic {
        object: ObjectId,
    },
    MeasuresContextCyclic {
        object: ObjectId,
    },
    AccessSeveralTpms {
        object: ObjectId,
        tpms: Vec<String>,
    },
    AccessNotInjective {
        pcr: PcrId,
        objects: Vec<ObjectId>,
    },
    ValuesEmpty {
        object: ObjectId,
        class: &'static str,
    },
    ValuesOverlap {
        object: ObjectId,
        value: Term,
    },
    ValuesShared {
        value: Term,
        objects: Vec<ObjectId>,
    },
}

impl fmt::Display for SystemIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SystemIssue::NotRooted { object } => {
                write!(f, "M is not rooted: `{object}` is unreachable from the rtm")
            }
            SystemIssue::MeasuresCyclic { object } => write!(f, "M+ is cyclic at `{object}`"),
            SystemIssue::MeasuresIntoRtm { from } => write!(f, "M edge into the rtm from `{from}`"),
            SystemIssue::ContextCyclic { object } => write!(f, "C is cyclic at `{object}`"),
            SystemIssue::MeasuresContextCyclic { object } => {
                write!(f, "M ∪ C is cyclic at `{object}`")
            }
            SystemIssue::AccessSeveralTpms { object, tpms } => {
                write!(
                    f,
                    "L gives `{object}` registers of several TPMs: {}",
                    tpms.join(", ")
                )
            }
            SystemIssue::AccessNotInjective { pcr, objects } => {
                let names: Vec<_> = objects.iter().map(|o| o.as_str()).collect();
                write!(
                    f,
                    "L not injective: `{pcr}` is shared by {}",
                    names.join(", ")
                )
            }
            SystemIssue::ValuesEmpty { object, class } => {
                write!(f, "`{object}` has no {class} measurement values")
            }
            SystemIssue::ValuesOverlap { object, value } => {
                write!(f, "{value} is both good and bad for `{object}`")
            }
            SystemIssue::ValuesShared { value, objects } => {
                let names: Vec<_> = objects.iter().map(|o| o.as_str()).collect();
                write!(
                    f,
                    "{value} is a measurement value of several objects: {}",
                    names.join(", ")
                )
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<SystemIssue>,
    /// Normalisations applied at load time (not violations).
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

type Rel = BTreeSet<(ObjectId, ObjectId)>;

/// An attestation system. A plain measurement system is one with no PCRs.
///
/// Immutable once built; `C` is stored transitively closed.
#[derive(Debug, Clone)]
pub struct AttestationSystem {
    objects: Vec<ObjectId>,
    index: HashMap<ObjectId, usize>,
    rtm: ObjectId,
    measures: Rel,
    context: Rel,
    declared_context: Rel,
    pcrs: BTreeSet<PcrId>,
    access: BTreeSet<(ObjectId, PcrId)>,
    values: Vec<MeasurementValues>,
    explicit_values: BTreeSet<ObjectId>,
    value_owner: HashMap<Term, (usize, bool)>,
    measurers: Vec<Vec<usize>>,
    context_of: Vec<Vec<usize>>,
    notes: Vec<String>,
}

impl AttestationSystem {
    /// Builds a system. Only referential problems (unknown names) are
    /// errors; structural ones are reported by [`validate_system`].
    pub fn new(
        objects: Vec<ObjectId>,
        rtm: ObjectId,
        measures: impl IntoIterator<Item = (ObjectId, ObjectId)>,
        context: impl IntoIterator<Item = (ObjectId, ObjectId)>,
        pcrs: impl IntoIterator<Item = PcrId>,
        access: impl IntoIterator<Item = (ObjectId, PcrId)>,
        values: BTreeMap<ObjectId, MeasurementValues>,
    ) -> Result<AttestationSystem, ModelError> {
        let mut index = HashMap::new();
        for (i, o) in objects.iter().enumerate() {
            if index.insert(o.clone(), i).is_some() {
                return Err(ModelError::DuplicateObject(o.clone()));
            }
        }
        let known = |o: &ObjectId| {
            if index.contains_key(o) {
                Ok(())
            } else {
                Err(ModelError::UnknownObject(o.clone()))
            }
        };
        known(&rtm)?;
        let measures: Rel = measures.into_iter().collect();
        let declared_context: Rel = context.into_iter().collect();
        for (a, b) in measures.iter().chain(&declared_context) {
            known(a)?;
            known(b)?;
        }
        let pcrs: BTreeSet<PcrId> = pcrs.into_iter().collect();
        let access: BTreeSet<(ObjectId, PcrId)> = access.into_iter().collect();
        for (o, p) in &access {
            known(o)?;
            if !pcrs.contains(p) {
                return Err(ModelError::UnknownPcr(p.clone()));
            }
        }
        let mut explicit_values = BTreeSet::new();
        for (o, mv) in &values {
            known(o)?;
            explicit_values.insert(o.clone());
            for v in mv.good.iter().chain(&mv.bad) {
                if !matches!(v, Term::Public(_)) {
                    return Err(ModelError::ValueNotPublic { value: v.clone() });
                }
            }
        }
        let values: Vec<MeasurementValues> = objects
            .iter()
            .map(|o| {
                values
                    .get(o)
                    .cloned()
                    .unwrap_or_else(|| MeasurementValues::defaults(o))
            })
            .collect();

        let context = relation_closure(&declared_context);
        let mut notes = Vec::new();
        if context.len() != declared_context.len() {
            let added: Vec<String> = context
                .difference(&declared_context)
                .map(|(a, b)| format!("{a}->{b}"))
                .collect();
            notes.push(format!("C closed transitively; added {}", added.join(", ")));
        }

        let mut value_owner = HashMap::new();
        for (i, mv) in values.iter().enumerate() {
            for v in &mv.bad {
                value_owner.entry(v.clone()).or_insert((i, false));
            }
            for v in &mv.good {
                value_owner.insert(v.clone(), (i, true));
            }
        }
        let n = objects.len();
        let mut measurers = vec![Vec::new(); n];
        for (a, b) in &measures {
            measurers[index[b]].push(index[a]);
        }
        let mut context_of = vec![Vec::new(); n];
        for (a, b) in &context {
            context_of[index[b]].push(index[a]);
        }
        Ok(AttestationSystem {
            objects,
            index,
            rtm,
            measures,
            context,
            declared_context,
            pcrs,
            access,
            values,
            explicit_values,
            value_owner,
            measurers,
            context_of,
            notes,
        })
    }

    pub fn objects(&self) -> &[ObjectId] {
        &self.objects
    }

    pub fn rtm(&self) -> &ObjectId {
        &self.rtm
    }

    pub fn contains(&self, o: &ObjectId) -> bool {
        self.index.contains_key(o)
    }

    pub fn object_index(&self, o: &ObjectId) -> Option<usize> {
        self.index.get(o).copied()
    }

    fn idx(&self, o: &ObjectId) -> Result<usize, ModelError> {
        self.object_index(o)
            .ok_or_else(|| ModelError::UnknownObject(o.clone()))
    }

    pub fn measures_rel(&self) -> &BTreeSet<(ObjectId, ObjectId)> {
        &self.measures
    }

    /// `C`, transitively closed.
    pub fn context_rel(&self) -> &BTreeSet<(ObjectId, ObjectId)> {
        &self.context
    }

    /// `C` as it was given.
    pub fn declared_context(&self) -> &BTreeSet<(ObjectId, ObjectId)> {
        &self.declared_context
    }

    pub fn measures(&self, by: &ObjectId, target: &ObjectId) -> bool {
        self.measures.contains(&(by.clone(), target.clone()))
    }

    pub fn in_context(&self, helper: &ObjectId, of: &ObjectId) -> bool {
        self.context.contains(&(helper.clone(), of.clone()))
    }

    /// `M⁻¹(o)`.
    pub fn measurers_of(&self, o: &ObjectId) -> Vec<ObjectId> {
        match self.object_index(o) {
            Some(i) => self.measurers[i]
                .iter()
                .map(|&j| self.objects[j].clone())
                .collect(),
            None => Vec::new(),
        }
    }

    /// `C⁻¹(o)`.
    pub fn context_of(&self, o: &ObjectId) -> Vec<ObjectId> {
        match self.object_index(o) {
            Some(i) => self.context_of[i]
                .iter()
                .map(|&j| self.objects[j].clone())
                .collect(),
            None => Vec::new(),
        }
    }

    /// `{o} ∪ C⁻¹(o)`: whose regularity a measurement by `o` relies on.
    pub fn support_objects(&self, o: &ObjectId) -> Vec<ObjectId> {
        let mut out = vec![o.clone()];
        out.extend(self.context_of(o));
        out
    }

    pub fn support_indices(&self, o: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(o).chain(self.context_of[o].iter().copied())
    }

    pub fn pcrs(&self) -> &BTreeSet<PcrId> {
        &self.pcrs
    }

    pub fn has_pcr(&self, p: &PcrId) -> bool {
        self.pcrs.contains(p)
    }

    pub fn tpms(&self) -> BTreeSet<Arc<str>> {
        self.pcrs.iter().map(|p| p.tpm.clone()).collect()
    }

    pub fn access(&self) -> &BTreeSet<(ObjectId, PcrId)> {
        &self.access
    }

    pub fn may_extend(&self, o: &ObjectId, p: &PcrId) -> bool {
        self.access.contains(&(o.clone(), p.clone()))
    }

    /// Objects with access to `p`.
    pub fn extenders_of(&self, p: &PcrId) -> Vec<ObjectId> {
        self.access
            .iter()
            .filter(|(_, q)| q == p)
            .map(|(o, _)| o.clone())
            .collect()
    }

    pub fn values(&self, o: &ObjectId) -> Option<&MeasurementValues> {
        self.object_index(o).map(|i| &self.values[i])
    }

    pub fn has_explicit_values(&self, o: &ObjectId) -> bool {
        self.explicit_values.contains(o)
    }

    /// Value a clean measurement of `o` reports.
    pub fn good_value(&self, o: usize) -> &Term {
        &self.values[o].good[0]
    }

    /// Value a detecting measurement of `o` reports.
    pub fn bad_value(&self, o: usize) -> &Term {
        &self.values[o].bad[0]
    }

    /// The object whose measurement values contain `v`, and whether `v` is good.
    pub fn value_owner(&self, v: &Term) -> Option<(&ObjectId, bool)> {
        self.value_owner
            .get(v)
            .map(|&(i, good)| (&self.objects[i], good))
    }

    pub fn is_bad_value(&self, v: &Term) -> bool {
        matches!(self.value_owner.get(v), Some((_, false)))
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// `D¹` of a set of objects given by index.
    pub(crate) fn d1_indices(&self, set: &FixedBitSet) -> FixedBitSet {
        let mut out = FixedBitSet::with_capacity(self.objects.len());
        for o in set.ones() {
            for &m in &self.measurers[o] {
                out.insert(m);
                for &c in &self.context_of[m] {
                    out.insert(c);
                }
            }
        }
        out
    }

    pub(crate) fn dependency_indices(&self, o: usize, depth: usize) -> FixedBitSet {
        let mut set = FixedBitSet::with_capacity(self.objects.len());
        set.insert(o);
        for _ in 0..depth {
            set = self.d1_indices(&set);
        }
        set
    }
}

/// Checks every structural invariant and lists each violation.
pub fn validate_system(sys: &AttestationSystem) -> ValidationReport {
    let mut issues = Vec::new();
    let rtm = sys.rtm();

    // Rootedness: reachability from the rtm through M.
    let mut reached = BTreeSet::from([rtm.clone()]);
    let mut work = vec![rtm.clone()];
    while let Some(o) = work.pop() {
        for (a, b) in sys.measures_rel() {
            if *a == o && reached.insert(b.clone()) {
                work.push(b.clone());
            }
        }
    }
    for o in sys.objects() {
        if !reached.contains(o) {
            issues.push(SystemIssue::NotRooted { object: o.clone() });
        }
    }

    let m_plus = relation_closure(sys.measures_rel());
    for o in sys.objects() {
        if m_plus.contains(&(o.clone(), o.clone())) {
            issues.push(SystemIssue::MeasuresCyclic { object: o.clone() });
        }
    }
    for (a, b) in sys.measures_rel() {
        if b == rtm {
            issues.push(SystemIssue::MeasuresIntoRtm { from: a.clone() });
        }
    }
    for o in sys.objects() {
        if sys.context_rel().contains(&(o.clone(), o.clone())) {
            issues.push(SystemIssue::ContextCyclic { object: o.clone() });
        }
    }
    let union: Rel = sys
        .measures_rel()
        .union(sys.context_rel())
        .cloned()
        .collect();
    let union_plus = relation_closure(&union);
    for o in sys.objects() {
        let key = (o.clone(), o.clone());
        if union_plus.contains(&key) && !m_plus.contains(&key) && !sys.context_rel().contains(&key)
        {
            issues.push(SystemIssue::MeasuresContextCyclic { object: o.clone() });
        }
    }

    let mut tpms_of: BTreeMap<&ObjectId, BTreeSet<String>> = BTreeMap::new();
    let mut owners: BTreeMap<&PcrId, Vec<ObjectId>> = BTreeMap::new();
    for (o, p) in sys.access() {
        tpms_of.entry(o).or_default().insert(p.tpm.to_string());
        owners.entry(p).or_default().push(o.clone());
    }
    for (o, tpms) in tpms_of {
        if tpms.len() > 1 {
            issues.push(SystemIssue::AccessSeveralTpms {
                object: o.clone(),
                tpms: tpms.into_iter().collect(),
            });
        }
    }
    for (p, objs) in owners {
        if objs.len() > 1 {
            issues.push(SystemIssue::AccessNotInjective {
                pcr: p.clone(),
                objects: objs,
            });
        }
    }

    let mut seen: BTreeMap<&Term, BTreeSet<ObjectId>> = BTreeMap::new();
    for o in sys.objects() {
        let mv = sys.values(o).expect("object has values");
        if mv.good.is_empty() {
            issues.push(SystemIssue::ValuesEmpty {
                object: o.clone(),
                class: "good",
            });
        }
        if mv.bad.is_empty() {
            issues.push(SystemIssue::ValuesEmpty {
                object: o.clone(),
                class: "bad",
            });
        }
        for v in &mv.good {
            if mv.bad.contains(v) {
                issues.push(SystemIssue::ValuesOverlap {
                    object: o.clone(),
                    value: v.clone(),
                });
            }
        }
        for v in mv.good.iter().chain(&mv.bad) {
            seen.entry(v).or_default().insert(o.clone());
        }
    }
    for (v, objs) in seen {
        if objs.len() > 1 {
            issues.push(SystemIssue::ValuesShared {
                value: v.clone(),
                objects: objs.into_iter().collect(),
            });
        }
    }

    ValidationReport {
        issues,
        notes: sys.notes().to_vec(),
    }
}

/// `D^i(o)`.
pub fn dependency_set(
    sys: &AttestationSystem,
    o: &ObjectId,
    i: usize,
) -> Result<BTreeSet<ObjectId>, ModelError> {
    if i == 0 {
        return Err(ModelError::ZeroDepth);
    }
    let start = sys.idx(o)?;
    Ok(sys
        .dependency_indices(start, i)
        .ones()
        .map(|j| sys.objects[j].clone())
        .collect())
}

/// Transitive closure of a binary relation.
pub fn relation_closure<T: Ord + Clone>(rel: &BTreeSet<(T, T)>) -> BTreeSet<(T, T)> {
    let nodes: Vec<&T> = rel
        .iter()
        .flat_map(|(a, b)| [a, b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pos = |t: &T| nodes.binary_search(&t).expect("node present");
    let n = nodes.len();
    let mut reach: Vec<FixedBitSet> = vec![FixedBitSet::with_capacity(n); n];
    for (a, b) in rel {
        reach[pos(a)].insert(pos(b));
    }
    // Warshall.
    for k in 0..n {
        let via = reach[k].clone();
        for row in reach.iter_mut() {
            if row.contains(k) {
                row.union_with(&via);
            }
        }
    }
    let mut out = BTreeSet::new();
    for (i, row) in reach.iter().enumerate() {
        for j in row.ones() {
            out.insert((nodes[i].clone(), nodes[j].clone()));
        }
    }
    out
}
