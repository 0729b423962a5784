//! JSON documents for systems, executions and quote bundles.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::bundling::QuoteBundle;
use crate::error::{FormatError, PosetError};
use crate::model::{
    validate_system, AttestationSystem, MeasurementValues, ObjectId, PcrId, ValidationReport,
};
use crate::poset::{Event, EventId, EventLabel, EventPoset};
use crate::semantics::label_problem;
use crate::term::Term;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValuesDocument {
    pub good: Vec<String>,
    pub bad: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub objects: Vec<String>,
    #[serde(default)]
    pub rtm: Option<String>,
    #[serde(rename = "M", default)]
    pub measures: Vec<[String; 2]>,
    #[serde(rename = "C", default)]
    pub context: Vec<[String; 2]>,
    #[serde(default)]
    pub tpms: BTreeMap<String, Vec<String>>,
    #[serde(rename = "L", default)]
    pub access: Vec<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mv: Option<BTreeMap<String, ValuesDocument>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventDocument {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub events: Vec<EventDocument>,
    #[serde(default)]
    pub order: Vec<[String; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub quotes: Vec<String>,
}

/// The optional `name` field of any document.
pub fn document_name(text: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    v.get("name")?.as_str().map(str::to_string)
}

fn term_at(path: String, s: &str) -> Result<Term, FormatError> {
    s.parse()
        .map_err(|source| FormatError::Term { path, source })
}

pub fn system_from_document(
    doc: &SystemDocument,
) -> Result<(AttestationSystem, ValidationReport), FormatError> {
    let rtm = doc
        .rtm
        .as_deref()
        .ok_or_else(|| FormatError::field("rtm", "rtm required"))?;
    let mut names = HashSet::new();
    for (i, o) in doc.objects.iter().enumerate() {
        if !names.insert(o.as_str()) {
            return Err(FormatError::field(
                format!("objects[{i}]"),
                format!("duplicate object `{o}`"),
            ));
        }
    }
    let known = |path: String, o: &str| -> Result<ObjectId, FormatError> {
        if names.contains(o) {
            Ok(ObjectId::new(o))
        } else {
            Err(FormatError::field(path, format!("unknown object `{o}`")))
        }
    };
    let rtm = known("rtm".into(), rtm)?;
    let pairs =
        |field: &str, list: &[[String; 2]]| -> Result<Vec<(ObjectId, ObjectId)>, FormatError> {
            list.iter()
                .enumerate()
                .map(|(i, [a, b])| {
                    Ok((
                        known(format!("{field}[{i}][0]"), a)?,
                        known(format!("{field}[{i}][1]"), b)?,
                    ))
                })
                .collect()
        };
    let measures = pairs("M", &doc.measures)?;
    let context = pairs("C", &doc.context)?;
    let mut pcrs = Vec::new();
    for (tpm, regs) in &doc.tpms {
        for r in regs {
            pcrs.push(PcrId::new(tpm, r));
        }
    }
    let pcr_set: BTreeSet<&PcrId> = pcrs.iter().collect();
    let mut access = Vec::new();
    for (i, [o, p]) in doc.access.iter().enumerate() {
        let o = known(format!("L[{i}][0]"), o)?;
        let pcr: PcrId = p
            .parse()
            .map_err(|e: String| FormatError::field(format!("L[{i}][1]"), e))?;
        if !pcr_set.contains(&pcr) {
            return Err(FormatError::field(
                format!("L[{i}][1]"),
                format!("unknown pcr `{pcr}`"),
            ));
        }
        access.push((o, pcr));
    }
    let mut values = BTreeMap::new();
    for (o, v) in doc.mv.iter().flatten() {
        let obj = known(format!("mv.{o}"), o)?;
        let parse = |kind: &str, list: &[String]| -> Result<Vec<Term>, FormatError> {
            list.iter()
                .enumerate()
                .map(|(i, s)| term_at(format!("mv.{o}.{kind}[{i}]"), s))
                .collect()
        };
        values.insert(
            obj,
            MeasurementValues {
                good: parse("good", &v.good)?,
                bad: parse("bad", &v.bad)?,
            },
        );
    }
    let objects = doc.objects.iter().map(ObjectId::new).collect();
    let sys = AttestationSystem::new(objects, rtm, measures, context, pcrs, access, values)?;
    let report = validate_system(&sys);
    Ok((sys, report))
}

/// Parses and validates a system document.
pub fn parse_system(text: &str) -> Result<(AttestationSystem, ValidationReport), FormatError> {
    let doc: SystemDocument = serde_json::from_str(text)?;
    system_from_document(&doc)
}

pub fn system_document(sys: &AttestationSystem, name: Option<String>) -> SystemDocument {
    let pair = |(a, b): &(ObjectId, ObjectId)| [a.to_string(), b.to_string()];
    let mut tpms: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for p in sys.pcrs() {
        tpms.entry(p.tpm.to_string())
            .or_default()
            .push(p.register.to_string());
    }
    let explicit: BTreeMap<String, ValuesDocument> = sys
        .objects()
        .iter()
        .filter(|o| sys.has_explicit_values(o))
        .map(|o| {
            let v = sys.values(o).expect("own object");
            let strings = |ts: &[Term]| ts.iter().map(Term::to_string).collect();
            (
                o.to_string(),
                ValuesDocument {
                    good: strings(&v.good),
                    bad: strings(&v.bad),
                },
            )
        })
        .collect();
    SystemDocument {
        name,
        objects: sys.objects().iter().map(ObjectId::to_string).collect(),
        rtm: Some(sys.rtm().to_string()),
        measures: sys.measures_rel().iter().map(pair).collect(),
        context: sys.declared_context().iter().map(pair).collect(),
        tpms,
        access: sys
            .access()
            .iter()
            .map(|(o, p)| [o.to_string(), p.to_string()])
            .collect(),
        mv: (!explicit.is_empty()).then_some(explicit),
    }
}

pub fn system_to_json(sys: &AttestationSystem, name: Option<String>) -> String {
    serde_json::to_string_pretty(&system_document(sys, name)).expect("plain data")
}

/// Builds the poset of an execution document without checking labels
/// against a system.
pub fn poset_from_document(doc: &ExecutionDocument) -> Result<EventPoset, FormatError> {
    let mut events = Vec::with_capacity(doc.events.len());
    for (i, e) in doc.events.iter().enumerate() {
        let label: EventLabel = e
            .label
            .parse()
            .map_err(|m: String| FormatError::field(format!("events[{i}].label"), m))?;
        events.push(Event::new(&e.id, label));
    }
    let order = doc
        .order
        .iter()
        .map(|[a, b]| (EventId::new(a), EventId::new(b)));
    EventPoset::new(events, order).map_err(|e| match e {
        PosetError::UnknownEvent(id) => {
            let i = doc
                .order
                .iter()
                .position(|[a, b]| a == id.as_str() || b == id.as_str())
                .unwrap_or(0);
            FormatError::field(format!("order[{i}]"), format!("unknown event `{id}`"))
        }
        other => FormatError::Poset(other),
    })
}

pub fn execution_from_document(
    doc: &ExecutionDocument,
    sys: &AttestationSystem,
) -> Result<EventPoset, FormatError> {
    let p = poset_from_document(doc)?;
    for (i, e) in p.events().iter().enumerate() {
        if let Some(reason) = label_problem(&e.label, sys) {
            return Err(FormatError::field(format!("events[{i}].label"), reason));
        }
    }
    Ok(p)
}

/// Parses an execution (or specification) and checks its labels against
/// `sys`.
pub fn parse_execution(text: &str, sys: &AttestationSystem) -> Result<EventPoset, FormatError> {
    let doc: ExecutionDocument = serde_json::from_str(text)?;
    execution_from_document(&doc, sys)
}

/// Cover edges only; the closure is recomputed on load.
pub fn execution_document(p: &EventPoset, name: Option<String>) -> ExecutionDocument {
    ExecutionDocument {
        name,
        events: p
            .events()
            .iter()
            .map(|e| EventDocument {
                id: e.id.to_string(),
                label: e.label.to_string(),
            })
            .collect(),
        order: p
            .cover_edges()
            .into_iter()
            .map(|(a, b)| [p.id(a).to_string(), p.id(b).to_string()])
            .collect(),
    }
}

pub fn execution_to_json(p: &EventPoset, name: Option<String>) -> String {
    serde_json::to_string_pretty(&execution_document(p, name)).expect("plain data")
}

pub fn bundle_from_document(doc: &BundleDocument) -> Result<QuoteBundle, FormatError> {
    let quotes = doc
        .quotes
        .iter()
        .enumerate()
        .map(|(i, q)| term_at(format!("quotes[{i}]"), q))
        .collect::<Result<_, _>>()?;
    Ok(QuoteBundle::new(quotes))
}

pub fn parse_bundle(text: &str) -> Result<QuoteBundle, FormatError> {
    let doc: BundleDocument = serde_json::from_str(text)?;
    bundle_from_document(&doc)
}

pub fn bundle_to_json(b: &QuoteBundle, name: Option<String>) -> String {
    let doc = BundleDocument {
        name,
        quotes: b.quotes.iter().map(Term::to_string).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("plain data")
}
