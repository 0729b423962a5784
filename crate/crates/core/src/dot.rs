//! Graphviz rendering of systems and executions.
//!
//! Systems draw measurement edges solid and context edges dotted. Executions
//! draw cover edges; avoidance events get an asterisk and the corruptions
//! that witness them are boxed.

use std::collections::BTreeSet;
use std::fmt::Write;

use crate::measurement::check_recent_or_deep;
use crate::model::AttestationSystem;
use crate::poset::{EventId, EventPoset};
use crate::semantics::semantics_if_valid;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DotAnnotations {
    pub starred: BTreeSet<EventId>,
    pub boxed: BTreeSet<EventId>,
}

fn quoted(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' | '\\' => {
                out.push('\\');
                out.push(c);
            }
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn system_dot(sys: &AttestationSystem, name: &str) -> String {
    let mut out = format!("digraph {} {{\n", quoted(name));
    for o in sys.objects() {
        let shape = if o == sys.rtm() {
            "doublecircle"
        } else {
            "ellipse"
        };
        let _ = writeln!(out, "  {} [shape={shape}];", quoted(o.as_str()));
    }
    for (a, b) in sys.measures_rel() {
        let _ = writeln!(out, "  {} -> {};", quoted(a.as_str()), quoted(b.as_str()));
    }
    for (a, b) in sys.declared_context() {
        let _ = writeln!(
            out,
            "  {} -> {} [style=dotted];",
            quoted(a.as_str()),
            quoted(b.as_str())
        );
    }
    out.push_str("}\n");
    out
}

/// Avoidance events and their witnessing corruptions. Empty when the
/// execution is invalid.
pub fn annotations_for(p: &EventPoset, sys: &AttestationSystem) -> DotAnnotations {
    let mut ann = DotAnnotations::default();
    let Some(sem) = semantics_if_valid(sys, p) else {
        return ann;
    };
    ann.starred = sem
        .avoidances()
        .into_iter()
        .map(|i| p.id(i).clone())
        .collect();
    if let Ok(report) = check_recent_or_deep(p, sys) {
        for v in &report.verdicts {
            for w in &v.witnesses {
                ann.boxed.insert(w.corrupted_at().clone());
            }
        }
    }
    ann
}

pub fn poset_dot(p: &EventPoset, ann: &DotAnnotations, name: &str) -> String {
    let mut out = format!("digraph {} {{\n", quoted(name));
    if p.is_empty() {
        out.push_str("}\n");
        return out;
    }
    out.push_str("  rankdir=BT;\n");
    for e in p.events() {
        let mut label = format!("{}: {}", e.id, e.label);
        if ann.starred.contains(&e.id) {
            label.push('*');
        }
        let shape = if ann.boxed.contains(&e.id) {
            "box"
        } else {
            "plaintext"
        };
        let _ = writeln!(
            out,
            "  {} [label={}, shape={shape}];",
            quoted(e.id.as_str()),
            quoted(&label)
        );
    }
    let mut edges = p.cover_edges();
    edges.sort();
    for (a, b) in edges {
        let _ = writeln!(
            out,
            "  {} -> {};",
            quoted(p.id(a).as_str()),
            quoted(p.id(b).as_str())
        );
    }
    out.push_str("}\n");
    out
}
