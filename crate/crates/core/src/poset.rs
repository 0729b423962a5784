//! Labeled events and finite strict partial orders over them.
//!
//! The order is stored twice: as the edges it was built from, and as a
//! closure matrix (`below[j]` holds every `i` with `i ≺ j`) so that order
//! queries are a bit test.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::PosetError;
use crate::model::{ObjectId, PcrId};
use crate::term::{parse_term_prefix, Term};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(Arc<str>);

impl EventId {
    pub fn new(name: impl AsRef<str>) -> EventId {
        EventId(Arc::from(name.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EventId {
    fn from(s: &str) -> EventId {
        EventId::new(s)
    }
}

impl Serialize for EventId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for EventId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<EventId, D::Error> {
        Ok(EventId::new(String::deserialize(d)?))
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventLabel {
    Meas {
        by: ObjectId,
        target: ObjectId,
    },
    Corr(ObjectId),
    Rep(ObjectId),
    AttStart(Term),
    Ext {
        by: ObjectId,
        value: Term,
        pcr: PcrId,
    },
    Quote {
        input: Term,
        pcrs: Vec<PcrId>,
    },
}

impl EventLabel {
    pub fn meas(by: &str, target: &str) -> EventLabel {
        EventLabel::Meas {
            by: ObjectId::new(by),
            target: ObjectId::new(target),
        }
    }

    pub fn corr(o: &str) -> EventLabel {
        EventLabel::Corr(ObjectId::new(o))
    }

    pub fn rep(o: &str) -> EventLabel {
        EventLabel::Rep(ObjectId::new(o))
    }

    pub fn is_adversary(&self) -> bool {
        matches!(self, EventLabel::Corr(_) | EventLabel::Rep(_))
    }

    pub fn is_measurement(&self) -> bool {
        matches!(self, EventLabel::Meas { .. })
    }

    pub fn is_extend(&self) -> bool {
        matches!(self, EventLabel::Ext { .. })
    }

    pub fn is_quote(&self) -> bool {
        matches!(self, EventLabel::Quote { .. })
    }

    /// The object an adversary event acts on.
    pub fn adversary_object(&self) -> Option<&ObjectId> {
        match self {
            EventLabel::Corr(o) | EventLabel::Rep(o) => Some(o),
            _ => None,
        }
    }

    /// The term an event takes from its environment, if any.
    pub fn input(&self) -> Option<&Term> {
        match self {
            EventLabel::Ext { value, .. } => Some(value),
            EventLabel::Quote { input, .. } => Some(input),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EventLabel::Meas { .. } => "meas",
            EventLabel::Corr(_) => "corr",
            EventLabel::Rep(_) => "rep",
            EventLabel::AttStart(_) => "att_start",
            EventLabel::Ext { .. } => "ext",
            EventLabel::Quote { .. } => "quote",
        }
    }
}

impl fmt::Display for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventLabel::Meas { by, target } => write!(f, "meas {by} {target}"),
            EventLabel::Corr(o) => write!(f, "corr {o}"),
            EventLabel::Rep(o) => write!(f, "rep {o}"),
            EventLabel::AttStart(n) => write!(f, "att_start {n}"),
            EventLabel::Ext { by, value, pcr } => write!(f, "ext {by} {pcr} {value}"),
            EventLabel::Quote { input, pcrs } => {
                write!(f, "quote {input}")?;
                for p in pcrs {
                    write!(f, " {p}")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Debug for EventLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for EventLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<EventLabel, String> {
        let s = s.trim();
        let (kind, rest) = s.split_once(char::is_whitespace).unwrap_or((s, ""));
        let rest = rest.trim();
        let words: Vec<&str> = rest.split_whitespace().collect();
        let want = |n: usize| {
            if words.len() == n {
                Ok(())
            } else {
                Err(format!("`{kind}` takes {n} argument(s): `{s}`"))
            }
        };
        let pcr = |w: &str| w.parse::<PcrId>();
        let term = |t: &str| -> Result<(Term, String), String> {
            parse_term_prefix(t)
                .map(|(t, r)| (t, r.to_string()))
                .map_err(|e| format!("bad term in `{s}`: {e}"))
        };
        match kind {
            "meas" => {
                want(2)?;
                Ok(EventLabel::meas(words[0], words[1]))
            }
            "corr" => {
                want(1)?;
                Ok(EventLabel::corr(words[0]))
            }
            "rep" => {
                want(1)?;
                Ok(EventLabel::rep(words[0]))
            }
            "att_start" => {
                let (n, r) = term(rest)?;
                if !r.trim().is_empty() {
                    return Err(format!("trailing input in `{s}`"));
                }
                Ok(EventLabel::AttStart(n))
            }
            "ext" => {
                if words.len() < 3 {
                    return Err(format!("`ext` takes extender, pcr and value: `{s}`"));
                }
                let by = ObjectId::new(words[0]);
                let p = pcr(words[1])?;
                let tail = skip_words(rest, 2);
                let (value, r) = term(tail)?;
                if !r.trim().is_empty() {
                    return Err(format!("trailing input in `{s}`"));
                }
                Ok(EventLabel::Ext { by, value, pcr: p })
            }
            "quote" => {
                let (input, r) = term(rest)?;
                let pcrs = r
                    .split_whitespace()
                    .map(pcr)
                    .collect::<Result<Vec<_>, _>>()?;
                if pcrs.is_empty() {
                    return Err(format!("quote names no pcrs: `{s}`"));
                }
                Ok(EventLabel::Quote { input, pcrs })
            }
            other => Err(format!("unknown event kind `{other}`")),
        }
    }
}

fn skip_words(s: &str, n: usize) -> &str {
    let mut rest = s.trim_start();
    for _ in 0..n {
        rest = match rest.split_once(char::is_whitespace) {
            Some((_, r)) => r.trim_start(),
            None => "",
        };
    }
    rest
}

impl Serialize for EventLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize)]
pub struct Event {
    pub id: EventId,
    pub label: EventLabel,
}

impl Event {
    pub fn new(id: impl AsRef<str>, label: EventLabel) -> Event {
        Event {
            id: EventId::new(id),
            label,
        }
    }
}

/// A finite strict partial order of labeled events. Used both for
/// specifications (no adversary events) and executions.
#[derive(Clone, Debug)]
pub struct EventPoset {
    events: Vec<Event>,
    index: HashMap<EventId, usize>,
    edges: Vec<(usize, usize)>,
    below: Vec<FixedBitSet>,
}

impl PartialEq for EventPoset {
    fn eq(&self, other: &EventPoset) -> bool {
        self.events == other.events && self.below == other.below
    }
}

impl Eq for EventPoset {}

impl EventPoset {
    pub fn empty() -> EventPoset {
        EventPoset {
            events: Vec::new(),
            index: HashMap::new(),
            edges: Vec::new(),
            below: Vec::new(),
        }
    }

    /// Builds a poset from events and `before ≺ after` edges given by id.
    pub fn new(
        events: Vec<Event>,
        order: impl IntoIterator<Item = (EventId, EventId)>,
    ) -> Result<EventPoset, PosetError> {
        let mut index = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(PosetError::DuplicateEvent(e.id.clone()));
            }
        }
        let mut edges = Vec::new();
        for (a, b) in order {
            let i = *index
                .get(&a)
                .ok_or_else(|| PosetError::UnknownEvent(a.clone()))?;
            let j = *index
                .get(&b)
                .ok_or_else(|| PosetError::UnknownEvent(b.clone()))?;
            edges.push((i, j));
        }
        EventPoset::from_parts(events, edges)
    }

    /// Builds a poset from events and index edges.
    pub fn from_parts(
        events: Vec<Event>,
        mut edges: Vec<(usize, usize)>,
    ) -> Result<EventPoset, PosetError> {
        let n = events.len();
        let mut index = HashMap::with_capacity(n);
        for (i, e) in events.iter().enumerate() {
            if index.insert(e.id.clone(), i).is_some() {
                return Err(PosetError::DuplicateEvent(e.id.clone()));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut succ = vec![Vec::new(); n];
        let mut indeg = vec![0usize; n];
        for &(i, j) in &edges {
            if i == j {
                return Err(PosetError::Cyclic(events[i].id.clone()));
            }
            succ[i].push(j);
            indeg[j] += 1;
        }
        let mut below = vec![FixedBitSet::with_capacity(n); n];
        let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut done = 0;
        while let Some(i) = ready.pop() {
            done += 1;
            for &j in &succ[i] {
                let (src, dst) = if i < j {
                    let (lo, hi) = below.split_at_mut(j);
                    (&lo[i], &mut hi[0])
                } else {
                    let (lo, hi) = below.split_at_mut(i);
                    (&hi[0], &mut lo[j])
                };
                dst.union_with(src);
                dst.insert(i);
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(j);
                }
            }
        }
        if done < n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).expect("some event is stuck");
            return Err(PosetError::Cyclic(events[stuck].id.clone()));
        }
        Ok(EventPoset {
            events,
            index,
            edges,
            below,
        })
    }

    /// Totally ordered in the given sequence.
    pub fn chain(events: Vec<Event>) -> EventPoset {
        let edges = (1..events.len()).map(|i| (i - 1, i)).collect();
        EventPoset::from_parts(events, edges).expect("a chain is acyclic")
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, i: usize) -> &Event {
        &self.events[i]
    }

    pub fn label(&self, i: usize) -> &EventLabel {
        &self.events[i].label
    }

    pub fn id(&self, i: usize) -> &EventId {
        &self.events[i].id
    }

    pub fn index_of(&self, id: &EventId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// `i ≺ j`.
    pub fn precedes(&self, i: usize, j: usize) -> bool {
        self.below[j].contains(i)
    }

    pub fn comparable(&self, i: usize, j: usize) -> bool {
        i == j || self.precedes(i, j) || self.precedes(j, i)
    }

    /// Every event strictly below `j`.
    pub fn below(&self, j: usize) -> &FixedBitSet {
        &self.below[j]
    }

    /// Edges as given at construction (sorted, deduplicated).
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Every ordered pair of the strict order.
    pub fn order_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.len() {
            for i in self.below[j].ones() {
                out.push((i, j));
            }
        }
        out.sort_unstable();
        out
    }

    /// The transitive reduction.
    pub fn cover_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.len() {
            for i in self.below[j].ones() {
                let skip = self.below[j]
                    .ones()
                    .any(|k| k != i && self.below[k].contains(i));
                if !skip {
                    out.push((i, j));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Topological order, ties broken by event id.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.len();
        let mut placed = FixedBitSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        let mut by_id: Vec<usize> = (0..n).collect();
        by_id.sort_by(|&a, &b| self.events[a].id.cmp(&self.events[b].id));
        while out.len() < n {
            let next = by_id
                .iter()
                .copied()
                .find(|&i| !placed.contains(i) && self.below[i].is_subset(&placed))
                .expect("acyclic");
            placed.insert(next);
            out.push(next);
        }
        out
    }

    pub fn is_total(&self) -> bool {
        (0..self.len()).all(|i| (0..i).all(|j| self.comparable(i, j)))
    }

    /// Induced subposet on events satisfying `keep`.
    pub fn restrict(&self, keep: impl Fn(&Event) -> bool) -> EventPoset {
        let kept: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.events[i])).collect();
        let mut pos = vec![usize::MAX; self.len()];
        for (k, &i) in kept.iter().enumerate() {
            pos[i] = k;
        }
        let mut edges = Vec::new();
        for &j in &kept {
            for i in self.below[j].ones() {
                if pos[i] != usize::MAX {
                    edges.push((pos[i], pos[j]));
                }
            }
        }
        let events = kept.iter().map(|&i| self.events[i].clone()).collect();
        EventPoset::from_parts(events, edges).expect("restriction of a poset is a poset")
    }

    /// Indices of events with the given label.
    pub fn with_label<'a>(&'a self, label: &'a EventLabel) -> impl Iterator<Item = usize> + 'a {
        (0..self.len()).filter(move |&i| self.events[i].label == *label)
    }

    pub fn labels(&self) -> BTreeSet<&EventLabel> {
        self.events.iter().map(|e| &e.label).collect()
    }

    /// Linear extensions, choosing among available events by id.
    pub fn linear_extensions(&self) -> LinearExtensions<'_> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.events[a].id.cmp(&self.events[b].id));
        self.linear_extensions_by_priority(&order)
    }

    /// Linear extensions in lexicographic order of `priority` (a permutation
    /// of event indices; earlier means tried first).
    pub fn linear_extensions_by_priority(&self, priority: &[usize]) -> LinearExtensions<'_> {
        assert_eq!(priority.len(), self.len());
        LinearExtensions {
            poset: self,
            priority: priority.to_vec(),
            prefix: Vec::with_capacity(self.len()),
            stack: Vec::with_capacity(self.len()),
            placed: FixedBitSet::with_capacity(self.len()),
            state: LinState::Fresh,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum LinState {
    Fresh,
    Running,
    Done,
}

/// Streaming enumeration of linear extensions by backtracking.
pub struct LinearExtensions<'a> {
    poset: &'a EventPoset,
    priority: Vec<usize>,
    prefix: Vec<usize>,
    stack: Vec<(Vec<usize>, usize)>,
    placed: FixedBitSet,
    state: LinState,
}

impl LinearExtensions<'_> {
    fn available(&self) -> Vec<usize> {
        self.priority
            .iter()
            .copied()
            .filter(|&i| !self.placed.contains(i) && self.poset.below[i].is_subset(&self.placed))
            .collect()
    }

    fn descend(&mut self) {
        while self.prefix.len() < self.poset.len() {
            let cands = self.available();
            let first = cands[0];
            self.stack.push((cands, 0));
            self.placed.insert(first);
            self.prefix.push(first);
        }
    }
}

impl Iterator for LinearExtensions<'_> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        match self.state {
            LinState::Done => return None,
            LinState::Fresh => {
                self.state = LinState::Running;
                if self.poset.is_empty() {
                    self.state = LinState::Done;
                    return Some(Vec::new());
                }
                self.descend();
                return Some(self.prefix.clone());
            }
            LinState::Running => {}
        }
        loop {
            let Some(last) = self.prefix.pop() else {
                self.state = LinState::Done;
                return None;
            };
            self.placed.set(last, false);
            let top = self.stack.last_mut().expect("stack mirrors prefix");
            top.1 += 1;
            if top.1 < top.0.len() {
                let pick = top.0[top.1];
                self.placed.insert(pick);
                self.prefix.push(pick);
                self.descend();
                return Some(self.prefix.clone());
            }
            self.stack.pop();
        }
    }
}
