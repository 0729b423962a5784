//! Bounded exhaustive exploration.
//!
//! Executions are enumerated as total orders: every linear extension of the
//! base, with up to `max_adversary_events` corruption or repair events
//! inserted. Corruption states and PCR values only depend on the
//! restriction of an execution to one object or one register, and both are
//! unchanged by linearization, so total orders cover every partial order
//! with the same events.
//!
//! Work is partitioned by base linear extension. Partitions are
//! independent and are merged in enumeration order, so reports do not
//! depend on the worker count.

use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::Serialize;

use crate::bundling::{
    extract_specification, joint_with, reference_spec, JointOptions, JointVerdict, JointWitness,
    QuoteBundle,
};
use crate::embed::find_embedding;
use crate::error::ExploreError;
use crate::measurement::{measures_bottom_up, recent_or_deep_with, RecentOrDeepReport};
use crate::model::{AttestationSystem, ObjectId};
use crate::poset::{Event, EventId, EventLabel, EventPoset};
use crate::semantics::{semantics_if_valid, validate_execution, CorruptionState, Semantics};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExplorationBudget {
    pub max_adversary_events: usize,
    /// Objects the adversary may touch. `None` means every object but rtm.
    pub objects: Option<Vec<ObjectId>>,
    pub include_repairs: bool,
    pub max_executions: Option<u64>,
    pub workers: usize,
}

impl Default for ExplorationBudget {
    fn default() -> ExplorationBudget {
        ExplorationBudget {
            max_adversary_events: 2,
            objects: None,
            include_repairs: true,
            max_executions: None,
            workers: 1,
        }
    }
}

/// Hypotheses that may be switched off when searching for counterexamples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Relax {
    pub prior_meas: bool,
    pub fresh_meas: bool,
    pub bottom_up: bool,
}

impl Relax {
    fn joint_options(self) -> JointOptions {
        JointOptions {
            prior_meas: !self.prior_meas,
            fresh_meas: !self.fresh_meas,
            bottom_up: !self.bottom_up,
            keep_att_start: false,
        }
    }
}

/// The adversary labels available under a budget, in enumeration order.
pub fn adversary_alphabet(sys: &AttestationSystem, budget: &ExplorationBudget) -> Vec<EventLabel> {
    let mut out = Vec::new();
    for o in sys.objects() {
        if o == sys.rtm() {
            continue;
        }
        if let Some(list) = &budget.objects {
            if !list.contains(o) {
                continue;
            }
        }
        out.push(EventLabel::Corr(o.clone()));
        if budget.include_repairs {
            out.push(EventLabel::Rep(o.clone()));
        }
    }
    out
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Words generated from one base linear extension of length `n`.
pub fn placements_per_extension(n: usize, alphabet: usize, max_adv: usize) -> u64 {
    (0..=max_adv as u64)
        .map(|k| binomial(n as u64 + k, k) * (alphabet as u64).pow(k as u32))
        .sum()
}

/// Adversary insertions into one base sequence: for each count `k`, each
/// non-decreasing gap vector, each label vector.
#[derive(Debug, Clone)]
pub struct Placements {
    n: usize,
    alphabet: usize,
    max_adv: usize,
    k: usize,
    gaps: Vec<usize>,
    labels: Vec<usize>,
    started: bool,
    done: bool,
}

impl Placements {
    pub fn new(n: usize, alphabet: usize, max_adv: usize) -> Placements {
        Placements {
            n,
            alphabet,
            max_adv: if alphabet == 0 { 0 } else { max_adv },
            k: 0,
            gaps: Vec::new(),
            labels: Vec::new(),
            started: false,
            done: false,
        }
    }

    fn advance(&mut self) -> bool {
        for i in (0..self.k).rev() {
            if self.labels[i] + 1 < self.alphabet {
                self.labels[i] += 1;
                for l in &mut self.labels[i + 1..] {
                    *l = 0;
                }
                return true;
            }
        }
        for l in &mut self.labels {
            *l = 0;
        }
        for i in (0..self.k).rev() {
            if self.gaps[i] < self.n {
                let g = self.gaps[i] + 1;
                for x in &mut self.gaps[i..] {
                    *x = g;
                }
                return true;
            }
        }
        if self.k < self.max_adv {
            self.k += 1;
            self.gaps = vec![0; self.k];
            self.labels = vec![0; self.k];
            return true;
        }
        false
    }
}

/// One placement: `(gap, label)` per inserted event, gaps non-decreasing.
pub type Placement = Vec<(usize, usize)>;

impl Iterator for Placements {
    type Item = Placement;

    fn next(&mut self) -> Option<Placement> {
        if self.done {
            return None;
        }
        if self.started && !self.advance() {
            self.done = true;
            return None;
        }
        self.started = true;
        Some(
            self.gaps
                .iter()
                .copied()
                .zip(self.labels.iter().copied())
                .collect(),
        )
    }
}

/// An item of a word: a base event index or an alphabet index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Base(usize),
    Adv(usize),
}

fn weave(lin: &[usize], placement: &[(usize, usize)]) -> Vec<Slot> {
    let mut out = Vec::with_capacity(lin.len() + placement.len());
    let mut next = 0;
    for (g, &b) in lin.iter().enumerate() {
        while next < placement.len() && placement[next].0 == g {
            out.push(Slot::Adv(placement[next].1));
            next += 1;
        }
        out.push(Slot::Base(b));
    }
    for &(_, l) in &placement[next..] {
        out.push(Slot::Adv(l));
    }
    out
}

struct Frame<'a> {
    base: &'a EventPoset,
    alphabet: Vec<EventLabel>,
    adv_prefix: String,
    linearizations: Vec<Vec<usize>>,
    per_extension: u64,
}

impl<'a> Frame<'a> {
    fn new(
        sys: &AttestationSystem,
        base: &'a EventPoset,
        budget: &ExplorationBudget,
    ) -> Result<Frame<'a>, ExploreError> {
        if let Some(e) = base.events().iter().find(|e| e.label.is_adversary()) {
            return Err(ExploreError::AdversaryInBase(e.id.clone()));
        }
        let alphabet = adversary_alphabet(sys, budget);
        let mut adv_prefix = String::from("adv");
        while base
            .events()
            .iter()
            .any(|e| e.id.as_str().starts_with(&adv_prefix))
        {
            adv_prefix.insert(0, '_');
        }
        let linearizations: Vec<Vec<usize>> = base.linear_extensions().collect();
        let max_adv = if alphabet.is_empty() {
            0
        } else {
            budget.max_adversary_events
        };
        let per_extension = placements_per_extension(base.len(), alphabet.len(), max_adv);
        let total = per_extension.saturating_mul(linearizations.len() as u64);
        if let Some(cap) = budget.max_executions {
            if total > cap {
                return Err(ExploreError::BudgetExceeded {
                    generated: total,
                    cap,
                });
            }
        }
        Ok(Frame {
            base,
            alphabet,
            adv_prefix,
            linearizations,
            per_extension,
        })
    }

    fn placements(&self, max_adv: usize) -> Placements {
        Placements::new(self.base.len(), self.alphabet.len(), max_adv)
    }

    fn events(&self, word: &[Slot]) -> Vec<Event> {
        let mut adv = 0;
        word.iter()
            .map(|s| match *s {
                Slot::Base(b) => self.base.event(b).clone(),
                Slot::Adv(l) => {
                    adv += 1;
                    Event::new(
                        format!("{}{adv}", self.adv_prefix),
                        self.alphabet[l].clone(),
                    )
                }
            })
            .collect()
    }

    fn poset(&self, lin: &[usize], placement: &[(usize, usize)]) -> EventPoset {
        EventPoset::chain(self.events(&weave(lin, placement)))
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, ExploreError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExploreError::Pool(e.to_string()))
}

/// Every execution of the budget, in enumeration order. Executions that
/// fail validation are skipped.
pub fn enumerate_executions<'a>(
    sys: &'a AttestationSystem,
    base: &'a EventPoset,
    budget: &ExplorationBudget,
) -> Result<Executions<'a>, ExploreError> {
    let frame = Frame::new(sys, base, budget)?;
    let max_adv = budget.max_adversary_events;
    Ok(Executions {
        sys,
        placements: frame.placements(max_adv),
        frame,
        max_adv,
        lin: 0,
        skipped: 0,
    })
}

pub struct Executions<'a> {
    sys: &'a AttestationSystem,
    frame: Frame<'a>,
    placements: Placements,
    max_adv: usize,
    lin: usize,
    skipped: u64,
}

impl Executions<'_> {
    /// Number of words generated before validation.
    pub fn total(&self) -> u64 {
        self.frame.per_extension * self.frame.linearizations.len() as u64
    }

    pub fn skipped_invalid(&self) -> u64 {
        self.skipped
    }
}

impl Iterator for Executions<'_> {
    type Item = EventPoset;

    fn next(&mut self) -> Option<EventPoset> {
        loop {
            let lin = self.frame.linearizations.get(self.lin)?;
            match self.placements.next() {
                Some(pl) => {
                    let p = self.frame.poset(lin, &pl);
                    if validate_execution(self.sys, &p).is_valid() {
                        return Some(p);
                    }
                    self.skipped += 1;
                }
                None => {
                    self.lin += 1;
                    self.placements = self.frame.placements(self.max_adv);
                }
            }
        }
    }
}

/// A concrete execution found during exploration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Sample {
    /// Position in the enumeration, counting skipped words.
    pub index: u64,
    pub events: Vec<Event>,
    pub verdict: String,
}

impl Sample {
    pub fn poset(&self) -> EventPoset {
        EventPoset::chain(self.events.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TheoremReport {
    pub theorem: String,
    pub base_events: usize,
    pub base_linearizations: u64,
    pub adversary_labels: Vec<String>,
    pub max_adversary_events: usize,
    /// Words generated.
    pub generated: u64,
    pub skipped_invalid: u64,
    /// Executions per outcome.
    pub outcomes: BTreeMap<String, u64>,
    /// Witness classes per target object. For recent-or-deep this counts
    /// avoidance verdicts having a witness of the class; for the joint check
    /// it counts deep/recent verdicts.
    pub witness_classes: BTreeMap<String, BTreeMap<String, u64>>,
    /// Distinct witness-class sets per target, for recent-or-deep.
    pub patterns: BTreeMap<String, BTreeMap<String, u64>>,
    pub failures: u64,
    pub first_failure: Option<Sample>,
}

impl TheoremReport {
    pub fn holds(&self) -> bool {
        self.failures == 0
    }

    /// Witness classes seen for avoidances of `target`.
    pub fn classes_for(&self, target: &str) -> Vec<String> {
        self.witness_classes
            .get(target)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default()
    }

    fn absorb(&mut self, part: Partial, offset: u64) {
        self.skipped_invalid += part.skipped;
        for (k, v) in part.outcomes {
            *self.outcomes.entry(k).or_default() += v;
        }
        for (t, m) in part.classes {
            let e = self.witness_classes.entry(t).or_default();
            for (c, v) in m {
                *e.entry(c).or_default() += v;
            }
        }
        for (t, m) in part.patterns {
            let e = self.patterns.entry(t).or_default();
            for (c, v) in m {
                *e.entry(c).or_default() += v;
            }
        }
        self.failures += part.failures;
        if self.first_failure.is_none() {
            self.first_failure = part.first_failure.map(|mut s| {
                s.index += offset;
                s
            });
        }
    }
}

#[derive(Default)]
struct Partial {
    skipped: u64,
    outcomes: BTreeMap<String, u64>,
    classes: BTreeMap<String, BTreeMap<String, u64>>,
    patterns: BTreeMap<String, BTreeMap<String, u64>>,
    failures: u64,
    first_failure: Option<Sample>,
}

impl Partial {
    fn outcome(&mut self, name: &str) {
        *self.outcomes.entry(name.to_string()).or_default() += 1;
    }

    fn class(&mut self, target: &ObjectId, class: String) {
        *self
            .classes
            .entry(target.to_string())
            .or_default()
            .entry(class)
            .or_default() += 1;
    }

    fn fail(&mut self, index: u64, events: impl FnOnce() -> Vec<Event>, verdict: &str) {
        self.failures += 1;
        if self.first_failure.is_none() {
            self.first_failure = Some(Sample {
                index,
                events: events(),
                verdict: verdict.to_string(),
            });
        }
    }
}

fn run_partitions(
    frame: &Frame<'_>,
    budget: &ExplorationBudget,
    theorem: &str,
    work: impl Fn(&[usize]) -> Result<Partial, ExploreError> + Sync,
) -> Result<TheoremReport, ExploreError> {
    let parts: Vec<Result<Partial, ExploreError>> = pool(budget.workers)?.install(|| {
        frame
            .linearizations
            .par_iter()
            .map(|lin| work(lin))
            .collect()
    });
    let mut report = TheoremReport {
        theorem: theorem.to_string(),
        base_events: frame.base.len(),
        base_linearizations: frame.linearizations.len() as u64,
        adversary_labels: frame.alphabet.iter().map(|l| l.to_string()).collect(),
        max_adversary_events: budget.max_adversary_events,
        generated: frame.per_extension * frame.linearizations.len() as u64,
        ..Default::default()
    };
    for (i, part) in parts.into_iter().enumerate() {
        report.absorb(part?, i as u64 * frame.per_extension);
    }
    Ok(report)
}

fn record_recent_or_deep(
    part: &mut Partial,
    r: &RecentOrDeepReport,
    relax_bottom_up: bool,
) -> Option<&'static str> {
    if !r.detected.is_empty() {
        part.outcome("detected");
        return None;
    }
    for v in &r.verdicts {
        let mut classes: Vec<String> = v.witnesses.iter().map(|w| w.class().to_string()).collect();
        classes.sort();
        classes.dedup();
        for c in &classes {
            part.class(&v.target, c.clone());
        }
        let pattern = if classes.is_empty() {
            "none".to_string()
        } else {
            classes.join("+")
        };
        *part
            .patterns
            .entry(v.target.to_string())
            .or_default()
            .entry(pattern)
            .or_default() += 1;
    }
    let failing = !r.missing.is_empty() || (relax_bottom_up && !r.outside_hypotheses.is_empty());
    let name = if failing {
        "unwitnessed"
    } else if !r.verdicts.is_empty() {
        "witnessed"
    } else if !r.outside_hypotheses.is_empty() {
        "outside-hypotheses"
    } else {
        "no-avoidance"
    };
    part.outcome(name);
    failing.then_some(name)
}

/// Checks recent-or-deep over every execution of the budget built on `spec`.
pub fn verify_recent_or_deep(
    sys: &AttestationSystem,
    spec: &EventPoset,
    budget: &ExplorationBudget,
) -> Result<TheoremReport, ExploreError> {
    verify_recent_or_deep_relaxed(sys, spec, budget, Relax::default())
}

/// As [`verify_recent_or_deep`]. With `relax.bottom_up` the specification
/// need not measure bottom-up, and avoidances outside the hypotheses count
/// as failures.
pub fn verify_recent_or_deep_relaxed(
    sys: &AttestationSystem,
    spec: &EventPoset,
    budget: &ExplorationBudget,
    relax: Relax,
) -> Result<TheoremReport, ExploreError> {
    if !relax.bottom_up && !measures_bottom_up(spec, sys) {
        return Err(ExploreError::NotBottomUp);
    }
    recent_or_deep_run(sys, spec, budget, relax.bottom_up)
}

fn recent_or_deep_run(
    sys: &AttestationSystem,
    spec: &EventPoset,
    budget: &ExplorationBudget,
    relax_bottom_up: bool,
) -> Result<TheoremReport, ExploreError> {
    let frame = Frame::new(sys, spec, budget)?;
    run_partitions(&frame, budget, "recent-or-deep", |lin| {
        let mut part = Partial::default();
        for (i, pl) in frame.placements(budget.max_adversary_events).enumerate() {
            let p = frame.poset(lin, &pl);
            let Some(sem) = semantics_if_valid(sys, &p) else {
                part.skipped += 1;
                continue;
            };
            let r = recent_or_deep_with(&sem);
            if let Some(name) = record_recent_or_deep(&mut part, &r, relax_bottom_up) {
                part.fail(i as u64, || p.events().to_vec(), name);
            }
        }
        Ok(part)
    })
}

/// What the joint check is compared against.
#[derive(Debug, Clone)]
pub struct JointSetup {
    pub bundle: QuoteBundle,
    /// Defaults to the core of the bundle's specification.
    pub reference: Option<EventPoset>,
}

fn violation_outcome(prior: bool, fresh: bool) -> String {
    let kinds: Vec<&str> = [(fresh, "fresh-meas"), (prior, "prior-meas")]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, k)| *k)
        .collect();
    format!("assumptions-violated:{}", kinds.join("+"))
}

fn joint_outcome(part: &mut Partial, v: &JointVerdict) -> bool {
    match v {
        JointVerdict::AssumptionsViolated { violations } => {
            let has = |k: &str| violations.iter().any(|x| x.assumption() == k);
            part.outcome(&violation_outcome(has("prior-meas"), has("fresh-meas")));
        }
        other => part.outcome(other.name()),
    }
    match v {
        JointVerdict::Deep {
            witness: JointWitness::Deep { object, target, .. },
        } => part.class(target, format!("deep-{object}")),
        JointVerdict::Recent {
            witness: JointWitness::Recent { object, target, .. },
        } => part.class(target, format!("recent-{object}")),
        _ => {}
    }
    matches!(v, JointVerdict::TheoremFailure)
}

/// Joint check by the generic path: full semantics for every execution.
pub fn verify_joint_strategy_generic(
    sys: &AttestationSystem,
    scaffold: &EventPoset,
    setup: &JointSetup,
    budget: &ExplorationBudget,
    relax: Relax,
) -> Result<TheoremReport, ExploreError> {
    let extracted = extract_specification(sys, &setup.bundle)?;
    let reference = reference_spec(sys, &extracted, setup.reference.as_ref(), false);
    let opts = relax.joint_options();
    let frame = Frame::new(sys, scaffold, budget)?;
    run_partitions(&frame, budget, "joint-strategy", |lin| {
        let mut part = Partial::default();
        for (i, pl) in frame.placements(budget.max_adversary_events).enumerate() {
            let p = frame.poset(lin, &pl);
            let Some(sem) = semantics_if_valid(sys, &p) else {
                part.skipped += 1;
                continue;
            };
            let v = joint_with(&sem, &extracted, &reference, opts)?;
            if joint_outcome(&mut part, &v) {
                part.fail(i as u64, || p.events().to_vec(), v.name());
            }
        }
        Ok(part)
    })
}

/// Checks the joint-strategy guarantee over every execution of the budget
/// built on `scaffold`.
pub fn verify_joint_strategy(
    sys: &AttestationSystem,
    scaffold: &EventPoset,
    setup: &JointSetup,
    budget: &ExplorationBudget,
    relax: Relax,
) -> Result<TheoremReport, ExploreError> {
    let extracted = extract_specification(sys, &setup.bundle)?;
    if setup.reference.is_none() && !relax.bottom_up && !measures_bottom_up(&extracted.spec, sys) {
        return Err(ExploreError::NeedsReference);
    }
    let reference = reference_spec(sys, &extracted, setup.reference.as_ref(), false);
    let opts = relax.joint_options();
    let frame = Frame::new(sys, scaffold, budget)?;
    let engine = FastJoint::new(sys, &frame, &reference, opts);
    run_partitions(&frame, budget, "joint-strategy", |lin| {
        let mut part = Partial::default();
        // Validity, bundle production and the bottom-up and clean-bundle
        // hypotheses do not depend on where adversary events go.
        let plain = frame.poset(lin, &[]);
        let fixed = if validate_execution(sys, &plain).is_valid() {
            let sem = Semantics::new(sys, &plain)?;
            let off = JointOptions {
                prior_meas: false,
                fresh_meas: false,
                ..opts
            };
            match joint_with(&sem, &extracted, &reference, off)? {
                v @ (JointVerdict::NotProduced { .. }
                | JointVerdict::NotBottomUp
                | JointVerdict::IndicatesCorruption) => Some(v),
                _ => None,
            }
        } else {
            part.skipped += frame.per_extension;
            return Ok(part);
        };
        let mut pos = vec![0usize; frame.base.len()];
        let mut word = Vec::with_capacity(frame.base.len() + budget.max_adversary_events);
        for (i, pl) in frame.placements(budget.max_adversary_events).enumerate() {
            if let Some(v) = &fixed {
                part.outcome(v.name());
                continue;
            }
            word.clear();
            word.extend(weave(lin, &pl));
            for (k, s) in word.iter().enumerate() {
                if let Slot::Base(b) = *s {
                    pos[b] = k;
                }
            }
            let v = match engine.verdict(&word, &pos) {
                Ok(v) => v,
                Err((prior, fresh)) => {
                    part.outcome(&violation_outcome(prior, fresh));
                    continue;
                }
            };
            if joint_outcome(&mut part, &v) {
                part.fail(i as u64, || frame.events(&word), v.name());
            }
        }
        Ok(part)
    })
}

/// First execution (in enumeration order) that defeats the property with
/// the given hypotheses switched off.
pub fn find_counterexample(
    sys: &AttestationSystem,
    base: &EventPoset,
    setup: Option<&JointSetup>,
    budget: &ExplorationBudget,
    relax: Relax,
) -> Result<Option<Sample>, ExploreError> {
    let report = match setup {
        Some(s) => verify_joint_strategy(sys, base, s, budget, relax)?,
        None => verify_recent_or_deep_relaxed(sys, base, budget, relax)?,
    };
    Ok(report.first_failure)
}

/// Joint verdicts computed directly on words. Agrees with the generic path
/// for words whose base part has already passed the fixed hypotheses.
struct FastJoint<'a> {
    sys: &'a AttestationSystem,
    frame: &'a Frame<'a>,
    opts: JointOptions,
    /// Per base event: measurement `(by, target)` as object indices.
    meas: Vec<Option<(usize, usize)>>,
    /// Per base event: extend `(by, owner, value is the good output, value
    /// is the bad output)`.
    ext: Vec<Option<(usize, usize, bool, bool)>>,
    /// Alphabet: `(object, corrupts)`.
    adv: Vec<(usize, bool)>,
    d1: Vec<FixedBitSet>,
    d2: Vec<FixedBitSet>,
    support: Vec<Vec<usize>>,
    reference: &'a EventPoset,
    /// Reference event to base event when every reference label occurs
    /// exactly once in the base.
    forced: Option<Vec<usize>>,
    reference_pairs: Vec<(usize, usize)>,
}

impl<'a> FastJoint<'a> {
    fn new(
        sys: &'a AttestationSystem,
        frame: &'a Frame<'a>,
        reference: &'a EventPoset,
        opts: JointOptions,
    ) -> FastJoint<'a> {
        let base = frame.base;
        let idx = |o: &ObjectId| sys.object_index(o).expect("validated");
        let meas = (0..base.len())
            .map(|i| match base.label(i) {
                EventLabel::Meas { by, target } => Some((idx(by), idx(target))),
                _ => None,
            })
            .collect();
        let ext = (0..base.len())
            .map(|i| match base.label(i) {
                EventLabel::Ext { by, value, .. } => sys.value_owner(value).map(|(t, _)| {
                    let t = idx(t);
                    (
                        idx(by),
                        t,
                        value == sys.good_value(t),
                        value == sys.bad_value(t),
                    )
                }),
                _ => None,
            })
            .collect();
        let adv = frame
            .alphabet
            .iter()
            .map(|l| match l {
                EventLabel::Corr(o) => (idx(o), true),
                EventLabel::Rep(o) => (idx(o), false),
                _ => unreachable!("alphabet holds adversary labels"),
            })
            .collect();
        let n = sys.objects().len();
        let d1 = (0..n).map(|t| sys.dependency_indices(t, 1)).collect();
        let d2 = (0..n).map(|t| sys.dependency_indices(t, 2)).collect();
        let support = (0..n).map(|o| sys.support_indices(o).collect()).collect();
        let forced: Option<Vec<usize>> = (0..reference.len())
            .map(|r| {
                let mut hits = base.with_label(reference.label(r));
                match (hits.next(), hits.next()) {
                    (Some(b), None) => Some(b),
                    _ => None,
                }
            })
            .collect();
        FastJoint {
            sys,
            frame,
            opts,
            meas,
            ext,
            adv,
            d1,
            d2,
            support,
            reference,
            forced,
            reference_pairs: reference.order_pairs(),
        }
    }

    /// `Err((prior, fresh))` names the violated assumptions.
    fn verdict(&self, word: &[Slot], pos: &[usize]) -> Result<JointVerdict, (bool, bool)> {
        let n = self.sys.objects().len();
        let mut state = vec![CorruptionState::Regular; n];
        // Per word position: for measurements whether the output is bad, for
        // extends whether the extender is regular.
        let mut bad = vec![false; word.len()];
        let mut regular = vec![true; word.len()];
        let mut corrupt_at = vec![false; word.len()];
        for (k, s) in word.iter().enumerate() {
            match *s {
                Slot::Adv(l) => {
                    let (o, c) = self.adv[l];
                    state[o] = if c {
                        CorruptionState::Corrupt
                    } else {
                        CorruptionState::Regular
                    };
                }
                Slot::Base(b) => {
                    if let Some((by, t)) = self.meas[b] {
                        bad[k] = state[t] == CorruptionState::Corrupt
                            && self.support[by]
                                .iter()
                                .all(|&x| state[x] == CorruptionState::Regular);
                    }
                    if let Some((by, ..)) = self.ext[b] {
                        regular[k] = state[by] == CorruptionState::Regular;
                        corrupt_at[k] = state[by] == CorruptionState::Corrupt;
                    }
                }
            }
        }
        let (mut prior, mut fresh) = (false, false);
        for (k, s) in word.iter().enumerate() {
            let Slot::Base(b) = *s else { continue };
            let Some((by, t, is_good, is_bad)) = self.ext[b] else {
                continue;
            };
            // Latest measurement of the target by the extender.
            let latest = (0..k)
                .rev()
                .find(|&j| matches!(word[j], Slot::Base(m) if self.meas[m] == Some((by, t))));
            if self.opts.prior_meas && regular[k] {
                prior |= match latest {
                    None => true,
                    Some(j) => {
                        if bad[j] {
                            !is_bad
                        } else {
                            !is_good
                        }
                    }
                };
            }
            if self.opts.fresh_meas && !corrupt_at[k] {
                let from = latest.map_or(0, |j| j + 1);
                fresh |= word[from..k].iter().any(|s| {
                    matches!(*s, Slot::Base(m)
                        if matches!(self.meas[m], Some((_, o1)) if self.d1[t].contains(o1)))
                });
            }
        }
        if prior || fresh {
            return Err((prior, fresh));
        }
        if self.admits(word, pos) {
            return Ok(JointVerdict::AdmitsCore {
                embedding: crate::embed::Embedding { pairs: Vec::new() },
            });
        }
        Ok(self
            .deep_or_recent(word)
            .unwrap_or(JointVerdict::TheoremFailure))
    }

    fn admits(&self, word: &[Slot], pos: &[usize]) -> bool {
        match &self.forced {
            Some(map) => self
                .reference_pairs
                .iter()
                .all(|&(i, j)| pos[map[i]] < pos[map[j]]),
            None => {
                let p = EventPoset::chain(self.frame.events(word));
                find_embedding(self.reference, &p).is_some()
            }
        }
    }

    fn deep_or_recent(&self, word: &[Slot]) -> Option<JointVerdict> {
        let objs = self.sys.objects();
        let corr = |o: usize| {
            word.iter()
                .position(|s| matches!(*s, Slot::Adv(l) if self.adv[l] == (o, true)))
        };
        let id = |k: usize| -> EventId { self.frame.events(word)[k].id.clone() };
        for t in 0..objs.len() {
            for o in self.d2[t].ones() {
                if let Some(c) = corr(o) {
                    return Some(JointVerdict::Deep {
                        witness: JointWitness::Deep {
                            object: objs[o].clone(),
                            target: objs[t].clone(),
                            corrupted_at: id(c),
                        },
                    });
                }
            }
        }
        for t in 0..objs.len() {
            for o in self.d1[t].ones() {
                for (c, s) in word.iter().enumerate() {
                    if !matches!(*s, Slot::Adv(l) if self.adv[l] == (o, true)) {
                        continue;
                    }
                    let m = word[..c]
                        .iter()
                        .position(|s| matches!(*s, Slot::Base(b) if matches!(self.meas[b], Some((_, x)) if x == o)));
                    if let Some(m) = m {
                        return Some(JointVerdict::Recent {
                            witness: JointWitness::Recent {
                                object: objs[o].clone(),
                                target: objs[t].clone(),
                                measured_at: id(m),
                                corrupted_at: id(c),
                            },
                        });
                    }
                }
            }
        }
        None
    }
}
