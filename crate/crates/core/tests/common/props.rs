#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use super::system;
use layercheck_core::explore::{placements_per_extension, Placements};
use layercheck_core::semantics::{
    is_adversary_ordered, is_extend_ordered, touches_object, touches_pcr, validate_execution,
};
use layercheck_core::term::Knowledge;
use layercheck_core::{
    derivable, seq_of, seq_view, AttestationSystem, Event, EventLabel, EventPoset, PcrId,
    Semantics, Term,
};
use proptest::prelude::*;

/// A runner with `cases` cases, seeded deterministically when asked.
pub fn runner(cases: u32, deterministic: bool) -> TestRunner {
    let config = Config {
        failure_persistence: None,
        ..Config::with_cases(cases)
    };
    if deterministic {
        TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
    } else {
        TestRunner::new(config)
    }
}

fn label_pool(sys: &AttestationSystem) -> Vec<EventLabel> {
    let mut pool = Vec::new();
    for (a, b) in sys.measures_rel() {
        pool.push(EventLabel::Meas {
            by: a.clone(),
            target: b.clone(),
        });
    }
    for o in sys.objects() {
        if o != sys.rtm() {
            pool.push(EventLabel::Corr(o.clone()));
            pool.push(EventLabel::Rep(o.clone()));
        }
    }
    for (o, p) in sys.access() {
        for v in ["pub:v1", "pub:v3", "pub:b:vc"] {
            pool.push(EventLabel::Ext {
                by: o.clone(),
                value: v.parse().unwrap(),
                pcr: p.clone(),
            });
        }
    }
    let pcrs: Vec<PcrId> = sys.pcrs().iter().cloned().collect();
    for p in &pcrs {
        pool.push(EventLabel::Quote {
            input: Term::nonce("n"),
            pcrs: vec![p.clone()],
        });
    }
    pool.push(EventLabel::Quote {
        input: Term::nonce("n"),
        pcrs: pcrs[..2].to_vec(),
    });
    pool
}

fn shares_object(a: &EventLabel, b: &EventLabel, sys: &AttestationSystem) -> bool {
    sys.objects()
        .iter()
        .any(|o| touches_object(a, o, sys) && touches_object(b, o, sys))
}

fn shares_pcr(a: &EventLabel, b: &EventLabel, sys: &AttestationSystem) -> bool {
    sys.pcrs()
        .iter()
        .any(|p| touches_pcr(a, p) && touches_pcr(b, p))
}

/// Random edges, then the orderings that make the poset adversary-ordered
/// (and extend-ordered when asked). Every edge goes forward in index order.
fn ordered_poset(
    sys: &AttestationSystem,
    labels: &[EventLabel],
    random: &[bool],
    extend_ordered: bool,
) -> EventPoset {
    let n = labels.len();
    let mut edges = Vec::new();
    let mut r = random.iter().cycle();
    for j in 0..n {
        for i in 0..j {
            let (a, b) = (&labels[i], &labels[j]);
            let adv = (a.is_adversary() || b.is_adversary()) && shares_object(a, b, sys);
            let ext = extend_ordered && !(a.is_quote() && b.is_quote()) && shares_pcr(a, b, sys);
            if adv || ext || *r.next().unwrap() {
                edges.push((i, j));
            }
        }
    }
    let events = labels
        .iter()
        .enumerate()
        .map(|(i, l)| Event::new(format!("e{i}"), l.clone()))
        .collect();
    EventPoset::from_parts(events, edges).unwrap()
}

fn labels_strategy(pool: Vec<EventLabel>, max: usize) -> impl Strategy<Value = Vec<EventLabel>> {
    prop::collection::vec(prop::sample::select(pool), 0..=max)
}

/// The prior adversary events on each touched object have a unique maximum.
fn lemma_one_holds(p: &EventPoset, sys: &AttestationSystem) -> bool {
    (0..p.len()).all(|e| {
        sys.objects()
            .iter()
            .filter(|o| touches_object(p.label(e), o, sys))
            .all(|o| {
                let prior: Vec<usize> = (0..p.len())
                    .filter(|&a| p.precedes(a, e) && p.label(a).adversary_object() == Some(o))
                    .collect();
                let maxima = prior
                    .iter()
                    .filter(|&&a| !prior.iter().any(|&b| p.precedes(a, b)))
                    .count();
                prior.is_empty() || maxima == 1
            })
    })
}

pub fn adversary_ordered_posets_have_unique_maxima(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(
                labels_strategy(label_pool(&system("as1")), 10),
                prop::collection::vec(prop::bool::weighted(0.2), 1..64),
            ),
            |(labels, random)| {
                let sys = system("as1");
                let p = ordered_poset(&sys, &labels, &random, false);
                prop_assert!(is_adversary_ordered(&p, &sys));
                prop_assert!(lemma_one_holds(&p, &sys));
                prop_assert!(Semantics::new(&sys, &p).is_ok());
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn observables_are_invariant_under_linearization(
    runner: &mut TestRunner,
) -> Result<(), String> {
    runner
        .run(
            &(
                labels_strategy(label_pool(&system("as1")), 8),
                prop::collection::vec(prop::bool::weighted(0.2), 1..64),
            ),
            |(labels, random)| {
                let sys = system("as1");
                let p = ordered_poset(&sys, &labels, &random, true);
                prop_assert!(is_extend_ordered(&p));
                let sem = Semantics::new(&sys, &p).unwrap();
                for lin in p.linear_extensions() {
                    let chain =
                        EventPoset::chain(lin.iter().map(|&i| p.event(i).clone()).collect());
                    let csem = Semantics::new(&sys, &chain).unwrap();
                    for e in 0..p.len() {
                        let c = chain.index_of(p.id(e)).unwrap();
                        for &o in sem.touched(e) {
                            prop_assert_eq!(sem.state_at(e, o), csem.state_at(c, o));
                        }
                        for pcr in sys.pcrs().iter().filter(|q| touches_pcr(p.label(e), q)) {
                            prop_assert_eq!(
                                sem.pcr_value(e, pcr).unwrap(),
                                csem.pcr_value(c, pcr).unwrap()
                            );
                        }
                        prop_assert_eq!(sem.output(e), csem.output(c));
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

#[derive(Debug, Clone)]
enum Step {
    /// Extend by the `access` entry, with a public value or the output of
    /// an earlier quote.
    Ext {
        access: usize,
        value: Result<usize, usize>,
    },
    Quote {
        pcrs: Vec<usize>,
    },
}

fn step_strategy() -> impl Strategy<Value = Step> {
    prop_oneof![
        3 => (0usize..4, prop_oneof![(0usize..5).prop_map(Ok), (0usize..4).prop_map(Err)])
            .prop_map(|(access, value)| Step::Ext { access, value }),
        1 => prop::collection::btree_set(0usize..4, 1..=2)
            .prop_map(|s| Step::Quote { pcrs: s.into_iter().collect() }),
    ]
}

/// Builds the steps as a chain, resolving quote references to the outputs
/// of earlier quotes, then relaxes it to the orderings a PCR or an input
/// requires plus random ones.
fn quote_execution(sys: &AttestationSystem, steps: &[Step], random: &[bool]) -> EventPoset {
    let access: Vec<(layercheck_core::ObjectId, PcrId)> = sys.access().iter().cloned().collect();
    let pcrs: Vec<PcrId> = sys.pcrs().iter().cloned().collect();
    let mut events = vec![Event::new("att", EventLabel::AttStart(Term::nonce("n")))];
    let mut quotes: Vec<usize> = Vec::new();
    let mut inputs: Vec<Option<usize>> = vec![None];
    for step in steps {
        let label = match step {
            Step::Ext { access: a, value } => {
                let (by, pcr) = access[*a].clone();
                let value = match value {
                    Ok(v) => {
                        inputs.push(None);
                        Term::public(format!("v{}", v + 1))
                    }
                    Err(q) if !quotes.is_empty() => {
                        let qi = quotes[q % quotes.len()];
                        inputs.push(Some(qi));
                        let chain = EventPoset::chain(events.clone());
                        let sem = Semantics::new(sys, &chain).unwrap();
                        sem.output(qi).unwrap().clone()
                    }
                    Err(_) => {
                        inputs.push(None);
                        Term::public("v1")
                    }
                };
                EventLabel::Ext { by, value, pcr }
            }
            Step::Quote { pcrs: ps } => {
                quotes.push(events.len());
                inputs.push(Some(0));
                EventLabel::Quote {
                    input: Term::nonce("n"),
                    pcrs: ps.iter().map(|&i| pcrs[i].clone()).collect(),
                }
            }
        };
        events.push(Event::new(format!("e{}", events.len()), label));
    }
    let mut edges = Vec::new();
    let mut r = random.iter().cycle();
    for j in 0..events.len() {
        for i in 0..j {
            let (a, b) = (&events[i].label, &events[j].label);
            let pcr = !(a.is_quote() && b.is_quote()) && shares_pcr(a, b, sys);
            if pcr || inputs[j] == Some(i) || *r.next().unwrap() {
                edges.push((i, j));
            }
        }
    }
    EventPoset::from_parts(events, edges).unwrap()
}

pub fn quoted_values_have_ordered_recorders(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(
                prop::collection::vec(step_strategy(), 1..12),
                prop::collection::vec(prop::bool::weighted(0.15), 1..64),
            ),
            |(steps, random)| {
                let sys = system("as1");
                let p = quote_execution(&sys, &steps, &random);
                prop_assert!(validate_execution(&sys, &p).is_valid());
                let sem = Semantics::new(&sys, &p).unwrap();
                for q in (0..p.len()).filter(|&i| p.label(i).is_quote()) {
                    let EventLabel::Quote { pcrs, .. } = p.label(q) else {
                        unreachable!()
                    };
                    for pcr in pcrs {
                        let view = seq_view(&sem.pcr_value(q, pcr).unwrap()).unwrap();
                        let recorders = sem.prior_extends(q, pcr);
                        // Every contained value has a recorder, in containment order.
                        let recorded: Vec<&Term> = recorders
                            .iter()
                            .map(|&x| p.label(x).input().unwrap())
                            .collect();
                        prop_assert_eq!(recorded, view.values.iter().collect::<Vec<_>>());
                        for w in recorders.windows(2) {
                            prop_assert!(p.precedes(w[0], w[1]));
                        }
                        // A quote contained before a value: everything that quote
                        // reported was recorded before that value.
                        for (k, &rk) in recorders.iter().enumerate() {
                            for earlier in &view.values[..k] {
                                let Some(q2) = (0..p.len()).find(|&i| {
                                    p.label(i).is_quote() && sem.output(i) == Some(earlier)
                                }) else {
                                    continue;
                                };
                                let EventLabel::Quote { pcrs: inner, .. } = p.label(q2) else {
                                    unreachable!()
                                };
                                for ip in inner {
                                    for x in sem.prior_extends(q2, ip) {
                                        prop_assert!(p.precedes(x, rk));
                                    }
                                }
                            }
                        }
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

fn term_strategy() -> impl Strategy<Value = Term> {
    let leaf = prop_oneof![
        (0u8..5).prop_map(|i| Term::public(format!("a{i}"))),
        (0u8..3).prop_map(|i| Term::nonce(format!("n{i}"))),
        (0u8..2).prop_map(|i| Term::key(format!("k{i}"))),
        Just(Term::Rst),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::pair(a, b)),
            inner.clone().prop_map(Term::hash),
            (inner, 0u8..2).prop_map(|(m, k)| Term::sig(m, Term::key(format!("k{k}")))),
        ]
    })
}

pub fn seq_round_trips(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(prop::collection::vec(term_strategy(), 0..8),),
            |(values,)| {
                let view = seq_view(&seq_of(&values)).unwrap();
                prop_assert_eq!(view.values, values);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn secrets_cannot_be_forged(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(
                prop::collection::vec(term_strategy(), 0..8),
                term_strategy(),
            ),
            |(base, payload)| {
                let secret_key = Term::key("secret");
                prop_assert!(!derivable(&base, &secret_key));
                prop_assert!(!derivable(&base, &Term::nonce("secret")));
                prop_assert!(!derivable(&base, &Term::sig(payload.clone(), secret_key)));
                prop_assert!(!derivable(
                    &base,
                    &Term::hash(Term::pair(Term::nonce("secret"), payload))
                ));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn derivability_is_monotone_and_closed(runner: &mut TestRunner) -> Result<(), String> {
    runner
        .run(
            &(
                prop::collection::vec(term_strategy(), 1..6),
                prop::collection::vec(term_strategy(), 0..4),
                term_strategy(),
            ),
            |(base, extra, goal)| {
                let mut more = base.clone();
                more.extend(extra);
                if derivable(&base, &goal) {
                    prop_assert!(derivable(&more, &goal));
                }
                for t in &base {
                    prop_assert!(derivable(&base, t));
                    prop_assert!(derivable(&base, &Term::hash(t.clone())));
                    prop_assert!(derivable(&base, &Term::pair(t.clone(), base[0].clone())));
                }
                let k = Knowledge::new(&base);
                prop_assert_eq!(k.derives(&goal), derivable(&base, &goal));
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

/// Distinct words from inserting `k` letters into a fixed base word, by
/// recursive insertion at every position.
fn brute_force_words(n: usize, alphabet: usize, max_adv: usize) -> BTreeSet<Vec<i64>> {
    let base: Vec<i64> = (0..n as i64).collect();
    let mut all = BTreeSet::new();
    let mut frontier: BTreeSet<Vec<i64>> = [base].into_iter().collect();
    for _ in 0..=max_adv {
        all.extend(frontier.iter().cloned());
        let mut next = BTreeSet::new();
        for w in &frontier {
            for pos in 0..=w.len() {
                for l in 0..alphabet {
                    let mut v = w.clone();
                    v.insert(pos, -1 - l as i64);
                    next.insert(v);
                }
            }
        }
        frontier = next;
    }
    all
}

pub fn placement_counts_match_a_brute_force_oracle() {
    for n in 0..=5 {
        for alphabet in 1..=3 {
            for k in 0..=2 {
                let oracle = brute_force_words(n, alphabet, k);
                let words: Vec<Vec<i64>> = Placements::new(n, alphabet, k)
                    .map(|pl| {
                        let mut w = Vec::new();
                        let mut next = 0;
                        for b in 0..n {
                            while next < pl.len() && pl[next].0 == b {
                                w.push(-1 - pl[next].1 as i64);
                                next += 1;
                            }
                            w.push(b as i64);
                        }
                        w.extend(pl[next..].iter().map(|&(_, l)| -1 - l as i64));
                        w
                    })
                    .collect();
                let distinct: BTreeSet<Vec<i64>> = words.iter().cloned().collect();
                assert_eq!(distinct.len(), words.len(), "n={n} l={alphabet} k={k}");
                assert_eq!(distinct, oracle, "n={n} l={alphabet} k={k}");
                assert_eq!(
                    placements_per_extension(n, alphabet, k),
                    oracle.len() as u64
                );
            }
        }
    }
}
