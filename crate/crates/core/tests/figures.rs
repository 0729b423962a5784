mod common;

use common::*;
use layercheck_core::embed::admits;
use layercheck_core::measurement::{check_recent_or_deep, classify_avoidance, WitnessClass};
use layercheck_core::semantics::validate_execution;
use layercheck_core::{AttestationSystem, ObjectId};

fn classes(sys: &AttestationSystem, exec: &str, event: &str) -> Vec<WitnessClass> {
    let p = execution(exec, sys);
    let v = classify_avoidance(&p, &id(event), sys).unwrap();
    let mut out: Vec<WitnessClass> = v.witnesses.iter().map(|w| w.class()).collect();
    out.sort();
    out.dedup();
    out
}

fn recent(o: &str) -> WitnessClass {
    WitnessClass::Recent(ObjectId::new(o))
}

fn deep(o: &str) -> WitnessClass {
    WitnessClass::Deep(ObjectId::new(o))
}

#[test]
fn example_executions_validate() {
    let sys = system("ms1");
    for name in ["e1", "e2", "e3", "e1_1", "e1_2", "e1_3", "e1_4"] {
        let report = validate_execution(&sys, &execution(name, &sys));
        assert!(report.is_valid(), "{name}: {report:?}");
    }
}

#[test]
fn only_the_first_example_admits_the_first_specification() {
    let sys = system("ms1");
    let s1 = execution("s1", &sys);
    let emb = admits(&s1, &execution("e1", &sys))
        .unwrap()
        .expect("embedding");
    for e in ["m1", "m2", "m3", "m4", "m5", "att"] {
        assert_eq!(emb.image(&id(e)), Some(&id(e)));
    }
    assert!(admits(&s1, &execution("e2", &sys)).unwrap().is_none());
    assert!(admits(&s1, &execution("e3", &sys)).unwrap().is_none());
}

#[test]
fn the_other_examples_admit_their_own_specifications() {
    let sys = system("ms1");
    assert!(admits(&execution("s3", &sys), &execution("e2", &sys))
        .unwrap()
        .is_some());
    assert!(admits(&execution("s2", &sys), &execution("e3", &sys))
        .unwrap()
        .is_some());
}

#[test]
fn recent_corruption_of_the_virus_checker() {
    let sys = system("ms1");
    assert_eq!(classes(&sys, "e1_1", "m5"), vec![recent("vc")]);
}

#[test]
fn recent_corruption_of_the_kernel() {
    let sys = system("ms1");
    assert_eq!(classes(&sys, "e1_2", "m5"), vec![recent("ker")]);
}

#[test]
fn deep_corruption_through_the_first_layer() {
    let sys = system("ms1");
    assert_eq!(classes(&sys, "e1_3", "m5"), vec![deep("A1")]);
    assert_eq!(classes(&sys, "e1_3", "m3"), vec![recent("A1")]);
}

#[test]
fn deep_corruption_through_the_second_layer() {
    let sys = system("ms1");
    assert_eq!(classes(&sys, "e1_4", "m5"), vec![deep("A2")]);
    assert_eq!(classes(&sys, "e1_4", "m4"), vec![recent("A2")]);
}

#[test]
fn boxed_corruptions_match_the_witnesses() {
    let sys = system("ms1");
    let cases = [
        ("e1_1", vec!["cvc"]),
        ("e1_2", vec!["cker"]),
        ("e1_3", vec!["cA1"]),
        ("e1_4", vec!["cA2"]),
    ];
    for (name, boxed) in cases {
        let p = execution(name, &sys);
        let report = check_recent_or_deep(&p, &sys).unwrap();
        assert!(report.holds(), "{name}");
        let m5 = report
            .verdicts
            .iter()
            .find(|v| v.event == id("m5"))
            .unwrap();
        let got: Vec<String> = m5
            .witnesses
            .iter()
            .map(|w| w.corrupted_at().to_string())
            .collect();
        assert_eq!(got, boxed, "{name}");
    }
}

#[test]
fn first_example_avoids_through_a_recent_corruption() {
    let sys = system("ms1");
    assert_eq!(classes(&sys, "e1", "m5"), vec![recent("vc")]);
}
