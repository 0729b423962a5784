mod common;

use common::*;
use layercheck_core::format::{
    bundle_to_json, document_name, execution_to_json, parse_bundle, parse_execution, parse_system,
    system_to_json,
};

const EXECUTIONS: [&str; 16] = [
    "s1",
    "s2",
    "s3",
    "e1",
    "e2",
    "e3",
    "e1_1",
    "e1_2",
    "e1_3",
    "e1_4",
    "strategy1_exec",
    "strategy2_exec",
    "strategy3_exec",
    "strategy3_layered",
    "strategy3_measured_first",
    "strategy3_deep",
];

#[test]
fn every_fixture_has_a_name() {
    for name in EXECUTIONS.iter().chain(&[
        "ms1",
        "as1",
        "strategy1_bundle",
        "strategy2_bundle",
        "strategy3_bundle",
    ]) {
        assert!(document_name(&fixture_text(name)).is_some(), "{name}");
    }
}

#[test]
fn systems_survive_a_round_trip() {
    for name in ["ms1", "as1"] {
        let sys = system(name);
        let text = system_to_json(&sys, Some(name.into()));
        let (back, report) = parse_system(&text).unwrap();
        assert!(report.is_ok());
        assert_eq!(system_to_json(&back, Some(name.into())), text);
        assert_eq!(back.measures_rel(), sys.measures_rel());
        assert_eq!(back.declared_context(), sys.declared_context());
        assert_eq!(back.access(), sys.access());
    }
}

#[test]
fn executions_survive_a_round_trip() {
    let sys = system("as1");
    for name in EXECUTIONS {
        let p = execution(name, &sys);
        let text = execution_to_json(&p, None);
        let back = parse_execution(&text, &sys).unwrap();
        assert_eq!(back.events(), p.events(), "{name}");
        assert_eq!(back.order_pairs(), p.order_pairs(), "{name}");
        assert_eq!(execution_to_json(&back, None), text);
    }
}

#[test]
fn bundles_survive_a_round_trip() {
    for name in ["strategy1_bundle", "strategy2_bundle", "strategy3_bundle"] {
        let b = bundle(name);
        let back = parse_bundle(&bundle_to_json(&b, None)).unwrap();
        assert_eq!(back.quotes, b.quotes);
    }
}

#[test]
fn execution_labels_are_checked_against_the_system() {
    let ms = system("ms1");
    let err = parse_execution(&fixture_text("strategy3_exec"), &ms).unwrap_err();
    assert!(err.to_string().contains("events["), "{err}");
}
