#![allow(dead_code)]

use layercheck_core::bundling::QuoteBundle;
use layercheck_core::format::{parse_bundle, parse_execution, parse_system};
use layercheck_core::{AttestationSystem, EventId, EventPoset};

pub fn fixture_text(name: &str) -> String {
    let path = format!("{}/../../fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn system(name: &str) -> AttestationSystem {
    let (sys, report) = parse_system(&fixture_text(name)).unwrap();
    assert!(report.is_ok(), "{name}: {report:?}");
    sys
}

pub fn execution(name: &str, sys: &AttestationSystem) -> EventPoset {
    parse_execution(&fixture_text(name), sys).unwrap()
}

pub fn bundle(name: &str) -> QuoteBundle {
    parse_bundle(&fixture_text(name)).unwrap()
}

pub fn id(s: &str) -> EventId {
    EventId::new(s)
}

pub mod props;
