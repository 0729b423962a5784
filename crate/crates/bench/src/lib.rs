//! Fixture loading shared by the benchmarks.

use std::path::PathBuf;

use layercheck_core::bundling::QuoteBundle;
use layercheck_core::format::{parse_bundle, parse_execution, parse_system};
use layercheck_core::{AttestationSystem, EventPoset};

fn text(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{name}.json"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn system(name: &str) -> AttestationSystem {
    parse_system(&text(name)).expect("fixture system").0
}

pub fn execution(name: &str, sys: &AttestationSystem) -> EventPoset {
    parse_execution(&text(name), sys).expect("fixture execution")
}

pub fn bundle(name: &str) -> QuoteBundle {
    parse_bundle(&text(name)).expect("fixture bundle")
}
