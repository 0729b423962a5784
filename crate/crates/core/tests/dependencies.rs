mod common;

use std::collections::BTreeSet;

use common::*;
use layercheck_core::measurement::{measures_bottom_up, unsupported_measurements};
use layercheck_core::{dependency_set, ObjectId};

fn set(xs: &[&str]) -> BTreeSet<ObjectId> {
    xs.iter().map(ObjectId::new).collect()
}

#[test]
fn first_and_second_dependencies_of_sys() {
    let sys = system("ms1");
    let o = ObjectId::new("sys");
    assert_eq!(dependency_set(&sys, &o, 1).unwrap(), set(&["vc", "ker"]));
    assert_eq!(dependency_set(&sys, &o, 2).unwrap(), set(&["A1", "A2"]));
    assert_eq!(dependency_set(&sys, &o, 3).unwrap(), set(&["rtm"]));
}

#[test]
fn dependencies_of_lower_layers() {
    let sys = system("ms1");
    assert_eq!(
        dependency_set(&sys, &ObjectId::new("vc"), 1).unwrap(),
        set(&["A1"])
    );
    assert_eq!(
        dependency_set(&sys, &ObjectId::new("ker"), 1).unwrap(),
        set(&["A2"])
    );
    assert_eq!(
        dependency_set(&sys, &ObjectId::new("A1"), 1).unwrap(),
        set(&["rtm"])
    );
    assert!(dependency_set(&sys, &ObjectId::new("rtm"), 1)
        .unwrap()
        .is_empty());
}

#[test]
fn depth_zero_and_unknown_objects_are_errors() {
    let sys = system("ms1");
    assert!(dependency_set(&sys, &ObjectId::new("sys"), 0).is_err());
    assert!(dependency_set(&sys, &ObjectId::new("nope"), 1).is_err());
}

#[test]
fn only_the_first_specification_measures_bottom_up() {
    let sys = system("ms1");
    assert!(measures_bottom_up(&execution("s1", &sys), &sys));
    for name in ["s2", "s3"] {
        let s = execution(name, &sys);
        assert!(!measures_bottom_up(&s, &sys), "{name}");
        assert_eq!(unsupported_measurements(&s, &sys), vec![id("m5")], "{name}");
    }
}
