//! Analysis of layered measurement and attestation systems.
//!
//! Systems are graphs of objects that measure one another, executions are
//! labeled partial orders of events, and TPM evidence is a symbolic term.
//! The crate checks ordering and bundling strategies on concrete systems and
//! explores bounded adversaries exhaustively.

pub mod bundling;
pub mod dot;
pub mod embed;
pub mod error;
pub mod explore;
pub mod format;
pub mod measurement;
pub mod model;
pub mod poset;
pub mod semantics;
pub mod term;

pub use error::*;
pub use model::{
    dependency_set, relation_closure, validate_system, AttestationSystem, ObjectId, PcrId,
};
pub use poset::{Event, EventId, EventLabel, EventPoset};
pub use semantics::{CorruptionState, Semantics};
pub use term::{derivable, seq_of, seq_view, SeqView, Term};
