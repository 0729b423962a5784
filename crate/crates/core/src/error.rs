use thiserror::Error;

use crate::model::{ObjectId, PcrId};
use crate::poset::EventId;
use crate::term::{Term, TermParseError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown object `{0}`")]
    UnknownObject(ObjectId),
    #[error("unknown pcr `{0}`")]
    UnknownPcr(PcrId),
    #[error("duplicate object `{0}`")]
    DuplicateObject(ObjectId),
    #[error("dependency depth must be at least 1")]
    ZeroDepth,
    #[error("measurement value {value} is not a public atom")]
    ValueNotPublic { value: Term },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PosetError {
    #[error("duplicate event id `{0}`")]
    DuplicateEvent(EventId),
    #[error("order edge names unknown event `{0}`")]
    UnknownEvent(EventId),
    #[error("order is cyclic (involves `{0}`)")]
    Cyclic(EventId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticsError {
    #[error(
        "poset is not adversary-ordered: `{a}` and `{b}` are incomparable on object `{object}`"
    )]
    NotAdversaryOrdered {
        object: ObjectId,
        a: EventId,
        b: EventId,
    },
    #[error("poset is not extend-ordered: `{a}` and `{b}` are incomparable on pcr `{pcr}`")]
    NotExtendOrdered { pcr: PcrId, a: EventId, b: EventId },
    #[error("no unique maximal prior adversary event for `{object}` at `{event}`")]
    NoUniqueMaximum { event: EventId, object: ObjectId },
    #[error("unknown event `{0}`")]
    UnknownEvent(EventId),
    #[error("event `{event}` is not a {expected} event")]
    WrongKind {
        event: EventId,
        expected: &'static str,
    },
    #[error("event `{event}` does not touch pcr `{pcr}`")]
    DoesNotTouchPcr { event: EventId, pcr: PcrId },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("specification contains adversary event `{0}`")]
    AdversaryInSpec(EventId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClassifyError {
    #[error("`{0}` is not a measurement event")]
    NotMeasurement(EventId),
    #[error("`{0}` is measured by the rtm")]
    MeasuredByRtm(EventId),
    #[error("`{0}` is not well-supported")]
    NotWellSupported(EventId),
    #[error("execution detects corruptions at {0:?}")]
    DetectsCorruption(Vec<EventId>),
    #[error("`{0}` is not an avoidance event")]
    NotAvoidance(EventId),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BundleError {
    #[error("not a quote: {0}")]
    NotAQuote(Term),
    #[error("quote {quote} reports pcr value {value} which is not a hash chain")]
    MalformedChain { quote: usize, value: Term },
    #[error(
        "quote {quote}: no object both measures `{target}` and may extend `{pcr}` (value {value})"
    )]
    Extraction {
        quote: usize,
        pcr: PcrId,
        target: ObjectId,
        value: Term,
    },
    #[error("quote {quote}: measurer of `{target}` on `{pcr}` is ambiguous ({candidates:?})")]
    Ambiguous {
        quote: usize,
        pcr: PcrId,
        target: ObjectId,
        candidates: Vec<ObjectId>,
    },
    #[error("quote {quote} uses a non-nonce input {input}")]
    InputNotNonce { quote: usize, input: Term },
    #[error("specification does not measure bottom-up")]
    NotBottomUp,
    #[error("execution does not produce quote {0}")]
    NotProduced(Term),
    #[error("no extend event records {value} on `{pcr}`")]
    MissingRecorder { pcr: PcrId, value: Term },
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExploreError {
    #[error("budget exhausted after {generated} executions (cap {cap})")]
    BudgetExceeded { generated: u64, cap: u64 },
    #[error("base contains adversary event `{0}`")]
    AdversaryInBase(EventId),
    #[error("base specification does not measure bottom-up")]
    NotBottomUp,
    #[error("scaffold bundle does not comply with the bundling strategy; supply a reference specification")]
    NeedsReference,
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("syntax error: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("{path}: bad term: {source}")]
    Term {
        path: String,
        source: TermParseError,
    },
    #[error(transparent)]
    Poset(#[from] PosetError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl FormatError {
    pub fn field(path: impl Into<String>, message: impl Into<String>) -> FormatError {
        FormatError::Field {
            path: path.into(),
            message: message.into(),
        }
    }
}
