use thiserror::Error;

use crate::MemberId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid group parameters: {0}")]
    InvalidParams(String),
    #[error("value {0} is not a group element for this modulus")]
    InvalidKeyValue(String),
    #[error("exponent {0} does not reduce to a valid private share")]
    InvalidShare(String),
    #[error("authentication failed: ciphertext does not open under this key")]
    AuthenticationFailed,

    #[error("member {0} is already present")]
    DuplicateMember(MemberId),
    #[error("unknown member {0}")]
    UnknownMember(MemberId),
    #[error("member {member} does not hold the role required by {event}")]
    RoleMismatch { member: MemberId, event: &'static str },
    #[error("stale epoch: expected {expected}, got {got}")]
    StaleEpoch { expected: u64, got: u64 },
    #[error("rekey message carries no value for {0}")]
    MissingEntry(MemberId),
    #[error("blinded key missing at node {0}")]
    MissingBlindedKey(String),
    #[error("member list is empty")]
    EmptyMemberList,
    #[error("key tree deeper than {0} levels")]
    TreeTooDeep(u32),
    #[error("no group key is established")]
    NoKey,

    #[error("decode error: {0}")]
    Decode(String),
    #[error("line {line}: {message}")]
    Scenario { line: usize, message: String },
    #[error("line {line}: {source}")]
    Event { line: usize, source: Box<Error> },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },
}

impl Error {
    /// The error with any event-line context removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Event { source, .. } => source.root(),
            e => e,
        }
    }
}
