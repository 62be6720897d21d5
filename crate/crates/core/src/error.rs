use thiserror::Error;

use crate::model::Role;

/// Every way a coordinator command can be refused.
///
/// [`CoordError::code`] is the stable identifier surfaced verbatim by the HTTP
/// API and matched by scenario expectations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoordError {
    #[error("experts must declare a domain")]
    DomainMissing,
    #[error("end-users cannot carry a domain")]
    DomainForbidden,
    #[error("display name must not be empty")]
    InvalidName,
    #[error("type {type_code} must be sent by a {expected}, not a {actual}")]
    RoleMismatch {
        type_code: String,
        expected: Role,
        actual: Role,
    },
    #[error("participant {participant} is not a member of circle {circle}")]
    NotCircleMember { participant: String, circle: String },
    #[error("participant {0} is not an expert")]
    NotAnExpert(String),
    #[error("participant {0} is inactive")]
    InactiveParticipant(String),
    #[error("unknown notification type {0}")]
    UnknownType(String),
    #[error("no other expert in circle {0} can approve")]
    NoApproversAvailable(String),
    #[error("circle {0} has no experts")]
    NoExpertsInCircle(String),
    #[error("notification has no recipients")]
    NoRecipients,
    #[error("payload is {size} bytes, the limit is {limit}")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("approval session for {0} is closed")]
    SessionClosed(String),
    #[error("{expert} is not an approver of {notification}")]
    NotAnApprover {
        expert: String,
        notification: String,
    },
    #[error("{expert} already responded to {notification}")]
    DuplicateResponse {
        expert: String,
        notification: String,
    },
    #[error("task {0} is not active")]
    TaskNotActive(String),
    #[error("{patient} does not own task {task}")]
    NotTaskOwner { patient: String, task: String },
    #[error("goal {0} was already reached")]
    GoalAlreadyReached(String),
    #[error("task has no goal labelled {0}")]
    UnknownGoal(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("type code {code} is already registered")]
    CodeCollision { code: String },
    #[error("invalid notification type: {reason}")]
    InvalidSpec { reason: String },
    #[error("invalid circle: {0}")]
    InvalidCircle(String),
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
    #[error("unknown circle {0}")]
    UnknownCircle(String),
    #[error("unknown notification {0}")]
    UnknownNotification(String),
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown mailbox {0}")]
    UnknownMailbox(String),
    #[error("ack {requested} is beyond mailbox head {head}")]
    SeqBeyondHead { requested: u64, head: u64 },
    #[error("event log write failed: {0}")]
    StorageFailure(String),
}

impl CoordError {
    pub fn code(&self) -> &'static str {
        use CoordError::*;
        match self {
            DomainMissing => "DomainMissing",
            DomainForbidden => "DomainForbidden",
            InvalidName => "InvalidName",
            RoleMismatch { .. } => "RoleMismatch",
            NotCircleMember { .. } => "NotCircleMember",
            NotAnExpert(_) => "NotAnExpert",
            InactiveParticipant(_) => "InactiveParticipant",
            UnknownType(_) => "UnknownType",
            NoApproversAvailable(_) => "NoApproversAvailable",
            NoExpertsInCircle(_) => "NoExpertsInCircle",
            NoRecipients => "NoRecipients",
            PayloadTooLarge { .. } => "PayloadTooLarge",
            SessionClosed(_) => "SessionClosed",
            NotAnApprover { .. } => "NotAnApprover",
            DuplicateResponse { .. } => "DuplicateResponse",
            TaskNotActive(_) => "TaskNotActive",
            NotTaskOwner { .. } => "NotTaskOwner",
            GoalAlreadyReached(_) => "GoalAlreadyReached",
            UnknownGoal(_) => "UnknownGoal",
            InvalidTask(_) => "InvalidTask",
            InvalidReport(_) => "InvalidReport",
            CodeCollision { .. } => "CodeCollision",
            InvalidSpec { .. } => "InvalidSpec",
            InvalidCircle(_) => "InvalidCircle",
            UnknownParticipant(_) => "UnknownParticipant",
            UnknownCircle(_) => "UnknownCircle",
            UnknownNotification(_) => "UnknownNotification",
            UnknownTask(_) => "UnknownTask",
            UnknownMailbox(_) => "UnknownMailbox",
            SeqBeyondHead { .. } => "SeqBeyondHead",
            StorageFailure(_) => "StorageFailure",
        }
    }
}

/// Failures reading or writing the event log.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event log I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt event log record at seq {seq}: {reason}")]
    CorruptRecord { seq: u64, reason: String },
    #[error("unsupported event log header {0:?}")]
    BadHeader(String),
    #[error("event could not be encoded: {0}")]
    Encode(#[from] serde_json::Error),
}

impl StoreError {
    pub(crate) fn corrupt(seq: u64, reason: impl Into<String>) -> Self {
        StoreError::CorruptRecord {
            seq,
            reason: reason.into(),
        }
    }

    /// Seq of the offending record, when the failure is a corrupt record.
    pub fn corrupt_seq(&self) -> Option<u64> {
        match self {
            StoreError::CorruptRecord { seq, .. } => Some(*seq),
            _ => None,
        }
    }
}
