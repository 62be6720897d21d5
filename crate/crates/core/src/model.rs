//! Domain records: participants, care circles, notifications, tasks and
//! progress reports.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            /// Identifier number `n` in the deterministic sequence for this kind.
            pub fn nth(n: u64) -> Self {
                Self(format!("{}-{}", $prefix, n))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

id_type!(
    /// Identifies a participant and, equally, that participant's mailbox.
    ParticipantId,
    "p"
);
id_type!(CircleId, "c");
id_type!(NotificationId, "n");
id_type!(TaskId, "task");
id_type!(ReportId, "r");
id_type!(DeliveryId, "d");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Expert,
    EndUser,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Expert => f.write_str("Expert"),
            Role::EndUser => f.write_str("EndUser"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    pub role: Role,
    /// Expertise tag such as "nutrition" or "coach". Present iff `role` is
    /// `Expert`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub display_name: String,
    pub active: bool,
}

/// A group of experts jointly supervising one or more patients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CareCircle {
    pub id: CircleId,
    pub experts: BTreeSet<ParticipantId>,
    pub patients: BTreeSet<ParticipantId>,
}

impl CareCircle {
    pub fn contains(&self, who: &ParticipantId) -> bool {
        self.experts.contains(who) || self.patients.contains(who)
    }
}

/// Lifecycle of a notification.
///
/// `Routed -> Delivered` happens once every recipient has acknowledged its
/// delivery. Approval-gated notifications move
/// `AwaitingApproval -> Approved -> Delivered` inside the command that records
/// the last OK, or `AwaitingApproval -> Rejected`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NotificationState {
    Routed,
    AwaitingApproval,
    Approved,
    Rejected,
    Delivered,
}

impl NotificationState {
    pub fn can_move_to(self, next: NotificationState) -> bool {
        use NotificationState::*;
        matches!(
            (self, next),
            (Routed, Delivered)
                | (AwaitingApproval, Approved)
                | (AwaitingApproval, Rejected)
                | (Approved, Delivered)
        )
    }
}

/// Structured reference carried next to a notification's text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ref", rename_all = "snake_case")]
pub enum Attachment {
    TaskChange { task: TaskId, version: u64 },
    Report { task: TaskId, report: ReportId },
    Goal { task: TaskId, label: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Payload {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<Attachment>,
}

impl Payload {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            attachment: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub id: NotificationId,
    pub type_code: String,
    pub sender: ParticipantId,
    pub circle: CircleId,
    pub payload: Payload,
    /// Event-log sequence number of the submitting event.
    pub created_at: u64,
    pub state: NotificationState,
    /// Patients this notification is addressed to, when its audience is the
    /// patient.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub patients: BTreeSet<ParticipantId>,
    /// Direct deliveries not yet acknowledged by their recipient.
    pub outstanding: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub recurrence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Goal {
    pub label: String,
    pub target: String,
    pub reached: bool,
}

/// A goal as an expert defines it; `reached` is only ever set by the patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub label: String,
    pub target: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Active,
    Completed,
    Withdrawn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub circle: CircleId,
    pub patient: ParticipantId,
    pub created_by: ParticipantId,
    pub domain: String,
    pub instructions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    pub goals: Vec<Goal>,
    pub status: TaskStatus,
    pub version: u64,
}

impl Task {
    pub fn goal(&self, label: &str) -> Option<&Goal> {
        self.goals.iter().find(|g| g.label == label)
    }

    /// Apply a replacement diff. Goals are matched by label and keep their
    /// `reached` flag, so a reached goal can never be reset by an edit.
    pub fn apply_diff(&mut self, diff: &TaskDiff) {
        if let Some(instructions) = &diff.instructions {
            self.instructions = instructions.clone();
        }
        if let Some(schedule) = &diff.schedule {
            self.schedule = schedule.clone();
        }
        if let Some(goals) = &diff.goals {
            self.goals = goals
                .iter()
                .map(|g| Goal {
                    label: g.label.clone(),
                    target: g.target.clone(),
                    reached: self.goal(&g.label).is_some_and(|old| old.reached),
                })
                .collect();
        }
        if let Some(status) = diff.status {
            self.status = status;
        }
        self.version += 1;
    }
}

/// Replacement content for a task. Absent fields are left untouched; an
/// all-empty diff still bumps the version.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaskDiff {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instructions: Option<Vec<String>>,
    /// `Some(None)` clears the schedule.
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "double_option"
    )]
    pub schedule: Option<Option<Schedule>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goals: Option<Vec<GoalSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<TaskStatus>,
}

impl TaskDiff {
    pub fn is_empty(&self) -> bool {
        self == &TaskDiff::default()
    }
}

mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T: Serialize, S: Serializer>(
        value: &Option<Option<T>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        match value {
            Some(inner) => inner.serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, T: Deserialize<'de>, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<Option<T>>, D::Error> {
        Option::<T>::deserialize(d).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub id: ReportId,
    pub task: TaskId,
    pub patient: ParticipantId,
    pub metrics: Vec<Metric>,
}
