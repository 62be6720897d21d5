//! Commands accepted by the coordinator and what each one returns.
//!
//! A `Command` names its acting participant explicitly. The HTTP layer fills
//! that field from the caller's token, so a command built in-process and one
//! built from a request are the same value and produce the same events.

use serde::{Deserialize, Serialize};

use crate::approval::{ApprovalSession, Response};
use crate::mailbox::Cursor;
use crate::model::{
    CareCircle, CircleId, GoalSpec, Metric, Notification, NotificationId, NotificationState,
    Participant, ParticipantId, Payload, Role, Schedule, Task, TaskDiff, TaskId,
};
use crate::registry::NotificationTypeSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    RegisterParticipant {
        role: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        domain: Option<String>,
        display_name: String,
    },
    CreateCircle {
        experts: Vec<ParticipantId>,
        patients: Vec<ParticipantId>,
    },
    AddMember {
        circle: CircleId,
        participant: ParticipantId,
    },
    SubmitNotification {
        sender: ParticipantId,
        circle: CircleId,
        type_code: String,
        payload: Payload,
        /// Narrows a patient-addressed notification to one patient of the
        /// circle; all of the circle's patients otherwise.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        patient: Option<ParticipantId>,
    },
    RespondApproval {
        expert: ParticipantId,
        notification: NotificationId,
        verdict: Response,
    },
    CreateTask {
        creator: ParticipantId,
        circle: CircleId,
        patient: ParticipantId,
        instructions: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schedule: Option<Schedule>,
        #[serde(default)]
        goals: Vec<GoalSpec>,
    },
    ChangeTask {
        editor: ParticipantId,
        task: TaskId,
        diff: TaskDiff,
        notify_patient: bool,
    },
    ReportProgress {
        patient: ParticipantId,
        task: TaskId,
        metrics: Vec<Metric>,
    },
    RecordGoalReached {
        patient: ParticipantId,
        task: TaskId,
        label: String,
    },
    RegisterType {
        spec: NotificationTypeSpec,
    },
    Ack {
        mailbox: ParticipantId,
        up_to_seq: u64,
    },
}

impl Command {
    /// The participant on whose authority the command runs; `None` for
    /// administrative commands.
    pub fn actor(&self) -> Option<&ParticipantId> {
        use Command::*;
        match self {
            RegisterParticipant { .. } | CreateCircle { .. } | AddMember { .. } => None,
            RegisterType { .. } => None,
            SubmitNotification { sender, .. } => Some(sender),
            RespondApproval { expert, .. } => Some(expert),
            CreateTask { creator, .. } => Some(creator),
            ChangeTask { editor, .. } => Some(editor),
            ReportProgress { patient, .. } | RecordGoalReached { patient, .. } => Some(patient),
            Ack { mailbox, .. } => Some(mailbox),
        }
    }

    pub fn name(&self) -> &'static str {
        use Command::*;
        match self {
            RegisterParticipant { .. } => "register_participant",
            CreateCircle { .. } => "create_circle",
            AddMember { .. } => "add_member",
            SubmitNotification { .. } => "submit_notification",
            RespondApproval { .. } => "respond_approval",
            CreateTask { .. } => "create_task",
            ChangeTask { .. } => "change_task",
            ReportProgress { .. } => "report_progress",
            RecordGoalReached { .. } => "record_goal_reached",
            RegisterType { .. } => "register_type",
            Ack { .. } => "ack",
        }
    }
}

/// Result of submitting a notification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    pub notification: NotificationId,
    pub state: NotificationState,
    /// Deliveries enqueued by the submission (approval requests included).
    pub deliveries: u64,
}

/// Receipt for an applied task change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskChange {
    pub task_id: TaskId,
    pub editor: ParticipantId,
    pub diff: TaskDiff,
    pub notify_patient: bool,
    pub version: u64,
    /// The T3 or T4 notification emitted for this change.
    pub notification: NotificationId,
}

/// What a command returns. Over HTTP only the inner value is sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Participant(Participant),
    Circle(CareCircle),
    Routing(RoutingOutcome),
    Session(ApprovalSession),
    Task(Task),
    TaskChange(TaskChange),
    Notification(Notification),
    Types(Vec<NotificationTypeSpec>),
    Cursor(Cursor),
}

impl Reply {
    /// Decodes the inner value sent over the wire for `command`.
    pub fn from_wire(command: &Command, value: serde_json::Value) -> serde_json::Result<Reply> {
        use Command::*;
        Ok(match command {
            RegisterParticipant { .. } => Reply::Participant(serde_json::from_value(value)?),
            CreateCircle { .. } | AddMember { .. } => Reply::Circle(serde_json::from_value(value)?),
            SubmitNotification { .. } => Reply::Routing(serde_json::from_value(value)?),
            RespondApproval { .. } => Reply::Session(serde_json::from_value(value)?),
            CreateTask { .. } => Reply::Task(serde_json::from_value(value)?),
            ChangeTask { .. } => Reply::TaskChange(serde_json::from_value(value)?),
            ReportProgress { .. } | RecordGoalReached { .. } => {
                Reply::Notification(serde_json::from_value(value)?)
            }
            RegisterType { .. } => Reply::Types(serde_json::from_value(value)?),
            Ack { .. } => Reply::Cursor(serde_json::from_value(value)?),
        })
    }
}
