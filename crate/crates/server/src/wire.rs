//! The request bodies of the HTTP contract and the mapping from a core
//! [`Command`] to the request that carries it.
//!
//! Handlers decode these bodies and rebuild the command with the caller's
//! identity as actor, so `command_of(request_for(c), actor) == c`.

use caremesh_core::{
    CircleId, Command, GoalSpec, Metric, NotificationTypeSpec, ParticipantId, Payload, Response,
    Role, Schedule, TaskDiff,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantBody {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleBody {
    pub experts: Vec<ParticipantId>,
    pub patients: Vec<ParticipantId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberBody {
    pub participant: ParticipantId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotificationBody {
    pub circle: CircleId,
    pub type_code: String,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient: Option<ParticipantId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApprovalBody {
    pub verdict: Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskBody {
    pub circle: CircleId,
    pub patient: ParticipantId,
    pub instructions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub goals: Vec<GoalSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskPatchBody {
    #[serde(default)]
    pub diff: TaskDiff,
    pub notify_patient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportBody {
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AckBody {
    pub up_to_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Post,
    Patch,
}

/// One HTTP request, ready to send.
#[derive(Debug, Clone, PartialEq)]
pub struct WireRequest {
    pub method: Method,
    pub path: String,
    pub body: Value,
    /// Sent with the admin token rather than the actor's.
    pub admin: bool,
}

fn to_value<T: Serialize>(body: &T) -> Value {
    serde_json::to_value(body).expect("request bodies serialize")
}

/// The request that carries `command`. Its actor travels as the bearer token.
pub fn request_for(command: &Command) -> WireRequest {
    use Command::*;
    let (method, path, body, admin) = match command {
        RegisterParticipant {
            role,
            domain,
            display_name,
        } => (
            Method::Post,
            "/participants".to_string(),
            to_value(&ParticipantBody {
                role: *role,
                domain: domain.clone(),
                display_name: display_name.clone(),
            }),
            true,
        ),
        CreateCircle { experts, patients } => (
            Method::Post,
            "/circles".to_string(),
            to_value(&CircleBody {
                experts: experts.clone(),
                patients: patients.clone(),
            }),
            true,
        ),
        AddMember {
            circle,
            participant,
        } => (
            Method::Post,
            format!("/circles/{}/members", encode_segment(circle.as_str())),
            to_value(&MemberBody {
                participant: participant.clone(),
            }),
            true,
        ),
        SubmitNotification {
            circle,
            type_code,
            payload,
            patient,
            ..
        } => (
            Method::Post,
            "/notifications".to_string(),
            to_value(&NotificationBody {
                circle: circle.clone(),
                type_code: type_code.clone(),
                payload: payload.clone(),
                patient: patient.clone(),
            }),
            false,
        ),
        RespondApproval {
            notification,
            verdict,
            ..
        } => (
            Method::Post,
            format!(
                "/notifications/{}/approvals",
                encode_segment(notification.as_str())
            ),
            to_value(&ApprovalBody { verdict: *verdict }),
            false,
        ),
        CreateTask {
            circle,
            patient,
            instructions,
            schedule,
            goals,
            ..
        } => (
            Method::Post,
            "/tasks".to_string(),
            to_value(&TaskBody {
                circle: circle.clone(),
                patient: patient.clone(),
                instructions: instructions.clone(),
                schedule: schedule.clone(),
                goals: goals.clone(),
            }),
            false,
        ),
        ChangeTask {
            task,
            diff,
            notify_patient,
            ..
        } => (
            Method::Patch,
            format!("/tasks/{}", encode_segment(task.as_str())),
            to_value(&TaskPatchBody {
                diff: diff.clone(),
                notify_patient: *notify_patient,
            }),
            false,
        ),
        ReportProgress { task, metrics, .. } => (
            Method::Post,
            format!("/tasks/{}/reports", encode_segment(task.as_str())),
            to_value(&ReportBody {
                metrics: metrics.clone(),
            }),
            false,
        ),
        RecordGoalReached { task, label, .. } => (
            Method::Post,
            format!(
                "/tasks/{}/goals/{}/reached",
                encode_segment(task.as_str()),
                encode_segment(label)
            ),
            Value::Object(Default::default()),
            false,
        ),
        RegisterType { spec } => (
            Method::Post,
            "/types".to_string(),
            to_value::<NotificationTypeSpec>(spec),
            true,
        ),
        Ack { up_to_seq, .. } => (
            Method::Post,
            "/mailbox/ack".to_string(),
            to_value(&AckBody {
                up_to_seq: *up_to_seq,
            }),
            false,
        ),
    };
    WireRequest {
        method,
        path,
        body,
        admin,
    }
}

/// Percent-encodes everything outside the unreserved set.
pub fn encode_segment(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for b in raw.bytes() {
        if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_with_spaces_are_encoded() {
        assert_eq!(encode_segment("run 5k/day"), "run%205k%2Fday");
        assert_eq!(encode_segment("task-3"), "task-3");
    }

    #[test]
    fn goal_path() {
        let r = request_for(&Command::RecordGoalReached {
            patient: ParticipantId::nth(3),
            task: caremesh_core::TaskId::nth(1),
            label: "5 km".into(),
        });
        assert_eq!(r.path, "/tasks/task-1/goals/5%20km/reached");
        assert!(!r.admin);
    }
}
