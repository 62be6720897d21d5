//! Domain events: the only things ever written to the log.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::approval::{Response, SessionOutcome};
use crate::mailbox::Delivery;
use crate::model::{
    CareCircle, CircleId, Notification, NotificationId, Participant, ParticipantId,
    ProgressReport, Role, Task, TaskDiff, TaskId,
};
use crate::registry::NotificationTypeSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body")]
pub enum EventBody {
    ParticipantRegistered {
        participant: Participant,
    },
    CircleCreated {
        circle: CareCircle,
    },
    MemberAdded {
        circle: CircleId,
        participant: ParticipantId,
        role: Role,
    },
    NotificationSubmitted {
        notification: Notification,
        /// Present iff the type requires approval; opens the session.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        approvers: Option<Vec<ParticipantId>>,
    },
    ApprovalRecorded {
        notification: NotificationId,
        expert: ParticipantId,
        verdict: Response,
    },
    SessionClosed {
        notification: NotificationId,
        outcome: SessionOutcome,
    },
    TaskCreated {
        task: Task,
    },
    TaskChanged {
        task: TaskId,
        editor: ParticipantId,
        version: u64,
        diff: TaskDiff,
        notify_patient: bool,
    },
    ProgressReported {
        report: ProgressReport,
    },
    GoalReached {
        task: TaskId,
        label: String,
    },
    TypeRegistered {
        spec: NotificationTypeSpec,
    },
    DeliveryEnqueued {
        delivery: Delivery,
    },
    DeliveryAcked {
        mailbox: ParticipantId,
        up_to_seq: u64,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        use EventBody::*;
        match self {
            ParticipantRegistered { .. } => "ParticipantRegistered",
            CircleCreated { .. } => "CircleCreated",
            MemberAdded { .. } => "MemberAdded",
            NotificationSubmitted { .. } => "NotificationSubmitted",
            ApprovalRecorded { .. } => "ApprovalRecorded",
            SessionClosed { .. } => "SessionClosed",
            TaskCreated { .. } => "TaskCreated",
            TaskChanged { .. } => "TaskChanged",
            ProgressReported { .. } => "ProgressReported",
            GoalReached { .. } => "GoalReached",
            TypeRegistered { .. } => "TypeRegistered",
            DeliveryEnqueued { .. } => "DeliveryEnqueued",
            DeliveryAcked { .. } => "DeliveryAcked",
        }
    }
}

/// One log record.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainEvent {
    /// Global position in the log, gapless from 1.
    pub seq: u64,
    /// Milliseconds since the Unix epoch when appended. Informational only:
    /// nothing orders or replays by it.
    pub recorded_at: u64,
    pub body: EventBody,
}

impl DomainEvent {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }

    /// `{"body","kind","recorded_at","seq"}` as a JSON object.
    pub fn to_value(&self) -> serde_json::Result<Value> {
        let mut obj = match serde_json::to_value(&self.body)? {
            Value::Object(m) => m,
            _ => unreachable!("adjacently tagged enums serialize to objects"),
        };
        obj.insert("seq".into(), self.seq.into());
        obj.insert("recorded_at".into(), self.recorded_at.into());
        Ok(Value::Object(obj))
    }

    /// The clock-independent part of a record: `{"body","kind","seq"}`.
    pub fn content_value(&self) -> serde_json::Result<Value> {
        let mut v = self.to_value()?;
        if let Value::Object(m) = &mut v {
            m.remove("recorded_at");
        }
        Ok(v)
    }

    pub fn from_value(value: Value) -> Result<Self, String> {
        let Value::Object(mut obj) = value else {
            return Err("record is not an object".into());
        };
        let seq = take_u64(&mut obj, "seq")?;
        let recorded_at = take_u64(&mut obj, "recorded_at")?;
        let body: EventBody =
            serde_json::from_value(Value::Object(obj)).map_err(|e| e.to_string())?;
        Ok(Self {
            seq,
            recorded_at,
            body,
        })
    }
}

fn take_u64(obj: &mut Map<String, Value>, key: &str) -> Result<u64, String> {
    obj.remove(key)
        .and_then(|v| v.as_u64())
        .ok_or_else(|| format!("missing or non-integer {key}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical;

    #[test]
    fn record_shape_is_flat() {
        let ev = DomainEvent {
            seq: 7,
            recorded_at: 0,
            body: EventBody::DeliveryAcked {
                mailbox: ParticipantId::nth(2),
                up_to_seq: 3,
            },
        };
        let s = canonical::value_to_string(&ev.to_value().unwrap());
        assert_eq!(
            s,
            r#"{"body":{"mailbox":"p-2","up_to_seq":3},"kind":"DeliveryAcked","recorded_at":0,"seq":7}"#
        );
        let back = DomainEvent::from_value(serde_json::from_str(&s).unwrap()).unwrap();
        assert_eq!(back, ev);
    }
}
