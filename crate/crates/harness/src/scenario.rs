//! Scenario files: line-oriented JSON, one record per line.
//!
//! ```text
//! {"scenario":"approve","golden":"<sha256 of the event log>"}
//! # lines starting with '#' are comments
//! {"cast":"E1","role":"Expert","domain":"nutrition","name":"Ana"}
//! {"cast":"P","role":"EndUser","name":"Pat"}
//! {"at":0,"actor":"admin","op":"create_circle","experts":["E1"],"patients":["P"],"as":"care"}
//! {"at":1,"actor":"E1","op":"submit","circle":"care","type":"T3","text":"hi","expect":{"deliveries":1}}
//! {"at":2,"actor":"P","op":"check_mailbox","count":1}
//! ```
//!
//! The header comes first, then cast lines, then steps. Cast members are
//! registered in file order before the first step, so the n-th cast member
//! is participant `p-n`. A step may bind its result to a name with `as`;
//! later steps refer to circles, notifications and tasks by that name.

use std::collections::BTreeMap;
use std::path::Path;

use caremesh_core::{GoalSpec, Metric, NotificationTypeSpec, Response, Role, Schedule, TaskDiff};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
}

fn at(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Line {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    scenario: String,
    #[serde(default)]
    golden: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CastMember {
    #[serde(rename = "cast")]
    pub alias: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    CreateCircle {
        experts: Vec<String>,
        patients: Vec<String>,
    },
    AddMember {
        circle: String,
        member: String,
    },
    Submit {
        circle: String,
        #[serde(rename = "type")]
        type_code: String,
        text: String,
        #[serde(default)]
        patient: Option<String>,
    },
    Respond {
        notification: String,
        verdict: Response,
    },
    CreateTask {
        circle: String,
        patient: String,
        instructions: Vec<String>,
        #[serde(default)]
        schedule: Option<Schedule>,
        #[serde(default)]
        goals: Vec<GoalSpec>,
    },
    ChangeTask {
        task: String,
        #[serde(default)]
        diff: TaskDiff,
        notify: bool,
    },
    Report {
        task: String,
        metrics: Vec<Metric>,
    },
    GoalReached {
        task: String,
        label: String,
    },
    RegisterType {
        spec: NotificationTypeSpec,
    },
    Ack {
        up_to: u64,
    },
    /// Pull-side check of the actor's mailbox; every given field must match.
    CheckMailbox {
        #[serde(default)]
        count: Option<usize>,
        /// Deliveries per kind, e.g. `{"Direct":1}`.
        #[serde(default)]
        kinds: Option<BTreeMap<String, usize>>,
        /// Type codes of all deliveries, in order.
        #[serde(default)]
        types: Option<Vec<String>>,
        #[serde(default)]
        texts: Option<Vec<String>>,
        /// No delivery may carry one of these type codes.
        #[serde(default)]
        exclude_types: Option<Vec<String>>,
    },
    OpenStream {
        #[serde(default)]
        after: u64,
    },
    DropStream {},
    ReconnectStream {},
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::CreateCircle { .. } => "create_circle",
            Op::AddMember { .. } => "add_member",
            Op::Submit { .. } => "submit",
            Op::Respond { .. } => "respond",
            Op::CreateTask { .. } => "create_task",
            Op::ChangeTask { .. } => "change_task",
            Op::Report { .. } => "report",
            Op::GoalReached { .. } => "goal_reached",
            Op::RegisterType { .. } => "register_type",
            Op::Ack { .. } => "ack",
            Op::CheckMailbox { .. } => "check_mailbox",
            Op::OpenStream { .. } => "open_stream",
            Op::DropStream {} => "drop_stream",
            Op::ReconnectStream {} => "reconnect_stream",
        }
    }
}

/// What a step must produce. An absent expectation means "succeeds".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    /// Error code the step must fail with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Notification state after a submit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<String>,
    /// Session outcome after a response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    /// Deliveries enqueued by a submit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deliveries: Option<u64>,
    /// Task version after a create or change.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    #[serde(skip)]
    pub line: usize,
    pub at: u64,
    pub actor: String,
    #[serde(flatten)]
    pub op: Op,
    #[serde(rename = "as", default, skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expect>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Expected event-log digest, when the scenario has a checked-in golden.
    pub golden: Option<String>,
    pub cast: Vec<CastMember>,
    pub steps: Vec<Step>,
}

pub const ADMIN: &str = "admin";

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ParseError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut header: Option<Header> = None;
        let mut cast: Vec<CastMember> = Vec::new();
        let mut steps: Vec<Step> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let value: Value =
                serde_json::from_str(trimmed).map_err(|e| at(line, e.to_string()))?;
            let Some(obj) = value.as_object() else {
                return Err(at(line, "expected a JSON object"));
            };
            if obj.contains_key("scenario") {
                if header.is_some() {
                    return Err(at(line, "second scenario header"));
                }
                if !cast.is_empty() || !steps.is_empty() {
                    return Err(at(line, "the scenario header must come first"));
                }
                header = Some(serde_json::from_value(value).map_err(|e| at(line, e.to_string()))?);
            } else if obj.contains_key("cast") {
                if header.is_none() {
                    return Err(at(line, "missing scenario header"));
                }
                if !steps.is_empty() {
                    return Err(at(line, "cast lines must precede steps"));
                }
                let member: CastMember =
                    serde_json::from_value(value).map_err(|e| at(line, e.to_string()))?;
                if member.alias == ADMIN || cast.iter().any(|c| c.alias == member.alias) {
                    return Err(at(line, format!("duplicate cast alias {:?}", member.alias)));
                }
                cast.push(member);
            } else {
                if header.is_none() {
                    return Err(at(line, "missing scenario header"));
                }
                let mut step: Step =
                    serde_json::from_value(value).map_err(|e| at(line, e.to_string()))?;
                step.line = line;
                if let Some(prev) = steps.last() {
                    if step.at < prev.at {
                        return Err(at(
                            line,
                            format!("tick {} goes back from {}", step.at, prev.at),
                        ));
                    }
                }
                if step.actor != ADMIN && !cast.iter().any(|c| c.alias == step.actor) {
                    return Err(at(line, format!("actor {:?} is not in the cast", step.actor)));
                }
                steps.push(step);
            }
        }
        let header = header.ok_or_else(|| at(1, "missing scenario header"))?;
        Ok(Scenario {
            name: header.scenario,
            golden: header.golden,
            cast,
            steps,
        })
    }

    /// Participant id of a cast alias; cast members are registered in order.
    pub fn participant_id(&self, alias: &str) -> Option<caremesh_core::ParticipantId> {
        self.cast
            .iter()
            .position(|c| c.alias == alias)
            .map(|i| caremesh_core::ParticipantId::nth(i as u64 + 1))
    }
}
