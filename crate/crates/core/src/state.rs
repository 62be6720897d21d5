//! Materialized coordinator state: a pure fold over the event log.
//!
//! Every map is ordered, so the canonical serialization of a `State` is a
//! function of the events alone. Replaying a log and running the same
//! commands live give byte-identical canonical output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::approval::{ApprovalSession, SessionOutcome};
use crate::canonical;
use crate::event::{DomainEvent, EventBody};
use crate::mailbox::{DeliveryKind, Mailbox, Mailboxes};
use crate::model::{
    CareCircle, CircleId, Notification, NotificationId, NotificationState, Participant,
    ParticipantId, ProgressReport, ReportId, Role, Task, TaskId,
};
use crate::registry::TypeRegistry;

/// Issued-id counters, one per entity kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub participants: u64,
    pub circles: u64,
    pub notifications: u64,
    pub tasks: u64,
    pub reports: u64,
    pub deliveries: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    head: u64,
    counters: Counters,
    participants: BTreeMap<ParticipantId, Participant>,
    circles: BTreeMap<CircleId, CareCircle>,
    types: TypeRegistry,
    notifications: BTreeMap<NotificationId, Notification>,
    sessions: BTreeMap<NotificationId, ApprovalSession>,
    tasks: BTreeMap<TaskId, Task>,
    reports: BTreeMap<ReportId, ProgressReport>,
    mailboxes: Mailboxes,
}

impl State {
    /// Seq of the last applied event.
    pub fn head(&self) -> u64 {
        self.head
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn participant(&self, id: &ParticipantId) -> Option<&Participant> {
        self.participants.get(id)
    }

    pub fn participants(&self) -> impl Iterator<Item = &Participant> {
        self.participants.values()
    }

    pub fn circle(&self, id: &CircleId) -> Option<&CareCircle> {
        self.circles.get(id)
    }

    pub fn circles(&self) -> impl Iterator<Item = &CareCircle> {
        self.circles.values()
    }

    pub fn types(&self) -> &TypeRegistry {
        &self.types
    }

    pub fn notification(&self, id: &NotificationId) -> Option<&Notification> {
        self.notifications.get(id)
    }

    pub fn notifications(&self) -> impl Iterator<Item = &Notification> {
        self.notifications.values()
    }

    pub fn session(&self, id: &NotificationId) -> Option<&ApprovalSession> {
        self.sessions.get(id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &ApprovalSession> {
        self.sessions.values()
    }

    pub fn task(&self, id: &TaskId) -> Option<&Task> {
        self.tasks.get(id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn report(&self, id: &ReportId) -> Option<&ProgressReport> {
        self.reports.get(id)
    }

    pub fn mailbox(&self, owner: &ParticipantId) -> Option<&Mailbox> {
        self.mailboxes.get(owner)
    }

    pub fn mailboxes(&self) -> &Mailboxes {
        &self.mailboxes
    }

    /// Canonical serialization; the basis of replay comparisons.
    pub fn canonical(&self) -> String {
        canonical::to_string(self).expect("state always serializes")
    }

    pub fn digest(&self) -> String {
        canonical::sha256_hex(self.canonical().as_bytes())
    }

    /// Folds one event into the state. Fails if the event does not fit the
    /// state it is applied to, which only happens with a damaged log.
    pub fn apply(&mut self, event: &DomainEvent) -> Result<(), String> {
        if event.seq != self.head + 1 {
            return Err(format!("expected seq {}, got {}", self.head + 1, event.seq));
        }
        self.apply_body(event.seq, &event.body)?;
        self.head = event.seq;
        Ok(())
    }

    fn apply_body(&mut self, seq: u64, body: &EventBody) -> Result<(), String> {
        match body {
            EventBody::ParticipantRegistered { participant } => {
                if self.participants.contains_key(&participant.id) {
                    return Err(format!("participant {} registered twice", participant.id));
                }
                self.mailboxes.create(participant.id.clone());
                self.participants
                    .insert(participant.id.clone(), participant.clone());
                self.counters.participants += 1;
            }
            EventBody::CircleCreated { circle } => {
                if self.circles.contains_key(&circle.id) {
                    return Err(format!("circle {} created twice", circle.id));
                }
                for id in circle.experts.iter().chain(&circle.patients) {
                    self.require_participant(id)?;
                }
                self.circles.insert(circle.id.clone(), circle.clone());
                self.counters.circles += 1;
            }
            EventBody::MemberAdded {
                circle,
                participant,
                role,
            } => {
                self.require_participant(participant)?;
                let c = self
                    .circles
                    .get_mut(circle)
                    .ok_or_else(|| format!("unknown circle {circle}"))?;
                match role {
                    Role::Expert => c.experts.insert(participant.clone()),
                    Role::EndUser => c.patients.insert(participant.clone()),
                };
            }
            EventBody::NotificationSubmitted {
                notification,
                approvers,
            } => {
                if notification.created_at != seq {
                    return Err(format!(
                        "notification {} created_at {} != seq {seq}",
                        notification.id, notification.created_at
                    ));
                }
                if self.notifications.contains_key(&notification.id) {
                    return Err(format!("notification {} submitted twice", notification.id));
                }
                if let Some(approvers) = approvers {
                    self.sessions.insert(
                        notification.id.clone(),
                        ApprovalSession::open(notification.id.clone(), approvers.iter().cloned()),
                    );
                }
                self.notifications
                    .insert(notification.id.clone(), notification.clone());
                self.counters.notifications += 1;
            }
            EventBody::ApprovalRecorded {
                notification,
                expert,
                verdict,
            } => {
                let session = self
                    .sessions
                    .get_mut(notification)
                    .ok_or_else(|| format!("no approval session for {notification}"))?;
                session.record(expert, *verdict);
            }
            EventBody::SessionClosed {
                notification,
                outcome,
            } => {
                let session = self
                    .sessions
                    .get_mut(notification)
                    .ok_or_else(|| format!("no approval session for {notification}"))?;
                session.close(*outcome);
                let n = self
                    .notifications
                    .get_mut(notification)
                    .ok_or_else(|| format!("unknown notification {notification}"))?;
                match outcome {
                    SessionOutcome::AllApproved => {
                        transition(n, NotificationState::Approved)?;
                        transition(n, NotificationState::Delivered)?;
                    }
                    SessionOutcome::Rejected => transition(n, NotificationState::Rejected)?,
                    SessionOutcome::Open => return Err("session closed as Open".into()),
                }
            }
            EventBody::TaskCreated { task } => {
                if self.tasks.contains_key(&task.id) {
                    return Err(format!("task {} created twice", task.id));
                }
                self.tasks.insert(task.id.clone(), task.clone());
                self.counters.tasks += 1;
            }
            EventBody::TaskChanged {
                task, version, diff, ..
            } => {
                let t = self
                    .tasks
                    .get_mut(task)
                    .ok_or_else(|| format!("unknown task {task}"))?;
                t.apply_diff(diff);
                if t.version != *version {
                    return Err(format!("task {task} version {} != {version}", t.version));
                }
            }
            EventBody::ProgressReported { report } => {
                self.reports.insert(report.id.clone(), report.clone());
                self.counters.reports += 1;
            }
            EventBody::GoalReached { task, label } => {
                let goal = self
                    .tasks
                    .get_mut(task)
                    .and_then(|t| t.goals.iter_mut().find(|g| &g.label == label))
                    .ok_or_else(|| format!("unknown goal {label} on {task}"))?;
                goal.reached = true;
            }
            EventBody::TypeRegistered { spec } => {
                self.types.insert(spec.clone());
            }
            EventBody::DeliveryEnqueued { delivery } => {
                let mailbox = self
                    .mailboxes
                    .get_mut(&delivery.mailbox)
                    .ok_or_else(|| format!("unknown mailbox {}", delivery.mailbox))?;
                mailbox.push(delivery.clone())?;
                self.counters.deliveries += 1;
            }
            EventBody::DeliveryAcked { mailbox, up_to_seq } => {
                let m = self
                    .mailboxes
                    .get_mut(mailbox)
                    .ok_or_else(|| format!("unknown mailbox {mailbox}"))?;
                if *up_to_seq > m.head() {
                    return Err(format!("ack {up_to_seq} beyond head {}", m.head()));
                }
                for d in m.ack(*up_to_seq) {
                    if d.kind != DeliveryKind::Direct {
                        continue;
                    }
                    if let Some(n) = self.notifications.get_mut(&d.notification_id) {
                        n.outstanding = n.outstanding.saturating_sub(1);
                        if n.outstanding == 0 && n.state == NotificationState::Routed {
                            transition(n, NotificationState::Delivered)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn require_participant(&self, id: &ParticipantId) -> Result<(), String> {
        if self.participants.contains_key(id) {
            Ok(())
        } else {
            Err(format!("unknown participant {id}"))
        }
    }
}

fn transition(n: &mut Notification, next: NotificationState) -> Result<(), String> {
    if !n.state.can_move_to(next) {
        return Err(format!(
            "notification {} cannot move {:?} -> {:?}",
            n.id, n.state, next
        ));
    }
    n.state = next;
    Ok(())
}
