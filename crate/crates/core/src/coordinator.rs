//! The coordinator: validates commands, routes notifications, runs approval
//! sessions and turns each accepted command into domain events.
//!
//! Executing a command is three steps:
//!
//! 1. `plan` checks the command against the current state and produces the
//!    events it implies. It reads the state and never writes it.
//! 2. The events are appended to the log. Nothing is visible before this
//!    succeeds.
//! 3. The events are folded into the state with [`State::apply`] (the same
//!    fold replay uses) and new deliveries are pushed to live subscribers.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::approval::{Response, SessionOutcome};
use crate::command::{Command, Reply, RoutingOutcome, TaskChange};
use crate::error::{CoordError, StoreError};
use crate::event::{DomainEvent, EventBody};
use crate::mailbox::{Delivery, DeliveryBody, DeliveryKind, Hub, Subscription};
use crate::model::{
    Attachment, CareCircle, CircleId, DeliveryId, GoalSpec, Metric, Notification, NotificationId,
    NotificationState, Participant, ParticipantId, Payload, ProgressReport, ReportId, Role,
    Schedule, Task, TaskDiff, TaskId, TaskStatus,
};
use crate::registry::{Audience, NotificationTypeSpec};
use crate::state::{Counters, State};
use crate::store::{self, Clock, EventLog, LogOptions};

/// Upper bound on a notification's text, in bytes.
pub const MAX_PAYLOAD_BYTES: usize = 64 * 1024;

pub struct Coordinator {
    state: State,
    log: EventLog,
    hub: Hub,
}

impl std::fmt::Debug for Coordinator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coordinator")
            .field("head", &self.state.head())
            .field("log", &self.log)
            .finish()
    }
}

/// Rebuilds state from events `1..=n`.
pub fn replay(events: &[DomainEvent]) -> Result<State, StoreError> {
    let mut state = State::default();
    for e in events {
        state
            .apply(e)
            .map_err(|reason| StoreError::CorruptRecord { seq: e.seq, reason })?;
    }
    Ok(state)
}

impl Coordinator {
    /// A coordinator over an existing log, replayed from the start.
    pub fn from_log(log: EventLog) -> Result<Self, StoreError> {
        Self::from_log_with_hub(log, Hub::default())
    }

    pub fn from_log_with_hub(log: EventLog, hub: Hub) -> Result<Self, StoreError> {
        let state = replay(log.events())?;
        Ok(Self { state, log, hub })
    }

    /// Memory-only coordinator with a logical clock.
    pub fn in_memory() -> Self {
        Self::from_log(EventLog::in_memory(Clock::Logical)).expect("empty log replays")
    }

    pub fn open(path: impl AsRef<Path>, options: LogOptions) -> Result<Self, StoreError> {
        Self::from_log(EventLog::open(path, options)?)
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn hub(&self) -> &Hub {
        &self.hub
    }

    /// Runs one command to completion.
    pub fn execute(&mut self, command: Command) -> Result<Reply, CoordError> {
        let Plan { events, reply } = plan(&self.state, &command)?;
        let first = self.state.head() + 1;
        let crossed = if events.is_empty() {
            false
        } else {
            let before = self.log.head() / store::SNAPSHOT_EVERY;
            self.log
                .append(events)
                .map_err(|e| CoordError::StorageFailure(e.to_string()))?;
            before != self.log.head() / store::SNAPSHOT_EVERY
        };
        for event in self.log.read_from(first) {
            self.state
                .apply(event)
                .expect("planned events always apply to the state they were planned on");
        }
        for event in self.log.read_from(first) {
            if let EventBody::DeliveryEnqueued { delivery } = &event.body {
                self.hub.publish(delivery);
            }
        }
        if crossed {
            self.write_snapshot();
        }
        Ok(reply.resolve(&self.state))
    }

    fn write_snapshot(&self) {
        let Some(path) = self.log.path() else { return };
        let state = serde_json::to_value(&self.state).expect("state always serializes");
        if let Err(e) = store::write_snapshot(path, self.state.head(), &state) {
            tracing::warn!(error = %e, "could not write advisory snapshot");
        }
    }

    pub fn register_participant(
        &mut self,
        role: Role,
        domain: Option<&str>,
        display_name: &str,
    ) -> Result<Participant, CoordError> {
        match self.execute(Command::RegisterParticipant {
            role,
            domain: domain.map(str::to_owned),
            display_name: display_name.to_owned(),
        })? {
            Reply::Participant(p) => Ok(p),
            other => unreachable!("register_participant replied {other:?}"),
        }
    }

    pub fn create_circle(
        &mut self,
        experts: &[ParticipantId],
        patients: &[ParticipantId],
    ) -> Result<CareCircle, CoordError> {
        match self.execute(Command::CreateCircle {
            experts: experts.to_vec(),
            patients: patients.to_vec(),
        })? {
            Reply::Circle(c) => Ok(c),
            other => unreachable!("create_circle replied {other:?}"),
        }
    }

    pub fn submit_notification(
        &mut self,
        sender: &ParticipantId,
        circle: &CircleId,
        type_code: &str,
        payload: Payload,
    ) -> Result<RoutingOutcome, CoordError> {
        match self.execute(Command::SubmitNotification {
            sender: sender.clone(),
            circle: circle.clone(),
            type_code: type_code.to_owned(),
            payload,
            patient: None,
        })? {
            Reply::Routing(r) => Ok(r),
            other => unreachable!("submit_notification replied {other:?}"),
        }
    }

    pub fn respond_approval(
        &mut self,
        expert: &ParticipantId,
        notification: &NotificationId,
        verdict: Response,
    ) -> Result<crate::approval::ApprovalSession, CoordError> {
        match self.execute(Command::RespondApproval {
            expert: expert.clone(),
            notification: notification.clone(),
            verdict,
        })? {
            Reply::Session(s) => Ok(s),
            other => unreachable!("respond_approval replied {other:?}"),
        }
    }

    pub fn create_task(
        &mut self,
        creator: &ParticipantId,
        circle: &CircleId,
        patient: &ParticipantId,
        instructions: Vec<String>,
        goals: Vec<GoalSpec>,
    ) -> Result<Task, CoordError> {
        match self.execute(Command::CreateTask {
            creator: creator.clone(),
            circle: circle.clone(),
            patient: patient.clone(),
            instructions,
            schedule: None,
            goals,
        })? {
            Reply::Task(t) => Ok(t),
            other => unreachable!("create_task replied {other:?}"),
        }
    }

    pub fn apply_task_change(
        &mut self,
        editor: &ParticipantId,
        task: &TaskId,
        diff: TaskDiff,
        notify_patient: bool,
    ) -> Result<TaskChange, CoordError> {
        match self.execute(Command::ChangeTask {
            editor: editor.clone(),
            task: task.clone(),
            diff,
            notify_patient,
        })? {
            Reply::TaskChange(c) => Ok(c),
            other => unreachable!("change_task replied {other:?}"),
        }
    }

    pub fn report_progress(
        &mut self,
        patient: &ParticipantId,
        task: &TaskId,
        metrics: Vec<Metric>,
    ) -> Result<Notification, CoordError> {
        match self.execute(Command::ReportProgress {
            patient: patient.clone(),
            task: task.clone(),
            metrics,
        })? {
            Reply::Notification(n) => Ok(n),
            other => unreachable!("report_progress replied {other:?}"),
        }
    }

    pub fn record_goal_reached(
        &mut self,
        patient: &ParticipantId,
        task: &TaskId,
        label: &str,
    ) -> Result<Notification, CoordError> {
        match self.execute(Command::RecordGoalReached {
            patient: patient.clone(),
            task: task.clone(),
            label: label.to_owned(),
        })? {
            Reply::Notification(n) => Ok(n),
            other => unreachable!("record_goal_reached replied {other:?}"),
        }
    }

    pub fn register_notification_type(
        &mut self,
        spec: NotificationTypeSpec,
    ) -> Result<Vec<NotificationTypeSpec>, CoordError> {
        match self.execute(Command::RegisterType { spec })? {
            Reply::Types(t) => Ok(t),
            other => unreachable!("register_type replied {other:?}"),
        }
    }

    pub fn ack(
        &mut self,
        mailbox: &ParticipantId,
        up_to_seq: u64,
    ) -> Result<crate::mailbox::Cursor, CoordError> {
        match self.execute(Command::Ack {
            mailbox: mailbox.clone(),
            up_to_seq,
        })? {
            Reply::Cursor(c) => Ok(c),
            other => unreachable!("ack replied {other:?}"),
        }
    }

    /// Deliveries with `seq > after_seq`, ascending, at most `max_batch`.
    /// Never blocks and never consumes.
    pub fn poll(
        &self,
        mailbox: &ParticipantId,
        after_seq: u64,
        max_batch: usize,
    ) -> Result<Vec<Delivery>, CoordError> {
        Ok(self.mailbox(mailbox)?.poll(after_seq, max_batch).to_vec())
    }

    /// Live feed of deliveries enqueued from now on.
    pub fn subscribe(&self, mailbox: &ParticipantId) -> Result<Subscription, CoordError> {
        self.mailbox(mailbox)?;
        Ok(self.hub.subscribe(mailbox))
    }

    /// Backlog after `after_seq` plus a live feed starting right after it.
    /// Taken together under one borrow, so nothing falls between the two.
    pub fn resume(
        &self,
        mailbox: &ParticipantId,
        after_seq: u64,
    ) -> Result<(Vec<Delivery>, Subscription), CoordError> {
        let backlog = self.mailbox(mailbox)?.poll(after_seq, usize::MAX).to_vec();
        Ok((backlog, self.hub.subscribe(mailbox)))
    }

    fn mailbox(&self, owner: &ParticipantId) -> Result<&crate::mailbox::Mailbox, CoordError> {
        self.state
            .mailbox(owner)
            .ok_or_else(|| CoordError::UnknownMailbox(owner.to_string()))
    }
}

/// Events planned for one command and how to build its reply.
struct Plan {
    events: Vec<EventBody>,
    reply: PendingReply,
}

/// Replies are read back from the state once the events are applied.
enum PendingReply {
    Participant(ParticipantId),
    Circle(CircleId),
    Routing(RoutingOutcome),
    Session(NotificationId),
    Task(TaskId),
    TaskChange(TaskChange),
    Notification(NotificationId),
    Types,
    Cursor(ParticipantId),
}

impl PendingReply {
    fn resolve(self, state: &State) -> Reply {
        const APPLIED: &str = "planned entity exists after apply";
        match self {
            PendingReply::Participant(id) => {
                Reply::Participant(state.participant(&id).expect(APPLIED).clone())
            }
            PendingReply::Circle(id) => Reply::Circle(state.circle(&id).expect(APPLIED).clone()),
            PendingReply::Routing(mut r) => {
                r.state = state.notification(&r.notification).expect(APPLIED).state;
                Reply::Routing(r)
            }
            PendingReply::Session(id) => Reply::Session(state.session(&id).expect(APPLIED).clone()),
            PendingReply::Task(id) => Reply::Task(state.task(&id).expect(APPLIED).clone()),
            PendingReply::TaskChange(c) => Reply::TaskChange(c),
            PendingReply::Notification(id) => {
                Reply::Notification(state.notification(&id).expect(APPLIED).clone())
            }
            PendingReply::Types => Reply::Types(state.types().all()),
            PendingReply::Cursor(id) => Reply::Cursor(state.mailbox(&id).expect(APPLIED).cursor()),
        }
    }
}

/// Accumulates events for one command, tracking the ids and mailbox seqs
/// they claim.
struct Draft<'a> {
    state: &'a State,
    events: Vec<EventBody>,
    counters: Counters,
    mailbox_heads: HashMap<ParticipantId, u64>,
}

impl<'a> Draft<'a> {
    fn new(state: &'a State) -> Self {
        Self {
            state,
            events: Vec::new(),
            counters: state.counters(),
            mailbox_heads: HashMap::new(),
        }
    }

    /// Seq the next emitted event will get.
    fn next_seq(&self) -> u64 {
        self.state.head() + self.events.len() as u64 + 1
    }

    fn emit(&mut self, body: EventBody) {
        self.events.push(body);
    }

    fn enqueue(
        &mut self,
        mailbox: &ParticipantId,
        notification: &NotificationId,
        kind: DeliveryKind,
        body: DeliveryBody,
    ) {
        let head = self
            .mailbox_heads
            .entry(mailbox.clone())
            .or_insert_with(|| self.state.mailbox(mailbox).map_or(0, |m| m.head()));
        *head += 1;
        self.counters.deliveries += 1;
        let delivery = Delivery {
            delivery_id: DeliveryId::nth(self.counters.deliveries),
            mailbox: mailbox.clone(),
            seq: *head,
            notification_id: notification.clone(),
            kind,
            body,
            acked: false,
        };
        self.emit(EventBody::DeliveryEnqueued { delivery });
    }

    fn finish(self, reply: PendingReply) -> Plan {
        Plan {
            events: self.events,
            reply,
        }
    }
}

fn plan(state: &State, command: &Command) -> Result<Plan, CoordError> {
    match command {
        Command::RegisterParticipant {
            role,
            domain,
            display_name,
        } => plan_register(state, *role, domain.as_deref(), display_name),
        Command::CreateCircle { experts, patients } => plan_circle(state, experts, patients),
        Command::AddMember {
            circle,
            participant,
        } => plan_add_member(state, circle, participant),
        Command::SubmitNotification {
            sender,
            circle,
            type_code,
            payload,
            patient,
        } => plan_submit(state, sender, circle, type_code, payload, patient.as_ref()),
        Command::RespondApproval {
            expert,
            notification,
            verdict,
        } => plan_respond(state, expert, notification, *verdict),
        Command::CreateTask {
            creator,
            circle,
            patient,
            instructions,
            schedule,
            goals,
        } => plan_create_task(
            state,
            creator,
            circle,
            patient,
            instructions,
            schedule.as_ref(),
            goals,
        ),
        Command::ChangeTask {
            editor,
            task,
            diff,
            notify_patient,
        } => plan_change_task(state, editor, task, diff, *notify_patient),
        Command::ReportProgress {
            patient,
            task,
            metrics,
        } => plan_report(state, patient, task, metrics),
        Command::RecordGoalReached {
            patient,
            task,
            label,
        } => plan_goal(state, patient, task, label),
        Command::RegisterType { spec } => {
            state.types().check_new(spec)?;
            let mut draft = Draft::new(state);
            draft.emit(EventBody::TypeRegistered { spec: spec.clone() });
            Ok(draft.finish(PendingReply::Types))
        }
        Command::Ack { mailbox, up_to_seq } => {
            let m = state
                .mailbox(mailbox)
                .ok_or_else(|| CoordError::UnknownMailbox(mailbox.to_string()))?;
            if *up_to_seq > m.head() {
                return Err(CoordError::SeqBeyondHead {
                    requested: *up_to_seq,
                    head: m.head(),
                });
            }
            let mut draft = Draft::new(state);
            // acks at or behind the cursor change nothing and log nothing
            if *up_to_seq > m.cursor().last_acked_seq {
                draft.emit(EventBody::DeliveryAcked {
                    mailbox: mailbox.clone(),
                    up_to_seq: *up_to_seq,
                });
            }
            Ok(draft.finish(PendingReply::Cursor(mailbox.clone())))
        }
    }
}

fn participant<'s>(state: &'s State, id: &ParticipantId) -> Result<&'s Participant, CoordError> {
    state
        .participant(id)
        .ok_or_else(|| CoordError::UnknownParticipant(id.to_string()))
}

fn active_participant<'s>(
    state: &'s State,
    id: &ParticipantId,
) -> Result<&'s Participant, CoordError> {
    let p = participant(state, id)?;
    if !p.active {
        return Err(CoordError::InactiveParticipant(id.to_string()));
    }
    Ok(p)
}

fn circle<'s>(state: &'s State, id: &CircleId) -> Result<&'s CareCircle, CoordError> {
    state
        .circle(id)
        .ok_or_else(|| CoordError::UnknownCircle(id.to_string()))
}

fn task<'s>(state: &'s State, id: &TaskId) -> Result<&'s Task, CoordError> {
    state
        .task(id)
        .ok_or_else(|| CoordError::UnknownTask(id.to_string()))
}

fn not_member(who: &ParticipantId, circle: &CircleId) -> CoordError {
    CoordError::NotCircleMember {
        participant: who.to_string(),
        circle: circle.to_string(),
    }
}

/// The circle's experts as an expert of it, or `NotCircleMember`.
fn require_circle_expert(
    state: &State,
    who: &ParticipantId,
    circle_id: &CircleId,
) -> Result<(), CoordError> {
    let p = active_participant(state, who)?;
    if p.role != Role::Expert {
        return Err(CoordError::NotAnExpert(who.to_string()));
    }
    if !circle(state, circle_id)?.experts.contains(who) {
        return Err(not_member(who, circle_id));
    }
    Ok(())
}

fn plan_register(
    state: &State,
    role: Role,
    domain: Option<&str>,
    display_name: &str,
) -> Result<Plan, CoordError> {
    if display_name.trim().is_empty() {
        return Err(CoordError::InvalidName);
    }
    let domain = domain.map(str::trim);
    match (role, domain) {
        (Role::Expert, None) | (Role::Expert, Some("")) => return Err(CoordError::DomainMissing),
        (Role::EndUser, Some(_)) => return Err(CoordError::DomainForbidden),
        _ => {}
    }
    let mut draft = Draft::new(state);
    let id = ParticipantId::nth(draft.counters.participants + 1);
    draft.emit(EventBody::ParticipantRegistered {
        participant: Participant {
            id: id.clone(),
            role,
            domain: domain.map(str::to_owned),
            display_name: display_name.to_owned(),
            active: true,
        },
    });
    Ok(draft.finish(PendingReply::Participant(id)))
}

fn check_role(state: &State, id: &ParticipantId, role: Role) -> Result<(), CoordError> {
    let p = participant(state, id)?;
    if p.role != role {
        return Err(CoordError::InvalidCircle(format!(
            "{id} is a {} and cannot be listed as a {role}",
            p.role
        )));
    }
    Ok(())
}

fn plan_circle(
    state: &State,
    experts: &[ParticipantId],
    patients: &[ParticipantId],
) -> Result<Plan, CoordError> {
    for e in experts {
        check_role(state, e, Role::Expert)?;
    }
    for p in patients {
        check_role(state, p, Role::EndUser)?;
    }
    let mut draft = Draft::new(state);
    let id = CircleId::nth(draft.counters.circles + 1);
    draft.emit(EventBody::CircleCreated {
        circle: CareCircle {
            id: id.clone(),
            experts: experts.iter().cloned().collect(),
            patients: patients.iter().cloned().collect(),
        },
    });
    Ok(draft.finish(PendingReply::Circle(id)))
}

fn plan_add_member(
    state: &State,
    circle_id: &CircleId,
    who: &ParticipantId,
) -> Result<Plan, CoordError> {
    let c = circle(state, circle_id)?;
    let p = participant(state, who)?;
    if c.contains(who) {
        return Err(CoordError::InvalidCircle(format!(
            "{who} is already a member of {circle_id}"
        )));
    }
    let mut draft = Draft::new(state);
    draft.emit(EventBody::MemberAdded {
        circle: circle_id.clone(),
        participant: who.clone(),
        role: p.role,
    });
    Ok(draft.finish(PendingReply::Circle(circle_id.clone())))
}

/// Who a notification goes to.
#[derive(Debug, Default)]
struct Route {
    /// Set for approval-gated types: experts who must consent first.
    approvers: Option<Vec<ParticipantId>>,
    /// Recipients of an immediate `Direct` delivery.
    direct: Vec<ParticipantId>,
    /// Patients the notification is addressed to (now or after approval).
    patients: BTreeSet<ParticipantId>,
}

/// Resolves recipients per the type's audience. The sender never appears.
///
/// A patient-addressed type without approval also informs the sender's
/// fellow experts, so a change in one domain is known in the others; when it
/// is not patient visible (T4) only those experts hear of it.
fn route(
    state: &State,
    spec: &NotificationTypeSpec,
    circle: &CareCircle,
    sender: &ParticipantId,
    patients: BTreeSet<ParticipantId>,
) -> Route {
    let active = |id: &&ParticipantId| state.participant(id).is_some_and(|p| p.active);
    let other_experts: Vec<ParticipantId> = circle
        .experts
        .iter()
        .filter(|e| *e != sender)
        .filter(active)
        .cloned()
        .collect();
    match spec.audience {
        Audience::OtherExperts | Audience::AllExperts => Route {
            direct: other_experts,
            ..Route::default()
        },
        Audience::Patient if spec.requires_approval => Route {
            approvers: Some(other_experts),
            direct: Vec::new(),
            patients,
        },
        Audience::Patient => {
            let mut direct: BTreeSet<ParticipantId> = other_experts.into_iter().collect();
            if spec.patient_visible {
                direct.extend(patients.iter().filter(active).cloned());
            }
            direct.remove(sender);
            Route {
                approvers: None,
                direct: direct.into_iter().collect(),
                patients,
            }
        }
    }
}

fn delivery_body(n: &Notification) -> DeliveryBody {
    DeliveryBody {
        type_code: n.type_code.clone(),
        sender: n.sender.clone(),
        circle: n.circle.clone(),
        text: n.payload.text.clone(),
        attachment: n.payload.attachment.clone(),
        outcome: None,
        rejected_by: None,
    }
}

/// Emits `NotificationSubmitted` and its deliveries. Returns the routing
/// outcome; the state field is filled in after apply.
fn emit_notification(
    draft: &mut Draft<'_>,
    spec: &NotificationTypeSpec,
    sender: &ParticipantId,
    circle_id: &CircleId,
    payload: Payload,
    route: Route,
) -> RoutingOutcome {
    let id = NotificationId::nth(draft.counters.notifications + 1);
    draft.counters.notifications += 1;
    let state = match (&route.approvers, route.direct.is_empty()) {
        (Some(_), _) => NotificationState::AwaitingApproval,
        (None, false) => NotificationState::Routed,
        // nobody to wait for
        (None, true) => NotificationState::Delivered,
    };
    let notification = Notification {
        id: id.clone(),
        type_code: spec.code.clone(),
        sender: sender.clone(),
        circle: circle_id.clone(),
        payload,
        created_at: draft.next_seq(),
        state,
        patients: route.patients.clone(),
        outstanding: route.direct.len() as u64,
    };
    let body = delivery_body(&notification);
    draft.emit(EventBody::NotificationSubmitted {
        notification,
        approvers: route.approvers.clone(),
    });
    let mut count = 0;
    for approver in route.approvers.iter().flatten() {
        draft.enqueue(approver, &id, DeliveryKind::ApprovalRequest, body.clone());
        count += 1;
    }
    for recipient in &route.direct {
        draft.enqueue(recipient, &id, DeliveryKind::Direct, body.clone());
        count += 1;
    }
    RoutingOutcome {
        notification: id,
        state,
        deliveries: count,
    }
}

fn check_payload(payload: &Payload) -> Result<(), CoordError> {
    if payload.text.len() > MAX_PAYLOAD_BYTES {
        return Err(CoordError::PayloadTooLarge {
            size: payload.text.len(),
            limit: MAX_PAYLOAD_BYTES,
        });
    }
    Ok(())
}

fn check_attachment(
    state: &State,
    circle_id: &CircleId,
    attachment: Option<&Attachment>,
) -> Result<(), CoordError> {
    let task_id = match attachment {
        None => return Ok(()),
        Some(Attachment::TaskChange { task, .. })
        | Some(Attachment::Report { task, .. })
        | Some(Attachment::Goal { task, .. }) => task,
    };
    let t = task(state, task_id)?;
    if &t.circle != circle_id {
        return Err(CoordError::UnknownTask(task_id.to_string()));
    }
    Ok(())
}

fn plan_submit(
    state: &State,
    sender: &ParticipantId,
    circle_id: &CircleId,
    type_code: &str,
    payload: &Payload,
    patient: Option<&ParticipantId>,
) -> Result<Plan, CoordError> {
    let from = active_participant(state, sender)?;
    let c = circle(state, circle_id)?;
    let spec = state
        .types()
        .get(type_code)
        .ok_or_else(|| CoordError::UnknownType(type_code.to_owned()))?;
    if !c.contains(sender) {
        return Err(not_member(sender, circle_id));
    }
    if from.role != spec.origin_role {
        return Err(CoordError::RoleMismatch {
            type_code: spec.code.clone(),
            expected: spec.origin_role,
            actual: from.role,
        });
    }
    if c.experts.is_empty() {
        return Err(CoordError::NoExpertsInCircle(circle_id.to_string()));
    }
    check_payload(payload)?;
    check_attachment(state, circle_id, payload.attachment.as_ref())?;

    let patients: BTreeSet<ParticipantId> = match patient {
        Some(p) if !c.patients.contains(p) => return Err(not_member(p, circle_id)),
        Some(p) => [p.clone()].into(),
        None if spec.audience == Audience::Patient => c.patients.clone(),
        None => BTreeSet::new(),
    };
    let route = route(state, &spec, c, sender, patients);
    match &route.approvers {
        Some(approvers) if approvers.is_empty() => {
            return Err(CoordError::NoApproversAvailable(circle_id.to_string()))
        }
        Some(_) if route.patients.is_empty() => return Err(CoordError::NoRecipients),
        None if route.direct.is_empty() => return Err(CoordError::NoRecipients),
        _ => {}
    }

    let mut draft = Draft::new(state);
    let outcome = emit_notification(&mut draft, &spec, sender, circle_id, payload.clone(), route);
    Ok(draft.finish(PendingReply::Routing(outcome)))
}

fn plan_respond(
    state: &State,
    expert: &ParticipantId,
    notification_id: &NotificationId,
    verdict: Response,
) -> Result<Plan, CoordError> {
    active_participant(state, expert)?;
    let n = state
        .notification(notification_id)
        .ok_or_else(|| CoordError::UnknownNotification(notification_id.to_string()))?;
    let session = state
        .session(notification_id)
        .ok_or_else(|| CoordError::NotAnApprover {
            expert: expert.to_string(),
            notification: notification_id.to_string(),
        })?;
    session.check_response(expert)?;
    let outcome = session.outcome_after(expert, verdict);

    let mut draft = Draft::new(state);
    draft.emit(EventBody::ApprovalRecorded {
        notification: notification_id.clone(),
        expert: expert.clone(),
        verdict,
    });
    match outcome {
        SessionOutcome::Open => {}
        SessionOutcome::AllApproved => {
            draft.emit(EventBody::SessionClosed {
                notification: notification_id.clone(),
                outcome,
            });
            let body = delivery_body(n);
            for patient in &n.patients {
                draft.enqueue(patient, notification_id, DeliveryKind::Direct, body.clone());
            }
            let result = DeliveryBody {
                outcome: Some(outcome),
                ..body
            };
            draft.enqueue(
                &n.sender,
                notification_id,
                DeliveryKind::ApprovalResult,
                result,
            );
        }
        SessionOutcome::Rejected => {
            draft.emit(EventBody::SessionClosed {
                notification: notification_id.clone(),
                outcome,
            });
            let notice = DeliveryBody {
                outcome: Some(outcome),
                rejected_by: Some(expert.clone()),
                ..delivery_body(n)
            };
            draft.enqueue(
                &n.sender,
                notification_id,
                DeliveryKind::RejectionNotice,
                notice,
            );
        }
    }
    Ok(draft.finish(PendingReply::Session(notification_id.clone())))
}

fn check_goals<'g>(goals: impl IntoIterator<Item = &'g GoalSpec>) -> Result<(), CoordError> {
    let mut seen = BTreeSet::new();
    for g in goals {
        if g.label.trim().is_empty() {
            return Err(CoordError::InvalidTask("goal labels must not be empty".into()));
        }
        if !seen.insert(g.label.as_str()) {
            return Err(CoordError::InvalidTask(format!(
                "goal label {} appears twice",
                g.label
            )));
        }
    }
    Ok(())
}

fn plan_create_task(
    state: &State,
    creator: &ParticipantId,
    circle_id: &CircleId,
    patient: &ParticipantId,
    instructions: &[String],
    schedule: Option<&Schedule>,
    goals: &[GoalSpec],
) -> Result<Plan, CoordError> {
    require_circle_expert(state, creator, circle_id)?;
    let c = circle(state, circle_id)?;
    participant(state, patient)?;
    if !c.patients.contains(patient) {
        return Err(not_member(patient, circle_id));
    }
    check_goals(goals)?;
    let domain = participant(state, creator)?
        .domain
        .clone()
        .unwrap_or_default();

    let mut draft = Draft::new(state);
    let id = TaskId::nth(draft.counters.tasks + 1);
    draft.emit(EventBody::TaskCreated {
        task: Task {
            id: id.clone(),
            circle: circle_id.clone(),
            patient: patient.clone(),
            created_by: creator.clone(),
            domain,
            instructions: instructions.to_vec(),
            schedule: schedule.cloned(),
            goals: goals
                .iter()
                .map(|g| crate::model::Goal {
                    label: g.label.clone(),
                    target: g.target.clone(),
                    reached: false,
                })
                .collect(),
            status: TaskStatus::Active,
            version: 1,
        },
    });
    Ok(draft.finish(PendingReply::Task(id)))
}

fn builtin(state: &State, code: &str) -> NotificationTypeSpec {
    state.types().get(code).expect("built-in types always exist")
}

fn plan_change_task(
    state: &State,
    editor: &ParticipantId,
    task_id: &TaskId,
    diff: &TaskDiff,
    notify_patient: bool,
) -> Result<Plan, CoordError> {
    let t = task(state, task_id)?;
    require_circle_expert(state, editor, &t.circle)?;
    if t.status != TaskStatus::Active {
        return Err(CoordError::TaskNotActive(task_id.to_string()));
    }
    if let Some(goals) = &diff.goals {
        check_goals(goals)?;
    }
    let c = circle(state, &t.circle)?;
    let version = t.version + 1;
    let spec = builtin(state, if notify_patient { "T3" } else { "T4" });
    let route = route(state, &spec, c, editor, [t.patient.clone()].into());
    let payload = Payload {
        text: format!("task {task_id} updated to version {version}"),
        attachment: Some(Attachment::TaskChange {
            task: task_id.clone(),
            version,
        }),
    };

    let mut draft = Draft::new(state);
    draft.emit(EventBody::TaskChanged {
        task: task_id.clone(),
        editor: editor.clone(),
        version,
        diff: diff.clone(),
        notify_patient,
    });
    let outcome = emit_notification(&mut draft, &spec, editor, &t.circle, payload, route);
    let receipt = TaskChange {
        task_id: task_id.clone(),
        editor: editor.clone(),
        diff: diff.clone(),
        notify_patient,
        version,
        notification: outcome.notification,
    };
    Ok(draft.finish(PendingReply::TaskChange(receipt)))
}

fn owned_task<'s>(
    state: &'s State,
    patient: &ParticipantId,
    task_id: &TaskId,
) -> Result<&'s Task, CoordError> {
    active_participant(state, patient)?;
    let t = task(state, task_id)?;
    if &t.patient != patient {
        return Err(CoordError::NotTaskOwner {
            patient: patient.to_string(),
            task: task_id.to_string(),
        });
    }
    Ok(t)
}

/// Routes a patient-originated notification to every expert of the task's
/// circle.
fn patient_notification(
    draft: &mut Draft<'_>,
    code: &str,
    patient: &ParticipantId,
    t: &Task,
    payload: Payload,
) -> Result<NotificationId, CoordError> {
    let state = draft.state;
    let c = circle(state, &t.circle)?;
    if c.experts.is_empty() {
        return Err(CoordError::NoExpertsInCircle(t.circle.to_string()));
    }
    let spec = builtin(state, code);
    let route = route(state, &spec, c, patient, BTreeSet::new());
    Ok(emit_notification(draft, &spec, patient, &t.circle, payload, route).notification)
}

fn plan_report(
    state: &State,
    patient: &ParticipantId,
    task_id: &TaskId,
    metrics: &[Metric],
) -> Result<Plan, CoordError> {
    let t = owned_task(state, patient, task_id)?;
    for m in metrics {
        if m.name.trim().is_empty() {
            return Err(CoordError::InvalidReport("metric names must not be empty".into()));
        }
        if !m.value.is_finite() {
            return Err(CoordError::InvalidReport(format!(
                "metric {} is not a finite number",
                m.name
            )));
        }
    }
    let mut draft = Draft::new(state);
    let report_id = ReportId::nth(draft.counters.reports + 1);
    draft.emit(EventBody::ProgressReported {
        report: ProgressReport {
            id: report_id.clone(),
            task: task_id.clone(),
            patient: patient.clone(),
            metrics: metrics.to_vec(),
        },
    });
    let summary = metrics
        .iter()
        .map(|m| format!("{}={}", m.name, m.value))
        .collect::<Vec<_>>()
        .join(", ");
    let payload = Payload {
        text: format!("progress on {task_id}: {summary}"),
        attachment: Some(Attachment::Report {
            task: task_id.clone(),
            report: report_id,
        }),
    };
    let id = patient_notification(&mut draft, "T5", patient, t, payload)?;
    Ok(draft.finish(PendingReply::Notification(id)))
}

fn plan_goal(
    state: &State,
    patient: &ParticipantId,
    task_id: &TaskId,
    label: &str,
) -> Result<Plan, CoordError> {
    let t = owned_task(state, patient, task_id)?;
    let goal = t
        .goal(label)
        .ok_or_else(|| CoordError::UnknownGoal(label.to_owned()))?;
    if goal.reached {
        return Err(CoordError::GoalAlreadyReached(label.to_owned()));
    }
    let mut draft = Draft::new(state);
    draft.emit(EventBody::GoalReached {
        task: task_id.clone(),
        label: label.to_owned(),
    });
    let payload = Payload {
        text: format!("goal {label} reached on {task_id}: {}", goal.target),
        attachment: Some(Attachment::Goal {
            task: task_id.clone(),
            label: label.to_owned(),
        }),
    };
    let id = patient_notification(&mut draft, "T6", patient, t, payload)?;
    Ok(draft.finish(PendingReply::Notification(id)))
}
