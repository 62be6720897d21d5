//! Sequential scenario execution against any [`Target`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use caremesh_core::{
    CircleId, Command, Delivery, NotificationId, ParticipantId, Payload, Reply, TaskId,
};
use serde::Serialize;

use crate::scenario::{Expect, Op, Scenario, Step, ADMIN};
use crate::target::{Feed, FeedItem, Target};

/// How long the final stream audit waits for late frames.
const AUDIT_WAIT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub index: usize,
    pub line: usize,
    pub at: u64,
    pub actor: String,
    pub op: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamAudit {
    pub participant: String,
    pub frames: usize,
    pub distinct: usize,
    pub mailbox: usize,
    pub reconnects: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub target: String,
    pub steps: Vec<StepReport>,
    pub streams: Vec<StreamAudit>,
    pub head: u64,
    pub log_digest: String,
    pub state_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub golden: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunReport {
    pub fn golden_matches(&self) -> Option<bool> {
        self.golden.as_ref().map(|g| *g == self.log_digest)
    }

    pub fn passed(&self) -> bool {
        self.error.is_none()
            && self.steps.iter().all(|s| s.failure.is_none())
            && self.streams.iter().all(|s| s.failure.is_none())
            && self.golden_matches() != Some(false)
    }

    pub fn failures(&self) -> usize {
        self.steps.iter().filter(|s| s.failure.is_some()).count()
            + self.streams.iter().filter(|s| s.failure.is_some()).count()
            + usize::from(self.golden_matches() == Some(false))
            + usize::from(self.error.is_some())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scenario {} ({})", self.scenario, self.target);
        for s in &self.steps {
            let status = if s.failure.is_some() { "FAIL" } else { "ok  " };
            let _ = write!(
                out,
                "  {status} step {:>3}  line {:>3}  t={:<4} {} {}",
                s.index, s.line, s.at, s.actor, s.op
            );
            if let Some(f) = &s.failure {
                let _ = write!(out, ": {f}");
            }
            out.push('\n');
        }
        for a in &self.streams {
            let status = if a.failure.is_some() { "FAIL" } else { "ok  " };
            let _ = write!(
                out,
                "  {status} stream {}: {} frames, {} distinct, mailbox {}, {} reconnects",
                a.participant, a.frames, a.distinct, a.mailbox, a.reconnects
            );
            if let Some(f) = &a.failure {
                let _ = write!(out, ": {f}");
            }
            out.push('\n');
        }
        if let Some(e) = &self.error {
            let _ = writeln!(out, "  error: {e}");
        }
        let _ = writeln!(out, "events {}", self.head);
        let _ = writeln!(out, "digest {}", self.log_digest);
        match self.golden_matches() {
            Some(true) => out.push_str("golden ok\n"),
            Some(false) => {
                let _ = writeln!(
                    out,
                    "golden MISMATCH: expected {}",
                    self.golden.as_deref().unwrap_or_default()
                );
            }
            None => {}
        }
        out.push_str(if self.passed() { "PASS\n" } else { "FAIL\n" });
        out
    }
}

struct StreamClient {
    who: ParticipantId,
    feed: Option<Box<dyn Feed>>,
    frames: Vec<Delivery>,
    reconnects: usize,
}

impl StreamClient {
    fn last_seq(&self) -> u64 {
        self.frames.iter().map(|d| d.seq).max().unwrap_or(0)
    }

    /// Takes whatever has arrived. A closed feed is reopened from the last
    /// seen seq, the way a real client would.
    fn drain(&mut self, target: &mut dyn Target, wait: Duration) -> Result<(), String> {
        let Some(feed) = self.feed.as_mut() else {
            return Ok(());
        };
        loop {
            match feed.next(wait) {
                FeedItem::Delivery(d) => self.frames.push(d),
                FeedItem::Idle => return Ok(()),
                FeedItem::Closed => {
                    self.reconnect(target)?;
                    return Ok(());
                }
            }
        }
    }

    fn reconnect(&mut self, target: &mut dyn Target) -> Result<(), String> {
        self.feed = None;
        self.feed = Some(
            target
                .open_feed(&self.who, self.last_seq())
                .map_err(|e| e.to_string())?,
        );
        self.reconnects += 1;
        Ok(())
    }
}

fn strip_ack(d: &Delivery) -> Delivery {
    Delivery {
        acked: false,
        ..d.clone()
    }
}

/// Dedups received frames by seq and compares them with the mailbox log.
/// Acknowledgement flags are ignored; they change after delivery.
pub fn audit_frames(frames: &[Delivery], mailbox: &[Delivery]) -> Result<usize, String> {
    let mut by_seq: BTreeMap<u64, Delivery> = BTreeMap::new();
    for d in frames {
        let d = strip_ack(d);
        if let Some(prev) = by_seq.get(&d.seq) {
            if *prev != d {
                return Err(format!("two different deliveries with seq {}", d.seq));
            }
        }
        by_seq.insert(d.seq, d);
    }
    let got: Vec<Delivery> = by_seq.into_values().collect();
    let want: Vec<Delivery> = mailbox.iter().map(strip_ack).collect();
    if got == want {
        return Ok(got.len());
    }
    let got_seqs: Vec<u64> = got.iter().map(|d| d.seq).collect();
    let want_seqs: Vec<u64> = want.iter().map(|d| d.seq).collect();
    if got_seqs != want_seqs {
        Err(format!("received seqs {got_seqs:?}, mailbox has {want_seqs:?}"))
    } else {
        Err("frame content differs from the mailbox log".into())
    }
}

struct Runner<'a> {
    scenario: &'a Scenario,
    target: &'a mut dyn Target,
    bindings: HashMap<String, String>,
    streams: BTreeMap<String, StreamClient>,
}

impl Runner<'_> {
    fn participant(&self, alias: &str) -> Result<ParticipantId, String> {
        self.scenario
            .participant_id(alias)
            .ok_or_else(|| format!("unknown cast member {alias:?}"))
    }

    fn resolve(&self, name: &str) -> String {
        self.bindings
            .get(name)
            .cloned()
            .unwrap_or_else(|| name.to_string())
    }

    fn actor(&self, step: &Step) -> Result<ParticipantId, String> {
        if step.actor == ADMIN {
            return Err(format!("{} needs a participant actor", step.op.name()));
        }
        self.participant(&step.actor)
    }

    fn command(&self, step: &Step) -> Result<Option<Command>, String> {
        let participants = |aliases: &[String]| -> Result<Vec<ParticipantId>, String> {
            aliases.iter().map(|a| self.participant(a)).collect()
        };
        Ok(Some(match &step.op {
            Op::CreateCircle { experts, patients } => Command::CreateCircle {
                experts: participants(experts)?,
                patients: participants(patients)?,
            },
            Op::AddMember { circle, member } => Command::AddMember {
                circle: CircleId::new(self.resolve(circle)),
                participant: self.participant(member)?,
            },
            Op::Submit {
                circle,
                type_code,
                text,
                patient,
            } => Command::SubmitNotification {
                sender: self.actor(step)?,
                circle: CircleId::new(self.resolve(circle)),
                type_code: type_code.clone(),
                payload: Payload::text(text.clone()),
                patient: patient.as_deref().map(|p| self.participant(p)).transpose()?,
            },
            Op::Respond {
                notification,
                verdict,
            } => Command::RespondApproval {
                expert: self.actor(step)?,
                notification: NotificationId::new(self.resolve(notification)),
                verdict: *verdict,
            },
            Op::CreateTask {
                circle,
                patient,
                instructions,
                schedule,
                goals,
            } => Command::CreateTask {
                creator: self.actor(step)?,
                circle: CircleId::new(self.resolve(circle)),
                patient: self.participant(patient)?,
                instructions: instructions.clone(),
                schedule: schedule.clone(),
                goals: goals.clone(),
            },
            Op::ChangeTask { task, diff, notify } => Command::ChangeTask {
                editor: self.actor(step)?,
                task: TaskId::new(self.resolve(task)),
                diff: diff.clone(),
                notify_patient: *notify,
            },
            Op::Report { task, metrics } => Command::ReportProgress {
                patient: self.actor(step)?,
                task: TaskId::new(self.resolve(task)),
                metrics: metrics.clone(),
            },
            Op::GoalReached { task, label } => Command::RecordGoalReached {
                patient: self.actor(step)?,
                task: TaskId::new(self.resolve(task)),
                label: label.clone(),
            },
            Op::RegisterType { spec } => Command::RegisterType { spec: spec.clone() },
            Op::Ack { up_to } => Command::Ack {
                mailbox: self.actor(step)?,
                up_to_seq: *up_to,
            },
            Op::CheckMailbox { .. }
            | Op::OpenStream { .. }
            | Op::DropStream {}
            | Op::ReconnectStream {} => return Ok(None),
        }))
    }

    fn step(&mut self, step: &Step) -> Result<(), String> {
        match &step.op {
            Op::CheckMailbox {
                count,
                kinds,
                types,
                texts,
                exclude_types,
            } => {
                let who = self.actor(step)?;
                let all = self.target.poll(&who, 0).map_err(|e| e.to_string())?;
                check_mailbox(&all, *count, kinds.as_ref(), types, texts, exclude_types)
            }
            Op::OpenStream { after } => {
                let who = self.actor(step)?;
                let feed = self
                    .target
                    .open_feed(&who, *after)
                    .map_err(|e| e.to_string())?;
                let client = StreamClient {
                    who,
                    feed: Some(feed),
                    frames: Vec::new(),
                    reconnects: 0,
                };
                if self.streams.insert(step.actor.clone(), client).is_some() {
                    return Err("stream already open".into());
                }
                Ok(())
            }
            Op::DropStream {} => {
                let client = self
                    .streams
                    .get_mut(&step.actor)
                    .ok_or("no stream to drop")?;
                client.feed = None;
                Ok(())
            }
            Op::ReconnectStream {} => {
                let client = self
                    .streams
                    .get_mut(&step.actor)
                    .ok_or("no stream to reconnect")?;
                client.reconnect(self.target)
            }
            _ => {
                let command = self.command(step)?.expect("command ops build a command");
                let result = self.target.execute(command);
                let expect = step.expect.clone().unwrap_or_default();
                match (result, &expect.error) {
                    (Err(e), Some(code)) if e.code == *code => Ok(()),
                    (Err(e), Some(code)) => Err(format!("expected error {code}, got {}", e.code)),
                    (Err(e), None) => Err(format!("unexpected error {e}")),
                    (Ok(_), Some(code)) => Err(format!("expected error {code}, step succeeded")),
                    (Ok(reply), None) => {
                        if let Some(name) = &step.bind {
                            self.bindings.insert(name.clone(), reply_id(&reply));
                        }
                        check_reply(&reply, &expect)
                    }
                }
            }
        }
    }

    fn drain_streams(&mut self, wait: Duration) -> Result<(), String> {
        for client in self.streams.values_mut() {
            client.drain(self.target, wait)?;
        }
        Ok(())
    }

    fn audit_streams(&mut self) -> Vec<StreamAudit> {
        let mut audits = Vec::new();
        let names: Vec<String> = self.streams.keys().cloned().collect();
        for name in names {
            let mut client = self.streams.remove(&name).expect("listed");
            let result = (|| -> Result<(usize, usize), String> {
                if client.feed.is_none() {
                    client.reconnect(self.target)?;
                }
                let mailbox = self
                    .target
                    .poll(&client.who, 0)
                    .map_err(|e| e.to_string())?;
                let head = mailbox.last().map_or(0, |d| d.seq);
                let deadline = Instant::now() + AUDIT_WAIT;
                while client.last_seq() < head && Instant::now() < deadline {
                    client.drain(self.target, Duration::from_millis(20))?;
                }
                client.feed = None;
                Ok((audit_frames(&client.frames, &mailbox)?, mailbox.len()))
            })();
            let (distinct, mailbox, failure) = match result {
                Ok((d, m)) => (d, m, None),
                Err(e) => (0, 0, Some(e)),
            };
            audits.push(StreamAudit {
                participant: name,
                frames: client.frames.len(),
                distinct,
                mailbox,
                reconnects: client.reconnects,
                failure,
            });
        }
        audits
    }
}

fn reply_id(reply: &Reply) -> String {
    match reply {
        Reply::Participant(p) => p.id.to_string(),
        Reply::Circle(c) => c.id.to_string(),
        Reply::Routing(r) => r.notification.to_string(),
        Reply::Session(s) => s.notification_id.to_string(),
        Reply::Task(t) => t.id.to_string(),
        Reply::TaskChange(c) => c.notification.to_string(),
        Reply::Notification(n) => n.id.to_string(),
        Reply::Types(_) | Reply::Cursor(_) => String::new(),
    }
}

fn name_of<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

fn check_reply(reply: &Reply, expect: &Expect) -> Result<(), String> {
    fn cmp<T: PartialEq + std::fmt::Debug>(what: &str, want: &Option<T>, got: Option<T>) -> Result<(), String> {
        match (want, got) {
            (None, _) => Ok(()),
            (Some(w), Some(g)) if *w == g => Ok(()),
            (Some(w), g) => Err(format!("expected {what} {w:?}, got {g:?}")),
        }
    }
    let (state, deliveries, outcome, version) = match reply {
        Reply::Routing(r) => (Some(name_of(&r.state)), Some(r.deliveries), None, None),
        Reply::Session(s) => (None, None, Some(name_of(&s.outcome)), None),
        Reply::Task(t) => (None, None, None, Some(t.version)),
        Reply::TaskChange(c) => (None, None, None, Some(c.version)),
        Reply::Notification(n) => (Some(name_of(&n.state)), None, None, None),
        _ => (None, None, None, None),
    };
    cmp("state", &expect.state, state)?;
    cmp("deliveries", &expect.deliveries, deliveries)?;
    cmp("outcome", &expect.outcome, outcome)?;
    cmp("version", &expect.version, version)
}

fn check_mailbox(
    all: &[Delivery],
    count: Option<usize>,
    kinds: Option<&BTreeMap<String, usize>>,
    types: &Option<Vec<String>>,
    texts: &Option<Vec<String>>,
    exclude: &Option<Vec<String>>,
) -> Result<(), String> {
    if let Some(n) = count {
        if all.len() != n {
            return Err(format!("expected {n} deliveries, found {}", all.len()));
        }
    }
    if let Some(kinds) = kinds {
        let mut got: BTreeMap<String, usize> = BTreeMap::new();
        for d in all {
            *got.entry(name_of(&d.kind)).or_default() += 1;
        }
        for (k, n) in kinds {
            let g = got.get(k).copied().unwrap_or(0);
            if g != *n {
                return Err(format!("expected {n} {k} deliveries, found {g}"));
            }
        }
    }
    if let Some(types) = types {
        let got: Vec<&str> = all.iter().map(|d| d.body.type_code.as_str()).collect();
        if got != *types {
            return Err(format!("expected types {types:?}, found {got:?}"));
        }
    }
    if let Some(texts) = texts {
        let got: Vec<&str> = all.iter().map(|d| d.body.text.as_str()).collect();
        if got != *texts {
            return Err(format!("expected texts {texts:?}, found {got:?}"));
        }
    }
    if let Some(exclude) = exclude {
        if let Some(d) = all.iter().find(|d| exclude.contains(&d.body.type_code)) {
            return Err(format!(
                "delivery {} carries excluded type {}",
                d.seq, d.body.type_code
            ));
        }
    }
    Ok(())
}

/// Registers the cast, runs every step in order, audits open streams and
/// reports the final digests. Expectation failures do not stop the run.
pub fn run(scenario: &Scenario, target: &mut dyn Target) -> RunReport {
    let mut steps = Vec::new();
    let mut runner = Runner {
        scenario,
        target,
        bindings: HashMap::new(),
        streams: BTreeMap::new(),
    };
    let mut error = None;
    for (i, member) in scenario.cast.iter().enumerate() {
        let command = Command::RegisterParticipant {
            role: member.role,
            domain: member.domain.clone(),
            display_name: member.name.clone(),
        };
        match runner.target.execute(command) {
            Ok(Reply::Participant(p)) if p.id == ParticipantId::nth(i as u64 + 1) => {}
            Ok(other) => {
                error = Some(format!("cast {} registered as {:?}", member.alias, reply_id(&other)));
                break;
            }
            Err(e) => {
                error = Some(format!("cannot register cast {}: {e}", member.alias));
                break;
            }
        }
    }
    if error.is_none() {
        for (i, step) in scenario.steps.iter().enumerate() {
            let mut failure = runner.step(step).err();
            if let Err(e) = runner.drain_streams(Duration::ZERO) {
                failure.get_or_insert(e);
            }
            steps.push(StepReport {
                index: i + 1,
                line: step.line,
                at: step.at,
                actor: step.actor.clone(),
                op: step.op.name().to_string(),
                failure,
            });
        }
    }
    let streams = runner.audit_streams();
    let (head, log_digest, state_digest) = match runner.target.digests() {
        Ok(d) => (d.head, d.log_digest, d.state_digest),
        Err(e) => {
            error.get_or_insert(format!("cannot read digests: {e}"));
            (0, String::new(), String::new())
        }
    };
    RunReport {
        scenario: scenario.name.clone(),
        target: runner.target.describe(),
        steps,
        streams,
        head,
        log_digest,
        state_digest,
        golden: scenario.golden.clone(),
        error,
    }
}
