//! Closed-loop load generation against an in-process coordinator.
//!
//! Client threads issue notifications as fast as the single command queue
//! admits them while one subscriber per participant consumes its live feed.
//! Latency runs from just before the command that enqueued a delivery to
//! the moment its subscriber receives it, both read from the same monotonic
//! clock. Afterwards every `DeliveryEnqueued` event in the log is matched
//! against the receipts to audit for loss.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use caremesh_core::{
    Clock, CircleId, Command, Coordinator, DeliveryId, EventBody, EventLog, GoalSpec, Hub, Metric,
    ParticipantId, Payload, Reply, Response, Role, TaskDiff, TaskId,
};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Experts assigned to each patient's circle.
const EXPERTS_PER_CIRCLE: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("invalid mix: {0}")]
    Mix(String),
    #[error("invalid load parameters: {0}")]
    Params(String),
    #[error("setup failed: {0}")]
    Setup(#[from] caremesh_core::CoordError),
}

/// Share of each notification type T1..T6; sums to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mix(pub [f64; 6]);

impl Default for Mix {
    fn default() -> Self {
        Mix([0.25, 0.15, 0.15, 0.15, 0.2, 0.1])
    }
}

impl FromStr for Mix {
    type Err = LoadError;

    /// Parses `t1=0.5,t2=0.2,...`; unnamed types get 0.
    fn from_str(s: &str) -> Result<Self, LoadError> {
        let mut shares = [0.0; 6];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| LoadError::Mix(format!("expected tN=share, got {part:?}")))?;
            let idx = match k.trim().to_ascii_lowercase().as_str() {
                "t1" => 0,
                "t2" => 1,
                "t3" => 2,
                "t4" => 3,
                "t5" => 4,
                "t6" => 5,
                other => return Err(LoadError::Mix(format!("unknown type {other:?}"))),
            };
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| LoadError::Mix(format!("bad share {v:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(LoadError::Mix(format!("share {v} out of range")));
            }
            shares[idx] = v;
        }
        let total: f64 = shares.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(LoadError::Mix(format!("shares sum to {total}, not 1")));
        }
        Ok(Mix(shares))
    }
}

impl Mix {
    fn pick(&self, rng: &mut impl Rng) -> usize {
        let x: f64 = rng.random();
        let mut acc = 0.0;
        for (i, share) in self.0.iter().enumerate() {
            acc += share;
            if x < acc {
                return i;
            }
        }
        self.0.iter().rposition(|s| *s > 0.0).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadConfig {
    pub experts: usize,
    pub patients: usize,
    pub count: usize,
    pub mix: Mix,
    /// Concurrent closed-loop clients.
    pub clients: usize,
    pub seed: u64,
    pub stream_buffer: usize,
}

impl LoadConfig {
    pub fn new(experts: usize, patients: usize, count: usize) -> Self {
        Self {
            experts,
            patients,
            count,
            mix: Mix::default(),
            clients: 4,
            seed: 1,
            stream_buffer: caremesh_core::mailbox::DEFAULT_STREAM_BUFFER,
        }
    }

    /// The same shape at `participants` total, keeping the expert share and
    /// the notifications per participant.
    pub fn scaled(&self, participants: usize) -> Self {
        let total = (self.experts + self.patients).max(1);
        let experts = ((self.experts * participants) as f64 / total as f64).round() as usize;
        let experts = experts.clamp(2, participants.saturating_sub(1).max(2));
        Self {
            experts,
            patients: participants.saturating_sub(experts).max(1),
            count: ((self.count * participants) as f64 / total as f64).round().max(1.0) as usize,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
    pub mean: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Percentiles {
    pub fn of(samples: &mut [f64]) -> Self {
        samples.sort_by(|a, b| a.total_cmp(b));
        if samples.is_empty() {
            return Self::default();
        }
        Self {
            p50: nearest_rank(samples, 50.0),
            p95: nearest_rank(samples, 95.0),
            p99: nearest_rank(samples, 99.0),
            max: *samples.last().expect("non-empty"),
            mean: samples.iter().sum::<f64>() / samples.len() as f64,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadReport {
    pub participants: usize,
    pub experts: usize,
    pub patients: usize,
    pub notifications: usize,
    pub per_type: [usize; 6],
    pub commands: usize,
    pub refused: usize,
    pub deliveries: usize,
    pub received: usize,
    pub duplicates: usize,
    pub lost: usize,
    pub resumes: usize,
    pub elapsed_ms: f64,
    pub commands_per_sec: f64,
    /// Enqueue-to-subscriber latency in milliseconds.
    pub latency_ms: Percentiles,
}

struct Circle {
    id: CircleId,
    experts: Vec<ParticipantId>,
    patient: ParticipantId,
    task: TaskId,
}

/// One measured command: the log range it wrote and when it was issued.
struct Issued {
    first_seq: u64,
    last_seq: u64,
    at: Instant,
}

#[derive(Default)]
struct ClientTally {
    issued: Vec<Issued>,
    per_type: [usize; 6],
    commands: usize,
    refused: usize,
}

fn setup(cfg: &LoadConfig) -> Result<(Coordinator, Vec<Circle>, Vec<ParticipantId>), LoadError> {
    if cfg.experts < 2 || cfg.patients == 0 || cfg.count == 0 || cfg.clients == 0 {
        return Err(LoadError::Params(
            "need at least 2 experts, 1 patient, 1 notification and 1 client".into(),
        ));
    }
    let mut c =
        Coordinator::from_log_with_hub(EventLog::in_memory(Clock::Logical), Hub::new(cfg.stream_buffer))
            .map_err(|e| LoadError::Params(e.to_string()))?;
    let domains = ["nutrition", "coach", "physician", "psychology", "physio"];
    let experts: Vec<ParticipantId> = (0..cfg.experts)
        .map(|i| {
            c.register_participant(Role::Expert, Some(domains[i % domains.len()]), &format!("E{i}"))
                .map(|p| p.id)
        })
        .collect::<Result<_, _>>()?;
    let patients: Vec<ParticipantId> = (0..cfg.patients)
        .map(|i| c.register_participant(Role::EndUser, None, &format!("P{i}")).map(|p| p.id))
        .collect::<Result<_, _>>()?;
    let per_circle = EXPERTS_PER_CIRCLE.min(cfg.experts);
    let mut circles = Vec::with_capacity(cfg.patients);
    for (i, patient) in patients.iter().enumerate() {
        let team: Vec<ParticipantId> = (0..per_circle)
            .map(|j| experts[(i * per_circle + j) % experts.len()].clone())
            .collect();
        let id = c.create_circle(&team, std::slice::from_ref(patient))?.id;
        let task = c
            .create_task(
                &team[0],
                &id,
                patient,
                vec!["walk 30 minutes".into()],
                vec![GoalSpec {
                    label: "5k".into(),
                    target: "run 5 km".into(),
                }],
            )?
            .id;
        circles.push(Circle {
            id,
            experts: team,
            patient: patient.clone(),
            task,
        });
    }
    let everyone = experts.into_iter().chain(patients).collect();
    Ok((c, circles, everyone))
}

fn commands_for(kind: usize, circle: &Circle, rng: &mut impl Rng) -> Command {
    let expert = circle.experts[rng.random_range(0..circle.experts.len())].clone();
    let text = format!("load {}", rng.random::<u32>());
    let submit = |sender: ParticipantId, code: &str| Command::SubmitNotification {
        sender,
        circle: circle.id.clone(),
        type_code: code.into(),
        payload: Payload::text(text.clone()),
        patient: None,
    };
    match kind {
        0 => submit(expert, "T1"),
        1 => submit(expert, "T2"),
        2 | 3 => Command::ChangeTask {
            editor: expert,
            task: circle.task.clone(),
            diff: TaskDiff {
                instructions: Some(vec![text.clone()]),
                ..Default::default()
            },
            notify_patient: kind == 2,
        },
        4 => Command::ReportProgress {
            patient: circle.patient.clone(),
            task: circle.task.clone(),
            metrics: vec![Metric {
                name: "steps".into(),
                value: f64::from(rng.random_range(0..20_000u32)),
            }],
        },
        _ => submit(circle.patient.clone(), "T6"),
    }
}

fn timed(core: &Mutex<Coordinator>, command: Command, tally: &mut ClientTally) -> Option<Reply> {
    let at = Instant::now();
    let mut c = core.lock();
    let before = c.log().head();
    let result = c.execute(command);
    let after = c.log().head();
    drop(c);
    tally.commands += 1;
    if after > before {
        tally.issued.push(Issued {
            first_seq: before + 1,
            last_seq: after,
            at,
        });
    }
    match result {
        Ok(r) => Some(r),
        Err(e) => {
            tracing::debug!(code = e.code(), "load command refused");
            tally.refused += 1;
            None
        }
    }
}

fn client(
    core: Arc<Mutex<Coordinator>>,
    circles: Arc<Vec<Circle>>,
    cfg: Arc<LoadConfig>,
    next: Arc<AtomicUsize>,
    seed: u64,
) -> ClientTally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = ClientTally::default();
    while next.fetch_add(1, Ordering::Relaxed) < cfg.count {
        let kind = cfg.mix.pick(&mut rng);
        let circle = &circles[rng.random_range(0..circles.len())];
        let command = commands_for(kind, circle, &mut rng);
        tally.per_type[kind] += 1;
        let sender = command.actor().cloned();
        let reply = timed(&core, command, &mut tally);
        // approval round trips: every other expert of the circle says OK
        if let Some(Reply::Routing(r)) = reply {
            if kind == 1 {
                for approver in circle.experts.iter().filter(|e| Some(*e) != sender.as_ref()) {
                    let respond = Command::RespondApproval {
                        expert: approver.clone(),
                        notification: r.notification.clone(),
                        verdict: Response::Ok,
                    };
                    timed(&core, respond, &mut tally);
                }
            }
        }
    }
    tally
}

struct Receipts {
    seen: Vec<(DeliveryId, Instant)>,
    resumes: usize,
}

async fn consume(
    core: Arc<Mutex<Coordinator>>,
    who: ParticipantId,
    mut done: tokio::sync::watch::Receiver<bool>,
) -> Receipts {
    let mut receipts = Receipts {
        seen: Vec::new(),
        resumes: 0,
    };
    let mut last = 0;
    let (backlog, mut live) = core.lock().resume(&who, 0).expect("mailbox");
    for d in backlog {
        last = d.seq;
        receipts.seen.push((d.delivery_id, Instant::now()));
    }
    loop {
        let finishing = *done.borrow();
        let next = if finishing {
            match live.try_recv() {
                Ok(d) => Some(d),
                Err(false) => break,
                Err(true) => None,
            }
        } else {
            tokio::select! {
                d = live.recv() => d,
                _ = done.changed() => continue,
            }
        };
        match next {
            Some(d) => {
                last = last.max(d.seq);
                receipts.seen.push((d.delivery_id, Instant::now()));
            }
            None => {
                // cut off for lagging: catch up by poll and resubscribe
                receipts.resumes += 1;
                let (backlog, fresh) = core.lock().resume(&who, last).expect("mailbox");
                for d in backlog {
                    last = last.max(d.seq);
                    receipts.seen.push((d.delivery_id, Instant::now()));
                }
                live = fresh;
            }
        }
    }
    receipts
}

/// Runs one load bucket.
pub fn run(cfg: &LoadConfig) -> Result<LoadReport, LoadError> {
    let (coordinator, circles, everyone) = setup(cfg)?;
    let setup_head = coordinator.log().head();
    let core = Arc::new(Mutex::new(coordinator));
    let circles = Arc::new(circles);
    let shared_cfg = Arc::new(cfg.clone());

    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|e| LoadError::Params(e.to_string()))?;
    let (done_tx, done_rx) = tokio::sync::watch::channel(false);
    let consumers: Vec<_> = everyone
        .iter()
        .map(|who| rt.spawn(consume(core.clone(), who.clone(), done_rx.clone())))
        .collect();
    // let every consumer subscribe before the clock starts
    rt.block_on(async {
        loop {
            let subscribed = {
                let c = core.lock();
                everyone.iter().all(|p| c.hub().subscriber_count(p) > 0)
            };
            if subscribed {
                break;
            }
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
    });

    let started = Instant::now();
    let next = Arc::new(AtomicUsize::new(0));
    let handles: Vec<_> = (0..cfg.clients)
        .map(|i| {
            let (core, circles, cfg, next) =
                (core.clone(), circles.clone(), shared_cfg.clone(), next.clone());
            let seed = cfg.seed.wrapping_mul(1000).wrapping_add(i as u64);
            std::thread::spawn(move || client(core, circles, cfg, next, seed))
        })
        .collect();
    let tallies: Vec<ClientTally> = handles
        .into_iter()
        .map(|h| h.join().expect("load client panicked"))
        .collect();
    let elapsed = started.elapsed();
    let _ = done_tx.send(true);
    let receipts: Vec<Receipts> = rt.block_on(async {
        let mut out = Vec::new();
        for c in consumers {
            out.push(c.await.expect("consumer panicked"));
        }
        out
    });

    let mut first_receipt: HashMap<DeliveryId, Instant> = HashMap::new();
    let mut received = 0;
    let mut duplicates = 0;
    let mut resumes = 0;
    for r in receipts {
        resumes += r.resumes;
        for (id, at) in r.seen {
            received += 1;
            if first_receipt.insert(id, at).is_some() {
                duplicates += 1;
            }
        }
    }

    let mut issued: Vec<Issued> = Vec::new();
    let mut per_type = [0; 6];
    let (mut commands, mut refused) = (0, 0);
    for t in tallies {
        issued.extend(t.issued);
        commands += t.commands;
        refused += t.refused;
        for (a, b) in per_type.iter_mut().zip(t.per_type) {
            *a += b;
        }
    }
    issued.sort_by_key(|i| i.first_seq);

    let core = core.lock();
    let mut latencies = Vec::new();
    let mut deliveries = 0;
    let mut lost = 0;
    for event in core.log().read_from(setup_head + 1) {
        let EventBody::DeliveryEnqueued { delivery } = &event.body else {
            continue;
        };
        deliveries += 1;
        let idx = issued.partition_point(|i| i.last_seq < event.seq);
        let Some(cmd) = issued.get(idx).filter(|i| i.first_seq <= event.seq) else {
            lost += 1;
            continue;
        };
        match first_receipt.get(&delivery.delivery_id) {
            Some(at) => latencies.push(at.saturating_duration_since(cmd.at).as_secs_f64() * 1000.0),
            None => lost += 1,
        }
    }

    Ok(LoadReport {
        participants: cfg.experts + cfg.patients,
        experts: cfg.experts,
        patients: cfg.patients,
        notifications: cfg.count,
        per_type,
        commands,
        refused,
        deliveries,
        received,
        duplicates,
        lost,
        resumes,
        elapsed_ms: elapsed.as_secs_f64() * 1000.0,
        commands_per_sec: commands as f64 / elapsed.as_secs_f64().max(1e-9),
        latency_ms: Percentiles::of(&mut latencies),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parsing() {
        let m: Mix = "t1=0.5, t2=0.5".parse().unwrap();
        assert_eq!(m.0, [0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!("t1=0.5".parse::<Mix>().is_err());
        assert!("t9=1".parse::<Mix>().is_err());
        assert!("t1".parse::<Mix>().is_err());
    }

    #[test]
    fn nearest_rank_matches_hand_computation() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 50.0), 10.0);
        assert_eq!(nearest_rank(&v, 95.0), 19.0);
        assert_eq!(nearest_rank(&v, 99.0), 20.0);
        assert_eq!(nearest_rank(&[7.0], 50.0), 7.0);
    }

    #[test]
    fn scaling_keeps_per_user_rate() {
        let base = LoadConfig::new(100, 400, 5000);
        let small = base.scaled(50);
        assert_eq!((small.experts, small.patients, small.count), (10, 40, 500));
    }

    #[test]
    fn smoke_five_experts_one_patient() {
        let report = run(&LoadConfig::new(5, 1, 100)).unwrap();
        assert_eq!(report.lost, 0);
        assert!(report.deliveries > 0);
        assert_eq!(report.per_type.iter().sum::<usize>(), 100);
    }

    #[test]
    fn approvals_only_lose_nothing() {
        let mut cfg = LoadConfig::new(4, 2, 60);
        cfg.mix = "t2=1".parse().unwrap();
        let report = run(&cfg).unwrap();
        assert_eq!(report.lost, 0);
        assert_eq!(report.refused, 0);
    }
}
