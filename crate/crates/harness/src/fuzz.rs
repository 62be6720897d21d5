//! Seeded random command sequences over a small care team.

use caremesh_core::{
    Command, Coordinator, GoalSpec, Metric, NotificationId, ParticipantId, Payload, Response, Role,
    TaskDiff, TaskId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// A circle with its experts, patients and one task per patient.
pub struct World {
    pub coordinator: Coordinator,
    pub experts: Vec<ParticipantId>,
    pub patients: Vec<ParticipantId>,
    pub circle: caremesh_core::CircleId,
    pub tasks: Vec<TaskId>,
    gated: Vec<NotificationId>,
    /// Notifications produced by accepted task changes that did not ask to
    /// notify the patient, taken from the command replies.
    pub silent: Vec<NotificationId>,
}

const GOALS: [&str; 3] = ["5k", "10k", "sleep 8h"];

impl World {
    pub fn new(coordinator: Coordinator, experts: usize, patients: usize) -> Self {
        let mut c = coordinator;
        let domains = ["nutrition", "coach", "physician", "psychology"];
        let experts: Vec<_> = (0..experts)
            .map(|i| {
                c.register_participant(Role::Expert, Some(domains[i % 4]), &format!("E{}", i + 1))
                    .expect("register expert")
                    .id
            })
            .collect();
        let patients: Vec<_> = (0..patients)
            .map(|i| {
                c.register_participant(Role::EndUser, None, &format!("P{}", i + 1))
                    .expect("register patient")
                    .id
            })
            .collect();
        let circle = c.create_circle(&experts, &patients).expect("circle").id;
        let tasks = patients
            .iter()
            .map(|p| {
                c.create_task(
                    &experts[0],
                    &circle,
                    p,
                    vec!["walk daily".into()],
                    GOALS
                        .iter()
                        .map(|g| GoalSpec {
                            label: (*g).into(),
                            target: format!("reach {g}"),
                        })
                        .collect(),
                )
                .expect("task")
                .id
            })
            .collect();
        Self {
            coordinator: c,
            experts,
            patients,
            circle,
            tasks,
            gated: Vec::new(),
            silent: Vec::new(),
        }
    }

    /// Every participant with a mailbox.
    pub fn everyone(&self) -> Vec<ParticipantId> {
        self.experts.iter().chain(&self.patients).cloned().collect()
    }

    /// One random command; refusals are part of the game and ignored.
    pub fn random_command(&self, rng: &mut impl Rng) -> Command {
        let e = self.experts[pick(rng, self.experts.len())].clone();
        let pi = pick(rng, self.patients.len());
        let p = self.patients[pi].clone();
        let task = self.tasks[pi].clone();
        match rng.random_range(0..10) {
            0 | 1 => Command::SubmitNotification {
                sender: e,
                circle: self.circle.clone(),
                type_code: ["T1", "T2", "T3", "T4"][pick(rng, 4)].into(),
                payload: Payload::text(format!("note {}", rng.random::<u16>())),
                patient: None,
            },
            2 | 3 if !self.gated.is_empty() => Command::RespondApproval {
                expert: e,
                notification: self.gated[pick(rng, self.gated.len())].clone(),
                verdict: if rng.random_bool(0.8) {
                    Response::Ok
                } else {
                    Response::Reject
                },
            },
            2 | 3 => Command::SubmitNotification {
                sender: e,
                circle: self.circle.clone(),
                type_code: "T2".into(),
                payload: Payload::text("plan"),
                patient: None,
            },
            4 | 5 => Command::ChangeTask {
                editor: e,
                task,
                diff: TaskDiff {
                    instructions: Some(vec![format!("walk {} min", rng.random_range(10..90))]),
                    ..Default::default()
                },
                notify_patient: rng.random_bool(0.5),
            },
            6 => Command::ReportProgress {
                patient: p,
                task,
                metrics: vec![Metric {
                    name: "steps".into(),
                    value: f64::from(rng.random_range(0..20_000u32)),
                }],
            },
            7 => Command::RecordGoalReached {
                patient: p,
                task,
                label: GOALS[pick(rng, GOALS.len())].into(),
            },
            8 => Command::SubmitNotification {
                sender: p,
                circle: self.circle.clone(),
                type_code: ["T5", "T6"][pick(rng, 2)].into(),
                payload: Payload::text("feedback"),
                patient: None,
            },
            _ => {
                let who = self.everyone();
                let m = who[pick(rng, who.len())].clone();
                let head = self
                    .coordinator
                    .state()
                    .mailbox(&m)
                    .map_or(0, |mb| mb.head());
                Command::Ack {
                    mailbox: m,
                    up_to_seq: rng.random_range(0..=head + 1),
                }
            }
        }
    }

    pub fn step(&mut self, rng: &mut impl Rng) -> bool {
        let command = self.random_command(rng);
        let gated = matches!(&command, Command::SubmitNotification { type_code, .. } if type_code == "T2");
        let silent = matches!(&command, Command::ChangeTask { notify_patient: false, .. });
        match self.coordinator.execute(command) {
            Ok(caremesh_core::Reply::Routing(r)) if gated => {
                self.gated.push(r.notification);
                true
            }
            Ok(caremesh_core::Reply::TaskChange(change)) if silent => {
                self.silent.push(change.notification);
                true
            }
            Ok(_) => true,
            Err(_) => false,
        }
    }
}

fn pick(rng: &mut impl Rng, n: usize) -> usize {
    rng.random_range(0..n.max(1))
}

/// Builds a world shaped by `seed` and runs `len` random commands on it.
pub fn random_world(seed: u64, len: usize) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let experts = rng.random_range(1..=4);
    let patients = rng.random_range(1..=2);
    let mut world = World::new(Coordinator::in_memory(), experts, patients);
    for _ in 0..len {
        world.step(&mut rng);
    }
    world
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SecrecyReport {
    pub sequences: usize,
    pub commands: usize,
    /// Silent changes that were accepted, so the check is not vacuous.
    pub silent_changes: usize,
    pub patient_deliveries: usize,
    pub violations: Vec<String>,
}

/// Runs `sequences` random sequences and looks for any patient delivery
/// that stems from a silent task change.
pub fn silent_secrecy(sequences: usize, len: usize, seed: u64) -> SecrecyReport {
    let mut report = SecrecyReport {
        sequences,
        commands: sequences * len,
        ..Default::default()
    };
    for i in 0..sequences {
        let s = seed.wrapping_add(i as u64);
        let world = random_world(s, len);
        report.silent_changes += world.silent.len();
        let silent: std::collections::HashSet<_> = world.silent.iter().collect();
        for p in &world.patients {
            for d in world.coordinator.poll(p, 0, usize::MAX).expect("patient mailbox") {
                report.patient_deliveries += 1;
                if silent.contains(&d.notification_id) || d.body.type_code == "T4" {
                    report.violations.push(format!(
                        "seed {s}: {p} received {} from silent change {}",
                        d.delivery_id, d.notification_id
                    ));
                }
            }
        }
    }
    report
}
