#![allow(dead_code)]

use caremesh_core::{
    CircleId, Coordinator, Delivery, DeliveryKind, GoalSpec, ParticipantId, Role, TaskId,
};

/// A circle of `experts` experts and one patient.
pub struct Team {
    pub c: Coordinator,
    pub experts: Vec<ParticipantId>,
    pub patient: ParticipantId,
    pub circle: CircleId,
}

impl Team {
    pub fn new(experts: usize) -> Self {
        Self::on(Coordinator::in_memory(), experts)
    }

    pub fn on(mut c: Coordinator, experts: usize) -> Self {
        let domains = ["nutrition", "coach", "physician", "psychology", "physio"];
        let experts: Vec<_> = (0..experts)
            .map(|i| {
                c.register_participant(Role::Expert, Some(domains[i % domains.len()]), &format!("E{}", i + 1))
                    .unwrap()
                    .id
            })
            .collect();
        let patient = c.register_participant(Role::EndUser, None, "Pat").unwrap().id;
        let circle = c.create_circle(&experts, &[patient.clone()]).unwrap().id;
        Self {
            c,
            experts,
            patient,
            circle,
        }
    }

    pub fn e(&self, i: usize) -> &ParticipantId {
        &self.experts[i]
    }

    pub fn mailbox(&self, who: &ParticipantId) -> Vec<Delivery> {
        self.c.poll(who, 0, usize::MAX).unwrap()
    }

    pub fn count(&self, who: &ParticipantId, kind: DeliveryKind) -> usize {
        self.mailbox(who).iter().filter(|d| d.kind == kind).count()
    }

    pub fn task(&mut self, goals: &[&str]) -> TaskId {
        let creator = self.experts[0].clone();
        let (circle, patient) = (self.circle.clone(), self.patient.clone());
        self.c
            .create_task(
                &creator,
                &circle,
                &patient,
                vec!["walk 30 minutes".into()],
                goals
                    .iter()
                    .map(|g| GoalSpec {
                        label: (*g).into(),
                        target: format!("reach {g}"),
                    })
                    .collect(),
            )
            .unwrap()
            .id
    }
}

/// A representative week of coordination: an approved plan, a rejected one,
/// task edits in both modes, reports, a reached goal and some acks.
pub fn care_week(c: Coordinator) -> Team {
    use caremesh_core::{Metric, Payload, Response, TaskDiff};

    let mut t = Team::on(c, 3);
    let (e1, e2, e3) = (t.e(0).clone(), t.e(1).clone(), t.e(2).clone());
    let (p, circle) = (t.patient.clone(), t.circle.clone());
    let task = t.task(&["5k"]);

    let plan = t
        .c
        .submit_notification(&e1, &circle, "T2", Payload::text("new meal plan"))
        .unwrap()
        .notification;
    t.c.respond_approval(&e2, &plan, Response::Ok).unwrap();
    t.c.respond_approval(&e3, &plan, Response::Ok).unwrap();

    let risky = t
        .c
        .submit_notification(&e2, &circle, "T2", Payload::text("double the load"))
        .unwrap()
        .notification;
    t.c.respond_approval(&e1, &risky, Response::Reject).unwrap();

    t.c.submit_notification(&e3, &circle, "T1", Payload::text("blood pressure is up"))
        .unwrap();
    t.c.apply_task_change(
        &e2,
        &task,
        TaskDiff {
            instructions: Some(vec!["walk 40 minutes".into()]),
            ..Default::default()
        },
        true,
    )
    .unwrap();
    t.c.apply_task_change(&e3, &task, TaskDiff::default(), false)
        .unwrap();
    for km in [2.5, 4.0, 5.1] {
        t.c.report_progress(
            &p,
            &task,
            vec![Metric {
                name: "distance_km".into(),
                value: km,
            }],
        )
        .unwrap();
    }
    t.c.record_goal_reached(&p, &task, "5k").unwrap();
    t.c.ack(&p, 1).unwrap();
    t.c.ack(&e1, 2).unwrap();
    t
}
