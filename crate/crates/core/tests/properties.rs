mod common;

use std::collections::BTreeMap;

use caremesh_core::{
    replay, DeliveryKind, Metric, NotificationId, Payload, Response, SessionOutcome, TaskDiff,
    Verdict,
};
use common::Team;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Submit { sender: usize, code: usize },
    PatientSubmit { code: usize },
    Respond { expert: usize, pick: usize, ok: bool },
    Change { editor: usize, notify: bool },
    Report { value: u16 },
    Ack { who: usize, up_to: u8 },
}

const EXPERT_CODES: [&str; 4] = ["T1", "T2", "T3", "T4"];
const PATIENT_CODES: [&str; 2] = ["T5", "T6"];

fn op(experts: usize) -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => (0..experts, 0..4usize).prop_map(|(sender, code)| Op::Submit { sender, code }),
        1 => (0..2usize).prop_map(|code| Op::PatientSubmit { code }),
        3 => (0..experts, 0..8usize, prop::bool::weighted(0.8))
            .prop_map(|(expert, pick, ok)| Op::Respond { expert, pick, ok }),
        1 => (0..experts, any::<bool>()).prop_map(|(editor, notify)| Op::Change { editor, notify }),
        1 => any::<u16>().prop_map(|value| Op::Report { value }),
        1 => (0..=experts, any::<u8>()).prop_map(|(who, up_to)| Op::Ack { who, up_to }),
    ]
}

fn scenario() -> impl Strategy<Value = (usize, Vec<Op>)> {
    (1..=4usize).prop_flat_map(|k| (Just(k), prop::collection::vec(op(k), 0..40)))
}

/// Runs the ops, ignoring refusals, and returns the team plus every verdict
/// map observed after each step.
fn run(experts: usize, ops: &[Op]) -> (Team, Vec<BTreeMap<NotificationId, Vec<Verdict>>>) {
    let mut t = Team::new(experts);
    let task = t.task(&[]);
    let mut gated: Vec<NotificationId> = Vec::new();
    let mut history = Vec::new();
    for op in ops {
        match op {
            Op::Submit { sender, code } => {
                let (s, c) = (t.e(*sender).clone(), t.circle.clone());
                let code = EXPERT_CODES[*code];
                if let Ok(out) = t.c.submit_notification(&s, &c, code, Payload::text("x")) {
                    if code == "T2" {
                        gated.push(out.notification);
                    }
                }
            }
            Op::PatientSubmit { code } => {
                let (p, c) = (t.patient.clone(), t.circle.clone());
                let _ = t
                    .c
                    .submit_notification(&p, &c, PATIENT_CODES[*code], Payload::text("y"));
            }
            Op::Respond { expert, pick, ok } => {
                if !gated.is_empty() {
                    let n = gated[pick % gated.len()].clone();
                    let who = t.e(*expert).clone();
                    let v = if *ok { Response::Ok } else { Response::Reject };
                    let _ = t.c.respond_approval(&who, &n, v);
                }
            }
            Op::Change { editor, notify } => {
                let who = t.e(*editor).clone();
                let _ = t.c.apply_task_change(&who, &task, TaskDiff::default(), *notify);
            }
            Op::Report { value } => {
                let p = t.patient.clone();
                let _ = t.c.report_progress(
                    &p,
                    &task,
                    vec![Metric {
                        name: "steps".into(),
                        value: f64::from(*value),
                    }],
                );
            }
            Op::Ack { who, up_to } => {
                let m = if *who == experts {
                    t.patient.clone()
                } else {
                    t.e(*who).clone()
                };
                let _ = t.c.ack(&m, u64::from(*up_to));
            }
        }
        history.push(
            t.c.state()
                .sessions()
                .map(|s| {
                    (
                        s.notification_id.clone(),
                        s.verdicts.values().copied().collect(),
                    )
                })
                .collect(),
        );
    }
    (t, history)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn gate_secrecy_and_sender_exclusion((experts, ops) in scenario()) {
        let (t, _) = run(experts, &ops);
        let state = t.c.state();
        for d in t.mailbox(&t.patient) {
            let n = state.notification(&d.notification_id).unwrap();
            prop_assert_ne!(n.type_code.as_str(), "T4");
            prop_assert_ne!(n.type_code.as_str(), "T1");
            if let Some(s) = state.session(&n.id) {
                prop_assert_eq!(s.outcome, SessionOutcome::AllApproved);
            }
        }
        for e in &t.experts {
            for d in t.mailbox(e) {
                let n = state.notification(&d.notification_id).unwrap();
                if matches!(d.kind, DeliveryKind::Direct | DeliveryKind::ApprovalRequest) {
                    prop_assert_ne!(&n.sender, e);
                }
            }
        }
    }

    #[test]
    fn verdicts_never_revert((experts, ops) in scenario()) {
        let (_, history) = run(experts, &ops);
        for pair in history.windows(2) {
            for (n, before) in &pair[0] {
                let after = &pair[1][n];
                for (b, a) in before.iter().zip(after) {
                    if *b != Verdict::Pending {
                        prop_assert_eq!(b, a);
                    }
                }
            }
        }
    }

    #[test]
    fn replay_reproduces_live_state((experts, ops) in scenario()) {
        let (t, _) = run(experts, &ops);
        let replayed = replay(t.c.log().events()).unwrap();
        prop_assert_eq!(replayed.canonical(), t.c.state().canonical());
    }

    #[test]
    fn mailbox_seqs_are_contiguous((experts, ops) in scenario()) {
        let (t, _) = run(experts, &ops);
        for (_, mailbox) in t.c.state().mailboxes().iter() {
            for (i, d) in mailbox.all().iter().enumerate() {
                prop_assert_eq!(d.seq, i as u64 + 1);
            }
            prop_assert!(mailbox.cursor().last_acked_seq <= mailbox.head());
        }
    }

    /// The approval outcome depends only on which verdicts are cast, not on
    /// the order they arrive in.
    #[test]
    fn outcome_is_order_insensitive(
        verdicts in prop::collection::vec(any::<bool>(), 1..=5),
        seed in any::<u64>(),
    ) {
        let k = verdicts.len();
        let mut order: Vec<usize> = (0..k).collect();
        let mut s = seed;
        for i in (1..k).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let outcome = |order: &[usize]| {
            let mut t = Team::new(k + 1);
            let (s, c) = (t.e(0).clone(), t.circle.clone());
            let n = t.c.submit_notification(&s, &c, "T2", Payload::text("x")).unwrap().notification;
            for &i in order {
                let who = t.e(i + 1).clone();
                let v = if verdicts[i] { Response::Ok } else { Response::Reject };
                let _ = t.c.respond_approval(&who, &n, v);
            }
            t.c.state().session(&n).unwrap().outcome
        };
        let natural: Vec<usize> = (0..k).collect();
        prop_assert_eq!(outcome(&natural), outcome(&order));
    }
}
