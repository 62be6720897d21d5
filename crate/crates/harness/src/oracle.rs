//! Exhaustive check of the approval gate.
//!
//! For k approvers there are 2^k verdict assignments and k! response
//! orders. Each case runs on a fresh coordinator and is compared with a
//! reference machine that knows nothing of the engine: a session accepts
//! responses until the first reject; the patient hears about the
//! notification iff no approver rejected it.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use caremesh_core::{
    Coordinator, DeliveryKind, NotificationState, ParticipantId, Payload, Response, Role,
};
use serde::Serialize;

pub const MAX_K: usize = 4;

/// Who a delivery went to, by position: 0 is the sender, 1..=k the
/// approvers, k+1 the patient.
type DeliverySet = BTreeMap<(usize, String), usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Expected {
    delivered: bool,
    /// Per response, in arrival order: accepted (true) or refused as closed.
    accepted: Vec<bool>,
    deliveries: DeliverySet,
}

fn kind_name(kind: DeliveryKind) -> String {
    match kind {
        DeliveryKind::Direct => "Direct",
        DeliveryKind::ApprovalRequest => "ApprovalRequest",
        DeliveryKind::ApprovalResult => "ApprovalResult",
        DeliveryKind::RejectionNotice => "RejectionNotice",
    }
    .to_string()
}

fn reference(k: usize, order: &[usize], ok: &[bool]) -> Expected {
    let mut accepted = Vec::with_capacity(order.len());
    let mut closed = false;
    for &i in order {
        accepted.push(!closed);
        if !closed && !ok[i] {
            closed = true;
        }
    }
    let delivered = ok.iter().all(|v| *v);
    let mut deliveries = DeliverySet::new();
    for a in 1..=k {
        deliveries.insert((a, "ApprovalRequest".into()), 1);
    }
    if delivered {
        deliveries.insert((k + 1, "Direct".into()), 1);
        deliveries.insert((0, "ApprovalResult".into()), 1);
    } else {
        deliveries.insert((0, "RejectionNotice".into()), 1);
    }
    Expected {
        delivered,
        accepted,
        deliveries,
    }
}

fn engine(k: usize, order: &[usize], ok: &[bool]) -> Result<Expected, String> {
    let mut c = Coordinator::in_memory();
    let mut people: Vec<ParticipantId> = Vec::new();
    for i in 0..=k {
        people.push(
            c.register_participant(Role::Expert, Some("domain"), &format!("E{i}"))
                .map_err(|e| e.to_string())?
                .id,
        );
    }
    let patient = c
        .register_participant(Role::EndUser, None, "P")
        .map_err(|e| e.to_string())?
        .id;
    let circle = c
        .create_circle(&people, std::slice::from_ref(&patient))
        .map_err(|e| e.to_string())?
        .id;
    people.push(patient);
    let n = c
        .submit_notification(&people[0], &circle, "T2", Payload::text("plan"))
        .map_err(|e| e.to_string())?
        .notification;

    let mut accepted = Vec::new();
    for &i in order {
        let verdict = if ok[i] { Response::Ok } else { Response::Reject };
        match c.respond_approval(&people[i + 1], &n, verdict) {
            Ok(_) => accepted.push(true),
            Err(e) if e.code() == "SessionClosed" => accepted.push(false),
            Err(e) => return Err(format!("unexpected {}", e.code())),
        }
    }
    let state = c
        .state()
        .notification(&n)
        .ok_or("notification vanished")?
        .state;
    let delivered = match state {
        NotificationState::Delivered => true,
        NotificationState::Rejected => false,
        other => return Err(format!("session left in {other:?}")),
    };
    let mut deliveries = DeliverySet::new();
    for (pos, who) in people.iter().enumerate() {
        for d in c.poll(who, 0, usize::MAX).map_err(|e| e.to_string())? {
            *deliveries.entry((pos, kind_name(d.kind))).or_default() += 1;
        }
    }
    Ok(Expected {
        delivered,
        accepted,
        deliveries,
    })
}

/// All orderings of `0..k`.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for item in 0..k {
        let mut next = Vec::with_capacity(out.len() * (item + 1));
        for p in &out {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, item);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelReport {
    pub k: usize,
    pub assignments: usize,
    pub orderings: usize,
    pub cases: usize,
    /// Cases whose assignment mixes OK and Reject.
    pub mixed_cases: usize,
    pub delivered_cases: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub k: usize,
    pub verdicts: Vec<String>,
    pub order: Vec<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub levels: Vec<LevelReport>,
    pub cases: usize,
    pub mismatches: Vec<Mismatch>,
    #[serde(serialize_with = "as_millis")]
    pub elapsed: Duration,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1000.0)
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.levels {
            out.push_str(&format!(
                "k={}: {} assignments x {} orderings = {} cases ({} mixed, {} delivered)\n",
                l.k, l.assignments, l.orderings, l.cases, l.mixed_cases, l.delivered_cases
            ));
        }
        for m in &self.mismatches {
            out.push_str(&format!(
                "MISMATCH k={} verdicts={:?} order={:?}: {}\n",
                m.k, m.verdicts, m.order, m.detail
            ));
        }
        out.push_str(&format!(
            "{} cases, {} mismatches, {:.1} ms\n",
            self.cases,
            self.mismatches.len(),
            self.elapsed.as_secs_f64() * 1000.0
        ));
        out
    }
}

/// Runs every case for k = 1..=k_max.
pub fn check(k_max: usize) -> OracleReport {
    let started = Instant::now();
    let mut levels = Vec::new();
    let mut mismatches = Vec::new();
    let mut total = 0;
    for k in 1..=k_max {
        let orders = permutations(k);
        let mut level = LevelReport {
            k,
            assignments: 1 << k,
            orderings: orders.len(),
            cases: 0,
            mixed_cases: 0,
            delivered_cases: 0,
        };
        for bits in 0..(1u32 << k) {
            let ok: Vec<bool> = (0..k).map(|i| bits & (1 << i) == 0).collect();
            let mixed = ok.iter().any(|v| *v) && ok.iter().any(|v| !*v);
            for order in &orders {
                level.cases += 1;
                level.mixed_cases += usize::from(mixed);
                let want = reference(k, order, &ok);
                level.delivered_cases += usize::from(want.delivered);
                let detail = match engine(k, order, &ok) {
                    Ok(got) if got == want => None,
                    Ok(got) => Some(format!("engine {got:?}, reference {want:?}")),
                    Err(e) => Some(e),
                };
                if let Some(detail) = detail {
                    mismatches.push(Mismatch {
                        k,
                        verdicts: ok
                            .iter()
                            .map(|v| if *v { "OK" } else { "Reject" }.to_string())
                            .collect(),
                        order: order.clone(),
                        detail,
                    });
                }
            }
        }
        total += level.cases;
        levels.push(level);
    }
    OracleReport {
        levels,
        cases: total,
        mismatches,
        elapsed: started.elapsed(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_counts() {
        assert_eq!(permutations(0).len(), 1);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(4).len(), 24);
        let mut p = permutations(3);
        p.sort();
        p.dedup();
        assert_eq!(p.len(), 6);
    }

    #[test]
    fn reference_rules() {
        let r = reference(3, &[2, 0, 1], &[false, true, true]);
        assert!(!r.delivered);
        assert_eq!(r.accepted, vec![true, true, false]);
        let r = reference(1, &[0], &[true]);
        assert!(r.delivered);
        assert_eq!(r.deliveries.get(&(2, "Direct".to_string())), Some(&1));
    }

    #[test]
    fn small_levels_agree() {
        let report = check(3);
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.cases, 2 + 8 + 48);
        assert_eq!(report.levels[2].mixed_cases, 36);
        assert_eq!(report.levels[2].delivered_cases, 6);
    }
}
