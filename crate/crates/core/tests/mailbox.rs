mod common;

use caremesh_core::{Clock, Coordinator, EventLog, Hub, Payload};
use common::Team;
use proptest::prelude::*;

fn small_hub(buffer: usize) -> Coordinator {
    Coordinator::from_log_with_hub(EventLog::in_memory(Clock::Logical), Hub::new(buffer)).unwrap()
}

#[test]
fn thousand_enqueues_over_ten_mailboxes() {
    let mut t = Team::new(11);
    let (sender, circle) = (t.e(0).clone(), t.circle.clone());
    let mut subs: Vec<_> = (1..11).map(|i| t.c.subscribe(t.e(i)).unwrap()).collect();
    for i in 0..100 {
        t.c.submit_notification(&sender, &circle, "T1", Payload::text(format!("m{i}")))
            .unwrap();
    }
    assert_eq!(t.c.state().mailboxes().total_deliveries(), 1000);
    for (i, sub) in (1..11).zip(subs.iter_mut()) {
        let inbox = t.mailbox(t.e(i));
        let seqs: Vec<u64> = inbox.iter().map(|d| d.seq).collect();
        assert_eq!(seqs, (1..=100).collect::<Vec<_>>());
        let texts: Vec<_> = inbox.iter().map(|d| d.body.text.clone()).collect();
        assert_eq!(texts, (0..100).map(|i| format!("m{i}")).collect::<Vec<_>>());
        let mut live = Vec::new();
        while let Ok(d) = sub.try_recv() {
            live.push(d);
        }
        assert_eq!(live, inbox);
    }
}

#[test]
fn poll_is_bounded_and_non_consuming() {
    let mut t = Team::new(2);
    let (sender, circle, peer) = (t.e(0).clone(), t.circle.clone(), t.e(1).clone());
    for _ in 0..7 {
        t.c.submit_notification(&sender, &circle, "T1", Payload::text("x"))
            .unwrap();
    }
    let first = t.c.poll(&peer, 2, 3).unwrap();
    assert_eq!(first.iter().map(|d| d.seq).collect::<Vec<_>>(), vec![3, 4, 5]);
    assert_eq!(t.c.poll(&peer, 2, 3).unwrap(), first);
    assert!(t.c.poll(&peer, 7, 10).unwrap().is_empty());
    assert!(t.c.poll(&peer, 100, 10).unwrap().is_empty());
}

#[test]
fn lagging_subscriber_is_dropped_and_resumes_without_loss() {
    let mut t = Team::on(small_hub(4), 2);
    let (sender, circle, peer) = (t.e(0).clone(), t.circle.clone(), t.e(1).clone());
    let mut sub = t.c.subscribe(&peer).unwrap();
    for i in 0..10 {
        t.c.submit_notification(&sender, &circle, "T1", Payload::text(format!("{i}")))
            .unwrap();
    }
    let mut seen = Vec::new();
    let closed = loop {
        match sub.try_recv() {
            Ok(d) => seen.push(d.seq),
            Err(closed) => break closed,
        }
    };
    assert!(closed, "overflowed subscriber is closed");
    assert_eq!(seen, vec![1, 2, 3, 4]);

    let (backlog, mut live) = t.c.resume(&peer, *seen.last().unwrap()).unwrap();
    seen.extend(backlog.iter().map(|d| d.seq));
    t.c.submit_notification(&sender, &circle, "T1", Payload::text("late"))
        .unwrap();
    seen.push(live.try_recv().unwrap().seq);
    assert_eq!(seen, (1..=11).collect::<Vec<_>>());
}

#[test]
fn dropped_stream_then_reconnect_sees_everything_once() {
    let mut t = Team::new(3);
    let (sender, circle, peer) = (t.e(0).clone(), t.circle.clone(), t.e(2).clone());
    let mut received = Vec::new();
    let mut sub = Some(t.c.subscribe(&peer).unwrap());
    // a fixed fault script: drop the stream after every third message
    for round in 0..30u64 {
        t.c.submit_notification(&sender, &circle, "T1", Payload::text("x"))
            .unwrap();
        if let Some(s) = sub.as_mut() {
            while let Ok(d) = s.try_recv() {
                received.push(d.seq);
            }
        }
        if round % 3 == 2 {
            drop(sub.take());
            t.c.submit_notification(&sender, &circle, "T1", Payload::text("while away"))
                .unwrap();
            let after = received.last().copied().unwrap_or(0);
            let (backlog, s) = t.c.resume(&peer, after).unwrap();
            received.extend(backlog.iter().map(|d| d.seq));
            sub = Some(s);
        }
    }
    let head = t.c.state().mailbox(&peer).unwrap().head();
    assert_eq!(received, (1..=head).collect::<Vec<_>>());
}

#[test]
fn several_devices_each_get_every_delivery() {
    let mut t = Team::new(2);
    let (sender, circle, peer) = (t.e(0).clone(), t.circle.clone(), t.e(1).clone());
    let mut a = t.c.subscribe(&peer).unwrap();
    let mut b = t.c.subscribe(&peer).unwrap();
    assert_eq!(t.c.hub().subscriber_count(&peer), 2);
    t.c.submit_notification(&sender, &circle, "T1", Payload::text("x"))
        .unwrap();
    assert_eq!(a.try_recv().unwrap(), b.try_recv().unwrap());
    drop(a);
    assert_eq!(t.c.hub().subscriber_count(&peer), 1);
}

#[derive(Debug, Clone)]
enum MailOp {
    Enqueue,
    Poll { after: u8, max: u8 },
    Ack { up_to: u8 },
}

fn mail_op() -> impl Strategy<Value = MailOp> {
    prop_oneof![
        2 => Just(MailOp::Enqueue),
        1 => (any::<u8>(), 1..20u8).prop_map(|(after, max)| MailOp::Poll { after: after % 40, max }),
        1 => any::<u8>().prop_map(|up_to| MailOp::Ack { up_to: up_to % 40 }),
    ]
}

proptest! {
    /// Poll and ack against a plain counter model of one mailbox.
    #[test]
    fn poll_and_ack_match_reference(ops in prop::collection::vec(mail_op(), 1..80)) {
        let mut t = Team::new(2);
        let (sender, circle, peer) = (t.e(0).clone(), t.circle.clone(), t.e(1).clone());
        let (mut head, mut cursor) = (0u64, 0u64);
        for op in ops {
            match op {
                MailOp::Enqueue => {
                    t.c.submit_notification(&sender, &circle, "T1", Payload::text("x")).unwrap();
                    head += 1;
                }
                MailOp::Poll { after, max } => {
                    let got: Vec<u64> = t.c.poll(&peer, u64::from(after), usize::from(max))
                        .unwrap().iter().map(|d| d.seq).collect();
                    let want: Vec<u64> = (u64::from(after) + 1..=head).take(usize::from(max)).collect();
                    prop_assert_eq!(got, want);
                }
                MailOp::Ack { up_to } => {
                    let up_to = u64::from(up_to);
                    let got = t.c.ack(&peer, up_to);
                    if up_to > head {
                        prop_assert_eq!(got.unwrap_err().code(), "SeqBeyondHead");
                    } else {
                        cursor = cursor.max(up_to);
                        prop_assert_eq!(got.unwrap().last_acked_seq, cursor);
                    }
                }
            }
        }
        let mailbox = t.c.state().mailbox(&peer).unwrap();
        for d in mailbox.all() {
            prop_assert_eq!(d.acked, d.seq <= cursor);
        }
    }
}
